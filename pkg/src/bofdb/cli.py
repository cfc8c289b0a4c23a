"""``bofdb`` command line."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import pipeline
from .errors import BofdbError
from .features import ExtractorParams
from .query import Executor, parse, render_value
from .service import BofdbServer
from .store import Store
from .svm import SvmConfig


def _extractor(args) -> ExtractorParams:
    return ExtractorParams(args.grid_step, args.patch_size)


def _sizes(text: str) -> list[int]:
    return [int(s) for s in text.split(",") if s.strip()]


def cmd_init(args) -> int:
    with Store(args.dir) as store:
        print(f"initialized {store.path}")
    return 0


def cmd_learn(args) -> int:
    items = pipeline.read_manifest(args.manifest)
    svm = SvmConfig.parse_kernel(args.kernel, c=args.c)
    spec = pipeline.LearnSpec(
        images=items,
        words=args.words,
        extractor=_extractor(args),
        svm=svm,
        seed=args.seed,
        restarts=args.restarts,
        sample=args.sample,
    )
    with Store(args.dir) as store:
        dictionary, model = pipeline.learn(store, spec)
    print(
        f"learned {dictionary.words_count}-word dictionary {dictionary.dictionary_id} "
        f"and {len(model.machines)} classifiers over {len(items)} images"
    )
    return 0


def cmd_classify(args) -> int:
    with Store(args.dir) as store:
        dictionary, model, extractor = pipeline.load_trained(store)
    result = pipeline.classify_bytes(Path(args.image).read_bytes(), dictionary, model, extractor)
    print(result.predicted)
    return 0


def cmd_ingest(args) -> int:
    path = Path(args.image)
    with Store(args.dir) as store:
        dictionary, model, extractor = pipeline.load_trained(store)
        report = pipeline.ingest_and_classify(
            store, path.read_bytes(), dictionary, model, extractor, name=path.name
        )
    print(json.dumps(report.as_dict(), indent=2))
    return 0


def cmd_query(args) -> int:
    with Store(args.dir) as store:
        try:
            dictionary, model, extractor = pipeline.load_trained(store)
        except BofdbError:
            dictionary = model = extractor = None
        result = Executor(store, model, dictionary, extractor).execute(parse(args.sql))
    print("\t".join(result.columns))
    for row in result.rows:
        print("\t".join(render_value(v) for v in row))
    return 0


def cmd_serve(args) -> int:
    store = Store(args.dir)
    server = BofdbServer(store, args.host, args.port)
    print(f"serving {store.path} on {args.host}:{server.port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        store.close()
    return 0


def cmd_bench(args) -> int:
    extractor = _extractor(args)
    with Store(args.dir) as store:
        if args.manifest:
            dataset = pipeline.dataset_from_manifest(pipeline.read_manifest(args.manifest), extractor)
        else:
            dataset = pipeline.dataset_from_store(store)
    if not dataset:
        print("error: no labelled images (pass --manifest or run learn first)", file=sys.stderr)
        return 1
    report = pipeline.benchmark_table1(
        dataset,
        sizes=_sizes(args.sizes),
        runs=args.runs,
        split_seed=args.seed,
        svm=SvmConfig.parse_kernel(args.kernel, c=args.c),
        restarts=args.restarts,
    )
    csv_text = report.to_csv()
    if args.out:
        Path(args.out).write_text(csv_text)
    print(report.format_table())
    print()
    print(csv_text, end="")
    print(f"# {report.seconds:.1f} s", file=sys.stderr)
    return 0


def cmd_gen_dataset(args) -> int:
    manifest = pipeline.generate_dataset(args.dir, args.classes, args.per_class, args.seed, args.size)
    print(manifest)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bofdb", description="Bag-of-features image database")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def extractor_opts(p):
        p.add_argument("--grid-step", type=int, default=ExtractorParams.grid_step)
        p.add_argument("--patch-size", type=int, default=ExtractorParams.patch_size)

    def svm_opts(p):
        p.add_argument("--c", type=float, default=SvmConfig.c)
        p.add_argument("--kernel", default="linear", help="linear or rbf:<gamma>")

    p = sub.add_parser("init", help="create an empty store")
    p.add_argument("dir")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("learn", help="build dictionary and classifiers from labelled images")
    p.add_argument("dir")
    p.add_argument("--manifest", required=True, help="CSV of path,class")
    p.add_argument("--words", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--sample", type=int, default=None, help="subsample descriptors for k-means")
    svm_opts(p)
    extractor_opts(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("classify", help="predict the class of an image without storing it")
    p.add_argument("dir")
    p.add_argument("image")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("ingest", help="store, classify and index an image")
    p.add_argument("dir")
    p.add_argument("image")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("query", help="run one SQL-subset statement")
    p.add_argument("dir")
    p.add_argument("sql")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("serve", help="run the line-protocol service")
    p.add_argument("dir")
    p.add_argument("--port", type=int, required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("bench", help="accuracy per dictionary size (held-out split)")
    p.add_argument("dir")
    p.add_argument("--sizes", default=",".join(map(str, pipeline.DEFAULT_SIZES)))
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--manifest", default=None)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--out", default=None, help="also write the CSV report here")
    svm_opts(p)
    extractor_opts(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gen-dataset", help="write a synthetic texture corpus")
    p.add_argument("dir")
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--per-class", type=int, default=60)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=cmd_gen_dataset)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except BofdbError as exc:
        print(f"error: {exc.code} {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
