import pytest

from bofdb.pipeline import LearnSpec, generate_dataset, learn, read_manifest
from bofdb.store import Store


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    """Small 3-class synthetic corpus: list of (path, label)."""
    out = tmp_path_factory.mktemp("corpus")
    return read_manifest(generate_dataset(out, classes=3, per_class=12, seed=5))


@pytest.fixture(scope="session")
def trained_dir(tmp_path_factory, corpus):
    """Store directory trained on the first 10 images of every class."""
    path = tmp_path_factory.mktemp("trained")
    train = [item for item in corpus if int(item[0].stem.rsplit("_", 1)[1]) < 10]
    with Store(path) as s:
        learn(s, LearnSpec(images=train, words=20, seed=1))
    return path


_ACCEPTANCE_KEY = pytest.StashKey[dict]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion, then assert it."""
    results = request.config.stash.setdefault(_ACCEPTANCE_KEY, {})

    def check(number: int, ok: bool, detail: str):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        results[number] = line
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE_KEY, None)
    if results is None:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 9):
        terminalreporter.write_line(results.get(number, f"criterion {number}: NOT RUN"))
