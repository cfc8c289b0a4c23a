"""Statement generators for parser round-trip tests.

Built from the grammar directly, not from the parser's internals.
"""

import random

from bofdb.query import SCHEMAS

FUNCS = ("GetClassOfImage", "FindDuplicates")


def _literal(rng):
    kind = rng.randrange(3)
    if kind == 0:
        return str(rng.randint(-10**6, 10**9))
    if kind == 1:
        text = "".join(rng.choice("ab c'_-é\t0") for _ in range(rng.randrange(6)))
        return "'" + text.replace("'", "''") + "'"
    hexd = "".join(rng.choice("0123456789abcdefABCDEF") for _ in range(32))
    return rng.choice("xX") + "'" + hexd + "'"


def _kw(rng, word):
    return "".join(c.upper() if rng.random() < 0.5 else c.lower() for c in word)


def _ws(rng):
    return rng.choice([" ", "  ", "\n", "\t", " \n "])


def _call(rng, columns):
    arg = rng.choice(columns) if columns and rng.random() < 0.3 else _literal(rng)
    return f"{rng.choice(FUNCS)}({_ws(rng) if rng.random() < 0.2 else ''}{arg})"


def random_statement(rng: random.Random) -> str:
    implicit = rng.random() < 0.2
    table = None if implicit else rng.choice(sorted(SCHEMAS))
    columns = [] if implicit else [c for c, _ in SCHEMAS[table][0]]
    if not implicit and rng.random() < 0.25:
        projection = "*"
    else:
        items = []
        for _ in range(rng.randint(1, 3)):
            if columns and rng.random() < 0.6:
                items.append(rng.choice(columns))
            else:
                items.append(_call(rng, columns))
        projection = ("," + _ws(rng)).join(items)
    out = f"{_kw(rng, 'select')}{_ws(rng)}{projection}"
    if not implicit:
        out += f"{_ws(rng)}{_kw(rng, 'from')}{_ws(rng)}{table}"
    if rng.random() < 0.6:
        preds = []
        for _ in range(rng.randint(1, 3)):
            r = rng.random()
            col = rng.choice(columns) if columns else "id"
            if r < 0.4:
                preds.append(f"{col}{_ws(rng)}={_ws(rng)}{_literal(rng)}")
            elif r < 0.7:
                vals = ", ".join(_literal(rng) for _ in range(rng.randint(1, 4)))
                preds.append(f"{col} {_kw(rng, 'in')} ({vals})")
            elif r < 0.85:
                preds.append(_call(rng, columns))
            else:
                preds.append(f"{_call(rng, columns)} = {_literal(rng)}")
        out += f"{_ws(rng)}{_kw(rng, 'where')}{_ws(rng)}" + f"{_ws(rng)}{_kw(rng, 'and')}{_ws(rng)}".join(preds)
    return out + rng.choice([";", " ;", ";\n"])


# hand-written statements covering every production at least once
COVERAGE_CORPUS = [
    "SELECT GetClassOfImage(42);",
    "SELECT image_id FROM descriptors WHERE comparative_descriptor = x'd41d8cd98f00b204e9800998ecf8427e';",
    "SELECT * FROM images;",
    "SELECT * FROM images_ft;",
    "SELECT * FROM sifts;",
    "SELECT * FROM dictionaries;",
    "SELECT * FROM descriptors;",
    "SELECT * FROM svm_configs;",
    "SELECT * FROM stats;",
    "select id, name from images_ft;",
    "SeLeCt id FROM images WHERE class_label = 'stripes';",
    "SELECT id, class_label FROM images WHERE role = 'train' AND class_label = 'dots';",
    "SELECT id FROM images WHERE class_label IN ('a', 'b', 'c');",
    "SELECT id FROM images_ft WHERE id IN (1, 2, 3);",
    "SELECT id FROM images_ft WHERE id = 7;",
    "SELECT FindDuplicates(3);",
    "SELECT id, FindDuplicates(id) FROM images_ft;",
    "SELECT id, GetClassOfImage(id) FROM images_ft;",
    "SELECT id FROM images_ft WHERE GetClassOfImage(id) = 'stripes';",
    "SELECT id FROM images_ft WHERE FindDuplicates(id);",
    "SELECT GetClassOfImage(1), GetClassOfImage(2);",
    "SELECT id FROM descriptors WHERE comparative_descriptor IN (x'00000000000000000000000000000000', X'FFFFFFFFFFFFFFFFFFFFFFFFFFFFFFFF');",
    "SELECT image_id, dictionary_id FROM descriptors WHERE image_id = 5 AND dictionary_id = 1;",
    "SELECT words_count, keypoint_count FROM descriptors;",
    "SELECT id, words_count, single_word_size FROM dictionaries WHERE id = 1;",
    "SELECT kernel, c FROM svm_configs WHERE dictionary_id = 1;",
    "SELECT class_count, grid_step, patch_size FROM svm_configs;",
    "SELECT stage, elapsed_us FROM stats WHERE stage = 'total';",
    "SELECT stage FROM stats WHERE stage IN ('extract', 'encode', 'classify', 'index');",
    "SELECT timestamp FROM stats WHERE image_id = 0;",
    "SELECT keypoint_count, dim FROM sifts WHERE id = 2;",
    "SELECT name, size FROM images_ft WHERE name = 'it''s.pgm';",
    "SELECT name FROM images_ft WHERE name = '';",
    "SELECT id FROM images_ft WHERE id = -1;",
    "SELECT\n  id\nFROM\n  images_ft\nWHERE\n  id = 1\n;",
    "   SELECT   *   FROM   stats   ;   ",
    "SELECT id FROM images_ft -- trailing comment\n;",
    "select * from stats where id in (1) and image_id in (2, 3) and stage = 'total';",
    "SELECT FindDuplicates( 9 );",
    "SELECT GetClassOfImage('42');",
    "SELECT GetClassOfImage(x'0123456789abcdef0123456789ABCDEF');",
    "SELECT id FROM images WHERE GetClassOfImage(id) = 'x' AND role = 'predicted';",
    "SELECT role, class_label, id FROM images;",
    "SELECT id FROM descriptors WHERE comparative_descriptor = x'D41D8CD98F00B204E9800998ECF8427E' AND image_id = 1;",
    "SELECT id FROM images_ft WHERE name IN ('a.pgm');",
    "SELECT size FROM images_ft WHERE size = 0;",
    "SELECT GetClassOfImage(1) FROM images_ft WHERE id = 1;",
    "SELECT id FROM dictionaries WHERE words_count IN (40, 50, 80, 100, 130, 150);",
    "SELECT elapsed_us FROM stats WHERE elapsed_us = 12;",
    "SELECT id, image_id, stage, elapsed_us, timestamp FROM stats;",
]

# (statement, expected line, expected column) of the first error
INVALID_CORPUS = [
    ("SELEC * FROM images;", 1, 1),
    ("SELECT * FROM images", 1, 21),
    ("SELECT FROM images;", 1, 8),
    ("SELECT * images;", 1, 10),
    ("SELECT id FROM images WHERE;", 1, 28),
    ("SELECT id FROM images WHERE id = ;", 1, 34),
    ("SELECT id FROM images WHERE id IN ();", 1, 36),
    ("SELECT id FROM images WHERE id IN (1,);", 1, 38),
    ("SELECT id FROM images WHERE id IN (1;", 1, 37),
    ("SELECT id,, name FROM images_ft;", 1, 11),
    ("SELECT id FROM images_ft WHERE id = 1 AND;", 1, 42),
    ("SELECT id FROM images_ft WHERE id == 1;", 1, 36),
    ("SELECT id FROM images_ft WHERE id 1;", 1, 35),
    ("SELECT GetClassOfImage(1;", 1, 25),
    ("SELECT GetClassOfImage(1,);", 1, 26),
    ("SELECT x'abc';", 1, 8),
    ("SELECT id FROM descriptors WHERE comparative_descriptor = x'zz';", 1, 59),
    ("SELECT 'unterminated;", 1, 8),
    ("SELECT id FROM images_ft;;", 1, 26),
    ("SELECT id FROM images_ft; SELECT 1;", 1, 27),
    ("SELECT id FROM\nimages_ft\nWHERE id = @;", 3, 12),
    ("\n\n  SELEC id;", 3, 3),
    ("SELECT * FROM images WHERE id = 1 OR id = 2;", 1, 35),
    ("SELECT 42;", 1, 8),
    ("SELECT id FROM 42;", 1, 16),
    ("", 1, 1),
    (";", 1, 1),
    ("SELECT id FROM images_ft WHERE GetClassOfImage(1) = GetClassOfImage(2);", 1, 53),
    ("SELECT id FROM images_ft WHERE 'a' = id;", 1, 32),
    ("SELECT *, id FROM images_ft;", 1, 9),
]
