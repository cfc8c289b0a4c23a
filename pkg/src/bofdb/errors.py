"""Exception hierarchy shared by every bofdb module.

Each error carries a short ``code`` used by the line protocol
(``ERR <code> <message>``).
"""


class BofdbError(Exception):
    code = "ERROR"


class MalformedImage(BofdbError):
    code = "MALFORMED_IMAGE"


class ImageTooSmall(BofdbError):
    code = "IMAGE_TOO_SMALL"


class MalformedDescriptorFile(BofdbError):
    code = "MALFORMED_DESCRIPTOR_FILE"


class DimensionMismatch(BofdbError):
    code = "DIMENSION_MISMATCH"


class InvalidK(BofdbError):
    code = "INVALID_K"


class TooFewDistinctPoints(BofdbError):
    code = "TOO_FEW_DISTINCT_POINTS"


class SingleClassData(BofdbError):
    code = "SINGLE_CLASS_DATA"


class CorruptStore(BofdbError):
    code = "CORRUPT_STORE"


class MalformedRecord(BofdbError):
    code = "MALFORMED_RECORD"


class UnknownFileId(BofdbError):
    code = "UNKNOWN_FILE_ID"


class UnknownRecord(BofdbError):
    code = "UNKNOWN_RECORD"


class ForeignKeyViolation(BofdbError):
    code = "FOREIGN_KEY_VIOLATION"


class ModelNotLoaded(BofdbError):
    code = "MODEL_NOT_LOADED"


class QueryError(BofdbError):
    code = "QUERY"


class QuerySyntaxError(QueryError):
    """Parse failure at a 1-based ``line``/``column`` position."""

    code = "SYNTAX"

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{line}:{column}: {message}")
        self.line = line
        self.column = column


class UnknownTable(QueryError):
    code = "UNKNOWN_TABLE"


class UnknownFunction(QueryError):
    code = "UNKNOWN_FUNCTION"


class UnknownColumn(QueryError):
    code = "UNKNOWN_COLUMN"


class QueryTypeError(QueryError):
    code = "TYPE_MISMATCH"
