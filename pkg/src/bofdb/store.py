"""Embedded single-directory store.

Layout of a store directory::

    catalog.bofs     "BOFS" u16 version u16 reserved, then framed records
    index.bofi       persisted comparative-descriptor hash index (a cache)
    blobs/<id>.blob  raw image files, one per images_ft row, id as 16 hex digits

A catalog record is ``u32 body length | u32 crc32(body) | body`` with
``body = u8 op | u8 table | u64 record id | row bytes``. Rows are appended
as they are written and the log is compacted (one record per live row,
ordered by table then id) on close. All integers are little-endian.
"""

from __future__ import annotations

import json
import logging
import os
import struct
import threading
import zlib
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

import numpy as np

from .encode import BofHistogram, histogram_payload
from .errors import (
    BofdbError,
    CorruptStore,
    ForeignKeyViolation,
    MalformedRecord,
    UnknownFileId,
    UnknownRecord,
)
from .features import DescriptorSet, ExtractorParams, export_descriptors, import_descriptors
from .svm import SvmModel
from .vocab import Dictionary

logger = logging.getLogger(__name__)

TABLES = ("images_ft", "images", "sifts", "dictionaries", "descriptors", "svm_configs", "stats")
STAGES = ("extract", "encode", "classify", "index", "total")

CATALOG_MAGIC = b"BOFS"
INDEX_MAGIC = b"BOFI"
VERSION = 1
CATALOG_NAME = "catalog.bofs"
INDEX_NAME = "index.bofi"

_CAT_HEADER = struct.Struct("<4sHH")
_FRAME = struct.Struct("<II")
_BODY = struct.Struct("<BBQ")
_IDX_HEADER = struct.Struct("<4sHQII")
OP_PUT = 1

NULL = b"\x01"
EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)
PRESENT = b"\x00"


# ---------------------------------------------------------------------------
# UDT codecs
# ---------------------------------------------------------------------------


def encode_dictionary_udt(d: Dictionary | None) -> bytes:
    """null flag | i32 words_count | i32 single_word_size | f64 values row-major."""
    if d is None:
        return NULL
    return (
        PRESENT
        + struct.pack("<ii", d.words_count, d.single_word_size)
        + np.asarray(d.values, dtype="<f8").tobytes()
    )


def decode_dictionary_udt(data: bytes, dictionary_id=None) -> Dictionary | None:
    if data == NULL:
        return None
    if len(data) < 9 or data[:1] != PRESENT:
        raise MalformedRecord("bad DictionaryData header")
    k, dim = struct.unpack_from("<ii", data, 1)
    if k < 1 or dim < 1 or len(data) != 9 + 8 * k * dim:
        raise MalformedRecord(f"DictionaryData size mismatch for {k}x{dim}")
    values = np.frombuffer(data, dtype="<f8", offset=9).reshape(k, dim).astype(np.float64)
    try:
        return Dictionary(values, dictionary_id)
    except ValueError as exc:
        raise MalformedRecord(str(exc)) from exc


def encode_descriptor_udt(h: BofHistogram | None) -> bytes:
    """null flag | i32 words_count | f64 values."""
    if h is None:
        return NULL
    return PRESENT + histogram_payload(h.words_count, h.values)


def _histogram_values(data: bytes) -> np.ndarray:
    if len(data) < 5 or data[:1] != PRESENT:
        raise MalformedRecord("bad DescriptorData header")
    (k,) = struct.unpack_from("<i", data, 1)
    if k < 0 or len(data) != 5 + 8 * k:
        raise MalformedRecord(f"DescriptorData size mismatch for {k} words")
    return np.frombuffer(data, dtype="<f8", offset=5).astype(np.float64)


def decode_descriptor_udt(data: bytes, image_id=None) -> BofHistogram | None:
    if data == NULL:
        return None
    return BofHistogram(_histogram_values(data), image_id=image_id)


def _pack_str(s: str | None) -> bytes:
    if s is None:
        return struct.pack("<H", 0xFFFF)
    raw = s.encode("utf-8")
    if len(raw) >= 0xFFFF:
        raise ValueError("string too long for record")
    return struct.pack("<H", len(raw)) + raw


def _unpack_str(data: bytes, pos: int) -> tuple[str | None, int]:
    (n,) = struct.unpack_from("<H", data, pos)
    pos += 2
    if n == 0xFFFF:
        return None, pos
    if pos + n > len(data):
        raise MalformedRecord("truncated string")
    return data[pos:pos + n].decode("utf-8"), pos + n


# ---------------------------------------------------------------------------
# Row types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ImageFile:
    name: str
    size: int

    def encode(self) -> bytes:
        return _pack_str(self.name) + struct.pack("<Q", self.size)

    @classmethod
    def decode(cls, data: bytes) -> "ImageFile":
        name, pos = _unpack_str(data, 0)
        (size,) = struct.unpack_from("<Q", data, pos)
        return cls(name, size)


@dataclass(frozen=True)
class ImageClass:
    """Membership of a stored image in a visual class."""

    class_label: str | None
    role: str  # "train" for labelled examples, "predicted" for classified ingests

    def encode(self) -> bytes:
        return _pack_str(self.class_label) + _pack_str(self.role)

    @classmethod
    def decode(cls, data: bytes) -> "ImageClass":
        label, pos = _unpack_str(data, 0)
        role, _ = _unpack_str(data, pos)
        return cls(label, role)


@dataclass(frozen=True)
class DescriptorRow:
    image_id: int
    dictionary_id: int
    comparative_descriptor: bytes
    histogram: BofHistogram

    def encode(self) -> bytes:
        return (
            struct.pack("<QQ", self.image_id, self.dictionary_id)
            + self.comparative_descriptor
            + encode_descriptor_udt(self.histogram)
        )

    @classmethod
    def decode(cls, data: bytes) -> "DescriptorRow":
        if len(data) < 32:
            raise MalformedRecord("truncated descriptors row")
        image_id, dictionary_id = struct.unpack_from("<QQ", data)
        digest = data[16:32]
        values = _histogram_values(data[32:])
        return cls(image_id, dictionary_id, digest, BofHistogram(values, image_id, digest))


@dataclass(frozen=True)
class SvmConfigRow:
    dictionary_id: int
    extractor: ExtractorParams
    model: SvmModel

    def encode(self) -> bytes:
        body = json.dumps(self.model.to_dict(), sort_keys=True, separators=(",", ":"))
        return struct.pack(
            "<QII", self.dictionary_id, self.extractor.grid_step, self.extractor.patch_size
        ) + body.encode("utf-8")

    @classmethod
    def decode(cls, data: bytes) -> "SvmConfigRow":
        dictionary_id, step, patch = struct.unpack_from("<QII", data)
        try:
            model = SvmModel.from_dict(json.loads(data[16:].decode("utf-8")))
        except (ValueError, KeyError) as exc:
            raise MalformedRecord(f"bad svm_configs row: {exc}") from exc
        return cls(dictionary_id, ExtractorParams(step, patch), model)


@dataclass(frozen=True)
class StatsRecord:
    image_id: int
    stage: str
    elapsed: float  # microseconds
    timestamp: datetime

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if not self.elapsed >= 0:
            raise ValueError("elapsed must be >= 0")

    def encode(self) -> bytes:
        micros = (self.timestamp - EPOCH) // timedelta(microseconds=1)
        return struct.pack("<QBdq", self.image_id, STAGES.index(self.stage), self.elapsed, micros)

    @classmethod
    def decode(cls, data: bytes) -> "StatsRecord":
        image_id, stage, elapsed, micros = struct.unpack("<QBdq", data)
        return cls(image_id, STAGES[stage], elapsed, EPOCH + timedelta(microseconds=micros))


def _decode_sifts(data: bytes, image_id: int) -> DescriptorSet | None:
    if data == NULL:
        return None
    if data[:1] != PRESENT:
        raise MalformedRecord("bad sifts row header")
    return import_descriptors(data[1:], image_id=image_id)


_DECODERS = {
    "images_ft": lambda data, rid: ImageFile.decode(data),
    "images": lambda data, rid: ImageClass.decode(data),
    "sifts": _decode_sifts,
    "dictionaries": decode_dictionary_udt,
    "descriptors": lambda data, rid: DescriptorRow.decode(data),
    "svm_configs": lambda data, rid: SvmConfigRow.decode(data),
    "stats": lambda data, rid: StatsRecord.decode(data),
}


# ---------------------------------------------------------------------------
# Store
# ---------------------------------------------------------------------------


def _fsync_dir(path: Path) -> None:
    try:
        fd = os.open(path, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(fd)
    except OSError:
        pass
    finally:
        os.close(fd)


class Store:
    """Handle on a store directory.

    Mutations are serialized by an internal lock (single writer). Readers get
    snapshots copied under the same lock, so handles can be shared by threads.
    """

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / "blobs").mkdir(exist_ok=True)
        self._lock = threading.RLock()
        self._raw: dict[str, dict[int, bytes]] = {t: {} for t in TABLES}
        self._rows: dict[str, dict[int, object]] = {t: {} for t in TABLES}
        self._index: dict[bytes, set[int]] = {}
        self._by_image: dict[int, list[int]] = {}
        self._log = None
        self.index_rebuilt = False
        self._load()

    # -- lifecycle ---------------------------------------------------------

    @property
    def catalog_path(self) -> Path:
        return self.path / CATALOG_NAME

    @property
    def index_path(self) -> Path:
        return self.path / INDEX_NAME

    def _load(self) -> None:
        cat = self.catalog_path
        if not cat.exists():
            tmp = cat.with_suffix(".tmp")
            tmp.write_bytes(_CAT_HEADER.pack(CATALOG_MAGIC, VERSION, 0))
            os.replace(tmp, cat)
        data = cat.read_bytes()
        if len(data) < _CAT_HEADER.size:
            raise CorruptStore("catalog header truncated")
        magic, version, _ = _CAT_HEADER.unpack_from(data)
        if magic != CATALOG_MAGIC:
            raise CorruptStore(f"bad catalog magic {magic!r}")
        if version != VERSION:
            raise CorruptStore(f"unsupported catalog version {version}")

        pos = _CAT_HEADER.size
        end = len(data)
        while pos < end:
            frame_ok = pos + _FRAME.size <= end
            if frame_ok:
                length, crc = _FRAME.unpack_from(data, pos)
                body_end = pos + _FRAME.size + length
                frame_ok = body_end <= end and length >= _BODY.size
                if frame_ok:
                    body = data[pos + _FRAME.size:body_end]
                    frame_ok = zlib.crc32(body) == crc
            if not frame_ok:
                if pos + _FRAME.size > end or body_end >= end:
                    # torn final record from an interrupted append
                    logger.warning("dropping torn record at catalog offset %d", pos)
                    with open(cat, "r+b") as fh:
                        fh.truncate(pos)
                    break
                raise CorruptStore(f"checksum failure at catalog offset {pos}")
            op, table_no, rid = _BODY.unpack_from(body)
            if op != OP_PUT or table_no >= len(TABLES):
                raise CorruptStore(f"bad record header at catalog offset {pos}")
            self._apply(TABLES[table_no], rid, body[_BODY.size:])
            pos = body_end

        if not self._load_index():
            self._index = self.rebuild_index()
            self.index_rebuilt = True
        self._log = open(cat, "ab")

    def _apply(self, table: str, rid: int, raw: bytes) -> None:
        try:
            row = _DECODERS[table](raw, rid)
        except (struct.error, UnicodeDecodeError, ValueError, BofdbError) as exc:
            raise CorruptStore(f"undecodable {table} row {rid}: {exc}") from exc
        self._raw[table][rid] = raw
        self._rows[table][rid] = row
        if table == "descriptors":
            self._by_image.setdefault(row.image_id, []).append(rid)

    def close(self) -> None:
        """Compact the catalog, persist the index and release the log."""
        with self._lock:
            if self._log is None:
                return
            self._log.close()
            self._log = None
            self._compact()
            self._write_index()
            _fsync_dir(self.path)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @property
    def closed(self) -> bool:
        return self._log is None

    def _frame(self, table: str, rid: int, raw: bytes) -> bytes:
        body = _BODY.pack(OP_PUT, TABLES.index(table), rid) + raw
        return _FRAME.pack(len(body), zlib.crc32(body)) + body

    def _compact(self) -> None:
        parts = [_CAT_HEADER.pack(CATALOG_MAGIC, VERSION, 0)]
        for table in TABLES:
            for rid in sorted(self._raw[table]):
                parts.append(self._frame(table, rid, self._raw[table][rid]))
        tmp = self.catalog_path.with_suffix(".tmp")
        with open(tmp, "wb") as fh:
            fh.write(b"".join(parts))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, self.catalog_path)

    # -- hash index persistence -------------------------------------------

    def _catalog_fingerprint(self) -> tuple[int, int]:
        data = self.catalog_path.read_bytes()
        return len(data), zlib.crc32(data)

    def _write_index(self) -> None:
        size, crc = self._catalog_fingerprint()
        parts = [_IDX_HEADER.pack(INDEX_MAGIC, VERSION, size, crc, len(self._index))]
        for digest in sorted(self._index):
            ids = sorted(self._index[digest])
            parts.append(digest + struct.pack("<I", len(ids)) + struct.pack(f"<{len(ids)}Q", *ids))
        blob = b"".join(parts)
        blob += struct.pack("<I", zlib.crc32(blob))
        tmp = self.index_path.with_suffix(".tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, self.index_path)

    def _load_index(self) -> bool:
        """Load index.bofi if it is intact and matches the current catalog."""
        try:
            blob = self.index_path.read_bytes()
        except FileNotFoundError:
            return False
        try:
            if len(blob) < _IDX_HEADER.size + 4:
                return False
            body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
            if zlib.crc32(body) != crc:
                return False
            magic, version, size, cat_crc, n = _IDX_HEADER.unpack_from(body)
            if magic != INDEX_MAGIC or version != VERSION:
                return False
            if (size, cat_crc) != self._catalog_fingerprint():
                return False
            index: dict[bytes, set[int]] = {}
            pos = _IDX_HEADER.size
            for _ in range(n):
                digest = body[pos:pos + 16]
                (count,) = struct.unpack_from("<I", body, pos + 16)
                ids = struct.unpack_from(f"<{count}Q", body, pos + 20)
                index[digest] = set(ids)
                pos += 20 + 8 * count
            if pos != len(body):
                return False
        except struct.error:
            return False
        self._index = index
        return True

    def rebuild_index(self) -> dict[bytes, set[int]]:
        """Recompute the digest -> descriptor ids map from the descriptors table."""
        with self._lock:
            index: dict[bytes, set[int]] = {}
            for rid, row in self._rows["descriptors"].items():
                index.setdefault(row.comparative_descriptor, set()).add(rid)
            return index

    def index_snapshot(self) -> dict[bytes, frozenset]:
        with self._lock:
            return {k: frozenset(v) for k, v in self._index.items()}

    # -- generic row access ------------------------------------------------

    def _check_open(self) -> None:
        if self._log is None:
            raise CorruptStore("store is closed")

    def _next_id(self, table: str) -> int:
        rows = self._raw[table]
        return max(rows) + 1 if rows else 1

    def _put(self, table: str, rid: int, raw: bytes) -> int:
        self._check_open()
        self._log.write(self._frame(table, rid, raw))
        self._log.flush()
        self._apply(table, rid, raw)
        return rid

    def _require(self, table: str, rid: int, exc=ForeignKeyViolation) -> None:
        if rid not in self._raw[table]:
            raise exc(f"{table} has no record {rid}")

    def count(self, table: str) -> int:
        with self._lock:
            return len(self._raw[table])

    def rows(self, table: str) -> list[tuple[int, object]]:
        """Snapshot of ``(id, row)`` pairs ordered by id."""
        with self._lock:
            tbl = self._rows[table]
            return [(rid, tbl[rid]) for rid in sorted(tbl)]

    def get(self, table: str, rid: int):
        with self._lock:
            try:
                return self._rows[table][rid]
            except KeyError:
                raise UnknownRecord(f"{table} has no record {rid}") from None

    def table_bytes(self, table: str) -> dict[int, bytes]:
        with self._lock:
            return dict(self._raw[table])

    def check_integrity(self) -> None:
        """Raise ForeignKeyViolation if any reference dangles."""
        with self._lock:
            files = self._raw["images_ft"]
            for table in ("images", "sifts"):
                for rid in self._raw[table]:
                    if rid not in files:
                        raise ForeignKeyViolation(f"{table} row {rid} has no images_ft row")
            for rid, row in self._rows["descriptors"].items():
                if row.image_id not in files or row.dictionary_id not in self._raw["dictionaries"]:
                    raise ForeignKeyViolation(f"descriptors row {rid} dangles")
            for rid, row in self._rows["svm_configs"].items():
                if row.dictionary_id not in self._raw["dictionaries"]:
                    raise ForeignKeyViolation(f"svm_configs row {rid} dangles")

    # -- blobs (images_ft) -------------------------------------------------

    def blob_path(self, file_id: int) -> Path:
        return self.path / "blobs" / f"{file_id:016x}.blob"

    def put_blob(self, data: bytes, name: str = "") -> int:
        data = bytes(data)
        with self._lock:
            self._check_open()
            file_id = self._next_id("images_ft")
            path = self.blob_path(file_id)
            tmp = path.with_suffix(".tmp")
            with open(tmp, "wb") as fh:
                fh.write(data)
                fh.flush()
                os.fsync(fh.fileno())
            os.replace(tmp, path)
            return self._put("images_ft", file_id, ImageFile(name, len(data)).encode())

    def get_blob(self, file_id: int) -> bytes:
        with self._lock:
            if file_id not in self._raw["images_ft"]:
                raise UnknownFileId(f"no images_ft row {file_id}")
            path = self.blob_path(file_id)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise UnknownFileId(f"blob file for {file_id} is missing") from None

    # -- typed tables ------------------------------------------------------

    def put_image_class(self, file_id: int, class_label: str | None, role: str) -> int:
        with self._lock:
            self._require("images_ft", file_id)
            return self._put("images", file_id, ImageClass(class_label, role).encode())

    def put_sifts(self, file_id: int, ds: DescriptorSet) -> int:
        with self._lock:
            self._require("images_ft", file_id)
            return self._put("sifts", file_id, PRESENT + export_descriptors(ds))

    def get_sifts(self, file_id: int) -> DescriptorSet:
        return self.get("sifts", file_id)

    def put_dictionary(self, d: Dictionary) -> int:
        with self._lock:
            rid = self._put("dictionaries", self._next_id("dictionaries"), encode_dictionary_udt(d))
            d.dictionary_id = rid
            return rid

    def get_dictionary(self, dictionary_id: int) -> Dictionary:
        return self.get("dictionaries", dictionary_id)

    def insert_descriptor_row(self, h: BofHistogram, image_id: int, dictionary_id: int) -> int:
        with self._lock:
            self._require("images_ft", image_id)
            self._require("dictionaries", dictionary_id)
            row = DescriptorRow(image_id, dictionary_id, h.comparative_hash, h)
            rid = self._put("descriptors", self._next_id("descriptors"), row.encode())
            self._index.setdefault(h.comparative_hash, set()).add(rid)
            return rid

    def descriptor_ids_for_image(self, image_id: int) -> list[int]:
        with self._lock:
            return list(self._by_image.get(image_id, ()))

    def lookup_by_hash(self, digest: bytes) -> frozenset:
        with self._lock:
            return frozenset(self._index.get(bytes(digest), ()))

    def put_svm_model(self, model: SvmModel, extractor: ExtractorParams) -> int:
        with self._lock:
            self._require("dictionaries", model.dictionary_id)
            row = SvmConfigRow(model.dictionary_id, extractor, model)
            return self._put("svm_configs", self._next_id("svm_configs"), row.encode())

    def latest_model(self) -> tuple[int, SvmConfigRow] | None:
        with self._lock:
            rows = self._rows["svm_configs"]
            if not rows:
                return None
            rid = max(rows)
            return rid, rows[rid]

    def record_stat(self, s: StatsRecord) -> int:
        with self._lock:
            if s.image_id:
                self._require("images_ft", s.image_id)
            return self._put("stats", self._next_id("stats"), s.encode())


def open_store(path) -> Store:
    return Store(path)
