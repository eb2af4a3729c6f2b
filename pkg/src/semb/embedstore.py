"""Embedding data model and the SEMB on-disk gallery format.

SEMB is a little-endian binary container for galleries in which each item
carries one or more source-tagged embeddings:

    header : magic b"SEMB" | version u16 | dim u32 | item_count u64 | flags u8
    item   : id_len u16 | id utf-8 | K u8 | K x record
    record : source_kind u8 | label_len u8 | label utf-8 | dim x f32

``flags`` bit 0 records whether vectors were normalized when the index was
built.  Vectors are stored as 32-bit floats; all similarity math elsewhere
in the package runs in 64-bit.

Query sets travel as JSON-Lines, one object per line:
``{"query_id", "text", "target_item_id", "embedding": [...]}`` plus optional
extra fields (e.g. a tier name) selected by name at load time.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, DuplicateItemId, FormatError, ZeroVector

MAGIC = b"SEMB"
FORMAT_VERSION = 1
FLAG_NORMALIZED = 0x01

MAX_ID_BYTES = 0xFFFF
MAX_LABEL_BYTES = 0xFF
MAX_EMBEDDINGS_PER_ITEM = 0xFF

_HEADER = struct.Struct("<4sHIQB")


class SourceKind(IntEnum):
    """Provenance of one embedding; the numeric value is the wire code."""

    REGIONAL_PROMPT = 0
    CROP = 1
    GLOBAL = 2
    SYNONYM_PROMPT = 3

    @property
    def tag_name(self) -> str:
        return self.name.lower()

    @classmethod
    def from_name(cls, name: str) -> "SourceKind":
        try:
            return cls[name.upper()]
        except KeyError:
            raise ValueError(f"unknown source kind {name!r}") from None


@dataclass(frozen=True)
class SourceTag:
    """Where an embedding came from: its kind plus a short free-form label."""

    kind: SourceKind
    label: str = ""


@dataclass
class ItemEmbeddingSet:
    """One gallery item: an id plus K >= 1 source-tagged embeddings."""

    item_id: str
    embeddings: list[tuple[SourceTag, np.ndarray]]

    @property
    def dim(self) -> int:
        return int(len(self.embeddings[0][1])) if self.embeddings else 0

    def vectors_for(self, kind: SourceKind) -> list[tuple[SourceTag, np.ndarray]]:
        return [(tag, vec) for tag, vec in self.embeddings if tag.kind == kind]

    def global_vector(self) -> np.ndarray | None:
        """The first global-tagged embedding, or None."""
        for tag, vec in self.embeddings:
            if tag.kind == SourceKind.GLOBAL:
                return vec
        return None


@dataclass
class GalleryIndex:
    """Validated, immutable-by-convention candidate pool for retrieval.

    Safe to share across concurrent readers once built; loading and saving
    are single-owner operations.
    """

    dim: int
    items: list[ItemEmbeddingSet]
    normalized: bool = False

    def item_ids(self) -> list[str]:
        return [item.item_id for item in self.items]

    def get(self, item_id: str) -> ItemEmbeddingSet:
        for item in self.items:
            if item.item_id == item_id:
                return item
        raise KeyError(item_id)


@dataclass
class QueryRecord:
    """A text query with its embedding and ground-truth gallery item."""

    query_id: str
    text: str
    target_item_id: str
    embedding: np.ndarray
    tier: str | None = None


def _as_f64(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {arr.shape}")
    return arr


def _l2(v: np.ndarray) -> float:
    # sqrt of a plain dot product; every norm in the package goes through
    # this one expression so scores compare bit-for-bit across code paths
    return math.sqrt(float(np.dot(v, v)))


def normalize(values) -> np.ndarray:
    """Scale a vector to unit L2 norm in 64-bit; direction is preserved.

    Raises ZeroVector for norms <= 1e-12 (a degenerate extractor output).
    """
    v = _as_f64(values)
    if not np.all(np.isfinite(v)):
        raise ValueError("vector contains non-finite entries")
    n = _l2(v)
    if n <= 1e-12:
        raise ZeroVector(f"cannot normalize vector with norm {n!r}")
    return v / n


def validate_item(item: ItemEmbeddingSet, dim: int | None = None) -> int:
    """Check one item's invariants; returns the item's dimension."""
    if not item.item_id:
        raise FormatError("empty item_id")
    if len(item.item_id.encode("utf-8")) > MAX_ID_BYTES:
        raise FormatError(f"item id longer than {MAX_ID_BYTES} bytes")
    k = len(item.embeddings)
    if not 1 <= k <= MAX_EMBEDDINGS_PER_ITEM:
        raise FormatError(
            f"item {item.item_id!r}: K={k} outside 1..{MAX_EMBEDDINGS_PER_ITEM}"
        )
    seen: set[SourceTag] = set()
    for tag, vec in item.embeddings:
        if len(tag.label.encode("utf-8")) > MAX_LABEL_BYTES:
            raise FormatError(f"item {item.item_id!r}: label longer than 255 bytes")
        if tag in seen:
            raise FormatError(
                f"item {item.item_id!r}: duplicate source tag "
                f"({tag.kind.tag_name}, {tag.label!r})"
            )
        seen.add(tag)
        arr = np.asarray(vec)
        if arr.ndim != 1:
            raise FormatError(f"item {item.item_id!r}: embedding is not a 1-D vector")
        if dim is None:
            dim = int(arr.shape[0])
        elif int(arr.shape[0]) != dim:
            raise DimensionMismatch(
                f"item {item.item_id!r} has embedding of dim {arr.shape[0]}, expected {dim}"
            )
        if not np.all(np.isfinite(arr)):
            raise FormatError(f"item {item.item_id!r}: non-finite embedding value")
    if dim is not None and dim < 1:
        raise FormatError("embedding dimension must be positive")
    return dim


def validate_gallery(gallery: GalleryIndex) -> None:
    """Check every gallery invariant eagerly; raises a typed error."""
    if gallery.dim < 1:
        raise FormatError(f"gallery dimension must be positive, got {gallery.dim}")
    seen_ids: set[str] = set()
    for item in gallery.items:
        if item.item_id in seen_ids:
            raise DuplicateItemId(item.item_id)
        seen_ids.add(item.item_id)
        validate_item(item, gallery.dim)


def build_gallery(
    items: list[ItemEmbeddingSet],
    normalized: bool = False,
    dim: int | None = None,
) -> GalleryIndex:
    """Assemble and validate a gallery; dim is inferred from the first item."""
    if dim is None:
        if not items:
            raise ValueError("dim is required for an empty gallery")
        dim = validate_item(items[0])
    gallery = GalleryIndex(dim=int(dim), items=list(items), normalized=normalized)
    validate_gallery(gallery)
    return gallery


def normalize_gallery(gallery: GalleryIndex) -> GalleryIndex:
    """Return a copy with every embedding scaled to unit norm (f32 storage)."""
    items = []
    for item in gallery.items:
        embs = [
            (tag, np.asarray(normalize(vec), dtype=np.float32))
            for tag, vec in item.embeddings
        ]
        items.append(ItemEmbeddingSet(item.item_id, embs))
    out = GalleryIndex(dim=gallery.dim, items=items, normalized=True)
    validate_gallery(out)
    return out


def save_gallery(gallery: GalleryIndex, path) -> None:
    """Write a validated gallery in the SEMB format (bit-exact reload)."""
    validate_gallery(gallery)
    buf = bytearray()
    flags = FLAG_NORMALIZED if gallery.normalized else 0
    buf += _HEADER.pack(MAGIC, FORMAT_VERSION, gallery.dim, len(gallery.items), flags)
    for item in gallery.items:
        id_bytes = item.item_id.encode("utf-8")
        buf += struct.pack("<H", len(id_bytes))
        buf += id_bytes
        buf += struct.pack("<B", len(item.embeddings))
        for tag, vec in item.embeddings:
            label_bytes = tag.label.encode("utf-8")
            buf += struct.pack("<BB", int(tag.kind), len(label_bytes))
            buf += label_bytes
            buf += np.asarray(vec, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_gallery(path) -> GalleryIndex:
    """Load and fully validate a SEMB file.

    Any malformed byte stream raises a typed error; no partial gallery is
    ever returned.
    """
    data = Path(path).read_bytes()
    pos = 0

    def need(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(data):
            raise FormatError(f"truncated {what}: need {n} bytes", offset=pos)
        chunk = data[pos : pos + n]
        pos += n
        return chunk

    magic, version, dim, item_count, flags = _HEADER.unpack(need(_HEADER.size, "header"))
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    if dim < 1:
        raise FormatError("embedding dimension must be positive", offset=6)
    if flags & ~FLAG_NORMALIZED:
        raise FormatError(f"unknown flag bits 0x{flags:02x}", offset=_HEADER.size - 1)

    items: list[ItemEmbeddingSet] = []
    for _ in range(item_count):
        (id_len,) = struct.unpack("<H", need(2, "item id length"))
        id_start = pos
        try:
            item_id = need(id_len, "item id").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("item id is not valid UTF-8", offset=id_start) from None
        (k,) = struct.unpack("<B", need(1, "embedding count"))
        embeddings: list[tuple[SourceTag, np.ndarray]] = []
        for _ in range(k):
            kind_byte, label_len = struct.unpack("<BB", need(2, "record header"))
            try:
                kind = SourceKind(kind_byte)
            except ValueError:
                raise FormatError(
                    f"unknown source kind {kind_byte}", offset=pos - 2
                ) from None
            label_start = pos
            try:
                label = need(label_len, "label").decode("utf-8")
            except UnicodeDecodeError:
                raise FormatError("label is not valid UTF-8", offset=label_start) from None
            raw = need(4 * dim, "embedding payload")
            vec = np.frombuffer(raw, dtype="<f4").copy()
            embeddings.append((SourceTag(kind, label), vec))
        items.append(ItemEmbeddingSet(item_id, embeddings))

    if pos != len(data):
        raise FormatError(f"{len(data) - pos} trailing bytes after last item", offset=pos)

    gallery = GalleryIndex(dim=int(dim), items=items, normalized=bool(flags & FLAG_NORMALIZED))
    validate_gallery(gallery)
    return gallery


def load_queries(path, tier_field: str | None = None) -> list[QueryRecord]:
    """Read a JSON-Lines query set, validating each line eagerly.

    When ``tier_field`` is given, every line must carry that field as a
    string; its value lands in ``QueryRecord.tier``.
    """
    records: list[QueryRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError:
                raise FormatError(f"line {lineno}: invalid JSON") from None
            if not isinstance(obj, dict):
                raise FormatError(f"line {lineno}: expected a JSON object")
            for key in ("query_id", "text", "target_item_id"):
                if not isinstance(obj.get(key), str):
                    raise FormatError(f"line {lineno}: missing string field {key!r}")
            emb = obj.get("embedding")
            if not isinstance(emb, list) or not emb:
                raise FormatError(f"line {lineno}: embedding must be a non-empty array")
            try:
                vec = np.asarray(emb, dtype=np.float64)
            except (TypeError, ValueError):
                raise FormatError(f"line {lineno}: embedding has non-numeric entries") from None
            if vec.ndim != 1 or not np.all(np.isfinite(vec)):
                raise FormatError(f"line {lineno}: embedding must be a finite 1-D array")
            tier = None
            if tier_field is not None:
                tier = obj.get(tier_field)
                if not isinstance(tier, str):
                    raise FormatError(f"line {lineno}: missing string field {tier_field!r}")
            records.append(
                QueryRecord(
                    query_id=obj["query_id"],
                    text=obj["text"],
                    target_item_id=obj["target_item_id"],
                    embedding=vec,
                    tier=tier,
                )
            )
    return records


def save_queries(path, records: list[QueryRecord], tier_field: str | None = None) -> None:
    """Write queries as JSON-Lines, the inverse of load_queries."""
    with open(path, "w", encoding="utf-8") as fh:
        for q in records:
            obj = {
                "query_id": q.query_id,
                "text": q.text,
                "target_item_id": q.target_item_id,
                "embedding": [float(x) for x in np.asarray(q.embedding, dtype=np.float64)],
            }
            if tier_field is not None and q.tier is not None:
                obj[tier_field] = q.tier
            fh.write(json.dumps(obj) + "\n")
