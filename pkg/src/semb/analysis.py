"""Similarity-structure diagnostics over source-tagged embedding sets.

Covers cross-set cosine similarity matrices, per-item proximity of each
embedding group to the global embedding, and a CSV export that feeds
external projection tools (t-SNE and friends are deliberately not computed
here; they would make the core non-deterministic).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .embedstore import ItemEmbeddingSet, SourceKind
from .errors import DimensionMismatch, NoGlobalEmbedding
from .retrieval import cosine

# 9 significant digits: lossless for values that originate as 32-bit floats
_FLOAT_FMT = "%.9g"


@dataclass
class SimMatrix:
    row_labels: list[str]
    col_labels: list[str]
    values: np.ndarray


@dataclass
class ProximityReport:
    """Mean cosine of each embedding group against the global embedding."""

    item_id: str
    mean_regional_to_global: float | None
    mean_crop_to_global: float | None
    per_tag: dict[str, float]

    def to_json_dict(self) -> dict:
        return {
            "item_id": self.item_id,
            "mean_regional_to_global": self.mean_regional_to_global,
            "mean_crop_to_global": self.mean_crop_to_global,
            "per_tag": self.per_tag,
        }


def similarity_matrix(rows, cols) -> SimMatrix:
    """Pairwise cosine matrix between two labelled vector lists."""
    if not rows or not cols:
        raise ValueError("similarity_matrix needs non-empty row and column sets")
    values = np.empty((len(rows), len(cols)), dtype=np.float64)
    for i, (_rl, rv) in enumerate(rows):
        for j, (_cl, cv) in enumerate(cols):
            values[i, j] = cosine(rv, cv)
    return SimMatrix(
        row_labels=[label for label, _v in rows],
        col_labels=[label for label, _v in cols],
        values=values,
    )


def global_proximity_report(item: ItemEmbeddingSet) -> ProximityReport:
    """How close each of an item's embeddings sits to its global embedding.

    The item must carry exactly one global-tagged embedding.  Groups that
    are absent (no regional or no crop embeddings) report None rather than
    failing.
    """
    globals_ = item.vectors_for(SourceKind.GLOBAL)
    if len(globals_) != 1:
        raise NoGlobalEmbedding(
            f"item {item.item_id!r} has {len(globals_)} global embeddings, expected 1"
        )
    g_vec = globals_[0][1]
    per_tag: dict[str, float] = {}
    regional: list[float] = []
    crops: list[float] = []
    for tag, vec in item.embeddings:
        if tag.kind == SourceKind.GLOBAL:
            continue
        value = cosine(vec, g_vec)
        per_tag[f"{tag.kind.tag_name}:{tag.label}"] = value
        if tag.kind == SourceKind.REGIONAL_PROMPT:
            regional.append(value)
        elif tag.kind == SourceKind.CROP:
            crops.append(value)
    return ProximityReport(
        item_id=item.item_id,
        mean_regional_to_global=sum(regional) / len(regional) if regional else None,
        mean_crop_to_global=sum(crops) / len(crops) if crops else None,
        per_tag=per_tag,
    )


def write_matrix_csv(matrix: SimMatrix, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([""] + matrix.col_labels)
        for i, label in enumerate(matrix.row_labels):
            writer.writerow([label] + [_FLOAT_FMT % v for v in matrix.values[i]])


def export_projection_input(
    items: list[ItemEmbeddingSet],
    path,
    normalized: bool | None = None,
) -> int:
    """CSV with one row per embedding: item_id, kind, label, coordinates.

    Values are emitted with enough digits to round-trip 32-bit floats; when
    ``normalized`` is given, a leading comment records whether the source
    gallery was normalized at build time.  Returns the number of rows.
    """
    if not items:
        raise ValueError("export needs at least one item")
    dim = None
    for item in items:
        for _tag, vec in item.embeddings:
            if dim is None:
                dim = len(np.asarray(vec))
            elif len(np.asarray(vec)) != dim:
                raise DimensionMismatch(
                    f"item {item.item_id!r} breaks the common dimension {dim}"
                )
    rows = 0
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if normalized is not None:
            fh.write(f"# normalized={'true' if normalized else 'false'}\n")
        writer = csv.writer(fh)
        header = ["item_id", "kind", "label"] + [f"d{i}" for i in range(dim or 0)]
        writer.writerow(header)
        for item in items:
            for tag, vec in item.embeddings:
                coords = [_FLOAT_FMT % float(x) for x in np.asarray(vec, dtype=np.float64)]
                writer.writerow([item.item_id, tag.kind.tag_name, tag.label] + coords)
                rows += 1
    return rows
