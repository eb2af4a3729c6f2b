"""Benchmark construction: difficulty tiering, automatic filters, statistics.

Every sample is an annotated image (dimensions, one bounding box, one
caption).  Tiering derives two zoomed variants per sample by picking the
grid cell that covers the box best and extending it just enough to contain
the box; crops are emitted as geometry only, actual pixel cropping is left
to external tools.

Annotations travel as JSON-Lines:
``{"image_id", "width", "height", "bbox": [x, y, w, h], "caption", "mask_count"?}``.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import EmptyDataset, FormatError, ImageTooSmall

# bounding boxes above this fraction of the image are rejected outright
MAX_BBOX_AREA_RATIO = 0.20
# captions below this many whitespace-separated words get flagged
MIN_CAPTION_WORDS = 8

DEFAULT_CAPTION_EDGES = tuple(range(0, 52, 4))
DEFAULT_RATIO_EDGES = tuple(i / 50.0 for i in range(11)) + (1.0,)
DEFAULT_MASK_EDGES = tuple(range(0, 550, 50))


@dataclass(frozen=True)
class Rect:
    """Axis-aligned pixel rectangle, top-left origin."""

    x: int
    y: int
    w: int
    h: int

    @property
    def area(self) -> int:
        return self.w * self.h

    @property
    def x2(self) -> int:
        return self.x + self.w

    @property
    def y2(self) -> int:
        return self.y + self.h

    def contains(self, other: "Rect") -> bool:
        return (
            self.x <= other.x
            and self.y <= other.y
            and self.x2 >= other.x2
            and self.y2 >= other.y2
        )

    def intersection_area(self, other: "Rect") -> int:
        w = min(self.x2, other.x2) - max(self.x, other.x)
        h = min(self.y2, other.y2) - max(self.y, other.y)
        return w * h if w > 0 and h > 0 else 0


@dataclass
class AnnotatedSample:
    """One image with its target bounding box and caption."""

    image_id: str
    image_w: int
    image_h: int
    bbox: Rect
    caption: str
    mask_count: int | None = None

    def validate(self) -> None:
        if self.image_w < 1 or self.image_h < 1:
            raise ValueError(f"sample {self.image_id!r}: non-positive image size")
        b = self.bbox
        if b.w < 1 or b.h < 1 or b.x < 0 or b.y < 0:
            raise ValueError(f"sample {self.image_id!r}: degenerate bbox")
        if b.x2 > self.image_w or b.y2 > self.image_h:
            raise ValueError(f"sample {self.image_id!r}: bbox outside image bounds")
        if not self.caption:
            raise ValueError(f"sample {self.image_id!r}: empty caption")
        if self.mask_count is not None and self.mask_count < 0:
            raise ValueError(f"sample {self.image_id!r}: negative mask_count")


class TierLevel(str, Enum):
    FULL_RES = "full_res"
    ZOOM2 = "zoom2"
    ZOOM3 = "zoom3"


class FilterVerdict(str, Enum):
    KEEP = "keep"
    REJECT_BBOX_TOO_LARGE = "reject_bbox_too_large"
    FLAG_SHORT_CAPTION = "flag_short_caption"


@dataclass(frozen=True)
class TierCrop:
    """One difficulty level of a sample; the crop always contains the bbox."""

    level: TierLevel
    crop: Rect
    contains_bbox: bool = True


def grid_cells(image_w: int, image_h: int, n: int) -> list[Rect]:
    """Tile the image into an n x n grid of cells, row-major.

    Cell sizes differ by at most one pixel: when a dimension is not
    divisible by n, the remainder pixels go one each to the last columns
    (rows).
    """
    if n < 1:
        raise ValueError(f"grid n must be >= 1, got {n}")
    if image_w < n or image_h < n:
        raise ImageTooSmall(f"cannot split {image_w}x{image_h} into {n}x{n} cells")
    widths = _split_lengths(image_w, n)
    heights = _split_lengths(image_h, n)
    cells: list[Rect] = []
    y = 0
    for h in heights:
        x = 0
        for w in widths:
            cells.append(Rect(x, y, w, h))
            x += w
        y += h
    return cells


def select_cell(sample: AnnotatedSample, n: int) -> tuple[int, int]:
    """Index of the cell overlapping the bbox most, plus that overlap in px^2.

    Ties pick the smallest row-major index.
    """
    sample.validate()
    best_idx = 0
    best_area = -1
    for idx, cell in enumerate(grid_cells(sample.image_w, sample.image_h, n)):
        area = cell.intersection_area(sample.bbox)
        if area > best_area:
            best_idx, best_area = idx, area
    return best_idx, best_area


def extend_to_include(cell: Rect, bbox: Rect, image_w: int, image_h: int) -> Rect:
    """Smallest superset of the cell containing the bbox, inside the image.

    Each edge moves only as far as the bbox requires.
    """
    x1 = max(0, min(cell.x, bbox.x))
    y1 = max(0, min(cell.y, bbox.y))
    x2 = min(image_w, max(cell.x2, bbox.x2))
    y2 = min(image_h, max(cell.y2, bbox.y2))
    return Rect(x1, y1, x2 - x1, y2 - y1)


def build_tiers(sample: AnnotatedSample) -> list[TierCrop]:
    """Full-resolution, 2x-zoom and 3x-zoom crops, all containing the bbox.

    The caption is shared across levels and is not repeated here.
    """
    sample.validate()
    crops = [TierCrop(TierLevel.FULL_RES, Rect(0, 0, sample.image_w, sample.image_h))]
    for level, n in ((TierLevel.ZOOM2, 2), (TierLevel.ZOOM3, 3)):
        idx, _area = select_cell(sample, n)
        cell = grid_cells(sample.image_w, sample.image_h, n)[idx]
        crop = extend_to_include(cell, sample.bbox, sample.image_w, sample.image_h)
        crops.append(TierCrop(level, crop))
    return crops


def auto_filter(sample: AnnotatedSample) -> FilterVerdict:
    """Automatic screening verdict for one annotated sample.

    Rejects when the bbox covers strictly more than 20% of the image (exact
    integer arithmetic, so a ratio of exactly 0.20 is kept); otherwise flags
    captions strictly shorter than 8 whitespace-separated words for manual
    extension.  Rejection takes precedence over flagging.
    """
    sample.validate()
    image_area = sample.image_w * sample.image_h
    if 5 * sample.bbox.area > image_area:
        return FilterVerdict.REJECT_BBOX_TOO_LARGE
    if len(sample.caption.split()) < MIN_CAPTION_WORDS:
        return FilterVerdict.FLAG_SHORT_CAPTION
    return FilterVerdict.KEEP


@dataclass
class Histogram:
    edges: list[float]
    counts: list[int]

    def to_json_dict(self) -> dict:
        return {"edges": self.edges, "counts": self.counts}


@dataclass
class StatsReport:
    n: int
    caption_words_min: int
    caption_words_max: int
    caption_words_mean: float
    caption_len_hist: Histogram
    bbox_ratio_hist: Histogram
    mask_count_hist: Histogram | None

    def to_json_dict(self) -> dict:
        doc = {
            "n": self.n,
            "caption_words": {
                "min": self.caption_words_min,
                "max": self.caption_words_max,
                "mean": self.caption_words_mean,
            },
            "caption_len_hist": self.caption_len_hist.to_json_dict(),
            "bbox_ratio_hist": self.bbox_ratio_hist.to_json_dict(),
            "mask_count_hist": (
                self.mask_count_hist.to_json_dict() if self.mask_count_hist else None
            ),
        }
        return doc


def dataset_stats(
    samples: list[AnnotatedSample],
    caption_edges=DEFAULT_CAPTION_EDGES,
    ratio_edges=DEFAULT_RATIO_EDGES,
    mask_edges=DEFAULT_MASK_EDGES,
) -> StatsReport:
    """Caption-length, bbox-area-ratio and mask-count distributions.

    Word counts split on Unicode whitespace with no punctuation stripping,
    so the numbers are reproducible with standard tooling.
    """
    if not samples:
        raise EmptyDataset("dataset_stats needs at least one sample")
    for sample in samples:
        sample.validate()
    word_counts = [len(s.caption.split()) for s in samples]
    ratios = [s.bbox.area / (s.image_w * s.image_h) for s in samples]
    masks = [s.mask_count for s in samples if s.mask_count is not None]

    mask_hist = None
    if masks:
        mask_hist = _histogram(masks, mask_edges)
    return StatsReport(
        n=len(samples),
        caption_words_min=min(word_counts),
        caption_words_max=max(word_counts),
        caption_words_mean=sum(word_counts) / len(word_counts),
        caption_len_hist=_histogram(word_counts, caption_edges),
        bbox_ratio_hist=_histogram(ratios, ratio_edges),
        mask_count_hist=mask_hist,
    )


def load_annotations(path) -> list[AnnotatedSample]:
    """Read annotation JSON-Lines, validating each sample eagerly."""
    samples: list[AnnotatedSample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError:
                raise FormatError(f"line {lineno}: invalid JSON") from None
            try:
                sample = parse_annotation(obj)
            except (ValueError, TypeError, KeyError) as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
            samples.append(sample)
    return samples


def parse_annotation(obj: dict) -> AnnotatedSample:
    if not isinstance(obj, dict):
        raise ValueError("expected a JSON object")
    image_id = obj.get("image_id")
    if not isinstance(image_id, str) or not image_id:
        raise ValueError("missing string field 'image_id'")
    width = _as_int(obj.get("width"), "width")
    height = _as_int(obj.get("height"), "height")
    bbox = obj.get("bbox")
    if not isinstance(bbox, list) or len(bbox) != 4:
        raise ValueError("bbox must be [x, y, w, h]")
    rect = Rect(*(_as_int(v, f"bbox[{i}]") for i, v in enumerate(bbox)))
    caption = obj.get("caption")
    if not isinstance(caption, str):
        raise ValueError("missing string field 'caption'")
    mask_count = obj.get("mask_count")
    if mask_count is not None:
        mask_count = _as_int(mask_count, "mask_count")
    sample = AnnotatedSample(image_id, width, height, rect, caption, mask_count)
    sample.validate()
    return sample


def write_tier_crops(path, rows: list[tuple[str, TierCrop]]) -> None:
    """Tier output JSON-Lines: {"image_id", "level", "crop": [x, y, w, h]}."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, tier in rows:
            fh.write(
                json.dumps(
                    {
                        "image_id": image_id,
                        "level": tier.level.value,
                        "crop": [tier.crop.x, tier.crop.y, tier.crop.w, tier.crop.h],
                    }
                )
                + "\n"
            )


def write_histogram_csv(path, hist: Histogram) -> None:
    """Histogram CSV with one bin per row: bin_lo, bin_hi, count."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for i, count in enumerate(hist.counts):
            writer.writerow([hist.edges[i], hist.edges[i + 1], count])


def _histogram(values, edges) -> Histogram:
    edges = [float(e) for e in edges]
    if len(edges) < 2 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise ValueError("histogram edges must be strictly increasing")
    counts, _ = np.histogram(np.asarray(values, dtype=np.float64), bins=edges)
    return Histogram(edges=edges, counts=[int(c) for c in counts])


def _split_lengths(total: int, n: int) -> list[int]:
    base, rem = divmod(total, n)
    return [base + (1 if i >= n - rem else 0) for i in range(n)]


def _as_int(value, name: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name} must be an integer")
    return value
