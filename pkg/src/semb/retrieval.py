"""Max-over-embeddings cosine scoring, exact top-k search, and recall reports.

An item's score for a query is the maximum cosine similarity between the
query embedding and any of the item's embeddings.  Search is exact (no
index structures); galleries at the intended scale hold ~1K items.

Determinism contract: equal inputs produce byte-identical reports whatever
the parallelism degree.  Score ties between items are broken by ascending
item id, ties between an item's own embeddings by position (first wins).
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .embedstore import (
    GalleryIndex,
    ItemEmbeddingSet,
    QueryRecord,
    SourceTag,
    _as_f64,
    _l2,
)
from .errors import (
    DimensionMismatch,
    EmptyGallery,
    MissingTruth,
    NoCaptions,
    ZeroVector,
)

DEFAULT_KS = (1, 5, 10)

# canonical report order for the difficulty tiers produced by the bench
# builder; unknown tier names follow, sorted
TIER_ORDER = ("full_res", "zoom2", "zoom3")


@dataclass
class RetrievalResult:
    """Ranked gallery items for one query, scores non-increasing."""

    query_id: str
    ranked: list[tuple[str, float]]


@dataclass
class EvalEntry:
    """Recall@k values for one group of queries."""

    r_at: dict[int, float]
    n: int


@dataclass
class EvalReport:
    """Per-tier recall table."""

    tiers: dict[str, EvalEntry]

    def to_json_dict(self) -> dict:
        return {
            "tiers": {
                name: {
                    "r_at": {str(k): v for k, v in entry.r_at.items()},
                    "n": entry.n,
                }
                for name, entry in self.tiers.items()
            }
        }

    def to_table(self) -> str:
        """Aligned text table, recall rendered as percentages."""
        ks = None
        for entry in self.tiers.values():
            ks = sorted(entry.r_at)
            break
        if ks is None:
            return "(no queries)"
        header = ["tier", "n"] + [f"R@{k}" for k in ks]
        rows = [header]
        for name, entry in self.tiers.items():
            rows.append(
                [name, str(entry.n)] + [f"{100.0 * entry.r_at[k]:.1f}" for k in ks]
            )
        widths = [max(len(r[c]) for r in rows) for c in range(len(header))]
        lines = []
        for r in rows:
            cells = [r[0].ljust(widths[0])] + [
                r[c].rjust(widths[c]) for c in range(1, len(header))
            ]
            lines.append("  ".join(cells))
        return "\n".join(lines)


def cosine(a, b) -> float:
    """Cosine similarity of two vectors, computed in 64-bit."""
    va = _as_f64(a)
    vb = _as_f64(b)
    if va.shape[0] != vb.shape[0]:
        raise DimensionMismatch(f"cosine of dims {va.shape[0]} and {vb.shape[0]}")
    na = _l2(va)
    nb = _l2(vb)
    if na <= 1e-12 or nb <= 1e-12:
        raise ZeroVector("cosine undefined for near-zero vectors")
    return float(np.dot(va, vb) / (na * nb))


def score_item(query_vec, item: ItemEmbeddingSet) -> tuple[float, SourceTag]:
    """Best cosine across the item's embeddings and the tag that achieved it.

    Exact ties keep the earliest embedding in the item's storage order.
    """
    if not item.embeddings:
        raise ValueError(f"item {item.item_id!r} has no embeddings")
    best: float | None = None
    best_tag: SourceTag | None = None
    for tag, vec in item.embeddings:
        s = cosine(query_vec, vec)
        if best is None or s > best:
            best, best_tag = s, tag
    return best, best_tag


def _gallery_arrays(gallery: GalleryIndex):
    """Stacked 64-bit rows, per-row norms, item group starts, item ids.

    Cached on the gallery object; a loaded gallery is immutable so the
    cache is safe to share between threads.
    """
    cache = gallery.__dict__.get("_search_cache")
    if cache is not None:
        return cache
    rows: list[np.ndarray] = []
    starts: list[int] = []
    ids: list[str] = []
    for item in gallery.items:
        if not item.embeddings:
            raise ValueError(f"item {item.item_id!r} has no embeddings")
        starts.append(len(rows))
        ids.append(item.item_id)
        for _tag, vec in item.embeddings:
            rows.append(np.ascontiguousarray(vec, dtype=np.float64))
    norms = np.empty(len(rows), dtype=np.float64)
    for i, row in enumerate(rows):
        norms[i] = _l2(row)
    if np.any(norms <= 1e-12):
        bad = int(np.argmax(norms <= 1e-12))
        raise ZeroVector(f"gallery contains a near-zero embedding (row {bad})")
    cache = (rows, norms, np.asarray(starts, dtype=np.intp), ids)
    gallery.__dict__["_search_cache"] = cache
    return cache


def search(query: QueryRecord, gallery: GalleryIndex, k: int) -> RetrievalResult:
    """Top-min(k, n_items) gallery items for one query, scores descending."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if not gallery.items:
        raise EmptyGallery("cannot search an empty gallery")
    q = _as_f64(query.embedding)
    if q.shape[0] != gallery.dim:
        raise DimensionMismatch(
            f"query {query.query_id!r} has dim {q.shape[0]}, gallery dim {gallery.dim}"
        )
    qn = _l2(q)
    if qn <= 1e-12:
        raise ZeroVector(f"query {query.query_id!r} embedding is near-zero")

    rows, norms, starts, ids = _gallery_arrays(gallery)
    # per-row dot products accumulate exactly like cosine() so scores agree
    # bit-for-bit with the scalar path regardless of BLAS threading
    dots = np.empty(len(rows), dtype=np.float64)
    for i, row in enumerate(rows):
        dots[i] = np.dot(row, q)
    scores = dots / (norms * qn)
    item_best = np.maximum.reduceat(scores, starts)

    order = sorted(range(len(ids)), key=lambda i: (-item_best[i], ids[i]))
    top = order[: min(k, len(ids))]
    return RetrievalResult(query.query_id, [(ids[i], float(item_best[i])) for i in top])


def recall_at_k(
    results: list[RetrievalResult],
    truths: dict[str, str],
    ks=DEFAULT_KS,
) -> EvalEntry:
    """Fraction of queries whose truth item ranks within the top k."""
    ks = _check_ks(ks)
    if not results:
        raise ValueError("no results to evaluate")
    hits = {k: 0 for k in ks}
    for res in results:
        if res.query_id not in truths:
            raise MissingTruth(f"no ground truth for query {res.query_id!r}")
        truth = truths[res.query_id]
        rank = None
        for pos, (item_id, _score) in enumerate(res.ranked, 1):
            if item_id == truth:
                rank = pos
                break
        for k in ks:
            if rank is not None and rank <= k:
                hits[k] += 1
    n = len(results)
    return EvalEntry(r_at={k: hits[k] / n for k in ks}, n=n)


def evaluate(
    gallery: GalleryIndex,
    queries: list[QueryRecord],
    ks=DEFAULT_KS,
    threads: int = 1,
) -> EvalReport:
    """Search every query and assemble a per-tier recall report.

    Queries without a tier land in the "all" group.  Searches may run on a
    thread pool; results are merged back in input order, so the report is
    byte-identical for any thread count.
    """
    ks = _check_ks(ks)
    if not queries:
        raise ValueError("no queries to evaluate")
    known = set(gallery.item_ids())
    for q in queries:
        if len(np.asarray(q.embedding)) != gallery.dim:
            raise DimensionMismatch(
                f"query {q.query_id!r} has dim {len(np.asarray(q.embedding))}, "
                f"gallery dim {gallery.dim}"
            )
        if q.target_item_id not in known:
            raise MissingTruth(
                f"query {q.query_id!r} targets unknown item {q.target_item_id!r}"
            )
    _gallery_arrays(gallery)  # build the cache once before fanning out
    kmax = max(ks)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda q: search(q, gallery, kmax), queries))
    else:
        results = [search(q, gallery, kmax) for q in queries]

    groups: dict[str, list[int]] = {}
    for i, q in enumerate(queries):
        groups.setdefault(q.tier or "all", []).append(i)

    tiers: dict[str, EvalEntry] = {}
    for name in _tier_sort(groups):
        idxs = groups[name]
        truths = {queries[i].query_id: queries[i].target_item_id for i in idxs}
        tiers[name] = recall_at_k([results[i] for i in idxs], truths, ks)
    return EvalReport(tiers=tiers)


def text_retrieval_eval(
    image_queries: list[ItemEmbeddingSet],
    caption_gallery: list[QueryRecord],
    ks=DEFAULT_KS,
) -> EvalEntry:
    """Image-to-text recall where an image may own several captions.

    The image-side query embedding is its global-tagged vector (first
    embedding as fallback); an image scores a hit at k iff any of its owned
    captions ranks within the top k.
    """
    ks = _check_ks(ks)
    if not caption_gallery:
        raise NoCaptions("caption gallery is empty")
    if not image_queries:
        raise ValueError("no image queries")
    owners: dict[str, set[str]] = {}
    for cap in caption_gallery:
        owners.setdefault(cap.target_item_id, set()).add(cap.query_id)

    cap_ids = [cap.query_id for cap in caption_gallery]
    cap_vecs = [_as_f64(cap.embedding) for cap in caption_gallery]
    cap_norms = [_l2(v) for v in cap_vecs]
    if any(n <= 1e-12 for n in cap_norms):
        raise ZeroVector("caption gallery contains a near-zero embedding")

    hits = {k: 0 for k in ks}
    for item in image_queries:
        owned = owners.get(item.item_id)
        if not owned:
            raise NoCaptions(f"image {item.item_id!r} owns no captions")
        vec = item.global_vector()
        if vec is None:
            if not item.embeddings:
                raise ValueError(f"image {item.item_id!r} has no embeddings")
            vec = item.embeddings[0][1]
        q = _as_f64(vec)
        qn = _l2(q)
        if qn <= 1e-12:
            raise ZeroVector(f"image {item.item_id!r} embedding is near-zero")
        scored = [
            (float(np.dot(cap_vecs[j], q) / (cap_norms[j] * qn)), cap_ids[j])
            for j in range(len(cap_ids))
        ]
        order = sorted(range(len(scored)), key=lambda j: (-scored[j][0], scored[j][1]))
        best_rank = None
        for pos, j in enumerate(order, 1):
            if cap_ids[j] in owned:
                best_rank = pos
                break
        for k in ks:
            if best_rank is not None and best_rank <= k:
                hits[k] += 1
    n = len(image_queries)
    return EvalEntry(r_at={k: hits[k] / n for k in ks}, n=n)


def report_json(report: EvalReport, timestamp: str | None = None) -> str:
    """Serialize a report; the optional timestamp is the only varying field."""
    doc = report.to_json_dict()
    if timestamp is not None:
        doc["generated_at"] = timestamp
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _check_ks(ks) -> list[int]:
    out = [int(k) for k in ks]
    if not out:
        raise ValueError("ks must be non-empty")
    if any(k < 1 for k in out):
        raise ValueError(f"every k must be >= 1, got {out}")
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate k values: {out}")
    return out


def _tier_sort(groups: dict[str, list[int]]) -> list[str]:
    known = [t for t in TIER_ORDER if t in groups]
    rest = sorted(t for t in groups if t not in TIER_ORDER)
    return known + rest
