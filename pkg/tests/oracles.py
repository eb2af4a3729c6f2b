"""Independent reference implementations the tests check against.

Everything here is deliberately written the slow, obvious way (explicit
Python loops, extended-precision arithmetic) and stays independent of the
library's optimized code paths.
"""

from __future__ import annotations

import mpmath
import numpy as np

from semb.benchbuilder import AnnotatedSample
from semb.embedstore import GalleryIndex
from semb.retrieval import cosine


def brute_force_search(query_vec, gallery: GalleryIndex, k: int):
    """O(n_items * K * dim) double-loop scorer with an independent sort."""
    scored = []
    for item in gallery.items:
        best = None
        for _tag, vec in item.embeddings:
            s = cosine(query_vec, vec)
            if best is None or s > best:
                best = s
        scored.append((item.item_id, best))
    # sort by id first, then stable-sort by descending score: equal scores
    # stay in ascending id order
    scored.sort(key=lambda pair: pair[0])
    scored.sort(key=lambda pair: -pair[1])
    return scored[: min(k, len(scored))]


def single_vector_search(query_vec, pairs, k: int):
    """Classical one-embedding-per-item retriever (id, vector) -> ranking."""
    scored = [(item_id, cosine(query_vec, vec)) for item_id, vec in pairs]
    scored.sort(key=lambda pair: pair[0])
    scored.sort(key=lambda pair: -pair[1])
    return scored[: min(k, len(scored))]


def recall_by_hand(rankings: dict[str, list[str]], truths: dict[str, str], ks):
    """rankings: query_id -> ordered item ids."""
    out = {}
    for k in ks:
        hits = 0
        for qid, ranked in rankings.items():
            if truths[qid] in ranked[:k]:
                hits += 1
        out[k] = hits / len(rankings)
    return out


def anyof_text_retrieval(image_items, caption_records, ks):
    """Any-owned-caption-in-top-k recall, computed the long way."""
    hits = {k: 0 for k in ks}
    for item in image_items:
        vec = None
        for tag, v in item.embeddings:
            if tag.kind.name == "GLOBAL":
                vec = v
                break
        if vec is None:
            vec = item.embeddings[0][1]
        scored = [(cosine(vec, c.embedding), c.query_id, c.target_item_id) for c in caption_records]
        scored.sort(key=lambda t: t[1])
        scored.sort(key=lambda t: -t[0])
        for k in ks:
            if any(owner == item.item_id for _s, _cid, owner in scored[:k]):
                hits[k] += 1
    return {k: hits[k] / len(image_items) for k in ks}


def infonce_reference(image_vectors, text_vectors, tau: float) -> float:
    """Contrastive loss evaluated naively (no max shift) at 50 digits."""
    with mpmath.workdps(50):
        f_rows = [[mpmath.mpf(float(x)) for x in row] for row in np.atleast_2d(image_vectors)]
        t_rows = [[mpmath.mpf(float(x)) for x in row] for row in np.atleast_2d(text_vectors)]
        b = len(f_rows)

        def cos_mp(a, c):
            dot = mpmath.fsum(x * y for x, y in zip(a, c))
            na = mpmath.sqrt(mpmath.fsum(x * x for x in a))
            nc = mpmath.sqrt(mpmath.fsum(x * x for x in c))
            return dot / (na * nc)

        s = [[cos_mp(f_rows[i], t_rows[j]) / tau for j in range(b)] for i in range(b)]
        loss_i2t = mpmath.fsum(
            mpmath.log(mpmath.fsum(mpmath.exp(s[i][j]) for j in range(b))) - s[i][i]
            for i in range(b)
        ) / b
        loss_t2i = mpmath.fsum(
            mpmath.log(mpmath.fsum(mpmath.exp(s[i][j]) for i in range(b))) - s[j][j]
            for j in range(b)
        ) / b
        return float((loss_i2t + loss_t2i) / 2)


def finite_difference_grad(loss_fn, weight: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences over every weight entry."""
    grad = np.zeros_like(weight, dtype=np.float64)
    for i in range(weight.shape[0]):
        for j in range(weight.shape[1]):
            plus = weight.copy()
            plus[i, j] += h
            minus = weight.copy()
            minus[i, j] -= h
            grad[i, j] = (loss_fn(plus) - loss_fn(minus)) / (2.0 * h)
    return grad


def matmul_infonce(raw, texts, weight, tau) -> float:
    """Vectorized forward pass used as the cheap loss for FD probing.

    Implemented with matrix products rather than the library's pairwise
    loop, so the finite-difference oracle exercises an independent route.
    """
    x = np.atleast_2d(raw) @ weight
    t = np.atleast_2d(texts)
    xn = np.sqrt((x * x).sum(axis=1))
    tn = np.sqrt((t * t).sum(axis=1))
    s = (x @ t.T) / xn[:, None] / tn[None, :] / tau
    row = np.log(np.exp(s - s.max(axis=1)[:, None]).sum(axis=1)) + s.max(axis=1)
    col = np.log(np.exp(s - s.max(axis=0)[None, :]).sum(axis=0)) + s.max(axis=0)
    diag = np.diagonal(s)
    return 0.5 * (float(np.mean(row - diag)) + float(np.mean(col - diag)))


def oracle_cells(image_w: int, image_h: int, n: int) -> list[tuple[int, int, int, int]]:
    """Row-major (x, y, w, h) grid cells, derived from cut positions.

    Cuts are laid out right-to-left: the last (total mod n) cells are one
    pixel larger.
    """

    def cuts(total: int) -> list[int]:
        base, rem = divmod(total, n)
        positions = [total]
        size_from_right = [base + 1] * rem + [base] * (n - rem)
        for size in size_from_right:
            positions.append(positions[-1] - size)
        return positions[::-1]

    xs, ys = cuts(image_w), cuts(image_h)
    return [
        (xs[c], ys[r], xs[c + 1] - xs[c], ys[r + 1] - ys[r])
        for r in range(n)
        for c in range(n)
    ]


def best_cell_by_enumeration(sample: AnnotatedSample, n: int) -> tuple[int, int]:
    """Exhaustive per-cell intersection maximum with first-index ties."""
    best_idx, best_area = 0, -1
    bbox = (sample.bbox.x, sample.bbox.y, sample.bbox.w, sample.bbox.h)
    for idx, cell in enumerate(oracle_cells(sample.image_w, sample.image_h, n)):
        area = _intersection(cell, bbox)
        if area > best_area:
            best_idx, best_area = idx, area
    return best_idx, best_area


def _intersection(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> int:
    w = min(a[0] + a[2], b[0] + b[2]) - max(a[0], b[0])
    h = min(a[1] + a[3], b[1] + b[3]) - max(a[1], b[1])
    return max(w, 0) * max(h, 0)
