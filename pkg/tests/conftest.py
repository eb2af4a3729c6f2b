from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from semb.embedstore import (
    GalleryIndex,
    ItemEmbeddingSet,
    QueryRecord,
    SourceKind,
    SourceTag,
    build_gallery,
)
from semb.trainer import REGION_LABELS, RegionalTrainSample

FIXTURES = Path(__file__).parent / "fixtures"


def random_gallery(
    rng: np.random.Generator,
    n_items: int,
    k: int,
    dim: int,
    dtype=np.float32,
    prefix: str = "item",
) -> GalleryIndex:
    items = []
    for i in range(n_items):
        embs = []
        for j in range(k):
            kind = SourceKind.REGIONAL_PROMPT if j < k - 1 else SourceKind.GLOBAL
            label = f"r{j}" if j < k - 1 else "summary"
            vec = rng.normal(size=dim).astype(dtype)
            embs.append((SourceTag(kind, label), vec))
        items.append(ItemEmbeddingSet(f"{prefix}_{i:05d}", embs))
    return build_gallery(items, dim=dim)


def random_query(rng: np.random.Generator, dim: int, qid: str = "q0", target: str = "") -> QueryRecord:
    return QueryRecord(qid, f"query {qid}", target, rng.normal(size=dim))


def planted_samples(
    rng: np.random.Generator,
    n: int,
    dim: int,
    rotation: np.ndarray,
    prefix: str = "item",
) -> list[RegionalTrainSample]:
    """Samples whose text embeddings are a fixed rotation of the raw image side."""
    samples = []
    for i in range(n):
        image, texts, text_emb = {}, {}, {}
        for label in REGION_LABELS:
            raw = rng.normal(size=dim)
            image[label] = raw
            text_emb[label] = rotation @ raw
            texts[label] = f"{label} of {prefix} {i}"
        samples.append(RegionalTrainSample(f"{prefix}_{i:04d}", image, texts, text_emb))
    return samples


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
