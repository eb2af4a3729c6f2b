"""Symmetric contrastive training of a linear adapter over frozen embeddings.

The loss over a batch of B (image, text) pairs is the mean of two in-batch
cross-entropy terms on the cosine-similarity matrix at temperature tau:

    L = 1/2 * (ce(image -> text) + ce(text -> image))
    ce(a -> b) = mean_i of -log softmax_j(cos(a_i, b_j) / tau)[j = i]

Image embeddings pass through a trainable linear map followed by L2
normalization; text embeddings stay frozen.  Gradients are analytic and
checked against central finite differences in the test suite.

Training data travels as JSON-Lines, one sample per line:

    {"item_id": ..., "region_texts": {label: text},
     "image_embeddings": {label: vec}, "text_embeddings": {label: vec}}

with one entry per region label (left_upper, right_upper, left_lower,
right_lower).  Vectors are inline number arrays or base64-coded
little-endian f32; the loader accepts either per field.

Adapter checkpoints use a small binary format:

    magic b"SADP" | version u16 | d_in u32 | d_out u32 | tau f64
    | d_in * d_out f32 (row-major weight)
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .embedstore import _as_f64, _l2
from .errors import (
    ConfigInvalid,
    FormatError,
    IncompleteSample,
    TemperatureNonPositive,
    ZeroVector,
)

REGION_LABELS = ("left_upper", "right_upper", "left_lower", "right_lower")

CHECKPOINT_MAGIC = b"SADP"
CHECKPOINT_VERSION = 1
_CKPT_HEADER = struct.Struct("<4sHIId")


@dataclass
class AdapterParams:
    """Linear map (d_in x d_out, applied as x @ W) plus temperature."""

    weight: np.ndarray
    tau: float

    def validate(self) -> None:
        w = np.asarray(self.weight)
        if w.ndim != 2:
            raise ConfigInvalid(f"adapter weight must be 2-D, got shape {w.shape}")
        if not np.all(np.isfinite(w)):
            raise ConfigInvalid("adapter weight contains non-finite entries")
        _check_tau(self.tau)

    def apply(self, raw_vectors) -> np.ndarray:
        """Map raw image embeddings through the adapter (no normalization)."""
        raw = np.atleast_2d(np.asarray(raw_vectors, dtype=np.float64))
        return raw @ np.asarray(self.weight, dtype=np.float64)


@dataclass
class RegionalTrainSample:
    """One image with per-region texts plus image and text embeddings."""

    item_id: str
    image_embeddings: dict[str, np.ndarray]
    region_texts: dict[str, str]
    text_embeddings: dict[str, np.ndarray]

    def validate(self) -> None:
        for name, mapping in (
            ("image_embeddings", self.image_embeddings),
            ("region_texts", self.region_texts),
            ("text_embeddings", self.text_embeddings),
        ):
            for label in REGION_LABELS:
                if label not in mapping:
                    raise IncompleteSample(
                        f"sample {self.item_id!r}: {name} missing region {label!r}"
                    )
            extra = set(mapping) - set(REGION_LABELS)
            if extra:
                raise IncompleteSample(
                    f"sample {self.item_id!r}: {name} has unknown regions {sorted(extra)}"
                )
        for label, text in self.region_texts.items():
            if not isinstance(text, str):
                raise IncompleteSample(
                    f"sample {self.item_id!r}: region {label!r} text is not a string"
                )
        _check_family_dims(self.item_id, "image", self.image_embeddings)
        _check_family_dims(self.item_id, "text", self.text_embeddings)


@dataclass
class TrainBatch:
    """One (image, text) pair per item, with the region each pair came from."""

    item_ids: list[str]
    image_vectors: np.ndarray
    text_vectors: np.ndarray
    regions: list[str]

    @property
    def size(self) -> int:
        return len(self.item_ids)

    def validate(self) -> None:
        b = self.size
        if b < 1:
            raise ValueError("batch is empty")
        if self.image_vectors.shape[0] != b or self.text_vectors.shape[0] != b:
            raise ValueError("batch arrays do not match the item count")
        if len(self.regions) != b:
            raise ValueError("batch regions do not match the item count")


@dataclass
class TrainConfig:
    lr: float
    epochs: int
    batch_size: int
    tau: float = 0.05
    seed: int = 0
    momentum: float = 0.0
    region_choice: str = "random"

    def validate(self) -> None:
        if not np.isfinite(self.lr) or self.lr < 0:
            raise ConfigInvalid(f"lr must be >= 0, got {self.lr}")
        if self.epochs < 1:
            raise ConfigInvalid(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigInvalid(f"batch_size must be >= 2, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigInvalid(f"momentum must be in [0, 1), got {self.momentum}")
        if self.region_choice != "random" and self.region_choice not in REGION_LABELS:
            raise ConfigInvalid(
                f"region_choice must be 'random' or one of {REGION_LABELS}, "
                f"got {self.region_choice!r}"
            )
        _check_tau(self.tau)


def random_regional_choice(
    samples: list[RegionalTrainSample],
    rng,
    region: str | None = None,
) -> TrainBatch:
    """Build a batch with one (image, text) pair per distinct item.

    The region is drawn uniformly from the four labels unless ``region``
    pins it (the fixed-region training flag).  ``rng`` is a seed or a numpy
    Generator; the draw is deterministic given the seed.  Repeated item ids
    keep their first occurrence so no item appears twice in a batch.
    """
    if region is not None and region not in REGION_LABELS:
        raise ConfigInvalid(f"unknown region {region!r}")
    gen = np.random.default_rng(rng)
    chosen: list[RegionalTrainSample] = []
    seen: set[str] = set()
    for sample in samples:
        sample.validate()
        if sample.item_id in seen:
            continue
        seen.add(sample.item_id)
        chosen.append(sample)
    if not chosen:
        raise ValueError("no samples to batch")
    ids: list[str] = []
    regions: list[str] = []
    f_rows: list[np.ndarray] = []
    t_rows: list[np.ndarray] = []
    for sample in chosen:
        label = region
        if label is None:
            label = REGION_LABELS[int(gen.integers(0, len(REGION_LABELS)))]
        ids.append(sample.item_id)
        regions.append(label)
        f_rows.append(_as_f64(sample.image_embeddings[label]))
        t_rows.append(_as_f64(sample.text_embeddings[label]))
    batch = TrainBatch(
        item_ids=ids,
        image_vectors=np.vstack(f_rows),
        text_vectors=np.vstack(t_rows),
        regions=regions,
    )
    batch.validate()
    return batch


def _rows_and_norms(vectors, side: str) -> tuple[np.ndarray, np.ndarray]:
    rows = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    if rows.ndim != 2:
        raise ValueError(f"{side} vectors must form a 2-D batch")
    norms = np.empty(rows.shape[0], dtype=np.float64)
    for i in range(rows.shape[0]):
        norms[i] = _l2(rows[i])
        if norms[i] <= 1e-12:
            raise ZeroVector(f"{side} vector {i} is near-zero")
    return rows, norms


def _logit_matrix(
    image_rows: np.ndarray,
    image_norms: np.ndarray,
    text_rows: np.ndarray,
    text_norms: np.ndarray,
    tau: float,
) -> np.ndarray:
    """S[i, j] = cos(image_i, text_j) / tau, accumulated exactly like cosine()."""
    b = image_rows.shape[0]
    s = np.empty((b, b), dtype=np.float64)
    for i in range(b):
        for j in range(b):
            s[i, j] = (
                float(np.dot(image_rows[i], text_rows[j]))
                / (image_norms[i] * text_norms[j])
                / tau
            )
    return s


def _symmetric_ce(s: np.ndarray) -> float:
    """Mean of the two cross-entropy terms, log-sum-exp with max shift."""
    diag = np.diagonal(s)
    row_max = s.max(axis=1)
    row_lse = np.log(np.exp(s - row_max[:, None]).sum(axis=1)) + row_max
    col_max = s.max(axis=0)
    col_lse = np.log(np.exp(s - col_max[None, :]).sum(axis=0)) + col_max
    l_img = float(np.mean(row_lse - diag))
    l_txt = float(np.mean(col_lse - diag))
    return 0.5 * (l_img + l_txt)


def infonce_loss(image_vectors, text_vectors, tau: float) -> float:
    """Symmetric in-batch contrastive loss over cosine similarities.

    B = 1 is the degenerate single-term case and yields 0 for an aligned
    pair; the loss is symmetric in its two arguments exactly.
    """
    _check_tau(tau)
    f_rows, f_norms = _rows_and_norms(image_vectors, "image")
    t_rows, t_norms = _rows_and_norms(text_vectors, "text")
    if f_rows.shape[0] != t_rows.shape[0]:
        raise ValueError(
            f"batch sizes differ: {f_rows.shape[0]} images vs {t_rows.shape[0]} texts"
        )
    if f_rows.shape[1] != t_rows.shape[1]:
        raise ValueError(
            f"image dim {f_rows.shape[1]} != text dim {t_rows.shape[1]}"
        )
    s = _logit_matrix(f_rows, f_norms, t_rows, t_norms, tau)
    return _symmetric_ce(s)


def loss_gradient(
    raw_image_vectors,
    text_vectors,
    params: AdapterParams,
) -> tuple[np.ndarray, float]:
    """Analytic d(loss)/d(weight) for adapted images against frozen texts.

    The forward pass is infonce_loss(raw @ W, texts, tau); the returned
    gradient differentiates that exact function, including the L2
    normalization hidden inside the cosine.
    """
    params.validate()
    w = np.asarray(params.weight, dtype=np.float64)
    raw = np.atleast_2d(np.asarray(raw_image_vectors, dtype=np.float64))
    if raw.shape[1] != w.shape[0]:
        raise ValueError(f"raw dim {raw.shape[1]} != adapter d_in {w.shape[0]}")
    x = raw @ w
    x_rows, x_norms = _rows_and_norms(x, "adapted image")
    t_rows, t_norms = _rows_and_norms(text_vectors, "text")
    b = x_rows.shape[0]
    if t_rows.shape[0] != b:
        raise ValueError(f"batch sizes differ: {b} images vs {t_rows.shape[0]} texts")
    if x_rows.shape[1] != t_rows.shape[1]:
        raise ValueError(f"adapter d_out {x_rows.shape[1]} != text dim {t_rows.shape[1]}")

    s = _logit_matrix(x_rows, x_norms, t_rows, t_norms, params.tau)
    loss = _symmetric_ce(s)

    # dL/dS = (P + Q - 2I) / 2B with P row softmax, Q column softmax
    p = np.exp(s - s.max(axis=1)[:, None])
    p /= p.sum(axis=1)[:, None]
    q = np.exp(s - s.max(axis=0)[None, :])
    q /= q.sum(axis=0)[None, :]
    g = (p + q) / (2.0 * b)
    g[np.diag_indices(b)] -= 1.0 / b

    # backprop through cos(x_i, t_j) = (x_i . t_hat_j) / ||x_i||
    cosines = s * params.tau
    x_hat = x_rows / x_norms[:, None]
    t_hat = t_rows / t_norms[:, None]
    coeff = np.sum(g * cosines, axis=1)
    dx = (g @ t_hat - coeff[:, None] * x_hat) / (params.tau * x_norms[:, None])
    grad = raw.T @ dx
    return grad, loss


def train_adapter(
    dataset: list[RegionalTrainSample],
    config: TrainConfig,
) -> tuple[AdapterParams, list[float]]:
    """Mini-batch gradient descent on the symmetric contrastive loss.

    Each epoch re-seeds its sampling stream from ``config.seed``, so the
    batch composition and region choices repeat across epochs; with lr = 0
    the loss curve is exactly constant, and any run is bit-reproducible.
    """
    config.validate()
    if len(dataset) < 2:
        raise ConfigInvalid("training needs at least 2 samples")
    for sample in dataset:
        sample.validate()
    d_in = len(_as_f64(dataset[0].image_embeddings[REGION_LABELS[0]]))
    d_out = len(_as_f64(dataset[0].text_embeddings[REGION_LABELS[0]]))
    for sample in dataset:
        if len(_as_f64(sample.image_embeddings[REGION_LABELS[0]])) != d_in:
            raise ConfigInvalid(f"sample {sample.item_id!r} image dim != {d_in}")
        if len(_as_f64(sample.text_embeddings[REGION_LABELS[0]])) != d_out:
            raise ConfigInvalid(f"sample {sample.item_id!r} text dim != {d_out}")

    region = None if config.region_choice == "random" else config.region_choice
    weight = np.eye(d_in, d_out, dtype=np.float64)
    velocity = np.zeros_like(weight)
    curve: list[float] = []
    for _epoch in range(config.epochs):
        rng = np.random.default_rng(config.seed)
        perm = rng.permutation(len(dataset))
        losses: list[float] = []
        for start in range(0, len(perm), config.batch_size):
            chunk = perm[start : start + config.batch_size]
            if len(chunk) < 2:
                continue  # a singleton remainder has no in-batch negatives
            samples = [dataset[i] for i in chunk]
            batch = random_regional_choice(samples, rng, region=region)
            grad, loss = loss_gradient(
                batch.image_vectors,
                batch.text_vectors,
                AdapterParams(weight=weight, tau=config.tau),
            )
            if config.momentum > 0.0:
                velocity = config.momentum * velocity + grad
                weight = weight - config.lr * velocity
            else:
                weight = weight - config.lr * grad
            losses.append(loss)
        curve.append(sum(losses) / len(losses))
    return AdapterParams(weight=weight, tau=config.tau), curve


def save_checkpoint(params: AdapterParams, path) -> None:
    """Write adapter parameters in the SADP binary format."""
    params.validate()
    w = np.asarray(params.weight, dtype=np.float64)
    buf = bytearray()
    buf += _CKPT_HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, w.shape[0], w.shape[1], float(params.tau)
    )
    buf += np.ascontiguousarray(w, dtype="<f4").tobytes()
    Path(path).write_bytes(bytes(buf))


def load_checkpoint(path) -> AdapterParams:
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEADER.size:
        raise FormatError("truncated checkpoint header", offset=len(data))
    magic, version, d_in, d_out, tau = _CKPT_HEADER.unpack(data[: _CKPT_HEADER.size])
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad magic {magic!r}", offset=0)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)
    expected = _CKPT_HEADER.size + 4 * d_in * d_out
    if len(data) != expected:
        raise FormatError(
            f"checkpoint is {len(data)} bytes, expected {expected}", offset=len(data)
        )
    w = (
        np.frombuffer(data, dtype="<f4", count=d_in * d_out, offset=_CKPT_HEADER.size)
        .astype(np.float64)
        .reshape(d_in, d_out)
    )
    params = AdapterParams(weight=w, tau=float(tau))
    params.validate()
    return params


def load_train_samples(path) -> list[RegionalTrainSample]:
    """Read a JSON-Lines training set, validating every sample."""
    samples: list[RegionalTrainSample] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except ValueError:
                raise FormatError(f"line {lineno}: invalid JSON") from None
            if not isinstance(obj, dict) or not isinstance(obj.get("item_id"), str):
                raise FormatError(f"line {lineno}: missing string field 'item_id'")
            try:
                sample = RegionalTrainSample(
                    item_id=obj["item_id"],
                    image_embeddings=_decode_vec_map(obj.get("image_embeddings")),
                    region_texts=dict(obj.get("region_texts") or {}),
                    text_embeddings=_decode_vec_map(obj.get("text_embeddings")),
                )
                sample.validate()
            except (IncompleteSample, ValueError) as exc:
                raise FormatError(f"line {lineno}: {exc}") from None
            samples.append(sample)
    return samples


def save_train_samples(path, samples: list[RegionalTrainSample], encoding: str = "inline") -> None:
    """Write training samples as JSON-Lines; vectors inline or base64 f32."""
    if encoding not in ("inline", "base64"):
        raise ValueError(f"encoding must be 'inline' or 'base64', got {encoding!r}")
    with open(path, "w", encoding="utf-8") as fh:
        for sample in samples:
            sample.validate()
            obj = {
                "item_id": sample.item_id,
                "region_texts": {lb: sample.region_texts[lb] for lb in REGION_LABELS},
                "image_embeddings": {
                    lb: _encode_vec(sample.image_embeddings[lb], encoding)
                    for lb in REGION_LABELS
                },
                "text_embeddings": {
                    lb: _encode_vec(sample.text_embeddings[lb], encoding)
                    for lb in REGION_LABELS
                },
            }
            fh.write(json.dumps(obj) + "\n")


def _encode_vec(vec, encoding: str):
    if encoding == "base64":
        return base64.b64encode(np.asarray(vec, dtype="<f4").tobytes()).decode("ascii")
    return [float(x) for x in np.asarray(vec, dtype=np.float64)]


def _decode_vec_map(mapping) -> dict[str, np.ndarray]:
    if not isinstance(mapping, dict):
        raise ValueError("embeddings must be an object keyed by region label")
    out: dict[str, np.ndarray] = {}
    for label, value in mapping.items():
        if isinstance(value, str):
            try:
                raw = base64.b64decode(value, validate=True)
            except (ValueError, TypeError):
                raise ValueError(f"region {label!r}: invalid base64 vector") from None
            if len(raw) % 4 != 0 or not raw:
                raise ValueError(f"region {label!r}: base64 payload is not f32-aligned")
            vec = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        elif isinstance(value, list) and value:
            vec = np.asarray(value, dtype=np.float64)
        else:
            raise ValueError(f"region {label!r}: vector must be an array or base64 string")
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"region {label!r}: non-finite vector entry")
        out[label] = vec
    return out


def _check_family_dims(item_id: str, side: str, mapping: dict[str, np.ndarray]) -> None:
    dims = {len(np.asarray(v)) for v in mapping.values()}
    if len(dims) > 1:
        raise IncompleteSample(
            f"sample {item_id!r}: {side} embeddings have mixed dims {sorted(dims)}"
        )


def _check_tau(tau: float) -> None:
    if not np.isfinite(tau) or tau <= 0.0:
        raise TemperatureNonPositive(f"temperature must be > 0, got {tau}")
