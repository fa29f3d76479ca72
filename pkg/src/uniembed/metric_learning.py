"""Sub-center additive-angular-margin head, LR schedules, and a toy trainer.

The head owns c_sub weight rows per class; a class's cosine to an
embedding is the max over its sub-centers, computed on L2-normalized
rows on both sides. The target-class logit gets an additive angular
margin with the usual numerical fallback once theta + m would pass pi:

    logit_y = s * cos(theta_y + m_y)        if cos(theta_y) > cos(pi - m_y)
              s * (cos(theta_y) - m_y*sin(m_y))   otherwise

Per-class margins interpolate between configurable bounds by inverse
class frequency (rarer class, larger margin) through a normalized
power law; with equal counts every class sits at the midpoint.

The toy trainer exists to exercise the full fine-tuning recipe at desk
scale: a single linear embedder (standing in for the MLP head on a
frozen backbone) feeding the margin head, multi-sample dropout,
warmup + cosine learning-rate envelope, a slow "backbone-like" rate for
the embedder versus a fast head rate, plain SGD, one epoch by default.
Class centroids and the initial weights are derived from fixed
constants, not the config seed, so runs with different seeds behave
like fine-tuning runs of one shared pretrained model: their checkpoints
stay compatible for weight averaging. The seed drives sampling noise,
batch order, and dropout masks only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, TextIO

import numpy as np

from .errors import EngineError
from .soup import Checkpoint, TensorEntry
from .store import EmbeddingSet

EMBED_TENSOR = "embed.weight"
HEAD_TENSOR = "head.weights"

_CENTROID_SEED = 0x5EED0
_INIT_SEED = 0x1417
_COS_CLAMP = 1e-7


@dataclass(frozen=True)
class ArcFaceHead:
    """(C*c_sub) x d weight matrix, logit scale, and per-class margins."""

    weights: np.ndarray
    scale: float
    margins: np.ndarray
    c_sub: int

    def __post_init__(self) -> None:
        weights = np.array(self.weights, dtype=np.float64)
        margins = np.array(self.margins, dtype=np.float64).reshape(-1)
        if self.c_sub < 1:
            raise EngineError(f"c_sub must be >= 1, got {self.c_sub}")
        if self.scale <= 0:
            raise EngineError(f"scale must be positive, got {self.scale}")
        if weights.ndim != 2 or weights.shape[0] % self.c_sub != 0:
            raise EngineError(
                f"weights shape {weights.shape} is not (C*{self.c_sub}) x d"
            )
        if margins.shape[0] != weights.shape[0] // self.c_sub:
            raise EngineError(
                f"{margins.shape[0]} margins for {weights.shape[0] // self.c_sub} classes"
            )
        if np.any(margins < 0) or np.any(margins >= math.pi / 2):
            raise EngineError("margins must lie in [0, pi/2)")
        weights.flags.writeable = False
        margins.flags.writeable = False
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "margins", margins)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0] // self.c_sub

    @property
    def dim(self) -> int:
        return self.weights.shape[1]


@dataclass(frozen=True)
class LrSchedule:
    """Warmup + cosine envelope plus per-layer and head base rates."""

    warmup_steps: int
    total_steps: int
    peak_lr: float
    layer_lr_min: float
    layer_lr_max: float
    n_layers: int
    head_lr: float

    def __post_init__(self) -> None:
        if not 0 <= self.warmup_steps <= self.total_steps:
            raise EngineError(
                f"warmup {self.warmup_steps} outside [0, total={self.total_steps}]"
            )
        for name in ("peak_lr", "layer_lr_min", "layer_lr_max", "head_lr"):
            if getattr(self, name) <= 0:
                raise EngineError(f"{name} must be positive")
        if self.n_layers < 1:
            raise EngineError("n_layers must be >= 1")


def lr_at_step(t: int, sched: LrSchedule) -> float:
    """Envelope value at step t: linear warmup to peak, then cosine decay."""
    if not 0 <= t <= sched.total_steps:
        raise EngineError(f"step {t} outside [0, {sched.total_steps}]")
    if sched.warmup_steps > 0 and t < sched.warmup_steps:
        return sched.peak_lr * t / sched.warmup_steps
    decay_span = sched.total_steps - sched.warmup_steps
    if decay_span == 0:
        return sched.peak_lr
    phase = (t - sched.warmup_steps) / decay_span
    return sched.peak_lr * 0.5 * (1.0 + math.cos(math.pi * phase))


def layerwise_lr(layer: int, sched: LrSchedule) -> float:
    """Geometric interpolation from layer_lr_min (layer 0) to layer_lr_max."""
    if not 0 <= layer < sched.n_layers:
        raise EngineError(f"layer {layer} outside [0, {sched.n_layers})")
    if sched.n_layers == 1:
        return sched.layer_lr_max
    ratio = sched.layer_lr_max / sched.layer_lr_min
    return sched.layer_lr_min * ratio ** (layer / (sched.n_layers - 1))


def adaptive_margins(
    class_counts: Sequence[int] | np.ndarray,
    m_min: float,
    m_max: float,
    lam: float,
) -> np.ndarray:
    """Per-class margins by inverse frequency, rarest at m_max.

    m_i = m_min + (m_max - m_min) * (n_i^-lam - n_max^-lam)
                                   / (n_min^-lam - n_max^-lam)

    With all counts equal the interpolation is undefined; every class
    then gets the midpoint (m_min + m_max) / 2.
    """
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts < 1):
        raise EngineError("class counts must all be >= 1")
    if not (0 <= m_min <= m_max < math.pi / 2):
        raise EngineError(f"invalid margin bounds ({m_min}, {m_max})")
    if lam <= 0:
        raise EngineError("lambda must be positive")
    n_min, n_max = counts.min(), counts.max()
    if n_min == n_max:
        return np.full(counts.shape, (m_min + m_max) / 2.0)
    powered = counts ** -lam
    lo, hi = n_max ** -lam, n_min ** -lam
    return m_min + (m_max - m_min) * (powered - lo) / (hi - lo)


def _normalize_rows(rows: np.ndarray, what: str, ids=None) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(rows, axis=1)
    bad = np.flatnonzero(norms <= 1e-12)
    if bad.size:
        where = f" (id {ids[bad[0]]!r})" if ids is not None else f" (row {bad[0]})"
        raise EngineError(f"zero-norm {what}{where}")
    return rows / norms[:, None], norms


def subcenter_cosines(head: ArcFaceHead, embeddings: EmbeddingSet) -> np.ndarray:
    """n x C matrix of max-over-sub-center cosines; values in [-1, 1]."""
    cos, _ = _subcenter_forward(head, embeddings.data.astype(np.float64), embeddings.ids)
    return cos


def _subcenter_forward(head: ArcFaceHead, emb: np.ndarray, ids=None):
    if emb.shape[1] != head.dim:
        raise EngineError(f"embedding dim {emb.shape[1]} does not match head dim {head.dim}")
    e_hat, e_norm = _normalize_rows(emb, "embedding", ids)
    w_hat, w_norm = _normalize_rows(head.weights, "weight row")
    w3 = w_hat.reshape(head.n_classes, head.c_sub, head.dim)
    cos3 = np.einsum("nd,csd->ncs", e_hat, w3)
    winner = cos3.argmax(axis=2)
    cos = np.clip(cos3.max(axis=2), -1.0, 1.0)
    return cos, (e_hat, e_norm, w_hat, w_norm, cos3, winner)


def _check_labels(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise EngineError("labels must be a 1-D vector")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise EngineError(f"label outside [0, {n_classes})")
    return labels.astype(np.int64)


def _margin_logits(cos: np.ndarray, labels: np.ndarray, scale: float, margins: np.ndarray):
    """Shared margin/softmax forward. Returns (loss, logits, backward pieces)."""
    n = cos.shape[0]
    clamped = np.clip(cos, -1.0 + _COS_CLAMP, 1.0 - _COS_CLAMP)
    in_range = (cos > -1.0 + _COS_CLAMP) & (cos < 1.0 - _COS_CLAMP)
    rows = np.arange(n)
    cos_y = clamped[rows, labels]
    m_y = margins[labels]
    theta_y = np.arccos(cos_y)
    main_branch = cos_y > np.cos(math.pi - m_y)
    target = np.where(
        main_branch,
        np.cos(theta_y + m_y),
        cos_y - m_y * np.sin(m_y),
    )
    logits = scale * clamped
    logits[rows, labels] = scale * target

    shift = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shift)
    softmax = exp / exp.sum(axis=1, keepdims=True)
    per_sample = np.log(exp.sum(axis=1)) - shift[rows, labels]
    loss = float(per_sample.mean())

    # d(target)/d(cos_y): main branch sin(theta+m)/sin(theta), else 1
    sin_theta = np.sin(theta_y)
    g = np.where(main_branch, np.sin(theta_y + m_y) / np.maximum(sin_theta, 1e-30), 1.0)
    return loss, logits, (softmax, in_range, g, rows)


def arcface_loss(
    cosines: np.ndarray,
    labels: Sequence[int] | np.ndarray,
    scale: float,
    margins: Sequence[float] | np.ndarray,
) -> tuple[float, np.ndarray]:
    """Mean cross-entropy under the additive angular margin; also returns
    the modified logits (n x C)."""
    cos = np.asarray(cosines, dtype=np.float64)
    if cos.ndim != 2:
        raise EngineError("cosines must be an n x C matrix")
    if np.any(cos < -1.0 - 1e-6) or np.any(cos > 1.0 + 1e-6):
        raise EngineError("cosines outside [-1, 1]")
    margins = np.asarray(margins, dtype=np.float64).reshape(-1)
    if margins.shape[0] != cos.shape[1]:
        raise EngineError(f"{margins.shape[0]} margins for {cos.shape[1]} classes")
    labels = _check_labels(np.asarray(labels), cos.shape[1])
    loss, logits, _ = _margin_logits(cos, labels, scale, margins)
    return loss, logits


def arcface_gradients(
    embeddings: EmbeddingSet | np.ndarray,
    head: ArcFaceHead,
    labels: Sequence[int] | np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Analytic d(mean loss)/d(embeddings) and d(mean loss)/d(head weights).

    Backward runs through the cross-entropy, the margin rotation, the
    max over sub-centers (subgradient to the winning row), and both
    normalizations. Everything is float64.
    """
    demb, dw, _ = _loss_and_gradients(embeddings, head, labels)
    return demb, dw


def _loss_and_gradients(embeddings, head, labels):
    if isinstance(embeddings, EmbeddingSet):
        emb = embeddings.data.astype(np.float64)
        ids = embeddings.ids
    else:
        emb = np.asarray(embeddings, dtype=np.float64)
        ids = None
    labels = _check_labels(np.asarray(labels), head.n_classes)
    if emb.shape[0] != labels.shape[0]:
        raise EngineError(f"{emb.shape[0]} embeddings but {labels.shape[0]} labels")

    cos, (e_hat, e_norm, w_hat, w_norm, cos3, winner) = _subcenter_forward(head, emb, ids)
    loss, _, (softmax, in_range, g, rows) = _margin_logits(cos, labels, head.scale, head.margins)

    n, n_classes = cos.shape
    dlogits = softmax.copy()
    dlogits[rows, labels] -= 1.0
    dlogits /= n

    dcos = head.scale * dlogits
    dcos[rows, labels] *= g
    dcos *= in_range  # clamp saturation blocks the gradient

    # route to the winning sub-center of each (sample, class) pair
    dcos3 = np.zeros_like(cos3)
    np.put_along_axis(dcos3, winner[:, :, None], dcos[:, :, None], axis=2)

    w3 = w_hat.reshape(n_classes, head.c_sub, head.dim)
    de_hat = np.einsum("ncs,csd->nd", dcos3, w3)
    dw_hat3 = np.einsum("ncs,nd->csd", dcos3, e_hat)

    demb = (de_hat - (de_hat * e_hat).sum(axis=1, keepdims=True) * e_hat) / e_norm[:, None]
    dw_hat = dw_hat3.reshape(-1, head.dim)
    dweights = (dw_hat - (dw_hat * w_hat).sum(axis=1, keepdims=True) * w_hat) / w_norm[:, None]
    return demb, dweights, loss


@dataclass(frozen=True)
class ToyTrainConfig:
    """Desk-scale training setup on synthetic Gaussian class clusters.

    Class signal lives in a low-dimensional subspace of the input while
    the noise is isotropic and full-dimensional, so an untrained
    projection retrieves poorly and the trained embedder has something
    real to learn. ``class_subspace_dim`` and ``noise_scale`` control
    that geometry; the defaults suit the other defaults.
    """

    seed: int
    n_classes: int
    samples_per_class: int
    input_dim: int
    embed_dim: int
    schedule: LrSchedule
    c_sub: int = 3
    scale: float = 16.0
    m_min: float = 0.2
    m_max: float = 0.5
    margin_lambda: float = 0.25
    dropout_rate: float = 0.1
    dropout_samples: int = 4
    epochs: int = 1
    batch_size: int = 32
    class_subspace_dim: int | None = None
    noise_scale: float = 1.0

    def __post_init__(self) -> None:
        for name in ("n_classes", "samples_per_class", "input_dim", "embed_dim",
                     "c_sub", "dropout_samples", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise EngineError(f"{name} must be >= 1")
        if not 0 <= self.dropout_rate < 1:
            raise EngineError("dropout_rate must lie in [0, 1)")
        if self.n_classes < 2:
            raise EngineError("need at least 2 classes")
        if not (0 <= self.m_min <= self.m_max < math.pi / 2):
            raise EngineError(f"invalid margin bounds ({self.m_min}, {self.m_max})")

    @property
    def subspace_dim(self) -> int:
        if self.class_subspace_dim is not None:
            return min(self.class_subspace_dim, self.input_dim)
        return max(2, min(8, self.input_dim // 4))


@dataclass(frozen=True)
class TrainLogEntry:
    step: int
    lr_embed: float
    lr_head: float
    loss: float


def class_centroids(config: ToyTrainConfig) -> np.ndarray:
    """Class centers in input space; a function of the dims only, never the
    seed, so differently-seeded runs train against the same classes."""
    rng = np.random.default_rng(_CENTROID_SEED)
    basis, _ = np.linalg.qr(rng.standard_normal((config.input_dim, config.subspace_dim)))
    coords = rng.standard_normal((config.n_classes, config.subspace_dim)) * 2.0
    return coords @ basis.T


def sample_toy_embeddings(
    config: ToyTrainConfig,
    samples_per_class: int,
    seed: int,
    prefix: str = "s",
) -> tuple[EmbeddingSet, np.ndarray]:
    """Draw labeled points around the shared centroids: centroid plus
    isotropic noise of ``noise_scale`` across every input dim."""
    centroids = class_centroids(config)
    rng = np.random.default_rng(seed)
    n = config.n_classes * samples_per_class
    labels = np.repeat(np.arange(config.n_classes), samples_per_class)
    data = centroids[labels] + config.noise_scale * rng.standard_normal((n, config.input_dim))
    ids = tuple(f"{prefix}/{labels[i]:03d}/{i:05d}" for i in range(n))
    return EmbeddingSet(ids=ids, data=data.astype(np.float32)), labels


def initial_weights(config: ToyTrainConfig) -> tuple[np.ndarray, np.ndarray]:
    """Shared 'pretrained' starting point, independent of the run seed."""
    rng = np.random.default_rng(_INIT_SEED)
    embed = rng.standard_normal((config.embed_dim, config.input_dim)) / math.sqrt(config.input_dim)
    head = rng.standard_normal((config.n_classes * config.c_sub, config.embed_dim))
    head /= np.linalg.norm(head, axis=1, keepdims=True)
    return embed, head


def apply_embedder(ckpt: Checkpoint, emb: EmbeddingSet) -> EmbeddingSet:
    """Run the linear embedder of a trained checkpoint over a set."""
    if EMBED_TENSOR not in ckpt:
        raise EngineError(f"checkpoint is missing tensor {EMBED_TENSOR!r}")
    weight = ckpt[EMBED_TENSOR].array.astype(np.float64)
    if emb.dim != weight.shape[1]:
        raise EngineError(f"set dim {emb.dim} does not match embedder input {weight.shape[1]}")
    out = emb.data.astype(np.float64) @ weight.T
    return EmbeddingSet(ids=emb.ids, data=out.astype(np.float32), normalized=False)


def train_toy(config: ToyTrainConfig) -> tuple[Checkpoint, list[TrainLogEntry]]:
    """Mini-batch SGD over the synthetic clusters; deterministic per seed.

    Per batch the loss is averaged over ``dropout_samples`` independent
    dropout masks on the embedding. The embedder row of the log uses the
    slow layer-0 rate and the head uses the fast head rate, both scaled
    by the warmup/cosine envelope.
    """
    train_set, labels = sample_toy_embeddings(
        config, config.samples_per_class, seed=config.seed, prefix="train"
    )
    x = train_set.data.astype(np.float64)
    n = x.shape[0]
    sched = config.schedule
    steps_per_epoch = (n + config.batch_size - 1) // config.batch_size
    planned = config.epochs * steps_per_epoch
    if sched.total_steps < planned:
        raise EngineError(
            f"schedule covers {sched.total_steps} steps but training needs {planned}"
        )

    counts = np.full(config.n_classes, config.samples_per_class)
    margins = adaptive_margins(counts, config.m_min, config.m_max, config.margin_lambda)
    w_embed, w_head = initial_weights(config)
    rng = np.random.default_rng(config.seed)

    def envelope(t: int) -> float:
        return lr_at_step(t, sched) / sched.peak_lr

    base_embed = layerwise_lr(0, sched)
    base_head = sched.head_lr
    keep = 1.0 - config.dropout_rate

    log: list[TrainLogEntry] = []
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for b0 in range(0, n, config.batch_size):
            batch = order[b0 : b0 + config.batch_size]
            xb, yb = x[batch], labels[batch]
            zb = xb @ w_embed.T

            head = ArcFaceHead(
                weights=w_head, scale=config.scale, margins=margins, c_sub=config.c_sub
            )
            dz = np.zeros_like(zb)
            dw_head = np.zeros_like(w_head)
            loss_acc = 0.0
            for _ in range(config.dropout_samples):
                if config.dropout_rate > 0.0:
                    mask = (rng.random(zb.shape) >= config.dropout_rate) / keep
                    # a fully-dropped row cannot be normalized; re-draw it
                    for _ in range(100):
                        dead = np.linalg.norm(mask * zb, axis=1) <= 1e-12
                        if not dead.any():
                            break
                        mask[dead] = (rng.random((int(dead.sum()), zb.shape[1]))
                                      >= config.dropout_rate) / keep
                    else:
                        raise EngineError("dropout kept zeroing entire rows")
                else:
                    mask = np.ones_like(zb)
                dz_drop, dw_h, loss = _loss_and_gradients(zb * mask, head, yb)
                dz += dz_drop * mask
                dw_head += dw_h
                loss_acc += loss
            m = config.dropout_samples
            dz /= m
            dw_head /= m
            loss_acc /= m

            step += 1
            lr_e = base_embed * envelope(step)
            lr_h = base_head * envelope(step)
            w_embed -= lr_e * (dz.T @ xb)
            w_head = w_head - lr_h * dw_head
            log.append(TrainLogEntry(step=step, lr_embed=lr_e, lr_head=lr_h, loss=loss_acc))

    ckpt = Checkpoint(
        [
            TensorEntry(EMBED_TENSOR, w_embed.astype(np.float32)),
            TensorEntry(HEAD_TENSOR, w_head.astype(np.float32)),
        ]
    )
    return ckpt, log


def write_training_log(log: Sequence[TrainLogEntry], sink: TextIO | str | Path) -> None:
    """TSV log: step, embedder LR, head LR, loss."""
    if isinstance(sink, (str, Path)):
        with open(sink, "w") as fh:
            return write_training_log(log, fh)
    sink.write("step\tlr_embed\tlr_head\tloss\n")
    for entry in log:
        sink.write(f"{entry.step}\t{entry.lr_embed:.9g}\t{entry.lr_head:.9g}\t{entry.loss:.9g}\n")
