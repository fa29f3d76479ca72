"""PCA fitting and projection for descriptor reduction.

The eigensolver is a cyclic Jacobi sweep over the covariance matrix:
deterministic, dependency-free, and plenty fast for the dimensions seen
here (d up to ~2048). When there are fewer samples than dimensions the
fit goes through the n x n Gram matrix and maps eigenvectors back,
avoiding an undersized-rank d x d solve.

Conventions baked in:
  * population covariance (divide by n),
  * no whitening: projection is rotation + truncation only,
  * each component row is flipped so its largest-magnitude entry is
    positive (ties broken by lowest index) so fits are reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EngineError
from .soup import Checkpoint, TensorEntry
from .store import EmbeddingSet

ORTHO_TOL = 1e-6
_JACOBI_TOL_SCALE = 1e-10
_JACOBI_MAX_SWEEPS = 100

MEAN_TENSOR = "pca.mean"
COMPONENTS_TENSOR = "pca.components"
EIGENVALUES_TENSOR = "pca.eigenvalues"


@dataclass(frozen=True)
class PcaModel:
    """Mean vector, orthonormal component rows, and descending variances."""

    mean: np.ndarray
    components: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        comps = np.asarray(self.components, dtype=np.float64)
        eig = np.asarray(self.eigenvalues, dtype=np.float64).reshape(-1)
        if comps.ndim != 2:
            raise EngineError(f"components must be 2-D, got shape {comps.shape}")
        k, d = comps.shape
        if mean.shape[0] != d:
            raise EngineError(f"mean length {mean.shape[0]} does not match component dim {d}")
        if eig.shape[0] != k:
            raise EngineError(f"{eig.shape[0]} eigenvalues for {k} components")
        if k > d:
            raise EngineError(f"more components ({k}) than input dims ({d})")
        if np.any(eig < 0):
            raise EngineError("eigenvalues must be non-negative")
        if np.any(np.diff(eig) > 0):
            raise EngineError("eigenvalues must be sorted descending")
        gram = comps @ comps.T
        err = float(np.abs(gram - np.eye(k)).max())
        if err > ORTHO_TOL:
            raise EngineError(f"component rows are not orthonormal (max deviation {err:.3g})")
        for arr in (mean, comps, eig):
            arr.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "eigenvalues", eig)

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]

    @property
    def output_dim(self) -> int:
        return self.components.shape[0]

    def to_checkpoint(self) -> Checkpoint:
        return Checkpoint(
            [
                TensorEntry(MEAN_TENSOR, self.mean.astype(np.float32)),
                TensorEntry(COMPONENTS_TENSOR, self.components.astype(np.float32)),
                TensorEntry(EIGENVALUES_TENSOR, self.eigenvalues.astype(np.float32)),
            ]
        )

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "PcaModel":
        for name in (MEAN_TENSOR, COMPONENTS_TENSOR, EIGENVALUES_TENSOR):
            if name not in ckpt:
                raise EngineError(f"checkpoint is missing tensor {name!r}")
        return cls(
            mean=ckpt[MEAN_TENSOR].array,
            components=ckpt[COMPONENTS_TENSOR].array,
            eigenvalues=ckpt[EIGENVALUES_TENSOR].array,
        )


@dataclass(frozen=True)
class AlignmentStats:
    """Mean and max Euclidean distance over id-paired rows."""

    mean: float
    max: float


def _jacobi_eigh(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (eigenvalues descending, eigenvector rows aligned to them).
    Rotations stop once every off-diagonal entry is at or below
    1e-10 * max|entry| of the input, or after 100 full sweeps.
    """
    a = np.array(matrix, dtype=np.float64)
    m = a.shape[0]
    if m == 1:
        return a[0].copy(), np.ones((1, 1))
    tol = _JACOBI_TOL_SCALE * float(np.abs(a).max())
    v = np.eye(m)
    for _ in range(_JACOBI_MAX_SWEEPS):
        off = np.abs(a - np.diag(np.diag(a))).max()
        if off <= tol:
            break
        for p in range(m - 1):
            for q in range(p + 1, m):
                apq = a[p, q]
                if abs(apq) <= tol:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta))
                if theta == 0.0:
                    t = 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    eigenvalues = np.diag(a).copy()
    order = np.argsort(-eigenvalues, kind="stable")
    return eigenvalues[order], v[:, order].T


def _apply_sign_convention(components: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is positive."""
    flipped = components.copy()
    for row in flipped:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    return flipped


def fit_pca(train: EmbeddingSet, k: int) -> PcaModel:
    """Fit a k-component PCA on the rows of ``train``.

    Components are the top-k eigenvectors of the population covariance
    (divide by n); eigenvalues are the matching variances.
    """
    n, d = train.count, train.dim
    if n < 2:
        raise EngineError(f"need at least 2 rows to fit PCA, got {n}")
    if not 1 <= k <= min(n, d):
        raise EngineError(f"k={k} out of range [1, min(n={n}, d={d})]")

    x = train.data.astype(np.float64)
    mean = x.mean(axis=0)
    centered = x - mean

    if n >= d:
        cov = centered.T @ centered / n
        if float(np.abs(cov).max()) == 0.0:
            raise EngineError("zero covariance: all training rows are identical")
        eigenvalues, vectors = _jacobi_eigh(cov)
        components = vectors[:k]
        eigenvalues = eigenvalues[:k]
    else:
        gram = centered @ centered.T / n
        if float(np.abs(gram).max()) == 0.0:
            raise EngineError("zero covariance: all training rows are identical")
        eigenvalues, u = _jacobi_eigh(gram)
        eigenvalues = eigenvalues[:k]
        floor = max(eigenvalues[0], 0.0) * 1e-12
        if eigenvalues[k - 1] <= floor:
            raise EngineError(
                f"rank deficient: eigenvalue {k} is {eigenvalues[k - 1]:.3g}, "
                "cannot recover that many components from the Gram matrix"
            )
        # map Gram eigenvectors back: v_i = X_c^T u_i / sqrt(n * lambda_i)
        components = (centered.T @ u[:k].T / np.sqrt(n * eigenvalues)).T

    eigenvalues = np.maximum(eigenvalues, 0.0)
    components = _apply_sign_convention(components)
    return PcaModel(mean=mean, components=components, eigenvalues=eigenvalues)


def project(model: PcaModel, emb: EmbeddingSet) -> EmbeddingSet:
    """Project every row: components @ (row - mean). Output is un-normalized."""
    if emb.dim != model.input_dim:
        raise EngineError(f"dimension mismatch: set has d={emb.dim}, model expects {model.input_dim}")
    out = (emb.data.astype(np.float64) - model.mean) @ model.components.T
    return EmbeddingSet(ids=emb.ids, data=out.astype(np.float32), normalized=False)


def validate_alignment(a: EmbeddingSet, b: EmbeddingSet) -> AlignmentStats:
    """Mean and max Euclidean distance between id-paired rows of two sets."""
    if a.dim != b.dim:
        raise EngineError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if set(a.ids) != set(b.ids):
        diff = sorted(set(a.ids).symmetric_difference(b.ids))[:5]
        raise EngineError(f"id sets differ (examples: {diff})")
    if a.count == 0:
        return AlignmentStats(mean=0.0, max=0.0)
    index_in_b = {id_: i for i, id_ in enumerate(b.ids)}
    order = np.array([index_in_b[id_] for id_ in a.ids])
    delta = a.data.astype(np.float64) - b.data.astype(np.float64)[order]
    dists = np.linalg.norm(delta, axis=1)
    return AlignmentStats(mean=float(dists.mean()), max=float(dists.max()))
