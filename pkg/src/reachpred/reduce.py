"""Dimensionality reduction for 28-channel frames behind one fit/transform pair.

Four variants map a frame onto a small feature vector:

  pca      principal components over all channels, keeping the smallest
           count that explains the variance target
  pcanmf   principal components of the 12 inertial channels concatenated
           with muscle-synergy activations of the 16 EMG channels
  fda      Fisher discriminant axes over all channels, one fewer than the
           number of direction classes
  fda_imu  the same discriminant fit restricted to the inertial channels

Every fit is deterministic for a given seed and produces an immutable
ReducerMap that carries its own channel selector, so a live 28-channel
frame can always be passed whole and sliced at transform time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import nnls

from .data import N_CHANNELS, N_EMG, N_IMU

VARIANTS = ("pca", "pcanmf", "fda", "fda_imu")

# scale-free Tikhonov term added to the within-class scatter before inversion
FDA_RIDGE = 1e-6


@dataclass(frozen=True)
class ReducerMap:
    variant: str              # one of VARIANTS
    selector: str             # "all" | "imu" | "emg": channels consumed from the input
    weights: np.ndarray       # (C_lin, M_lin) linear map applied after centering
    offset: np.ndarray        # (M_lin,) feature means subtracted before projection
    n_features: int           # total embedding dimension
    input_dim: int            # expected transform input width
    seed: int
    synergies: np.ndarray | None = None   # (C_nmf, 16) non-negative, pcanmf only
    explained: np.ndarray | None = None   # per-component variance fractions (pca part)

    def __post_init__(self):
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        if self.synergies is not None:
            object.__setattr__(self, "synergies", np.asarray(self.synergies, dtype=float))
        if self.explained is not None:
            object.__setattr__(self, "explained", np.asarray(self.explained, dtype=float))
        if self.variant not in VARIANTS:
            raise ValueError("unknown variant %r" % (self.variant,))
        if self.weights.ndim != 2 or self.offset.shape != (self.weights.shape[1],):
            raise ValueError("weights must be 2-D with a matching offset")
        if self.variant == "pcanmf":
            if self.synergies is None or np.any(self.synergies < 0):
                raise ValueError("pcanmf needs a non-negative synergy matrix")
            if self.input_dim != self.weights.shape[1] + self.synergies.shape[1]:
                raise ValueError("selector width mismatch")
            if self.n_features != self.weights.shape[0] + self.synergies.shape[0]:
                raise ValueError("feature count mismatch")
        else:
            if self.synergies is not None:
                raise ValueError("synergies only belong to the pcanmf variant")
            if self.n_features != self.weights.shape[0]:
                raise ValueError("feature count mismatch")
            width = {"all": self.weights.shape[1], "imu": N_IMU, "emg": N_EMG}
            if self.selector not in width:
                raise ValueError("unknown selector %r" % (self.selector,))
            if self.weights.shape[1] != width[self.selector]:
                raise ValueError("selector width mismatch")


def _fix_signs(rows):
    """Make each component's largest-magnitude coefficient positive."""
    rows = np.array(rows, dtype=float)
    for r in rows:
        j = np.argmax(np.abs(r))
        if r[j] < 0:
            r *= -1.0
    return rows


def _check_matrix(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("%s must be a 2-D sample matrix" % name)
    if not np.all(np.isfinite(x)):
        raise ValueError("%s contains non-finite entries" % name)
    return x


def fit_pca(x, variance_target=0.90, seed=0):
    """Principal components keeping the fewest axes that reach the target.

    The sample covariance of the centered data is eigendecomposed, components
    are ordered by descending eigenvalue, and axes with non-positive
    eigenvalues (rank deficiency) are dropped before the cumulative
    explained-variance cut is applied.
    """
    x = _check_matrix(x, "x")
    n, m = x.shape
    if n <= m:
        raise ValueError("need more samples than channels")
    if not 0 < variance_target <= 1:
        raise ValueError("variance target must lie in (0, 1]")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / (n - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    keep = evals > max(evals[0], 0.0) * 1e-12
    evals, evecs = evals[keep], evecs[:, keep]
    if evals.size == 0:
        raise ValueError("input has no variance")
    explained = evals / evals.sum()
    cum = np.cumsum(explained)
    c = int(np.searchsorted(cum, variance_target - 1e-12) + 1)
    c = min(c, evals.size)
    w = _fix_signs(evecs[:, :c].T)
    return ReducerMap(
        variant="pca", selector="all", weights=w, offset=mean,
        n_features=c, input_dim=m, seed=int(seed), explained=explained,
    )


def nmf_factorize(x, k, seed=0, max_iter=300, tol=1e-9):
    """Non-negative factorization x ~ w @ h by multiplicative updates.

    Returns (w, h, objective) where objective is the squared-error history,
    one entry per iteration starting with the initial factors.  Each update
    scales a factor by a ratio of non-negative matrices, so non-negativity
    is preserved and the error never increases.
    """
    x = _check_matrix(x, "x")
    n, m = x.shape
    if not 1 <= k <= min(n, m):
        raise ValueError("component count out of range")
    if np.any(x < 0):
        raise ValueError("input must be non-negative")
    rng = np.random.default_rng([int(seed), 211, k])
    scale = np.sqrt(max(x.mean(), 1e-12) / k)
    w = rng.uniform(0.2, 1.0, (n, k)) * scale
    h = rng.uniform(0.2, 1.0, (k, m)) * scale
    eps = 1e-12
    objective = [0.5 * np.sum((x - w @ h) ** 2)]
    for _ in range(max_iter):
        h *= (w.T @ x) / np.maximum(w.T @ w @ h, eps)
        w *= (x @ h.T) / np.maximum(w @ (h @ h.T), eps)
        objective.append(0.5 * np.sum((x - w @ h) ** 2))
        if objective[-2] - objective[-1] <= tol * max(objective[-2], 1.0):
            break
    return w, h, np.asarray(objective)


def vaf(x, w, h):
    """Variance accounted for by w @ h, relative to the per-channel means."""
    x = np.asarray(x, dtype=float)
    resid = np.sum((x - w @ h) ** 2)
    total = np.sum((x - x.mean(axis=0)) ** 2)
    if total <= 0:
        return 1.0 if resid <= 0 else 0.0
    return 1.0 - resid / total


def fit_nmf(x_emg, vaf_target=0.90, max_iter=300, tol=1e-9, seed=0):
    """Smallest synergy count whose factorization reaches the target VAF.

    Returns (h, w): h is the (C, channels) synergy matrix and w the (N, C)
    training activations.  Candidate counts are tried in increasing order.
    """
    x = _check_matrix(x_emg, "x_emg")
    if np.any(x < 0):
        raise ValueError("input must be non-negative")
    if not x.any():
        warnings.warn("all-zero input: returning a single zero synergy")
        return np.zeros((1, x.shape[1])), np.zeros((x.shape[0], 1))
    w = h = None
    for k in range(1, min(x.shape) + 1):
        w, h, _ = nmf_factorize(x, k, seed=seed, max_iter=max_iter, tol=tol)
        if vaf(x, w, h) >= vaf_target:
            return h, w
    warnings.warn("variance target not reached at full component count")
    return h, w


def fit_fda(x, labels, seed=0):
    """Fisher discriminant map with exactly one axis fewer than the classes.

    Solves the generalized eigenproblem pairing the within-class scatter
    with the total scatter (within plus between) on the whitened space from
    a Cholesky factor of the ridge-regularized within-class scatter.  Rows
    are unit-normalized and the output dimension is fixed by the label
    count, not by a variance target.
    """
    x = _check_matrix(x, "x")
    labels = np.asarray(labels)
    n, m = x.shape
    if labels.shape != (n,):
        raise ValueError("labels must match the sample count")
    classes = np.unique(labels)
    n_classes = classes.size
    if n_classes < 2 or not np.array_equal(classes, np.arange(1, n_classes + 1)):
        raise ValueError("labels must cover 1..L with L >= 2")
    mean = x.mean(axis=0)
    s_w = np.zeros((m, m))
    s_b = np.zeros((m, m))
    for cl in classes:
        xk = x[labels == cl]
        if xk.shape[0] < 2:
            raise ValueError("every class needs at least 2 samples")
        mu = xk.mean(axis=0)
        d = xk - mu
        s_w += d.T @ d
        g = (mu - mean)[:, None]
        s_b += xk.shape[0] * (g @ g.T)
    s_w += np.eye(m) * (FDA_RIDGE * np.trace(s_w) / m)
    try:
        chol = np.linalg.cholesky(s_w)
    except np.linalg.LinAlgError:
        raise ValueError("within-class scatter is singular")
    s_bar = s_w + s_b
    b = solve_triangular(chol, solve_triangular(chol, s_bar, lower=True).T, lower=True)
    b = 0.5 * (b + b.T)
    evals, u = np.linalg.eigh(b)
    u = u[:, np.argsort(evals)[::-1][: n_classes - 1]]
    v = solve_triangular(chol.T, u, lower=False)
    rows = v.T / np.linalg.norm(v.T, axis=1, keepdims=True)
    return ReducerMap(
        variant="fda", selector="all", weights=_fix_signs(rows), offset=mean,
        n_features=n_classes - 1, input_dim=m, seed=int(seed),
    )


def fit_variant(variant, x, labels=None, seed=0, variance_target=0.90,
                vaf_target=0.90):
    """Fit one of the named reducers on a full 28-channel sample matrix.

    labels are required for the discriminant variants and ignored otherwise.
    The returned map records which channels it consumes, so transform always
    accepts whole frames.
    """
    if variant not in VARIANTS:
        raise ValueError("unknown variant %r" % (variant,))
    x = _check_matrix(x, "x")
    if x.shape[1] != N_CHANNELS:
        raise ValueError("expected %d channels, got %d" % (N_CHANNELS, x.shape[1]))
    if variant == "pca":
        return fit_pca(x, variance_target, seed=seed)
    if variant == "pcanmf":
        imu_map = fit_pca(x[:, :N_IMU], variance_target, seed=seed)
        h, _ = fit_nmf(x[:, N_IMU:], vaf_target, seed=seed)
        return ReducerMap(
            variant="pcanmf", selector="all", weights=imu_map.weights,
            offset=imu_map.offset, synergies=h,
            n_features=imu_map.n_features + h.shape[0],
            input_dim=N_CHANNELS, seed=int(seed), explained=imu_map.explained,
        )
    if labels is None:
        raise ValueError("discriminant variants need labels")
    if variant == "fda":
        return fit_fda(x, labels, seed=seed)
    base = fit_fda(x[:, :N_IMU], labels, seed=seed)
    return replace(base, variant="fda_imu", selector="imu", input_dim=N_CHANNELS)


def _activations(h, emg):
    """Per-frame non-negative least-squares activation solve against h."""
    ht = np.ascontiguousarray(h.T)
    out = np.empty((emg.shape[0], h.shape[0]))
    for i in range(emg.shape[0]):
        out[i], _ = nnls(ht, emg[i])
    return out


def transform(rmap: ReducerMap, features):
    """Project one frame (M,) or a batch (N, M) onto the reduced features."""
    f = np.asarray(features, dtype=float)
    single = f.ndim == 1
    x = np.atleast_2d(f)
    if x.ndim != 2 or x.shape[1] != rmap.input_dim:
        raise ValueError("expected %d input channels" % rmap.input_dim)
    if rmap.variant == "pcanmf":
        lin = (x[:, :N_IMU] - rmap.offset) @ rmap.weights.T
        out = np.hstack([lin, _activations(rmap.synergies, x[:, N_IMU:])])
    else:
        sel = x[:, :N_IMU] if rmap.selector == "imu" else x
        out = (sel - rmap.offset) @ rmap.weights.T
    return out[0] if single else out
