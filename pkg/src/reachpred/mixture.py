"""Class-conditional Gaussian mixtures over reduced features.

One mixture per direction class, seeded by k-means, fitted by
expectation-maximization, with the component count chosen per class by the
Bayesian information criterion.  Densities are evaluated in the log domain
end to end so a streaming consumer never sees an underflow, and the final
normalization across classes produces the per-sample simplex vector that
evidence accumulation consumes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .reduce import ReducerMap

# added to every covariance each M-step, and once at construction time
COV_RIDGE = 1e-6

_LOG_2PI = float(np.log(2.0 * np.pi))


def _check_matrix(x, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError("%s must be a 2-D sample matrix" % name)
    if not np.all(np.isfinite(x)):
        raise ValueError("%s contains non-finite entries" % name)
    return x


@dataclass(frozen=True)
class GaussianComponent:
    prior: float
    mean: np.ndarray   # (C,)
    cov: np.ndarray    # (C, C) symmetric positive-definite

    def __post_init__(self):
        object.__setattr__(self, "prior", float(self.prior))
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=float))
        c = self.mean.size
        if self.mean.shape != (c,) or self.cov.shape != (c, c):
            raise ValueError("mean and covariance shapes disagree")
        if not 0 < self.prior <= 1:
            raise ValueError("prior must lie in (0, 1]")
        if not np.allclose(self.cov, self.cov.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(self.cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite")
        inv_chol = solve_triangular(chol, np.eye(c), lower=True)
        log_norm = -0.5 * (c * _LOG_2PI + 2.0 * np.log(np.diag(chol)).sum())
        object.__setattr__(self, "_inv_chol", inv_chol)
        object.__setattr__(self, "_log_norm", float(log_norm))

    def log_pdf(self, x):
        """Gaussian log density; x is (C,) or (N, C)."""
        z = (np.atleast_2d(x) - self.mean) @ self._inv_chol.T
        out = self._log_norm - 0.5 * np.sum(z * z, axis=1)
        return out if np.ndim(x) > 1 else float(out[0])


@dataclass(frozen=True)
class Mixture:
    components: tuple
    log_likelihood: float = float("nan")  # total training log-likelihood
    n_iter: int = 0

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ValueError("a mixture needs at least one component")
        dims = {comp.mean.size for comp in self.components}
        if len(dims) != 1:
            raise ValueError("components must share one feature dimension")
        total = sum(comp.prior for comp in self.components)
        if abs(total - 1.0) > 1e-9:
            raise ValueError("priors must sum to 1")

    @property
    def n_features(self):
        return self.components[0].mean.size

    def log_pdf(self, x):
        """Mixture log density log sum_k pi_k N(x; mu_k, Sigma_k)."""
        rows = np.stack([
            np.log(comp.prior) + np.atleast_1d(comp.log_pdf(x))
            for comp in self.components
        ])
        out = logsumexp(rows, axis=0)
        return out if np.ndim(x) > 1 else float(out)


@dataclass(frozen=True)
class DirectionModel:
    mixtures: tuple                      # one Mixture per class, index = class - 1
    reducer: ReducerMap | None = None
    th_r: float | None = None            # stopping thresholds, filled by tuning
    th_s: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "mixtures", tuple(self.mixtures))
        if not self.mixtures:
            raise ValueError("a direction model needs at least one class")
        dims = {mix.n_features for mix in self.mixtures}
        if len(dims) != 1:
            raise ValueError("class mixtures must share one feature dimension")

    @property
    def n_classes(self):
        return len(self.mixtures)

    @property
    def n_features(self):
        return self.mixtures[0].n_features


def _gauss_log_matrix(x, priors, means, chols):
    """(N, K) of log pi_k + log N(x; mu_k, Sigma_k) from Cholesky factors."""
    n, k = x.shape[0], len(priors)
    out = np.empty((n, k))
    for j in range(k):
        z = solve_triangular(chols[j], (x - means[j]).T, lower=True)
        logdet = 2.0 * np.log(np.diag(chols[j])).sum()
        out[:, j] = (
            np.log(priors[j])
            - 0.5 * (x.shape[1] * _LOG_2PI + logdet + np.sum(z * z, axis=0))
        )
    return out


def kmeans(points, k, seed=0, max_iter=100, history=None):
    """Lloyd's algorithm with distance-weighted (k-means++) seeding.

    Returns (centroids, assignments).  An empty cluster is reseeded to the
    point currently farthest from its centroid, so the within-cluster
    squared error keeps decreasing.  history, when given a list, receives
    the squared error once per iteration.
    """
    x = _check_matrix(points, "points")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ValueError("need at least as many points as clusters")
    rng = np.random.default_rng([int(seed), 307, int(k)])
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        probs = d2 / total if total > 0 else np.full(n, 1.0 / n)
        centroids[j] = x[rng.choice(n, p=probs)]
        d2 = np.minimum(d2, np.sum((x - centroids[j]) ** 2, axis=1))
    for _ in range(max_iter):
        dist = np.sum((x[:, None, :] - centroids[None]) ** 2, axis=-1)
        assign = dist.argmin(axis=1)
        if history is not None:
            history.append(float(dist[np.arange(n), assign].sum()))
        new = centroids.copy()
        for j in range(k):
            sel = assign == j
            if sel.any():
                new[j] = x[sel].mean(axis=0)
            else:
                new[j] = x[dist[np.arange(n), assign].argmax()]
        if np.array_equal(new, centroids):
            break
        centroids = new
    dist = np.sum((x[:, None, :] - centroids[None]) ** 2, axis=-1)
    return centroids, dist.argmin(axis=1)


def _prune_singular(priors, means, covs):
    """Drop components whose covariance cannot be factorized or whose mass
    vanished; renormalize the surviving priors.  Returns (priors, means,
    covs, pruned_flag)."""
    keep = []
    for j in range(len(priors)):
        ok = (
            priors[j] > 1e-10
            and np.all(np.isfinite(means[j]))
            and np.all(np.isfinite(covs[j]))
        )
        if ok:
            try:
                np.linalg.cholesky(covs[j])
            except np.linalg.LinAlgError:
                ok = False
        keep.append(ok)
    if all(keep):
        return priors, means, covs, False
    if not any(keep):
        raise ValueError("every mixture component degenerated")
    warnings.warn("singular component removed; priors renormalized")
    sel = np.flatnonzero(keep)
    priors = priors[sel] / priors[sel].sum()
    return priors, [means[j] for j in sel], [covs[j] for j in sel], True


def em_fit(points, k, seed=0, tol=1e-6, max_iter=200, history=None):
    """Expectation-maximization fit of a K-component Gaussian mixture.

    Seeded from kmeans cluster statistics.  Every M-step adds a small
    diagonal ridge to each covariance; a component that still cannot be
    factorized is removed with a warning and the priors renormalized.
    Iteration stops when the relative log-likelihood change falls under
    tol.  history, when given a list, receives the per-iteration
    log-likelihood.
    """
    x = _check_matrix(points, "points")
    n, c = x.shape
    if n < 5 * k:
        raise ValueError("need at least 5 samples per component")
    if np.any(x.var(axis=0) <= 0):
        raise ValueError("feature variance must be positive in every dimension")

    centroids, assign = kmeans(x, k, seed=seed)
    ridge = COV_RIDGE * np.eye(c)
    global_cov = np.cov(x.T, bias=True).reshape(c, c) + ridge
    priors = np.empty(k)
    means, covs = [], []
    for j in range(k):
        sel = assign == j
        nj = int(sel.sum())
        priors[j] = max(nj, 1)
        means.append(x[sel].mean(axis=0) if nj else centroids[j])
        if nj >= 2:
            d = x[sel] - means[j]
            covs.append(d.T @ d / nj + ridge)
        else:
            covs.append(global_cov.copy())
    priors /= priors.sum()

    ll = ll_prev = -np.inf
    it = 0
    for it in range(1, max_iter + 1):
        chols = [np.linalg.cholesky(cv) for cv in covs]
        logp = _gauss_log_matrix(x, priors, means, chols)
        norm = logsumexp(logp, axis=1)
        ll = float(norm.sum())
        if history is not None:
            history.append(ll)
        if it > 1 and abs(ll - ll_prev) < tol * max(abs(ll_prev), 1e-300):
            break
        ll_prev = ll
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            priors = nk / n
            means = list((resp.T @ x) / nk[:, None])
            covs = []
            for j in range(len(priors)):
                d = x - means[j]
                covs.append((resp[:, j][:, None] * d).T @ d / nk[j] + ridge)
        priors, means, covs, _ = _prune_singular(priors, means, covs)
    components = tuple(
        GaussianComponent(prior=priors[j], mean=means[j], cov=covs[j])
        for j in range(len(priors))
    )
    return Mixture(components=components, log_likelihood=ll, n_iter=it)


def bic(mixture: Mixture, n_samples):
    """Bayesian information criterion -2 ll + p ln N for a fitted mixture."""
    k = len(mixture.components)
    c = mixture.n_features
    p = (k - 1) + k * c + k * c * (c + 1) // 2
    return -2.0 * mixture.log_likelihood + p * np.log(n_samples)


def pick_best_k(scores):
    """Component count with the smallest score; exact ties go to smaller K."""
    if not scores:
        raise ValueError("no candidate scores")
    return min(sorted(scores), key=lambda k: scores[k])


def select_k(points, k_candidates, seed=0, tol=1e-6, max_iter=200, scores=None):
    """Pick the component count with the lowest BIC among the candidates.

    Candidates that cannot be fitted (too few samples) are skipped.
    scores, when given a dict, receives the BIC per evaluated candidate.
    """
    candidates = sorted({int(k) for k in k_candidates})
    if not candidates:
        raise ValueError("no candidate component counts")
    x = _check_matrix(points, "points")
    bics = {}
    for k in candidates:
        try:
            mix = em_fit(x, k, seed=seed, tol=tol, max_iter=max_iter)
        except ValueError:
            continue
        bics[k] = float(bic(mix, x.shape[0]))
    if scores is not None:
        scores.update(bics)
    if not bics:
        raise ValueError("all candidate fits failed")
    return pick_best_k(bics)


def fit_direction_model(features, labels, reducer=None, k_candidates=(1, 2, 3, 4, 5),
                        seed=0, tol=1e-6, max_iter=200):
    """One BIC-selected mixture per direction class over reduced features.

    labels are class indices 1..L; the fitted model keeps the reducer
    reference plus a metadata record of the seed, the BIC table, and the
    EM iteration counts.
    """
    x = _check_matrix(features, "features")
    labels = np.asarray(labels)
    if labels.shape != (x.shape[0],):
        raise ValueError("labels must match the sample count")
    classes = np.unique(labels)
    n_classes = classes.size
    if n_classes < 2 or not np.array_equal(classes, np.arange(1, n_classes + 1)):
        raise ValueError("labels must cover 1..L with L >= 2")
    mixtures = []
    bic_table = {}
    iterations = {}
    for cl in range(1, n_classes + 1):
        pts = x[labels == cl]
        scores = {}
        k_star = select_k(pts, k_candidates, seed=seed, tol=tol,
                          max_iter=max_iter, scores=scores)
        mix = em_fit(pts, k_star, seed=seed, tol=tol, max_iter=max_iter)
        mixtures.append(mix)
        bic_table[cl] = scores
        iterations[cl] = mix.n_iter
    metadata = {
        "seed": int(seed),
        "k_candidates": [int(k) for k in sorted({int(k) for k in k_candidates})],
        "bic": bic_table,
        "em_iterations": iterations,
    }
    return DirectionModel(mixtures=tuple(mixtures), reducer=reducer,
                          metadata=metadata)


def class_log_pdf(model: DirectionModel, x):
    """Per-class log densities log rho_l; x is (C,) or (N, C).

    Finite for every finite input: each class density is a proper Gaussian
    mixture evaluated through log-sum-exp.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("features must be finite")
    single = arr.ndim == 1
    batch = np.atleast_2d(arr)
    if batch.shape[1] != model.n_features:
        raise ValueError("expected %d features" % model.n_features)
    cols = [np.atleast_1d(mix.log_pdf(batch)) for mix in model.mixtures]
    out = np.stack(cols, axis=1)
    return out[0] if single else out


def normalize_over_classes(log_rho):
    """Exponentiate log densities onto the class simplex, underflow-safe.

    Works on one (L,) vector or a batch (N, L); subtracting the row maximum
    before exponentiation keeps extreme log densities finite.
    """
    logr = np.asarray(log_rho, dtype=float)
    shifted = logr - logr.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)
