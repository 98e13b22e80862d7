"""Two-state rest/motion model over the velocity-magnitude observable.

A scalar-Gaussian hidden Markov model with states {REST, MOTION}, trained
offline with the Baum-Welch algorithm and run online as a per-sample
forward filter.  State 0 is REST and state 1 is MOTION by the convention
that the REST emission mean is the smaller one; training reorders states
to satisfy it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dsp import MOTION, REST

VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class HmmModel:
    pi0: np.ndarray        # (2,) initial distribution
    A: np.ndarray          # (2, 2) row-stochastic transitions
    means: np.ndarray      # (2,) emission means, REST first
    variances: np.ndarray  # (2,) emission variances

    def __post_init__(self):
        object.__setattr__(self, "pi0", np.asarray(self.pi0, dtype=float))
        object.__setattr__(self, "A", np.asarray(self.A, dtype=float))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))
        if self.pi0.shape != (2,) or self.A.shape != (2, 2):
            raise ValueError("model is two-state")
        if abs(self.pi0.sum() - 1) > 1e-9 or np.any(np.abs(self.A.sum(1) - 1) > 1e-9):
            raise ValueError("distributions must sum to 1")
        if np.any(self.variances <= 0):
            raise ValueError("variances must be positive")
        if not self.means[0] < self.means[1]:
            raise ValueError("REST mean must be below MOTION mean")

    def log_emission(self, x):
        """log N(x; mu_i, sigma_i^2) for both states; x scalar or array."""
        x = np.asarray(x, dtype=float)[..., None]
        return -0.5 * (
            (x - self.means) ** 2 / self.variances
            + np.log(2.0 * np.pi * self.variances)
        )


@dataclass
class IntentionBelief:
    p: np.ndarray      # (2,) posterior over {REST, MOTION}
    x_last: float
    index: int

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if self.p.shape != (2,) or np.any(self.p < 0) or abs(self.p.sum() - 1) > 1e-9:
            raise ValueError("belief must be a distribution over two states")


def initial_belief(model: HmmModel) -> IntentionBelief:
    return IntentionBelief(p=model.pi0.copy(), x_last=np.nan, index=-1)


def forward_step(model: HmmModel, belief: IntentionBelief, x_t) -> IntentionBelief:
    """One recursive posterior update, computed in the log domain.

    new p_i proportional to N(x_t; mu_i, sigma_i^2) * sum_j A[j,i] p_j.  The
    prior enters through one transition step, so the recursion has the same
    shape at every sample including the first.
    """
    x_t = float(x_t)
    prior = model.A.T @ belief.p
    with np.errstate(divide="ignore"):
        log_post = model.log_emission(x_t) + np.log(prior)
    log_post -= log_post.max()
    p = np.exp(log_post)
    p /= p.sum()
    return IntentionBelief(p=p, x_last=x_t, index=belief.index + 1)


def filter_sequence(model: HmmModel, xs, belief: IntentionBelief | None = None):
    """Run forward_step over a series; returns ((N, 2) posteriors, final belief)."""
    if belief is None:
        belief = initial_belief(model)
    out = np.empty((len(xs), 2))
    for i, x in enumerate(np.asarray(xs, dtype=float)):
        belief = forward_step(model, belief, x)
        out[i] = belief.p
    return out, belief


def predict_intention(belief: IntentionBelief) -> str:
    """Argmax state; ties resolve to REST so no action is taken."""
    return MOTION if belief.p[1] > belief.p[0] else REST


def _kmeans_1d(x, iters=50):
    """Two-cluster Lloyd iteration with percentile seeding (deterministic)."""
    lo, hi = np.percentile(x, 25.0), np.percentile(x, 75.0)
    if hi - lo < 1e-12:
        hi = lo + 1e-6
    centers = np.array([lo, hi])
    for _ in range(iters):
        assign = np.abs(x[:, None] - centers).argmin(axis=1)
        new = np.array(
            [x[assign == k].mean() if np.any(assign == k) else centers[k] for k in (0, 1)]
        )
        if np.allclose(new, centers):
            break
        centers = new
    return centers, assign


def default_init(sequences) -> HmmModel:
    """Emission means from 2-means clustering; sticky transitions; rest start."""
    x = np.concatenate([np.asarray(s, dtype=float) for s in sequences])
    centers, assign = _kmeans_1d(x)
    order = np.argsort(centers)
    means = centers[order]
    variances = np.empty(2)
    for i, k in enumerate(order):
        members = x[assign == k]
        variances[i] = members.var() if members.size > 1 else VAR_FLOOR
    variances = np.maximum(variances, VAR_FLOOR)
    if means[1] - means[0] < 1e-9:
        means = np.array([means[0], means[0] + 1e-6])
    return HmmModel(
        pi0=np.array([1.0, 0.0]),
        A=np.array([[0.95, 0.05], [0.05, 0.95]]),
        means=means,
        variances=variances,
    )


def _forward_backward(pi0, A, logb):
    """Scaled forward-backward for one sequence.

    Returns (log_likelihood, gamma (T,2), xi_sum (2,2)).  Per-sample shifts
    on the emission densities keep everything in range; they cancel in the
    normalized posteriors and are added back into the log-likelihood.
    """
    T = logb.shape[0]
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])

    alpha = np.empty((T, 2))
    c = np.empty(T)
    a = pi0 * b[0]
    c[0] = a.sum()
    alpha[0] = a / c[0]
    for t in range(1, T):
        a = (alpha[t - 1] @ A) * b[t]
        c[t] = a.sum()
        alpha[t] = a / c[t]

    beta = np.empty((T, 2))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (A @ (b[t + 1] * beta[t + 1])) / c[t + 1]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    xi_sum = np.zeros((2, 2))
    for t in range(T - 1):
        m = (alpha[t][:, None] * A) * (b[t + 1] * beta[t + 1])[None, :]
        xi_sum += m / m.sum()

    ll = float(np.log(c).sum() + shift.sum())
    return ll, gamma, xi_sum


def baum_welch(
    sequences,
    init: HmmModel | None = None,
    tol=1e-3,
    max_iter=50,
    history: list | None = None,
) -> HmmModel:
    """Expectation-maximization over one or more observable sequences.

    Stops when the total log-likelihood improves by less than `tol` or after
    `max_iter` iterations.  If `history` is given, the per-iteration total
    log-likelihood is appended to it.  Degenerate states (no responsibility
    mass, or collapsing variance) are floored and reported via a warning.
    """
    seqs = [np.asarray(s, dtype=float) for s in sequences]
    if not seqs:
        raise ValueError("at least one sequence required")
    if any(len(s) < 10 for s in seqs):
        raise ValueError("sequences must have length >= 10")
    model = init if init is not None else default_init(seqs)

    pi0, A = model.pi0.copy(), model.A.copy()
    means, variances = model.means.copy(), model.variances.copy()
    prev_ll = -np.inf
    floored = False

    for _ in range(max_iter):
        total_ll = 0.0
        gamma0 = np.zeros(2)
        g_sum = np.zeros(2)
        g_x = np.zeros(2)
        g_xx = np.zeros(2)
        g_trans = np.zeros(2)
        xi_sum = np.zeros((2, 2))
        for x in seqs:
            logb = (
                -0.5 * (x[:, None] - means) ** 2 / variances
                - 0.5 * np.log(2.0 * np.pi * variances)
            )
            ll, gamma, xi = _forward_backward(pi0, A, logb)
            total_ll += ll
            gamma0 += gamma[0]
            g_sum += gamma.sum(axis=0)
            g_x += gamma.T @ x
            g_xx += gamma.T @ (x * x)
            g_trans += gamma[:-1].sum(axis=0)
            xi_sum += xi
        if history is not None:
            history.append(total_ll)

        pi0 = gamma0 / gamma0.sum()
        for i in range(2):
            if g_trans[i] > 0:
                A[i] = xi_sum[i] / g_trans[i]
        A /= A.sum(axis=1, keepdims=True)
        for i in range(2):
            if g_sum[i] > 1e-12:
                means[i] = g_x[i] / g_sum[i]
                variances[i] = g_xx[i] / g_sum[i] - means[i] ** 2
            else:
                floored = True  # state starved of responsibility; keep params
        if np.any(variances < VAR_FLOOR):
            floored = True
            variances = np.maximum(variances, VAR_FLOOR)

        if abs(total_ll - prev_ll) < tol:
            break
        prev_ll = total_ll

    if floored:
        warnings.warn("degenerate state during training: variance floor applied")

    if means[0] > means[1]:
        perm = [1, 0]
        pi0, means, variances = pi0[perm], means[perm], variances[perm]
        A = A[np.ix_(perm, perm)]
    elif means[0] == means[1]:
        means = np.array([means[0], means[0] + 1e-9])
    return HmmModel(pi0=pi0, A=A, means=means, variances=variances)


def state_sequence(model: HmmModel, xs):
    """Per-sample filtered MAP states (0 rest, 1 motion) over a series."""
    posts, _ = filter_sequence(model, xs)
    return (posts[:, 1] > posts[:, 0]).astype(int)
