"""Markov-family baselines: Gaussian-emission HMMs and a k-th order KDE Markov model.

HMMs are fitted with Baum-Welch on top of a scaled forward-backward pass.
The KDE model estimates p(x_n | x_{n-1}, ..., x_{n-k}) as a ratio of Gaussian
product-kernel densities with a Silverman bandwidth.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .metrics import DEFAULT_BINS, DEFAULT_EPS_H, js_between_samples

log = logging.getLogger(__name__)

VARIANCE_FLOOR = 1e-10
SUPPORT_FLOOR = 1e-300
_LOG_2PI = np.log(2.0 * np.pi)


class HmmError(ValueError):
    pass


class FittingError(RuntimeError):
    pass


class DegenerateBandwidthError(ValueError):
    pass


class UnsupportedHistoryError(ValueError):
    pass


# hidden Markov model ---------------------------------------------------------------

@dataclass
class HmmModel:
    pi: np.ndarray
    A: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.pi = np.asarray(self.pi, dtype=np.float64)
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)

    @property
    def n_states(self):
        return len(self.pi)

    def validate(self, floor=VARIANCE_FLOOR):
        n = self.n_states
        if self.A.shape != (n, n) or self.means.shape != (n,) or self.variances.shape != (n,):
            raise HmmError("inconsistent HMM parameter shapes")
        if np.any(self.pi < 0) or abs(self.pi.sum() - 1.0) > 1e-10:
            raise HmmError("initial distribution must be non-negative and sum to 1")
        if np.any(self.A < 0) or np.any(np.abs(self.A.sum(axis=1) - 1.0) > 1e-10):
            raise HmmError("transition rows must be non-negative and sum to 1")
        if np.any(self.variances < floor) or not np.all(np.isfinite(self.means)):
            raise HmmError(f"emission variances must be >= {floor} and means finite")
        return self

    def log_emissions(self, obs):
        """log N(o_t; mu_i, sigma_i^2) as a (T, N) array."""
        o = np.asarray(obs, dtype=np.float64)[:, None]
        return -0.5 * (_LOG_2PI + np.log(self.variances) + (o - self.means) ** 2 / self.variances)

    def stationary(self):
        """Stationary distribution of A (left eigenvector for eigenvalue 1)."""
        w, v = np.linalg.eig(self.A.T)
        p = np.real(v[:, np.argmin(np.abs(w - 1.0))])
        return p / p.sum()

    def to_dict(self):
        return {"pi": self.pi.tolist(), "A": self.A.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["pi"], d["A"], d["means"], d["variances"])


@dataclass
class ForwardBackwardResult:
    alpha: np.ndarray  # scaled forward variables, rows sum to 1
    beta: np.ndarray  # scaled backward variables
    log_scales: np.ndarray  # log c_t
    log_likelihood: float
    gamma: np.ndarray  # (T, N)
    xi: np.ndarray  # (T-1, N, N)

    @property
    def scales(self):
        return np.exp(self.log_scales)


def hmm_forward_backward(model, obs):
    """Scaled forward-backward pass.

    With ``c_t = 1 / sum_i alpha~_t(i)`` the scaled forward rows sum to one and
    ``log P(O) = -sum_t log c_t``. Emission densities are shifted by their
    per-step maximum before exponentiation; the shift is folded into ``c_t``.
    """
    obs = np.asarray(obs, dtype=np.float64)
    T = len(obs)
    if T == 0:
        raise HmmError("empty observation sequence")
    model.validate()
    N = model.n_states
    logb = model.log_emissions(obs)
    shift = logb.max(axis=1)
    b = np.exp(logb - shift[:, None])
    A = model.A

    alpha = np.empty((T, N))
    norm = np.empty(T)
    a = model.pi * b[0]
    for t in range(T):
        if t:
            a = (alpha[t - 1] @ A) * b[t]
        s = a.sum()
        if not s > 0:
            raise FittingError(f"forward pass underflow at t={t}")
        norm[t] = s
        alpha[t] = a / s

    beta = np.empty((T, N))
    beta[-1] = 1.0
    for t in range(T - 2, -1, -1):
        beta[t] = (A @ (b[t + 1] * beta[t + 1])) / norm[t + 1]

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)
    if T > 1:
        xi = alpha[:-1, :, None] * A[None] * (b[1:] * beta[1:])[:, None, :] / norm[1:, None, None]
        xi /= xi.sum(axis=(1, 2), keepdims=True)
    else:
        xi = np.empty((0, N, N))
    log_scales = -(np.log(norm) + shift)
    return ForwardBackwardResult(alpha, beta, log_scales, float(-log_scales.sum()), gamma, xi)


def brute_force_log_likelihood(model, obs):
    """log P(O) by enumerating all N^T state paths with the joint probability."""
    import itertools

    obs = np.asarray(obs, dtype=np.float64)
    logb = model.log_emissions(obs)
    logA = np.log(model.A)
    logpi = np.log(model.pi)
    terms = []
    for path in itertools.product(range(model.n_states), repeat=len(obs)):
        lp = logpi[path[0]] + logb[0, path[0]]
        for t in range(1, len(obs)):
            lp += logA[path[t - 1], path[t]] + logb[t, path[t]]
        terms.append(lp)
    return float(logsumexp(terms))


@dataclass(frozen=True)
class InitSpec:
    """How Baum-Welch starts: ``quantile`` (default), ``random`` or an explicit ``model``."""

    kind: str = "quantile"
    seed: int | None = None
    model: HmmModel | None = None
    self_transition: float = 0.9


def _as_sequences(obs):
    if isinstance(obs, np.ndarray) and obs.ndim == 1:
        return [obs.astype(np.float64)]
    return [np.asarray(s, dtype=np.float64).ravel() for s in obs]


def initial_model(obs, n_states, init=InitSpec()):
    x = np.concatenate(_as_sequences(obs))
    if init.kind == "model":
        return init.model
    var = max(float(x.var()), VARIANCE_FLOOR)
    n = n_states
    if n == 1:
        A = np.ones((1, 1))
    else:
        A = np.full((n, n), (1.0 - init.self_transition) / (n - 1))
        np.fill_diagonal(A, init.self_transition)
    if init.kind == "quantile":
        means = np.quantile(x, (np.arange(n) + 0.5) / n)
        return HmmModel(np.full(n, 1.0 / n), A, means, np.full(n, var))
    if init.kind == "random":
        rng = np.random.default_rng(init.seed)
        pi = rng.dirichlet(np.ones(n))
        A = rng.dirichlet(np.ones(n), size=n)
        means = rng.choice(x, size=n, replace=False) if len(x) >= n else rng.choice(x, size=n)
        variances = var * rng.uniform(0.5, 1.5, size=n)
        return HmmModel(pi, A, means, variances)
    raise ValueError(f"unknown init kind {init.kind!r}")


@dataclass
class BaumWelchResult:
    model: HmmModel
    trace: list
    converged: bool
    n_iter: int
    reseeds: list = field(default_factory=list)  # (iteration, state) pairs

    @property
    def log_likelihood(self):
        return self.trace[-1]


def _m_step(results, seqs, n_states, floor, rng, reseeds, iteration, pooled):
    gamma_sum = sum(r.gamma.sum(axis=0) for r in results)
    pi = sum(r.gamma[0] for r in results) / len(results)
    trans_num = sum(r.xi.sum(axis=0) for r in results)
    trans_den = sum(r.gamma[:-1].sum(axis=0) for r in results)
    weighted = sum(r.gamma.T @ o for r, o in zip(results, seqs))

    dead = gamma_sum < 1e-10 * max(len(pooled), 1)
    means = weighted / np.where(dead, 1.0, gamma_sum)
    sq = sum(((o[:, None] - means) ** 2 * r.gamma).sum(axis=0) for r, o in zip(results, seqs))
    variances = np.maximum(sq / np.where(dead, 1.0, gamma_sum), floor)

    A = np.empty((n_states, n_states))
    for i in range(n_states):
        if trans_den[i] > 0:
            A[i] = trans_num[i] / trans_den[i]
            A[i] /= A[i].sum()
        else:
            A[i] = 1.0 / n_states
    for i in np.flatnonzero(dead):
        means[i] = rng.choice(pooled)
        variances[i] = max(float(pooled.var()), floor)
        reseeds.append((iteration, int(i)))
        log.warning("Baum-Welch: state %d collapsed at iteration %d; re-seeded", i, iteration)
    pi = pi / pi.sum()
    return HmmModel(pi, A, means, variances)


def hmm_baum_welch(obs, n_states, init=InitSpec(), tol=1e-6, max_iter=500, floor=VARIANCE_FLOOR, seed=0):
    """Fit a Gaussian HMM by EM.

    ``obs`` is a 1-D series or a list of series (sufficient statistics are
    pooled). Stops when the log-likelihood gain falls below ``tol`` or after
    ``max_iter`` M-steps; ``trace[i]`` is the log-likelihood after ``i``
    M-steps, and the returned model matches ``trace[-1]``.
    """
    seqs = _as_sequences(obs)
    pooled = np.concatenate(seqs)
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    if len(pooled) <= n_states:
        raise ValueError("need more observations than states")
    if not tol > 0:
        raise ValueError("tol must be positive")
    rng = np.random.default_rng(seed)
    model = initial_model(seqs, n_states, init)
    model.variances = np.maximum(model.variances, floor)

    def e_step(m):
        res = [hmm_forward_backward(m, o) for o in seqs]
        ll = float(sum(r.log_likelihood for r in res))
        if not np.isfinite(ll):
            raise FittingError("non-finite log-likelihood")
        return res, ll

    results, ll = e_step(model)
    trace = [ll]
    reseeds = []
    converged = False
    n_iter = 0
    for it in range(1, max_iter + 1):
        model = _m_step(results, seqs, n_states, floor, rng, reseeds, it, pooled)
        results, ll = e_step(model)
        trace.append(ll)
        n_iter = it
        if trace[-1] - trace[-2] < tol:
            converged = True
            break
    return BaumWelchResult(model, trace, converged, n_iter, reseeds)


def hmm_sample_states(model, length, seed):
    """Sample ``(values, states)``: q_1 ~ pi, q_t ~ A[q_{t-1}], o_t ~ N(mu_q, sigma_q^2)."""
    if length < 0:
        raise ValueError("length must be >= 0")
    model.validate()
    rng = np.random.default_rng(seed)
    if length == 0:
        return np.empty(0), np.empty(0, dtype=np.int64)
    u = rng.random(length)
    cum_pi, cum_A = np.cumsum(model.pi), np.cumsum(model.A, axis=1)
    last = model.n_states - 1
    states = np.empty(length, dtype=np.int64)
    s = min(int(np.searchsorted(cum_pi, u[0], side="right")), last)
    states[0] = s
    for t in range(1, length):
        s = min(int(np.searchsorted(cum_A[s], u[t], side="right")), last)
        states[t] = s
    values = model.means[states] + np.sqrt(model.variances[states]) * rng.standard_normal(length)
    return values, states


def hmm_sample(model, length, seed):
    """Sample an observation series of the given length; deterministic per seed."""
    return hmm_sample_states(model, length, seed)[0]


@dataclass
class StateSelection:
    table: dict  # n_states -> D_JS
    selected: int
    fits: dict = field(repr=False, default_factory=dict)

    def rows(self):
        return [(k, self.table[k]) for k in sorted(self.table)]


def hmm_state_selection(obs, state_range=range(2, 6), tol=1e-6, max_iter=500, bins=DEFAULT_BINS,
                        eps_h=DEFAULT_EPS_H, seed=0):
    """Fit one HMM per state count and pick the count whose sample is closest in D_JS."""
    counts = list(state_range)
    if not counts:
        raise ValueError("state range is empty")
    seqs = _as_sequences(obs)
    pooled = np.concatenate(seqs)
    table, fits = {}, {}
    for n in counts:
        try:
            fit = hmm_baum_welch(seqs, n, tol=tol, max_iter=max_iter, seed=seed)
        except Exception as exc:
            raise FittingError(f"{n} states: {exc}") from exc
        sample_seed = int(np.random.SeedSequence([seed, n]).generate_state(1)[0])
        synthetic = hmm_sample(fit.model, len(pooled), sample_seed)
        table[n] = js_between_samples(pooled, synthetic, bins, eps_h)
        fits[n] = fit
    selected = min(counts, key=lambda n: table[n])
    return StateSelection(table, selected, fits)


# k-th order KDE Markov model ---------------------------------------------------------

def silverman_bandwidth(series, order):
    """h = 1.06 * sigma * N^(-1/(k+4)) with the unbiased sample standard deviation."""
    x = np.asarray(series, dtype=np.float64)
    if len(x) < 2:
        raise ValueError("Silverman's rule needs at least 2 samples")
    sigma = float(x.std(ddof=1))
    if sigma == 0:
        raise DegenerateBandwidthError("constant series gives zero bandwidth")
    return 1.06 * sigma * len(x) ** (-1.0 / (order + 4))


def gaussian_kernel(u):
    return np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)


@dataclass
class KdeMarkovModel:
    """Training windows stored as rows (X_i, X_{i-1}, ..., X_{i-k})."""

    order: int
    bandwidth: float
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if len(self.data) <= self.order:
            raise ValueError("need more data points than the order")
        k = self.order
        n = len(self.data)
        self.windows = np.column_stack([self.data[k - j:n - j] for j in range(k + 1)])

    @property
    def n_windows(self):
        return len(self.windows)

    def history_log_weights(self, history):
        """log prod_j K((h_j - X_{i-j}) / h) for every window i (history most recent first)."""
        hist = np.asarray(history, dtype=np.float64)
        if hist.shape != (self.order,):
            raise ValueError(f"history must have length {self.order}")
        u = (hist - self.windows[:, 1:]) / self.bandwidth
        return -0.5 * np.sum(u * u, axis=1) - 0.5 * self.order * np.log(2.0 * np.pi)

    def summary(self):
        return {"order": self.order, "bandwidth": self.bandwidth, "n_data": int(len(self.data)),
                "n_windows": int(self.n_windows), "kernel": "gaussian"}


def fit_kde_markov(series, order=1, bandwidth=None):
    x = np.asarray(series, dtype=np.float64)
    h = silverman_bandwidth(x, order) if bandwidth is None else bandwidth
    return KdeMarkovModel(order, h, x)


def kde_joint_density(model, point):
    """f(x_n, x_{n-1}, ..., x_{n-k}) for a (k+1)-vector ordered most recent first."""
    p = np.asarray(point, dtype=np.float64)
    k, h = model.order, model.bandwidth
    if p.shape != (k + 1,):
        raise ValueError(f"point must have length {k + 1}")
    u = (p - model.windows) / h
    return float(np.sum(np.prod(gaussian_kernel(u), axis=1)) / (model.n_windows * h ** (k + 1)))


def kde_marginal_density(model, history):
    """f(x_{n-1}, ..., x_{n-k}) from the same windows as the joint density."""
    lw = model.history_log_weights(history)
    return float(np.exp(logsumexp(lw)) / (model.n_windows * model.bandwidth ** model.order))


def _log_marginal(model, lw):
    return logsumexp(lw) - np.log(model.n_windows) - model.order * np.log(model.bandwidth)


def kde_conditional_density(model, history, x):
    """p(x | history) = joint / marginal; a Gaussian mixture centred on the windows' X_i."""
    lw = model.history_log_weights(history)
    if _log_marginal(model, lw) < np.log(SUPPORT_FLOOR):
        raise UnsupportedHistoryError("marginal density at the history is below the support floor")
    w = np.exp(lw - logsumexp(lw))
    xs = np.atleast_1d(np.asarray(x, dtype=np.float64))
    h = model.bandwidth
    dens = gaussian_kernel((xs[:, None] - model.windows[None, :, 0]) / h) @ w / h
    return dens if np.ndim(x) else float(dens[0])


def kde_conditional_sample(model, history, size, rng):
    """Draw ``size`` values from p(. | history) by mixture selection."""
    lw = model.history_log_weights(history)
    if _log_marginal(model, lw) < np.log(SUPPORT_FLOOR):
        raise UnsupportedHistoryError("marginal density at the history is below the support floor")
    w = np.exp(lw - logsumexp(lw))
    idx = rng.choice(model.n_windows, size=size, p=w)
    return model.windows[idx, 0] + model.bandwidth * rng.standard_normal(size)


@dataclass
class KdeSample:
    values: np.ndarray
    fallback_steps: list  # indices where the history left the data support


def kde_markov_sample(model, length, seed, initial_history=None):
    """Generate a series whose first k values are the initial history (oldest first).

    Each later value is drawn from the conditional KDE given the previous k
    values. If the history has no support, the step is drawn from the marginal
    KDE instead and its index recorded in ``fallback_steps``.
    """
    k = model.order
    if length < k:
        raise ValueError(f"length must be >= order ({k})")
    rng = np.random.default_rng(seed)
    init = model.data[:k] if initial_history is None else np.asarray(initial_history, dtype=np.float64)
    if init.shape != (k,):
        raise ValueError(f"initial history must have length {k}")
    out = np.empty(length)
    out[:k] = init
    fallbacks = []
    centres = model.windows[:, 0]
    h = model.bandwidth
    log_norm = np.log(model.n_windows) + k * np.log(h)
    floor = np.log(SUPPORT_FLOOR)
    for n in range(k, length):
        lw = model.history_log_weights(out[n - k:n][::-1])
        top = lw.max()
        cdf = np.cumsum(np.exp(lw - top))
        if top + np.log(cdf[-1]) - log_norm < floor:
            i = rng.integers(model.n_windows)
            fallbacks.append(n)
        else:
            i = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), model.n_windows - 1)
        out[n] = centres[i] + h * rng.standard_normal()
    return KdeSample(out, fallbacks)
