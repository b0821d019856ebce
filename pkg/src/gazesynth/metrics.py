"""Distributional and temporal fidelity measures.

Divergences use base-2 logarithms, so the Jensen-Shannon divergence lies in
[0, 1]. Kurtosis is reported in the Pearson (non-excess) convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectral import EPS_SPEC, spectral_score

DEFAULT_BINS = 100
DEFAULT_EPS_H = 1e-10
KURTOSIS_CONVENTION = "pearson"


class IncompatibleBinningError(ValueError):
    pass


class DegenerateMomentsError(ValueError):
    """Raised for constant series; ``mean`` and ``std`` are still attached."""

    def __init__(self, message, mean, std):
        super().__init__(message)
        self.mean = mean
        self.std = std


@dataclass(frozen=True)
class HistogramDistribution:
    edges: np.ndarray
    masses: np.ndarray
    smoothed: bool = False

    @property
    def bins(self):
        return len(self.masses)

    def compatible_with(self, other):
        return self.edges.shape == other.edges.shape and np.array_equal(self.edges, other.edges)


def histogram(samples, bins=DEFAULT_BINS, value_range=None, eps_h=DEFAULT_EPS_H):
    """Uniform-bin probability masses.

    Bins are left-closed/right-open except the last, which is closed;
    samples outside ``value_range`` are clamped into the boundary bins.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("histogram of an empty sample")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if value_range is None:
        lo, hi = float(x.min()), float(x.max())
        if lo == hi:
            # a single repeated value: widen symmetrically so it lands in one bin
            lo, hi = lo - 0.5, hi + 0.5
    else:
        lo, hi = map(float, value_range)
        if not lo < hi:
            raise ValueError(f"histogram range needs lo < hi, got [{lo}, {hi}]")
    edges = np.linspace(lo, hi, bins + 1)
    idx = np.floor((x - lo) / (hi - lo) * bins).astype(np.int64)
    idx = np.clip(idx, 0, bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(np.float64)
    counts += eps_h
    return HistogramDistribution(edges, counts / counts.sum(), smoothed=eps_h > 0)


def _check(p, q):
    if isinstance(p, HistogramDistribution) and isinstance(q, HistogramDistribution):
        if not p.compatible_with(q):
            raise IncompatibleBinningError("histograms use different binning")
        return p.masses, q.masses
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise IncompatibleBinningError(f"distribution shapes differ: {p.shape} vs {q.shape}")
    return p, q


def _kl(p, q):
    nz = p > 0
    return float(np.sum(p[nz] * (np.log2(p[nz]) - np.log2(q[nz]))))


def kl_divergence(p, q):
    """D_KL(P || Q) in bits; terms with P_i = 0 contribute nothing."""
    p, q = _check(p, q)
    if np.any((p > 0) & (q <= 0)):
        raise ValueError("Q must be positive wherever P is")
    return _kl(p, q)


def js_divergence(p, q):
    """Jensen-Shannon divergence in bits (bounded by [0, 1], symmetric)."""
    p, q = _check(p, q)
    total = p + q

    def half(a):
        # KL(a || m) with m = total / 2, written so a subnormal mass cannot underflow m to zero
        nz = a > 0
        return float(np.sum(a[nz] * np.log2(2.0 * a[nz] / total[nz])))

    return 0.5 * (half(p) + half(q))


def js_between_samples(a, b, bins=DEFAULT_BINS, eps_h=DEFAULT_EPS_H):
    """D_JS of two samples on shared bins spanning the union of their ranges."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    lo = min(a.min(), b.min())
    hi = max(a.max(), b.max())
    rng = (lo, hi) if lo < hi else None
    if rng is None:
        return 0.0
    return js_divergence(histogram(a, bins, rng, eps_h), histogram(b, bins, rng, eps_h))


def acf(series, max_lag):
    """Sample autocorrelation ACF(0..max_lag), normalised by the lag-0 sum."""
    x = np.asarray(series, dtype=np.float64)
    n = x.size
    if not 0 <= max_lag < n:
        raise ValueError(f"max_lag must satisfy 0 <= max_lag < len(series) ({max_lag}, {n})")
    d = x - x.mean()
    denom = np.dot(d, d)
    if denom == 0:
        raise ValueError("ACF of a constant series is undefined")
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for h in range(1, max_lag + 1):
        out[h] = np.dot(d[:n - h], d[h:]) / denom
    return out


@dataclass(frozen=True)
class MeanAcf:
    values: np.ndarray
    n_used: int
    n_skipped: int


def acf_mean_over_sequences(sequences, max_lag):
    """Pointwise mean of per-sequence ACF curves; constant sequences are skipped."""
    curves, skipped = [], 0
    for s in sequences:
        s = np.asarray(s, dtype=np.float64)
        if s.size <= max_lag:
            raise ValueError(f"sequence of length {s.size} too short for max_lag {max_lag}")
        if np.all(s == s[0]):
            skipped += 1
            continue
        curves.append(acf(s, max_lag))
    if not curves:
        raise ValueError("no non-constant sequences to average")
    return MeanAcf(np.mean(curves, axis=0), len(curves), skipped)


@dataclass(frozen=True)
class Moments:
    mean: float
    std: float
    skewness: float
    kurtosis: float

    def as_dict(self):
        return {"mean": self.mean, "std": self.std, "skewness": self.skewness, "kurtosis": self.kurtosis}


def moments(series):
    x = np.asarray(series, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("moments need at least 2 samples")
    mu = float(x.mean())
    std = float(x.std(ddof=1))
    d = x - mu
    m2 = np.mean(d * d)
    if m2 == 0:
        raise DegenerateMomentsError("skewness/kurtosis undefined for a constant series", mu, std)
    skew = float(np.mean(d ** 3) / m2 ** 1.5)
    kurt = float(np.mean(d ** 4) / m2 ** 2)
    return Moments(mu, std, skew, kurt)


@dataclass
class EvaluationReport:
    real_moments: Moments
    synthetic_moments: Moments
    d_js: float
    spectral_score: float
    lags: np.ndarray
    acf_real: np.ndarray
    acf_synthetic: np.ndarray
    settings: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "moments": {"real": self.real_moments.as_dict(), "synthetic": self.synthetic_moments.as_dict()},
            "d_js": self.d_js,
            "spectral_score": self.spectral_score,
            "acf": {
                "lags": [int(v) for v in self.lags],
                "real": [float(v) for v in self.acf_real],
                "synthetic": [float(v) for v in self.acf_synthetic],
            },
            "settings": dict(self.settings),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            real_moments=Moments(**d["moments"]["real"]),
            synthetic_moments=Moments(**d["moments"]["synthetic"]),
            d_js=float(d["d_js"]),
            spectral_score=float(d["spectral_score"]),
            lags=np.asarray(d["acf"]["lags"], dtype=np.int64),
            acf_real=np.asarray(d["acf"]["real"], dtype=np.float64),
            acf_synthetic=np.asarray(d["acf"]["synthetic"], dtype=np.float64),
            settings=dict(d["settings"]),
        )


class SideError(ValueError):
    """A metric failed on one side of the comparison."""


def _as_sequences(data):
    if isinstance(data, np.ndarray):
        return [row for row in np.atleast_2d(data)]
    return [np.asarray(s, dtype=np.float64) for s in data]


def evaluation_report(real, synthetic, bins=DEFAULT_BINS, eps_h=DEFAULT_EPS_H, max_lag=None, eps_spec=EPS_SPEC):
    """Compare two sets of sequences on moments, D_JS, spectral score and mean ACF."""
    real_seqs, syn_seqs = _as_sequences(real), _as_sequences(synthetic)
    if not real_seqs or not syn_seqs:
        raise ValueError("both sequence sets must be non-empty")
    pooled_real = np.concatenate(real_seqs)
    pooled_syn = np.concatenate(syn_seqs)
    common = min(min(len(s) for s in real_seqs), min(len(s) for s in syn_seqs))
    if max_lag is None:
        max_lag = min(50, common - 1)

    results = {}
    for side, pooled, seqs in (("real", pooled_real, real_seqs), ("synthetic", pooled_syn, syn_seqs)):
        try:
            results[side] = (moments(pooled), acf_mean_over_sequences(seqs, max_lag))
        except ValueError as exc:
            raise SideError(f"{side}: {exc}") from exc

    d_js = js_between_samples(pooled_real, pooled_syn, bins, eps_h)
    score = spectral_score(
        np.stack([s[:common] for s in real_seqs]), np.stack([s[:common] for s in syn_seqs]), eps_spec
    )
    settings = {
        "bins": bins,
        "eps_h": eps_h,
        "range": [float(min(pooled_real.min(), pooled_syn.min())), float(max(pooled_real.max(), pooled_syn.max()))],
        "max_lag": int(max_lag),
        "eps_spec": eps_spec,
        "spectral_length": int(common),
        "n_real_sequences": len(real_seqs),
        "n_synthetic_sequences": len(syn_seqs),
        "n_real_values": int(pooled_real.size),
        "n_synthetic_values": int(pooled_syn.size),
        "acf_skipped": {"real": results["real"][1].n_skipped, "synthetic": results["synthetic"][1].n_skipped},
        "kurtosis": KURTOSIS_CONVENTION,
        "log_base": 2,
    }
    return EvaluationReport(
        real_moments=results["real"][0],
        synthetic_moments=results["synthetic"][0],
        d_js=d_js,
        spectral_score=score,
        lags=np.arange(max_lag + 1),
        acf_real=results["real"][1].values,
        acf_synthetic=results["synthetic"][1].values,
        settings=settings,
    )
