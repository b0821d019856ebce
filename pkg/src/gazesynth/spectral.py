"""Discrete Fourier transform, log-magnitude spectra and the spectral loss.

The DFT is evaluated by direct summation against cached cosine/sine matrices.
At the sequence lengths used here (a few hundred samples) this is cheap, and
the same matrices let the transform enter the tape as a plain linear map.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .neural.tape import ContractError, Tensor, as_tensor, log, magnitude, mean

EPS_SPEC = 1e-8


@dataclass(frozen=True)
class Spectrum:
    """DFT coefficients of a real series, split into real and imaginary parts."""

    real: np.ndarray
    imag: np.ndarray

    @property
    def n(self):
        return self.real.shape[-1]

    @property
    def coefficients(self):
        return self.real + 1j * self.imag

    @property
    def magnitude(self):
        return np.hypot(self.real, self.imag)


@lru_cache(maxsize=32)
def dft_matrices(n):
    """Return (cos, -sin) matrices C, S with F = x @ C + i x @ S.

    Phases are reduced with exact integer arithmetic (k*n mod N) so that
    quarter-turn phases get exact 0 and +-1 entries.
    """
    k = np.arange(n)
    phase = np.outer(k, k) % n
    angle = 2.0 * np.pi * phase / n
    cos = np.cos(angle)
    sin = -np.sin(angle)
    half_turns = (2 * phase) % n == 0
    quarter_turns = ((4 * phase) % n == 0) & ~half_turns
    sin[half_turns] = 0.0
    cos[half_turns] = np.round(cos[half_turns])
    cos[quarter_turns] = 0.0
    sin[quarter_turns] = np.round(sin[quarter_turns])
    cos.setflags(write=False)
    sin.setflags(write=False)
    return cos, sin


def dft(x):
    """DFT of a real series (or of each row of a 2-D array)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] == 0:
        raise ValueError("dft of an empty series")
    if not np.all(np.isfinite(x)):
        raise ValueError("dft input must be finite")
    cos, sin = dft_matrices(x.shape[-1])
    return Spectrum(x @ cos, x @ sin)


def log_magnitude(spec, eps_spec=EPS_SPEC):
    if not eps_spec > 0:
        raise ValueError("eps_spec must be positive")
    return np.log(spec.magnitude + eps_spec)


def _batch_log_spectrum(batch, eps_spec):
    cos, sin = dft_matrices(batch.shape[-1])
    re = batch @ Tensor(cos)
    im = batch @ Tensor(sin)
    return mean(log(magnitude(re, im) + eps_spec), axis=0)


def spectral_loss(real_batch, gen_batch, eps_spec=EPS_SPEC):
    """Sum over all N bins of the squared difference of batch-mean log-magnitude spectra.

    ``real_batch`` is treated as a constant; the result is differentiable with
    respect to ``gen_batch`` (shape B x N).
    """
    real = np.asarray(real_batch.data if isinstance(real_batch, Tensor) else real_batch, dtype=np.float64)
    gen = as_tensor(gen_batch)
    if real.ndim == 1:
        real = real[None, :]
    if gen.ndim == 1:
        gen = gen.reshape(1, -1)
    if real.shape[0] == 0 or gen.shape[0] == 0:
        raise ValueError("spectral loss needs non-empty batches")
    if real.shape[-1] != gen.shape[-1]:
        raise ContractError(f"sequence length mismatch: {real.shape[-1]} vs {gen.shape[-1]}")
    target = log_magnitude(dft(real), eps_spec).mean(axis=0)
    diff = _batch_log_spectrum(gen, eps_spec) - target
    return (diff * diff).sum()


def spectral_score(real_batch, gen_batch, eps_spec=EPS_SPEC):
    """Non-differentiable evaluation of the spectral loss on numpy batches."""
    real = np.atleast_2d(np.asarray(real_batch, dtype=np.float64))
    gen = np.atleast_2d(np.asarray(gen_batch, dtype=np.float64))
    if real.shape[-1] != gen.shape[-1]:
        raise ContractError(f"sequence length mismatch: {real.shape[-1]} vs {gen.shape[-1]}")
    a = log_magnitude(dft(real), eps_spec).mean(axis=0)
    b = log_magnitude(dft(gen), eps_spec).mean(axis=0)
    return float(np.sum((a - b) ** 2))
