"""Ensemble Empirical Mode Decomposition.

Sifting uses cubic-spline upper/lower envelopes over mirror-extended
extrema, the classic aggregate standard-deviation stop criterion
(threshold 0.2, at most 10 sifts per component) and at most
``floor(log2(n))`` components.  Ensemble members perturb the input with
seeded white noise; their component stacks are averaged, and the residue
is defined as the input minus the summed components so that
reconstruction is exact even after averaging.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ValidationError
from .parallel import parallel_map

logger = logging.getLogger(__name__)

SD_THRESHOLD = 0.2
MAX_SIFTS = 10


@dataclass(frozen=True)
class DecompositionMeta:
    ensemble_size: int
    noise_amplitude: float
    sd_threshold: float
    max_sifts: int
    max_imfs: int
    seed: int


@dataclass(frozen=True)
class Decomposition:
    """Ordered oscillatory components (fast to slow) plus a residue."""

    imfs: tuple[np.ndarray, ...]
    residue: np.ndarray
    meta: DecompositionMeta

    def __post_init__(self):
        n = self.residue.size
        for k, c in enumerate(self.imfs):
            if c.size != n:
                raise ValidationError(f"component {k} has length {c.size}, residue has {n}")

    @property
    def n_imfs(self) -> int:
        return len(self.imfs)


def recompose(d: Decomposition) -> np.ndarray:
    """Sum all components and the residue (exact reconstruction)."""
    out = d.residue.copy()
    for c in d.imfs:
        out += c
    return out


def _local_extrema(x: np.ndarray):
    interior = np.arange(1, x.size - 1)
    prev, mid, nxt = x[:-2], x[1:-1], x[2:]
    maxima = interior[(mid > prev) & (mid > nxt)]
    minima = interior[(mid < prev) & (mid < nxt)]
    return maxima, minima


def _envelope(pts_x: np.ndarray, pts_y: np.ndarray, n: int, offset: int) -> np.ndarray:
    t = np.arange(n)
    if pts_x.size >= 4:
        return CubicSpline(pts_x - offset, pts_y)(t)
    return np.interp(t, pts_x - offset, pts_y)


def _mean_envelope(h: np.ndarray):
    """Average of upper/lower spline envelopes with mirror-extended boundaries."""
    n = h.size
    pad = min(n - 1, max(16, n // 2))
    ext = np.concatenate([h[1:pad + 1][::-1], h, h[-pad - 1:-1][::-1]])
    maxima, minima = _local_extrema(ext)
    if maxima.size < 2 or minima.size < 2:
        return None
    upper = _envelope(maxima, ext[maxima], n, pad)
    lower = _envelope(minima, ext[minima], n, pad)
    return 0.5 * (upper + lower)


def _sift_member(x: np.ndarray, sd_threshold: float, max_sifts: int, max_imfs: int):
    imfs = []
    residual = x.copy()
    while len(imfs) < max_imfs:
        maxima, minima = _local_extrema(residual)
        if maxima.size < 2 or minima.size < 2:
            break
        h = residual.copy()
        for _ in range(max_sifts):
            env = _mean_envelope(h)
            if env is None:
                break
            h_new = h - env
            denom = float(h @ h)
            if denom == 0.0:
                h = h_new
                break
            sd = float((h - h_new) @ (h - h_new)) / denom
            h = h_new
            if sd < sd_threshold:
                break
        imfs.append(h)
        residual = residual - h
    return imfs


def _eemd_member(args):
    x, amp, seed, member, sd_threshold, max_sifts, max_imfs = args
    if amp > 0:
        rng = np.random.default_rng([seed, member])
        noisy = x + amp * rng.standard_normal(x.size)
    else:
        noisy = x.copy()
    return _sift_member(noisy, sd_threshold, max_sifts, max_imfs)


def eemd(x, ensemble_size: int = 50, noise_amplitude: float | None = None,
         seed: int = 0, *, sd_threshold: float = SD_THRESHOLD,
         max_sifts: int = MAX_SIFTS, max_imfs: int | None = None,
         jobs: int = 1) -> Decomposition:
    """Decompose a series into averaged oscillatory components plus residue.

    Parameters
    ----------
    x : array_like
        Input series, at least 16 finite samples.
    ensemble_size : int
        Number of noise realizations to average (>= 1).
    noise_amplitude : float or None
        Standard deviation of the added white noise; defaults to
        ``0.2 * std(x)``.  Zero gives plain (single-member) sifting.
    seed : int
        Member ``m`` draws its noise from a generator keyed ``(seed, m)``,
        so results are independent of ``jobs`` and bit-reproducible.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size < 16:
        raise ValidationError(f"eemd needs a 1-D series of length >= 16, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValidationError("eemd input contains non-finite values")
    if ensemble_size < 1:
        raise ValidationError("ensemble_size must be >= 1")
    if noise_amplitude is None:
        noise_amplitude = 0.2 * float(x.std())
    if noise_amplitude < 0:
        raise ValidationError("noise_amplitude must be >= 0")
    if max_imfs is None:
        max_imfs = int(math.floor(math.log2(x.size)))

    members = 1 if noise_amplitude == 0 else ensemble_size
    work = [
        (x, noise_amplitude, seed, m, sd_threshold, max_sifts, max_imfs)
        for m in range(members)
    ]
    stacks = parallel_map(_eemd_member, work, jobs=jobs)

    n_imfs = max((len(s) for s in stacks), default=0)
    imfs = []
    for k in range(n_imfs):
        acc = np.zeros(x.size)
        for s in stacks:
            if k < len(s):
                acc += s[k]
        imfs.append(acc / len(stacks))
    residue = x - np.sum(imfs, axis=0) if imfs else x.copy()
    logger.debug("eemd: %d members -> %d components", members, n_imfs)

    meta = DecompositionMeta(
        ensemble_size=ensemble_size,
        noise_amplitude=float(noise_amplitude),
        sd_threshold=sd_threshold,
        max_sifts=max_sifts,
        max_imfs=max_imfs,
        seed=seed,
    )
    return Decomposition(imfs=tuple(imfs), residue=residue, meta=meta)
