"""Digital local oscillator mixing, accumulation and weighted-DLO calibration.

Calibration runs in this order: mix every labelled shot with the plain
(square-envelope) DLO, smooth each mixed series with an EMA, average per
state, derive weights from the difference of the two mean trajectories, then
re-mix with the weighted DLO.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import DegenerateWeightsError, ReadoutError
from .iqsim import EXCITED, GROUND, IQShot, RawShot

DEFAULT_ALPHA = 0.01


@dataclass
class MixedSeries:
    values: np.ndarray
    label: int | None = None


@dataclass(frozen=True)
class WeightVector:
    w: np.ndarray
    normalization: float

    def __len__(self) -> int:
        return len(self.w)


def dlo(n: int, f_dlo: float, sample_rate: float, phase: float = 0.0,
        weights: WeightVector | None = None) -> np.ndarray:
    """The (optionally weighted) complex local oscillator ``w * e^{-j(wt+phi)}``."""
    if f_dlo <= 0:
        raise ValueError("f_dlo must be > 0")
    t = np.arange(n)
    lo = np.exp(-1j * (2 * np.pi * f_dlo * t / sample_rate + phase))
    if weights is not None:
        if len(weights) != n:
            raise ReadoutError(f"weight length {len(weights)} != shot length {n}")
        lo = weights.w * lo
    return lo


def mix(shot: RawShot, f_dlo: float, phase: float = 0.0,
        weights: WeightVector | None = None, *, sample_rate: float) -> MixedSeries:
    lo = dlo(len(shot.samples), f_dlo, sample_rate, phase, weights)
    return MixedSeries(lo * shot.samples, shot.label)


def mix_batch(samples: np.ndarray, f_dlo: float, phase: float = 0.0,
              weights: WeightVector | None = None, *, sample_rate: float) -> np.ndarray:
    """Mix a (shots, N) block of raw samples; returns complex (shots, N)."""
    return samples * dlo(samples.shape[-1], f_dlo, sample_rate, phase, weights)


def accumulate(ms: MixedSeries) -> IQShot:
    if len(ms.values) == 0:
        raise ReadoutError("cannot accumulate an empty series")
    z = ms.values.sum()
    return IQShot(float(z.real), float(z.imag), ms.label)


def accumulate_batch(samples: np.ndarray, f_dlo: float, phase: float = 0.0,
                     weights: WeightVector | None = None, *,
                     sample_rate: float) -> np.ndarray:
    """Demodulate-and-integrate a (shots, N) block straight to (shots, 2) IQ."""
    lo = dlo(samples.shape[-1], f_dlo, sample_rate, phase, weights)
    z = samples @ lo
    return np.column_stack([z.real, z.imag])


def ema(series: np.ndarray, alpha: float = DEFAULT_ALPHA, axis: int = -1) -> np.ndarray:
    """out[0] = x[0]; out[t] = alpha*x[t] + (1-alpha)*out[t-1]."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must be in (0, 1], got {alpha}")
    x = np.asarray(series)
    if alpha == 1.0:
        return x.copy()
    x0 = np.take(x, [0], axis=axis)
    # start the filter state so that out[0] == x[0]
    zi = (1.0 - alpha) * x0
    out, _ = lfilter([alpha], [1.0, -(1.0 - alpha)], x, axis=axis, zi=zi)
    return out


class TrajectoryAccumulator:
    """Streaming per-state mean of EMA-smoothed mixed series."""

    def __init__(self, n: int, alpha: float = DEFAULT_ALPHA):
        self.alpha = alpha
        self.sums = np.zeros((2, n), dtype=complex)
        self.counts = [0, 0]

    def add(self, mixed: np.ndarray, label: int) -> None:
        mixed = np.atleast_2d(mixed)
        self.sums[label] += ema(mixed, self.alpha, axis=1).sum(axis=0)
        self.counts[label] += mixed.shape[0]

    def means(self) -> tuple[np.ndarray, np.ndarray]:
        for label in (GROUND, EXCITED):
            if self.counts[label] == 0:
                raise ReadoutError(f"no calibration shots for state {label}")
        return self.sums[0] / self.counts[0], self.sums[1] / self.counts[1]


def mean_trajectories(shots, alpha: float = DEFAULT_ALPHA) -> tuple[np.ndarray, np.ndarray]:
    """Per-state mean of EMA-smoothed mixed series.

    ``shots`` is an iterable of labelled MixedSeries.
    """
    acc = None
    for ms in shots:
        if ms.label is None:
            raise ReadoutError("calibration shots must be labelled")
        if acc is None:
            acc = TrajectoryAccumulator(len(ms.values), alpha)
        elif len(ms.values) != acc.sums.shape[1]:
            raise ReadoutError("calibration shots differ in length")
        acc.add(ms.values, ms.label)
    if acc is None:
        raise ReadoutError("no calibration shots")
    return acc.means()


def derive_weights(trj0: np.ndarray, trj1: np.ndarray) -> WeightVector:
    """Matched-filter weights ``conj(trj1 - trj0)`` scaled to unit peak."""
    trj0, trj1 = np.asarray(trj0), np.asarray(trj1)
    if trj0.shape != trj1.shape:
        raise ReadoutError("trajectories differ in length")
    diff = trj1 - trj0
    peak = float(np.max(np.abs(diff))) if diff.size else 0.0
    if not peak > 0.0 or not np.isfinite(peak):
        raise DegenerateWeightsError("mean trajectories are identical; no weights to derive")
    return WeightVector(np.conj(diff) / peak, peak)


def weights_csv_text(wv: WeightVector) -> str:
    lines = ["index,re,im"]
    lines += [f"{k},{float(z.real)!r},{float(z.imag)!r}" for k, z in enumerate(wv.w)]
    return "\n".join(lines) + "\n"


def write_weights_csv(wv: WeightVector, path: str | Path) -> None:
    Path(path).write_text(weights_csv_text(wv))


def read_weights_csv(path: str | Path) -> WeightVector:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    w = data[:, 1] + 1j * data[:, 2]
    return WeightVector(w, 1.0)
