"""Readout-pulse envelopes."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class Envelope:
    values: np.ndarray
    ramp_fraction: float

    def __len__(self) -> int:
        return len(self.values)

    @property
    def energy(self) -> float:
        return float(np.sum(self.values ** 2))


def cosine_edge_envelope(n: int, ramp_fraction: float) -> Envelope:
    """Square pulse with raised-cosine edges.

    The first ``r = round(ramp_fraction * n)`` samples rise as
    ``(1 - cos(pi k / r)) / 2``, the last ``r`` mirror them and the rest sit
    at 1. ``ramp_fraction`` is a fraction of the pulse length, so 0.25 means
    a quarter of the window is spent ramping up.
    """
    if n < 4:
        raise ValueError(f"envelope needs n >= 4, got {n}")
    if not 0.0 < ramp_fraction <= 0.5:
        raise ValueError(f"ramp_fraction must be in (0, 0.5], got {ramp_fraction}")
    r = max(1, int(round(ramp_fraction * n)))
    values = np.ones(n)
    rise = (1.0 - np.cos(np.pi * np.arange(r) / r)) / 2.0
    values[:r] = rise
    values[n - r:] = rise[::-1]
    return Envelope(values, ramp_fraction)


def write_envelope_csv(env: Envelope, path: str | Path) -> None:
    with open(path, "w") as f:
        f.write("value\n")
        for v in env.values:
            f.write(f"{float(v)!r}\n")
