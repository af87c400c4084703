"""Synthetic readout signals for a dispersively read-out qubit.

Each state has a mean baseband trajectory ``amp * (1 - exp(-t/tau)) *
exp(j*phase)`` shaped by the readout envelope. The ADC sees that trajectory
on an intermediate-frequency carrier plus white Gaussian noise, clipped at
full scale. Excited shots may relax mid-window, after which they follow the
ground trajectory.
"""

from __future__ import annotations

import dataclasses
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, ReadoutError
from .pulseshape import cosine_edge_envelope

GROUND, EXCITED = 0, 1


@dataclass(frozen=True)
class SimConfig:
    sample_rate: float = 500e6
    readout_freq: float = 50e6
    readout_len: float = 1e-6
    amp0: float = 0.05
    amp1: float = 0.05
    phase0: float = 0.0
    phase1: float = 1.2
    ring_up_tau: float = 500e-9
    noise_sigma: float = 7000.0
    relax_prob: float = 0.04
    adc_fullscale: float = 32767.0
    ramp_fraction: float | None = 0.05   # None: flat envelope
    seed: int = 1234

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be > 0")
        if not 0.0 <= self.relax_prob <= 1.0:
            raise ConfigError("relax_prob must be in [0, 1]")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.ring_up_tau < 0:
            raise ConfigError("ring_up_tau must be >= 0")
        if self.adc_fullscale <= 0:
            raise ConfigError("adc_fullscale must be > 0")
        exact = self.readout_len * self.sample_rate
        if round(exact) <= 0 or abs(exact - round(exact)) > 1e-6 * max(1.0, exact):
            raise ConfigError(
                f"readout_len*sample_rate must be a positive integer, got {exact}")

    @property
    def n_samples(self) -> int:
        return int(round(self.readout_len * self.sample_rate))

    def replace(self, **changes) -> "SimConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown SimConfig keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# Low- and high-SNR regimes. The sigmas are free parameters of the model.
PRESETS = {
    "no-twpa": dict(noise_sigma=7000.0, relax_prob=0.04),
    "twpa": dict(noise_sigma=2000.0, relax_prob=0.01),
}


def preset(name: str, base: SimConfig | None = None) -> SimConfig:
    try:
        overrides = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return (base or SimConfig()).replace(**overrides)


@dataclass
class RawShot:
    samples: np.ndarray
    label: int
    relaxed_at: int | None = None


@dataclass(frozen=True)
class IQShot:
    i: float
    q: float
    label: int


@dataclass(frozen=True)
class GaussianCluster:
    """Per-state 2-D Gaussian in the IQ plane (index 0 ground, 1 excited)."""

    means: tuple[np.ndarray, np.ndarray]
    covs: tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        for c in self.covs:
            c = np.asarray(c, dtype=float)
            if c.shape != (2, 2) or not np.allclose(c, c.T):
                raise ReadoutError("cluster covariance must be a symmetric 2x2 matrix")
            if np.any(np.linalg.eigvalsh(c) < 0):
                raise ReadoutError("cluster covariance is not positive semi-definite")

    @classmethod
    def isotropic(cls, mean0, mean1, sigma: float) -> "GaussianCluster":
        cov = np.eye(2) * sigma ** 2
        return cls((np.asarray(mean0, float), np.asarray(mean1, float)), (cov, cov.copy()))


def envelope_values(cfg: SimConfig) -> np.ndarray:
    n = cfg.n_samples
    if cfg.ramp_fraction is None:
        return np.ones(n)
    return cosine_edge_envelope(n, cfg.ramp_fraction).values


def trajectory_means(cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Noiseless complex baseband trajectories (ground, excited), in units of
    full scale."""
    n = cfg.n_samples
    if n <= 0:
        raise ConfigError("readout window has no samples")
    t = np.arange(n) / cfg.sample_rate
    if cfg.ring_up_tau > 0:
        ring = 1.0 - np.exp(-t / cfg.ring_up_tau)
    else:
        ring = np.ones(n)
    shape = ring * envelope_values(cfg)
    traj0 = cfg.amp0 * shape * np.exp(1j * cfg.phase0)
    traj1 = cfg.amp1 * shape * np.exp(1j * cfg.phase1)
    return traj0, traj1


def carrier(cfg: SimConfig) -> np.ndarray:
    t = np.arange(cfg.n_samples)
    return np.exp(2j * np.pi * cfg.readout_freq * t / cfg.sample_rate)


def noiseless_samples(cfg: SimConfig, state: int) -> np.ndarray:
    traj = trajectory_means(cfg)[state]
    return np.clip(np.real(traj * carrier(cfg)) * cfg.adc_fullscale,
                   -cfg.adc_fullscale, cfg.adc_fullscale)


def sample_raw_shots(cfg: SimConfig, state: int, n_shots: int,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised shot generator.

    Returns ``(samples, relaxed_at)`` with samples of shape (n_shots, N) and
    ``relaxed_at`` an int array holding -1 for shots that did not relax.
    """
    if state not in (GROUND, EXCITED):
        raise ValueError(f"state must be 0 or 1, got {state}")
    n = cfg.n_samples
    traj0, traj1 = trajectory_means(cfg)
    car = carrier(cfg)
    clean0 = np.real(traj0 * car) * cfg.adc_fullscale
    clean1 = np.real(traj1 * car) * cfg.adc_fullscale
    relaxed_at = np.full(n_shots, -1, dtype=np.int64)
    if state == EXCITED:
        decays = rng.random(n_shots) < cfg.relax_prob
        idx = rng.integers(0, n, size=n_shots)
        relaxed_at[decays] = idx[decays]
        cols = np.arange(n)
        use_ground = (relaxed_at[:, None] >= 0) & (cols[None, :] >= relaxed_at[:, None])
        clean = np.where(use_ground, clean0[None, :], clean1[None, :])
    else:
        clean = np.broadcast_to(clean0, (n_shots, n))
    noise = rng.normal(0.0, cfg.noise_sigma, size=(n_shots, n)) if cfg.noise_sigma > 0 else 0.0
    samples = np.clip(clean + noise, -cfg.adc_fullscale, cfg.adc_fullscale)
    return samples, relaxed_at


def sample_raw_shot(cfg: SimConfig, state: int, rng: np.random.Generator) -> RawShot:
    samples, relaxed = sample_raw_shots(cfg, state, 1, rng)
    r = int(relaxed[0])
    return RawShot(samples[0], state, None if r < 0 else r)


def iter_raw_batches(cfg: SimConfig, n_per_state: int, rng: np.random.Generator,
                     batch: int = 2000) -> Iterator[tuple[np.ndarray, int, np.ndarray]]:
    """Yield ``(samples, state, relaxed_at)`` chunks, ground first, keeping
    memory bounded for long runs."""
    for state in (GROUND, EXCITED):
        left = n_per_state
        while left > 0:
            k = min(batch, left)
            samples, relaxed = sample_raw_shots(cfg, state, k, rng)
            yield samples, state, relaxed
            left -= k


def sample_iq_shot(cluster: GaussianCluster, state: int,
                   rng: np.random.Generator) -> IQShot:
    i, q = sample_iq_shots(cluster, state, 1, rng)[0]
    return IQShot(float(i), float(q), state)


def sample_iq_shots(cluster: GaussianCluster, state: int, n: int,
                    rng: np.random.Generator) -> np.ndarray:
    """Fast mode: draw ``n`` accumulate-level IQ points, shape (n, 2)."""
    mean = np.asarray(cluster.means[state], dtype=float)
    cov = np.asarray(cluster.covs[state], dtype=float)
    # eigh-based factor also handles the singular (zero) covariance
    vals, vecs = np.linalg.eigh(cov)
    factor = vecs * np.sqrt(np.clip(vals, 0.0, None))
    z = rng.standard_normal((n, 2))
    return mean + z @ factor.T


# --- dataset files -------------------------------------------------------

def iq_csv_text(iq: np.ndarray, labels: np.ndarray) -> str:
    lines = ["label,i,q"]
    lines += [f"{int(l)},{i!r},{q!r}" for l, (i, q) in zip(labels, iq.tolist())]
    return "\n".join(lines) + "\n"


def write_iq_csv(path: str | Path, iq: np.ndarray, labels: np.ndarray) -> None:
    Path(path).write_text(iq_csv_text(iq, labels))


def read_iq_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != 3:
        raise ReadoutError(f"{path}: expected columns label,i,q")
    return data[:, 1:3].copy(), data[:, 0].astype(np.int64)


_RAW_HEADER = struct.Struct("<BI")


def write_raw_records(path: str | Path, shots: list[RawShot]) -> None:
    """Binary records ``label:u8, n:u32, samples:i16[n]`` (little endian).
    Samples are rounded to the nearest integer ADC count."""
    with open(path, "wb") as f:
        for shot in shots:
            s = np.clip(np.rint(shot.samples), -32768, 32767).astype("<i2")
            f.write(_RAW_HEADER.pack(shot.label, len(s)))
            f.write(s.tobytes())


def read_raw_records(path: str | Path) -> list[RawShot]:
    blob = Path(path).read_bytes()
    shots, pos = [], 0
    while pos < len(blob):
        if pos + _RAW_HEADER.size > len(blob):
            raise ReadoutError(f"{path}: truncated record header at byte {pos}")
        label, n = _RAW_HEADER.unpack_from(blob, pos)
        pos += _RAW_HEADER.size
        end = pos + 2 * n
        if end > len(blob):
            raise ReadoutError(f"{path}: truncated samples at byte {pos}")
        samples = np.frombuffer(blob[pos:end], dtype="<i2").astype(float)
        shots.append(RawShot(samples, int(label)))
        pos = end
    return shots
