"""End-to-end flows shared by the command line and the acceptance tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import demod, emu, fnn, metrics
from .errors import DegenerateWeightsError, SingularCovarianceError
from .iqsim import SimConfig, iter_raw_batches, trajectory_means


def simulate_iq(cfg: SimConfig, n_per_state: int, rng: np.random.Generator,
                weights: demod.WeightVector | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Time-domain shots demodulated and integrated to IQ, ground first."""
    iqs, labels = [], []
    for samples, state, _ in iter_raw_batches(cfg, n_per_state, rng):
        iqs.append(demod.accumulate_batch(samples, cfg.readout_freq, weights=weights,
                                          sample_rate=cfg.sample_rate))
        labels.append(np.full(len(samples), state, dtype=np.int64))
    return np.vstack(iqs), np.concatenate(labels)


def simulate_iq_paired(cfg: SimConfig, n_per_state: int, rng: np.random.Generator,
                       weights: demod.WeightVector):
    """Integrate the same raw shots with the square and the weighted DLO."""
    sq, wt, labels = [], [], []
    for samples, state, _ in iter_raw_batches(cfg, n_per_state, rng):
        sq.append(demod.accumulate_batch(samples, cfg.readout_freq, sample_rate=cfg.sample_rate))
        wt.append(demod.accumulate_batch(samples, cfg.readout_freq, weights=weights,
                                         sample_rate=cfg.sample_rate))
        labels.append(np.full(len(samples), state, dtype=np.int64))
    return np.vstack(sq), np.vstack(wt), np.concatenate(labels)


def calibrate_weights(cfg: SimConfig, n_per_state: int, rng: np.random.Generator,
                      alpha: float = demod.DEFAULT_ALPHA) -> demod.WeightVector:
    """Square-DLO mix, per-shot EMA, per-state mean, matched-filter weights."""
    acc = demod.TrajectoryAccumulator(cfg.n_samples, alpha)
    for samples, state, _ in iter_raw_batches(cfg, n_per_state, rng):
        acc.add(demod.mix_batch(samples, cfg.readout_freq, sample_rate=cfg.sample_rate), state)
    return demod.derive_weights(*acc.means())


def split_fidelity(iq: np.ndarray, labels: np.ndarray) -> float:
    """Gaussian-baseline fidelity, fit on even shots and scored on odd ones."""
    clf = metrics.gaussian_fit(iq[0::2], labels[0::2])
    return metrics.fidelity(labels[1::2], metrics.gaussian_predict(clf, iq[1::2])).avg


def _guarded(report: dict, key: str, fn, *args) -> None:
    # a rank-deficient cluster pair is reported, not fatal
    try:
        report[key] = fn(*args)
    except SingularCovarianceError as exc:
        report[key] = None
        report.setdefault("singular", {})[key] = exc.condition


def dlo_report(cfg: SimConfig, n_cal: int, n_eval: int, seed: int,
               alpha: float = demod.DEFAULT_ALPHA) -> tuple[demod.WeightVector, dict]:
    """Derive weights, then compare square and weighted DLO on fresh paired shots.

    With ``alpha=1`` the weights are a real envelope times the carrier, so
    the weighted Q channel is identically zero; the affected distances and
    fidelities come back as None with the condition number under
    ``singular``.
    """
    t0, t1 = trajectory_means(cfg)
    if np.array_equal(t0, t1):
        raise DegenerateWeightsError("configured states have identical trajectories; "
                                     "no weights to derive")
    rng = np.random.default_rng([seed, 1])
    wv = calibrate_weights(cfg, n_cal, rng, alpha)
    sq, wt, labels = simulate_iq_paired(cfg, n_eval, np.random.default_rng([seed, 2]), wv)
    report = {
        "alpha": alpha,
        "calibration_shots_per_state": n_cal,
        "eval_shots_per_state": n_eval,
        "weight_normalization": wv.normalization,
    }
    for name, iq in (("square", sq), ("weighted", wt)):
        _guarded(report, f"distance_{name}", metrics.mahalanobis_distance,
                 iq[labels == 0], iq[labels == 1])
        _guarded(report, f"fidelity_{name}", split_fidelity, iq, labels)
    return wv, report


@dataclass
class PreparedData:
    x_train: np.ndarray     # scaled
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    iq_train: np.ndarray    # raw accumulates
    iq_test: np.ndarray
    scaler: fnn.ScalerParams
    n_heralded_out: int


def prepare(iq: np.ndarray, labels: np.ndarray, tcfg: fnn.TrainConfig,
            herald_cut: float | None = 5.0) -> PreparedData:
    """Herald, fit the scaler on the whole kept set, then split."""
    dropped = 0
    if herald_cut is not None:
        keep = metrics.herald_mask(iq, labels, herald_cut)
        dropped = int((~keep).sum())
        iq, labels = iq[keep], labels[keep]
    scaler = fnn.scaler_fit(iq)
    itr, ytr, ite, yte = fnn.split_dataset(iq, labels, tcfg)
    return PreparedData(fnn.scaler_apply(scaler, itr), ytr, fnn.scaler_apply(scaler, ite), yte,
                        itr, ite, scaler, dropped)


def train_on(data: PreparedData, tcfg: fnn.TrainConfig,
             arch: fnn.Architecture = fnn.Architecture()):
    return fnn.train(data.x_train, data.y_train, arch, tcfg, test=(data.x_test, data.y_test))


def emulate_test_set(model: emu.QuantizedModel, iq: np.ndarray) -> emu.BatchResult:
    raw = np.rint(iq).astype(np.int64)
    return emu.infer_batch(model, raw[:, 0], raw[:, 1])


def sweep_row(base: SimConfig, readout_time: float, n_per_state: int, seed: int,
              tcfg: fnn.TrainConfig, lut_cfg: emu.LutConfig, baseline_ramp: float,
              system_ramp: float, n_cal: int, alpha: float, herald_cut: float | None) -> dict:
    """Baseline (slow ramp, square DLO, Gaussian classifier) against the full
    system (fast ramp, weighted DLO, fixed-point network) at one readout time."""
    cfg_b = base.replace(readout_len=readout_time, ramp_fraction=baseline_ramp)
    cfg_s = base.replace(readout_len=readout_time, ramp_fraction=system_ramp)

    iq_b, y_b = simulate_iq(cfg_b, n_per_state, np.random.default_rng([seed, 10]))
    data_b = prepare(iq_b, y_b, tcfg, herald_cut)
    clf = metrics.gaussian_fit(data_b.iq_train, data_b.y_train)
    base_fid = metrics.fidelity(data_b.y_test, metrics.gaussian_predict(clf, data_b.iq_test))

    wv = calibrate_weights(cfg_s, n_cal, np.random.default_rng([seed, 11]), alpha)
    iq_s, y_s = simulate_iq(cfg_s, n_per_state, np.random.default_rng([seed, 12]), wv)
    data_s = prepare(iq_s, y_s, tcfg, herald_cut)
    params, _ = train_on(data_s, tcfg)
    model = emu.quantize(params, data_s.scaler, lut_cfg)
    res = emulate_test_set(model, data_s.iq_test)
    sys_fid = metrics.fidelity(data_s.y_test, res.states)
    return {"readout_time": readout_time, "baseline_avg": base_fid.avg, "system_avg": sys_fid.avg}
