"""Command-line experiment runner.

Every command reads its inputs from, and writes its outputs to, the ``--out``
directory, so a full run is::

    qreadout optimize-dlo
    qreadout simulate --dlo weighted
    qreadout train --dlo weighted
    qreadout quantize
    qreadout emulate --dlo weighted
    qreadout sweep
    qreadout report

Exit codes: 0 success, 1 domain error, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import demod, emu, fnn, iqsim, metrics, pipeline
from .config import ExperimentConfig
from .errors import ConfigError, ReadoutError

logger = logging.getLogger("qreadout")


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
        logger.info("wrote %s", path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    write_atomic(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _require(path: Path, hint: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"missing input {path} (run `qreadout {hint}` first)")
    return path


def _dataset_path(out: Path, preset: str, dlo: str) -> Path:
    return out / f"iq_{preset}_{dlo}.csv"


def _weights_path(out: Path, preset: str) -> Path:
    return out / f"weights_{preset}.csv"


def _load_weights(out: Path, preset: str, dlo: str) -> demod.WeightVector | None:
    if dlo == "square":
        return None
    return demod.read_weights_csv(_require(_weights_path(out, preset), "optimize-dlo"))


# --- commands ----------------------------------------------------------------

def cmd_simulate(args, cfg: ExperimentConfig) -> int:
    out, preset = args.out, args.preset or cfg.preset_name
    sim = cfg.sim(preset)
    n = args.shots if args.shots is not None else int(cfg["shots_per_state"])
    weights = _load_weights(out, preset, args.dlo)
    iq, labels = pipeline.simulate_iq(sim, n, np.random.default_rng([cfg.seed, 20]), weights)
    path = _dataset_path(out, preset, args.dlo)
    write_atomic(path, iqsim.iq_csv_text(iq, labels))
    print(f"wrote {path}: {int((labels == 0).sum())} ground + {int((labels == 1).sum())} excited shots")
    if args.raw:
        rng = np.random.default_rng([cfg.seed, 21])
        shots = []
        for state in (iqsim.GROUND, iqsim.EXCITED):
            samples, relaxed = iqsim.sample_raw_shots(sim, state, args.raw, rng)
            shots += [iqsim.RawShot(s, state, None if r < 0 else int(r))
                      for s, r in zip(samples, relaxed)]
        raw_path = out / f"raw_{preset}.bin"
        tmp = raw_path.with_name(raw_path.name + ".tmp")
        iqsim.write_raw_records(tmp, shots)
        os.replace(tmp, raw_path)
        print(f"wrote {raw_path}: {len(shots)} raw shots")
    return 0


def cmd_optimize_dlo(args, cfg: ExperimentConfig) -> int:
    out, preset = args.out, args.preset or cfg.preset_name
    alpha = args.alpha if args.alpha is not None else float(cfg["alpha"])
    wv, report = pipeline.dlo_report(cfg.sim(preset), int(cfg["calibration_shots"]),
                                     int(cfg["eval_shots"]), cfg.seed, alpha)
    report["preset"] = preset
    write_atomic(_weights_path(out, preset), demod.weights_csv_text(wv))
    write_json(out / f"dlo_report_{preset}.json", report)
    shown = {k: "singular" if report[k] is None else f"{report[k]:.4f}"
             for k in ("distance_square", "distance_weighted")}
    print(f"Mahalanobis distance: square {shown['distance_square']}, "
          f"weighted {shown['distance_weighted']}")
    return 0


def _prepared(args, cfg: ExperimentConfig) -> pipeline.PreparedData:
    preset = args.preset or cfg.preset_name
    path = _require(_dataset_path(args.out, preset, args.dlo), f"simulate --dlo {args.dlo}")
    iq, labels = iqsim.read_iq_csv(path)
    cut = cfg["herald_cut"]
    return pipeline.prepare(iq, labels, cfg.train(), None if cut is None else float(cut))


def cmd_train(args, cfg: ExperimentConfig) -> int:
    preset = args.preset or cfg.preset_name
    data = _prepared(args, cfg)
    params, hist = pipeline.train_on(data, cfg.train())
    write_atomic(args.out / f"model_{preset}.json", fnn.model_json(params, data.scaler))
    write_atomic(args.out / f"history_{preset}.csv", hist.to_csv())
    clf = metrics.gaussian_fit(data.iq_train, data.y_train)
    base = metrics.fidelity(data.y_test, metrics.gaussian_predict(clf, data.iq_test))
    ours = metrics.fidelity(data.y_test, fnn.predict(params, data.x_test))
    write_json(args.out / f"train_report_{preset}.json", {
        "epochs_run": len(hist.train_loss), "final_train_loss": hist.train_loss[-1],
        "fnn_avg": ours.avg, "baseline_avg": base.avg, "heralded_out": data.n_heralded_out,
        "n_train": len(data.y_train), "n_test": len(data.y_test)})
    print(f"trained {len(hist.train_loss)} epochs: fnn avg fidelity {ours.avg:.4f}, "
          f"gaussian baseline {base.avg:.4f}")
    return 0


def cmd_quantize(args, cfg: ExperimentConfig) -> int:
    preset = args.preset or cfg.preset_name
    params, scaler = fnn.load_model(_require(args.out / f"model_{preset}.json", "train"))
    qid = args.qubit_id if args.qubit_id is not None else int(cfg["qubit_id"])
    model = emu.quantize(params, scaler, cfg.lut(), qubit_id=qid)
    bank_path = args.out / "bank.txt"
    models = []
    if bank_path.is_file():
        models = [m for m in emu.bank_load_all(bank_path) if m.qubit_id != qid]
    write_atomic(bank_path, emu.bank_dumps(models + [model]))
    print(f"stored qubit {qid} in {bank_path} ({len(models) + 1} model(s))")
    return 0


def cmd_emulate(args, cfg: ExperimentConfig) -> int:
    preset = args.preset or cfg.preset_name
    qid = args.qubit_id if args.qubit_id is not None else int(cfg["qubit_id"])
    model = emu.bank_load(_require(args.out / "bank.txt", "quantize"), qid)
    params, _ = fnn.load_model(_require(args.out / f"model_{preset}.json", "train"))
    data = _prepared(args, cfg)
    res = pipeline.emulate_test_set(model, data.iq_test)
    rep = metrics.fidelity(data.y_test, res.states)
    float_states = fnn.predict(params, data.x_test)
    clean = res.overflows == 0
    prob_err = np.abs(res.prob_words / 2.0 ** model.act_fmt.frac_bits
                      - fnn.forward(params, data.x_test))
    fid = json.loads(rep.to_json())
    fid.update({
        "label_agreement_with_float": float(np.mean(res.states == float_states)),
        "max_prob_error_no_overflow": float(prob_err[clean].max()) if clean.any() else None,
        "shots_with_overflow": int((~clean).sum()),
        "readout_time": cfg.sim(preset).readout_len,
    })
    write_json(args.out / f"fidelity_{preset}.json", fid)
    write_atomic(args.out / f"fidelity_{preset}.csv",
                 metrics.FidelityReport.CSV_HEADER + "\n" + rep.csv_row(cfg.sim(preset).readout_len) + "\n")
    cycles = emu.cycle_report(model.arch, cfg.cycle())
    write_atomic(args.out / "cycles.json", cycles.to_json())
    write_atomic(args.out / "resources.json", emu.resource_report(model.arch).to_json())

    iq_all = np.vstack([data.iq_train, data.iq_test])
    y_all = np.concatenate([data.y_train, data.y_test])
    clf = metrics.gaussian_fit(iq_all, y_all)
    scenario = emu.FeedbackScenario(
        iqsim.GaussianCluster((clf.mean0, clf.mean1), (clf.cov0, clf.cov1)),
        int(cfg["feedback"]["trials"]), float(cfg["feedback"]["p_excited"]))
    fb = emu.mid_circuit_feedback(model, scenario, np.random.default_rng([cfg.seed, 30]))
    write_atomic(args.out / f"feedback_{preset}.json", fb.to_json())
    print(f"emulated {len(res.states)} shots: avg fidelity {rep.avg:.4f}, "
          f"{cycles.total_cycles} cycles ({cycles.total_ns:g} ns)")
    return 0


def cmd_sweep(args, cfg: ExperimentConfig) -> int:
    preset = args.preset or cfg.preset_name
    sw = cfg["sweep"]
    times = args.times if args.times else [float(t) for t in sw["readout_times"]]
    cut = cfg["herald_cut"]
    rows = []
    for t in times:
        row = pipeline.sweep_row(cfg.sim(preset), t, int(sw["shots_per_state"]), cfg.seed,
                                 cfg.train(), cfg.lut(), float(sw["baseline_ramp"]),
                                 float(sw["system_ramp"]), int(cfg["calibration_shots"]),
                                 float(cfg["alpha"]), None if cut is None else float(cut))
        rows.append(row)
        print(f"readout {t * 1e6:g} us: baseline {row['baseline_avg']:.4f}, "
              f"system {row['system_avg']:.4f}")
    lines = ["readout_time,baseline_avg,system_avg"]
    lines += [f"{r['readout_time']!r},{r['baseline_avg']!r},{r['system_avg']!r}" for r in rows]
    write_atomic(args.out / f"sweep_{preset}.csv", "\n".join(lines) + "\n")
    return 0


def _render_json(name: str, obj, width: int) -> list[str]:
    lines = [f"[{name}]"]

    def walk(prefix, v):
        if isinstance(v, dict):
            for k in sorted(v):
                walk(f"{prefix}{k}.", v[k])
        else:
            key = prefix.rstrip(".")
            val = f"{v:.6g}" if isinstance(v, float) else str(v)
            lines.append(f"  {key:<{width}} {val}")

    walk("", obj)
    return lines


def _render_csv(name: str, path: Path) -> list[str]:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows:
        return [f"[{name}]", "  (empty)"]
    if len(rows) > 21:
        rows = rows[:11] + [["..."] * len(rows[0])] + rows[-10:]

    def fmt(cell):
        try:
            return f"{float(cell):.6g}"
        except ValueError:
            return cell

    cells = [[fmt(c) for c in r] for r in rows]
    widths = [max(len(r[k]) for r in cells if k < len(r)) for k in range(len(cells[0]))]
    out = [f"[{name}]"]
    for r in cells:
        out.append("  " + "  ".join(c.rjust(w) for c, w in zip(r, widths)))
    return out


def cmd_report(args, cfg: ExperimentConfig) -> int:
    out = args.out
    parts = []
    for path in sorted(out.glob("*.json")):
        if path.name.startswith("model_"):
            continue
        parts += _render_json(path.name, json.loads(path.read_text()), 34) + [""]
    for path in sorted(out.glob("*.csv")):
        if path.name.startswith(("iq_", "weights_")):
            continue
        parts += _render_csv(path.name, path) + [""]
    if not parts:
        raise ConfigError(f"nothing to report in {out}")
    text = "\n".join(parts)
    write_atomic(out / "summary.txt", text)
    print(text, end="")
    return 0


# --- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    def add_globals(p, suppress):
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p.add_argument("--config", type=Path, default=d(None), help="YAML experiment config")
        p.add_argument("--seed", type=int, default=d(None), help="override the master seed")
        p.add_argument("--out", type=Path, default=d(Path("out")), help="output directory")
        p.add_argument("--preset", choices=sorted(iqsim.PRESETS), default=d(None))

    parser = argparse.ArgumentParser(prog="qreadout", description=__doc__.split("\n")[0])
    add_globals(parser, False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help):
        p = sub.add_parser(name, help=help)
        add_globals(p, True)
        p.set_defaults(func=func)
        return p

    p = command("simulate", cmd_simulate, "generate labelled IQ datasets")
    p.add_argument("--shots", type=int, help="shots per state")
    p.add_argument("--dlo", choices=("square", "weighted"), default="square")
    p.add_argument("--raw", type=int, default=0, metavar="N",
                   help="also write N raw time-domain shots per state")

    p = command("optimize-dlo", cmd_optimize_dlo, "derive weighted-DLO envelope")
    p.add_argument("--alpha", type=float, help="EMA smoothing factor")

    for name, func, help in (("train", cmd_train, "train the float network"),
                             ("emulate", cmd_emulate, "replay the test set in fixed point")):
        p = command(name, func, help)
        p.add_argument("--dlo", choices=("square", "weighted"), default="square")
        if name == "emulate":
            p.add_argument("--qubit-id", type=int)

    p = command("quantize", cmd_quantize, "quantize the trained model into the bank")
    p.add_argument("--qubit-id", type=int)

    p = command("sweep", cmd_sweep, "baseline vs system across readout times")
    p.add_argument("--times", type=float, nargs="+", help="readout times in seconds")

    command("report", cmd_report, "render every report into one summary")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = ExperimentConfig.load(args.config, args.seed)
        args.out.mkdir(parents=True, exist_ok=True)
        return args.func(args, cfg)
    except ConfigError as exc:
        print(f"qreadout: error: {exc}", file=sys.stderr)
        return 2
    except ReadoutError as exc:
        print(f"qreadout: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
