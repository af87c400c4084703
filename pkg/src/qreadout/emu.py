"""Bit-exact emulation of the fixed-point discriminator pipeline.

Pipeline per shot: shift-only scaling of the integer I/Q accumulates, one
DSP multiply per weight with the product sliced back to the activation
format, node sums (plus bias) saturated to the activation format, ReLU on
hidden layers, sigmoid by table lookup, threshold at one half.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import fxp
from .errors import BankFormatError, FixedPointRangeError, QuantizationError, ReadoutError
from .fnn import Architecture, FnnParams, ScalerParams
from .fxp import Q6_12, Q10_17, QFormat, SigmoidLut
from .iqsim import GaussianCluster, sample_iq_shots

MAX_QUBITS = 8


@dataclass(frozen=True)
class LutConfig:
    size: int = 256
    lo: float = -8.0
    hi: float = 8.0


@dataclass
class QuantizedModel:
    weights: list[np.ndarray]     # raw words, (out, in) per layer
    biases: list[np.ndarray]
    scaler_mu: tuple[int, int]
    scaler_n: tuple[int, int]
    lut: SigmoidLut
    qubit_id: int = 0
    act_fmt: QFormat = Q10_17
    weight_fmt: QFormat = Q6_12

    def __post_init__(self):
        if not 0 <= self.qubit_id < MAX_QUBITS:
            raise ReadoutError(f"qubit_id must be in [0, {MAX_QUBITS}), got {self.qubit_id}")

    @property
    def arch(self) -> Architecture:
        return Architecture(tuple([self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]))

    @property
    def threshold(self) -> int:
        return 1 << (self.act_fmt.frac_bits - 1)

    def same_words(self, other: "QuantizedModel") -> bool:
        return (self.qubit_id == other.qubit_id
                and self.scaler_mu == other.scaler_mu and self.scaler_n == other.scaler_n
                and self.lut == other.lut
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))


def quantize(params: FnnParams, scaler: ScalerParams, lut_cfg: LutConfig = LutConfig(),
             qubit_id: int = 0, act_fmt: QFormat = Q10_17,
             weight_fmt: QFormat = Q6_12) -> QuantizedModel:
    ws, bs = [], []
    for k, (w, b) in enumerate(zip(params.weights, params.biases), start=1):
        try:
            ws.append(fxp.encode(np.asarray(w, dtype=float), weight_fmt))
        except FixedPointRangeError as exc:
            raise QuantizationError(f"layer {k} weights: {exc}") from None
        try:
            bs.append(fxp.encode(np.asarray(b, dtype=float), act_fmt))
        except FixedPointRangeError as exc:
            raise QuantizationError(f"layer {k} biases: {exc}") from None
    mu = tuple(int(round(m)) for m in scaler.mu)
    lut = fxp.sigmoid_lut_build(lut_cfg.size, lut_cfg.lo, lut_cfg.hi, act_fmt)
    return QuantizedModel(ws, bs, mu, tuple(scaler.n), lut, qubit_id, act_fmt, weight_fmt)


# --- inference ---------------------------------------------------------------

@dataclass
class BatchResult:
    states: np.ndarray
    prob_words: np.ndarray
    overflows: np.ndarray   # saturation events per shot


def infer_batch(m: QuantizedModel, raw_i, raw_q, trace: dict | None = None) -> BatchResult:
    raw_i = np.asarray(raw_i, dtype=np.int64)
    raw_q = np.asarray(raw_q, dtype=np.int64)
    xi, oi = fxp.scale_shift(raw_i, m.scaler_n[0], m.scaler_mu[0], m.act_fmt)
    xq, oq = fxp.scale_shift(raw_q, m.scaler_n[1], m.scaler_mu[1], m.act_fmt)
    overflows = oi.astype(np.int64) + oq.astype(np.int64)
    a = np.column_stack([xi, xq])
    if trace is not None:
        trace["scaled"] = a.copy()
    last = len(m.weights)
    for k, (w, b) in enumerate(zip(m.weights, m.biases), start=1):
        products = a[:, None, :] * w[None, :, :]
        sliced, ov = fxp.slice_product(products, m.weight_fmt, m.act_fmt, m.act_fmt)
        overflows += ov.sum(axis=(1, 2))
        node, ov = fxp.saturate(sliced.sum(axis=2) + b[None, :], m.act_fmt)
        overflows += ov.sum(axis=1)
        if trace is not None:
            trace[f"layer{k}_products"] = products
            trace[f"layer{k}_sliced"] = sliced
            trace[f"layer{k}"] = node
        if k < last:
            a = fxp.relu_q(node)
            if trace is not None:
                trace[f"relu{k}"] = a
        else:
            a = node
    z = a[:, 0]
    addr = fxp.sigmoid_lut_address(m.lut, z)
    prob = np.asarray(m.lut.entries, dtype=np.int64)[addr]
    if trace is not None:
        trace["lut_address"] = addr
        trace["prob"] = prob
    return BatchResult((prob > m.threshold).astype(np.int64), prob, overflows)


def infer(m: QuantizedModel, raw_i: int, raw_q: int) -> tuple[int, int, dict]:
    """Single-shot inference. Returns (state, prob_word, trace) where the
    trace holds every intermediate word as Python ints."""
    t: dict = {}
    r = infer_batch(m, [raw_i], [raw_q], trace=t)
    trace = {key: np.asarray(v)[0].tolist() for key, v in t.items()}
    trace["overflow"] = int(r.overflows[0])
    return int(r.states[0]), int(r.prob_words[0]), trace


# --- cycle and resource models -----------------------------------------------

@dataclass(frozen=True)
class CyclePolicy:
    mult_cycles: int = 2
    add_cycles: int = 1
    max_add_operands: int = 3
    relu_cycles: int = 1
    sigmoid_compare_cycles: int = 2
    lut_read_cycles: int = 1
    norm_cycles: int = 9           # calibrated so the default pipeline totals 27
    clock_period_ns: float = 2.0
    accumulation: str = "sequential"   # or "tree"

    def __post_init__(self):
        for name in ("mult_cycles", "add_cycles", "relu_cycles", "sigmoid_compare_cycles",
                     "lut_read_cycles", "norm_cycles"):
            if getattr(self, name) < 0:
                raise ReadoutError(f"{name} must be >= 0")
        if self.max_add_operands < 2:
            raise ReadoutError("max_add_operands must be >= 2")
        if self.clock_period_ns < 0:
            raise ReadoutError("clock_period_ns must be >= 0")
        if self.accumulation not in ("sequential", "tree"):
            raise ReadoutError(f"unknown accumulation mode {self.accumulation!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "CyclePolicy":
        return cls(**d)


def fold_cycles(k: int, policy: CyclePolicy = CyclePolicy()) -> int:
    """Cycles to sum ``k`` operands with at most ``max_add_operands`` per add.

    Sequential: the first add takes m operands, every later one folds the
    running sum with m-1 new operands (9 -> 7 -> 5 -> 3 -> 1 for m=3).
    Tree: ceil(log_m k) levels.
    """
    m = policy.max_add_operands
    if k <= 1:
        return 0
    if policy.accumulation == "sequential":
        steps = 1 + max(0, math.ceil((k - m) / (m - 1)))
    else:
        steps = 0
        while k > 1:
            k = math.ceil(k / m)
            steps += 1
    return steps * policy.add_cycles


@dataclass
class CycleReport:
    stages: dict[str, int]
    total_cycles: int
    total_ns: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def cycle_report(arch: Architecture = Architecture(),
                 policy: CyclePolicy = CyclePolicy()) -> CycleReport:
    stages = {"normalization": policy.norm_cycles}
    sizes = arch.layer_sizes
    n_layers = len(sizes) - 1
    for k in range(1, n_layers + 1):
        fan_in = sizes[k - 1]
        stages[f"layer{k}"] = policy.mult_cycles + fold_cycles(fan_in + 1, policy)
        if k < n_layers:
            stages[f"relu{k}"] = policy.relu_cycles
    stages["sigmoid_compare"] = policy.sigmoid_compare_cycles
    stages["lut"] = policy.lut_read_cycles
    total = sum(stages.values())
    return CycleReport(stages, total, total * policy.clock_period_ns)


@dataclass(frozen=True)
class ResourceModel:
    """Per-parameter linear costs, fit to one synthesized 2-8-4-1 pipeline
    (65 parameters: 1592 LUT, 2597 FF, 80 CARRY8, 0.5 BRAM)."""

    lut_per_param: float = 1592 / 65
    ff_per_param: float = 2597 / 65
    carry8_per_param: float = 80 / 65
    bram_per_model: float = 0.5


@dataclass
class ResourceReport:
    dsp_count: int
    lut_estimate: int
    ff_estimate: int
    carry8_estimate: int
    bram_estimate: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"


def resource_report(arch: Architecture = Architecture(),
                    model: ResourceModel = ResourceModel()) -> ResourceReport:
    p = arch.n_params
    return ResourceReport(
        dsp_count=arch.n_weights,
        lut_estimate=int(round(model.lut_per_param * p)),
        ff_estimate=int(round(model.ff_per_param * p)),
        carry8_estimate=int(round(model.carry8_per_param * p)),
        bram_estimate=model.bram_per_model,
    )


# --- parameter bank ----------------------------------------------------------
#
# Text file of one record per qubit:
#
#   qubit <id> arch <s0,s1,...> act Q<i>.<f> weight Q<i>.<f> lut <size>
#   <weight words, layer-major, row-major, one hex word per line>
#   <bias words, layer-major>
#   scaler <mu_i> <n_i> <mu_q> <n_q>
#   lutrange <lo word> <hi word>
#   <lut entries, one hex word per line>
#   crc32 <8 hex digits over every preceding byte of the record>

BANK_MAGIC = "# qreadout model bank v1"


def _fmt_name(f: QFormat) -> str:
    return f"Q{f.int_bits}.{f.frac_bits}"


def _parse_fmt(text: str) -> QFormat:
    if not text.startswith("Q") or "." not in text:
        raise ValueError(f"bad format {text!r}")
    i, f = text[1:].split(".")
    return QFormat(int(i), int(f))


def _record_lines(m: QuantizedModel) -> list[str]:
    sizes = ",".join(str(s) for s in m.arch.layer_sizes)
    lines = [f"qubit {m.qubit_id} arch {sizes} act {_fmt_name(m.act_fmt)} "
             f"weight {_fmt_name(m.weight_fmt)} lut {m.lut.size}"]
    for w in m.weights:
        lines += [fxp.to_hex(int(v), m.weight_fmt) for v in w.ravel()]
    for b in m.biases:
        lines += [fxp.to_hex(int(v), m.act_fmt) for v in b]
    lines.append(f"scaler {m.scaler_mu[0]} {m.scaler_n[0]} {m.scaler_mu[1]} {m.scaler_n[1]}")
    lines.append(f"lutrange {fxp.to_hex(m.lut.lo, m.act_fmt)} {fxp.to_hex(m.lut.hi, m.act_fmt)}")
    lines += [fxp.to_hex(v, m.act_fmt) for v in m.lut.entries]
    return lines


def bank_dumps(models: list[QuantizedModel]) -> str:
    if len(models) > MAX_QUBITS:
        raise ReadoutError(f"a bank holds at most {MAX_QUBITS} models")
    ids = [m.qubit_id for m in models]
    if len(set(ids)) != len(ids):
        raise ReadoutError(f"duplicate qubit ids in bank: {ids}")
    out = [BANK_MAGIC]
    for m in sorted(models, key=lambda m: m.qubit_id):
        body = "".join(line + "\n" for line in _record_lines(m))
        out.append(body + f"crc32 {zlib.crc32(body.encode()):08x}")
    return "\n".join(out) + "\n"


def bank_store(models: list[QuantizedModel], path: str | Path) -> None:
    Path(path).write_text(bank_dumps(models))


def _record_length(arch: Architecture, lut_size: int) -> int:
    """Lines in a record after the header, including the crc line."""
    return arch.n_weights + arch.n_biases + 2 + lut_size + 1


def _split_lines(text: str) -> list[tuple[int, str]]:
    out, pos = [], 0
    for line in text.splitlines(keepends=True):
        out.append((pos, line.rstrip("\n")))
        pos += len(line.encode())
    return out


def _parse_header(line: str, offset: int):
    parts = line.split()
    if (len(parts) != 10 or parts[0] != "qubit" or parts[2] != "arch"
            or parts[4] != "act" or parts[6] != "weight" or parts[8] != "lut"):
        raise BankFormatError(f"malformed record header {line!r}", offset)
    try:
        qid = int(parts[1])
        arch = Architecture(tuple(int(s) for s in parts[3].split(",")))
        act, weight = _parse_fmt(parts[5]), _parse_fmt(parts[7])
        lut_size = int(parts[9])
    except (ValueError, ReadoutError) as exc:
        raise BankFormatError(f"malformed record header: {exc}", offset) from None
    return qid, arch, act, weight, lut_size


def _word(lines, idx: int, fmt: QFormat) -> int:
    offset, text = lines[idx]
    try:
        return fxp.from_hex(text, fmt)
    except ValueError as exc:
        bad = next((k for k, ch in enumerate(text) if ch not in "0123456789abcdefABCDEF"), 0)
        raise BankFormatError(f"bad {fmt} word {text!r}: {exc}", offset + bad) from None


def bank_load(path: str | Path, qubit_id: int) -> QuantizedModel:
    """Load one model, skipping other records without parsing their words."""
    lines = _split_lines(Path(path).read_text())
    if not lines or lines[0][1] != BANK_MAGIC:
        raise BankFormatError("missing bank header line", 0)
    idx = 1
    while idx < len(lines):
        offset, header = lines[idx]
        qid, arch, act, weight, lut_size = _parse_header(header, offset)
        n = _record_length(arch, lut_size)
        if qid == qubit_id:
            return _parse_record(lines, idx, qid, arch, act, weight, lut_size)
        idx += 1 + n
    raise ReadoutError(f"qubit {qubit_id} not found in bank {path}")


def bank_load_all(path: str | Path) -> list[QuantizedModel]:
    lines = _split_lines(Path(path).read_text())
    if not lines or lines[0][1] != BANK_MAGIC:
        raise BankFormatError("missing bank header line", 0)
    idx, models = 1, []
    while idx < len(lines):
        offset, header = lines[idx]
        qid, arch, act, weight, lut_size = _parse_header(header, offset)
        models.append(_parse_record(lines, idx, qid, arch, act, weight, lut_size))
        idx += 1 + _record_length(arch, lut_size)
    return models


def _parse_record(lines, idx, qid, arch, act, weight, lut_size) -> QuantizedModel:
    start = lines[idx][0]
    if idx + _record_length(arch, lut_size) >= len(lines):
        raise BankFormatError(f"truncated record for qubit {qid}", start)
    k = idx + 1
    sizes = arch.layer_sizes
    ws, bs = [], []
    for i, o in zip(sizes[:-1], sizes[1:]):
        ws.append(np.array([_word(lines, k + j, weight) for j in range(i * o)],
                           dtype=np.int64).reshape(o, i))
        k += i * o
    for o in sizes[1:]:
        bs.append(np.array([_word(lines, k + j, act) for j in range(o)], dtype=np.int64))
        k += o
    offset, text = lines[k]
    parts = text.split()
    try:
        if len(parts) != 5 or parts[0] != "scaler":
            raise ValueError(text)
        mu_i, n_i, mu_q, n_q = (int(p) for p in parts[1:])
    except ValueError:
        raise BankFormatError(f"malformed scaler line {text!r}", offset) from None
    k += 1
    offset, text = lines[k]
    parts = text.split()
    if len(parts) != 3 or parts[0] != "lutrange":
        raise BankFormatError(f"malformed lutrange line {text!r}", offset)
    try:
        lo, hi = fxp.from_hex(parts[1], act), fxp.from_hex(parts[2], act)
    except ValueError as exc:
        raise BankFormatError(f"malformed lutrange line: {exc}", offset) from None
    k += 1
    entries = tuple(_word(lines, k + j, act) for j in range(lut_size))
    k += lut_size
    offset, text = lines[k]
    body_end = offset
    parts = text.split()
    if len(parts) != 2 or parts[0] != "crc32":
        raise BankFormatError(f"missing crc32 line for qubit {qid}", offset)
    body = "".join(line + "\n" for _, line in lines[idx:k])
    if f"{zlib.crc32(body.encode()):08x}" != parts[1].lower():
        raise BankFormatError(
            f"checksum mismatch in record for qubit {qid} (bytes {start}..{body_end})", start)
    lut = SigmoidLut(lo, hi, entries, act)
    return QuantizedModel(ws, bs, (mu_i, mu_q), (n_i, n_q), lut, qid, act, weight)


# --- mid-circuit feedback ----------------------------------------------------

@dataclass(frozen=True)
class FeedbackScenario:
    """Conditional bit flip: measure Q2 (prepared on the equator); if it
    reads excited, flip Q1 from ground to excited. Final readout of both
    qubits is taken as ideal."""

    cluster: GaussianCluster
    n_trials: int = 100_000
    p_excited: float = 0.5


Discriminator = Callable[[np.ndarray, np.ndarray], np.ndarray]


def model_discriminator(m: QuantizedModel) -> Discriminator:
    return lambda i, q: infer_batch(m, i, q).states


@dataclass
class FeedbackResult:
    counts: dict[str, int] = field(default_factory=dict)   # key: Q1 then Q2

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def prob(self, key: str) -> float:
        return self.counts.get(key, 0) / self.total

    def to_json(self) -> str:
        d = {"counts": self.counts, "probs": {k: self.prob(k) for k in sorted(self.counts)}}
        return json.dumps(d, sort_keys=True, indent=2) + "\n"


def mid_circuit_feedback(m: QuantizedModel | Discriminator, scenario: FeedbackScenario,
                         rng: np.random.Generator) -> FeedbackResult:
    disc = model_discriminator(m) if isinstance(m, QuantizedModel) else m
    n = scenario.n_trials
    q2 = (rng.random(n) < scenario.p_excited).astype(np.int64)
    iq = np.empty((n, 2))
    for state in (0, 1):
        sel = q2 == state
        iq[sel] = sample_iq_shots(scenario.cluster, state, int(sel.sum()), rng)
    raw = np.rint(iq).astype(np.int64)
    measured = np.asarray(disc(raw[:, 0], raw[:, 1]), dtype=np.int64)
    q1 = measured   # Q1 starts in ground and is flipped iff Q2 read excited
    counts = {f"{a}{b}": int(np.sum((q1 == a) & (q2 == b))) for a in (0, 1) for b in (0, 1)}
    return FeedbackResult(counts)
