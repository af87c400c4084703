import json

import numpy as np
import pytest

from qreadout import emu, fnn, fxp
from qreadout.emu import CyclePolicy, FeedbackScenario, LutConfig
from qreadout.errors import BankFormatError, QuantizationError, ReadoutError
from qreadout.fnn import Architecture, FnnParams, ScalerParams, TrainConfig
from qreadout.fxp import QFormat
from qreadout.iqsim import GaussianCluster, sample_iq_shots

TOY_SCALER = ScalerParams((0.0, 0.0), (22, 22))


def _toy_params():
    return FnnParams([np.array([[1.5, -2.0]]), np.array([[3.0]])],
                     [np.array([0.125]), np.array([-1.0])])


@pytest.fixture(scope="module")
def trained():
    rng = np.random.default_rng(11)
    cl = GaussianCluster.isotropic((-2e5, 1e5), (2e5, -1e5), 1.2e5)
    x = np.vstack([sample_iq_shots(cl, 0, 3000, rng), sample_iq_shots(cl, 1, 3000, rng)])
    y = np.repeat([0, 1], 3000)
    sp = fnn.scaler_fit(x)
    params, _ = fnn.train(fnn.scaler_apply(sp, x), y, cfg=TrainConfig(epochs=30))
    return params, sp, x


def test_quantize_zero_params():
    m = emu.quantize(FnnParams.zeros(), TOY_SCALER)
    assert all(not w.any() for w in m.weights) and all(not b.any() for b in m.biases)


def test_quantize_roundtrip_bound(trained):
    params, sp, _ = trained
    m = emu.quantize(params, sp)
    for w, wq in zip(params.weights, m.weights):
        err = w - fxp.decode(wq, fxp.Q6_12)
        assert np.all((err >= 0) & (err < 2.0 ** -12))
    for b, bq in zip(params.biases, m.biases):
        err = b - fxp.decode(bq, fxp.Q10_17)
        assert np.all((err >= 0) & (err < 2.0 ** -17))


def test_quantize_out_of_range_weight():
    p = FnnParams.zeros()
    p.weights[1][2, 3] = 40.0
    with pytest.raises(QuantizationError, match="layer 2 weights"):
        emu.quantize(p, TOY_SCALER)


def test_qubit_id_range():
    with pytest.raises(ReadoutError):
        emu.quantize(FnnParams.zeros(), TOY_SCALER, qubit_id=8)


def test_zero_model_reads_ground():
    m = emu.quantize(FnnParams.zeros(), TOY_SCALER)
    state, prob, _ = emu.infer(m, 12345, -678)
    assert state == 0
    assert prob == m.lut.entries[fxp.sigmoid_lut_address(m.lut, 0)]
    assert abs(fxp.decode_q10_17(prob) - 0.5) < 0.01


def test_toy_golden_trace():
    m = emu.quantize(_toy_params(), TOY_SCALER)
    assert m.weights[0].tolist() == [[6144, -8192]] and m.biases[0].tolist() == [16384]
    assert m.weights[1].tolist() == [[12288]] and m.biases[1].tolist() == [-131072]
    state, prob, t = emu.infer(m, 48, -(2 ** 21))
    # (48 + 2^22) << 17 >> 23 = 65536 ; (2^22 - 2^21) << 17 >> 23 = 32768
    assert t["scaled"] == [65536, 32768]
    assert t["layer1_products"] == [[402653184, -268435456]]
    assert t["layer1_sliced"] == [[98304, -65536]]
    assert t["layer1"] == [49152]          # 98304 - 65536 + 16384
    assert t["relu1"] == [49152]
    assert t["layer2_products"] == [[603979776]]
    assert t["layer2_sliced"] == [[147456]]
    assert t["layer2"] == [16384]          # 147456 - 131072
    # edges are -2^20 + 8192k; 129 of them lie strictly below 16384
    assert t["lut_address"] == 129
    assert prob == t["prob"] == 68605      # floor(sigma(0.09375) * 2^17)
    assert state == 1 and t["overflow"] == 0


def test_infer_bit_deterministic(trained):
    params, sp, x = trained
    m = emu.quantize(params, sp)
    raw = np.rint(x[:10]).astype(np.int64)
    for i, q in raw:
        assert emu.infer(m, int(i), int(q)) == emu.infer(m, int(i), int(q))


def test_batch_matches_single(trained):
    params, sp, x = trained
    m = emu.quantize(params, sp)
    raw = np.rint(x[::500]).astype(np.int64)
    res = emu.infer_batch(m, raw[:, 0], raw[:, 1])
    for k, (i, q) in enumerate(raw):
        s, p, _ = emu.infer(m, int(i), int(q))
        assert (s, p) == (res.states[k], res.prob_words[k])


def test_float_fixed_consistency(trained):
    params, sp, x = trained
    m = emu.quantize(params, sp)
    raw = np.rint(x).astype(np.int64)
    res = emu.infer_batch(m, raw[:, 0], raw[:, 1])
    ref = fnn.forward(params, fnn.scaler_apply(sp, raw))
    ok = res.overflows == 0
    assert ok.mean() > 0.99
    assert np.max(np.abs(fxp.decode_q10_17(res.prob_words[ok]) - ref[ok])) <= 0.02
    assert np.mean(res.states == fnn.predict(params, fnn.scaler_apply(sp, raw))) >= 0.999


def test_narrow_integer_part_overflows_and_misclassifies():
    # hidden node reaches 3.0: fine in Q10.17, saturates near 2 in a
    # 2-integer-bit format, which flips the sign of the output logit
    p = FnnParams([np.array([[3.0, 3.0]]), np.array([[0.5]])],
                  [np.array([0.0]), np.array([-1.25])])
    wide = emu.quantize(p, TOY_SCALER)
    narrow = emu.quantize(p, TOY_SCALER, LutConfig(256, -1.5, 1.5), act_fmt=QFormat(2, 17))
    s_wide, _, t_wide = emu.infer(wide, 48, 48)
    s_narrow, _, t_narrow = emu.infer(narrow, 48, 48)
    assert (s_wide, t_wide["overflow"]) == (1, 0)
    assert s_narrow == 0 and t_narrow["overflow"] > 0


@pytest.mark.parametrize("k, cycles", [(2, 1), (3, 1), (5, 2), (9, 4), (1, 0)])
def test_fold_sequential(k, cycles):
    assert emu.fold_cycles(k) == cycles


def test_fold_tree():
    tree = CyclePolicy(accumulation="tree")
    assert [emu.fold_cycles(k, tree) for k in (2, 3, 4, 9, 10)] == [1, 1, 2, 2, 3]


def test_cycle_report_default():
    rep = emu.cycle_report()
    assert rep.stages["layer2"] == 6
    assert rep.stages["layer1"] == 3
    assert rep.total_cycles == 27 and rep.total_ns == 54.0
    assert json.loads(rep.to_json())["total_cycles"] == 27


def test_smallest_layer():
    rep = emu.cycle_report(Architecture((2, 1)), CyclePolicy(norm_cycles=0))
    # fan_in 2 means 3 operands including the bias; fan_in 1 is the 2-operand case
    assert emu.CyclePolicy().mult_cycles + emu.fold_cycles(2) == 3
    assert rep.stages["layer1"] == 3


@pytest.mark.parametrize("sizes", [(2, 8, 4, 1), (2, 16, 8, 1), (2, 3, 1), (2, 32, 32, 32, 1)])
@pytest.mark.parametrize("mode", ["sequential", "tree"])
def test_cycle_total_is_stage_sum(sizes, mode):
    rep = emu.cycle_report(Architecture(sizes), CyclePolicy(accumulation=mode))
    assert rep.total_cycles == sum(rep.stages.values())


def test_monotone_scaling():
    base = Architecture((2, 8, 4, 1))
    wide = Architecture((2, 16, 8, 1))
    assert emu.resource_report(wide).dsp_count >= emu.resource_report(base).dsp_count
    assert emu.cycle_report(wide).total_cycles >= emu.cycle_report(base).total_cycles


def test_resource_report():
    rep = emu.resource_report()
    assert (rep.dsp_count, rep.lut_estimate, rep.ff_estimate, rep.carry8_estimate) == \
        (52, 1592, 2597, 80)
    assert emu.resource_report(Architecture((2, 1))).dsp_count == 2
    assert emu.resource_report(Architecture((2, 16, 8, 1))).dsp_count == 168


def _bank_models(trained, ids=range(8)):
    params, sp, _ = trained
    out = []
    for q in ids:
        p = params.copy()
        p.biases[-1] += 0.01 * q
        out.append(emu.quantize(p, sp, qubit_id=q))
    return out


def test_bank_roundtrip_one(tmp_path, trained):
    m = _bank_models(trained, [3])[0]
    emu.bank_store([m], tmp_path / "bank.txt")
    assert emu.bank_load(tmp_path / "bank.txt", 3).same_words(m)


def test_bank_roundtrip_eight(tmp_path, trained):
    models = _bank_models(trained)
    emu.bank_store(models, tmp_path / "bank.txt")
    assert emu.bank_load(tmp_path / "bank.txt", 5).same_words(models[5])
    loaded = emu.bank_load_all(tmp_path / "bank.txt")
    assert all(a.same_words(b) for a, b in zip(loaded, models))


def test_bank_rejects_duplicates_and_overflow(trained):
    m = _bank_models(trained, [1, 1])
    with pytest.raises(ReadoutError, match="duplicate"):
        emu.bank_dumps(m)
    with pytest.raises(ReadoutError):
        emu.bank_dumps(_bank_models(trained) + _bank_models(trained, [0]))


def test_bank_missing_qubit(tmp_path, trained):
    emu.bank_store(_bank_models(trained, [0, 2]), tmp_path / "bank.txt")
    with pytest.raises(ReadoutError, match="qubit 1 not found"):
        emu.bank_load(tmp_path / "bank.txt", 1)


def test_bank_corrupt_digit_names_offset(tmp_path, trained):
    path = tmp_path / "bank.txt"
    emu.bank_store(_bank_models(trained, [0, 1]), path)
    text = path.read_text()
    lines = text.splitlines(keepends=True)
    pos = sum(len(l) for l in lines[:5]) + 2      # third char of a weight word, record 0
    path.write_text(text[:pos] + "g" + text[pos + 1:])
    with pytest.raises(BankFormatError) as exc:
        emu.bank_load(path, 0)
    assert exc.value.offset == pos and f"byte offset {pos}" in str(exc.value)


def test_bank_valid_digit_flip_caught_by_checksum(tmp_path, trained):
    path = tmp_path / "bank.txt"
    emu.bank_store(_bank_models(trained, [0, 1]), path)
    text = path.read_text()
    pos = text.index("\n", text.index("qubit 1")) + 1
    flipped = "1" if text[pos] != "1" else "2"
    path.write_text(text[:pos] + flipped + text[pos + 1:])
    with pytest.raises(BankFormatError, match="checksum") as exc:
        emu.bank_load(path, 1)
    assert exc.value.offset == text.index("qubit 1")
    assert emu.bank_load(path, 0).qubit_id == 0


def test_bank_truncated_and_headerless(tmp_path, trained):
    path = tmp_path / "bank.txt"
    emu.bank_store(_bank_models(trained, [0]), path)
    text = path.read_text()
    path.write_text(text[: len(text) // 2])
    with pytest.raises(BankFormatError, match="truncated"):
        emu.bank_load(path, 0)
    path.write_text(text.split("\n", 1)[1])
    with pytest.raises(BankFormatError):
        emu.bank_load(path, 0)


def test_feedback_perfect_discriminator(rng):
    cl = GaussianCluster.isotropic((-1e6, 0), (1e6, 0), 0.0)
    res = emu.mid_circuit_feedback(lambda i, q: (i > 0).astype(int),
                                   FeedbackScenario(cl, 20_000), rng)
    assert set(k for k, v in res.counts.items() if v) == {"00", "11"}
    assert res.total == 20_000


def test_feedback_constant_ground_stub(rng):
    cl = GaussianCluster.isotropic((-1e6, 0), (1e6, 0), 1e5)
    res = emu.mid_circuit_feedback(lambda i, q: np.zeros(len(i), int),
                                   FeedbackScenario(cl, 10_000), rng)
    # Q1 stays in ground, Q2 is still 50/50
    assert res.prob("00") + res.prob("01") == 1.0
    assert res.prob("11") == 0.0 and res.prob("10") == 0.0
