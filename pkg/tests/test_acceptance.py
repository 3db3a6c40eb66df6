"""Acceptance suite: one test per release criterion, at its stated tolerance.

Each test prints one `ACCEPTANCE <criterion>: PASS` line on success; a
failing criterion fails its test. Run with `pytest tests/test_acceptance.py -v -s`.
"""

import json
import time

import numpy as np
import pytest

from silt import model as md
from silt import tensor as tz
from silt import trainer as tr
from silt.cli import main as cli_main
from silt.store import Batch, EmbedStore, EmbeddingRecord, StoreWriter
from silt.tensor import RngState

from conftest import make_cli_project, make_training_setup, make_random_record
from oracles import finite_difference, max_relative_error, ref_head_forward
from test_model import TINY, head_loss_from_arrays, random_batch, tiny_params
from test_evalreport import twelve_example_fixture


def _report(name):
    print(f"\nACCEPTANCE {name}: PASS")


def test_gradient_fidelity():
    """End-to-end finite differences on the tiny config, <= 1e-3, < 30 s."""
    started = time.monotonic()
    params = tiny_params(seed=9)
    batch = random_batch(seed=14, b=2, u_lens=(4, 3), v_lens=(3, 4))
    arrays32 = [t.data.copy() for t in params.tensors()]

    loss, built = head_loss_from_arrays(arrays32, batch, TINY, np.float32)
    tz.backward(loss)
    analytic = [t.grad.astype(np.float64) for t in built.tensors()]

    def f(arrays):
        shadow, _ = head_loss_from_arrays(arrays, batch, TINY, np.float64)
        return float(shadow.data)

    numeric = finite_difference(f, [a.astype(np.float64) for a in arrays32])
    err = max_relative_error(analytic, numeric)
    elapsed = time.monotonic() - started
    assert err <= 1e-3, f"max relative error {err:.3e}"
    assert elapsed < 30.0, f"gradient check took {elapsed:.1f}s"
    _report(f"gradient-fidelity (err {err:.2e}, {elapsed:.1f}s)")


def test_oracle_equivalence():
    """Fixed-seed tiny forward matches the scripted reimplementation <= 1e-5."""
    params = tiny_params(seed=5)
    batch = random_batch(seed=13, b=2, u_lens=(3, 2), v_lens=(2, 3))
    logits, _ = md.forward(batch, params, TINY)
    ref = ref_head_forward(
        batch.u_raw, batch.v_raw, batch.u_mask, batch.v_mask, params.copy_data(), TINY.heads
    )
    diff = float(np.max(np.abs(logits.data - ref)))
    assert diff <= 1e-5, f"max absolute logit difference {diff:.3e}"
    _report(f"oracle-equivalence (max diff {diff:.2e})")


def test_architectural_invariants():
    """Swap symmetry, padding invariance, convex hull, row sums, determinism."""
    params = tiny_params(seed=3)
    batch = random_batch(seed=11)

    # swap symmetry +-1e-5
    ab, _ = md.forward(batch, params, TINY)
    swapped = Batch(batch.v_raw, batch.u_raw, batch.v_mask, batch.u_mask, batch.labels)
    ba, _ = md.forward(swapped, params, TINY)
    assert np.max(np.abs(ab.data - ba.data)) <= 1e-5

    # padding invariance +-1e-5 on both sides
    b, h, _, d = batch.u_raw.shape
    pad = np.zeros((b, h, 2, d), dtype=np.float32)
    zeros = np.zeros((b, 2), np.float32)
    padded = Batch(
        np.concatenate([batch.u_raw, pad], axis=2),
        np.concatenate([batch.v_raw, pad], axis=2),
        np.concatenate([batch.u_mask, zeros], axis=1),
        np.concatenate([batch.v_mask, zeros], axis=1),
        batch.labels,
    )
    out, _ = md.forward(padded, params, TINY)
    assert np.max(np.abs(ab.data - out.data)) <= 1e-5

    # alignment convex hull + softmax row sums over unmasked keys
    _, trace = md.forward(batch, params, TINY)
    for i in range(batch.size):
        live_v = trace.v.data[i][batch.v_mask[i] > 0]
        lo, hi = live_v.min(axis=0), live_v.max(axis=0)
        for j in range(batch.u_mask.shape[1]):
            if batch.u_mask[i, j] > 0:
                row = trace.u_star.data[i, j]
                assert np.all(row >= lo - 1e-5) and np.all(row <= hi + 1e-5)
    weights = tz.masked_softmax(trace.s_uv, batch.v_mask)
    live_rows = batch.u_mask > 0
    sums = weights.data.sum(axis=-1)[live_rows]
    assert np.max(np.abs(sums - 1.0)) <= 1e-6

    # eval-mode determinism, bitwise
    again, _ = md.forward(batch, params, TINY)
    assert ab.data.tobytes() == again.data.tobytes()
    _report("architectural-invariants")


def test_capacity_overfit(tmp_path):
    """32 random pairs memorized within 500 steps, < 5 min on one core."""
    started = time.monotonic()
    examples, store, cfg = make_training_setup(tmp_path, n_pairs=32, label_seed=5)
    opt = tr.OptimizerConfig(alpha0=1e-4, alpha_max=1e-2, step_size=50, gamma=1.0)
    run = tr.TrainRunConfig(epochs=125, batch_size=8, seed=2)
    result = tr.train(examples, examples, store, cfg, opt, run)
    _, acc, _ = tr.evaluate(examples, store, result.params, cfg, run.lcap, run.batch_size)
    store.close()
    elapsed = time.monotonic() - started
    assert result.step <= 500, f"{result.step} optimizer steps"
    assert acc == 1.0, f"train accuracy {acc:.3f}"
    assert elapsed < 300.0, f"overfit run took {elapsed:.0f}s"
    _report(f"capacity-overfit ({result.step} steps, {elapsed:.1f}s)")


def test_parameter_count():
    """Full-size head lands in [1e7, 2e7]; the breakdown is printed."""
    params = md.init_head_params(md.HeadConfig(), RngState(0))
    total = md.count_trainable(params)
    print("\nparameter breakdown (dim=768, heads=8, in_states=13):")
    for name, n in md.parameter_breakdown(params):
        print(f"  {name:<12} {n:>10,}")
    print(f"  {'total':<12} {total:>10,}")
    assert 1.0e7 <= total <= 2.0e7, f"total {total}"
    _report(f"parameter-count ({total:,})")


def test_corpus_fidelity(sick_table1_files, capsys):
    """corpus-summary reproduces the published SICK split table exactly."""
    en, es = sick_table1_files
    code = cli_main(
        ["corpus-summary", "--sick-en", str(en), "--sick-es", str(es), "--expect", "sick"]
    )
    out = capsys.readouterr().out
    assert code == 0, out
    assert "table check PASS" in out
    with capsys.disabled():
        _report("corpus-fidelity (SICK table reproduced)")


def test_metrics_correctness():
    """12-example fixture matches the hand-computed table exactly."""
    from silt.evalreport import grouped_report

    examples, preds = twelve_example_fixture()
    report = grouped_report(
        examples, preds, ["label", "language_pair", "relatedness", "genre", "length"]
    )
    assert report.overall.accuracy == pytest.approx(7 / 12, abs=1e-12)
    assert report.overall.macro_f1 == pytest.approx(0.5793651, abs=1e-6)
    degenerate = report.groups["relatedness"]["(1, 2]"]
    assert degenerate.accuracy == pytest.approx(1 / 3, abs=1e-12)
    assert degenerate.macro_f1 == pytest.approx(0.16667, abs=1e-5)
    assert report.groups["genre"]["government"].macro_f1 == pytest.approx(0.2222222, abs=1e-6)
    assert report.groups["length"]["(375, 500]"].accuracy == pytest.approx(2 / 3, abs=1e-12)
    _report("metrics-correctness (incl. macro-F1 0.16667 degenerate case)")


def test_format_stability(tmp_path):
    """1000-record roundtrip is bitwise; save/resume reproduces training."""
    rng = np.random.default_rng(123)
    records = []
    with StoreWriter(str(tmp_path / "big"), "fuzz", 2, 4) as w:
        for i in range(1000):
            rec = make_random_record(rng, f"r{i}", language="es" if i % 3 else "en")
            records.append(rec)
            w.write_record(rec)
    with EmbedStore(str(tmp_path / "big"), cache=False) as store:
        order = rng.permutation(len(records))
        for i in order:
            got = store.read_record(records[i].sentence_id)
            assert got.data.tobytes() == records[i].data.tobytes()
            assert got.language == records[i].language

    # checkpoint resume reproduces the uninterrupted run bitwise
    examples, store, cfg = make_training_setup(tmp_path, n_pairs=10)
    opt = tr.OptimizerConfig(alpha0=1e-4, alpha_max=5e-3, step_size=25, gamma=1.0)
    full = tr.train(examples, examples, store, cfg, opt,
                    tr.TrainRunConfig(epochs=4, batch_size=4, seed=11, dropout=0.2))
    half_cfg = tr.TrainRunConfig(epochs=2, batch_size=4, seed=11, dropout=0.2)
    half = tr.train(examples, examples, store, cfg, opt, half_cfg)
    tr.save_checkpoint(str(tmp_path / "half"), half, cfg, opt, half_cfg, next_epoch=2)
    resumed = tr.train(
        examples, examples, store, cfg, opt,
        tr.TrainRunConfig(epochs=4, batch_size=4, seed=11, dropout=0.2),
        resume=tr.load_checkpoint(str(tmp_path / "half")),
    )
    store.close()
    for (_, a), (_, b) in zip(resumed.params.named(), full.params.named()):
        assert a.data.tobytes() == b.data.tobytes()
    assert resumed.history == full.history
    _report("format-stability (1000-record roundtrip + bitwise resume)")
