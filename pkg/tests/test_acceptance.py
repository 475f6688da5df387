"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v -s`` (or execute this file).
Criteria 5-7 share one desk-scale simulated dataset and one GNN-tCNN training
run; criterion 5 alone budgets 30 minutes of CPU time.
"""

import hashlib
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

from gnrul import gradcore as gc
from gnrul.bearings import SplitEntry, default_split, load_femto
from gnrul.cli import main as cli_main
from gnrul.gradcore import Tensor
from gnrul.graphnet import AttributedGraph, GNBlock, batch_graphs
from gnrul.models import ModelConfig, gnn_tcnn_forward, init_params, lstm_tcnn_forward_batch
from gnrul.prob import GammaParams, gamma_log_pdf, gamma_sample, nll_grad, nll_terms
from gnrul.sampler import SamplerConfig, make_sample
from gnrul.simdata import SimProcessConfig, generate_dataset, shape_schedule, simulate_latent
from gnrul.trainer import (
    REPORT_COLUMNS,
    TrainConfig,
    constant_gamma_baseline,
    evaluate,
    evaluate_constant,
    train,
)

from conftest import numeric_grad
from helpers import directional_fd_check, sample_nll, toy_experiment, write_femto_fixture

pytestmark = pytest.mark.acceptance

# desk-scale setting shared by criteria 5-7
DESK_SIM = SimProcessConfig(n_steps=300, segment_length=256, n_train=12, n_test=3, seed=0)
DESK_TRAIN = TrainConfig(max_epochs=60, samples_per_experiment=128, seed=0)


def verdict(capsys, number, ok, detail, seconds=None):
    timing = "" if seconds is None else f" [{seconds:.1f} s]"
    with capsys.disabled():
        print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} - {detail}{timing}")
    assert ok, detail


# ---------------------------------------------------------------- criterion 1

def _rel_close(got, want, rtol, atol=1e-7):
    return np.all(np.abs(got - want) <= atol + rtol * np.abs(want))


def _primitive_cases(rng):
    """(name, build(*tensors) -> scalar, input arrays) for every differentiable primitive."""
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    pos = rng.uniform(0.5, 3.0, size=(3, 4))
    w = rng.normal(size=(3, 4))
    seg = np.array([0, 2, 2, 1, 0])
    cases = [
        ("add", lambda x, y: ((x + y) * w).sum(), [a, b]),
        ("sub", lambda x, y: ((x - y) * w).sum(), [a, b]),
        ("mul", lambda x, y: ((x * y) * w).sum(), [a, b]),
        ("div", lambda x, y: ((x / y) * w).sum(), [a, pos]),
        ("neg", lambda x: ((-x) * w).sum(), [a]),
        ("power", lambda x: (gc.power(x, 3.0) * w).sum(), [pos]),
        ("matmul", lambda x, y: ((x @ y) ** 2).sum(), [a, rng.normal(size=(4, 2))]),
        ("broadcast add", lambda x, y: ((x + y) * w).sum(), [a, rng.normal(size=(4,))]),
        ("transpose", lambda x: (x.T @ Tensor(w)).sum(), [a]),
        ("reshape", lambda x: (x.reshape((4, 3)) * w.reshape(4, 3)).sum(), [a]),
        ("concat", lambda x, y: (gc.concat([x, y], axis=0) ** 2).sum(), [a, b]),
        ("getitem", lambda x: (x[1:, ::2] ** 2).sum(), [a]),
        ("take", lambda x: (gc.take(x, np.array([2, 0, 2]), axis=0) ** 2).sum(), [a]),
        ("sum", lambda x: (x.sum(axis=0) * w[0]).sum(), [a]),
        ("mean", lambda x: (x.mean(axis=1) ** 2).sum(), [a]),
        ("slice", lambda x: (gc.slice_(x, [(0, 2), (1, 4)]) ** 2).sum(), [a]),
        ("conv1d", lambda x, k, bb: (gc.conv1d(x, k, stride=2, padding=1, bias=bb) ** 2).sum(),
         [rng.normal(size=(2, 3, 11)), rng.normal(size=(4, 3, 3)), rng.normal(size=(4,))]),
        ("avg_pool1d", lambda x: (gc.avg_pool1d(x, 2, 2) ** 2).sum(), [rng.normal(size=(3, 9))]),
        ("global_avg_pool", lambda x: (gc.global_avg_pool(x) ** 2).sum(), [rng.normal(size=(3, 9))]),
    ]
    for op in (gc.segment_sum, gc.segment_mean, gc.segment_max, gc.segment_min):
        cases.append((op.__name__, lambda x, op=op: (op(x, seg, 3) ** 2).sum(), [rng.normal(size=(5, 2))]))
    for name in sorted(gc.ELEMENTWISE):
        x = pos if name in ("log", "lgamma") else a + 0.05  # keep relu kinks away from 0
        cases.append((name, lambda t, name=name: (gc.elementwise(name, t) * w).sum(), [x]))
    return cases


def test_criterion_1_gradients(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(101)
    bad = []
    cases = _primitive_cases(rng)
    for name, build, arrays in cases:
        expected = numeric_grad(lambda *arrs: build(*[Tensor(x) for x in arrs]).item(),
                                [np.array(x, dtype=float) for x in arrays])
        tensors = [Tensor(x, requires_grad=True) for x in arrays]
        gc.backward(build(*tensors))
        if not all(_rel_close(t.grad, e, 1e-4) for t, e in zip(tensors, expected)):
            bad.append(name)

    exp = toy_experiment(rng, length=32)
    two_node = make_sample(exp, 20, [15], SamplerConfig())
    for kind, forward in (("gnn_tcnn", gnn_tcnn_forward), ("lstm_tcnn", lstm_tcnn_forward_batch)):
        cfg = ModelConfig(kind=kind, segment_length=32)
        params = init_params(cfg, np.random.default_rng(3))
        if directional_fd_check(sample_nll(forward, [two_node], cfg), params, rng, rtol=1e-3):
            bad.append(kind)
    elapsed = time.perf_counter() - start
    ok = not bad and two_node.n_nodes == 2 and elapsed < 120
    verdict(capsys, 1, ok, f"{len(cases)} primitives + 2 end-to-end models, failures: {bad or 'none'}", elapsed)


# ---------------------------------------------------------------- criterion 2

def _random_graph(rng):
    n = int(rng.integers(1, 11))
    e = int(rng.integers(0, 3 * n))
    return AttributedGraph(rng.normal(size=(n, 4)), rng.normal(size=(e, 3)),
                           rng.integers(0, n, e), rng.integers(0, n, e))


def test_criterion_2_graphnet_invariants(capsys):
    start = time.perf_counter()
    rng = np.random.default_rng(202)
    we, wv = rng.normal(size=(11, 3)), rng.normal(size=(7, 4))
    block = GNBlock(
        edge_fn=lambda e, vr, vs: gc.tanh(gc.concat([e, vr, vs], axis=1) @ we),
        node_fn=lambda eb, v: gc.tanh(gc.concat([eb, v], axis=1) @ wv),
    )
    worst = 0.0
    for _ in range(100):
        g = _random_graph(rng)
        out = block(g)
        perm = rng.permutation(g.n_edges)
        permuted = block(AttributedGraph(g.node_attrs, g.edge_attrs.data[perm], g.senders[perm], g.receivers[perm]))
        worst = max(worst, float(np.max(np.abs(out.node_attrs.data - permuted.node_attrs.data))))
        if g.n_edges:
            worst = max(worst, float(np.max(np.abs(out.edge_attrs.data[perm] - permuted.edge_attrs.data))))
        others = [_random_graph(rng) for _ in range(int(rng.integers(1, 4)))]
        batched, segmap = batch_graphs([g, *others])
        pieces = segmap.unbatch(block(batched))
        for single, piece in zip([g, *others], pieces):
            ref = block(single)
            worst = max(worst, float(np.max(np.abs(ref.node_attrs.data - piece.node_attrs.data))))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 60
    verdict(capsys, 2, ok, f"max deviation {worst:.2e} over 100 graphs (tolerance 1e-12)", elapsed)


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_gamma(capsys):
    start = time.perf_counter()
    grid = [(a, b) for a in (0.5, 1.0, 2.0, 5.0, 20.0) for b in (0.5, 1.0, 2.0, 5.0)]
    worst_mass = 0.0
    for a, b in grid:
        p = GammaParams(a, b)
        pdf = lambda y, p=p: np.exp(gamma_log_pdf(p, y))
        split = a / b
        head, _ = integrate.quad(pdf, 0, split, epsabs=1e-13, limit=400)
        tail, _ = integrate.quad(pdf, split, np.inf, epsabs=1e-13, limit=400)
        worst_mass = max(worst_mass, abs(head + tail - 1.0))

    rng = np.random.default_rng(303)
    tape, closed = [], []
    for _ in range(20):
        a, b, y = rng.uniform(0.3, 10), rng.uniform(0.2, 5), rng.uniform(0.05, 5)
        at, bt = Tensor(np.array(a), requires_grad=True), Tensor(np.array(b), requires_grad=True)
        gc.backward(nll_terms(GammaParams(at, bt), np.array(y)).sum())
        tape.append([float(at.grad), float(bt.grad)])
        closed.append(nll_grad(GammaParams(a, b), y))
    tape, closed = np.array(tape), np.array(closed, dtype=float)
    grad_ok = np.allclose(tape, closed, rtol=1e-6, atol=1e-12)
    worst_grad = float(np.max(np.abs(tape - closed) / np.maximum(np.abs(closed), 1e-12)))

    pvalues = []
    for i, (a, b) in enumerate([(0.3, 1.0), (1.0, 2.0), (2.5, 0.5), (9.0, 4.0)]):
        draws = gamma_sample(GammaParams(a, b), np.random.default_rng(17 + i), 20_000)
        pvalues.append(stats.kstest(draws, stats.gamma(a, scale=1 / b).cdf).pvalue)
    elapsed = time.perf_counter() - start
    ok = worst_mass <= 1e-6 and grad_ok and min(pvalues) > 0.01 and elapsed < 120
    verdict(capsys, 3, ok, f"mass error {worst_mass:.1e}, gradient rel error {worst_grad:.1e}, "
                           f"min KS p {min(pvalues):.3f}", elapsed)


# ---------------------------------------------------------------- criterion 4

def test_criterion_4_process_statistics(capsys):
    start = time.perf_counter()
    # a 10-step grid puts t = 0.1, 0.5, 0.9 exactly on steps 1, 5, 9
    cfg = SimProcessConfig(n_steps=10)
    n, c = 100_000, 1.0
    rng = np.random.default_rng(404)
    paths = np.stack([simulate_latent(cfg, c, rng)[0] for _ in range(n)])
    incs = np.diff(paths, axis=1, prepend=0.0)
    z_scores = []
    for t in (0.1, 0.5, 0.9):
        step = int(round(t * cfg.n_steps))
        shape = shape_schedule(cfg.n_steps, c)[step]
        assert shape == pytest.approx(0.02 + t ** c)
        se = np.sqrt(shape) / cfg.rate / np.sqrt(n)
        z_scores.append(abs(incs[:, step].mean() - shape / cfg.rate) / se)
    elapsed = time.perf_counter() - start
    ok = max(z_scores) < 3 and elapsed < 60
    verdict(capsys, 4, ok, "standard errors from the Gamma mean at t=0.1/0.5/0.9: "
                           + ", ".join(f"{z:.2f}" for z in z_scores), elapsed)


# ---------------------------------------------------------------- criteria 5-7

@pytest.fixture(scope="module")
def desk():
    train_set, test_set, _ = generate_dataset(DESK_SIM)
    return train_set, test_set


@pytest.fixture(scope="module")
def desk_gnn(desk):
    train_set, test_set = desk
    model_cfg = ModelConfig(segment_length=DESK_SIM.segment_length, time_scale=DESK_SIM.horizon)
    sampler_cfg = SamplerConfig()
    start = time.perf_counter()
    result = train("gnn_tcnn", train_set, model_cfg, DESK_TRAIN, sampler_cfg)
    reports = {n: evaluate(result.params, test_set, model_cfg, sampler_cfg, n_past=n) for n in (1, 10)}
    return result, reports, time.perf_counter() - start


def test_criterion_5_more_observations(capsys, desk, desk_gnn):
    train_set, test_set = desk
    result, reports, elapsed = desk_gnn
    const = evaluate_constant(constant_gamma_baseline(train_set), test_set).aggregate_nll
    one, ten = reports[1].aggregate_nll, reports[10].aggregate_nll
    ok = ten < one < const and len(result.history) <= 60 and elapsed <= 1800
    verdict(capsys, 5, ok, f"test NLL n_past=10 {ten:.4f} < n_past=1 {one:.4f} < constant {const:.4f} "
                           f"({len(result.history)} epochs)", elapsed)


def test_criterion_6_uncertainty_concentrates(capsys, desk, desk_gnn):
    _, test_set = desk
    _, reports, _ = desk_gnn
    rows = reports[10].rows
    wins, parts = 0, []
    for exp in test_set:
        mine = [r for r in rows if r["exp_id"] == exp.exp_id]
        sd = np.array([np.sqrt(r["alpha"]) / r["beta"] for r in mine])
        life = np.array([r["timestamp"] for r in mine]) / exp.failure_time
        early, late = sd[life < 0.1].mean(), sd[life >= 0.9].mean()
        wins += late < early
        parts.append(f"{exp.exp_id} {early:.0f}->{late:.0f} s")
    verdict(capsys, 6, wins >= 2, f"{wins}/3 test experiments concentrate ({', '.join(parts)})")


def test_criterion_7_lstm_parity(capsys, desk, desk_gnn):
    train_set, test_set = desk
    _, gnn_reports, _ = desk_gnn
    model_cfg = ModelConfig(kind="lstm_tcnn", segment_length=DESK_SIM.segment_length, time_scale=DESK_SIM.horizon)
    start = time.perf_counter()
    tcfg = TrainConfig(max_epochs=8, samples_per_experiment=64, seed=0)
    result = train("lstm_tcnn", train_set, model_cfg, tcfg, SamplerConfig())
    report = evaluate(result.params, test_set, model_cfg, SamplerConfig(), n_past=10)
    elapsed = time.perf_counter() - start
    same_schema = all(set(r) == set(REPORT_COLUMNS) for r in report.rows + gnn_reports[10].rows)
    ok = np.isfinite(report.aggregate_nll) and same_schema and len(report.rows) == len(gnn_reports[10].rows)
    verdict(capsys, 7, ok, f"LSTM-tCNN test NLL {report.aggregate_nll:.4f}, "
                           f"{len(report.rows)} rows with the GNN report schema", elapsed)


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_femto_loader(capsys, tmp_path):
    table = default_split()
    split_ok = (
        {k for k, v in table.items() if v.split == "train"} == {"1_2", "1_3", "1_4", "1_5", "2_1", "2_5", "2_6", "3_3"}
        and {k for k, v in table.items() if v.split == "test"}
        == {"1_1", "1_6", "1_7", "2_2", "2_3", "2_4", "2_7", "3_1", "3_2"}
        and [(table[k].condition, table[k].failure_time, table[k].n_obs) for k in ("1_3", "2_7", "3_1", "3_2")]
        == [("A", 23740, 2375), ("B", 2290, 230), ("C", 5140, 515), ("C", 16360, 1637)]
    )
    write_femto_fixture(tmp_path, "2_7", 230)
    write_femto_fixture(tmp_path, "1_3", 2375, length=4, temperature=False)
    write_femto_fixture(tmp_path, "x_3", 3, length=8, dirname="x_3")
    _, (e27,) = load_femto(tmp_path, {"2_7": table["2_7"]})
    (e13,), _ = load_femto(tmp_path, {"1_3": table["1_3"]}, segment_length=4)
    (tiny,), _ = load_femto(tmp_path, {"x_3": SplitEntry("train", "A", 30.0, 3)}, segment_length=8)
    loaded_ok = (
        e27.n_obs == 230 and e27.segments.shape[1:] == (2, 2556)
        and np.array_equal(e27.timestamps, np.arange(230) * 10.0) and np.array_equal(e27.rul, 2290.0 - e27.timestamps)
        and e13.n_obs == 2375 and e13.failure_time == 23740 and e13.timestamps[-1] == 23740
        and tiny.n_obs == 3 and np.all(np.diff(tiny.rul) < 0)
    )
    verdict(capsys, 8, split_ok and loaded_ok,
            f"split matches the published table: {split_ok}; fixture counts/timestamps/RUL exact: {loaded_ok}")


# ---------------------------------------------------------------- criterion 9

DETERMINISM_CFG = """
sim.n_steps = 120
sim.segment_length = 64
sim.n_pilot = 100
sim.n_train = 4
sim.n_test = 2
train.max_epochs = 4
train.samples_per_experiment = 16
"""


def _csv_digests(root):
    return {str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest() for p in sorted(root.rglob("*.csv"))}


def test_criterion_9_determinism(capsys, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(DETERMINISM_CFG)
    digests = []
    for run in ("a", "b"):
        root = tmp_path / run
        codes = [
            cli_main(["simulate", "--config", str(cfg), "--out", str(root / "data"), "--seed", "5", "--threads", "1"]),
            cli_main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "model"),
                      "--seed", "5", "--threads", "1"]),
            cli_main(["evaluate", "--config", str(cfg), "--data", str(root / "data"), "--checkpoint",
                      str(root / "model"), "--n-past", "10", "--seed", "5", "--threads", "1",
                      "--out", str(root / "report.csv")]),
        ]
        assert codes == [0, 0, 0]
        digests.append(_csv_digests(root))
    ok = digests[0] == digests[1] and len(digests[0]) == 3
    verdict(capsys, 9, ok, f"{len(digests[0])} CSV files byte-identical across two runs: {digests[0] == digests[1]}")


if __name__ == "__main__":
    sys.exit(pytest.main([str(Path(__file__)), "-v", "-s"]))
