import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gnrul.experiments import Experiment
from gnrul.sampler import (
    SamplerConfig,
    build_causal_graph,
    epoch_past_count,
    eval_graphs,
    sample_training_graph,
)


def experiment(times, tail=10.0, exp_id="e"):
    times = np.asarray(times, dtype=float)
    return Experiment(exp_id, "x", times, np.zeros((len(times), 1, 16)), times[-1] + tail)


class TestBuildGraph:
    def test_three_nodes(self):
        g = build_causal_graph([0, 150, 400], np.zeros((3, 1, 16)))
        edges = sorted(zip(g.senders.tolist(), g.receivers.tolist(), g.edge_attrs.data[:, 0].tolist()))
        assert edges == [(0, 1, 150.0), (0, 2, 400.0), (1, 2, 250.0)]

    def test_single(self):
        assert build_causal_graph([5.0], np.zeros((1, 1, 16))).n_edges == 0

    def test_ten(self):
        assert build_causal_graph(np.arange(10) * 100.0, np.zeros((10, 1, 16))).n_edges == 45

    def test_duplicate_times(self):
        with pytest.raises(ValueError):
            build_causal_graph([0, 0], np.zeros((2, 1, 16)))

    def test_self_edges(self):
        g = build_causal_graph([0, 1], np.zeros((2, 1, 16)), self_edges=True)
        assert g.n_edges == 3 and (g.senders == g.receivers).sum() == 2


class TestTrainingSample:
    def test_single_node(self, rng):
        s = sample_training_graph(experiment(np.arange(100) * 10.0), SamplerConfig(), 1, rng)
        assert s.n_nodes == 1 and s.graph.n_edges == 0

    def test_degrades_gracefully(self, rng):
        s = sample_training_graph(experiment([0.0, 50.0]), SamplerConfig(), 10, rng)
        assert s.n_nodes == 1

    def test_target(self, rng):
        exp = experiment(np.arange(100) * 10.0)
        s = sample_training_graph(exp, SamplerConfig(), 5, rng)
        assert s.target == exp.failure_time - s.node_times[s.readout] > 0

    def test_never_anchors_at_failure(self, rng):
        exp = experiment([0.0, 10.0, 20.0], tail=0.0)
        for _ in range(20):
            assert sample_training_graph(exp, SamplerConfig(window=300, min_spacing=5), 2, rng).target > 0


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 2**31 - 1),
    n_obs=st.integers(1, 400),
    spacing=st.floats(1.0, 60.0),
    n_past=st.integers(1, 30),
)
def test_constraints_hold(seed, n_obs, spacing, n_past):
    rng = np.random.default_rng(seed)
    times = np.cumsum(rng.uniform(0.5, 1.5, n_obs) * spacing)
    exp = experiment(times)
    cfg = SamplerConfig()
    s = sample_training_graph(exp, cfg, n_past, rng)
    t = s.node_times
    assert s.n_nodes <= n_past
    assert s.readout == int(np.argmax(t)) and np.sum(t == t.max()) == 1
    assert np.all(t[s.readout] - t <= cfg.window)
    if len(t) > 1:
        assert np.min(np.diff(np.sort(t))) >= cfg.min_spacing
    assert np.all(t[s.graph.senders] < t[s.graph.receivers])


class TestSchedule:
    def test_default_schedule(self):
        cfg = SamplerConfig()
        assert [epoch_past_count(e, cfg) for e in range(5)] == [1, 2, 5, 10, 1]

    def test_constant(self):
        cfg = SamplerConfig(schedule=[5])
        assert {epoch_past_count(e, cfg) for e in range(7)} == {5}

    def test_invalid(self):
        with pytest.raises(ValueError):
            SamplerConfig(window=50, min_spacing=100)


class TestEvalGraphs:
    def test_one_per_observation_in_order(self):
        exp = experiment(np.arange(80) * 10.0)
        samples = eval_graphs(exp, SamplerConfig(), n_past=10)
        assert len(samples) == exp.n_obs
        anchors = [s.node_times[s.readout] for s in samples]
        assert anchors == sorted(anchors) and anchors[0] == 0.0

    def test_deterministic(self):
        exp = experiment(np.arange(80) * 10.0)
        a = eval_graphs(exp, SamplerConfig(seed=4), n_past=6)
        b = eval_graphs(exp, SamplerConfig(seed=4), n_past=6)
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.node_times, y.node_times)

    def test_default_uses_eval_past(self):
        exp = experiment(np.arange(400) * 10.0)
        samples = eval_graphs(exp, SamplerConfig())
        sizes = [s.n_nodes for s in samples]
        # a 2000 s window at 100 s spacing holds at most 21 nodes; random greedy packing fills most of it
        assert max(sizes) <= 21 and min(sizes[250:]) >= 12

    def test_excludes_zero_rul(self):
        exp = experiment(np.arange(5) * 10.0, tail=0.0)
        assert len(eval_graphs(exp, SamplerConfig())) == 4
