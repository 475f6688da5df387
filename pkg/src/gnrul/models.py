"""Learnable functions of the GNN-tCNN model and the LSTM-tCNN baseline.

Both models share the temporal-CNN node encoder and the softplus Gamma head.
Parameters live in a flat :class:`Parameters` mapping with dotted names, which
is also the unit of checkpointing.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .gradcore import DimensionError, Tensor
from .graphnet import GNBlock, GraphIndependent, batch_graphs, encode_process_decode
from .prob import GammaParams

MODEL_KINDS = ("gnn_tcnn", "lstm_tcnn")

# (kernel, stride, filters) of one encoder stack; padding 1 on the k=3 layers
TCNN_STACK = ((1, 1, 50), (3, 2, 18), (3, 2, 18), (3, 2, 50))
TCNN_STACKS = 3
TCNN_ACTIVATION_LAYER = 2
GAMMA_EPS = 1e-6


@dataclass
class ModelConfig:
    kind: str = "gnn_tcnn"
    latent: int = 15
    hidden: int = 30
    n_core: int = 3
    in_channels: int = 1
    segment_length: int = 1000
    dropout: float = 0.2
    time_scale: float = 1000.0
    aggregation: str = "mean"
    lstm_hidden: int = 30
    head_hidden: int = 30

    def __post_init__(self):
        self.kind = normalize_kind(self.kind)
        if min(self.latent, self.hidden, self.n_core, self.lstm_hidden, self.head_hidden) < 1:
            raise ValueError("widths and n_core must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.time_scale <= 0:
            raise ValueError("time_scale must be positive")
        if self.segment_length < 16:
            raise ValueError("segment_length must be >= 16")

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text):
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, raw = line.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in types:
                raise ValueError(f"unknown model config key {key!r}")
            kind = types[key]
            values[key] = int(raw) if kind in (int, "int") else float(raw) if kind in (float, "float") else raw
        return cls(**values)


def normalize_kind(kind):
    kind = kind.replace("-", "_").lower()
    if kind not in MODEL_KINDS:
        raise ValueError(f"unknown model kind {kind!r}; expected one of {MODEL_KINDS}")
    return kind


class Parameters(dict):
    """Named parameter tensors (all gradient-tracked)."""

    def add(self, name, array):
        if name in self:
            raise KeyError(f"duplicate parameter {name!r}")
        self[name] = Tensor(array, requires_grad=True, name=name)

    def zero_grad(self):
        for p in self.values():
            p.grad = None

    def arrays(self):
        return {k: v.data.copy() for k, v in self.items()}

    @classmethod
    def from_arrays(cls, arrays):
        out = cls()
        for k, v in arrays.items():
            out.add(k, v)
        return out

    def n_values(self):
        return sum(p.size for p in self.values())


# ------------------------------------------------------------ initialization

def _uniform(rng, shape, fan_in):
    bound = math.sqrt(1.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def _add_linear(params, rng, name, n_in, n_out):
    params.add(f"{name}.w", _uniform(rng, (n_in, n_out), n_in))
    params.add(f"{name}.b", _uniform(rng, (n_out,), n_in))


def _add_tcnn(params, rng, cfg):
    channels = cfg.in_channels
    for s in range(TCNN_STACKS):
        for j, (k, _, filters) in enumerate(TCNN_STACK):
            fan_in = channels * k
            params.add(f"tcnn.s{s}.c{j}.w", _uniform(rng, (filters, channels, k), fan_in))
            params.add(f"tcnn.s{s}.c{j}.b", _uniform(rng, (filters,), fan_in))
            channels = filters
    _add_linear(params, rng, "tcnn.out", channels, cfg.latent)


def _add_gated_mlp(params, rng, name, n_in, hidden, n_out):
    _add_linear(params, rng, f"{name}.gate", n_in, hidden)
    _add_linear(params, rng, f"{name}.act", n_in, hidden)
    _add_linear(params, rng, f"{name}.out", hidden, n_out)


def _add_heads(params, rng, n_in, cfg):
    for head in ("head_alpha", "head_beta"):
        _add_linear(params, rng, f"{head}.l0", n_in, cfg.head_hidden)
        _add_linear(params, rng, f"{head}.l1", cfg.head_hidden, 1)


def init_params(cfg, rng):
    """Uniform(+-sqrt(1/fan_in)) initialization for the model in ``cfg.kind``."""
    params = Parameters()
    _add_tcnn(params, rng, cfg)
    d = cfg.latent
    if cfg.kind == "gnn_tcnn":
        _add_linear(params, rng, "edge_enc.l0", 1, cfg.hidden)
        _add_linear(params, rng, "edge_enc.l1", cfg.hidden, d)
        _add_gated_mlp(params, rng, "core.edge", 3 * d, cfg.hidden, d)
        _add_gated_mlp(params, rng, "core.node", 2 * d, cfg.hidden, d)
        _add_linear(params, rng, "final", d, d)
        _add_heads(params, rng, d, cfg)
    else:
        h = cfg.lstm_hidden
        n_in = d + 1 + h
        params.add("lstm.w", _uniform(rng, (n_in, 4 * h), n_in))
        params.add("lstm.b", _uniform(rng, (4 * h,), n_in))
        _add_heads(params, rng, h, cfg)
    return params


def expected_shapes(cfg):
    return {k: v.shape for k, v in init_params(cfg, np.random.default_rng(0)).items()}


# ------------------------------------------------------------------ layers

def linear(x, params, name):
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def gated_mlp(x, params, name):
    """``W_out (sigmoid(W_g x) * tanh(W_a x)) + b_out``."""
    gate = gc.sigmoid(linear(x, params, f"{name}.gate"))
    act = gc.tanh(linear(x, params, f"{name}.act"))
    return linear(gate * act, params, f"{name}.out")


def tcnn_encode(segment, params, cfg, training=False, rng=None):
    """Temporal CNN: ``[C, L] -> [d]`` or batched ``[B, C, L] -> [B, d]``."""
    x = gc.as_tensor(segment)
    single = x.ndim == 2
    if single:
        x = x.reshape((1,) + x.shape)
    if x.ndim != 3:
        raise DimensionError(f"segments must be [C, L] or [B, C, L], got {x.shape}")
    if x.shape[1] != cfg.in_channels:
        raise DimensionError(f"expected {cfg.in_channels} channels, got {x.shape[1]}")
    if x.shape[2] < 16:
        raise DimensionError(f"segment length {x.shape[2]} is below the minimum of 16")
    if training and cfg.dropout > 0 and rng is None:
        raise ValueError("training mode needs an rng for dropout")
    for s in range(TCNN_STACKS):
        for j, (k, stride, _) in enumerate(TCNN_STACK):
            x = gc.conv1d(x, params[f"tcnn.s{s}.c{j}.w"], stride=stride, padding=k // 2,
                          bias=params[f"tcnn.s{s}.c{j}.b"])
            if j == TCNN_ACTIVATION_LAYER:
                x = gc.dropout(gc.relu(x), cfg.dropout, training, rng)
        if s < TCNN_STACKS - 1:
            # windows longer than the remaining sequence average what is left
            x = gc.avg_pool1d(x, min(2, x.shape[-1]), 2)
        else:
            x = gc.global_avg_pool(x)
    out = gc.leaky_relu(linear(x, params, "tcnn.out"))
    return out.reshape((cfg.latent,)) if single else out


def edge_encode(dt, params, cfg):
    """Map elapsed times (seconds) to ``[E, d]`` edge states."""
    dt = np.asarray(dt, dtype=np.float64)
    single = dt.ndim == 0
    dt = dt.reshape(-1)
    if np.any(dt < 0):
        raise ValueError("negative elapsed time violates causality")
    x = Tensor((dt / cfg.time_scale)[:, None])
    h = gc.leaky_relu(linear(x, params, "edge_enc.l0"))
    out = gc.leaky_relu(linear(h, params, "edge_enc.l1"))
    return out.reshape((cfg.latent,)) if single else out


def _rows(x):
    x = gc.as_tensor(x)
    return (x.reshape((1, x.shape[0])), True) if x.ndim == 1 else (x, False)


def core_edge_update(e, v_sender, v_receiver, params):
    """Residual gated MLP on ``[e, v_sender, v_receiver]``, added to ``e``."""
    e, single = _rows(e)
    v_sender, _ = _rows(v_sender)
    v_receiver, _ = _rows(v_receiver)
    if not e.shape[1] == v_sender.shape[1] == v_receiver.shape[1]:
        raise DimensionError("edge and node states must share the latent width")
    out = gated_mlp(gc.concat([e, v_sender, v_receiver], axis=1), params, "core.edge") + e
    return out.reshape((out.shape[1],)) if single else out


def core_node_update(v, e_bar, params):
    """Residual gated MLP on ``[v, e_bar]``, added to ``v``."""
    v, single = _rows(v)
    e_bar, _ = _rows(e_bar)
    if v.shape[1] != e_bar.shape[1]:
        raise DimensionError("node state and aggregated message widths differ")
    out = gated_mlp(gc.concat([v, e_bar], axis=1), params, "core.node") + v
    return out.reshape((out.shape[1],)) if single else out


def decode_gamma(v_last, params):
    """Two softplus-terminated MLP heads giving strictly positive (alpha, beta)."""
    v, single = _rows(v_last)
    heads = []
    for head in ("head_alpha", "head_beta"):
        h = gc.leaky_relu(linear(v, params, f"{head}.l0"))
        out = gc.softplus(linear(h, params, f"{head}.l1")) + GAMMA_EPS
        heads.append(out.reshape(()) if single else out.reshape((v.shape[0],)))
    return GammaParams(heads[0], heads[1])


# ------------------------------------------------------------------ models

def _as_list(samples):
    return [samples] if hasattr(samples, "graph") else list(samples)


def gnn_tcnn_forward(samples, params, cfg, training=False, rng=None):
    """Predict Gamma parameters at the readout node of each causal sample.

    Accepts one sample (scalar outputs) or a list (``[B]`` outputs).
    """
    single = hasattr(samples, "graph")
    samples = _as_list(samples)
    if not samples:
        raise ValueError("no samples to evaluate")
    graph, segments = batch_graphs([s.graph for s in samples])

    encoder = GraphIndependent(
        node_fn=lambda v: tcnn_encode(v, params, cfg, training, rng),
        edge_fn=lambda e: edge_encode(e.data[:, 0], params, cfg) if e.shape[0] else Tensor(np.zeros((0, cfg.latent))),
    )
    core = GNBlock(
        edge_fn=lambda e, v_r, v_s: core_edge_update(e, v_s, v_r, params),
        node_fn=lambda e_bar, v: core_node_update(v, e_bar, params),
        aggregation=cfg.aggregation,
    )
    decoder = GraphIndependent(node_fn=lambda v: gc.leaky_relu(linear(v, params, "final")))
    out = encode_process_decode(graph, encoder, core, decoder, cfg.n_core)

    readout = np.array([off + s.readout for off, s in zip(segments.node_offsets[:-1], samples)])
    gamma = decode_gamma(gc.take(out.node_attrs, readout), params)
    if single:
        return GammaParams(gamma.alpha.reshape(()), gamma.beta.reshape(()))
    return gamma


def _check_ordered(times):
    if np.any(np.diff(times) <= 0):
        raise ValueError("observations must be in strictly increasing time order")


def _lstm_run(encoded, sequences, dts, params, cfg):
    """Masked LSTM over right-aligned sequences of encoded rows.

    ``sequences[b]`` lists row indices into ``encoded`` in time order and
    ``dts[b]`` the matching elapsed times since the previous observation.
    """
    h_dim = cfg.lstm_hidden
    batch = len(sequences)
    steps = max(len(s) for s in sequences)
    pad_row = encoded.shape[0]
    table = gc.concat([encoded, Tensor(np.zeros((1, encoded.shape[1])))], axis=0)
    h = Tensor(np.zeros((batch, h_dim)))
    c = Tensor(np.zeros((batch, h_dim)))
    for t in range(steps):
        rows = np.full(batch, pad_row)
        dt_col = np.zeros((batch, 1))
        mask = np.zeros((batch, 1))
        for b, (seq, dt) in enumerate(zip(sequences, dts)):
            offset = steps - len(seq)
            if t >= offset:
                rows[b] = seq[t - offset]
                dt_col[b, 0] = dt[t - offset] / cfg.time_scale
                mask[b, 0] = 1.0
        x = gc.concat([gc.take(table, rows), Tensor(dt_col), h], axis=1)
        gates = x @ params["lstm.w"] + params["lstm.b"]
        i = gc.sigmoid(gates[:, 0:h_dim])
        f = gc.sigmoid(gates[:, h_dim:2 * h_dim])
        g = gc.tanh(gates[:, 2 * h_dim:3 * h_dim])
        o = gc.sigmoid(gates[:, 3 * h_dim:4 * h_dim])
        c_new = f * c + i * g
        h_new = o * gc.tanh(c_new)
        c = c_new * mask + c * (1.0 - mask)
        h = h_new * mask + h * (1.0 - mask)
    return h


def lstm_tcnn_forward(observations, params, cfg, training=False, rng=None):
    """LSTM-tCNN on one ordered sequence ``[(segment, dt_from_previous), ...]``."""
    observations = list(observations)
    if not observations:
        raise ValueError("no observations")
    dts = np.array([float(dt) for _, dt in observations])
    if dts[0] != 0.0:
        raise ValueError("the first observation must have dt = 0")
    if np.any(dts[1:] <= 0):
        raise ValueError("observations must be in strictly increasing time order")
    segments = np.stack([np.asarray(getattr(s, "data", s), dtype=np.float64) for s, _ in observations])
    encoded = tcnn_encode(segments, params, cfg, training, rng)
    h = _lstm_run(encoded, [np.arange(len(observations))], [dts], params, cfg)
    gamma = decode_gamma(h, params)
    return GammaParams(gamma.alpha.reshape(()), gamma.beta.reshape(()))


def lstm_tcnn_forward_batch(samples, params, cfg, training=False, rng=None):
    """LSTM-tCNN on causal samples; nodes are consumed in timestamp order."""
    single = hasattr(samples, "graph")
    samples = _as_list(samples)
    node_data = []
    sequences, dts = [], []
    offset = 0
    for s in samples:
        times = np.asarray(s.node_times, dtype=np.float64)
        order = np.argsort(times, kind="stable")
        _check_ordered(times[order])
        if order[-1] != s.readout:
            raise ValueError("readout node must be the latest observation")
        node_data.append(s.graph.node_attrs.data)
        sequences.append(offset + order)
        dts.append(np.diff(times[order], prepend=times[order][0]))
        offset += len(times)
    encoded = tcnn_encode(np.concatenate(node_data, axis=0), params, cfg, training, rng)
    h = _lstm_run(encoded, sequences, dts, params, cfg)
    gamma = decode_gamma(h, params)
    if single:
        return GammaParams(gamma.alpha.reshape(()), gamma.beta.reshape(()))
    return gamma


FORWARD = {
    "gnn_tcnn": gnn_tcnn_forward,
    "lstm_tcnn": lstm_tcnn_forward_batch,
}


class Model:
    """A configured model kind bound to its parameters."""

    def __init__(self, cfg, params=None, rng=None):
        self.cfg = cfg
        self.params = params if params is not None else init_params(cfg, rng or np.random.default_rng(0))
        shapes = expected_shapes(cfg)
        got = {k: v.shape for k, v in self.params.items()}
        if got != shapes:
            raise ValueError("parameters do not match the model configuration")

    @property
    def kind(self):
        return self.cfg.kind

    def __call__(self, samples, training=False, rng=None):
        return FORWARD[self.cfg.kind](samples, self.params, self.cfg, training, rng)

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        gc.save_params(self.params.arrays(), directory / "params.bin")
        (directory / "model.cfg").write_text(self.cfg.to_text())

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        cfg = ModelConfig.from_text((directory / "model.cfg").read_text())
        params = Parameters.from_arrays(gc.load_params(directory / "params.bin"))
        return cls(cfg, params)


def config_dict(cfg):
    return asdict(cfg)
