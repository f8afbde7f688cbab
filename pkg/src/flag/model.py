"""Graph classifier: input projection, stacked attention layers, two-layer head.

The forward pass runs on :mod:`flag.autograd` tensors.  Parameters live as
plain numpy arrays in :attr:`Model.params`; each forward wraps them in fresh
leaf tensors, and :func:`backward` writes the leaf gradients into the
matching :attr:`Model.grads` buffers.

Layer kinds:

``gatv2``
    score(i <- j) = a . LeakyReLU(W_src h_j + W_dst h_i)
``gat``
    score(i <- j) = LeakyReLU(a_dst . W h_i + a_src . W h_j)
``gcn``
    symmetric-normalized sum with self-loops, ``D^-1/2 (A + I) D^-1/2 H W``

Attention is normalized over the in-neighbours of each node plus a transient
self-loop.  Heads are concatenated at every layer and every layer ends in ELU.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from flag import autograd as ag

LAYER_KINDS = ("gatv2", "gat", "gcn")
CHECKPOINT_MAGIC = b"FLAGM1"


class CheckpointFormatError(ValueError):
    pass


@dataclass
class ModelConfig:
    n_layers: int = 4
    n_heads: int = 8
    hidden_dim: int = 512
    input_dim: int = 768
    n_classes: int = 2
    layer_kind: str = "gatv2"
    negative_slope: float = 0.2
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        self.layer_kind = self.layer_kind.lower()
        if self.layer_kind not in LAYER_KINDS:
            raise ValueError(f"layer_kind must be one of {LAYER_KINDS}, got {self.layer_kind!r}")
        if self.hidden_dim % self.n_heads:
            raise ValueError(f"hidden_dim {self.hidden_dim} is not divisible by n_heads {self.n_heads}")
        if min(self.n_layers, self.n_heads, self.hidden_dim, self.input_dim) < 1 or self.n_classes < 2:
            raise ValueError("model sizes must be positive and n_classes >= 2")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")

    @property
    def head_dim(self):
        return self.hidden_dim // self.n_heads


def _param_shapes(cfg):
    d, h, heads, hd = cfg.input_dim, cfg.hidden_dim, cfg.n_heads, cfg.head_dim
    shapes = {"proj.W": (d, h), "proj.b": (h,)}
    for layer in range(cfg.n_layers):
        p = f"layers.{layer}."
        if cfg.layer_kind == "gatv2":
            shapes.update({p + "W_src": (h, h), p + "W_dst": (h, h), p + "att": (heads, hd), p + "bias": (h,)})
        elif cfg.layer_kind == "gat":
            shapes.update({p + "W": (h, h), p + "att_src": (heads, hd), p + "att_dst": (heads, hd), p + "bias": (h,)})
        else:
            shapes.update({p + "W": (h, h), p + "bias": (h,)})
    shapes.update({"head.W1": (h, h), "head.b1": (h,), "head.W2": (h, cfg.n_classes), "head.b2": (cfg.n_classes,)})
    return shapes


def _glorot(rng, shape, dtype):
    if len(shape) == 1:
        return np.zeros(shape, dtype=dtype)
    fan_in, fan_out = shape[-2], shape[-1]
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape).astype(dtype)


@dataclass
class ForwardTrace:
    """Intermediate results kept for :func:`backward`."""

    logits: ag.Tensor
    leaves: dict
    model: "Model" = None
    states: list = field(default_factory=list)
    attention: list = field(default_factory=list)
    src: Optional[np.ndarray] = None
    dst: Optional[np.ndarray] = None
    consumed: bool = False

    @property
    def probabilities(self):
        z = self.logits.data.astype(np.float64)
        e = np.exp(z - z.max())
        return e / e.sum()


class Model:
    def __init__(self, config: ModelConfig):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        rng = np.random.default_rng(config.seed)
        self.params = {}
        for name, shape in _param_shapes(config).items():
            if name.endswith(("att", "att_src", "att_dst")):
                # one vector per head: fan over head_dim and the scalar score
                limit = np.sqrt(6.0 / (shape[1] + 1))
                self.params[name] = rng.uniform(-limit, limit, shape).astype(self.dtype)
            else:
                self.params[name] = _glorot(rng, shape, self.dtype)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def zero_grad(self):
        for g in self.grads.values():
            g.fill(0)

    def copy(self):
        other = Model.__new__(Model)
        other.config = self.config
        other.dtype = self.dtype
        other.params = {k: v.copy() for k, v in self.params.items()}
        other.grads = {k: np.zeros_like(v) for k, v in self.params.items()}
        return other

    def load_state(self, params):
        for k, v in params.items():
            self.params[k][...] = v

    def n_parameters(self):
        return sum(v.size for v in self.params.values())

    def forward(self, graph, edge_weight=None, requires_grad=True, final_state_hook=None):
        """Logits (as a tensor of shape ``(n_classes,)``) and a trace.

        ``edge_weight`` optionally scales the message carried by each stored
        edge (shape ``(E,)``, array or tensor); self-loops are never scaled.
        ``final_state_hook`` may replace the last layer's node-state tensor
        before readout (used to check readout locality).
        """
        if graph.features is None:
            raise ValueError(f"graph {graph.doc_id!r} has no features attached")
        cfg = self.config
        if graph.features.shape[1] != cfg.input_dim:
            raise ValueError(f"feature width {graph.features.shape[1]} != input_dim {cfg.input_dim}")
        n = graph.n_nodes
        loops = np.arange(n)
        src = np.concatenate([graph.edges[:, 0], loops])
        dst = np.concatenate([graph.edges[:, 1], loops])

        leaves = {k: ag.Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}
        weight = None
        if edge_weight is not None:
            ew = ag.as_tensor(edge_weight)
            if ew.shape != (graph.n_edges,):
                raise ValueError(f"edge_weight must have shape ({graph.n_edges},)")
            weight = ag.concat([ew, ag.Tensor(np.ones(n, dtype=ew.data.dtype))])

        x = ag.Tensor(graph.features.astype(self.dtype))
        h = ag.elu(x @ leaves["proj.W"] + leaves["proj.b"])
        trace = ForwardTrace(logits=None, leaves=leaves, model=self, src=src, dst=dst)
        for layer in range(cfg.n_layers):
            p = {k.split(".")[-1]: v for k, v in leaves.items() if k.startswith(f"layers.{layer}.")}
            h, alpha = _LAYERS[cfg.layer_kind](h, p, src, dst, n, cfg, weight)
            trace.states.append(h.data)
            if alpha is not None:
                trace.attention.append(alpha)
        if final_state_hook is not None:
            h = final_state_hook(h)
        doc = ag.gather_rows(h, [graph.doc_node])
        hidden = doc @ leaves["head.W1"] + leaves["head.b1"]
        logits = hidden @ leaves["head.W2"] + leaves["head.b2"]
        trace.logits = ag.reshape(logits, (cfg.n_classes,))
        return trace.logits, trace

    def predict_proba(self, graph):
        _, trace = self.forward(graph, requires_grad=False)
        return trace.probabilities


def _heads(t, n, cfg):
    return ag.reshape(t, (n, cfg.n_heads, cfg.head_dim))


def _weighted(msg, weight, dims):
    if weight is None:
        return msg
    return msg * ag.reshape(weight, (-1,) + (1,) * dims)


def gatv2_layer(h, p, src, dst, n, cfg, weight=None):
    xs = _heads(h @ p["W_src"], n, cfg)
    xt = _heads(h @ p["W_dst"], n, cfg)
    xs_e = ag.gather_rows(xs, src)
    z = ag.leaky_relu(xs_e + ag.gather_rows(xt, dst), cfg.negative_slope)
    score = ag.sum(z * p["att"], axis=-1)
    alpha = ag.segment_softmax(score, dst, n)
    msg = _weighted(xs_e * ag.reshape(alpha, alpha.shape + (1,)), weight, 2)
    out = ag.reshape(ag.scatter_sum(msg, dst, n), (n, cfg.hidden_dim)) + p["bias"]
    return ag.elu(out), alpha.data


def gat_layer(h, p, src, dst, n, cfg, weight=None):
    x = _heads(h @ p["W"], n, cfg)
    s_src = ag.sum(x * p["att_src"], axis=-1)
    s_dst = ag.sum(x * p["att_dst"], axis=-1)
    score = ag.leaky_relu(ag.gather_rows(s_src, src) + ag.gather_rows(s_dst, dst), cfg.negative_slope)
    alpha = ag.segment_softmax(score, dst, n)
    msg = _weighted(ag.gather_rows(x, src) * ag.reshape(alpha, alpha.shape + (1,)), weight, 2)
    out = ag.reshape(ag.scatter_sum(msg, dst, n), (n, cfg.hidden_dim)) + p["bias"]
    return ag.elu(out), alpha.data


def gcn_layer(h, p, src, dst, n, cfg, weight=None):
    deg = np.bincount(dst, minlength=n).astype(h.data.dtype)
    norm = 1.0 / np.sqrt(deg[src] * deg[dst])
    x = h @ p["W"]
    msg = _weighted(ag.gather_rows(x, src) * norm[:, None], weight, 1)
    out = ag.scatter_sum(msg, dst, n) + p["bias"]
    return ag.elu(out), None


_LAYERS = {"gatv2": gatv2_layer, "gat": gat_layer, "gcn": gcn_layer}


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, target):
    """``-log softmax(logits)[target]`` as a tensor.

    ``target`` is a class index or a one-hot vector.
    """
    n_classes = logits.shape[-1]
    if np.ndim(target) == 0:
        k = int(target)
        if not 0 <= k < n_classes:
            raise ValueError(f"target class {k} out of range")
    else:
        y = np.asarray(target)
        if y.shape != (n_classes,) or not np.isin(y, (0, 1)).all() or y.sum() != 1:
            raise ValueError(f"target {target!r} is not one-hot over {n_classes} classes")
        k = int(np.argmax(y))
    minus = np.asarray(-1.0, dtype=logits.data.dtype)
    return ag.mul(minus, ag.index(ag.log_softmax(logits), k))


def backward(trace, loss):
    """Back-propagate ``loss`` into the model's gradient buffers and return them."""
    if trace.consumed:
        raise RuntimeError("this forward trace has already been used for a backward pass")
    if not loss.requires_grad:
        raise RuntimeError("forward ran without gradient tracking")
    ag.backprop(loss)
    grads = trace.model.grads
    for k, t in trace.leaves.items():
        if t.grad is None:
            grads[k].fill(0)
        else:
            grads[k][...] = t.grad
    trace.consumed = True
    trace.states.clear()
    trace.leaves = {}
    return grads


class Adam:
    """Adam with bias correction over a dict of numpy arrays, updated in place."""

    def __init__(self, params, lr=1e-5, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        for k, g in grads.items():
            if not np.all(np.isfinite(g)):
                bad = int(np.count_nonzero(~np.isfinite(g)))
                raise FloatingPointError(f"non-finite gradient for {k!r} ({bad} of {g.size} entries)")
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, g in grads.items():
            m, v = self.m[k], self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            self.params[k] -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(self.params[k].dtype)


# -- checkpoints -----------------------------------------------------------


def save_checkpoint(model, path):
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def checkpoint_bytes(model):
    meta = json.dumps(asdict(model.config), sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", len(meta)), meta]
    for name in _param_shapes(model.config):
        parts.append(model.params[name].astype("<f4").tobytes())
    return b"".join(parts)


def model_from_bytes(data, dtype=None):
    if data[:6] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("not a model checkpoint (bad magic or version)")
    try:
        (ln,) = struct.unpack_from("<I", data, 6)
        config = ModelConfig(**json.loads(data[10:10 + ln].decode("utf-8")))
    except (struct.error, ValueError, TypeError) as exc:
        raise CheckpointFormatError(f"corrupt checkpoint config: {exc}") from None
    if dtype is not None:
        config.dtype = dtype
    model = Model(config)
    pos = 10 + ln
    for name, shape in _param_shapes(config).items():
        size = int(np.prod(shape))
        if pos + 4 * size > len(data):
            raise CheckpointFormatError(f"checkpoint truncated in {name!r}")
        model.params[name][...] = np.frombuffer(data, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
    if pos != len(data):
        raise CheckpointFormatError(f"{len(data) - pos} trailing bytes after parameters")
    return model


def load_checkpoint(path, dtype=None):
    with open(path, "rb") as fh:
        return model_from_bytes(fh.read(), dtype)
