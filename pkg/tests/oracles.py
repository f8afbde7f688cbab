"""Independent reference computations used to check the implementation.

Nothing here calls into flag's engine: the dense model is written with plain
numpy on an N x N adjacency matrix, finite differences only evaluate losses,
and the label oracle slices the raw observation lists.
"""

from collections import Counter

import numpy as np

from flag.graph import CONCEPT, DOCUMENT, SENTENCE


# -- document graph ---------------------------------------------------------


def expected_arcs(sentences):
    """Multiset of directed arcs the hierarchical construction must produce,
    with nodes named by role rather than index."""
    arcs = Counter()

    def both(u, v):
        arcs[(u, v)] += 1
        arcs[(v, u)] += 1

    m = len(sentences)
    for s in sentences:
        j = s.sentence_index
        for e in s.edges:
            both(("c", j, e.src), ("c", j, e.dst))
        for n in s.nodes:
            both(("c", j, n.id), ("s", j))
    for j in range(m - 1):
        both(("s", j), ("s", j + 1))
    for j in range(m):
        both(("s", j), ("d",))
    return arcs


def observed_arcs(graph):
    def name(i):
        k = graph.kind[i]
        if k == CONCEPT:
            return ("c", int(graph.sentence[i]), graph.amr_id[i])
        if k == SENTENCE:
            return ("s", int(graph.sentence[i]))
        assert k == DOCUMENT
        return ("d",)

    return Counter((name(u), name(v)) for u, v in graph.edges)


def closed_form_counts(sentences):
    n = sum(len(s.nodes) for s in sentences)
    e = sum(len(s.edges) for s in sentences)
    m = len(sentences)
    return n + m + 1, 2 * (e + n + (m - 1) + m)


# -- dense model --------------------------------------------------------------


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def dense_adjacency(graph, edge_weight=None):
    """A[i, j] = summed weight of arcs j -> i, plus an unweighted self-loop."""
    n = graph.n_nodes
    a = np.zeros((n, n))
    w = np.ones(graph.n_edges) if edge_weight is None else np.asarray(edge_weight, dtype=np.float64)
    for (u, v), wt in zip(graph.edges, w):
        a[v, u] += wt
    a += np.eye(n)
    return a


def dense_layer(kind, h, p, graph, cfg, edge_weight=None):
    n = graph.n_nodes
    heads, hd = cfg.n_heads, cfg.head_dim
    adj = dense_adjacency(graph) > 0
    weighted = dense_adjacency(graph, edge_weight)
    if kind == "gcn":
        deg = adj.sum(axis=1)
        norm = weighted / np.sqrt(np.outer(deg, deg))
        return _elu(norm @ (h @ p["W"]) + p["bias"]), None
    outs, alphas = [], []
    for k in range(heads):
        sl = slice(k * hd, (k + 1) * hd)
        if kind == "gatv2":
            xs = (h @ p["W_src"])[:, sl]
            xt = (h @ p["W_dst"])[:, sl]
            # scores[i, j] for message j -> i
            z = _leaky(xs[None, :, :] + xt[:, None, :], cfg.negative_slope)
            scores = z @ p["att"][k]
            values = xs
        else:
            x = (h @ p["W"])[:, sl]
            scores = _leaky((x @ p["att_dst"][k])[:, None] + (x @ p["att_src"][k])[None, :], cfg.negative_slope)
            values = x
        scores = np.where(adj, scores, -np.inf)
        scores = scores - scores.max(axis=1, keepdims=True)
        alpha = np.exp(scores)
        alpha /= alpha.sum(axis=1, keepdims=True)
        alphas.append(alpha)
        outs.append((alpha * weighted) @ values)
    return _elu(np.concatenate(outs, axis=1) + p["bias"]), alphas


def dense_logits(model, graph, edge_weight=None):
    cfg = model.config
    P = {k: v.astype(np.float64) for k, v in model.params.items()}
    h = _elu(graph.features.astype(np.float64) @ P["proj.W"] + P["proj.b"])
    for layer in range(cfg.n_layers):
        p = {k.split(".")[-1]: v for k, v in P.items() if k.startswith(f"layers.{layer}.")}
        h, _ = dense_layer(cfg.layer_kind, h, p, graph, cfg, edge_weight)
    x = h[graph.doc_node] @ P["head.W1"] + P["head.b1"]
    return x @ P["head.W2"] + P["head.b2"]


def reference_cross_entropy(logits, target):
    """-log softmax(logits)[target] evaluated with mpmath at 50 digits."""
    import mpmath

    mpmath.mp.dps = 50
    zs = [mpmath.mpf(float(z)) for z in logits]
    return float(mpmath.log(sum(mpmath.exp(z) for z in zs)) - zs[target])


# -- finite differences -------------------------------------------------------


def finite_difference_grads(model, loss_fn, eps=1e-5):
    """Central differences of ``loss_fn()`` w.r.t. every entry of model.params."""
    grads = {}
    for name, p in model.params.items():
        g = np.zeros_like(p, dtype=np.float64)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn()
            flat[i] = orig - eps
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2 * eps)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """max |a - n| / max(|a|, |n|, floor) over all entries of all tensors.

    The floor keeps exactly-zero gradients from turning finite-difference
    rounding noise (~1e-11 at eps=1e-5) into a large relative error.
    """
    worst = 0.0
    for k in numeric:
        a, n = np.asarray(analytic[k], dtype=np.float64), numeric[k]
        den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float((np.abs(a - n) / den).max()))
    return worst


# -- labels ---------------------------------------------------------------------


def label_oracle(dates, closes, call_date, width):
    before = [c for d, c in zip(dates, closes) if d < call_date]
    after = [c for d, c in zip(dates, closes) if d > call_date]
    if len(before) < width or len(after) < width:
        return None
    b = before[len(before) - width:]
    a = after[:width]
    return int(sum(a) / width > sum(b) / width)
