"""Edge-aware reconstruction network over one communication graph.

Architecture: a linear input projection with row-wise feature normalization,
two edge-conditioned message-passing layers (sum aggregation over incoming
directed edges, edge attributes projected into the hidden space), a linear
fusion of all three representation levels, a mean-pooled graph summary, a
649-dim per-edge representation, and two decoder heads (3-dim regression,
3-way classification).

Everything is plain float64 numpy with hand-written backward passes so the
analytic gradients can be audited against finite differences. A masked
edge's attributes are zeroed everywhere they appear: in message passing and
in the edge representation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SchemaError

LN_EPS = 1e-5


@dataclass(frozen=True)
class ModelDims:
    node_dim: int = 51
    edge_dim: int = 9
    hidden: int = 128
    reg_dim: int = 3
    n_classes: int = 3
    n_layers: int = 2

    @property
    def fused_in(self) -> int:
        return (self.n_layers + 1) * self.hidden

    @property
    def edge_repr_dim(self) -> int:
        # [z_src | z_dst | edge attrs | |z_src - z_dst| | z_src * z_dst | g]
        return 4 * self.hidden + self.edge_dim + self.hidden


def param_shapes(dims: ModelDims) -> dict[str, tuple[int, ...]]:
    """Every learnable array, in a fixed order."""
    h, dv, de = dims.hidden, dims.node_dim, dims.edge_dim
    shapes: dict[str, tuple[int, ...]] = {
        "in_proj_w": (dv, h),
        "in_proj_b": (h,),
        "in_norm_gain": (h,),
        "in_norm_bias": (h,),
    }
    for layer in range(1, dims.n_layers + 1):
        shapes[f"edge{layer}_w"] = (de, h)
        shapes[f"edge{layer}_b"] = (h,)
        shapes[f"msg{layer}_w1"] = (h, h)
        shapes[f"msg{layer}_b1"] = (h,)
        shapes[f"msg{layer}_w2"] = (h, h)
        shapes[f"msg{layer}_b2"] = (h,)
    shapes["fuse_w"] = (dims.fused_in, h)
    shapes["fuse_b"] = (h,)
    shapes["reg_w1"] = (dims.edge_repr_dim, h)
    shapes["reg_b1"] = (h,)
    shapes["reg_w2"] = (h, dims.reg_dim)
    shapes["reg_b2"] = (dims.reg_dim,)
    shapes["cls_w1"] = (dims.edge_repr_dim, h)
    shapes["cls_b1"] = (h,)
    shapes["cls_w2"] = (h, dims.n_classes)
    shapes["cls_b2"] = (dims.n_classes,)
    return shapes


@dataclass
class ModelParams:
    """All learnable arrays plus shape metadata and fixed hyperparameters.

    ``epsilon`` is the self-term weight of the message-passing update,
    fixed at 0 rather than learned.
    """

    dims: ModelDims
    arrays: dict[str, np.ndarray]
    dropout: float = 0.2
    epsilon: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        expected = param_shapes(self.dims)
        if set(expected) != set(self.arrays):
            raise SchemaError("parameter set does not match the declared layout")
        for name, shape in expected.items():
            arr = self.arrays[name]
            if arr.shape != shape:
                raise SchemaError(f"parameter {name}: shape {arr.shape} != {shape}")
            if not np.all(np.isfinite(arr)):
                raise SchemaError(f"parameter {name} contains non-finite entries")

    def copy(self) -> "ModelParams":
        return ModelParams(
            dims=self.dims,
            arrays={k: v.copy() for k, v in self.arrays.items()},
            dropout=self.dropout,
            epsilon=self.epsilon,
            seed=self.seed,
        )


def init_params(
    dims: ModelDims = ModelDims(),
    seed: int = 0,
    dropout: float = 0.2,
) -> ModelParams:
    """Uniform fan-in scaled weights, zero biases, unit normalization gain."""
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(dims).items():
        if name == "in_norm_gain":
            arrays[name] = np.ones(shape)
        elif len(shape) == 1:  # biases and the normalization offset
            arrays[name] = np.zeros(shape)
        else:
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    params = ModelParams(dims=dims, arrays=arrays, dropout=dropout, seed=seed)
    params.validate()
    return params


def jitter_params(params: ModelParams, seed: int = 0, scale: float = 0.05) -> ModelParams:
    """Copy with small random noise added to every array.

    Freshly initialized parameters have zero biases, which parks many
    rectifier inputs exactly on their kink (masked edges contribute exact
    zeros); gradient checking needs a generic point, so tests perturb first.
    """
    rng = np.random.default_rng(seed)
    out = params.copy()
    for arr in out.arrays.values():
        arr += rng.normal(0.0, scale, size=arr.shape)
    return out


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def _dropout_mask(
    rng: np.random.Generator | None, shape: tuple[int, ...], rate: float
) -> np.ndarray | None:
    if rng is None or rate <= 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(np.float64) / keep


def _apply(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return x if mask is None else x * mask


def input_projection(params: ModelParams, X: np.ndarray) -> np.ndarray:
    """h^(0) = relu(rownorm(W x + b) * gain + bias)."""
    if X.shape[1] != params.dims.node_dim:
        raise SchemaError(f"node features have {X.shape[1]} dims, expected {params.dims.node_dim}")
    a = params.arrays
    A = X @ a["in_proj_w"] + a["in_proj_b"]
    mu = A.mean(axis=1, keepdims=True)
    centered = A - mu
    inv = 1.0 / np.sqrt((centered**2).mean(axis=1, keepdims=True) + LN_EPS)
    return _relu(centered * inv * a["in_norm_gain"] + a["in_norm_bias"])


def gine_layer(
    params: ModelParams,
    layer: int,
    H: np.ndarray,
    edges: np.ndarray,
    edge_attrs: np.ndarray,
) -> np.ndarray:
    """One message-passing update (inference mode).

    h_i' = MLP((1 + eps) h_i + sum over incoming edges (j -> i) of
    relu(h_j + W_e e_ji + b_e)). Nodes with no incoming edges keep the
    self term alone.
    """
    a = params.arrays
    n = H.shape[0]
    if edges.size and int(edges.max()) >= n:
        raise SchemaError("edge index out of range")
    proj = edge_attrs @ a[f"edge{layer}_w"] + a[f"edge{layer}_b"]
    messages = _relu(H[edges[:, 0]] + proj) if edges.size else np.zeros((0, H.shape[1]))
    agg = np.zeros_like(H)
    if edges.size:
        np.add.at(agg, edges[:, 1], messages)
    u = (1.0 + params.epsilon) * H + agg
    hidden = _relu(u @ a[f"msg{layer}_w1"] + a[f"msg{layer}_b1"])
    return hidden @ a[f"msg{layer}_w2"] + a[f"msg{layer}_b2"]


def fuse_levels(
    params: ModelParams, H0: np.ndarray, H1: np.ndarray, H2: np.ndarray
) -> np.ndarray:
    """z_i = W_f [h_i^(0) | h_i^(1) | h_i^(2)] + b_f."""
    Z = np.concatenate([H0, H1, H2], axis=1)
    return Z @ params.arrays["fuse_w"] + params.arrays["fuse_b"]


def graph_summary(z: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the fused node representations."""
    return z.mean(axis=0)


def edge_representation(
    z: np.ndarray, edges: np.ndarray, edge_attrs: np.ndarray, g: np.ndarray
) -> np.ndarray:
    """Per-edge 649-dim vector [z_i | z_j | e_ij | |z_i - z_j| | z_i * z_j | g]."""
    zs = z[edges[:, 0]]
    zd = z[edges[:, 1]]
    m = edges.shape[0]
    return np.concatenate(
        [zs, zd, edge_attrs, np.abs(zs - zd), zs * zd, np.tile(g, (m, 1))], axis=1
    )


def decode_edge(params: ModelParams, r: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Both head evaluations: (regression values, classification logits)."""
    a = params.arrays
    reg = _relu(r @ a["reg_w1"] + a["reg_b1"]) @ a["reg_w2"] + a["reg_b2"]
    logits = _relu(r @ a["cls_w1"] + a["cls_b1"]) @ a["cls_w2"] + a["cls_b2"]
    return reg, logits


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class ForwardPass:
    """Model outputs for one snapshot plus the cache needed by backward."""

    y_reg: np.ndarray  # |E| x 3
    logits: np.ndarray  # |E| x 3
    z: np.ndarray  # |V| x H fused node representations
    g: np.ndarray  # H graph summary (mean of z rows)
    r: np.ndarray  # |E| x 649 edge representations
    mask: np.ndarray  # bool |E|, True where attributes were hidden
    _cache: dict = field(default_factory=dict, repr=False)


def forward(
    params: ModelParams,
    snapshot,
    mask: np.ndarray | None = None,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardPass:
    """Full forward pass over one (standardized) snapshot.

    ``mask`` holds edge indices whose attributes are hidden; they are zeroed
    both inside message passing and inside the edge representation. Dropout
    is active only with ``training=True`` (which then requires ``rng``);
    inference mode is deterministic.
    """
    a = params.arrays
    dims = params.dims
    X = np.asarray(snapshot.node_features, dtype=np.float64)
    edges = np.asarray(snapshot.edges, dtype=np.int64)
    m = edges.shape[0]
    n = X.shape[0]
    if training and rng is None:
        raise ValueError("training mode requires an rng for dropout")
    drop = params.dropout if training else 0.0

    mask_bool = np.zeros(m, dtype=bool)
    if mask is not None and len(mask) > 0:
        mask_idx = np.asarray(mask, dtype=np.int64)
        if mask_idx.min() < 0 or mask_idx.max() >= m:
            raise SchemaError("mask indices out of range")
        mask_bool[mask_idx] = True
    Fm = np.asarray(snapshot.edge_features, dtype=np.float64).copy()
    Fm[mask_bool] = 0.0

    cache: dict = {"X": X, "edges": edges, "Fm": Fm}

    # Input projection with per-row feature normalization.
    A = X @ a["in_proj_w"] + a["in_proj_b"]
    mu = A.mean(axis=1, keepdims=True)
    centered = A - mu
    inv = 1.0 / np.sqrt((centered**2).mean(axis=1, keepdims=True) + LN_EPS)
    xhat = centered * inv
    pre0 = xhat * a["in_norm_gain"] + a["in_norm_bias"]
    H0 = _relu(pre0)
    cache.update(xhat=xhat, inv=inv, pre0=pre0)

    levels = [H0]
    src, dst = edges[:, 0], edges[:, 1]
    H = H0
    for layer in range(1, dims.n_layers + 1):
        proj = Fm @ a[f"edge{layer}_w"] + a[f"edge{layer}_b"]
        msg_pre = H[src] + proj
        messages = _relu(msg_pre)
        agg = np.zeros_like(H)
        np.add.at(agg, dst, messages)
        u = (1.0 + params.epsilon) * H + agg
        t1 = u @ a[f"msg{layer}_w1"] + a[f"msg{layer}_b1"]
        hidden = _relu(t1)
        dmask = _dropout_mask(rng, hidden.shape, drop)
        hidden_d = _apply(hidden, dmask)
        H = hidden_d @ a[f"msg{layer}_w2"] + a[f"msg{layer}_b2"]
        cache[f"l{layer}"] = dict(
            msg_pre=msg_pre, u=u, t1=t1, hidden_d=hidden_d, dmask=dmask, Hin=levels[-1]
        )
        levels.append(H)

    Z = np.concatenate(levels, axis=1)
    z_pre = Z @ a["fuse_w"] + a["fuse_b"]
    fmask = _dropout_mask(rng, z_pre.shape, drop)
    z = _apply(z_pre, fmask)
    g = z.mean(axis=0)
    cache.update(Z=Z, fmask=fmask, z=z, n=n)

    zs, zd = z[src], z[dst]
    diff = zs - zd
    r = np.concatenate([zs, zd, Fm, np.abs(diff), zs * zd, np.tile(g, (m, 1))], axis=1)
    cache.update(sign=np.sign(diff), zs=zs, zd=zd)

    q1 = r @ a["reg_w1"] + a["reg_b1"]
    g_hidden = _relu(q1)
    rmask = _dropout_mask(rng, g_hidden.shape, drop)
    g_hidden_d = _apply(g_hidden, rmask)
    y_reg = g_hidden_d @ a["reg_w2"] + a["reg_b2"]

    k1 = r @ a["cls_w1"] + a["cls_b1"]
    c_hidden = _relu(k1)
    cmask = _dropout_mask(rng, c_hidden.shape, drop)
    c_hidden_d = _apply(c_hidden, cmask)
    logits = c_hidden_d @ a["cls_w2"] + a["cls_b2"]

    cache.update(
        r=r, q1=q1, g_hidden_d=g_hidden_d, rmask=rmask,
        k1=k1, c_hidden_d=c_hidden_d, cmask=cmask,
    )
    return ForwardPass(
        y_reg=y_reg, logits=logits, z=z, g=g, r=r, mask=mask_bool, _cache=cache
    )


def backward(
    params: ModelParams,
    state: ForwardPass,
    d_y_reg: np.ndarray,
    d_logits: np.ndarray,
) -> dict[str, np.ndarray]:
    """Parameter gradients given output gradients from the loss."""
    a = params.arrays
    dims = params.dims
    c = state._cache
    edges, Fm = c["edges"], c["Fm"]
    src, dst = edges[:, 0], edges[:, 1]
    h = dims.hidden
    n = c["n"]
    grads: dict[str, np.ndarray] = {}

    # Regression head.
    grads["reg_w2"] = c["g_hidden_d"].T @ d_y_reg
    grads["reg_b2"] = d_y_reg.sum(axis=0)
    d_hidden = _apply(d_y_reg @ a["reg_w2"].T, c["rmask"])
    d_q1 = d_hidden * (c["q1"] > 0)
    grads["reg_w1"] = c["r"].T @ d_q1
    grads["reg_b1"] = d_q1.sum(axis=0)
    d_r = d_q1 @ a["reg_w1"].T

    # Classification head.
    grads["cls_w2"] = c["c_hidden_d"].T @ d_logits
    grads["cls_b2"] = d_logits.sum(axis=0)
    d_hidden = _apply(d_logits @ a["cls_w2"].T, c["cmask"])
    d_k1 = d_hidden * (c["k1"] > 0)
    grads["cls_w1"] = c["r"].T @ d_k1
    grads["cls_b1"] = d_k1.sum(axis=0)
    d_r += d_k1 @ a["cls_w1"].T

    # Edge representation -> fused node states and graph summary.
    d_zs = d_r[:, :h].copy()
    d_zd = d_r[:, h : 2 * h].copy()
    d_abs = d_r[:, 2 * h + dims.edge_dim : 3 * h + dims.edge_dim]
    d_prod = d_r[:, 3 * h + dims.edge_dim : 4 * h + dims.edge_dim]
    d_g = d_r[:, 4 * h + dims.edge_dim :].sum(axis=0)
    d_zs += d_abs * c["sign"] + d_prod * c["zd"]
    d_zd += -d_abs * c["sign"] + d_prod * c["zs"]
    d_z = np.zeros_like(c["z"])
    np.add.at(d_z, src, d_zs)
    np.add.at(d_z, dst, d_zd)
    d_z += d_g / n

    # Fusion.
    d_z_pre = _apply(d_z, c["fmask"])
    grads["fuse_w"] = c["Z"].T @ d_z_pre
    grads["fuse_b"] = d_z_pre.sum(axis=0)
    d_Z = d_z_pre @ a["fuse_w"].T

    d_levels = [d_Z[:, i * h : (i + 1) * h].copy() for i in range(dims.n_layers + 1)]

    # Message-passing layers, deepest first.
    for layer in range(dims.n_layers, 0, -1):
        lc = c[f"l{layer}"]
        d_H = d_levels[layer]
        grads[f"msg{layer}_w2"] = lc["hidden_d"].T @ d_H
        grads[f"msg{layer}_b2"] = d_H.sum(axis=0)
        d_hidden = _apply(d_H @ a[f"msg{layer}_w2"].T, lc["dmask"])
        d_t1 = d_hidden * (lc["t1"] > 0)
        grads[f"msg{layer}_w1"] = lc["u"].T @ d_t1
        grads[f"msg{layer}_b1"] = d_t1.sum(axis=0)
        d_u = d_t1 @ a[f"msg{layer}_w1"].T
        d_in = (1.0 + params.epsilon) * d_u
        d_msg = d_u[dst] * (lc["msg_pre"] > 0)
        np.add.at(d_in, src, d_msg)
        grads[f"edge{layer}_w"] = Fm.T @ d_msg
        grads[f"edge{layer}_b"] = d_msg.sum(axis=0)
        d_levels[layer - 1] += d_in

    # Input projection with normalization.
    d_H0 = d_levels[0]
    d_pre0 = d_H0 * (c["pre0"] > 0)
    grads["in_norm_gain"] = (d_pre0 * c["xhat"]).sum(axis=0)
    grads["in_norm_bias"] = d_pre0.sum(axis=0)
    d_xhat = d_pre0 * a["in_norm_gain"]
    mean_dx = d_xhat.mean(axis=1, keepdims=True)
    mean_dx_xhat = (d_xhat * c["xhat"]).mean(axis=1, keepdims=True)
    d_A = c["inv"] * (d_xhat - mean_dx - c["xhat"] * mean_dx_xhat)
    grads["in_proj_w"] = c["X"].T @ d_A
    grads["in_proj_b"] = d_A.sum(axis=0)

    return grads
