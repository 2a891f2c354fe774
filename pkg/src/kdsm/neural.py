"""Residual MLP score network with hand-written backpropagation.

Layout::

    y0      = x @ W_in + b_in
    a_k     = y_k @ W1_k + b1_k
    u_k     = drop2(drop1(relu(a_k)) @ W2_k + b2_k)
    y_{k+1} = y_k + u_k
    out     = y_K @ W_out + b_out

Dropout is inverted (scaled by ``1/(1-p)``) so eval mode needs no
correction. All parameters live in one flat float64 vector; per-layer
arrays are views into it.
"""

import hashlib
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError, NumericError, StateError

CHECKPOINT_MAGIC = b"KDSMCKPT"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    n_blocks: int = 6
    main_width: int = 512
    hidden_width: int = 512
    dropout1: float = 0.2
    dropout2: float = 0.1

    def __post_init__(self):
        for name in ("input_dim", "n_blocks", "main_width", "hidden_width"):
            if int(getattr(self, name)) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        for name in ("dropout1", "dropout2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidInputError(f"{name} must lie in [0, 1)")

    def layer_shapes(self):
        d, m, h = self.input_dim, self.main_width, self.hidden_width
        shapes = [("in.W", (d, m)), ("in.b", (m,))]
        for k in range(self.n_blocks):
            shapes += [(f"block{k}.W1", (m, h)), (f"block{k}.b1", (h,)),
                       (f"block{k}.W2", (h, m)), (f"block{k}.b2", (m,))]
        shapes += [("out.W", (m, d)), ("out.b", (d,))]
        return shapes

    def n_params(self):
        d, m, h, k = self.input_dim, self.main_width, self.hidden_width, self.n_blocks
        return d * m + m + k * (2 * m * h + h + m) + m * d + d


def _views(flat, arch):
    views = {}
    offset = 0
    for name, shape in arch.layer_shapes():
        size = int(np.prod(shape))
        views[name] = flat[offset:offset + size].reshape(shape)
        offset += size
    return views


class ScoreNetwork:
    """Parameters of the score model plus an optional EMA (teacher) copy."""

    def __init__(self, arch, params, ema_params=None):
        params = np.ascontiguousarray(params, dtype=np.float64)
        if params.shape != (arch.n_params(),):
            raise InvalidInputError(
                f"expected {arch.n_params()} parameters, got {params.shape}")
        if ema_params is not None:
            ema_params = np.ascontiguousarray(ema_params, dtype=np.float64)
            if ema_params.shape != params.shape:
                raise InvalidInputError("EMA parameters must match parameter length")
        self.arch = arch
        self.params = params
        self.ema_params = ema_params

    def layers(self, use_ema=False):
        if use_ema:
            if self.ema_params is None:
                raise StateError("network has no EMA parameters")
            return _views(self.ema_params, self.arch)
        return _views(self.params, self.arch)

    def init_ema(self):
        self.ema_params = self.params.copy()

    def checksum(self):
        h = hashlib.sha256(self.params.tobytes())
        if self.ema_params is not None:
            h.update(self.ema_params.tobytes())
        return h.hexdigest()

    def copy(self):
        ema = None if self.ema_params is None else self.ema_params.copy()
        return ScoreNetwork(self.arch, self.params.copy(), ema)


def init_network(arch, seed):
    """Fan-in uniform init ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``; zero output head.

    With a zero head the initial output is exactly 0, so the initial
    epsilon-prediction loss equals ``E||eps||^2 / 2``.
    """
    rng = np.random.default_rng(seed)
    params = np.zeros(arch.n_params())
    layers = _views(params, arch)
    shapes = arch.layer_shapes()
    # shapes come in (weight, bias) pairs
    for (w_name, w_shape), (b_name, _) in zip(shapes[0::2], shapes[1::2]):
        if w_name.startswith("out."):
            continue
        bound = 1.0 / np.sqrt(w_shape[0])
        layers[w_name][...] = rng.uniform(-bound, bound, size=w_shape)
        layers[b_name][...] = rng.uniform(-bound, bound, size=layers[b_name].shape)
    return ScoreNetwork(arch, params)


def _check_input(arch, x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != arch.input_dim:
        raise InvalidInputError(
            f"expected input of shape (n, {arch.input_dim}), got {x.shape}")
    return x


def _dropout_mask(rng, shape, rate):
    if rate == 0.0 or rng is None:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def _forward(layers, arch, x, rng):
    """Forward pass; returns output and the cache needed for backprop."""
    y = x @ layers["in.W"] + layers["in.b"]
    cache = []
    for k in range(arch.n_blocks):
        a = y @ layers[f"block{k}.W1"] + layers[f"block{k}.b1"]
        h = np.maximum(a, 0.0)
        m1 = _dropout_mask(rng, h.shape, arch.dropout1)
        if m1 is not None:
            h = h * m1
        u = h @ layers[f"block{k}.W2"] + layers[f"block{k}.b2"]
        m2 = _dropout_mask(rng, u.shape, arch.dropout2)
        if m2 is not None:
            u = u * m2
        cache.append((y, a, h, m1, m2))
        y = y + u
    out = y @ layers["out.W"] + layers["out.b"]
    return out, (cache, y)


def forward(net, x, train=False, rng=None, use_ema=False):
    """Evaluate the network on a batch.

    In train mode ``rng`` (a Generator or integer seed) drives the dropout
    masks; eval mode is dropout-free and deterministic.
    """
    x = _check_input(net.arch, x)
    if train:
        if rng is None:
            raise InvalidInputError("train mode needs a dropout seed or generator")
        rng = np.random.default_rng(rng)
    else:
        rng = None
    out, _ = _forward(net.layers(use_ema), net.arch, x, rng)
    return out


def loss_and_grad(net, x_noisy, eps_target, train=True, rng=None):
    """Epsilon-prediction loss ``sum_i ||s(x_i) + eps_i||^2 / (2B)`` and its gradient.

    The gradient is returned as a flat vector aligned with ``net.params``.
    Dropout masks are drawn once and shared by the forward and backward pass.
    """
    arch = net.arch
    x = _check_input(arch, x_noisy)
    eps = np.asarray(eps_target, dtype=np.float64)
    if eps.shape != x.shape:
        raise InvalidInputError(f"eps shape {eps.shape} does not match input {x.shape}")
    if train and rng is not None:
        rng = np.random.default_rng(rng)
    else:
        rng = None
    layers = net.layers()
    out, (cache, y_last) = _forward(layers, arch, x, rng)
    batch = x.shape[0]
    resid = out + eps
    loss = 0.5 * float(np.sum(resid * resid)) / batch

    grad = np.zeros_like(net.params)
    g = _views(grad, arch)
    dout = resid / batch
    g["out.W"][...] = y_last.T @ dout
    g["out.b"][...] = dout.sum(axis=0)
    dy = dout @ layers["out.W"].T
    for k in reversed(range(arch.n_blocks)):
        y, a, h, m1, m2 = cache[k]
        du = dy * m2 if m2 is not None else dy
        g[f"block{k}.W2"][...] = h.T @ du
        g[f"block{k}.b2"][...] = du.sum(axis=0)
        dh = du @ layers[f"block{k}.W2"].T
        if m1 is not None:
            dh *= m1
        da = dh * (a > 0.0)
        g[f"block{k}.W1"][...] = y.T @ da
        g[f"block{k}.b1"][...] = da.sum(axis=0)
        dy = dy + da @ layers[f"block{k}.W1"].T
    g["in.W"][...] = x.T @ dy
    g["in.b"][...] = dy.sum(axis=0)
    return loss, grad


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n, lr=5e-4):
        return cls(m=np.zeros(n), v=np.zeros(n), lr=lr)


def adam_step(state, params, grad):
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if grad.shape != params.shape or state.m.shape != params.shape:
        raise InvalidInputError("params, grad and Adam moments must have equal length")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    state.m *= b1
    state.m += (1.0 - b1) * grad
    state.v *= b2
    state.v += (1.0 - b2) * (grad * grad)
    step = state.lr / (1.0 - b1 ** state.t)
    denom = np.sqrt(state.v / (1.0 - b2 ** state.t))
    denom += state.eps
    params -= step * state.m / denom
    return params, state


def ema_update(net, rho):
    """``ema <- rho * ema + (1 - rho) * params``, in place."""
    if net.ema_params is None:
        raise StateError("EMA parameters have not been initialised")
    if not 0.0 <= rho <= 1.0:
        raise InvalidInputError(f"EMA decay must lie in [0, 1], got {rho}")
    net.ema_params *= rho
    net.ema_params += (1.0 - rho) * net.params


def save_checkpoint(net, path):
    """Write a deterministic binary checkpoint.

    Format: magic, u32 version, u32 header length, UTF-8 JSON header
    (architecture, parameter count, EMA flag), then little-endian float64
    parameters followed by the EMA vector when present.
    """
    header = json.dumps({
        "format": "kdsm-checkpoint",
        "version": CHECKPOINT_VERSION,
        "architecture": asdict(net.arch),
        "n_params": int(net.params.size),
        "has_ema": net.ema_params is not None,
    }, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(net.params.astype("<f8").tobytes())
        if net.ema_params is not None:
            fh.write(net.ema_params.astype("<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise InvalidInputError(f"{path} is not a kdsm checkpoint")
    version, hlen = struct.unpack("<II", blob[8:16])
    if version != CHECKPOINT_VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    header = json.loads(blob[16:16 + hlen].decode("utf-8"))
    arch = Architecture(**header["architecture"])
    n = header["n_params"]
    start = 16 + hlen
    params = np.frombuffer(blob, dtype="<f8", count=n, offset=start).astype(np.float64)
    ema = None
    if header["has_ema"]:
        ema = np.frombuffer(blob, dtype="<f8", count=n, offset=start + 8 * n).astype(np.float64)
    if not np.all(np.isfinite(params)):
        raise NumericError("checkpoint contains non-finite parameters")
    return ScoreNetwork(arch, params, ema)
