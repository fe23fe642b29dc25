"""Dense networks with batch normalization and reverse-mode gradients.

Float64 and numpy only: the policies trained here are a few hundred KB at
most, and every gradient being finite-difference checkable beats raw speed at
this scale.  Each layer is affine -> [batchnorm] -> activation, with the
normalization (when present) sitting between the weighted sum and the
non-linearity.  Training-mode forward normalizes with batch statistics and
blends them into running estimates; inference normalizes with the running
estimates and is a pure function of (net, x).

Checkpoints are a small versioned binary format with little-endian float64
parameter blocks; round trips are bit-exact.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

ACT_TAGS = {"relu": 0, "tanh": 1, "linear": 2}
TAG_ACTS = {v: k for k, v in ACT_TAGS.items()}

NET_MAGIC = b"DNET"
NET_VERSION = 1


@dataclass
class BatchNorm:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-5

    @classmethod
    def create(cls, width: int) -> "BatchNorm":
        return cls(gamma=np.ones(width), beta=np.zeros(width),
                   running_mean=np.zeros(width), running_var=np.ones(width))

    def copy(self) -> "BatchNorm":
        return BatchNorm(self.gamma.copy(), self.beta.copy(),
                         self.running_mean.copy(), self.running_var.copy(),
                         self.momentum, self.eps)


@dataclass
class Layer:
    w: np.ndarray  # (fan_in, fan_out)
    b: np.ndarray  # (fan_out,)
    act: str
    bn: BatchNorm | None = None

    def copy(self) -> "Layer":
        return Layer(self.w.copy(), self.b.copy(), self.act,
                     self.bn.copy() if self.bn else None)


@dataclass
class LayerGrads:
    dw: np.ndarray
    db: np.ndarray
    dgamma: np.ndarray | None = None
    dbeta: np.ndarray | None = None


@dataclass
class GradientTape:
    """Per-parameter gradients, shapes mirroring the net exactly."""

    layers: list[LayerGrads] = field(default_factory=list)

    def arrays(self):
        for lg in self.layers:
            yield lg.dw
            yield lg.db
            if lg.dgamma is not None:
                yield lg.dgamma
                yield lg.dbeta

    def scaled(self, factor: float) -> "GradientTape":
        out = GradientTape()
        for lg in self.layers:
            out.layers.append(LayerGrads(
                lg.dw * factor, lg.db * factor,
                None if lg.dgamma is None else lg.dgamma * factor,
                None if lg.dbeta is None else lg.dbeta * factor))
        return out


class DenseNet:
    def __init__(self, layers: list[Layer]):
        for prev, nxt in zip(layers, layers[1:]):
            if prev.w.shape[1] != nxt.w.shape[0]:
                raise ValueError("adjacent layer dimensions are incompatible")
        for layer in layers:
            if layer.act not in ACT_TAGS:
                raise ValueError(f"unknown activation {layer.act!r}")
            if layer.bn is not None and np.any(layer.bn.running_var < 0):
                raise ValueError("running_var must be non-negative")
        self.layers = layers
        self._cache = None

    @classmethod
    def create(cls, dims: list[int], hidden_act: str = "relu", out_act: str = "linear",
               batchnorm: bool = False, rng: np.random.Generator | None = None,
               out_init: float = 3e-3) -> "DenseNet":
        """Hidden weights ~ U(+-1/sqrt(fan_in)), output ~ U(+-out_init).

        batchnorm=True normalizes every hidden layer's pre-activation; the
        output layer is never normalized.
        """
        rng = rng or np.random.default_rng()
        layers = []
        for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
            last = i == len(dims) - 2
            bound = out_init if last else 1.0 / math.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
            layers.append(Layer(w=w, b=b, act=out_act if last else hidden_act,
                                bn=None if last or not batchnorm else BatchNorm.create(fan_out)))
        return cls(layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    def copy(self) -> "DenseNet":
        return DenseNet([layer.copy() for layer in self.layers])

    # -- forward ---------------------------------------------------------------
    def forward(self, x: np.ndarray, train: bool = False,
                update_running: bool = True) -> np.ndarray:
        """Batch forward pass; train mode caches activations for backward().

        Inference mode uses running batchnorm statistics and caches nothing.
        """
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.in_dim:
            raise ValueError(f"input width {x.shape[1]} != net input dim {self.in_dim}")
        cache = [] if train else None
        z = x
        for layer in self.layers:
            a = z @ layer.w + layer.b
            bn = layer.bn
            if bn is not None:
                if train:
                    mu = a.mean(axis=0)
                    var = a.var(axis=0)
                    if update_running:
                        bn.running_mean *= bn.momentum
                        bn.running_mean += (1.0 - bn.momentum) * mu
                        bn.running_var *= bn.momentum
                        bn.running_var += (1.0 - bn.momentum) * var
                else:
                    mu = bn.running_mean
                    var = bn.running_var
                inv = 1.0 / np.sqrt(var + bn.eps)
                xhat = (a - mu) * inv
                h = bn.gamma * xhat + bn.beta
            else:
                xhat = inv = None
                h = a
            if layer.act == "relu":
                out = np.maximum(h, 0.0)
            elif layer.act == "tanh":
                out = np.tanh(h)
            else:
                out = h
            if train:
                cache.append((z, h, xhat, inv, out))
            z = out
        if train:
            self._cache = (x, cache)
        return z[0] if squeeze else z

    # -- backward ----------------------------------------------------------------
    def backward(self, upstream: np.ndarray) -> tuple[GradientTape, np.ndarray]:
        """Gradients of sum(upstream * output) w.r.t. parameters and input.

        Requires a preceding train-mode forward; consumes its cache.
        """
        if self._cache is None:
            raise RuntimeError("backward() requires a train-mode forward() first")
        x, cache = self._cache
        self._cache = None
        dz = np.asarray(upstream, dtype=np.float64)
        if dz.ndim == 1:
            dz = dz[None, :]
        grads: list[LayerGrads] = []
        for layer, (z_in, h, xhat, inv, out) in zip(reversed(self.layers), reversed(cache)):
            if layer.act == "relu":
                dh = dz * (h > 0)
            elif layer.act == "tanh":
                dh = dz * (1.0 - out**2)
            else:
                dh = dz
            bn = layer.bn
            if bn is not None:
                dgamma = (dh * xhat).sum(axis=0)
                dbeta = dh.sum(axis=0)
                # standard batchnorm backward with biased batch variance
                da = (bn.gamma * inv) * (dh - dh.mean(axis=0)
                                         - xhat * (dh * xhat).mean(axis=0))
            else:
                dgamma = dbeta = None
                da = dh
            dw = z_in.T @ da
            db = da.sum(axis=0)
            dz = da @ layer.w.T
            grads.append(LayerGrads(dw=dw, db=db, dgamma=dgamma, dbeta=dbeta))
        grads.reverse()
        return GradientTape(grads), dz

    # -- parameter access -----------------------------------------------------
    def param_arrays(self):
        """Trainable arrays in a fixed order (matches GradientTape.arrays)."""
        for layer in self.layers:
            yield layer.w
            yield layer.b
            if layer.bn is not None:
                yield layer.bn.gamma
                yield layer.bn.beta

    def all_arrays(self):
        """Trainable arrays plus batchnorm running statistics."""
        for layer in self.layers:
            yield layer.w
            yield layer.b
            if layer.bn is not None:
                yield layer.bn.gamma
                yield layer.bn.beta
                yield layer.bn.running_mean
                yield layer.bn.running_var

    def zero_tape(self) -> GradientTape:
        tape = GradientTape()
        for layer in self.layers:
            tape.layers.append(LayerGrads(
                np.zeros_like(layer.w), np.zeros_like(layer.b),
                None if layer.bn is None else np.zeros_like(layer.bn.gamma),
                None if layer.bn is None else np.zeros_like(layer.bn.beta)))
        return tape


# -- optimizer -------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: DenseNet, lr: float, **kw) -> "AdamState":
        state = cls(lr=lr, **kw)
        for arr in net.param_arrays():
            state.m.append(np.zeros_like(arr))
            state.v.append(np.zeros_like(arr))
        return state

    def copy(self) -> "AdamState":
        return AdamState(self.lr, self.beta1, self.beta2, self.eps, self.t,
                         [a.copy() for a in self.m], [a.copy() for a in self.v])


def adam_step(net: DenseNet, tape: GradientTape, state: AdamState,
              maximize: bool = False) -> None:
    """One in-place Adam update; deterministic given (net, tape, state)."""
    params = list(net.param_arrays())
    grads = list(tape.arrays())
    if len(params) != len(grads):
        raise ValueError("tape shape does not match network parameters")
    state.t += 1
    bc1 = 1.0 - state.beta1**state.t
    bc2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError("tape shape does not match network parameters")
        if maximize:
            g = -g
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def soft_update(target: DenseNet, online: DenseNet, tau: float) -> None:
    """target <- tau * online + (1 - tau) * target, elementwise.

    Covers trainable parameters and batchnorm running statistics alike, so
    the target stays an exponentially weighted average of the online net.
    """
    tgt = list(target.all_arrays())
    src = list(online.all_arrays())
    if len(tgt) != len(src) or any(a.shape != b.shape for a, b in zip(tgt, src)):
        raise ValueError("target and online networks have different shapes")
    for t_arr, s_arr in zip(tgt, src):
        t_arr *= 1.0 - tau
        t_arr += tau * s_arr


# -- checkpoint format ----------------------------------------------------------

def _write_array(f, arr: np.ndarray) -> None:
    f.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def _read_array(f, shape) -> np.ndarray:
    n = int(np.prod(shape))
    buf = f.read(n * 8)
    if len(buf) != n * 8:
        raise ValueError("truncated network checkpoint")
    return np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)


def save_net(net: DenseNet, f) -> None:
    f.write(struct.pack("<4sII", NET_MAGIC, NET_VERSION, len(net.layers)))
    for layer in net.layers:
        fan_in, fan_out = layer.w.shape
        f.write(struct.pack("<IIBB", fan_in, fan_out, ACT_TAGS[layer.act],
                            1 if layer.bn is not None else 0))
        _write_array(f, layer.w)
        _write_array(f, layer.b)
        if layer.bn is not None:
            bn = layer.bn
            f.write(struct.pack("<dd", bn.momentum, bn.eps))
            for arr in (bn.gamma, bn.beta, bn.running_mean, bn.running_var):
                _write_array(f, arr)


def load_net(f) -> DenseNet:
    magic, version, n_layers = struct.unpack("<4sII", f.read(12))
    if magic != NET_MAGIC:
        raise ValueError("not a network checkpoint (bad magic)")
    if version != NET_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    layers = []
    for _ in range(n_layers):
        fan_in, fan_out, act_tag, has_bn = struct.unpack("<IIBB", f.read(10))
        w = _read_array(f, (fan_in, fan_out))
        b = _read_array(f, (fan_out,))
        bn = None
        if has_bn:
            momentum, eps = struct.unpack("<dd", f.read(16))
            gamma = _read_array(f, (fan_out,))
            beta = _read_array(f, (fan_out,))
            rmean = _read_array(f, (fan_out,))
            rvar = _read_array(f, (fan_out,))
            bn = BatchNorm(gamma, beta, rmean, rvar, momentum, eps)
        layers.append(Layer(w=w, b=b, act=TAG_ACTS[act_tag], bn=bn))
    return DenseNet(layers)
