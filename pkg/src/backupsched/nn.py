"""Small dense networks with hand-written backprop and Adam.

All parameters of a network live in one flat vector (float64 by default,
float32 for training speed); per-layer weight and bias arrays are views into
it and every computation runs in that precision.  Gradients use the same flat layout, which
keeps Adam and target-network blending to a handful of vector operations.

Batches are row-major: inputs have shape ``(batch, width)``.  ``backward``
returns gradients *summed* over the batch; callers scale the upstream
gradient by ``1 / batch`` to get means.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

HIDDEN = 64
OUTPUT_INIT_SCALE = 1e-3
FLUSH_EVERY = 64
FLUSH_BELOW = 1e-30

RELU = "relu"
LINEAR = "linear"
SOFTMAX_HEAD = "softmax-head"
SIGMOID_HEAD = "sigmoid-head"
ACTIVATIONS = (RELU, LINEAR, SOFTMAX_HEAD, SIGMOID_HEAD)


@dataclass(frozen=True)
class LayerSpec:
    name: str
    n_in: int
    n_out: int
    activation: str
    output: bool = False


class NetworkParams:
    """Weights of a fixed-topology network.

    ``arch`` is ``"actor"``, ``"critic"`` or ``"mlp"`` (a plain chain of
    layers, used for testing the building blocks).
    """

    def __init__(self, arch: str, k: int, layers: list[LayerSpec], flat: np.ndarray | None = None,
                 dtype=np.float64):
        self.arch = arch
        self.k = k
        self.layers = list(layers)
        size = sum(l.n_in * l.n_out + l.n_out for l in self.layers)
        if flat is None:
            flat = np.zeros(size, dtype=dtype)
        elif flat.shape != (size,):
            raise InvalidArgument(f"{arch} expects {size} parameters, got {flat.shape}")
        self.flat = flat
        self.W: dict[str, np.ndarray] = {}
        self.b: dict[str, np.ndarray] = {}
        self.slices: dict[str, tuple[slice, slice]] = {}
        pos = 0
        for l in self.layers:
            ws = slice(pos, pos + l.n_in * l.n_out)
            pos = ws.stop
            bs = slice(pos, pos + l.n_out)
            pos = bs.stop
            self.slices[l.name] = (ws, bs)
            self.W[l.name] = flat[ws].reshape(l.n_in, l.n_out)
            self.b[l.name] = flat[bs]

    @property
    def size(self) -> int:
        return self.flat.shape[0]

    @property
    def dtype(self):
        return self.flat.dtype

    def descriptor(self) -> dict:
        return {
            "arch": self.arch,
            "k": self.k,
            "dtype": str(self.flat.dtype),
            "layers": [[l.name, l.n_in, l.n_out, l.activation, l.output] for l in self.layers],
        }

    @classmethod
    def from_descriptor(cls, desc: dict, flat: np.ndarray | None = None) -> "NetworkParams":
        layers = [LayerSpec(n, i, o, a, bool(out)) for n, i, o, a, out in desc["layers"]]
        return cls(desc["arch"], int(desc["k"]), layers, flat, np.dtype(desc.get("dtype", "float64")))

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, self.k, self.layers, self.flat.copy())

    def same_shape(self, other: "NetworkParams") -> bool:
        return (self.arch == other.arch and self.k == other.k and self.layers == other.layers
                and self.dtype == other.dtype)

    def zeros_like(self) -> np.ndarray:
        return np.zeros_like(self.flat)


def actor_layers(k: int, hidden: int = HIDDEN) -> list[LayerSpec]:
    return [
        LayerSpec("h1", k, hidden, RELU),
        LayerSpec("h2", hidden, hidden, RELU),
        LayerSpec("device", hidden, k - 1, SOFTMAX_HEAD, output=True),
        LayerSpec("step", hidden, 1, SIGMOID_HEAD, output=True),
    ]


def critic_layers(k: int, hidden: int = HIDDEN) -> list[LayerSpec]:
    return [
        LayerSpec("s1", k, hidden, RELU),
        LayerSpec("s2", hidden, hidden, LINEAR),
        LayerSpec("a1", k, hidden, LINEAR),
        LayerSpec("h1", 2 * hidden, hidden, RELU),
        LayerSpec("h2", hidden, hidden, RELU),
        LayerSpec("q", hidden, 1, LINEAR, output=True),
    ]


def _check_k(k: int) -> None:
    if int(k) != k or k < 2:
        raise InvalidArgument(f"k must be an integer >= 2, got {k!r}")


def _initialize(net: NetworkParams, rng: np.random.Generator) -> NetworkParams:
    # draws are always float64 so a seed gives the same weights in either precision
    for l in net.layers:
        bound = 1.0 / math.sqrt(l.n_in)
        if l.output:
            bound *= OUTPUT_INIT_SCALE
        ws, bs = net.slices[l.name]
        net.flat[ws] = rng.uniform(-bound, bound, ws.stop - ws.start)
        net.flat[bs] = rng.uniform(-bound, bound, bs.stop - bs.start)
    return net


def init_actor(k: int, rng: np.random.Generator | None = None, hidden: int = HIDDEN,
               dtype=np.float64) -> NetworkParams:
    """Actor ``k -> 64 -> 64 -> (k-1 softmax | 1 sigmoid)``; all zeros when ``rng`` is None."""
    _check_k(k)
    net = NetworkParams("actor", k, actor_layers(k, hidden), dtype=dtype)
    return net if rng is None else _initialize(net, rng)


def init_critic(k: int, rng: np.random.Generator | None = None, hidden: int = HIDDEN,
                dtype=np.float64) -> NetworkParams:
    """Critic with separate state/action branches merged into a scalar Q head."""
    _check_k(k)
    net = NetworkParams("critic", k, critic_layers(k, hidden), dtype=dtype)
    return net if rng is None else _initialize(net, rng)


def init_mlp(layers: list[LayerSpec], rng: np.random.Generator | None = None) -> NetworkParams:
    for a, b in zip(layers, layers[1:]):
        if a.n_out != b.n_in:
            raise InvalidArgument(f"layer {b.name} expects width {b.n_in}, previous gives {a.n_out}")
    for l in layers:
        if l.activation not in (RELU, LINEAR, SIGMOID_HEAD, SOFTMAX_HEAD):
            raise InvalidArgument(f"unknown activation {l.activation!r}")
    net = NetworkParams("mlp", layers[0].n_in, layers)
    return net if rng is None else _initialize(net, rng)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    if activation == RELU:
        return np.maximum(z, 0.0)
    if activation == LINEAR:
        return z
    if activation == SOFTMAX_HEAD:
        return softmax(z)
    return sigmoid(z)


def _activation_grad(y: np.ndarray, g: np.ndarray, activation: str) -> np.ndarray:
    """Gradient w.r.t. pre-activation given output ``y`` and upstream ``g``."""
    if activation == RELU:
        return g * (y > 0.0)
    if activation == LINEAR:
        return g
    if activation == SOFTMAX_HEAD:
        return y * (g - (g * y).sum(axis=-1, keepdims=True))
    return g * y * (1.0 - y)


def _as_batch(x, width: int, what: str, dtype=np.float64) -> np.ndarray:
    x = np.asarray(x, dtype=dtype)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != width:
        raise InvalidArgument(f"{what} must have width {width}, got shape {x.shape}")
    return x


@dataclass
class Cache:
    arch: str
    size: int
    acts: dict = field(default_factory=dict)


def forward(net: NetworkParams, *inputs):
    """Run the network; returns ``(output, cache)`` with batch-shaped output."""
    W, b = net.W, net.b
    cache = Cache(net.arch, net.size)
    acts = cache.acts
    if net.arch == "actor":
        if len(inputs) != 1:
            raise InvalidArgument("actor takes a single state input")
        x = _as_batch(inputs[0], net.k, "state", net.dtype)
        acts["x"] = x
        h1 = np.maximum(x @ W["h1"] + b["h1"], 0.0)
        h2 = np.maximum(h1 @ W["h2"] + b["h2"], 0.0)
        p = softmax(h2 @ W["device"] + b["device"])
        u = sigmoid(h2 @ W["step"] + b["step"])
        acts.update(h1=h1, h2=h2, p=p, u=u)
        return np.concatenate([p, u], axis=1), cache
    if net.arch == "critic":
        if len(inputs) != 2:
            raise InvalidArgument("critic takes (state, action) inputs")
        s = _as_batch(inputs[0], net.k, "state", net.dtype)
        a = _as_batch(inputs[1], net.k, "action", net.dtype)
        if s.shape[0] != a.shape[0]:
            raise InvalidArgument("state and action batches differ in size")
        s1 = np.maximum(s @ W["s1"] + b["s1"], 0.0)
        s2 = s1 @ W["s2"] + b["s2"]
        a1 = a @ W["a1"] + b["a1"]
        c = np.concatenate([s2, a1], axis=1)
        h1 = np.maximum(c @ W["h1"] + b["h1"], 0.0)
        h2 = np.maximum(h1 @ W["h2"] + b["h2"], 0.0)
        q = h2 @ W["q"] + b["q"]
        acts.update(s=s, a=a, s1=s1, c=c, h1=h1, h2=h2)
        return q, cache
    if net.arch == "mlp":
        if len(inputs) != 1:
            raise InvalidArgument("mlp takes a single input")
        x = _as_batch(inputs[0], net.layers[0].n_in, "input", net.dtype)
        outs = [x]
        for l in net.layers:
            x = _activate(x @ W[l.name] + b[l.name], l.activation)
            outs.append(x)
        acts["outs"] = outs
        return x, cache
    raise InvalidArgument(f"unknown architecture {net.arch!r}")


def _dense_back(net, grads, name, x, dz, need_input=True):
    if grads is not None:
        ws, bs = net.slices[name]
        np.matmul(x.T, dz, out=grads[ws].reshape(x.shape[1], dz.shape[1]))
        np.sum(dz, axis=0, out=grads[bs])
    if need_input:
        return dz @ net.W[name].T
    return None


def backward(net: NetworkParams, cache: Cache, upstream, *, params: bool = True, inputs: bool = True):
    """Gradients of ``sum(upstream * output)``.

    Returns ``(param_grads, input_grads)`` where ``param_grads`` is flat and
    ``input_grads`` is a tuple with one entry per network input.  Either part
    can be skipped (returned as None) when the caller does not need it.
    """
    if cache.arch != net.arch or cache.size != net.size:
        raise InvalidArgument("cache does not come from this network")
    acts = cache.acts
    grads = np.empty(net.size, dtype=net.dtype) if params else None
    if net.arch == "actor":
        x, h1, h2, p, u = acts["x"], acts["h1"], acts["h2"], acts["p"], acts["u"]
        g = _as_batch(upstream, net.k, "upstream gradient", net.dtype)
        gp, gu = g[:, :-1], g[:, -1:]
        dzp = p * (gp - (gp * p).sum(axis=1, keepdims=True))
        dzu = gu * u * (1.0 - u)
        dh2 = _dense_back(net, grads, "device", h2, dzp)
        dh2 += _dense_back(net, grads, "step", h2, dzu)
        dh1 = _dense_back(net, grads, "h2", h1, dh2 * (h2 > 0.0))
        dx = _dense_back(net, grads, "h1", x, dh1 * (h1 > 0.0), inputs)
        return grads, ((dx,) if inputs else None)
    if net.arch == "critic":
        s, a, s1, c, h1, h2 = (acts[n] for n in ("s", "a", "s1", "c", "h1", "h2"))
        g = _as_batch(upstream, 1, "upstream gradient", net.dtype)
        dh2 = _dense_back(net, grads, "q", h2, g)
        dh1 = _dense_back(net, grads, "h2", h1, dh2 * (h2 > 0.0))
        dc = _dense_back(net, grads, "h1", c, dh1 * (h1 > 0.0))
        hidden = net.layers[1].n_out
        da = _dense_back(net, grads, "a1", a, dc[:, hidden:], inputs)
        if not params and inputs:
            # the state branch only feeds parameter gradients and the state input
            ds = (((dc[:, :hidden] @ net.W["s2"].T) * (s1 > 0.0)) @ net.W["s1"].T)
            return None, (ds, da)
        ds1 = _dense_back(net, grads, "s2", s1, dc[:, :hidden])
        ds = _dense_back(net, grads, "s1", s, ds1 * (s1 > 0.0), inputs)
        return grads, ((ds, da) if inputs else None)
    outs = acts["outs"]
    g = _as_batch(upstream, net.layers[-1].n_out, "upstream gradient", net.dtype)
    for i in range(len(net.layers) - 1, -1, -1):
        l = net.layers[i]
        dz = _activation_grad(outs[i + 1], g, l.activation)
        g = _dense_back(net, grads, l.name, outs[i], dz, inputs or i > 0)
    return grads, ((g,) if inputs else None)


@dataclass
class AdamState:
    lr: float
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    _tmp: np.ndarray | None = field(default=None, repr=False, compare=False)

    def scratch(self) -> np.ndarray:
        if self._tmp is None or self._tmp.shape != self.m.shape:
            self._tmp = np.empty_like(self.m)
        return self._tmp


def init_adam(net: NetworkParams, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(lr, net.zeros_like(), net.zeros_like(), 0, beta1, beta2, eps)


def adam_step(net: NetworkParams, grads: np.ndarray, opt: AdamState):
    """One bias-corrected Adam descent step, applied in place; returns ``(net, opt)``."""
    if grads.shape != net.flat.shape or opt.m.shape != net.flat.shape:
        raise InvalidArgument(
            f"gradient shape {grads.shape} does not match parameters {net.flat.shape}"
        )
    if not np.all(np.isfinite(grads)):
        raise FloatingPointError(
            f"non-finite gradient in {net.arch} network (t={opt.t}); aborting update"
        )
    opt.t += 1
    b1, b2 = opt.beta1, opt.beta2
    tmp = opt.scratch()
    opt.m *= b1
    np.multiply(grads, 1.0 - b1, out=tmp)
    opt.m += tmp
    opt.v *= b2
    np.multiply(grads, grads, out=tmp)
    tmp *= 1.0 - b2
    opt.v += tmp
    lr_t = opt.lr * math.sqrt(1.0 - b2**opt.t) / (1.0 - b1**opt.t)
    # eps is applied to the bias-corrected second moment
    eps_t = opt.eps * math.sqrt(1.0 - b2**opt.t)
    if opt.t % FLUSH_EVERY == 0:
        # moments of dead units decay geometrically; zero them before they go
        # subnormal, which is orders of magnitude slower to compute with
        opt.m[np.abs(opt.m) < FLUSH_BELOW] = 0.0
        opt.v[opt.v < FLUSH_BELOW] = 0.0
    np.sqrt(opt.v, out=tmp)
    tmp += eps_t
    np.divide(opt.m, tmp, out=tmp)
    tmp *= lr_t
    net.flat -= tmp
    return net, opt


def soft_update(target: NetworkParams, online: NetworkParams, tau: float) -> NetworkParams:
    """Blend ``target <- tau * online + (1 - tau) * target`` in place."""
    if not target.same_shape(online):
        raise InvalidArgument("target and online networks have different architectures")
    if not 0.0 < tau <= 1.0:
        raise InvalidArgument(f"tau must lie in (0, 1], got {tau!r}")
    if tau == 1.0:
        target.flat[:] = online.flat
    else:
        # target + tau * (online - target), without temporaries
        tmp = np.subtract(online.flat, target.flat)
        tmp *= tau
        target.flat += tmp
    return target
