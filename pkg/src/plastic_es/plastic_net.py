"""Neuromodulated plastic feedforward networks.

Each layer computes ``x_t = phi((w + alpha * H) @ x_prev + bias)`` and then
updates its Hebbian trace ``H <- clip(H + m * outer(x_t, x_prev), -omega, omega)``
where ``m = tanh(mod_w . x_t + mod_b)`` is a scalar modulation signal.

The array kernels below accept arbitrary leading batch axes so that a single
network and a stacked population share exactly the same arithmetic; matrix
products are written as explicit ordered accumulations, which keeps every
row's result bitwise independent of the batch it is computed in.

Genome layout (version 1), per layer in order:
    w (row-major), alpha (row-major), bias, mod_w, mod_b
Static layers drop alpha, mod_w and mod_b; layers without bias drop bias.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

GENOME_LAYOUT_VERSION = 1

ACTIVATIONS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "tanh": np.tanh,
    "identity": lambda z: z,
    "relu": lambda z: np.maximum(z, 0.0),
}


class ContractError(ValueError):
    """Raised when an operation is called with incompatible shapes or values."""


def _check_len(name: str, x: np.ndarray, n: int) -> None:
    if x.shape[-1] != n:
        raise ContractError(f"{name} has length {x.shape[-1]}, expected {n}")


def affine(w, alpha, trace, bias, x):
    """Compute ``(w + alpha * trace) @ x + bias`` with a fixed summation order.

    ``alpha``/``trace``/``bias`` may be None (static layer, no bias).
    Shapes: w (..., out, in), x (..., in) -> (..., out).
    """
    eff = w if alpha is None else w + alpha * trace
    in_dim = eff.shape[-1]
    out_shape = np.broadcast_shapes(eff.shape[:-1], x.shape[:-1] + (1,))
    z = np.zeros(out_shape) if bias is None else np.broadcast_to(bias, out_shape).copy()
    for j in range(in_dim):
        z += eff[..., j] * x[..., None, j]
    return z


def modulator(mod_w, mod_b, x_t):
    """Scalar modulation ``tanh(mod_w . x_t + mod_b)`` per leading batch index."""
    acc = np.zeros(x_t.shape[:-1])
    for i in range(x_t.shape[-1]):
        acc = acc + mod_w[..., i] * x_t[..., i]
    return np.tanh(acc + mod_b)


def hebbian_increment(trace, m, x_prev, x_t, omega):
    """Return ``clip(trace + m * outer(x_t, x_prev), -omega, omega)``."""
    inc = (np.asarray(m)[..., None] * x_t)[..., :, None] * x_prev[..., None, :]
    return np.clip(trace + inc, -omega, omega)


@dataclass
class PlasticLayer:
    """One layer of slow weights, plasticity coefficients, trace and modulator.

    ``plastic=False`` gives a conventional static layer whose genome carries
    only ``w`` and ``bias``; ``alpha``, ``mod_w`` and ``mod_b`` are then held
    at zero and never touched.
    """

    in_dim: int
    out_dim: int
    w: np.ndarray = None
    alpha: np.ndarray = None
    bias: np.ndarray = None
    mod_w: np.ndarray = None
    mod_b: float = 0.0
    trace: np.ndarray = None
    omega: float = 1.0
    plastic: bool = True
    use_bias: bool = True

    def __post_init__(self):
        if self.in_dim < 0 or self.out_dim < 1:
            raise ContractError(f"bad layer dims {self.in_dim}x{self.out_dim}")
        if self.omega <= 0:
            raise ContractError("omega must be positive")
        shape = (self.out_dim, self.in_dim)
        self.w = _as_array(self.w, shape, "w")
        self.alpha = _as_array(self.alpha, shape, "alpha")
        self.bias = _as_array(self.bias, (self.out_dim,), "bias")
        self.mod_w = _as_array(self.mod_w, (self.out_dim,), "mod_w")
        self.mod_b = float(self.mod_b)
        self.trace = _as_array(self.trace, shape, "trace")

    @property
    def genome_size(self) -> int:
        n = self.out_dim * self.in_dim
        if self.use_bias:
            n += self.out_dim
        if self.plastic:
            n += self.out_dim * self.in_dim + self.out_dim + 1
        return n

    def forward(self, x_prev: np.ndarray, activation: str = "tanh") -> np.ndarray:
        x_prev = np.asarray(x_prev, dtype=np.float64)
        _check_len("x_prev", x_prev, self.in_dim)
        z = affine(
            self.w,
            self.alpha if self.plastic else None,
            self.trace,
            self.bias if self.use_bias else None,
            x_prev,
        )
        return ACTIVATIONS[activation](z)

    def modulation(self, x_t: np.ndarray) -> float:
        x_t = np.asarray(x_t, dtype=np.float64)
        _check_len("x_t", x_t, self.out_dim)
        return float(modulator(self.mod_w, self.mod_b, x_t))

    def update_trace(self, x_prev: np.ndarray, x_t: np.ndarray) -> None:
        x_prev = np.asarray(x_prev, dtype=np.float64)
        x_t = np.asarray(x_t, dtype=np.float64)
        _check_len("x_prev", x_prev, self.in_dim)
        _check_len("x_t", x_t, self.out_dim)
        if not self.plastic:
            return
        m = modulator(self.mod_w, self.mod_b, x_t)
        self.trace = hebbian_increment(self.trace, m, x_prev, x_t, self.omega)

    def reset(self) -> None:
        self.trace = np.zeros((self.out_dim, self.in_dim))

    def parameters(self) -> list[np.ndarray]:
        """Genome-ordered parameter arrays (views, flattened on export)."""
        parts = [self.w]
        if self.plastic:
            parts.append(self.alpha)
        if self.use_bias:
            parts.append(self.bias)
        if self.plastic:
            parts += [self.mod_w, np.array([self.mod_b])]
        return parts


def _as_array(value, shape, name):
    if value is None:
        return np.zeros(shape)
    arr = np.array(value, dtype=np.float64)
    if arr.shape != shape:
        raise ContractError(f"{name} has shape {arr.shape}, expected {shape}")
    return arr


def forward_layer(layer: PlasticLayer, x_prev, activation: str = "tanh") -> np.ndarray:
    return layer.forward(x_prev, activation)


def modulation(layer: PlasticLayer, x_t) -> float:
    return layer.modulation(x_t)


def update_trace(layer: PlasticLayer, x_prev, x_t) -> None:
    layer.update_trace(x_prev, x_t)


@dataclass
class PlasticNetwork:
    layers: list[PlasticLayer]
    activation: str = "tanh"

    def __post_init__(self):
        if not self.layers:
            raise ContractError("network needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {self.activation!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ContractError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @classmethod
    def build(
        cls,
        sizes: Sequence[int],
        plastic: bool = True,
        activation: str = "tanh",
        use_bias: bool = True,
        omega: float = 1.0,
    ) -> "PlasticNetwork":
        """Zero-initialised network with layer widths ``sizes`` (input first)."""
        if len(sizes) < 2:
            raise ContractError("sizes needs an input and an output width")
        layers = [
            PlasticLayer(i, o, omega=omega, plastic=plastic, use_bias=use_bias)
            for i, o in zip(sizes[:-1], sizes[1:])
        ]
        return cls(layers, activation)

    @property
    def sizes(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    @property
    def genome_size(self) -> int:
        return sum(layer.genome_size for layer in self.layers)

    def step(self, obs) -> np.ndarray:
        x = np.asarray(obs, dtype=np.float64)
        for layer in self.layers:
            x_t = layer.forward(x, self.activation)
            layer.update_trace(x, x_t)
            x = x_t
        return x

    def reset(self) -> None:
        for layer in self.layers:
            layer.reset()

    def to_flat(self) -> np.ndarray:
        parts = [p.ravel() for layer in self.layers for p in layer.parameters()]
        return np.concatenate(parts) if parts else np.zeros(0)

    def from_flat(self, theta) -> "PlasticNetwork":
        """New network with this network's architecture and parameters ``theta``."""
        theta = np.asarray(theta, dtype=np.float64)
        if theta.ndim != 1 or theta.size != self.genome_size:
            raise ContractError(
                f"genome has length {theta.size}, expected {self.genome_size}"
            )
        net = copy.deepcopy(self)
        pos = 0
        for layer in net.layers:
            for name, shape in _genome_fields(layer):
                n = int(np.prod(shape))
                chunk = theta[pos : pos + n].reshape(shape).copy()
                setattr(layer, name, float(chunk[0]) if name == "mod_b" else chunk)
                pos += n
            layer.reset()
        return net


def _genome_fields(layer: PlasticLayer) -> list[tuple[str, tuple[int, ...]]]:
    shape = (layer.out_dim, layer.in_dim)
    fields = [("w", shape)]
    if layer.plastic:
        fields.append(("alpha", shape))
    if layer.use_bias:
        fields.append(("bias", (layer.out_dim,)))
    if layer.plastic:
        fields += [("mod_w", (layer.out_dim,)), ("mod_b", (1,))]
    return fields


def network_step(net: PlasticNetwork, obs) -> np.ndarray:
    return net.step(obs)


def reset_state(net: PlasticNetwork) -> None:
    net.reset()


def to_flat(net: PlasticNetwork) -> np.ndarray:
    return net.to_flat()


def from_flat(template: PlasticNetwork, theta) -> PlasticNetwork:
    return template.from_flat(theta)


@dataclass
class BatchedNetwork:
    """A stack of networks sharing one architecture, stepped together.

    Row ``b`` evolves exactly as ``template.from_flat(thetas[b])`` would,
    bit for bit.
    """

    template: PlasticNetwork
    params: list[dict[str, np.ndarray]]
    traces: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def from_flats(cls, template: PlasticNetwork, thetas) -> "BatchedNetwork":
        thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
        if thetas.shape[1] != template.genome_size:
            raise ContractError(
                f"genomes have length {thetas.shape[1]}, expected {template.genome_size}"
            )
        batch = thetas.shape[0]
        params = []
        pos = 0
        for layer in template.layers:
            p = {}
            for name, shape in _genome_fields(layer):
                n = int(np.prod(shape))
                p[name] = thetas[:, pos : pos + n].reshape((batch,) + shape).copy()
                pos += n
            if "mod_b" in p:
                p["mod_b"] = p["mod_b"][:, 0]
            params.append(p)
        net = cls(template, params)
        net.reset()
        return net

    @property
    def batch_size(self) -> int:
        return self.params[0]["w"].shape[0]

    def repeat(self, times: int) -> "BatchedNetwork":
        """Each row repeated ``times`` consecutively (rows b*times .. b*times+times-1)."""
        params = [{k: np.repeat(v, times, axis=0) for k, v in p.items()} for p in self.params]
        net = BatchedNetwork(self.template, params)
        net.reset()
        return net

    def reset(self) -> None:
        b = self.batch_size
        self.traces = [np.zeros((b, layer.out_dim, layer.in_dim)) for layer in self.template.layers]

    def step(self, obs: np.ndarray) -> np.ndarray:
        act = ACTIVATIONS[self.template.activation]
        x = np.asarray(obs, dtype=np.float64)
        for k, layer in enumerate(self.template.layers):
            p = self.params[k]
            x_t = act(affine(p["w"], p.get("alpha"), self.traces[k], p.get("bias"), x))
            if layer.plastic:
                m = modulator(p["mod_w"], p["mod_b"], x_t)
                self.traces[k] = hebbian_increment(self.traces[k], m, x, x_t, layer.omega)
            x = x_t
        return x
