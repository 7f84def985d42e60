"""Fully connected networks with named output heads, hand-written backprop,
Adam and an exponentially decaying learning rate. Everything is float64."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

from .errors import DomainError, UsageError

HIDDEN_ACTIVATIONS = ("relu", "tanh", "sigmoid")
HEAD_ACTIVATIONS = ("softmax", "sigmoid", "identity", "tanh")
CHECKPOINT_MAGIC = "autofocal-mlp"
CHECKPOINT_VERSION = 1


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softmax(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _activate(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "softmax":
        return _softmax(z)
    if name == "identity":
        return z
    raise DomainError(f"unknown activation {name!r}")


def _activate_backward(name, z, a, grad):
    """Gradient w.r.t. the pre-activation ``z`` given the gradient w.r.t. ``a``."""
    if name == "relu":
        return grad * (z > 0)
    if name == "tanh":
        return grad * (1.0 - a * a)
    if name == "sigmoid":
        return grad * a * (1.0 - a)
    if name == "softmax":
        return a * (grad - (grad * a).sum(axis=1, keepdims=True))
    if name == "identity":
        return grad
    raise DomainError(f"unknown activation {name!r}")


@dataclass(frozen=True)
class Head:
    name: str
    size: int
    activation: str


class Mlp:
    """A trunk of hidden layers feeding one linear layer per output head.

    Parameters live in :attr:`params`, a dict keyed ``W0, b0, ...`` for the
    trunk and ``head.<name>.W`` / ``head.<name>.b`` for the heads.
    """

    def __init__(self, input_size: int, hidden_sizes: Sequence[int], heads: Sequence[Head],
                 activations: Optional[Sequence[str]] = None, seed: Optional[int] = 0,
                 params: Optional[Mapping[str, np.ndarray]] = None):
        if input_size <= 0 or any(h <= 0 for h in hidden_sizes):
            raise DomainError("layer sizes must be positive")
        if not heads:
            raise DomainError("at least one output head is required")
        activations = list(activations) if activations is not None else ["relu"] * len(hidden_sizes)
        if len(activations) != len(hidden_sizes):
            raise DomainError("need one activation per hidden layer")
        for a in activations:
            if a not in HIDDEN_ACTIVATIONS:
                raise DomainError(f"hidden activation must be one of {HIDDEN_ACTIVATIONS}, got {a!r}")
        names = set()
        for h in heads:
            if h.activation not in HEAD_ACTIVATIONS:
                raise DomainError(f"head activation must be one of {HEAD_ACTIVATIONS}, got {h.activation!r}")
            if h.size <= 0 or h.name in names:
                raise DomainError(f"invalid or duplicate head {h.name!r}")
            names.add(h.name)
        self.input_size = int(input_size)
        self.hidden_sizes = [int(h) for h in hidden_sizes]
        self.activations = activations
        self.heads = list(heads)
        self._cache = None
        self._version = 0
        if params is None:
            self.params = self._init_params(np.random.default_rng(seed))
        else:
            self.params = {}
            self.set_params(params)

    # ------------------------------------------------------------ parameters
    def _shapes(self) -> Dict[str, tuple]:
        shapes = {}
        fan_in = self.input_size
        for i, width in enumerate(self.hidden_sizes):
            shapes[f"W{i}"] = (fan_in, width)
            shapes[f"b{i}"] = (width,)
            fan_in = width
        for h in self.heads:
            shapes[f"head.{h.name}.W"] = (fan_in, h.size)
            shapes[f"head.{h.name}.b"] = (h.size,)
        return shapes

    def _init_params(self, rng) -> Dict[str, np.ndarray]:
        params = {}
        for name, shape in self._shapes().items():
            bound = 1.0 / math.sqrt(shape[0]) if len(shape) == 2 else 0.0
            if len(shape) == 2:
                params[name] = rng.uniform(-bound, bound, size=shape)
            else:
                params[name] = np.zeros(shape)
        return params

    def set_params(self, params: Mapping[str, np.ndarray]):
        shapes = self._shapes()
        if set(params) != set(shapes):
            raise DomainError("parameter names do not match the architecture")
        for name, shape in shapes.items():
            value = np.array(params[name], dtype=np.float64)
            if value.shape != shape:
                raise DomainError(f"parameter {name} has shape {value.shape}, expected {shape}")
            self.params[name] = value
        self.touch()

    def touch(self):
        """Mark parameters as modified; invalidates any cached forward pass."""
        self._version += 1

    @property
    def layer_sizes(self) -> List[int]:
        return [self.input_size, *self.hidden_sizes]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    # ------------------------------------------------------------ passes
    def forward(self, inputs) -> Dict[str, np.ndarray]:
        x = np.asarray(inputs, dtype=np.float64)
        if x.ndim == 1:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.input_size:
            raise DomainError(f"expected inputs of width {self.input_size}, got shape {x.shape}")
        trunk = [(x, None)]
        a = x
        for i, act in enumerate(self.activations):
            z = a @ self.params[f"W{i}"] + self.params[f"b{i}"]
            a = _activate(act, z)
            trunk.append((a, z))
        outputs = {}
        head_cache = {}
        for h in self.heads:
            z = a @ self.params[f"head.{h.name}.W"] + self.params[f"head.{h.name}.b"]
            out = _activate(h.activation, z)
            outputs[h.name] = out
            head_cache[h.name] = (z, out)
        self._cache = (self._version, trunk, head_cache)
        return outputs

    def backward(self, grad_wrt_outputs: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
        """Parameter gradients given the gradient w.r.t. each head's output.

        Heads missing from ``grad_wrt_outputs`` contribute nothing. Uses the
        most recent :meth:`forward`; raises :class:`UsageError` if the
        parameters changed since then.
        """
        if self._cache is None:
            raise UsageError("backward called before forward")
        version, trunk, head_cache = self._cache
        if version != self._version:
            raise UsageError("parameters changed since the last forward pass")
        unknown = set(grad_wrt_outputs) - {h.name for h in self.heads}
        if unknown:
            raise DomainError(f"unknown heads {sorted(unknown)}")
        a_last = trunk[-1][0]
        grads = {}
        da = np.zeros_like(a_last)
        for h in self.heads:
            z, out = head_cache[h.name]
            g = grad_wrt_outputs.get(h.name)
            if g is None:
                g = np.zeros_like(out)
            g = np.asarray(g, dtype=np.float64)
            if g.shape != out.shape:
                raise DomainError(f"gradient for head {h.name} has shape {g.shape}, expected {out.shape}")
            dz = _activate_backward(h.activation, z, out, g)
            grads[f"head.{h.name}.W"] = a_last.T @ dz
            grads[f"head.{h.name}.b"] = dz.sum(axis=0)
            da = da + dz @ self.params[f"head.{h.name}.W"].T
        for i in reversed(range(len(self.hidden_sizes))):
            a, z = trunk[i + 1]
            dz = _activate_backward(self.activations[i], z, a, da)
            grads[f"W{i}"] = trunk[i][0].T @ dz
            grads[f"b{i}"] = dz.sum(axis=0)
            da = dz @ self.params[f"W{i}"].T
        return {name: grads[name] for name in self.params}

    # ------------------------------------------------------------ serialization
    def architecture(self) -> dict:
        return {
            "input_size": self.input_size,
            "hidden_sizes": self.hidden_sizes,
            "activations": self.activations,
            "heads": [[h.name, h.size, h.activation] for h in self.heads],
        }

    def save(self, path, extra: Optional[Mapping[str, float]] = None):
        """Write a lossless text checkpoint (see README for the layout)."""
        lines = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
                 "arch " + json.dumps(self.architecture(), sort_keys=True)]
        for name, value in self.params.items():
            shape = ",".join(str(s) for s in value.shape)
            lines.append(f"param {name} {shape} " + " ".join(float(v).hex() for v in value.ravel()))
        for name, value in (extra or {}).items():
            lines.append(f"scalar {name} {float(value).hex()}")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path):
        """Return ``(model, extra_scalars)`` from a checkpoint written by :meth:`save`."""
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0].split() != [CHECKPOINT_MAGIC, str(CHECKPOINT_VERSION)]:
            raise DomainError(f"{path}: not a version {CHECKPOINT_VERSION} checkpoint")
        arch = None
        params = {}
        extra = {}
        for lineno, line in enumerate(lines[1:], start=2):
            kind, _, rest = line.partition(" ")
            if kind == "arch":
                arch = json.loads(rest)
            elif kind == "param":
                name, shape, *values = rest.split(" ")
                shape = tuple(int(s) for s in shape.split(",") if s)
                params[name] = np.array([float.fromhex(v) for v in values]).reshape(shape)
            elif kind == "scalar":
                name, value = rest.split(" ")
                extra[name] = float.fromhex(value)
            elif line.strip():
                raise DomainError(f"{path}:{lineno}: unknown record {kind!r}")
        if arch is None:
            raise DomainError(f"{path}: missing architecture record")
        model = cls(arch["input_size"], arch["hidden_sizes"], [Head(*h) for h in arch["heads"]],
                    activations=arch["activations"], params=params)
        return model, extra


def forward(model: Mlp, inputs) -> Dict[str, np.ndarray]:
    return model.forward(inputs)


def backward(model: Mlp, grad_wrt_outputs: Mapping[str, np.ndarray]) -> Dict[str, np.ndarray]:
    return model.backward(grad_wrt_outputs)


class Adam:
    """Bias-corrected Adam over a dict of named float64 arrays."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: Dict[str, np.ndarray] = {}
        self.v: Dict[str, np.ndarray] = {}

    def step(self, params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float):
        """Update ``params`` in place."""
        for name, g in grads.items():
            if name not in params:
                raise DomainError(f"gradient for unknown parameter {name!r}")
            if np.shape(g) != np.shape(params[name]):
                raise DomainError(f"gradient for {name} has shape {np.shape(g)}, expected {np.shape(params[name])}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, g in grads.items():
            g = np.asarray(g, dtype=np.float64)
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(g)
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if np.ndim(params[name]) == 0:
                params[name] = params[name] - update
            else:
                params[name] -= update


def adam_step(state: Adam, params: Dict[str, np.ndarray], grads: Mapping[str, np.ndarray], lr: float):
    state.step(params, grads, lr)
    return params, state


@dataclass(frozen=True)
class LrSchedule:
    """Geometric decay from ``start`` to ``end`` over ``total_steps``, then flat."""

    start: float = 1e-4
    end: float = 1e-6
    total_steps: int = 5000

    def __post_init__(self):
        if not (self.start > 0 and self.end > 0):
            raise DomainError("learning rates must be positive")
        if self.total_steps < 0:
            raise DomainError("total_steps must be non-negative")

    def __call__(self, step: int) -> float:
        if step < 0:
            raise DomainError("step must be non-negative")
        if self.total_steps == 0:
            return self.end if step > 0 else self.start
        frac = min(step, self.total_steps) / self.total_steps
        if frac == 1.0:
            return self.end
        return self.start * (self.end / self.start) ** frac


def lr_at(schedule: LrSchedule, step: int) -> float:
    return schedule(step)
