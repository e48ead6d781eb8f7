"""Dense tanh networks with manual backpropagation, Adam and gradient checks.

Everything runs in float64. Inputs are batched as ``(batch, features)``;
a 1-D input is treated as a batch of one and the output is squeezed back.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

OUTPUT_ACTIVATIONS = ("identity", "sigmoid")


def _orthogonal(rng: np.random.Generator, fan_in: int, fan_out: int, gain: float) -> np.ndarray:
    a = rng.normal(size=(max(fan_in, fan_out), min(fan_in, fan_out)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if fan_in < fan_out:
        q = q.T
    return gain * q[:fan_in, :fan_out]


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


class Mlp:
    """Affine layers with tanh between them and an optional sigmoid head."""

    def __init__(
        self,
        layer_dims: Sequence[int],
        output: str = "identity",
        rng: np.random.Generator | None = None,
        *,
        hidden_gain: float = 1.0,
        output_gain: float = 1.0,
    ):
        if len(layer_dims) < 2:
            raise ValueError("an MLP needs at least input and output dimensions")
        if output not in OUTPUT_ACTIVATIONS:
            raise ValueError(f"unknown output activation {output!r}")
        self.layer_dims = [int(d) for d in layer_dims]
        self.output = output
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        n_layers = len(self.layer_dims) - 1
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            gain = output_gain if i == n_layers - 1 else hidden_gain
            self.params.append(_orthogonal(rng, fan_in, fan_out, gain))
            self.params.append(np.zeros(fan_out))

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    def copy(self) -> "Mlp":
        clone = Mlp.__new__(Mlp)
        clone.layer_dims = list(self.layer_dims)
        clone.output = self.output
        clone.params = [p.copy() for p in self.params]
        return clone

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        for dst, src in zip(self.params, params, strict=True):
            if dst.shape != src.shape:
                raise ValueError(f"parameter shape {src.shape} does not match {dst.shape}")
            dst[...] = src

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[-1] != self.layer_dims[0]:
            raise ValueError(f"input has {x.shape[-1]} features, network expects {self.layer_dims[0]}")
        return x, squeeze

    def forward(self, x) -> np.ndarray:
        out, _ = self.forward_cache(x)
        return out

    __call__ = forward

    def logits(self, cache) -> np.ndarray:
        """Pre-activation output recorded by ``forward_cache``."""
        acts, _, squeeze = cache
        return acts[-1][0] if squeeze else acts[-1]

    def forward_cache(self, x):
        x, squeeze = self._check_input(x)
        acts = [x]
        h = x
        for layer in range(self.n_layers):
            w, b = self.params[2 * layer], self.params[2 * layer + 1]
            z = h @ w + b
            h = np.tanh(z) if layer < self.n_layers - 1 else z
            acts.append(h)
        out = sigmoid(h) if self.output == "sigmoid" else h
        cache = (acts, out, squeeze)
        return (out[0] if squeeze else out), cache

    def backward(self, cache, output_grad, *, preactivation: bool = False) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of ``sum(output * output_grad)`` w.r.t. parameters and input.

        With ``preactivation=True`` the gradient is taken w.r.t. the logits
        before the sigmoid head, which keeps cross-entropy losses stable.
        """
        acts, out, squeeze = cache
        g = np.asarray(output_grad, dtype=np.float64)
        if squeeze:
            g = g[None, :]
        if g.shape != out.shape:
            raise ValueError(f"output gradient shape {g.shape} does not match output {out.shape}")
        if self.output == "sigmoid" and not preactivation:
            g = g * out * (1.0 - out)
        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        for layer in reversed(range(self.n_layers)):
            h_in = acts[layer]
            w = self.params[2 * layer]
            grads[2 * layer] = h_in.T @ g
            grads[2 * layer + 1] = g.sum(axis=0)
            g = g @ w.T
            if layer > 0:
                g = g * (1.0 - acts[layer] ** 2)
        return grads, (g[0] if squeeze else g)


@dataclass
class Adam:
    params: list[np.ndarray]
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.m:
            self.m = [np.zeros_like(p) for p in self.params]
            self.v = [np.zeros_like(p) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        """Bias-corrected Adam update applied in place."""
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v, strict=True):
            if m.shape != g.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(params, grads, state: Adam):
    state.step(grads)
    return params


def clip_grad_norm(grads: list[np.ndarray], max_norm: float | None) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


# -- categorical policy head ------------------------------------------------


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    if np.isnan(logits).any():
        raise ValueError("NaN logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def categorical_sample(logits, rng) -> np.ndarray:
    """Inverse-CDF sampling; one uniform draw per row."""
    probs = softmax(logits)
    cdf = np.cumsum(probs, axis=-1)
    u = rng.random(probs.shape[:-1])
    idx = (cdf < u[..., None]).sum(axis=-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def categorical_logprob(logits, actions) -> np.ndarray:
    logp = log_softmax(logits)
    actions = np.asarray(actions)
    return np.take_along_axis(logp, actions[..., None], axis=-1)[..., 0]


def categorical_entropy(logits) -> np.ndarray:
    logp = log_softmax(logits)
    return -(np.exp(logp) * logp).sum(axis=-1)


def entropy_grad(logits) -> np.ndarray:
    """d entropy / d logits, row-wise."""
    logp = log_softmax(logits)
    p = np.exp(logp)
    h = -(p * logp).sum(axis=-1, keepdims=True)
    return -p * (logp + h)


# -- gradient checking ------------------------------------------------------


def numerical_gradients(net: Mlp, loss: Callable[[np.ndarray], float], x, h: float = 1e-5) -> list[np.ndarray]:
    grads = []
    for p in net.params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            old = p[idx]
            p[idx] = old + h
            up = loss(net.forward(x))
            p[idx] = old - h
            down = loss(net.forward(x))
            p[idx] = old
            g[idx] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: Sequence[np.ndarray], numeric: Sequence[np.ndarray], floor: float = 1e-6) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric, strict=True):
        rel = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor)
        worst = max(worst, float(rel.max()))
    return worst


def gradient_check(
    net: Mlp,
    loss_and_grad: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x,
    h: float = 1e-5,
) -> float:
    """Max relative error between backprop and central differences.

    ``loss_and_grad`` maps the network output to ``(loss, dloss/doutput)``.
    """
    out, cache = net.forward_cache(x)
    _, g_out = loss_and_grad(out)
    analytic, _ = net.backward(cache, g_out)
    numeric = numerical_gradients(net, lambda o: loss_and_grad(o)[0], x, h)
    return max_relative_error(analytic, numeric)


# -- checkpoints ------------------------------------------------------------
#
# Text format, one block per network:
#   [name] dims=<d0,d1,...> hidden=tanh output=<identity|sigmoid>
#   one line per parameter array (W0, b0, W1, b1, ...), row-major, repr floats


def format_networks(nets: dict[str, Mlp]) -> str:
    lines = []
    for name, net in nets.items():
        dims = ",".join(str(d) for d in net.layer_dims)
        lines.append(f"[{name}] dims={dims} hidden=tanh output={net.output}")
        for p in net.params:
            lines.append(" ".join(repr(float(v)) for v in p.ravel()))
    return "\n".join(lines) + "\n"


def parse_networks(text: str) -> dict[str, Mlp]:
    nets: dict[str, Mlp] = {}
    lines = [ln for ln in text.splitlines() if ln.strip()]
    i = 0
    while i < len(lines):
        head = lines[i].split()
        if not head[0].startswith("["):
            raise ValueError(f"expected a network header, got {lines[i][:40]!r}")
        name = head[0][1:-1]
        meta = dict(kv.split("=") for kv in head[1:])
        net = Mlp([int(d) for d in meta["dims"].split(",")], output=meta["output"])
        i += 1
        for p in net.params:
            values = np.array([float(v) for v in lines[i].split()])
            if values.size != p.size:
                raise ValueError(f"network {name}: expected {p.size} values, found {values.size}")
            p[...] = values.reshape(p.shape)
            i += 1
        nets[name] = net
    return nets


def save_networks(path: str | Path, nets: dict[str, Mlp]) -> None:
    Path(path).write_text(format_networks(nets))


def load_networks(path: str | Path) -> dict[str, Mlp]:
    return parse_networks(Path(path).read_text())
