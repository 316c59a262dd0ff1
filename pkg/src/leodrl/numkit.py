"""Complex linear algebra helpers and a minimal MLP with exact reverse-mode gradients.

Complex matrices are plain ``numpy.ndarray`` objects of dtype complex128 and
2-D shape; the helpers here only add the contract checks the rest of the
package relies on. The MLP is a fixed-topology fully connected network in
float64 with named output heads:

* ``("scalar", 1)``      -- one linear output (value functions)
* ``("categorical", n)`` -- n logits for a discrete choice
* ``("bernoulli", n)``   -- n logits for independent binary choices

Gradients are computed analytically (reverse mode) and are tested against
central finite differences, so everything stays in double precision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Head = tuple[str, int]

_HEAD_KINDS = ("scalar", "categorical", "bernoulli")


# ---------------------------------------------------------------------------
# complex matrix helpers
# ---------------------------------------------------------------------------

def as_cmat(a) -> np.ndarray:
    """Coerce to a finite 2-D complex128 matrix, raising ValueError otherwise."""
    m = np.asarray(a, dtype=np.complex128)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    if not np.isfinite(m).all():
        raise ValueError("matrix entries must be finite")
    return m


def cmat_mul(a, b) -> np.ndarray:
    """Complex matrix product with an explicit inner-dimension check."""
    a = as_cmat(a)
    b = as_cmat(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions differ: {a.shape} x {b.shape}")
    return a @ b


def hermitian(a) -> np.ndarray:
    """Conjugate transpose."""
    return as_cmat(a).conj().T


def kron_vec(a, b) -> np.ndarray:
    """Kronecker product of two complex vectors; preserves unit norm."""
    a = np.asarray(a, dtype=np.complex128).reshape(-1)
    b = np.asarray(b, dtype=np.complex128).reshape(-1)
    return np.kron(a, b)


# ---------------------------------------------------------------------------
# MLP parameters
# ---------------------------------------------------------------------------

@dataclass
class MlpParams:
    """Weights/biases of a fully connected net plus its output-head layout.

    ``weights[i]`` has shape (layer_sizes[i+1], layer_sizes[i]); the final
    layer is linear and its width equals the summed head widths.
    """

    layer_sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    heads: tuple[Head, ...]
    hidden_activation: str = "tanh"

    def __post_init__(self) -> None:
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2:
            raise ValueError("need at least input and output layer sizes")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("weights/biases count must match layer transitions")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]):
                raise ValueError(f"weight {i} has shape {w.shape}, expected {(sizes[i + 1], sizes[i])}")
            if b.shape != (sizes[i + 1],):
                raise ValueError(f"bias {i} has shape {b.shape}, expected {(sizes[i + 1],)}")
        total = sum(width for _, width in self.heads)
        if total != sizes[-1]:
            raise ValueError(f"head widths sum to {total}, output layer is {sizes[-1]}")
        for kind, width in self.heads:
            if kind not in _HEAD_KINDS:
                raise ValueError(f"unknown head kind {kind!r}")
            if width < 1:
                raise ValueError("head width must be >= 1")
        if self.hidden_activation != "tanh":
            raise ValueError(f"unsupported hidden activation {self.hidden_activation!r}")
        self.layer_sizes = sizes

    def copy(self) -> "MlpParams":
        return MlpParams(
            self.layer_sizes,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.heads,
            self.hidden_activation,
        )

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + [b.ravel() for b in self.biases])


@dataclass
class Gradients:
    """Per-parameter derivatives, shape-congruent with an MlpParams."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def zeros_like(cls, p: MlpParams) -> "Gradients":
        return cls([np.zeros_like(w) for w in p.weights], [np.zeros_like(b) for b in p.biases])

    def add_(self, other: "Gradients", scale: float = 1.0) -> "Gradients":
        for a, b in zip(self.weights, other.weights):
            a += scale * b
        for a, b in zip(self.biases, other.biases):
            a += scale * b
        return self

    def scale_(self, factor: float) -> "Gradients":
        for w in self.weights:
            w *= factor
        for b in self.biases:
            b *= factor
        return self

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + [b.ravel() for b in self.biases])

    def max_abs(self) -> float:
        return float(max((np.abs(w).max(initial=0.0) for w in self.weights + self.biases), default=0.0))


def init_mlp(
    rng: np.random.Generator,
    input_dim: int,
    hidden: tuple[int, ...] | list[int],
    heads: tuple[Head, ...],
    hidden_activation: str = "tanh",
) -> MlpParams:
    """Random parameters with uniform fan-in scaling, U(-1/sqrt(n_in), 1/sqrt(n_in))."""
    out_dim = sum(width for _, width in heads)
    sizes = (int(input_dim), *[int(h) for h in hidden], out_dim)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return MlpParams(sizes, weights, biases, tuple(heads), hidden_activation)


# ---------------------------------------------------------------------------
# forward / backward
# ---------------------------------------------------------------------------

def _split_heads(p: MlpParams, out: np.ndarray) -> list[np.ndarray]:
    parts = []
    offset = 0
    for _, width in p.heads:
        parts.append(out[..., offset:offset + width])
        offset += width
    return parts


def _forward_cache(p: MlpParams, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Run the net, keeping post-activation values of every layer for backprop."""
    acts = [x]
    a = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        z = a @ w.T + b
        a = z if i == last else np.tanh(z)
        acts.append(a)
    return a, acts


def mlp_forward(p: MlpParams, x) -> list[np.ndarray]:
    """Deterministic feed-forward pass; returns one array per head (logits / raw value)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({p.input_dim},)")
    out, _ = _forward_cache(p, x)
    return _split_heads(p, out)


def mlp_forward_batch(p: MlpParams, xs: np.ndarray) -> list[np.ndarray]:
    """Batched forward pass over rows of ``xs`` (shape (B, input_dim))."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != p.input_dim:
        raise ValueError(f"batch has shape {xs.shape}, expected (B, {p.input_dim})")
    out, _ = _forward_cache(p, xs)
    return _split_heads(p, out)


def mlp_backward(p: MlpParams, x, upstream: list[np.ndarray]) -> Gradients:
    """Exact reverse-mode gradients of sum_h <upstream_h, head_h(x)> w.r.t. parameters."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (p.input_dim,):
        raise ValueError(f"input has shape {x.shape}, expected ({p.input_dim},)")
    if len(upstream) != len(p.heads):
        raise ValueError(f"got {len(upstream)} upstream seeds for {len(p.heads)} heads")
    seeds = []
    for (kind, width), u in zip(p.heads, upstream):
        u = np.asarray(u, dtype=np.float64).reshape(-1)
        if u.shape != (width,):
            raise ValueError(f"upstream seed for {kind} head has shape {u.shape}, expected ({width},)")
        seeds.append(u)
    delta = np.concatenate(seeds)

    _, acts = _forward_cache(p, x)
    grads = Gradients.zeros_like(p)
    for i in range(len(p.weights) - 1, -1, -1):
        grads.weights[i][:] = np.outer(delta, acts[i])
        grads.biases[i][:] = delta
        if i > 0:
            # acts[i] is tanh(z_i) for hidden layers, so 1 - acts^2 is d tanh/dz
            delta = (p.weights[i].T @ delta) * (1.0 - acts[i] ** 2)
    return grads


def mlp_backward_batch(p: MlpParams, xs: np.ndarray, upstream: list[np.ndarray]) -> Gradients:
    """Summed reverse-mode gradients over a batch (rows of xs, rows of each seed)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != p.input_dim:
        raise ValueError(f"batch has shape {xs.shape}, expected (B, {p.input_dim})")
    batch = xs.shape[0]
    seeds = []
    for (kind, width), u in zip(p.heads, upstream):
        u = np.asarray(u, dtype=np.float64).reshape(batch, width)
        seeds.append(u)
    delta = np.concatenate(seeds, axis=1)

    _, acts = _forward_cache(p, xs)
    grads = Gradients.zeros_like(p)
    for i in range(len(p.weights) - 1, -1, -1):
        grads.weights[i][:] = delta.T @ acts[i]
        grads.biases[i][:] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ p.weights[i]) * (1.0 - acts[i] ** 2)
    return grads


# ---------------------------------------------------------------------------
# adaptive-moment updates
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """First/second moment accumulators for apply_update."""

    m_w: list[np.ndarray]
    v_w: list[np.ndarray]
    m_b: list[np.ndarray]
    v_b: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, p: MlpParams, beta1: float = 0.9, beta2: float = 0.999) -> "AdamState":
        return cls(
            [np.zeros_like(w) for w in p.weights],
            [np.zeros_like(w) for w in p.weights],
            [np.zeros_like(b) for b in p.biases],
            [np.zeros_like(b) for b in p.biases],
            beta1=beta1,
            beta2=beta2,
        )


def apply_update(
    p: MlpParams,
    g: Gradients,
    step: float,
    state: AdamState | None = None,
) -> tuple[MlpParams, AdamState]:
    """One adaptive-moment descent step along g; returns new params and state.

    Gradients must be finite (raises FloatingPointError otherwise) and the
    direction is *descent*: callers maximizing an objective pass its negated
    gradient.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for arr in g.weights + g.biases:
        if not np.isfinite(arr).all():
            raise FloatingPointError("non-finite gradient")
    if state is None:
        state = AdamState.zeros_like(p)
    state.t += 1
    b1, b2, eps = state.beta1, state.beta2, state.eps
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    new_w, new_b = [], []
    for w, gw, m, v in zip(p.weights, g.weights, state.m_w, state.v_w):
        m[:] = b1 * m + (1 - b1) * gw
        v[:] = b2 * v + (1 - b2) * gw ** 2
        new_w.append(w - step * (m / corr1) / (np.sqrt(v / corr2) + eps))
    for b, gb, m, v in zip(p.biases, g.biases, state.m_b, state.v_b):
        m[:] = b1 * m + (1 - b1) * gb
        v[:] = b2 * v + (1 - b2) * gb ** 2
        new_b.append(b - step * (m / corr1) / (np.sqrt(v / corr2) + eps))
    out = MlpParams(p.layer_sizes, new_w, new_b, p.heads, p.hidden_activation)
    return out, state


def param_change(a: MlpParams, b: MlpParams) -> float:
    """Max absolute element-wise difference between two congruent parameter sets."""
    return float(np.max(np.abs(a.flat() - b.flat()), initial=0.0))
