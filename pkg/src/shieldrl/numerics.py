"""Dense networks, hand-rolled backprop, Adam, and ridge-regularized solves.

Every learned component in the package (policy, critics, basis functions)
runs on the kernels in this module.  They are written directly against
numpy so that gradients stay small, inspectable, and checkable against
finite differences -- no autodiff framework is involved.

Conventions:
  * An ``Mlp`` applies tanh after every hidden layer and leaves the output
    layer linear.
  * Batches are row-major: ``X`` has shape ``(batch, input_dim)``.
  * ``mlp_backward`` returns gradients of ``sum(upstream * output)`` with
    respect to every weight and bias, i.e. upstream is ``dL/dy``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeMismatchError(ValueError):
    """An input does not match the dimensions a kernel was built for."""


class SingularMatrixError(ValueError):
    """A linear system is singular (or too ill-conditioned to trust)."""


def _as_batch(x: np.ndarray, dim: int, what: str) -> tuple[np.ndarray, bool]:
    """Promote a vector to a single-row batch, validating the last axis."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise ShapeMismatchError(f"{what}: expected length {dim}, got {arr.shape[0]}")
        return arr[None, :], True
    if arr.ndim == 2:
        if arr.shape[1] != dim:
            raise ShapeMismatchError(f"{what}: expected width {dim}, got {arr.shape[1]}")
        return arr, False
    raise ShapeMismatchError(f"{what}: expected 1-D or 2-D array, got ndim={arr.ndim}")


@dataclass
class Gradients:
    """Per-parameter gradients for one ``Mlp`` (same shapes as the net)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def scale(self, factor: float) -> "Gradients":
        return Gradients([w * factor for w in self.weights], [b * factor for b in self.biases])

    def add_(self, other: "Gradients") -> None:
        for mine, theirs in zip(self.weights, other.weights):
            mine += theirs
        for mine, theirs in zip(self.biases, other.biases):
            mine += theirs

    def finite(self) -> bool:
        return all(np.all(np.isfinite(w)) for w in self.weights) and all(
            np.all(np.isfinite(b)) for b in self.biases
        )


@dataclass
class Mlp:
    """Fully connected network: tanh hidden layers, linear output layer.

    ``weights[i]`` has shape ``(layer_sizes[i + 1], layer_sizes[i])`` and is
    initialized uniformly in ``+-1/sqrt(fan_in)``; biases start at zero.
    """

    layer_sizes: list[int]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def create(cls, layer_sizes: list[int], rng: np.random.Generator) -> "Mlp":
        if len(layer_sizes) < 2 or any(s <= 0 for s in layer_sizes):
            raise ValueError(f"layer_sizes must list >=2 positive sizes, got {layer_sizes}")
        weights, biases = [], []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(list(layer_sizes), weights, biases)

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "Mlp":
        return Mlp(list(self.layer_sizes), [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def parameter_count(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    # -- forward -------------------------------------------------------

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Evaluate one input vector; returns a vector of ``output_dim``."""
        batch, single = _as_batch(x, self.input_dim, "Mlp.forward input")
        out = self.forward_batch(batch)
        return out[0] if single else out

    def forward_batch(self, X: np.ndarray) -> np.ndarray:
        A, _ = _as_batch(X, self.input_dim, "Mlp.forward input")
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            Z = A @ W.T + b
            A = Z if i == last else np.tanh(Z)
        return A

    def forward_cached(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Forward pass keeping per-layer activations for ``backward_cached``."""
        A, _ = _as_batch(X, self.input_dim, "Mlp.forward input")
        cache = [A]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            Z = A @ W.T + b
            A = Z if i == last else np.tanh(Z)
            cache.append(A)
        return A, cache

    # -- backward ------------------------------------------------------

    def backward_cached(
        self, cache: list[np.ndarray], upstream: np.ndarray
    ) -> tuple[Gradients, np.ndarray]:
        """Backprop ``upstream = dL/dY`` through cached activations.

        Returns gradients summed over the batch plus ``dL/dX``.
        """
        G = np.asarray(upstream, dtype=np.float64)
        if G.shape != cache[-1].shape:
            raise ShapeMismatchError(
                f"upstream shape {G.shape} does not match output shape {cache[-1].shape}"
            )
        dws: list[np.ndarray] = [None] * len(self.weights)  # type: ignore[list-item]
        dbs: list[np.ndarray] = [None] * len(self.biases)  # type: ignore[list-item]
        delta = G
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                # cache[i + 1] holds tanh activations for hidden layers.
                delta = delta * (1.0 - cache[i + 1] ** 2)
            dws[i] = delta.T @ cache[i]
            dbs[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i]
        return Gradients(dws, dbs), delta

    def zero_gradients(self) -> Gradients:
        return Gradients([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])


def mlp_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    return net.forward(x)


def mlp_backward(net: Mlp, x: np.ndarray, upstream_grad: np.ndarray) -> Gradients:
    """Gradients of ``sum(upstream_grad * net(x))`` w.r.t. all parameters."""
    batch, single = _as_batch(x, net.input_dim, "mlp_backward input")
    up = np.asarray(upstream_grad, dtype=np.float64)
    if single and up.ndim == 1:
        up = up[None, :]
    _, cache = net.forward_cached(batch)
    grads, _ = net.backward_cached(cache, up)
    return grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam moment estimates for one ``Mlp`` (updates applied in place)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m_w: list[np.ndarray] = field(default_factory=list)
    v_w: list[np.ndarray] = field(default_factory=list)
    m_b: list[np.ndarray] = field(default_factory=list)
    v_b: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float) -> "AdamState":
        return cls(
            lr=lr,
            m_w=[np.zeros_like(w) for w in net.weights],
            v_w=[np.zeros_like(w) for w in net.weights],
            m_b=[np.zeros_like(b) for b in net.biases],
            v_b=[np.zeros_like(b) for b in net.biases],
        )


def adam_step(net: Mlp, state: AdamState, grads: Gradients) -> None:
    """One Adam update on ``net`` in place.

    With an all-zero gradient the parameters are bit-identical afterwards;
    only the step counter advances.
    """
    state.step += 1
    bc1 = 1.0 - state.beta1**state.step
    bc2 = 1.0 - state.beta2**state.step
    for p, g, m, v in zip(net.weights, grads.weights, state.m_w, state.v_w):
        _adam_update(p, g, m, v, state, bc1, bc2)
    for p, g, m, v in zip(net.biases, grads.biases, state.m_b, state.v_b):
        _adam_update(p, g, m, v, state, bc1, bc2)


def _adam_update(p, g, m, v, state: AdamState, bc1: float, bc2: float) -> None:
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * np.square(g)
    p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass
class AdamVector:
    """Adam for a single bare parameter vector (e.g. a log-std vector)."""

    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    def apply(self, param: np.ndarray, grad: np.ndarray) -> None:
        if self.m is None:
            self.m = np.zeros_like(param)
            self.v = np.zeros_like(param)
        self.step += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * np.square(grad)
        m_hat = self.m / (1.0 - self.beta1**self.step)
        v_hat = self.v / (1.0 - self.beta2**self.step)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ---------------------------------------------------------------------------
# Linear solves
# ---------------------------------------------------------------------------


def solve_ridge(G: np.ndarray, y: np.ndarray, ridge: float = 1e-6) -> np.ndarray:
    """Solve ``(G + ridge * I) x = y`` for symmetric ``G``.

    Tries a Cholesky factorization first (the Gram matrices this is used on
    are positive semidefinite, so the ridge makes them positive definite);
    falls back to partially pivoted Gaussian elimination when the
    factorization fails.  The solution is residual-checked so a numerically
    meaningless answer raises ``SingularMatrixError`` instead of leaking.
    """
    G = np.asarray(G, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise ShapeMismatchError(f"G must be square, got shape {G.shape}")
    if y.shape[0] != G.shape[0]:
        raise ShapeMismatchError(f"y length {y.shape[0]} does not match G size {G.shape[0]}")
    if ridge < 0:
        raise ValueError(f"ridge must be >= 0, got {ridge}")
    A = G + ridge * np.eye(G.shape[0])
    try:
        L = np.linalg.cholesky(A)
        x = _cholesky_solve(L, y)
    except np.linalg.LinAlgError:
        try:
            x = np.linalg.solve(A, y)
        except np.linalg.LinAlgError as exc:
            raise SingularMatrixError(f"system is singular (ridge={ridge})") from exc
    residual = np.linalg.norm(A @ x - y)
    if not np.isfinite(residual) or residual > 1e-8 * (np.linalg.norm(y) + 1.0):
        raise SingularMatrixError(
            f"solve residual {residual:.3e} exceeds tolerance; system too ill-conditioned"
        )
    return x


def _cholesky_solve(L: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Two triangular substitutions for ``L L^T x = y``."""
    n = L.shape[0]
    z = np.zeros(n)
    for i in range(n):
        z[i] = (y[i] - L[i, :i] @ z[:i]) / L[i, i]
    x = np.zeros(n)
    for i in range(n - 1, -1, -1):
        x[i] = (z[i] - L[i + 1 :, i] @ x[i + 1 :]) / L[i, i]
    return x
