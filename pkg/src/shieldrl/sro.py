"""Safety-regularized actor-critic on a Lagrangian constrained base.

The actor is a Gaussian policy conditioned on the identified dynamics
coefficients.  Alongside the usual reward advantage it ascends a bounded
safety regularizer: for each visited (state, action) pair a local
cost-sensitivity score

    q_safe = clamp( - E_eps[ pi(a + eps | s, b) * max(Q_C(s, a + eps, b), 0) ]
                      / (max(V_C(s, b), 0) + eps_num),  -1 + 1e-6,  0 ]

is estimated by Monte Carlo over Gaussian action perturbations and added to
the (normalized) reward advantage with weight ``alpha``.  The score is a
constant in the policy loss -- no gradient flows through the critics or the
density -- so it reweights the policy gradient without reshaping it.  By
construction it vanishes wherever the local cost landscape is zero, which
is what keeps reward optimization unbiased among zero-violation policies.

Cost pressure enters twice: the multiplier ``lambda`` scales the raw
(unnormalized) cost advantage in the surrogate, and is itself adapted from
observed episode costs against the cost limit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .numerics import AdamState, AdamVector, Mlp, adam_step

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class TrainConfig:
    alpha: float = 0.1
    gamma: float = 0.99
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    kl_max: float = 0.02
    policy_lr: float = 3e-4
    critic_lr: float = 1e-3
    lagrangian_lr: float = 0.035
    cost_limit: float = 0.0
    epochs: int = 50
    steps_per_epoch: int = 4000
    minibatch: int = 256
    policy_iters: int = 4
    critic_iters: int = 4
    n_qsafe: int = 10
    sigma_qsafe: float = 0.1  # 0.1 x action half-range
    eps_num: float = 1e-3
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self) -> None:
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if not (0.0 < self.gamma < 1.0):
            raise ValueError("gamma must lie in (0, 1)")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ValueError("gae_lambda must lie in [0, 1]")
        if self.minibatch < 1 or self.steps_per_epoch < 1:
            raise ValueError("minibatch and steps_per_epoch must be positive")
        self.hidden = tuple(int(h) for h in self.hidden)


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian over actions; mean conditioned on (state ++ context)."""

    mean_net: Mlp
    log_std: np.ndarray
    log_std_low: float = -5.0
    log_std_high: float = 1.0

    @classmethod
    def create(
        cls,
        state_dim: int,
        context_dim: int,
        action_dim: int,
        hidden: tuple[int, ...],
        rng: np.random.Generator,
        init_log_std: float = -0.5,
    ) -> "GaussianPolicy":
        net = Mlp.create([state_dim + context_dim, *hidden, action_dim], rng)
        return cls(net, np.full(action_dim, float(init_log_std)))

    @property
    def action_dim(self) -> int:
        return self.mean_net.output_dim

    def clamp_log_std(self) -> None:
        np.clip(self.log_std, self.log_std_low, self.log_std_high, out=self.log_std)

    def std(self) -> np.ndarray:
        return np.exp(self.log_std)

    def mean_batch(self, X: np.ndarray) -> np.ndarray:
        return self.mean_net.forward_batch(X)

    def mean(self, state_vec: np.ndarray, context: np.ndarray) -> np.ndarray:
        return self.mean_net.forward(np.concatenate([state_vec, context]))

    def sample_n(
        self, state_vec: np.ndarray, context: np.ndarray, n: int, rng: np.random.Generator
    ) -> np.ndarray:
        """``n`` i.i.d. samples at one state (one mean evaluation)."""
        mu = self.mean(state_vec, context)
        if not np.all(np.isfinite(mu)):
            raise ValueError(f"policy mean is not finite: {mu}")
        return mu + self.std() * rng.standard_normal((n, self.action_dim))

    def log_prob_batch(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        mu = self.mean_batch(X)
        z = (A - mu) / self.std()
        return (
            -0.5 * np.sum(z**2, axis=1)
            - np.sum(self.log_std)
            - 0.5 * self.action_dim * LOG_2PI
        )

    def log_prob(self, state_vec: np.ndarray, context: np.ndarray, action: np.ndarray) -> float:
        X = np.concatenate([state_vec, context])[None, :]
        return float(self.log_prob_batch(X, np.asarray(action)[None, :])[0])

    def density_batch(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        return np.exp(self.log_prob_batch(X, A))


def act(
    policy: GaussianPolicy,
    state_vec: np.ndarray,
    coeffs_vec: np.ndarray,
    rng: np.random.Generator,
) -> tuple[np.ndarray, float]:
    """Sample an action and return it with its log-density."""
    action = policy.sample_n(state_vec, coeffs_vec, 1, rng)[0]
    logp = policy.log_prob(state_vec, coeffs_vec, action)
    if not np.isfinite(logp):
        raise ValueError(f"non-finite log-probability {logp}")
    return action, logp


# ---------------------------------------------------------------------------
# Critics
# ---------------------------------------------------------------------------


@dataclass
class CriticSet:
    """Reward value net, cost value net, and cost action-value net."""

    v_r: Mlp
    v_c: Mlp
    q_c: Mlp

    @classmethod
    def create(
        cls,
        state_dim: int,
        context_dim: int,
        action_dim: int,
        hidden: tuple[int, ...],
        rng: np.random.Generator,
    ) -> "CriticSet":
        sc = state_dim + context_dim
        return cls(
            v_r=Mlp.create([sc, *hidden, 1], rng),
            v_c=Mlp.create([sc, *hidden, 1], rng),
            q_c=Mlp.create([sc + action_dim, *hidden, 1], rng),
        )

    def v_r_values(self, X: np.ndarray) -> np.ndarray:
        return self.v_r.forward_batch(X)[:, 0]

    def v_c_values(self, X: np.ndarray) -> np.ndarray:
        return self.v_c.forward_batch(X)[:, 0]

    def q_c_values(self, X: np.ndarray, A: np.ndarray) -> np.ndarray:
        return self.q_c.forward_batch(np.hstack([X, A]))[:, 0]


@dataclass
class CriticOptimizer:
    v_r: AdamState
    v_c: AdamState
    q_c: AdamState

    @classmethod
    def create(cls, critics: CriticSet, lr: float) -> "CriticOptimizer":
        return cls(
            AdamState.for_net(critics.v_r, lr),
            AdamState.for_net(critics.v_c, lr),
            AdamState.for_net(critics.q_c, lr),
        )


@dataclass
class PolicyOptimizer:
    mean_net: AdamState
    log_std: AdamVector

    @classmethod
    def create(cls, policy: GaussianPolicy, lr: float) -> "PolicyOptimizer":
        return cls(AdamState.for_net(policy.mean_net, lr), AdamVector(lr))


# ---------------------------------------------------------------------------
# Advantage estimation
# ---------------------------------------------------------------------------


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    gamma: float,
    lam: float,
    bootstrap_value: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation for one (possibly truncated) episode.

    ``bootstrap_value`` is the value estimate of the state after the last
    step (zero for true terminations).  Targets are ``advantages + values``.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if r.shape != v.shape or r.ndim != 1:
        raise ValueError(f"rewards {r.shape} and values {v.shape} must be equal-length 1-D")
    adv = np.zeros_like(r)
    next_value = float(bootstrap_value)
    running = 0.0
    for t in range(r.shape[0] - 1, -1, -1):
        delta = r[t] + gamma * next_value - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = v[t]
    return adv, adv + v


@dataclass
class RolloutBuffer:
    """One training epoch of experience, stored per step with episode spans."""

    states: list = field(default_factory=list)
    contexts: list = field(default_factory=list)
    actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    costs: list = field(default_factory=list)
    v_r: list = field(default_factory=list)
    v_c: list = field(default_factory=list)
    episodes: list = field(default_factory=list)  # (start, end, boot_r, boot_c)
    _episode_start: int = 0
    # populated by finalize()
    adv_r: np.ndarray | None = None
    adv_r_norm: np.ndarray | None = None
    adv_c: np.ndarray | None = None
    ret_r: np.ndarray | None = None
    ret_c: np.ndarray | None = None

    def add(self, state_vec, context, action, log_prob, reward, cost, v_r, v_c) -> None:
        self.states.append(np.asarray(state_vec, dtype=np.float64))
        self.contexts.append(np.asarray(context, dtype=np.float64))
        self.actions.append(np.asarray(action, dtype=np.float64))
        self.log_probs.append(float(log_prob))
        self.rewards.append(float(reward))
        self.costs.append(float(cost))
        self.v_r.append(float(v_r))
        self.v_c.append(float(v_c))

    def end_episode(self, bootstrap_r: float = 0.0, bootstrap_c: float = 0.0) -> None:
        end = len(self.states)
        if end == self._episode_start:
            return
        self.episodes.append((self._episode_start, end, float(bootstrap_r), float(bootstrap_c)))
        self._episode_start = end

    def __len__(self) -> int:
        return len(self.states)

    def finalize(self, gamma: float, lam: float) -> None:
        """Compute advantages/targets; normalizes the reward advantage only."""
        if self._episode_start != len(self.states):
            raise ValueError("open episode: call end_episode before finalize")
        n = len(self.states)
        if n == 0:
            raise ValueError("empty buffer")
        self.adv_r = np.zeros(n)
        self.adv_c = np.zeros(n)
        self.ret_r = np.zeros(n)
        self.ret_c = np.zeros(n)
        rewards = np.asarray(self.rewards)
        costs = np.asarray(self.costs)
        vr = np.asarray(self.v_r)
        vc = np.asarray(self.v_c)
        for start, end, boot_r, boot_c in self.episodes:
            sl = slice(start, end)
            self.adv_r[sl], self.ret_r[sl] = gae(rewards[sl], vr[sl], gamma, lam, boot_r)
            self.adv_c[sl], self.ret_c[sl] = gae(costs[sl], vc[sl], gamma, lam, boot_c)
        # Cost advantages keep their scale: the Lagrange multiplier prices
        # real cost units, so only the reward advantage is standardized.
        std = float(self.adv_r.std())
        self.adv_r_norm = (self.adv_r - self.adv_r.mean()) / (std + 1e-8)

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        X = np.hstack([np.asarray(self.states), np.asarray(self.contexts)])
        A = np.asarray(self.actions)
        return X, A, np.asarray(self.log_probs)

    def episode_cost_totals(self) -> np.ndarray:
        costs = np.asarray(self.costs)
        return np.array([costs[s:e].sum() for s, e, _, _ in self.episodes])


# ---------------------------------------------------------------------------
# Safety regularizer
# ---------------------------------------------------------------------------


def q_safe_batch(
    states: np.ndarray,
    contexts: np.ndarray,
    actions: np.ndarray,
    policy: GaussianPolicy,
    q_c_net: Mlp,
    v_c_values: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized safety score for a batch of (state, action) pairs.

    All inputs are constants for the policy update: the estimate never
    carries gradients.
    """
    if cfg.n_qsafe < 1:
        raise ValueError("n_qsafe must be >= 1")
    n, da = actions.shape
    X = np.hstack([states, contexts])
    eps = cfg.sigma_qsafe * rng.standard_normal((n, cfg.n_qsafe, da))
    perturbed = actions[:, None, :] + eps
    flat_actions = perturbed.reshape(n * cfg.n_qsafe, da)
    flat_X = np.repeat(X, cfg.n_qsafe, axis=0)
    density = policy.density_batch(flat_X, flat_actions).reshape(n, cfg.n_qsafe)
    q_vals = q_c_net.forward_batch(np.hstack([flat_X, flat_actions]))[:, 0]
    q_vals = np.maximum(q_vals.reshape(n, cfg.n_qsafe), 0.0)
    m = np.mean(density * q_vals, axis=1)
    denom = np.maximum(v_c_values, 0.0) + cfg.eps_num
    return np.clip(-m / denom, -1.0 + 1e-6, 0.0)


def q_safe_estimate(
    state_vec: np.ndarray,
    action: np.ndarray,
    coeffs_vec: np.ndarray,
    policy: GaussianPolicy,
    q_c_net: Mlp,
    v_c_value: float,
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> float:
    """Safety score of one (state, action) pair; lies in (-1, 0] by clamping."""
    return float(
        q_safe_batch(
            np.asarray(state_vec, dtype=np.float64)[None, :],
            np.asarray(coeffs_vec, dtype=np.float64)[None, :],
            np.asarray(action, dtype=np.float64)[None, :],
            policy,
            q_c_net,
            np.array([float(v_c_value)]),
            cfg,
            rng,
        )[0]
    )


def augmented_advantage(a_r, q_safe, alpha: float):
    """Reward advantage plus the weighted safety score: ``a_r + alpha * q_safe``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    return a_r + alpha * q_safe


def lagrangian_update(lam: float, episode_cost_mean: float, cost_limit: float, lr: float) -> float:
    """Projected ascent on the multiplier; never returns a negative value."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    return max(0.0, lam + lr * (episode_cost_mean - cost_limit))


# ---------------------------------------------------------------------------
# Updates
# ---------------------------------------------------------------------------


def surrogate_loss_and_grads(
    policy: GaussianPolicy,
    X: np.ndarray,
    A: np.ndarray,
    logp_old: np.ndarray,
    adv: np.ndarray,
    clip_ratio: float,
):
    """Clipped-surrogate loss with analytic gradients.

    Returns ``(loss, mean_net_grads, log_std_grad, kl, clip_frac)`` where
    ``loss`` is the negative surrogate (so minimizing ascends the objective)
    and ``kl`` is the usual ``mean(logp_old - logp_new)`` drift estimate.
    """
    n = X.shape[0]
    mu, cache = policy.mean_net.forward_cached(X)
    std = policy.std()
    z = (A - mu) / std
    logp = -0.5 * np.sum(z**2, axis=1) - np.sum(policy.log_std) - 0.5 * policy.action_dim * LOG_2PI
    ratio = np.exp(logp - logp_old)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * adv
    objective = np.minimum(unclipped, clipped)
    loss = -float(np.mean(objective))
    # Gradient flows only where the unclipped branch attains the minimum.
    active = unclipped <= clipped
    dloss_dlogp = -(ratio * adv * active) / n
    upstream_mu = dloss_dlogp[:, None] * (z / std)
    grads, _ = policy.mean_net.backward_cached(cache, upstream_mu)
    grad_log_std = np.sum(dloss_dlogp[:, None] * (z**2 - 1.0), axis=0)
    kl = float(np.mean(logp_old - logp))
    clip_frac = float(np.mean(np.abs(ratio - 1.0) > clip_ratio))
    return loss, grads, grad_log_std, kl, clip_frac


def policy_update(
    buffer: RolloutBuffer,
    policy: GaussianPolicy,
    critics: CriticSet,
    lam: float,
    cfg: TrainConfig,
    rng: np.random.Generator,
    opt: PolicyOptimizer,
    sro_enabled: bool = True,
) -> dict:
    """Minibatch clipped-surrogate ascent on ``adv_r_norm + alpha*q_safe - lam*adv_c``.

    Early-stops once the estimated KL drift exceeds ``kl_max``.  A non-finite
    loss or gradient aborts the whole update and restores the incoming
    parameters.  The safety scores are computed once per update (with the
    current critics) and enter as constants; with ``alpha == 0`` or SRO
    disabled they are identically zero and no perturbation noise is drawn,
    so both configurations follow the identical plain-Lagrangian path.
    """
    X, A, logp_old = buffer.stacked()
    if sro_enabled and cfg.alpha > 0:
        v_c_vals = critics.v_c_values(X)
        q_safe = q_safe_batch(
            np.asarray(buffer.states),
            np.asarray(buffer.contexts),
            A,
            policy,
            critics.q_c,
            v_c_vals,
            cfg,
            rng,
        )
    else:
        q_safe = np.zeros(len(buffer))
    adv = augmented_advantage(buffer.adv_r_norm, q_safe, cfg.alpha) - lam * buffer.adv_c

    snapshot = (policy.mean_net.copy(), policy.log_std.copy())
    n = X.shape[0]
    diag = {
        "mean_q_safe": float(q_safe.mean()),
        "kl": 0.0,
        "clip_fraction": 0.0,
        "policy_loss": 0.0,
        "early_stop": False,
        "aborted": False,
        "minibatches": 0,
    }
    done = False
    for _ in range(cfg.policy_iters):
        perm = rng.permutation(n)
        for lo in range(0, n, cfg.minibatch):
            idx = perm[lo : lo + cfg.minibatch]
            loss, grads, grad_ls, kl, clip_frac = surrogate_loss_and_grads(
                policy, X[idx], A[idx], logp_old[idx], adv[idx], cfg.clip_ratio
            )
            diag["kl"] = kl
            if kl > cfg.kl_max:
                diag["early_stop"] = True
                done = True
                break
            if not np.isfinite(loss) or not grads.finite() or not np.all(np.isfinite(grad_ls)):
                policy.mean_net = snapshot[0]
                policy.log_std = snapshot[1]
                diag["aborted"] = True
                return diag
            adam_step(policy.mean_net, opt.mean_net, grads)
            opt.log_std.apply(policy.log_std, grad_ls)
            policy.clamp_log_std()
            diag["policy_loss"] = loss
            diag["clip_fraction"] = clip_frac
            diag["minibatches"] += 1
        if done:
            break
    return diag


def critic_update(
    buffer: RolloutBuffer,
    critics: CriticSet,
    cfg: TrainConfig,
    rng: np.random.Generator,
    opt: CriticOptimizer,
) -> dict:
    """One shuffled pass of Adam on the three quadratic critic losses.

    The cost Q-critic regresses onto ``stopgrad(V_C(s)) + A_C``; the cost
    value net's parameters never receive gradient from that loss.
    """
    X, A, _ = buffer.stacked()
    n = X.shape[0]
    losses = {"v_r": 0.0, "v_c": 0.0, "q_c": 0.0}
    batches = 0
    perm = rng.permutation(n)
    for lo in range(0, n, cfg.minibatch):
        idx = perm[lo : lo + cfg.minibatch]
        m = idx.shape[0]
        losses["v_r"] += _value_step(critics.v_r, opt.v_r, X[idx], buffer.ret_r[idx], m)
        losses["v_c"] += _value_step(critics.v_c, opt.v_c, X[idx], buffer.ret_c[idx], m)
        # Fresh cost-value predictions, used as constants in the Q target.
        v_sg = critics.v_c.forward_batch(X[idx])[:, 0]
        target = v_sg + buffer.adv_c[idx]
        losses["q_c"] += _value_step(
            critics.q_c, opt.q_c, np.hstack([X[idx], A[idx]]), target, m
        )
        batches += 1
    out = {k: v / batches for k, v in losses.items()}
    if not all(np.isfinite(v) for v in out.values()):
        raise ValueError(f"non-finite critic loss: {out}")
    return out


def _value_step(net: Mlp, opt: AdamState, X: np.ndarray, targets: np.ndarray, m: int) -> float:
    pred, cache = net.forward_cached(X)
    err = pred[:, 0] - targets
    loss = float(np.mean(err**2))
    grads, _ = net.backward_cached(cache, (2.0 / m) * err[:, None])
    adam_step(net, opt, grads)
    return loss


# ---------------------------------------------------------------------------
# Checkpoint (de)serialization helpers
# ---------------------------------------------------------------------------


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "layer_sizes": list(net.layer_sizes),
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
    }


def mlp_from_dict(data: dict) -> Mlp:
    return Mlp(
        list(data["layer_sizes"]),
        [np.asarray(w, dtype=np.float64) for w in data["weights"]],
        [np.asarray(b, dtype=np.float64) for b in data["biases"]],
    )


def adam_to_dict(state: AdamState) -> dict:
    return {
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "step": state.step,
        "m_w": [m.tolist() for m in state.m_w],
        "v_w": [v.tolist() for v in state.v_w],
        "m_b": [m.tolist() for m in state.m_b],
        "v_b": [v.tolist() for v in state.v_b],
    }


def adam_from_dict(data: dict) -> AdamState:
    return AdamState(
        lr=data["lr"],
        beta1=data["beta1"],
        beta2=data["beta2"],
        eps=data["eps"],
        step=data["step"],
        m_w=[np.asarray(m, dtype=np.float64) for m in data["m_w"]],
        v_w=[np.asarray(v, dtype=np.float64) for v in data["v_w"]],
        m_b=[np.asarray(m, dtype=np.float64) for m in data["m_b"]],
        v_b=[np.asarray(v, dtype=np.float64) for v in data["v_b"]],
    )


def adam_vector_to_dict(state: AdamVector) -> dict:
    return {
        "lr": state.lr,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "step": state.step,
        "m": None if state.m is None else state.m.tolist(),
        "v": None if state.v is None else state.v.tolist(),
    }


def adam_vector_from_dict(data: dict) -> AdamVector:
    return AdamVector(
        lr=data["lr"],
        beta1=data["beta1"],
        beta2=data["beta2"],
        eps=data["eps"],
        step=data["step"],
        m=None if data["m"] is None else np.asarray(data["m"], dtype=np.float64),
        v=None if data["v"] is None else np.asarray(data["v"], dtype=np.float64),
    )
