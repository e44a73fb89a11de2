"""PPO: clipped-surrogate policy updates with Adam, all in numpy.

The loss (to be minimized) is

    -E[min(rho * A, clip(rho, 1-eps, 1+eps) * A)]
    + value_coef * E[(V - returns)^2]
    - entropy_coef * H(pre-squash Gaussian)

with rho the probability ratio of the stored pre-squash action. Gradients
are hand-derived through the actor/critic MLPs; a finite-difference check
in the tests is the correctness gate. A non-finite loss aborts the update
and returns the previous parameters unchanged.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .gae import GaeConfig
from .mlp import mlp_backward, mlp_forward
from .policy import (
    LOG_STD_MAX,
    LOG_STD_MIN,
    PolicyParams,
    gaussian_entropy,
    squash_correction,
)

logger = logging.getLogger(__name__)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(eq=False)
class RolloutBatch:
    """Flat training batch; actions are the stored pre-squash samples."""

    observations: np.ndarray   # (N, D)
    actions: np.ndarray        # (N, A)
    log_probs: np.ndarray      # (N,) taken under the collecting policy
    advantages: np.ndarray     # (N,) raw GAE values
    returns: np.ndarray        # (N,)

    def __len__(self) -> int:
        return self.observations.shape[0]

    def slice(self, idx: np.ndarray) -> "RolloutBatch":
        return RolloutBatch(
            self.observations[idx],
            self.actions[idx],
            self.log_probs[idx],
            self.advantages[idx],
            self.returns[idx],
        )


@dataclass(eq=False)
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params: PolicyParams) -> "AdamState":
        arrs = params.flat_arrays()
        return cls(m=[np.zeros_like(a) for a in arrs], v=[np.zeros_like(a) for a in arrs])


def adam_step(
    arrays: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One in-place Adam step over parallel lists of arrays."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        a -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def ppo_loss_and_grad(
    params: PolicyParams, batch: RolloutBatch, cfg: GaeConfig
) -> tuple[float, list[np.ndarray], dict]:
    """Total PPO loss, gradients for every trainable array, and diagnostics.

    Advantages are used exactly as given (normalize them beforehand).
    """
    obs = batch.observations
    u = batch.actions
    n = obs.shape[0]

    mean, actor_caches = mlp_forward(params.actor, obs)
    log_std = np.clip(params.log_std, LOG_STD_MIN, LOG_STD_MAX)
    std = np.exp(log_std)
    z = (u - mean) / std
    logp = (-0.5 * z * z - log_std - 0.5 * _LOG_2PI).sum(axis=1) - squash_correction(u)

    log_ratio = logp - batch.log_probs
    ratio = np.exp(log_ratio)
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    t1 = ratio * batch.advantages
    t2 = clipped * batch.advantages
    take1 = t1 <= t2
    pg_loss = -np.where(take1, t1, t2).mean()

    values, critic_caches = mlp_forward(params.critic, obs)
    v = values[:, 0]
    v_err = v - batch.returns
    v_loss = float((v_err * v_err).mean())

    entropy = gaussian_entropy(log_std)
    loss = float(pg_loss + cfg.value_coef * v_loss - cfg.entropy_coef * entropy)

    # d loss / d logp: only the unclipped branch propagates.
    dlogp = np.where(take1, -t1, 0.0) / n
    # logp depends on mean via -0.5*z^2: d logp/d mean = z/std.
    dmean = dlogp[:, None] * (z / std)
    actor_grads, _ = mlp_backward(params.actor, actor_caches, dmean)
    # d logp/d log_std = z^2 - 1 per dim; entropy contributes -entropy_coef.
    dlog_std = (dlogp[:, None] * (z * z - 1.0)).sum(axis=0) - cfg.entropy_coef
    # The clamp blocks gradient where it is active.
    dlog_std = np.where(
        (params.log_std > LOG_STD_MIN) & (params.log_std < LOG_STD_MAX), dlog_std, 0.0
    )
    dv = (cfg.value_coef * 2.0 / n) * v_err
    critic_grads, _ = mlp_backward(params.critic, critic_caches, dv[:, None])

    grads: list[np.ndarray] = []
    for dw, db in actor_grads:
        grads.extend((dw, db))
    grads.append(dlog_std)
    for dw, db in critic_grads:
        grads.extend((dw, db))

    diag = {
        "loss": loss,
        "pg_loss": float(pg_loss),
        "value_loss": v_loss,
        "entropy": entropy,
        "mean_ratio": float(ratio.mean()),
        "clip_fraction": float((np.abs(ratio - 1.0) > cfg.clip_eps).mean()),
        "approx_kl": float(((ratio - 1.0) - log_ratio).mean()),
    }
    return loss, grads, diag


def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
    """Zero-mean, unit-variance scaling applied once per update batch."""
    return (advantages - advantages.mean()) / (advantages.std() + 1e-8)


def ppo_update(
    params: PolicyParams,
    batch: RolloutBatch,
    cfg: GaeConfig,
    opt_state: AdamState | None = None,
    rng: np.random.Generator | None = None,
) -> tuple[PolicyParams, AdamState, dict]:
    """Run cfg.epochs of shuffled-minibatch PPO on a copy of params.

    Returns (new params, optimizer state, averaged diagnostics). If any
    minibatch produces a non-finite loss the whole update is abandoned and
    the input parameters are returned untouched.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    new = params.copy()
    if opt_state is None:
        opt_state = AdamState.zeros_like(new)
    saved_opt = AdamState(m=[a.copy() for a in opt_state.m],
                          v=[a.copy() for a in opt_state.v], t=opt_state.t)
    arrays = new.flat_arrays()

    batch = RolloutBatch(
        batch.observations,
        batch.actions,
        batch.log_probs,
        normalize_advantages(batch.advantages),
        batch.returns,
    )

    n = len(batch)
    mb = min(cfg.minibatch_size, n)
    diags: list[dict] = []
    for _epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, mb):
            idx = order[start : start + mb]
            loss, grads, diag = ppo_loss_and_grad(new, batch.slice(idx), cfg)
            if not np.isfinite(loss):
                logger.warning("non-finite PPO loss; abandoning update")
                diag["aborted"] = True
                return params, saved_opt, diag
            adam_step(arrays, grads, opt_state, cfg.learning_rate)
            diags.append(diag)

    out = {k: float(np.mean([d[k] for d in diags])) for k in diags[0]}
    out["aborted"] = False
    return new, opt_state, out
