"""Behaviour-cloning baseline: the same policy network regressed onto expert actions."""

from __future__ import annotations

import logging
import time

import numpy as np

from .. import rng as _rng
from ..nn import Adam, Tape
from ..nn import autodiff as ad
from .config import TrainerConfig
from .networks import Obs, PolicyNet, conv_stack, normalize_action

log = logging.getLogger(__name__)


def records_to_arrays(records) -> tuple[Obs, np.ndarray]:
    obs = Obs(np.stack([r.image for r in records]).astype(float),
              np.stack([r.velocity for r in records]),
              np.stack([r.attitude for r in records]),
              np.stack([r.goal_vec for r in records]))
    actions = np.stack([np.asarray(r.action, float).reshape(-1) for r in records])
    return obs, actions


def bc_loss(policy: PolicyNet, obs: Obs, actions) -> ad.Tensor:
    """MSE between the squashed mean action and the expert action, both in [-1, 1] units."""
    mean, _ = policy.distribution(obs)
    diff = ad.tanh(mean) - normalize_action(actions)
    return (diff * diff).mean()


def bc_train(dataset, cfg: TrainerConfig = TrainerConfig(), epochs: int = 10, lr: float = 3e-4,
             batch_size: int | None = None, seed: int = 0, optimizer: str = "adam",
             time_budget: float | None = None):
    """Fit a :class:`PolicyNet` to expert actions.

    ``dataset`` is a list of expert records or an ``(Obs, actions)`` pair.
    ``batch_size=None`` means full-batch steps. With ``optimizer="sgd"`` plain
    gradient descent is used. Returns ``(policy, per-epoch mean losses)``.
    """
    obs, actions = records_to_arrays(dataset) if not isinstance(dataset, tuple) else dataset
    n = len(actions)
    if n == 0:
        raise ValueError("behaviour cloning needs at least one record")
    conv = conv_stack(cfg, "bc.conv", seed * 1000 + 11)
    policy = PolicyNet(cfg, conv, "bc", seed * 1000 + 37, block_encoder=False)
    params = policy.parameters()
    opt = Adam(params, lr) if optimizer == "adam" else None
    gen = _rng.stream(seed, "bc")
    bs = n if batch_size is None else min(batch_size, n)
    history = []
    t0 = time.perf_counter()
    for epoch in range(epochs):
        order = gen.permutation(n) if bs < n else np.arange(n)
        losses = []
        for start in range(0, n, bs):
            idx = order[start : start + bs]
            sub = Obs(*(x[idx] for x in obs))
            tape = Tape()
            with tape:
                loss = bc_loss(policy, sub, actions[idx])
            grads = tape.backward(loss)
            if opt is not None:
                opt.step(grads)
            else:
                for p in params:
                    if p.name in grads:
                        p.data -= lr * grads[p.name]
            losses.append(float(loss.data))
        history.append(float(np.mean(losses)))
        log.info("bc epoch %d loss %.6f", epoch, history[-1])
        if time_budget is not None and time.perf_counter() - t0 > time_budget:
            break
    return policy, history
