"""Per-agent specialized learning.

The local objective is the data loss scaled by alpha plus, for every
ancestor group level k, a proximal pull toward that level's generalized
model, weighted by beta / N_k. Dividing by the member count N_k makes
knowledge from larger (higher-level, more generalized) groups count less,
so agents stay primarily anchored to their closest group.

Solved by plain mini-batch SGD; the proximal gradient is computed on the
full parameter vector at every step.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DivergenceError
from .models import check_params, loss, loss_gradient


@dataclass(frozen=True)
class LocalSolverConfig:
    epochs: int = 2
    batch_size: int = 32
    learning_rate: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("need epochs >= 1 and batch_size >= 1")
        if not (0 < self.learning_rate < np.inf):
            raise ConfigurationError("learning_rate must be positive and finite")


def _check_context(ancestors):
    prev = 0
    for gmp, count in ancestors:
        if count < prev:
            raise ConfigurationError("ancestor member counts must be nondecreasing")
        prev = count


def objective_value(spec, w, shard, ancestors, alpha, beta):
    """alpha * data loss + beta * sum_k ||w - gmp_k||^2 / N_k."""
    w = check_params(spec, w)
    _check_context(ancestors)
    prox = sum(float(np.sum((w - check_params(spec, g)) ** 2)) / n for g, n in ancestors)
    return alpha * loss(spec, w, shard) + beta * prox


def objective_gradient(spec, w, shard, ancestors, alpha, beta):
    w = check_params(spec, w)
    _check_context(ancestors)
    grad = alpha * loss_gradient(spec, w, shard)
    for g, n in ancestors:
        grad = grad + (2.0 * beta / n) * (w - check_params(spec, g))
    return grad


def _prox_gradient(spec, w, ancestors, beta):
    grad = np.zeros_like(w)
    for g, n in ancestors:
        grad += (2.0 * beta / n) * (w - check_params(spec, g))
    return grad


def local_update(spec, start, shard, ancestors, alpha, beta, solver, agent_id, round_seed):
    """Run `epochs` of mini-batch SGD on the proximal objective.

    Shuffling is seeded by (agent_id, round_seed), so the result is a
    deterministic function of its arguments. Aborts if the objective ever
    exceeds 1e6 times its starting value.
    """
    w = check_params(spec, start).copy()
    _check_context(ancestors)
    rng = np.random.default_rng([abs(int(agent_id)), abs(int(round_seed))])
    n = len(shard)
    start_obj = objective_value(spec, w, shard, ancestors, alpha, beta)
    guard = max(1e6 * abs(start_obj), 1e6)
    for _ in range(solver.epochs):
        order = rng.permutation(n)
        for lo in range(0, n, solver.batch_size):
            batch = shard.subset(order[lo : lo + solver.batch_size])
            grad = _prox_gradient(spec, w, ancestors, beta)
            if alpha != 0.0:
                grad = grad + alpha * loss_gradient(spec, w, batch)
            w -= solver.learning_rate * grad
        cur = objective_value(spec, w, shard, ancestors, alpha, beta)
        if not np.isfinite(cur) or cur > guard:
            raise DivergenceError(agent_id, solver.learning_rate, start_obj, cur)
    return w
