"""Independent reference computations used to check the SAVI machinery.

Nothing here touches the adjoint sweeps.  Hypergradients are obtained by
finite differences of the map ``y_i -> L(y_i, descendants re-optimized)``,
where the inner re-optimization is the very same forward schedule the
algorithms run; only the outer derivative is numerical.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .allocation import brute_force_optimal_lambda
from .errors import ConfigInvalid, GuardExceeded, SingularSystem
from .model import LatentState, _values
from .savi import SaviConfig, inner_forward

MAX_FD_DIM = 16


@dataclass
class OracleConfig:
    fd_step: float = 1e-5
    scheme: str = "central"
    convergence_tol: float = 1e-9
    inner: str = "schedule"
    max_inner_iters: int = 100_000

    def __post_init__(self):
        if not self.fd_step > 0:
            raise ConfigInvalid("fd_step must be positive")
        if self.scheme not in ("forward", "central"):
            raise ConfigInvalid("scheme must be 'forward' or 'central'")
        if self.inner not in ("schedule", "converged"):
            raise ConfigInvalid("inner must be 'schedule' or 'converged'")


def _converged_descendants(model, ys, i, savi_cfg, oracle_cfg):
    """Re-initialize the descendants of ``i`` and run joint gradient ascent
    on them until the gradient norm drops below the tolerance."""
    g = model.graph
    desc = g.descendants(i)
    ys = list(ys)
    for d in desc:
        ys[d] = model.favi(d, ys)
    for _ in range(oracle_cfg.max_inner_iters):
        grad = model.grad_all(ys)
        norm = np.sqrt(sum(float(grad[d] @ grad[d]) for d in desc))
        if norm < oracle_cfg.convergence_tol:
            break
        for d in desc:
            ys[d] = ys[d] + savi_cfg.learning_rate * grad[d]
    return ys


def reoptimized_objective(model, state, i, value, savi_cfg, oracle_cfg=None):
    """``L`` after setting ``y_i = value`` and re-optimizing the descendants."""
    oracle_cfg = OracleConfig() if oracle_cfg is None else oracle_cfg
    ys = list(_values(state))
    ys[i] = np.asarray(value, dtype=float)
    if oracle_cfg.inner == "schedule":
        ys = inner_forward(model, ys, i, savi_cfg)
    else:
        ys = _converged_descendants(model, ys, i, savi_cfg, oracle_cfg)
    return model.total(ys)


def unrolled_hypergradient(model, state, i, savi_cfg: SaviConfig, oracle_cfg=None, value=None):
    """Coordinate-wise finite-difference hypergradient at ``y_i = value``
    (the current ``state`` value by default)."""
    oracle_cfg = OracleConfig() if oracle_cfg is None else oracle_cfg
    ys = _values(state)
    y0 = np.array(ys[i] if value is None else value, dtype=float)
    if y0.size > MAX_FD_DIM:
        raise GuardExceeded(f"coordinate-wise differences capped at d <= {MAX_FD_DIM}, got {y0.size}")
    h = oracle_cfg.fd_step

    def f(v):
        return reoptimized_objective(model, ys, i, v, savi_cfg, oracle_cfg)

    base = f(y0) if oracle_cfg.scheme == "forward" else None
    grad = np.empty_like(y0)
    for c in range(y0.size):
        e = np.zeros_like(y0)
        e[c] = h
        if oracle_cfg.scheme == "central":
            grad[c] = (f(y0 + e) - f(y0 - e)) / (2 * h)
        else:
            grad[c] = (f(y0 + e) - base) / h
    return grad


def quadratic_global_optimum(model) -> LatentState:
    """Exact maximizer of a linear-mode (hence quadratic) objective.

    The stacked Hessian is assembled column by column from differences of the
    affine gradient, then ``H y = -grad(0)`` is solved.
    """
    if not getattr(model, "linear", False):
        raise ConfigInvalid("quadratic_global_optimum needs a model in linear mode")
    g = model.graph
    nodes = list(range(1, g.node_count))
    dims = [g.latent_dims[n] for n in nodes]
    offsets = np.concatenate([[0], np.cumsum(dims)])
    total = int(offsets[-1])

    def unstack(vec):
        ys = [np.zeros(0)]
        for k in range(len(nodes)):
            ys.append(vec[offsets[k] : offsets[k + 1]].copy())
        return ys

    def stacked_grad(vec):
        return np.concatenate(model.grad_all(unstack(vec))[1:])

    zero = np.zeros(total)
    g0 = stacked_grad(zero)
    hess = np.empty((total, total))
    for c in range(total):
        e = np.zeros(total)
        e[c] = 1.0
        hess[:, c] = stacked_grad(e) - g0
    hess = 0.5 * (hess + hess.T)
    if np.linalg.cond(hess) > 1e12:
        raise SingularSystem("objective Hessian is singular or nearly so")
    sol = np.linalg.solve(hess, -g0)
    # one step of iterative refinement
    sol = sol + np.linalg.solve(hess, -stacked_grad(sol))
    return LatentState.from_values(g, unstack(sol))


exhaustive_lambda_search = brute_force_optimal_lambda
