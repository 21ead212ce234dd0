"""Bit allocation on the surrogate GoP model.

The GoP is encoded frame by frame: frame ``i`` starts from its amortized
initialization (given already-encoded parents) and minimizes
``R_i + lambda_i . D_i`` with its parents frozen.  Choosing the per-frame,
per-pixel multipliers ``lambda_i`` is the allocation problem.  This module
provides

* the rate / quality dependency matrices ``dR_j/dR_i`` and ``dD_j/dD_i``
  obtained from model Jacobians and an elementwise reciprocal,
* the equivalent multiplier map ``lambda'`` built from them,
* the classic lambda-domain rule ``lambda_i = omega_i * lambda0``,
* an exhaustive grid search for the optimal map on tiny problems, and
* an online-encoder-update baseline that tunes per-frame encoder matrices.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigInvalid,
    DegenerateGradient,
    DimensionMismatch,
    DivergenceDetected,
    GuardExceeded,
    NonPositiveLambda,
)
from .model import LatentState, _act, _values

EPS_DEN = 1e-8


@dataclass
class DependencyMatrices:
    """Dependencies of later frames on frame ``source``.

    ``rate_dep[j]`` is the scalar ``dR_j/dR_i`` and ``quality_dep[j]`` the
    ``m x m`` matrix ``dD_j/dD_i``, for every frame ``j`` after ``i`` in
    topological order.
    """

    source: int
    rate_dep: dict = field(default_factory=dict)
    quality_dep: dict = field(default_factory=dict)

    @property
    def rate_sum(self) -> float:
        return float(sum(self.rate_dep.values()))

    def quality_sum(self, m) -> np.ndarray:
        out = np.zeros((m, m))
        for q in self.quality_dep.values():
            out = out + q
        return out

    def to_dict(self):
        return {
            "source": self.source,
            "rate_dep": {str(j): float(v) for j, v in self.rate_dep.items()},
            "quality_dep": {str(j): np.asarray(q).tolist() for j, q in self.quality_dep.items()},
        }


@dataclass
class LambdaMap:
    """Per-frame, per-pixel multipliers; row ``i - 1`` belongs to frame ``i``."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))

    @classmethod
    def uniform(cls, lambda0, frame_count):
        return cls(np.tile(np.asarray(lambda0, dtype=float), (frame_count, 1)))

    def frame(self, i):
        return self.values[i - 1]

    @property
    def is_positive(self) -> bool:
        return bool(np.all(self.values > 0))

    def require_positive(self):
        if not self.is_positive:
            raise ValueError("lambda map entries must be strictly positive")


@dataclass
class OmegaSchedule:
    omega: np.ndarray

    def __post_init__(self):
        self.omega = np.atleast_1d(np.asarray(self.omega, dtype=float))
        if np.any(self.omega <= 0):
            raise ValueError("omega entries must be strictly positive")


@dataclass
class AllocationReport:
    """Outcome of encoding a GoP under some allocation."""

    lambda_map: LambdaMap
    rate: np.ndarray
    distortion: np.ndarray
    gop_cost: float
    lambda0: np.ndarray
    state: LatentState | None = None
    dependency: list = field(default_factory=list)
    grid_index: tuple | None = None

    @classmethod
    def from_state(cls, model, state, lambda_map, dependency=()):
        br = model.objective(state)
        cost = float(br.rates.sum() + model.lambda0 @ br.distortions.sum(axis=0))
        return cls(lambda_map, br.rates, br.distortions, cost, model.lambda0, state, list(dependency))

    def recomputed_cost(self) -> float:
        return float(self.rate.sum() + self.lambda0 @ self.distortion.sum(axis=0))

    @property
    def objective(self) -> float:
        """GoP objective ``L = -gop_cost``."""
        return -self.gop_cost

    def to_dict(self):
        return {
            "lambda": self.lambda_map.values.tolist(),
            "rate": self.rate.tolist(),
            "distortion": self.distortion.tolist(),
            "gop_cost": self.gop_cost,
            "dependency": [d.to_dict() for d in self.dependency],
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


# ---------------------------------------------------------------------------
# dependencies and the equivalent lambda map
# ---------------------------------------------------------------------------


def _total_jacobians(model, ys, i, f):
    """Total derivatives of ``R_f`` (length-d vector) and ``D_f`` (m x d) with
    respect to ``y_i``, descendants of ``i`` being amortized functions of it."""
    g = model.graph
    d_rate, d_dist = model.frame_jacobians(ys, f)
    d = g.latent_dims[i]
    m = model.spec.pixel_count
    rate = {n: v.copy() for n, v in d_rate.items()}
    dist = {n: v.copy() for n, v in d_dist.items()}
    for n in reversed(g.descendants(i)):
        if n not in rate:
            continue
        for p, jac in model.favi_jacobian(n, ys).items():
            rate[p] = rate.get(p, np.zeros(d)) + jac.T @ rate[n]
            dist[p] = dist.get(p, np.zeros((m, d))) + dist[n] @ jac
    return rate.get(i, np.zeros(d)), dist.get(i, np.zeros((m, d)))


def dependency_matrices(model, state, i, eps_den=EPS_DEN, clamp=False):
    """Rate and quality dependencies of every later frame on frame ``i``.

    ``dR_j/dy_i`` and ``dD_j/dy_i`` are chained through the amortized
    re-initialization of the descendants of ``i``.  The reverse derivatives
    ``dy_i/dR_i`` and ``dy_i/dD_i`` are formed by inverting each entry of the
    transposed Jacobians ``dR_i/dy_i`` and ``dD_i/dy_i``; entries with magnitude
    below ``eps_den`` raise :class:`DegenerateGradient` unless ``clamp`` is set,
    in which case they are pushed to ``+-eps_den``.
    """
    ys = _values(state)
    g = model.graph
    m, d = model.spec.pixel_count, g.latent_dims[i]
    if m * d > 64:
        raise GuardExceeded(f"m*d = {m * d} exceeds the dependency-matrix guard of 64")
    d_rate, d_dist = model.frame_jacobians(ys, i)
    own_r, own_d = d_rate[i], d_dist[i]
    bad = [("rate", n) for n in range(d) if abs(own_r[n]) < eps_den]
    bad += [("distortion", k, n) for k in range(m) for n in range(d) if abs(own_d[k, n]) < eps_den]
    if bad:
        if not clamp:
            raise DegenerateGradient(
                f"frame {i}: {len(bad)} Jacobian entries below {eps_den:g}", indices=bad
            )
        own_r = np.where(np.abs(own_r) < eps_den, np.where(own_r < 0, -eps_den, eps_den), own_r)
        own_d = np.where(np.abs(own_d) < eps_den, np.where(own_d < 0, -eps_den, eps_den), own_d)
    inv_r = 1.0 / own_r  # (dy_i/dR_i), length d
    inv_d = (1.0 / own_d).T  # (dy_i/dD_i), d x m
    deps = DependencyMatrices(source=i)
    pos = g.position(i)
    for f in g.topo_order[pos + 1 :]:
        jr, jd = _total_jacobians(model, ys, i, f)
        deps.rate_dep[f] = float(jr @ inv_r)
        deps.quality_dep[f] = jd @ inv_d
    return deps


def lambda_from_dependencies(lambda0, rate_sum, quality_sum):
    """``(I + sum dD_j/dD_i)^T lambda0 / (1 + sum dR_j/dR_i)``."""
    lambda0 = np.asarray(lambda0)
    quality_sum = np.asarray(quality_sum)
    m = lambda0.shape[0]
    eye = np.eye(m, dtype=quality_sum.dtype)
    return (eye + quality_sum).T.dot(lambda0) / (1 + rate_sum)


def equivalent_lambda_map(model, state, eps_den=EPS_DEN, clamp=False, with_dependencies=False):
    """Equivalent per-pixel multiplier map at ``state``.

    Entries ``<= 0`` trigger a :class:`NonPositiveLambda` warning; the map is
    still returned.
    """
    g = model.graph
    m = model.spec.pixel_count
    values = np.empty((g.n_latents, m))
    deps = []
    for i in g.topo_order:
        dep = dependency_matrices(model, state, i, eps_den=eps_den, clamp=clamp)
        deps.append(dep)
        values[i - 1] = lambda_from_dependencies(model.lambda0, dep.rate_sum, dep.quality_sum(m))
    lam = LambdaMap(values)
    if not lam.is_positive:
        warnings.warn("equivalent lambda map has non-positive entries", NonPositiveLambda, stacklevel=2)
    return (lam, deps) if with_dependencies else lam


# ---------------------------------------------------------------------------
# encoding under a given lambda map
# ---------------------------------------------------------------------------


def _auto_rate(model, ys, i, lam):
    """``1 / largest eigenvalue`` of the single-frame cost Hessian at ``ys``."""
    d = ys[i].shape[0]
    hess = np.column_stack([model.frame_cost_hvp(ys, i, lam, e) for e in np.eye(d)])
    top = float(np.max(np.linalg.eigvalsh(0.5 * (hess + hess.T))))
    return 1.0 / top if top > 0 else 1.0


def _encode_frame(model, ys, i, lam, inner_steps, learning_rate):
    ys[i] = model.favi(i, ys)
    alpha = _auto_rate(model, ys, i, lam) if learning_rate == "auto" else learning_rate
    for _ in range(inner_steps):
        ys[i] = ys[i] - alpha * model.frame_cost_grad(ys, i, lam)
        if not np.all(np.isfinite(ys[i])):
            raise DivergenceDetected(
                f"frame {i} diverged while encoding", state=LatentState.from_values(model.graph, ys), node=i
            )
    return ys


def _check_rate(learning_rate):
    if learning_rate != "auto" and not learning_rate > 0:
        raise ConfigInvalid("learning_rate must be positive or 'auto'")


def encode_with_lambda(model, lambda_map, inner_steps=200, learning_rate="auto"):
    """Encode frames in topological order, each minimizing its own
    ``R_i + lambda_i . D_i`` by gradient descent with its parents frozen.

    ``learning_rate="auto"`` uses the inverse of the largest eigenvalue of the
    frame's cost Hessian at its initialization.
    """
    if not isinstance(lambda_map, LambdaMap):
        lambda_map = LambdaMap(lambda_map)
    g = model.graph
    if lambda_map.values.shape != (g.n_latents, model.spec.pixel_count):
        raise DimensionMismatch(f"lambda map has shape {lambda_map.values.shape}")
    lambda_map.require_positive()
    _check_rate(learning_rate)
    state = LatentState.zeros(g)
    ys = list(state.y)
    for i in g.topo_order:
        ys = _encode_frame(model, ys, i, lambda_map.frame(i), inner_steps, learning_rate)
    state.y = ys
    return AllocationReport.from_state(model, state, lambda_map)


def lambda_domain_allocate(model, omega, inner_steps=200, learning_rate="auto"):
    """``lambda_i = omega_i * lambda0`` followed by :func:`encode_with_lambda`."""
    if not isinstance(omega, OmegaSchedule):
        omega = OmegaSchedule(omega)
    n = model.graph.n_latents
    w = np.broadcast_to(omega.omega, (n,))
    lam = LambdaMap(w[:, None] * model.lambda0[None, :])
    return encode_with_lambda(model, lam, inner_steps, learning_rate)


@dataclass
class LambdaGrid:
    """Candidate multipliers ``factor * lambda0`` with factors from ``low`` to
    ``high`` in steps of ``resolution`` (same range for every frame)."""

    low: float = 0.5
    high: float = 3.0
    resolution: float = 0.02

    def __post_init__(self):
        if not (0 < self.low <= self.high) or not self.resolution > 0:
            raise ConfigInvalid("grid needs 0 < low <= high and a positive resolution")

    def factors(self):
        n = int(np.floor((self.high - self.low) / self.resolution + 1e-9)) + 1
        return np.round(self.low + self.resolution * np.arange(n), 12)

    def refined(self):
        return LambdaGrid(self.low, self.high, self.resolution / 2)


def brute_force_optimal_lambda(model, grid=None, inner_steps=50, learning_rate="auto"):
    """Exhaustive search over per-frame multipliers ``factor * lambda0``.

    Restricted to ``N <= 3`` frames with a single pixel.  Prefix encodings are
    shared between grid points, and ties keep the lexicographically smallest
    grid index.
    """
    grid = LambdaGrid() if grid is None else grid
    g = model.graph
    if g.n_latents > 3 or model.spec.pixel_count != 1:
        raise GuardExceeded("brute-force lambda search needs N <= 3 frames and m = 1")
    _check_rate(learning_rate)
    factors = grid.factors()
    order = g.topo_order
    lam0 = model.lambda0
    best = {"cost": np.inf, "index": None, "ys": None}

    def search(pos, ys, index):
        if pos == len(order):
            cost = -model.total(ys)
            if cost < best["cost"]:
                best.update(cost=cost, index=tuple(index), ys=list(ys))
            return
        i = order[pos]
        for k, f in enumerate(factors):
            nxt = _encode_frame(model, list(ys), i, f * lam0, inner_steps, learning_rate)
            search(pos + 1, nxt, index + [k])

    search(0, list(LatentState.zeros(g).y), [])
    values = np.empty((g.n_latents, 1))
    for pos, i in enumerate(order):
        values[i - 1] = factors[best["index"][pos]] * lam0
    state = LatentState.from_values(g, best["ys"])
    report = AllocationReport.from_state(model, state, LambdaMap(values))
    report.grid_index = tuple(best["index"][order.index(i)] for i in range(1, g.n_latents + 1))
    return report


exhaustive_lambda_search = brute_force_optimal_lambda


# ---------------------------------------------------------------------------
# online encoder update
# ---------------------------------------------------------------------------


class _FrameEncoders:
    """Per-frame copies ``(E_i, F_i)`` of the amortized encoder."""

    def __init__(self, model):
        n = model.graph.n_latents
        self.model = model
        self.E = [None] + [model.spec.E.copy() for _ in range(n)]
        self.F = [None] + [model.spec.F.copy() for _ in range(n)]

    def encode(self, ys=None):
        m = self.model
        ys = list(LatentState.zeros(m.graph).y)
        pre = [None] * len(ys)
        for i in m.graph.topo_order:
            pre[i] = self.E[i] @ m.frames.frame(i) + self.F[i] @ m._parent_mean(ys, i)
            ys[i] = _act(m.spec.nonlinearity, pre[i])[0]
        return ys, pre

    def gradient(self):
        """``L`` and its gradient w.r.t. every ``E_i`` and ``F_i``."""
        m = self.model
        g = m.graph
        ys, pre = self.encode()
        adj = m.grad_all(ys)
        dE = [None] * len(ys)
        dF = [None] * len(ys)
        for i in reversed(g.topo_order):
            w = adj[i] * _act(m.spec.nonlinearity, pre[i])[1]
            dE[i] = np.outer(w, m.frames.frame(i))
            dF[i] = np.outer(w, m._parent_mean(ys, i))
            ps = g.parents(i)
            if ps:
                back = self.F[i].T @ w / len(ps)
                for p in ps:
                    adj[p] = adj[p] + back
        return m.total(ys), dE, dF


def oeu_baseline(model, steps=50, learning_rate=0.01):
    """Gradient ascent of the GoP objective over per-frame encoder matrices.

    Latents are always the output of the (updated) encoders, so this is an
    allocation at frame granularity: each frame can only move inside the
    range its encoder can reach.
    """
    if not learning_rate > 0:
        raise ConfigInvalid("learning_rate must be positive")
    enc = _FrameEncoders(model)
    for _ in range(steps):
        _, dE, dF = enc.gradient()
        for i in model.graph.topo_order:
            enc.E[i] = enc.E[i] + learning_rate * dE[i]
            enc.F[i] = enc.F[i] + learning_rate * dF[i]
            if not (np.all(np.isfinite(enc.E[i])) and np.all(np.isfinite(enc.F[i]))):
                raise DivergenceDetected(f"encoder of frame {i} diverged", node=i)
    ys, _ = enc.encode()
    state = LatentState.from_values(model.graph, ys)
    return AllocationReport.from_state(model, state, LambdaMap.uniform(model.lambda0, model.graph.n_latents))
