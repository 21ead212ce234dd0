"""Differentiable GoP surrogates.

Two analytic stand-ins for a neural video codec are provided:

* :class:`GopModel` -- one latent per frame, each frame conditioned on the
  mean of its parents' latents.  With ``R_i = 1/2 ||y_i - A s_i||^2`` and
  per-pixel squared error ``D_i`` the frame objective is
  ``L_i = -(R_i + lambda0 . D_i)``.
* :class:`TwoLevelModel` -- a concave quadratic mirroring a 2-level VAE with
  inference path ``x -> y1 -> y2``.

Both expose the same duck-typed interface used by the SAVI routines: ``graph``,
``favi``/``favi_vjp``/``favi_jacobian``, ``total``, ``grad_all``,
``hvp_column`` and ``hvp``.  Latent values are passed around as a list ``ys``
indexed by node id, with ``ys[0]`` the empty root vector.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import graph as graphs
from .errors import DimensionMismatch
from .rng import make_rng, spawn

NONLINEARITIES = ("linear", "tanh")


def _values(state):
    return state.y if isinstance(state, LatentState) else state


@dataclass
class LatentState:
    """Current latent values plus per-node step counters and an eval ledger."""

    y: list
    k: np.ndarray
    eval_counter: np.ndarray
    probe_evals: int = 0

    @classmethod
    def zeros(cls, graph):
        n = graph.node_count
        return cls(
            y=[np.zeros(d) for d in graph.latent_dims],
            k=np.zeros(n, dtype=int),
            eval_counter=np.zeros(n, dtype=int),
        )

    @classmethod
    def from_values(cls, graph, values):
        state = cls.zeros(graph)
        state.y = [np.asarray(v, dtype=float).copy() for v in values]
        if [v.shape for v in state.y] != [(d,) for d in graph.latent_dims]:
            raise DimensionMismatch("latent values do not match the graph dimensions")
        return state

    def copy(self):
        return LatentState(
            y=[v.copy() for v in self.y],
            k=self.k.copy(),
            eval_counter=self.eval_counter.copy(),
            probe_evals=self.probe_evals,
        )

    @property
    def total_evals(self) -> int:
        return int(self.eval_counter.sum())

    def stacked(self) -> np.ndarray:
        """All real latents concatenated in node-id order."""
        return np.concatenate(self.y[1:])


@dataclass
class ObjectiveBreakdown:
    rates: np.ndarray
    distortions: np.ndarray
    per_frame: np.ndarray
    total: float


# ---------------------------------------------------------------------------
# GoP surrogate
# ---------------------------------------------------------------------------


def _spectral_radius(a):
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(a))))


def _unit_norm(m):
    s = np.linalg.norm(m, 2)
    return m / s if s > 0 else m


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Parameters of the GoP surrogate.

    ``A`` is the prior transition, ``W``/``U`` decode the current/parent
    latents and ``E``/``F`` form the amortized (FAVI) encoder.
    """

    frame_count: int
    latent_dim: int
    pixel_count: int
    lambda0: np.ndarray
    A: np.ndarray
    W: np.ndarray
    U: np.ndarray
    E: np.ndarray
    F: np.ndarray
    temporal_correlation: float = 0.0
    seed: int = 0
    nonlinearity: str = "linear"

    def __post_init__(self):
        d, m = self.latent_dim, self.pixel_count
        lam = np.broadcast_to(np.asarray(self.lambda0, dtype=float), (m,)).copy()
        object.__setattr__(self, "lambda0", lam)
        shapes = {"A": (d, d), "W": (m, d), "U": (m, d), "E": (d, m), "F": (d, d)}
        for name, shape in shapes.items():
            mat = np.asarray(getattr(self, name), dtype=float)
            if mat.shape != shape:
                raise DimensionMismatch(f"{name} has shape {mat.shape}, expected {shape}")
            object.__setattr__(self, name, mat)
        if np.any(lam <= 0):
            raise ValueError("lambda0 entries must be strictly positive")
        if _spectral_radius(self.A) >= 1.0:
            raise ValueError("prior transition A must have spectral radius below 1")
        if not 0.0 <= self.temporal_correlation < 1.0:
            raise ValueError("temporal_correlation must lie in [0, 1)")
        if self.nonlinearity not in NONLINEARITIES:
            raise ValueError(f"nonlinearity must be one of {NONLINEARITIES}")

    @classmethod
    def random(
        cls,
        frame_count,
        latent_dim,
        pixel_count,
        lambda0=1.0,
        temporal_correlation=0.9,
        seed=0,
        nonlinearity="linear",
        prior_radius=0.8,
    ):
        """Draw i.i.d. normal matrices; rescale A to ``prior_radius`` and the
        others to unit spectral norm."""
        rng = make_rng(seed, stream="params")
        d, m = latent_dim, pixel_count
        a = rng.standard_normal((d, d))
        radius = _spectral_radius(a)
        a = a * (prior_radius / radius) if radius > 0 else a
        return cls(
            frame_count=frame_count,
            latent_dim=d,
            pixel_count=m,
            lambda0=lambda0,
            A=a,
            W=_unit_norm(rng.standard_normal((m, d))),
            U=_unit_norm(rng.standard_normal((m, d))),
            E=_unit_norm(rng.standard_normal((d, m))),
            F=_unit_norm(rng.standard_normal((d, d))),
            temporal_correlation=temporal_correlation,
            seed=seed,
            nonlinearity=nonlinearity,
        )

    def with_prior_radius(self, radius):
        r = _spectral_radius(self.A)
        return replace(self, A=self.A * (radius / r) if r > 0 else self.A)

    def with_fitted_encoder(self, gap=0.0, seed=None):
        """Replace ``E``/``F`` by the encoder that solves each frame's own
        problem ``min R_i + lambda0 . D_i`` exactly in the linear model, then
        add a seeded perturbation of spectral norm ``gap``.

        This mimics an amortized encoder trained on a single-frame objective:
        good per frame, blind to the effect on later frames, and off by an
        amortization gap.
        """
        W, U, A = self.W, self.U, self.A
        lam = self.lambda0
        wl = 2.0 * W.T * lam[None, :]
        h = np.eye(self.latent_dim) + wl @ W
        E = np.linalg.solve(h, wl)
        F = np.linalg.solve(h, A - wl @ U)
        if gap > 0:
            rng = make_rng(self.seed if seed is None else seed, stream="encoder-gap")
            E = E + gap * _unit_norm(rng.standard_normal(E.shape))
            F = F + gap * _unit_norm(rng.standard_normal(F.shape))
        return replace(self, E=E, F=F)

    def prior_coupled(self):
        """Decoder reference removed (``U = 0``) and the exact single-frame
        encoder fitted, so every cross-frame path runs through ``A``.

        Apply :meth:`with_prior_radius` first when sweeping the radius; the
        encoder is refitted here."""
        return replace(self, U=np.zeros_like(self.U)).with_fitted_encoder(0.0)

    def decoupled(self):
        """Same model with every cross-frame path removed (A = U = F = 0)."""
        z = np.zeros_like
        return replace(self, A=z(self.A), U=z(self.U), F=z(self.F))


@dataclass(frozen=True)
class FrameData:
    x: np.ndarray  # (frame_count, pixel_count); row i-1 is frame i

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_2d(np.asarray(self.x, dtype=float)))

    def frame(self, i):
        return self.x[i - 1]


def generate_frames(spec: ModelSpec) -> FrameData:
    """AR(1) frames: ``x_1 ~ N(0, I)``, ``x_{i+1} = rho x_i + sqrt(1 - rho^2) eps``."""
    rng = make_rng(spec.seed, stream="frames")
    rho = spec.temporal_correlation
    x = np.empty((spec.frame_count, spec.pixel_count))
    x[0] = rng.standard_normal(spec.pixel_count)
    scale = np.sqrt(1.0 - rho * rho)
    for i in range(1, spec.frame_count):
        x[i] = rho * x[i - 1] + scale * rng.standard_normal(spec.pixel_count)
    return FrameData(x)


def _act(kind, y):
    """Return (sigma, sigma', sigma'') evaluated at y."""
    if kind == "linear":
        return y, np.ones_like(y), np.zeros_like(y)
    t = np.tanh(y)
    d1 = 1.0 - t * t
    return t, d1, -2.0 * t * d1


class GopModel:
    """Evaluator for a :class:`ModelSpec` over observed frames and a latent DAG.

    Node ``i`` of ``graph`` is the latent of frame ``i``.  When a node has
    several parents, the prior, the decoder and the encoder all use the mean
    of the parents' (activated) latents; for a chain this reduces to the
    single previous frame.
    """

    def __init__(self, spec: ModelSpec, frames: FrameData | None = None, graph=None):
        self.spec = spec
        self.frames = generate_frames(spec) if frames is None else frames
        self.graph = graphs.chain(spec.frame_count, spec.latent_dim) if graph is None else graph
        n, d, m = spec.frame_count, spec.latent_dim, spec.pixel_count
        if self.frames.x.shape != (n, m):
            raise DimensionMismatch(f"frames have shape {self.frames.x.shape}, expected {(n, m)}")
        if self.graph.latent_dims != (0,) + (d,) * n:
            raise DimensionMismatch("graph dimensions do not match the model spec")
        self.lambda0 = spec.lambda0
        self.linear = spec.nonlinearity == "linear"
        self._parents = [self.graph.parents(i) for i in range(self.graph.node_count)]
        # frames whose objective involves node j: j itself and its children
        self._touching = [
            sorted([j] + [c for c in self.graph.children(j) if j in self._parents[c]])
            for j in range(self.graph.node_count)
        ]

    @property
    def frame_count(self):
        return self.spec.frame_count

    def _parent_mean(self, ys, i):
        ps = self._parents[i]
        if not ps:
            return np.zeros(self.spec.latent_dim)
        return sum(ys[p] for p in ps) / len(ps)

    def _parent_act_mean(self, ys, i):
        ps = self._parents[i]
        if not ps:
            return np.zeros(self.spec.latent_dim)
        return sum(_act(self.spec.nonlinearity, ys[p])[0] for p in ps) / len(ps)

    def _check(self, *vecs):
        d = self.spec.latent_dim
        for v in vecs:
            if np.shape(v) != (d,):
                raise DimensionMismatch(f"latent of shape {np.shape(v)}, expected {(d,)}")

    # -- FAVI ---------------------------------------------------------------

    def favi_init(self, i, parent_values):
        """Amortized initialization of node ``i`` from its parents' values
        (ordered as ``graph.parents(i)``)."""
        if len(parent_values) != len(self._parents[i]):
            raise DimensionMismatch(
                f"node {i} has {len(self._parents[i])} parents, got {len(parent_values)} values"
            )
        self._check(*parent_values)
        if parent_values:
            s = sum(parent_values) / len(parent_values)
        else:
            s = np.zeros(self.spec.latent_dim)
        pre = self.spec.E @ self.frames.frame(i) + self.spec.F @ s
        return pre if self.linear else np.tanh(pre)

    def favi(self, i, ys):
        return self.favi_init(i, [ys[p] for p in self._parents[i]])

    def _favi_slope(self, i, ys):
        if self.linear:
            return None
        pre = self.spec.E @ self.frames.frame(i) + self.spec.F @ self._parent_mean(ys, i)
        return 1.0 - np.tanh(pre) ** 2

    def favi_vjp(self, i, ys, u):
        """``{parent: (d y_i^0 / d y_parent)^T u}``."""
        ps = self._parents[i]
        if not ps:
            return {}
        slope = self._favi_slope(i, ys)
        w = u if slope is None else slope * u
        g = self.spec.F.T @ w / len(ps)
        return {p: g for p in ps}

    def favi_jacobian(self, i, ys):
        ps = self._parents[i]
        if not ps:
            return {}
        slope = self._favi_slope(i, ys)
        jac = self.spec.F / len(ps)
        if slope is not None:
            jac = slope[:, None] * jac
        return {p: jac for p in ps}

    # -- rate / distortion -------------------------------------------------

    def rate(self, y_i, y_parent=None):
        """``1/2 ||y_i - A y_parent||^2``; ``y_parent=None`` for a first frame."""
        self._check(y_i)
        if y_parent is None:
            r = y_i
        else:
            self._check(y_parent)
            r = y_i - self.spec.A @ y_parent
        return 0.5 * float(r @ r)

    def reconstruct(self, y_i, parent_act):
        sig = _act(self.spec.nonlinearity, y_i)[0]
        return self.spec.W @ sig + self.spec.U @ parent_act

    def distortion(self, i, y_i, y_parent=None):
        """Per-pixel squared error of frame ``i``; ``y_parent`` is the parent
        latent (already averaged over parents if there are several)."""
        self._check(y_i)
        if y_parent is None:
            pa = np.zeros(self.spec.latent_dim)
        else:
            self._check(y_parent)
            pa = _act(self.spec.nonlinearity, y_parent)[0]
        e = self.frames.frame(i) - self.reconstruct(y_i, pa)
        return e * e

    def _frame_terms(self, ys, i):
        r = ys[i] - self.spec.A @ self._parent_mean(ys, i)
        e = self.frames.frame(i) - self.reconstruct(ys[i], self._parent_act_mean(ys, i))
        return r, e

    # -- objective -----------------------------------------------------------

    def objective(self, state) -> ObjectiveBreakdown:
        ys = _values(state)
        n = self.frame_count
        rates = np.empty(n)
        dists = np.empty((n, self.spec.pixel_count))
        for i in range(1, n + 1):
            r, e = self._frame_terms(ys, i)
            rates[i - 1] = 0.5 * float(r @ r)
            dists[i - 1] = e * e
        per_frame = -(rates + dists @ self.lambda0)
        return ObjectiveBreakdown(rates, dists, per_frame, float(per_frame.sum()))

    def total(self, ys, terms=None):
        ys = _values(ys)
        frames = range(1, self.frame_count + 1) if terms is None else terms
        out = 0.0
        for i in frames:
            r, e = self._frame_terms(ys, i)
            out -= 0.5 * float(r @ r) + float(self.lambda0 @ (e * e))
        return out

    def grad_all(self, ys, terms=None):
        """Partial derivatives of ``sum_{j in terms} L_j`` w.r.t. every node
        (all frames when ``terms`` is None).  Returns a list indexed by node."""
        ys = _values(ys)
        kind = self.spec.nonlinearity
        A, W, U = self.spec.A, self.spec.W, self.spec.U
        g = [np.zeros_like(v) for v in ys]
        frames = range(1, self.frame_count + 1) if terms is None else terms
        for i in frames:
            r, e = self._frame_terms(ys, i)
            le = self.lambda0 * e
            g[i] = g[i] - r + 2.0 * _act(kind, ys[i])[1] * (W.T @ le)
            ps = self._parents[i]
            if ps:
                back_r = A.T @ r
                back_e = U.T @ le
                for p in ps:
                    g[p] = g[p] + (back_r + 2.0 * _act(kind, ys[p])[1] * back_e) / len(ps)
        return g

    def grad_objective(self, state, i):
        """``dL/dy_i`` with every latent held free; bumps ``state.eval_counter[i]``."""
        g = self.grad_all(state.y)[i]
        state.eval_counter[i] += 1
        return g

    def hvp_column(self, ys, j, v):
        """``[(d^2 L / dy_n dy_j) v for every node n]``."""
        ys = _values(ys)
        self._check(v)
        kind = self.spec.nonlinearity
        A, W, U = self.spec.A, self.spec.W, self.spec.U
        out = [np.zeros_like(y) for y in ys]
        for f in self._touching[j]:
            ps = self._parents[f]
            k = len(ps) or 1
            r, e = self._frame_terms(ys, f)
            le = self.lambda0 * e
            # d r / d y_j and d xhat / d y_j applied to v
            if j == f:
                jv = v
                gv = W @ (_act(kind, ys[j])[1] * v)
                mt_le = W.T @ le
            else:
                jv = -(A @ v) / k
                gv = U @ (_act(kind, ys[j])[1] * v) / k
                mt_le = U.T @ le / k
            lgv = self.lambda0 * gv
            # frame's own node
            out[f] = out[f] - jv - 2.0 * _act(kind, ys[f])[1] * (W.T @ lgv)
            for p in ps:
                out[p] = out[p] + (A.T @ jv) / k - 2.0 * _act(kind, ys[p])[1] * (U.T @ lgv) / k
            if kind != "linear":
                out[j] = out[j] + 2.0 * _act(kind, ys[j])[2] * mt_le * v
        return out

    def hvp(self, ys, i, j, v):
        """``(d^2 L / dy_i dy_j) v`` from analytic second derivatives."""
        return self.hvp_column(ys, j, v)[i]

    # -- per-frame R-D pieces used by bit allocation --------------------------

    def frame_cost_grad(self, ys, i, lam):
        """Gradient w.r.t. ``y_i`` of the single-frame cost ``R_i + lam . D_i``."""
        r, e = self._frame_terms(ys, i)
        return r - 2.0 * _act(self.spec.nonlinearity, ys[i])[1] * (self.spec.W.T @ (lam * e))

    def frame_cost_hvp(self, ys, i, lam, v):
        kind = self.spec.nonlinearity
        _, e = self._frame_terms(ys, i)
        _, d1, d2 = _act(kind, ys[i])
        W = self.spec.W
        out = v + 2.0 * d1 * (W.T @ (lam * (W @ (d1 * v))))
        if kind != "linear":
            out = out - 2.0 * d2 * (W.T @ (lam * e)) * v
        return out

    def frame_jacobians(self, ys, f):
        """Partial derivatives of ``R_f`` (vectors) and ``D_f`` (m x d
        matrices) w.r.t. each node the frame touches."""
        ys = _values(ys)
        kind = self.spec.nonlinearity
        r, e = self._frame_terms(ys, f)
        ps = self._parents[f]
        d_rate = {f: r.copy()}
        d_dist = {f: -2.0 * e[:, None] * self.spec.W * _act(kind, ys[f])[1][None, :]}
        for p in ps:
            d_rate[p] = -(self.spec.A.T @ r) / len(ps)
            d_dist[p] = -2.0 * e[:, None] * self.spec.U * _act(kind, ys[p])[1][None, :] / len(ps)
        return d_rate, d_dist


# ---------------------------------------------------------------------------
# Two-level quadratic surrogate
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TwoLevelModel:
    """``L(y1, y2) = -1/2||x - G1 y1||^2 - beta/2 ||y1 - G2 y2||^2 - gamma/2 ||y2||^2``.

    Amortized inference is ``y1 = H1 x`` and ``y2 = H2 y1``.  The objective is
    concave, so its global maximizer is one linear solve away.
    """

    G1: np.ndarray
    G2: np.ndarray
    H1: np.ndarray
    H2: np.ndarray
    x: np.ndarray
    beta: float = 1.0
    gamma: float = 1.0
    graph: graphs.LatentGraph = field(init=False, repr=False)

    linear = True

    def __post_init__(self):
        d1, d2 = self.G2.shape
        m = self.x.shape[0]
        if self.G1.shape != (m, d1) or self.H1.shape != (d1, m) or self.H2.shape != (d2, d1):
            raise DimensionMismatch("inconsistent two-level matrix shapes")
        if self.beta <= 0 or self.gamma <= 0:
            raise ValueError("beta and gamma must be positive")
        object.__setattr__(self, "graph", graphs.build_graph([d1, d2], [(1, 2)]))

    @property
    def dims(self):
        return self.G2.shape

    def favi(self, i, ys):
        return self.H1 @ self.x if i == 1 else self.H2 @ ys[1]

    def favi_init(self, i, parent_values):
        if i == 1:
            return self.H1 @ self.x
        (y1,) = parent_values
        return self.H2 @ y1

    def favi_vjp(self, i, ys, u):
        return {} if i == 1 else {1: self.H2.T @ u}

    def favi_jacobian(self, i, ys):
        return {} if i == 1 else {1: self.H2}

    def _terms(self, ys, which):
        y1, y2 = ys[1], ys[2]
        if which == 1:
            r = self.x - self.G1 @ y1
            return -0.5 * float(r @ r)
        c = y1 - self.G2 @ y2
        return -0.5 * self.beta * float(c @ c) - 0.5 * self.gamma * float(y2 @ y2)

    def total(self, ys, terms=None):
        ys = _values(ys)
        return sum(self._terms(ys, t) for t in ((1, 2) if terms is None else terms))

    def objective(self, state) -> ObjectiveBreakdown:
        ys = _values(state)
        per = np.array([self._terms(ys, 1), self._terms(ys, 2)])
        return ObjectiveBreakdown(np.zeros(0), np.zeros((0, 0)), per, float(per.sum()))

    def grad_all(self, ys, terms=None):
        ys = _values(ys)
        y1, y2 = ys[1], ys[2]
        terms = (1, 2) if terms is None else terms
        g1 = np.zeros_like(y1)
        g2 = np.zeros_like(y2)
        if 1 in terms:
            g1 = g1 + self.G1.T @ (self.x - self.G1 @ y1)
        if 2 in terms:
            c = y1 - self.G2 @ y2
            g1 = g1 - self.beta * c
            g2 = g2 + self.beta * (self.G2.T @ c) - self.gamma * y2
        return [np.zeros(0), g1, g2]

    def grad_objective(self, state, i):
        g = self.grad_all(state.y)[i]
        state.eval_counter[i] += 1
        return g

    def hvp_column(self, ys, j, v):
        b = self.beta
        if j == 1:
            return [np.zeros(0), -(self.G1.T @ (self.G1 @ v)) - b * v, b * (self.G2.T @ v)]
        return [np.zeros(0), b * (self.G2 @ v), -b * (self.G2.T @ (self.G2 @ v)) - self.gamma * v]

    def hvp(self, ys, i, j, v):
        return self.hvp_column(ys, j, v)[i]

    def hessian(self):
        """Dense stacked Hessian (constant)."""
        d1, d2 = self.dims
        b = self.beta
        h11 = -self.G1.T @ self.G1 - b * np.eye(d1)
        h12 = b * self.G2
        h22 = -b * self.G2.T @ self.G2 - self.gamma * np.eye(d2)
        return np.block([[h11, h12], [h12.T, h22]])


def two_level_quadratic(
    dims, seed=0, beta=1.0, gamma=1.0, x_dim=None, favi_scale=1.0, amortization_gap=None
):
    """Seeded :class:`TwoLevelModel` with ``dims = (d1, d2)``.

    ``x_dim`` defaults to ``2 * d1``.  All matrices are drawn i.i.d. normal and
    scaled to unit spectral norm (``favi_scale`` rescales the encoders).

    With ``amortization_gap`` set, the encoders are instead the exact
    posterior-mean maps (``H1`` gives the optimal ``y1`` for every ``x`` and
    ``H2`` the optimal ``y2`` given ``y1``) plus seeded perturbations of that
    spectral norm, which stands in for a trained but imperfect encoder.
    """
    d1, d2 = dims
    if d1 <= 0 or d2 <= 0:
        raise ValueError("two-level dimensions must be positive")
    m = 2 * d1 if x_dim is None else x_dim
    rng_p, rng_x = spawn(seed, 2, stream="two-level")
    mats = [rng_p.standard_normal(s) for s in ((m, d1), (d1, d2), (d1, m), (d2, d1))]
    g1, g2, h1, h2 = (_unit_norm(a) for a in mats)
    x = rng_x.standard_normal(m)
    if amortization_gap is not None:
        h1, h2 = _optimal_two_level_encoders(g1, g2, beta, gamma)
        rng_gap = make_rng(seed, stream="encoder-gap")
        h1 = h1 + amortization_gap * _unit_norm(rng_gap.standard_normal(h1.shape))
        h2 = h2 + amortization_gap * _unit_norm(rng_gap.standard_normal(h2.shape))
        return TwoLevelModel(g1, g2, h1, h2, x, beta=beta, gamma=gamma)
    return TwoLevelModel(g1, g2, favi_scale * h1, favi_scale * h2, x, beta=beta, gamma=gamma)


def _optimal_two_level_encoders(g1, g2, beta, gamma):
    d1, d2 = g2.shape
    h2 = np.linalg.solve(beta * g2.T @ g2 + gamma * np.eye(d2), beta * g2.T)
    # eliminating y2 leaves a ridge problem in y1 with penalty beta (I - G2 H2)
    c = np.eye(d1) - g2 @ h2
    penalty = beta * (c.T @ c) + gamma * (h2.T @ h2)
    h1 = np.linalg.solve(g1.T @ g1 + penalty, g1.T)
    return h1, h2


def favi_state(model, counters_from=None):
    """Fresh :class:`LatentState` holding the amortized initialization of every
    node (topological order)."""
    state = LatentState.zeros(model.graph) if counters_from is None else counters_from
    for i in model.graph.topo_order:
        state.y[i] = model.favi(i, state.y)
    return state
