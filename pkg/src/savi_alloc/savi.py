"""Semi-amortized variational inference on DAG-structured latents.

Four procedures are implemented:

``naive``
    amortized initialization, then ``K`` synchronous ascent sweeps using
    partial derivatives only.
``accurate2`` / ``accurateDag``
    back-propagation through gradient ascent.  Every time a node takes a step,
    its descendants are re-initialized and re-optimized for ``K`` steps, and
    the step direction is the total derivative of the objective through that
    inner optimization (a hypergradient).  Cost grows as ``K**depth``.
``approx`` / ``approxScalable``
    one pass in topological order; each node takes ``K`` steps with its
    descendants frozen at their amortized initialization, optionally
    truncating the objective to a window of ``C`` later frames.

All procedures return the final :class:`~savi_alloc.model.LatentState` and an
:class:`ExecutionTrace` of initialization / ascent events.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .errors import BudgetExceeded, ConfigInvalid, DimensionMismatch, DivergenceDetected
from .graph import ROOT
from .model import LatentState, _values, favi_state

VARIANTS = ("naive", "accurate2", "accurateDag", "approx", "approxScalable")
HVP_MODES = ("analytic", "finite_difference")
REINIT_MODES = ("per_step", "per_node")


@dataclass
class SaviConfig:
    """Settings shared by every SAVI variant.

    ``window`` is the number of later frames kept by the truncated gradient
    (``None`` or ``"full"`` keeps the whole GoP).  ``fd_step`` overrides the
    default finite-difference step ``1e-5 (1 + ||y||) / ||v||``.
    """

    variant: str = "approx"
    steps: int = 10
    learning_rate: float = 0.05
    window: int | None = None
    hvp_mode: str = "analytic"
    fd_step: float | None = None
    record_trace: bool = True
    trace_backward: bool = False
    reinit: str = "per_step"
    max_evals: int = 1_000_000
    settle_final: bool = False

    def __post_init__(self):
        if self.window == "full":
            self.window = None
        if self.variant not in VARIANTS:
            raise ConfigInvalid(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if int(self.steps) != self.steps or self.steps < 0:
            raise ConfigInvalid("steps must be a non-negative integer")
        self.steps = int(self.steps)
        if not self.learning_rate > 0:
            raise ConfigInvalid("learning_rate must be positive")
        if self.window is not None and (int(self.window) != self.window or self.window < 0):
            raise ConfigInvalid("window must be a non-negative integer or 'full'")
        if self.hvp_mode not in HVP_MODES:
            raise ConfigInvalid(f"hvp_mode must be one of {HVP_MODES}")
        if self.fd_step is not None and not self.fd_step > 0:
            raise ConfigInvalid("fd_step must be positive")
        if self.reinit not in REINIT_MODES:
            raise ConfigInvalid(f"reinit must be one of {REINIT_MODES}")


class TraceEvent(NamedTuple):
    node: int
    step: int
    action: str


class ExecutionTrace:
    """Ordered ``(node, step, action)`` events.

    ``step`` is the node's step counter after the action, so an ``init`` is
    always step 0.  Serialized as one ``<node> <step> <action>`` line per event.
    """

    ACTIONS = ("init", "ascent", "backward")

    def __init__(self, events=()):
        self.events = [TraceEvent(*e) for e in events]

    def add(self, node, step, action):
        self.events.append(TraceEvent(int(node), int(step), action))

    def count(self, action=None, node=None):
        return sum(
            1
            for e in self.events
            if (action is None or e.action == action) and (node is None or e.node == node)
        )

    def dumps(self) -> str:
        return "".join(f"{e.node} {e.step} {e.action}\n" for e in self.events)

    @classmethod
    def loads(cls, text):
        events = []
        for line in text.splitlines():
            if line.strip():
                node, step, action = line.split()
                if action not in cls.ACTIONS:
                    raise ValueError(f"unknown trace action {action!r}")
                events.append((int(node), int(step), action))
        return cls(events)

    def write(self, path):
        Path(path).write_text(self.dumps())

    def __len__(self):
        return len(self.events)

    def __iter__(self):
        return iter(self.events)

    def __eq__(self, other):
        return isinstance(other, ExecutionTrace) and self.events == other.events

    def __repr__(self):
        return f"ExecutionTrace({len(self.events)} events)"


def default_fd_step(y, v, fd_step=None, height=0):
    """``base (1 + ||y||) / ||v||`` with ``base = 1e-5``.

    ``height`` is the number of nested difference levels below this one (the
    longest path from the node to a leaf).  Each level of differencing
    amplifies roundoff by another ``1 / r``, so the base widens to
    ``1e-5 ** (2 / (2 + height))``.  An explicit ``fd_step`` always wins.
    """
    if fd_step is not None:
        return fd_step
    base = 1e-5 ** (2.0 / (2 + height))
    return base * (1.0 + np.linalg.norm(y)) / max(np.linalg.norm(v), 1e-12)


def hvp(model, state, i, j, v, mode="analytic", r=None):
    """``(d^2 L / dy_i dy_j) v``.

    ``mode="finite_difference"`` uses the one-sided difference of gradients
    ``(grad_i L(y_j + r v) - grad_i L(y_j)) / r``.
    """
    ys = _values(state)
    v = np.asarray(v, dtype=float)
    if v.shape != ys[j].shape:
        raise DimensionMismatch(f"v has shape {v.shape}, node {j} has {ys[j].shape}")
    if mode == "analytic":
        return model.hvp(ys, i, j, v)
    if mode != "finite_difference":
        raise ValueError(f"unknown hvp mode {mode!r}")
    r = default_fd_step(ys[j], v, r)
    pert = list(ys)
    pert[j] = ys[j] + r * v
    return (model.grad_all(pert)[i] - model.grad_all(ys)[i]) / r


def stacked_hessian(model, state=None):
    """Dense Hessian of ``L`` over the stacked real latents (node-id order),
    assembled from analytic Hessian-vector products at ``state`` (amortized
    initialization by default)."""
    ys = favi_state(model).y if state is None else _values(state)
    g = model.graph
    nodes = list(range(1, g.node_count))
    cols = []
    for j in nodes:
        for e in np.eye(g.latent_dims[j]):
            col = model.hvp_column(ys, j, e)
            cols.append(np.concatenate([col[n] for n in nodes]))
    h = np.column_stack(cols)
    return 0.5 * (h + h.T)


def suggest_learning_rate(model, state=None, scale=1.0):
    """``scale / lambda_max`` where ``lambda_max`` is the largest curvature
    magnitude of ``L`` at ``state``."""
    top = float(np.max(np.abs(np.linalg.eigvalsh(stacked_hessian(model, state)))))
    return scale / top if top > 0 else scale


class _Run:
    """Per-invocation bookkeeping: counters, trace and evaluation budget."""

    def __init__(self, model, cfg, state):
        self.model = model
        self.cfg = cfg
        self.state = state
        self.trace = ExecutionTrace()
        self.evals = 0
        self.ascents = 0

    def charge(self, n=1):
        self.evals += n
        if self.evals > self.cfg.max_evals:
            raise BudgetExceeded(
                f"gradient evaluation budget of {self.cfg.max_evals} exhausted", evals=self.evals
            )

    def event(self, node, action):
        if self.cfg.record_trace:
            self.trace.add(node, self.state.k[node], action)

    def init(self, node):
        self.state.k[node] = 0
        self.event(node, "init")

    def ascent(self, node):
        self.state.k[node] += 1
        self.state.eval_counter[node] += 1
        self.ascents += 1
        self.event(node, "ascent")

    def check(self, ys, node):
        if not np.all(np.isfinite(ys[node])):
            self.state.y = list(ys)
            raise DivergenceDetected(
                f"latent {node} became non-finite (step {self.state.k[node]})",
                state=self.state,
                node=node,
            )

    def finish(self, ys):
        self.state.y = [np.array(v, dtype=float) for v in ys]
        self.state.probe_evals += self.evals - self.ascents
        return self.state, self.trace


def _start(model, cfg, state, init_events):
    """Fresh state from amortized inference unless one is supplied."""
    if state is None:
        state = LatentState.zeros(model.graph)
        run = _Run(model, cfg, state)
        ys = list(state.y)
        for i in model.graph.topo_order:
            ys[i] = model.favi(i, ys)
            if init_events:
                run.init(i)
    else:
        state = state.copy()
        run = _Run(model, cfg, state)
        ys = list(state.y)
    return run, ys


def _expect(cfg, *variants):
    if cfg.variant not in variants:
        raise ConfigInvalid(f"config variant {cfg.variant!r}; expected one of {variants}")


# ---------------------------------------------------------------------------
# naive SAVI
# ---------------------------------------------------------------------------


def savi_naive(model, cfg: SaviConfig, state=None):
    """Synchronous partial-derivative ascent on every latent."""
    _expect(cfg, "naive")
    run, ys = _start(model, cfg, state, init_events=True)
    nodes = model.graph.topo_order
    alpha = cfg.learning_rate
    for _ in range(cfg.steps):
        run.state.y = ys
        grads = [model.grad_all(ys)[i] for i in nodes]
        run.charge(len(nodes))
        ys = list(ys)
        for i, g in zip(nodes, grads):
            ys[i] = ys[i] + alpha * g
            run.ascent(i)
            run.check(ys, i)
    return run.finish(ys)


# ---------------------------------------------------------------------------
# approximated SAVI
# ---------------------------------------------------------------------------


def windowed_gradient(model, state, i, window=None):
    """Total derivative of ``sum_{j} L_j`` w.r.t. ``y_i`` over frames ``j`` from
    ``i`` up to ``window`` positions later in topological order.

    Descendants of ``i`` are treated as amortized functions of ``y_i`` (their
    current values are taken to be those initializations); frames past the
    window are dropped, so only ``window + 1`` frame terms are touched.
    """
    ys = _values(state)
    g = model.graph
    order = g.topo_order
    pos = g.position(i)
    last = len(order) - 1 if window is None else min(pos + int(window), len(order) - 1)
    adj = model.grad_all(ys, terms=order[pos : last + 1])
    inside = [d for d in g.descendants(i) if g.position(d) <= last]
    for d in reversed(inside):
        for p, v in model.favi_vjp(d, ys, adj[d]).items():
            adj[p] = adj[p] + v
    return adj[i]


def savi_approx(model, cfg: SaviConfig, state=None):
    """Single topological pass; node ``i`` is optimized with its descendants
    held at their amortized initialization.

    With ``cfg.reinit == "per_step"`` the descendants are re-initialized from
    the current ``y_i`` before every gradient evaluation; ``"per_node"`` does it
    once when the node's turn starts.
    """
    _expect(cfg, "approx", "approxScalable")
    window = cfg.window
    if cfg.variant == "approxScalable" and window is None:
        window = 2
    run, ys = _start(model, cfg, state, init_events=False)
    g = model.graph
    order = g.topo_order
    alpha = cfg.learning_rate
    for pos, i in enumerate(order):
        ys = list(ys)
        for n in order[pos:]:
            ys[n] = model.favi(n, ys)
        run.init(i)
        desc = g.descendants(i)
        for k in range(cfg.steps):
            if k > 0 and cfg.reinit == "per_step":
                for d in desc:
                    ys[d] = model.favi(d, ys)
            grad = windowed_gradient(model, ys, i, window)
            run.charge()
            ys[i] = ys[i] + alpha * grad
            run.ascent(i)
            run.check(ys, i)
    return run.finish(ys)


# ---------------------------------------------------------------------------
# accurate SAVI
# ---------------------------------------------------------------------------


class _Init(NamedTuple):
    node: int
    before: list


class _Step(NamedTuple):
    node: int
    before: list
    sub_tape: list
    adj: list  # gradient of the reduced objective at ``before`` (all nodes)


class _DagEngine:
    """Recursive forward schedule plus reverse sweep.

    ``forward(i, ys)`` re-initializes and optimizes every child of ``i`` (in
    topological order), each child step driven by the recursively computed
    hypergradient.  It records a tape so ``backward`` can return the gradient
    of ``L(final state)`` w.r.t. every entry of the starting state.

    The backward recursion per child step is
    ``a^k = a^{k+1} + alpha H^T a_c^{k+1}`` where ``H`` is the Hessian of the
    child's reduced objective (its descendants re-optimized).  For a child
    without children that is the Hessian of ``L`` itself (analytic, or the
    one-sided difference of gradients); otherwise it is a central difference
    of hypergradients, whose step widens with the node's height in
    ``finite_difference`` mode (see :func:`default_fd_step`).
    """

    def __init__(self, model, cfg, run):
        self.model = model
        self.graph = model.graph
        self.cfg = cfg
        self.run = run
        self.alpha = cfg.learning_rate
        self.height = [0] * self.graph.node_count
        for n in reversed(self.graph.topo_order):
            kids = self.graph.children(n)
            self.height[n] = 1 + max(self.height[k] for k in kids) if kids else 0

    def forward(self, i, ys, live):
        ys = list(ys)
        tape = []
        for c in self.graph.children(i):
            before = ys
            ys = list(ys)
            ys[c] = self.model.favi(c, before)
            tape.append(_Init(c, before))
            if live:
                self.run.init(c)
            for _ in range(self.cfg.steps):
                before = ys
                settled, sub_tape, adj = self.reduced_grad(c, before, live)
                ys = list(settled)
                ys[c] = before[c] + self.alpha * adj[c]
                tape.append(_Step(c, before, sub_tape, adj))
                if live:
                    self.run.ascent(c)
                self.run.check(ys, c)
        return ys, tape

    def reduced_grad(self, c, ys, live):
        settled, tape = self.forward(c, ys, live)
        self.run.charge()
        adj = self.backward(tape, self.model.grad_all(settled))
        if live and self.cfg.trace_backward:
            self.run.event(c, "backward")
        return settled, tape, adj

    def backward(self, tape, adj):
        adj = list(adj)
        for op in reversed(tape):
            if isinstance(op, _Init):
                u = adj[op.node]
                for p, v in self.model.favi_vjp(op.node, op.before, u).items():
                    adj[p] = adj[p] + v
                adj[op.node] = np.zeros_like(u)
            else:
                hv = self.reduced_hvp(op, adj[op.node])
                if op.sub_tape:
                    adj = self.backward(op.sub_tape, adj)
                adj = [a + self.alpha * h for a, h in zip(adj, hv)]
        return adj

    def reduced_hvp(self, op, u):
        c, before = op.node, op.before
        if not np.any(u):
            return [np.zeros_like(a) for a in op.adj]
        leaf = self.graph.is_leaf(c)
        if leaf and self.cfg.hvp_mode == "analytic":
            self.run.charge()
            return self.model.hvp_column(before, c, u)
        height = self.height[c] if self.cfg.hvp_mode == "finite_difference" else 0
        r = default_fd_step(before[c], u, self.cfg.fd_step, height)
        plus = self._probe(c, before, r * u)
        if leaf:
            return [(p - b) / r for p, b in zip(plus, op.adj)]
        minus = self._probe(c, before, -r * u)
        return [(p - m) / (2.0 * r) for p, m in zip(plus, minus)]

    def _probe(self, c, ys, delta):
        pert = list(ys)
        pert[c] = ys[c] + delta
        if self.graph.is_leaf(c):
            self.run.charge()
            return self.model.grad_all(pert)
        return self.reduced_grad(c, pert, live=False)[2]

    def settle(self, ys):
        for c in self.graph.children(ROOT):
            ys, _ = self.forward(c, ys, live=False)
        return ys


def savi_accurate_dag(model, cfg: SaviConfig, state=None):
    """Accurate SAVI on an arbitrary DAG via the recursive schedule.

    Every node is first given its amortized value (silently) so that nodes
    read before their own re-initialization hold a defined value; then the
    recursion starts from the synthetic root.  ``cfg.settle_final``
    re-optimizes descendants once more for the final ancestor values.
    """
    _expect(cfg, "accurateDag", "accurate2")
    run, ys = _start(model, cfg, state, init_events=False)
    engine = _DagEngine(model, cfg, run)
    ys, _ = engine.forward(ROOT, ys, live=True)
    if cfg.settle_final:
        ys = engine.settle(ys)
    return run.finish(ys)


def grad_dag(model, state, i, cfg: SaviConfig):
    """Hypergradient ``dL(y_<=i, y_>i^K) / dy_i`` at ``state`` (descendants of
    ``i`` are re-initialized and re-optimized internally)."""
    run = _Run(model, cfg, state.copy())
    engine = _DagEngine(model, cfg, run)
    _, _, adj = engine.reduced_grad(i, list(_values(state)), live=False)
    return adj[i]


def inner_forward(model, state, i, cfg: SaviConfig):
    """Latent values after re-initializing and re-optimizing the descendants
    of ``i`` with the exact accurate-SAVI schedule.  No derivatives of the
    outer level are taken."""
    run = _Run(model, cfg, LatentState.zeros(model.graph))
    ys, _ = _DagEngine(model, cfg, run).forward(i, list(_values(state)), live=False)
    return ys


# -- literal two-level procedure ---------------------------------------------


def _grad_2level(model, y1, cfg, run, live):
    alpha = cfg.learning_rate
    ys = [np.zeros(0), y1, None]
    ys[2] = model.favi(2, ys)
    init_values = list(ys)
    if live:
        run.init(2)
    history = []
    for _ in range(cfg.steps):
        history.append(list(ys))
        run.charge()
        g2 = model.grad_all(ys)[2]
        ys = [ys[0], ys[1], ys[2] + alpha * g2]
        if live:
            run.ascent(2)
        run.check(ys, 2)
    run.charge()
    final = model.grad_all(ys)
    y1bar, y2bar = final[1], final[2]
    for before in reversed(history):
        if not np.any(y2bar):
            continue
        if cfg.hvp_mode == "analytic":
            run.charge()
            col = model.hvp_column(before, 2, y2bar)
            h12, h22 = col[1], col[2]
        else:
            r = default_fd_step(before[2], y2bar, cfg.fd_step)
            pert = [before[0], before[1], before[2] + r * y2bar]
            run.charge(2)
            gp, gb = model.grad_all(pert), model.grad_all(before)
            h12, h22 = (gp[1] - gb[1]) / r, (gp[2] - gb[2]) / r
        y1bar = y1bar + alpha * h12
        y2bar = y2bar + alpha * h22
    y1bar = y1bar + model.favi_vjp(2, init_values, y2bar)[1]
    if live and cfg.trace_backward:
        run.event(1, "backward")
    return y1bar, ys


def _check_two_level(model):
    g = model.graph
    if g.n_latents != 2 or g.edges != ((1, 2),):
        raise ConfigInvalid("two-level SAVI needs a model whose graph is exactly 1 -> 2")


def grad_2level(model, y1, cfg: SaviConfig):
    """Hypergradient ``dL(y1, y2^K) / dy1`` where ``y2`` is re-initialized from
    ``y1`` and ascended ``K`` steps."""
    _check_two_level(model)
    run = _Run(model, cfg, LatentState.zeros(model.graph))
    return _grad_2level(model, np.asarray(y1, dtype=float), cfg, run, live=False)[0]


def savi_accurate_2level(model, cfg: SaviConfig, state=None):
    """Accurate SAVI for a two-level latent ``y1 -> y2``."""
    _expect(cfg, "accurate2", "accurateDag")
    _check_two_level(model)
    run, ys = _start(model, cfg, state, init_events=False)
    ys = list(ys)
    ys[1] = model.favi(1, ys)
    run.init(1)
    for _ in range(cfg.steps):
        grad, inner = _grad_2level(model, ys[1], cfg, run, live=True)
        ys = [inner[0], ys[1] + cfg.learning_rate * grad, inner[2]]
        run.ascent(1)
        run.check(ys, 1)
    if cfg.settle_final:
        quiet = _Run(model, cfg, LatentState.zeros(model.graph))
        ys = _DagEngine(model, cfg, quiet).settle(ys)
    return run.finish(ys)


# ---------------------------------------------------------------------------


def run_savi(model, cfg: SaviConfig, state=None):
    """Dispatch on ``cfg.variant``.  Floating-point overflow warnings are
    silenced here: a blow-up surfaces as :class:`DivergenceDetected` instead."""
    funcs = {
        "naive": savi_naive,
        "accurate2": savi_accurate_2level,
        "accurateDag": savi_accurate_dag,
        "approx": savi_approx,
        "approxScalable": savi_approx,
    }
    with np.errstate(over="ignore", invalid="ignore"):
        return funcs[cfg.variant](model, cfg, state)


def favi_only(model):
    """Amortized inference alone (the K = 0 baseline)."""
    return favi_state(model)
