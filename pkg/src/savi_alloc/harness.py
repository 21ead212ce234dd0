"""Experiment suites over seeded surrogate models.

Each suite turns an :class:`ExperimentConfig` into a list of
:class:`ResultRow` objects and, when ``output_path`` is set, writes
``<out>.csv``, ``<out>.json`` and (trace suite only) ``<out>.trace``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
import warnings
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import graph as graphs
from .allocation import (
    AllocationReport,
    LambdaMap,
    encode_with_lambda,
    equivalent_lambda_map,
    lambda_domain_allocate,
    oeu_baseline,
)
from .errors import ConfigInvalid, NonPositiveLambda, SaviError
from .model import GopModel, LatentState, ModelSpec, favi_state, two_level_quadratic
from .oracle import unrolled_hypergradient
from .rng import make_rng
from .savi import SaviConfig, grad_dag, hvp, run_savi, suggest_learning_rate, windowed_gradient

log = logging.getLogger(__name__)

SUITES = ("verify-gradients", "compare-variants", "allocate", "window-sweep", "density-analog", "trace")

# fields that must be given explicitly (config file or command line)
SUITE_REQUIRED = {
    "verify-gradients": ("frame_count",),
    "compare-variants": ("frame_count", "steps", "learning_rate"),
    "allocate": ("frame_count", "steps", "learning_rate"),
    "window-sweep": ("frame_count", "window", "radii"),
    "density-analog": ("steps", "learning_rate"),
    "trace": ("frame_count", "steps"),
}

GRAPHS = {
    "chain": graphs.chain,
    "diamond": lambda n, d: graphs.diamond(d),
    "full_reference": graphs.full_reference,
    "independent": graphs.independent,
}


@dataclass
class ExperimentConfig:
    """Flat experiment description; keys mirror the JSON config file.

    ``learning_rate`` may be ``"auto"``, meaning ``lr_scale`` divided by the
    largest curvature of the objective at the amortized initialization.
    """

    suite: str
    seeds: list = field(default_factory=lambda: [0])
    output_path: str | None = None
    # model
    frame_count: int = 3
    latent_dim: int = 2
    pixel_count: int = 4
    lambda0: float = 1.0
    temporal_correlation: float = 0.9
    nonlinearity: str = "linear"
    prior_radius: float = 0.8
    graph: str = "chain"
    encoder: str = "random"
    amortization_gap: float = 0.3
    # savi
    variant: str = "approx"
    variants: list = field(default_factory=lambda: ["naive", "accurateDag", "approx", "approxScalable"])
    steps: int = 5
    learning_rate: float | str = 0.05
    lr_scale: float = 1.0
    window: int | str | None = None
    hvp_mode: str = "analytic"
    fd_step: float | None = None
    reinit: str = "per_step"
    max_evals: int = 1_000_000
    settle_final: bool = False
    # two-level density analog
    level_dims: list = field(default_factory=lambda: [16, 8])
    beta: float = 10.0
    gamma: float = 1.0
    # allocation
    omega_grid: list = field(default_factory=lambda: [0.5, 1.0, 1.5, 2.0, 2.5, 3.0])
    inner_steps: int = 200
    oeu_steps: int = 10
    oeu_learning_rate: float = 0.001
    # window sweep / verification
    radii: list = field(default_factory=lambda: [0.9, 0.5, 0.1])
    check_states: int = 100

    _given: frozenset = field(default=frozenset(), repr=False, compare=False)

    @classmethod
    def from_dict(cls, data, **overrides):
        merged = {**data, **{k: v for k, v in overrides.items() if v is not None}}
        names = {f.name for f in fields(cls)} - {"_given"}
        unknown = sorted(set(merged) - names)
        if unknown:
            raise ConfigInvalid(f"unknown config field(s): {', '.join(unknown)}")
        if "suite" not in merged:
            raise ConfigInvalid("config is missing required field 'suite'")
        cfg = cls(**merged, _given=frozenset(merged))
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path, **overrides):
        try:
            data = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigInvalid(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigInvalid(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigInvalid("config file must hold a JSON object")
        return cls.from_dict(data, **overrides)

    def validate(self):
        if self.suite not in SUITES:
            raise ConfigInvalid(f"suite must be one of {SUITES}, got {self.suite!r}")
        for name in SUITE_REQUIRED[self.suite]:
            if self._given and name not in self._given:
                raise ConfigInvalid(f"suite '{self.suite}' requires field '{name}'")
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigInvalid("seeds must be a non-empty list of integers")
        if self.graph not in GRAPHS:
            raise ConfigInvalid(f"graph must be one of {tuple(GRAPHS)}")
        if self.encoder not in ("random", "fitted"):
            raise ConfigInvalid("encoder must be 'random' or 'fitted'")
        if self.learning_rate != "auto" and not (
            isinstance(self.learning_rate, (int, float)) and self.learning_rate > 0
        ):
            raise ConfigInvalid("learning_rate must be positive or 'auto'")
        for v in self.variants:
            SaviConfig(variant=v)  # raises ConfigInvalid on an unknown name
        self.savi_config(self.variant, 0.1)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out.pop("_given")
        return out

    # -- builders -------------------------------------------------------

    def spec(self, seed, prior_radius=None):
        spec = ModelSpec.random(
            self.frame_count,
            self.latent_dim,
            self.pixel_count,
            lambda0=self.lambda0,
            temporal_correlation=self.temporal_correlation,
            seed=seed,
            nonlinearity=self.nonlinearity,
            prior_radius=self.prior_radius if prior_radius is None else prior_radius,
        )
        if self.encoder == "fitted":
            spec = spec.with_fitted_encoder(self.amortization_gap)
        return spec

    def model(self, seed):
        spec = self.spec(seed)
        return GopModel(spec, graph=GRAPHS[self.graph](self.frame_count, self.latent_dim))

    def savi_config(self, variant, learning_rate, record_trace=False):
        return SaviConfig(
            variant=variant,
            steps=self.steps,
            learning_rate=learning_rate,
            window=self.window,
            hvp_mode=self.hvp_mode,
            fd_step=self.fd_step,
            record_trace=record_trace,
            reinit=self.reinit,
            max_evals=self.max_evals,
            settle_final=self.settle_final,
        )

    def resolve_rate(self, model):
        if self.learning_rate == "auto":
            return suggest_learning_rate(model, scale=self.lr_scale)
        return float(self.learning_rate)


@dataclass
class ResultRow:
    suite: str
    seed: int
    variant: str
    K: int
    alpha: float
    C: str
    final_objective: float
    gop_cost: float
    eval_count: int
    wall_time_ms: float
    metric: float = float("nan")
    detail: str = ""


ROW_FIELDS = [f.name for f in fields(ResultRow)]
_INT_FIELDS = {"seed", "K", "eval_count"}
_FLOAT_FIELDS = {"alpha", "final_objective", "gop_cost", "wall_time_ms", "metric"}


def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_csv(rows, path):
    """Write ``rows`` as CSV (header, then one line per row).  Floats use the
    shortest round-trip representation."""
    rows = list(rows)
    if not rows:
        raise ValueError("emit_csv needs at least one row")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        for r in rows:
            w.writerow([_fmt(getattr(r, name)) for name in ROW_FIELDS])


def read_csv(path):
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {}
            for k, v in rec.items():
                kw[k] = int(v) if k in _INT_FIELDS else float(v) if k in _FLOAT_FIELDS else v
            out.append(ResultRow(**kw))
    return out


def _window_label(window):
    return "full" if window is None else str(window)


class _Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.ms = (time.perf_counter() - self.t0) * 1e3


def _row(cfg, seed, variant, alpha, objective, evals, ms, metric=float("nan"), detail="", window=None):
    return ResultRow(
        suite=cfg.suite,
        seed=int(seed),
        variant=variant,
        K=cfg.steps,
        alpha=float(alpha),
        C=_window_label(cfg.window if window is None else window),
        final_objective=float(objective),
        gop_cost=float(-objective),
        eval_count=int(evals),
        wall_time_ms=float(ms),
        metric=float(metric),
        detail=detail,
    )


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def _fd_grad(model, ys, h=1e-5):
    out = []
    for n in range(1, len(ys)):
        g = np.empty_like(ys[n])
        for c in range(ys[n].size):
            p, m = list(ys), list(ys)
            p[n] = ys[n].copy()
            m[n] = ys[n].copy()
            p[n][c] += h
            m[n][c] -= h
            g[c] = (model.total(p) - model.total(m)) / (2 * h)
        out.append(g)
    return np.concatenate(out)


def _suite_verify(cfg, seed, extras):
    model = cfg.model(seed)
    rng = make_rng(seed, stream="verify-states")
    base = favi_state(model)
    rows = []
    with _Timer() as t:
        worst_g = 0.0
        worst_h = 0.0
        for _ in range(cfg.check_states):
            ys = [np.zeros(0)] + [y + rng.standard_normal(y.shape) for y in base.y[1:]]
            analytic = np.concatenate(model.grad_all(ys)[1:])
            worst_g = max(worst_g, _rel(analytic, _fd_grad(model, ys)))
            j = int(rng.integers(1, model.graph.node_count))
            i = int(rng.integers(1, model.graph.node_count))
            v = rng.standard_normal(ys[j].shape)
            a = hvp(model, ys, i, j, v, mode="analytic")
            f = hvp(model, ys, i, j, v, mode="finite_difference")
            if np.linalg.norm(a) > 1e-8:
                worst_h = max(worst_h, _rel(f, a))
    rows.append(_row(cfg, seed, "gradient", 0.0, model.total(base.y), 0, t.ms, worst_g, "max rel err vs central FD"))
    rows.append(_row(cfg, seed, "hvp", 0.0, model.total(base.y), 0, t.ms, worst_h, "max rel err FD vs analytic"))
    alpha = cfg.resolve_rate(model)
    scfg = cfg.savi_config("accurateDag", alpha)
    first = model.graph.topo_order[0]
    with _Timer() as t:
        hg = grad_dag(model, base, first, scfg)
        err = _rel(hg, unrolled_hypergradient(model, base, first, scfg))
    rows.append(_row(cfg, seed, "hypergradient", alpha, model.total(base.y), 0, t.ms, err, f"node {first}"))
    return rows


def _savi_row(cfg, seed, model, variant, alpha):
    with _Timer() as t:
        state, _ = run_savi(model, cfg.savi_config(variant, alpha))
    return _row(cfg, seed, variant, alpha, model.total(state.y), state.total_evals, t.ms), state


def _suite_compare(cfg, seed, extras):
    model = cfg.model(seed)
    alpha = cfg.resolve_rate(model)
    return [_savi_row(cfg, seed, model, v, alpha)[0] for v in cfg.variants]


def _suite_density(cfg, seed, extras):
    model = two_level_quadratic(
        tuple(cfg.level_dims), seed=seed, beta=cfg.beta, gamma=cfg.gamma, amortization_gap=cfg.amortization_gap
    )
    alpha = cfg.resolve_rate(model)
    favi = favi_state(model)
    rows = [_row(cfg, seed, "favi", alpha, model.total(favi.y), 0, 0.0)]
    for v in ("naive", "approx", "accurate2"):
        rows.append(_savi_row(cfg, seed, model, v, alpha)[0])
    return rows


def _report_row(cfg, seed, name, report, evals, ms, alpha=0.0):
    return _row(cfg, seed, name, alpha, -report.gop_cost, evals, ms)


def _suite_allocate(cfg, seed, extras):
    model = cfg.model(seed)
    alpha = cfg.resolve_rate(model)
    rows = []
    reports = {}
    n = model.graph.n_latents
    with _Timer() as t:
        favi = encode_with_lambda(model, LambdaMap.uniform(model.lambda0, n), inner_steps=0)
    rows.append(_report_row(cfg, seed, "favi", favi, 0, t.ms))
    reports["favi"] = favi
    with _Timer() as t:
        best = None
        for w in cfg.omega_grid:
            rep = lambda_domain_allocate(model, _omega_schedule(model.graph, w), cfg.inner_steps)
            if best is None or rep.gop_cost < best.gop_cost:
                best = rep
    rows.append(_report_row(cfg, seed, "lambda-domain", best, 0, t.ms))
    reports["lambda-domain"] = best
    with _Timer() as t:
        oeu = oeu_baseline(model, cfg.oeu_steps, cfg.oeu_learning_rate)
    rows.append(_report_row(cfg, seed, "oeu", oeu, cfg.oeu_steps, t.ms, cfg.oeu_learning_rate))
    reports["oeu"] = oeu
    row, state = _savi_row(cfg, seed, model, cfg.variant, alpha)
    rows.append(row)
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", NonPositiveLambda)
            lam, deps = equivalent_lambda_map(model, state, with_dependencies=True)
        if caught:
            log.info("seed %s: equivalent lambda map has non-positive entries", seed)
        reports[cfg.variant] = _savi_report(model, state, lam, deps)
    except SaviError as exc:
        log.warning("seed %s: equivalent lambda map unavailable (%s)", seed, exc)
    extras.setdefault("reports", {})[str(seed)] = {k: r.to_dict() for k, r in reports.items()}
    return rows


def _omega_schedule(graph, w):
    """One grid value for every frame that is referenced later; frames
    without successors keep ``lambda0``."""
    return np.array([1.0 if graph.is_leaf(i) else float(w) for i in range(1, graph.node_count)])


def _savi_report(model, state, lam, deps):
    return AllocationReport.from_state(model, state, lam, deps)


def _suite_window(cfg, seed, extras):
    rows = []
    node = 1
    for r in cfg.radii:
        spec = cfg.spec(seed, prior_radius=r).prior_coupled()
        model = GopModel(spec, graph=GRAPHS[cfg.graph](cfg.frame_count, cfg.latent_dim))
        state = favi_state(model)
        with _Timer() as t:
            full = windowed_gradient(model, state, node)
            win = windowed_gradient(model, state, node, cfg.window)
        rows.append(
            _row(cfg, seed, "windowed", 0.0, model.total(state.y), 0, t.ms, _rel(win, full), f"radius={r!r}")
        )
    return rows


def _suite_trace(cfg, seed, extras):
    model = cfg.model(seed)
    alpha = cfg.resolve_rate(model)
    with _Timer() as t:
        state, trace = run_savi(model, cfg.savi_config("accurateDag", alpha, record_trace=True))
    extras.setdefault("traces", {})[seed] = trace
    return [_row(cfg, seed, "accurateDag", alpha, model.total(state.y), state.total_evals, t.ms, len(trace), "events")]


_SUITE_FUNCS = {
    "verify-gradients": _suite_verify,
    "compare-variants": _suite_compare,
    "allocate": _suite_allocate,
    "window-sweep": _suite_window,
    "density-analog": _suite_density,
    "trace": _suite_trace,
}


def run_suite(cfg: ExperimentConfig, write=True):
    """Run every seed of ``cfg.suite``; rows come back ordered by seed then
    variant order within the suite."""
    cfg.validate()
    func = _SUITE_FUNCS[cfg.suite]
    rows = []
    extras = {}
    for seed in cfg.seeds:
        try:
            new = func(cfg, seed, extras)
        except SaviError as exc:
            exc.args = (f"[{cfg.suite} seed={seed}] {exc.args[0] if exc.args else exc}",) + exc.args[1:]
            raise
        for r in new:
            log.info("%s seed=%d %s objective=%.6g evals=%d", r.suite, r.seed, r.variant, r.final_objective, r.eval_count)
        rows.extend(new)
    if write and cfg.output_path:
        write_outputs(cfg, rows, extras)
    return rows


def write_outputs(cfg, rows, extras=None):
    extras = extras or {}
    out = Path(cfg.output_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    emit_csv(rows, out.with_name(out.name + ".csv"))
    payload = {
        "config": cfg.to_dict(),
        "rows": [_json_row(r) for r in rows],
    }
    if "reports" in extras:
        payload["reports"] = extras["reports"]
    with open(out.with_name(out.name + ".json"), "w") as fh:
        json.dump(payload, fh, indent=2, default=_json_default)
        fh.write("\n")
    traces = extras.get("traces")
    if traces:
        first = traces[cfg.seeds[0]]
        first.write(out.with_name(out.name + ".trace"))


def _json_row(row):
    """Row as a dict; NaN (no metric) becomes ``null`` so the file stays strict JSON."""
    out = dataclasses.asdict(row)
    return {k: None if isinstance(v, float) and np.isnan(v) else v for k, v in out.items()}


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, LatentState):
        return [y.tolist() for y in obj.y]
    raise TypeError(f"cannot serialize {type(obj).__name__}")
