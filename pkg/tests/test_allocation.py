import json
import warnings

import numpy as np
import pytest
import sympy
from conftest import make_model, rel_err

from savi_alloc.allocation import (
    AllocationReport,
    LambdaGrid,
    LambdaMap,
    OmegaSchedule,
    brute_force_optimal_lambda,
    dependency_matrices,
    encode_with_lambda,
    equivalent_lambda_map,
    lambda_domain_allocate,
    lambda_from_dependencies,
    oeu_baseline,
)
from savi_alloc.errors import ConfigInvalid, DegenerateGradient, GuardExceeded, NonPositiveLambda
from savi_alloc.graph import diamond
from savi_alloc.model import GopModel, LatentState, ModelSpec, favi_state
from savi_alloc.savi import SaviConfig, savi_accurate_dag, savi_approx, savi_naive


def settled_state(model, steps=40, lr=0.05):
    state, _ = savi_approx(model, SaviConfig(variant="approx", steps=steps, learning_rate=lr))
    return state


class TestDependencies:
    def test_decoupled_model_has_no_dependencies(self):
        model = GopModel(ModelSpec.random(4, 2, 3, seed=1).decoupled())
        for i in (1, 2, 3):
            dep = dependency_matrices(model, favi_state(model), i)
            assert all(v == 0.0 for v in dep.rate_dep.values())
            for q in dep.quality_dep.values():
                np.testing.assert_array_equal(q, 0.0)

    def test_next_frame_rate_dependency_by_perturbation(self):
        model = make_model(n=3, d=2, m=2, seed=4, nonlinearity="tanh")
        ys = favi_state(model).y
        h = 1e-6

        def rates(v):
            zs = list(ys)
            zs[1] = v
            for n in (2, 3):
                zs[n] = model.favi(n, zs)
            return model.objective(zs).rates

        cols = [(rates(ys[1] + h * e) - rates(ys[1] - h * e)) / (2 * h) for e in np.eye(2)]
        jac = np.column_stack(cols)  # rows: frames, columns: coordinates of y_1
        expected = float(jac[1] @ (1.0 / jac[0]))
        dep = dependency_matrices(model, ys, 1)
        assert dep.rate_dep[2] == pytest.approx(expected, rel=1e-3)

    def test_scalar_closed_form(self):
        spec = ModelSpec.random(2, 1, 1, seed=3).with_fitted_encoder(0.3)
        model = GopModel(spec)
        ys = settled_state(model).y
        a, w, u, f = (float(getattr(spec, k)[0, 0]) for k in "AWUF")
        x1, x2 = model.frames.x[:, 0]
        y1, y2 = ys[1][0], ys[2][0]
        # frame 2 re-initialized from y1: d y2 / d y1 = f
        e1 = x1 - w * y1
        e2 = x2 - w * y2 - u * y1
        dr1, dr2 = y1, (y2 - a * y1) * (f - a)
        dd1, dd2 = -2 * e1 * w, -2 * e2 * (w * f + u)
        dep = dependency_matrices(model, ys, 1)
        assert dep.rate_dep[2] == pytest.approx(dr2 / dr1, rel=1e-10, abs=1e-12)
        assert dep.quality_dep[2][0, 0] == pytest.approx(dd2 / dd1, rel=1e-10, abs=1e-12)

    def test_degenerate_denominator(self):
        model = make_model(n=2, d=2, m=2)
        ys = favi_state(model).y
        ys[1] = np.zeros(2)
        with pytest.raises(DegenerateGradient) as info:
            dependency_matrices(model, ys, 1)
        assert ("rate", 0) in info.value.indices
        dep = dependency_matrices(model, ys, 1, clamp=True)
        assert np.isfinite(dep.rate_dep[2])

    def test_guard(self):
        model = make_model(n=2, d=8, m=9)
        with pytest.raises(GuardExceeded):
            dependency_matrices(model, favi_state(model), 1)

    def test_diamond_runs(self):
        model = make_model(n=4, d=2, m=2, graph=diamond(2), seed=3)
        dep = dependency_matrices(model, settled_state(model), 1)
        assert sorted(dep.rate_dep) == [2, 3, 4]


class TestEquivalentLambda:
    def test_last_frame_keeps_lambda0(self):
        model = make_model(n=3, d=2, m=2, seed=5, lambda0=np.array([0.5, 2.0]))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonPositiveLambda)
            lam = equivalent_lambda_map(model, settled_state(model))
        np.testing.assert_array_equal(lam.frame(3), [0.5, 2.0])

    def test_single_frame(self):
        model = make_model(n=1, d=2, m=2)
        np.testing.assert_array_equal(equivalent_lambda_map(model, favi_state(model)).values, [[1.0, 1.0]])

    def test_decoupled(self):
        model = GopModel(ModelSpec.random(3, 2, 2, seed=2, lambda0=0.3).decoupled())
        lam = equivalent_lambda_map(model, settled_state(model))
        np.testing.assert_allclose(lam.values, 0.3, rtol=0, atol=0)

    def test_with_dependencies(self):
        model = make_model(n=3, d=1, m=1, seed=6)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", NonPositiveLambda)
            lam, deps = equivalent_lambda_map(model, settled_state(model), with_dependencies=True)
        assert [d.source for d in deps] == [1, 2, 3]
        expected = (1 + deps[0].quality_sum(1)[0, 0]) / (1 + deps[0].rate_sum)
        assert lam.frame(1)[0] == pytest.approx(expected, rel=1e-14)

    def test_nonpositive_warning(self):
        hits = 0
        for seed in range(10):
            model = GopModel(ModelSpec.random(2, 1, 1, seed=seed).with_fitted_encoder(0.3))
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                lam = equivalent_lambda_map(model, favi_state(model))
            if not lam.is_positive:
                hits += 1
                assert any(issubclass(w.category, NonPositiveLambda) for w in caught)
        assert hits > 0


class TestLambdaDomainIdentity:
    @pytest.mark.parametrize("omega", [sympy.Rational(1, 2), sympy.Integer(1), sympy.Integer(2)])
    def test_numeric_omegas(self, omega):
        lam0 = sympy.Symbol("lambda0", positive=True)
        m = 3
        q = (omega - 1) * sympy.eye(m)
        out = lambda_from_dependencies(np.array([lam0] * m, dtype=object), 0, np.array(q.tolist(), dtype=object))
        for entry in out:
            assert sympy.simplify(entry - omega * lam0) == 0

    def test_symbolic_omega(self):
        lam0, w = sympy.symbols("lambda0 omega", positive=True)
        q = np.array([[w - 1]], dtype=object)
        out = lambda_from_dependencies(np.array([lam0], dtype=object), 0, q)
        assert sympy.simplify(out[0] - w * lam0) == 0

    def test_floats_exact(self):
        for w in (0.5, 1.0, 2.0):
            out = lambda_from_dependencies(np.full(4, 0.7), 0.0, (w - 1) * np.eye(4))
            np.testing.assert_array_equal(out, w * 0.7)


class TestEncodeWithLambda:
    def test_matches_per_frame_ascent_when_decoupled(self):
        model = GopModel(ModelSpec.random(3, 2, 3, seed=1).decoupled())
        rep = encode_with_lambda(model, LambdaMap.uniform(model.lambda0, 3), inner_steps=15, learning_rate=0.05)
        state, _ = savi_naive(model, SaviConfig(variant="naive", steps=15, learning_rate=0.05))
        np.testing.assert_allclose(rep.state.stacked(), state.stacked(), rtol=1e-12)

    def test_larger_lambda_lowers_distortion(self):
        model = make_model(n=3, d=2, m=3, seed=2)
        prev = np.inf
        for s in (0.5, 1.0, 2.0, 4.0, 8.0):
            lam = np.ones((3, 3))
            lam[1] = s
            d = encode_with_lambda(model, lam, inner_steps=300).distortion[1].sum()
            assert d <= prev + 1e-12
            prev = d

    def test_zero_steps_is_favi(self):
        model = make_model(n=3)
        rep = encode_with_lambda(model, LambdaMap.uniform(model.lambda0, 3), inner_steps=0)
        np.testing.assert_array_equal(rep.state.stacked(), favi_state(model).stacked())

    def test_cost_non_increasing_in_inner_steps(self):
        # separable (hence jointly concave) instances; with cross-frame coupling
        # the greedy frame-by-frame protocol need not be monotone in GoP cost
        for seed in range(5):
            model = GopModel(ModelSpec.random(3, 2, 3, seed=seed).decoupled())
            lam = LambdaMap.uniform(model.lambda0, 3)
            costs = [encode_with_lambda(model, lam, inner_steps=k).gop_cost for k in (10, 50, 200)]
            assert costs[0] >= costs[1] - 1e-12 >= costs[2] - 2e-12

    def test_rejects_bad_maps(self):
        model = make_model(n=2, m=2)
        with pytest.raises(ValueError):
            encode_with_lambda(model, np.array([[1.0, -1.0], [1.0, 1.0]]))
        with pytest.raises(ValueError):
            encode_with_lambda(model, np.ones((3, 2)))
        with pytest.raises(ConfigInvalid):
            encode_with_lambda(model, np.ones((2, 2)), learning_rate=-1.0)


class TestLambdaDomain:
    def test_unit_omega(self):
        model = make_model(n=3, m=2, lambda0=np.array([0.4, 1.5]))
        rep = lambda_domain_allocate(model, np.ones(3), inner_steps=5)
        np.testing.assert_array_equal(rep.lambda_map.values, np.tile([0.4, 1.5], (3, 1)))

    def test_halving(self):
        model = make_model(n=3, m=2)
        a = lambda_domain_allocate(model, [1.0, 2.0, 3.0], inner_steps=0)
        b = lambda_domain_allocate(model, [0.5, 1.0, 1.5], inner_steps=0)
        np.testing.assert_array_equal(b.lambda_map.values, 0.5 * a.lambda_map.values)

    def test_negative_omega(self):
        with pytest.raises(ValueError):
            OmegaSchedule([1.0, -1.0])

    def test_best_omega_not_better_than_savi(self):
        for seed in range(5):
            model = GopModel(ModelSpec.random(4, 4, 8, seed=seed).with_fitted_encoder(0.3))
            best = min(
                lambda_domain_allocate(model, [w, w, w, 1.0]).gop_cost for w in (0.5, 1.0, 1.5, 2.0, 2.5, 3.0)
            )
            savi = -model.total(settled_state(model, steps=50, lr=0.02))
            assert best > savi - 1e-6


class TestBruteForce:
    def test_grid(self):
        np.testing.assert_allclose(LambdaGrid(0.5, 1.0, 0.1).factors(), [0.5, 0.6, 0.7, 0.8, 0.9, 1.0])
        assert len(LambdaGrid(0.5, 1.0, 0.1).refined().factors()) == 11
        with pytest.raises(ConfigInvalid):
            LambdaGrid(0.0, 1.0, 0.1)

    def test_decoupled_picks_lambda0(self):
        model = GopModel(ModelSpec.random(2, 1, 1, seed=3, lambda0=1.0).decoupled())
        for grid in (LambdaGrid(0.5, 1.5, 0.1), LambdaGrid(0.2, 3.0, 0.04)):
            rep = brute_force_optimal_lambda(model, grid, inner_steps=3)
            np.testing.assert_allclose(rep.lambda_map.values, [[1.0], [1.0]])

    def test_refinement_never_hurts(self):
        model = make_model(n=2, d=1, m=1, seed=7)
        coarse = LambdaGrid(0.2, 3.0, 0.2)
        a = brute_force_optimal_lambda(model, coarse, inner_steps=3)
        b = brute_force_optimal_lambda(model, coarse.refined(), inner_steps=3)
        assert b.gop_cost <= a.gop_cost

    def test_positive_quality_dependency_raises_first_lambda(self):
        model = make_model(n=2, d=1, m=1, seed=6)
        state, _ = savi_accurate_dag(
            model, SaviConfig(variant="accurateDag", steps=150, learning_rate=0.2, settle_final=True)
        )
        assert dependency_matrices(model, state, 1).quality_sum(1)[0, 0] > 0
        rep = brute_force_optimal_lambda(model, LambdaGrid(0.1, 4.0, 0.1), inner_steps=3)
        assert rep.lambda_map.frame(1)[0] > model.lambda0[0]

    def test_guard(self):
        with pytest.raises(GuardExceeded):
            brute_force_optimal_lambda(make_model(n=4, d=1, m=1))
        with pytest.raises(GuardExceeded):
            brute_force_optimal_lambda(make_model(n=2, d=1, m=2))

    def test_report_invariant(self):
        model = make_model(n=2, d=1, m=1, seed=1)
        rep = brute_force_optimal_lambda(model, LambdaGrid(0.5, 1.5, 0.25), inner_steps=3)
        assert abs(rep.gop_cost - rep.recomputed_cost()) < 1e-10
        assert len(rep.grid_index) == 2


class TestOeu:
    def test_zero_steps(self):
        model = make_model(n=3)
        rep = oeu_baseline(model, steps=0)
        np.testing.assert_array_equal(rep.state.stacked(), favi_state(model).stacked())

    def test_improves_objective(self):
        for seed in range(10):
            model = make_model(n=4, d=2, m=3, seed=seed)
            rep = oeu_baseline(model, steps=10, learning_rate=0.001)
            assert rep.objective >= model.total(favi_state(model))

    def test_gradient_matches_finite_differences(self):
        from savi_alloc.allocation import _FrameEncoders

        model = make_model(n=3, d=2, m=3, seed=1, nonlinearity="tanh")
        enc = _FrameEncoders(model)
        _, dE, dF = enc.gradient()
        h = 1e-6
        for i in (1, 2, 3):
            for mats, grads in ((enc.E, dE), (enc.F, dF)):
                fd = np.zeros_like(mats[i])
                for idx in np.ndindex(*mats[i].shape):
                    base = mats[i][idx]
                    mats[i][idx] = base + h
                    up = model.total(enc.encode()[0])
                    mats[i][idx] = base - h
                    down = model.total(enc.encode()[0])
                    mats[i][idx] = base
                    fd[idx] = (up - down) / (2 * h)
                assert rel_err(grads[i], fd) < 1e-6

    def test_bad_rate(self):
        with pytest.raises(ConfigInvalid):
            oeu_baseline(make_model(), learning_rate=0.0)


class TestReport:
    def test_json_fields(self):
        model = make_model(n=2, d=1, m=2, seed=2)
        lam, deps = equivalent_lambda_map(model, settled_state(model), clamp=True, with_dependencies=True)
        rep = AllocationReport.from_state(model, settled_state(model), lam, deps)
        data = json.loads(rep.to_json())
        assert set(data) == {"lambda", "rate", "distortion", "gop_cost", "dependency"}
        assert np.array(data["distortion"]).shape == (2, 2)
        assert data["dependency"][0]["quality_dep"]["2"] == deps[0].quality_dep[2].tolist()

    def test_cost_reconstruction(self):
        for seed in range(10):
            model = make_model(n=3, d=2, m=3, seed=seed, nonlinearity="tanh")
            rep = encode_with_lambda(model, LambdaMap.uniform(model.lambda0, 3), inner_steps=20)
            assert abs(rep.gop_cost - rep.recomputed_cost()) < 1e-10
            assert rep.objective == pytest.approx(model.total(rep.state), abs=1e-10)
