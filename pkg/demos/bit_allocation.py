"""Gradient ascent on the GoP objective as implicit bit allocation.

1. On a one-pixel, one-dimensional two-frame chain, the per-frame multiplier
   map implied by the accurate SAVI optimum is compared with the best map an
   exhaustive grid search can find.
2. On a four-frame chain, frame-level baselines (amortized encoding, the
   lambda-domain rule, online encoder updates) are compared with approximate
   SAVI by GoP rate-distortion cost.
"""

import numpy as np

from savi_alloc import (
    GopModel,
    LambdaGrid,
    LambdaMap,
    ModelSpec,
    SaviConfig,
    brute_force_optimal_lambda,
    encode_with_lambda,
    equivalent_lambda_map,
    lambda_domain_allocate,
    oeu_baseline,
    savi_accurate_dag,
    savi_approx,
)


def tiny_chain():
    print("Two frames, m = d = 1: equivalent map vs exhaustive search (units of lambda0)")
    grid = LambdaGrid(0.05, 4.0, 0.05)
    for seed in range(4):
        model = GopModel(ModelSpec.random(2, 1, 1, seed=seed))
        cfg = SaviConfig(variant="accurateDag", steps=150, learning_rate=0.2, settle_final=True)
        state, _ = savi_accurate_dag(model, cfg)
        lam = equivalent_lambda_map(model, state).values[:, 0]
        best = brute_force_optimal_lambda(model, grid, inner_steps=3).lambda_map.values[:, 0]
        print(f"  seed {seed}: lambda' = {np.round(lam, 3).tolist()}   grid optimum = {best.tolist()}")


def baselines(seeds=range(5)):
    print("\nFour-frame chain (d=4, m=8): GoP cost, lower is better")
    print("  seed     favi  lambda-dom       oeu    approx")
    for seed in seeds:
        model = GopModel(ModelSpec.random(4, 4, 8, seed=seed).with_fitted_encoder(0.3))
        favi = encode_with_lambda(model, LambdaMap.uniform(model.lambda0, 4), inner_steps=0).gop_cost
        dom = min(lambda_domain_allocate(model, [w, w, w, 1.0]).gop_cost for w in (0.5, 1.0, 1.5, 2.0, 2.5, 3.0))
        oeu = oeu_baseline(model, steps=10, learning_rate=0.001).gop_cost
        state, _ = savi_approx(model, SaviConfig(variant="approx", steps=50, learning_rate=0.02))
        print(f"  {seed:4d} {favi:8.3f} {dom:11.3f} {oeu:9.3f} {-model.total(state):9.3f}")


if __name__ == "__main__":
    tiny_chain()
    baselines()
