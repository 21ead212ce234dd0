"""Truncating the approximate gradient to a window of C later frames.

The error of the truncated gradient is driven by how fast information decays
along the chain, which here is the spectral radius of the prior transition.
"""

import numpy as np

from savi_alloc import GopModel, ModelSpec, favi_state, windowed_gradient


def main():
    base = ModelSpec.random(6, 4, 8, seed=0)
    print("relative error of the windowed gradient of frame 1 (N=6)")
    print("  radius   " + "  ".join(f"C={c}" for c in range(6)))
    for radius in (0.9, 0.5, 0.1):
        model = GopModel(base.with_prior_radius(radius).prior_coupled())
        ys = favi_state(model).y
        full = windowed_gradient(model, ys, 1)
        errs = [np.linalg.norm(windowed_gradient(model, ys, 1, c) - full) / np.linalg.norm(full) for c in range(6)]
        print(f"  {radius:5.1f}  " + "  ".join(f"{e:.0e}" for e in errs))


if __name__ == "__main__":
    main()
