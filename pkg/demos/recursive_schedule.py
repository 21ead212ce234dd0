"""How the recursive accurate-SAVI schedule unfolds on a DAG and what it costs.

Prints the chain(3), K=2 event list next to the per-node ascent counts and
shows the K^depth growth that makes the approximate variant necessary.
"""

from savi_alloc import GopModel, ModelSpec, SaviConfig, savi_accurate_dag, savi_approx
from savi_alloc.graph import chain, full_reference


def main():
    spec = ModelSpec.random(3, 2, 3, seed=0)
    for name, graph in (("chain(3)", chain(3, 2)), ("full_reference(3)", full_reference(3, 2))):
        model = GopModel(spec, graph=graph)
        state, trace = savi_accurate_dag(model, SaviConfig(variant="accurateDag", steps=2, learning_rate=0.05))
        print(f"{name}, K=2: {len(trace)} events, ascents per node {state.eval_counter[1:].tolist()}")
        print("  " + " | ".join(f"{e.node}:{e.step}:{e.action[0]}" for e in trace))

    print("\nAscent counts on chain(N) with K=3")
    print("   N  accurate  approx")
    for n in range(1, 6):
        model = GopModel(ModelSpec.random(n, 2, 3, seed=0))
        acc, _ = savi_accurate_dag(model, SaviConfig(variant="accurateDag", steps=3, record_trace=False))
        app, _ = savi_approx(model, SaviConfig(variant="approx", steps=3, record_trace=False))
        print(f"  {n:2d}  {acc.total_evals:8d}  {app.total_evals:6d}")


if __name__ == "__main__":
    main()
