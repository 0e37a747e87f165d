"""Closed-loop traces on the synthetic control task for several k.

Writes one CSV per k with the per-round sup-norm of the sliding surface, the
distance of the global model to the controller's equilibrium and the global
accuracy. These are the curves behind the speed-control acceptance check.

    python scripts/reaching_curves.py [--out results/reaching] [--ks 0.1 0.3 0.5]
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from fedsa import presets
from fedsa.model import MlpModel
from fedsa.rng import INIT, RngStream
from fedsa.sim import Simulation, build_reference_library, load_data


def trace(k: float, rounds: int):
    cfg = presets.synthetic_control(k=k, rounds=rounds)
    train, test = load_data(cfg)
    dims = (cfg.dataset.n_features, *cfg.hidden, cfg.dataset.n_classes)
    init = MlpModel.uniform(dims, RngStream(cfg.seed, (INIT,)), cfg.init_scale).params
    sim = Simulation(cfg, train, test, reference=build_reference_library(cfg, train, test, init), init=init)
    rows, models = [], [sim.global_model.params.copy()]
    for _ in range(rounds):
        rec = sim.run_round()
        models.append(sim.global_model.params.copy())
        rows.append((rec.round, float(np.abs(sim.attacker.state.s).max()), rec.global_accuracy))
    eq = sim.attacker.equilibrium()
    return [(t, s, float(np.linalg.norm(models[t + 1] - eq)), a) for t, s, a in rows]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/reaching")
    ap.add_argument("--ks", type=float, nargs="+", default=[0.1, 0.3, 0.5])
    ap.add_argument("--rounds", type=int, default=100)
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k in args.ks:
        path = out / f"k{k:g}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["round", "surface_inf", "dist_to_equilibrium", "global_accuracy"])
            w.writerows((t, format(s, ".17g"), format(d, ".17g"), format(a, ".17g")) for t, s, d, a in trace(k, args.rounds))
        print(path)


if __name__ == "__main__":
    main()
