"""Intensity-based registration baseline (CMA-ES over x, y, alpha).

Runs gradient correlation and mutual information from the same initial
estimates the landmark estimator receives, and writes one row per trial.

    python scripts/registration_baseline.py --records 25 --trials 2 --budget 400
"""
import argparse
import logging
from pathlib import Path

import numpy as np

from xrpose.phantoms import build_phantom, nominal_poses, validity_polygons
from xrpose.plots import emit_plots
from xrpose.registration import RegistrationConfig, registration_trials, trial_rows_csv
from xrpose.sampling import EVALUATION_SPECS, generate_dataset

log = logging.getLogger("registration")


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--records", type=int, default=25)
    p.add_argument("--trials", type=int, default=2)
    p.add_argument("--budget", type=int, default=400, help="renders per registration")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="results/registration")
    a = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)

    bone = build_phantom(0, "perlin-bone")
    recs = generate_dataset(bone, "screw", nominal_poses("perlin-bone", "screw"), EVALUATION_SPECS,
                            2 * a.records, validity_polygons(bone), seed=a.seed + 13, split="test")
    recs = [r for r in recs if r.on_detector and abs(r.pose.tau) < 80][:a.records]
    rows = registration_trials(recs, lambda r: bone, ("gc", "mi"), a.trials, a.seed,
                               RegistrationConfig(max_renders=a.budget))
    trial_rows_csv(rows, out / "registration.csv", with_runtime=True)

    groups = {}
    for m in ("gc", "mi"):
        sel = [r for r in rows if r["metric"] == m]
        final = np.array([r["final_position_mm"] for r in sel])
        log.info("%s: improved %d/%d, median position %.3f mm -> %.3f mm, median %.1f s per trial", m,
                 sum(r["improved"] for r in sel), len(sel), np.median([r["init_position_mm"] for r in sel]),
                 np.median(final), np.median([r["runtime_s"] for r in sel]))
        groups[f"registration-{m}"] = {"position_mm": final,
                                       "forward_angle_deg": [r["final_forward_angle_deg"] for r in sel]}
    emit_plots(groups, out)


if __name__ == "__main__":
    main()
