"""Acceptance checks: one test per headline property, each at its stated tolerance.

These are slow (the rectangle comparison trains ten networks).  Run alone with
``pytest tests/test_acceptance.py -v``.
"""
import math
import time

import numpy as np
import pytest
from scipy import stats

from xrpose.cli import main
from xrpose.drr import ProjectionSetup, render_window
from xrpose.estimator import EstimatorConfig
from xrpose.evaluation import run_experiment
from xrpose.geometry import angle_error, keypoints_from_pose_array, pose_array_from_keypoints
from xrpose.nn.convnet import ConvNetConfig, build_network
from xrpose.nn.gradcheck import input_gradient_check, network_gradient_check
from xrpose.nn.layers import AvgPool2, BatchNorm, Conv2D, Dense, Dropout, Flatten, MaxPool2, ReLU
from xrpose.nn.rectangle import run_head
from xrpose.oracle import OraclePredictor
from xrpose.phantoms import nominal_poses, validity_polygons
from xrpose.registration import RegistrationConfig, registration_trials
from xrpose.sampling import EVALUATION_SPECS, TRAINING_SPECS, generate_dataset
from xrpose.volume import Volume

pytestmark = pytest.mark.slow

NOMINAL = nominal_poses("perlin-bone", "screw")


def _generate(bone, count, seed, specs=EVALUATION_SPECS, split="test", render=True):
    return generate_dataset(bone, "screw", NOMINAL, specs, count, validity_polygons(bone), seed=seed, split=split,
                            render=render)


def _usable(records, count):
    """First ``count`` records that the estimator evaluates (on the detector, |tau| below the limit)."""
    limit = EstimatorConfig().tau_validity_limit
    out = [r for r in records if r.on_detector and abs(r.pose.tau) < limit][:count]
    assert len(out) == count
    return out


def test_geometry_round_trip():
    rng = np.random.default_rng(0)
    n = 10_000
    poses = np.column_stack([rng.uniform(100, 924, n), rng.uniform(100, 924, n), rng.uniform(0, 360, n),
                             rng.uniform(-80, 80, n), rng.uniform(362.8, 725.61, n)])
    t0 = time.perf_counter()
    back, clamped = pose_array_from_keypoints(keypoints_from_pose_array(poses))
    elapsed = time.perf_counter() - t0
    err = {"x_px": np.abs(back[:, 0] - poses[:, 0]), "y_px": np.abs(back[:, 1] - poses[:, 1]),
           "alpha_deg": np.abs(angle_error(back[:, 2], poses[:, 2])),
           "tau_deg": np.abs(back[:, 3] - np.abs(poses[:, 3])),  # the sign of tau is not observable
           "depth_mm": np.abs(back[:, 4] - poses[:, 4])}
    worst = {k: float(v.max()) for k, v in err.items()}
    print("worst round-trip errors", worst, f"runtime {elapsed:.3f} s")
    assert not clamped.any()
    assert elapsed < 1.0
    assert all(v <= 1e-9 for v in worst.values()), worst


def test_exact_oracle_end_to_end(bone):
    t0 = time.perf_counter()
    records = _usable(_generate(bone, 300, seed=11), 200)
    res = run_experiment(records, lambda rec, rng: OraclePredictor(rec.pose, 0.0, rng, geom=rec.geom),
                         EstimatorConfig(k_max=1), seed=0)
    elapsed = time.perf_counter() - t0
    n = len(res.values("position_mm"))
    print(f"{n} evaluated, {res.excluded_tau} excluded by tau, {res.excluded_off_detector} off detector, "
          f"{res.failed} left the image, runtime {elapsed:.1f} s")
    assert res.failed == 0 and n == 200
    assert np.all(res.values("position_mm") < 0.01)
    assert np.all(res.values("forward_angle_deg") < 0.01)
    assert np.all(res.values("depth_mm") < 0.1)
    assert elapsed < 300


def test_renderer_cube_and_superposition(bone):
    setup = ProjectionSetup()
    cube = Volume(np.full((100, 100, 100), 0.02), (1.0,) * 3, (-49.5,) * 3)
    img = render_window(cube, setup, (511, 511, 2, 2), step_mm=0.5)
    assert np.max(np.abs(img / 2.0 - 1.0)) < 0.01  # mu * 100 mm

    a = bone.data.copy()
    b = np.zeros_like(a)
    b[:, :, 40:] = a[:, :, 40:]
    a[:, :, 40:] = 0
    win = (400, 400, 200, 200)
    whole = render_window(bone, setup, win)
    parts = (render_window(Volume(a, bone.spacing, bone.origin), setup, win)
             + render_window(Volume(b, bone.spacing, bone.origin), setup, win))
    assert np.max(np.abs(whole - parts)) <= 1e-6 * np.max(np.abs(whole))


def test_gradient_check():
    toy = dict(start_channels=2, fc_base=3, outputs=3, input_shape=(1, 9, 11))
    rng = np.random.default_rng(0)
    worst = {}
    for extra in (dict(pooling="max"), dict(pooling="average", conv_reg="bn-layer", fc_reg="bn"),
                  dict(pooling="strided-last", conv_reg="bn-block", fc="4/2", fc_reg="bn-dropout10"),
                  dict(conv_reg="dropout", fc_reg="dropout")):
        net = build_network(ConvNetConfig(**toy, **extra), seed=1, dtype=np.float64)
        for k, v in network_gradient_check(net, rng.standard_normal((4, 1, 9, 11)),
                                           rng.standard_normal((4, 3))).items():
            worst[f"{extra}:{k}"] = v
    layers = [(Conv2D(2, 3, rng, dtype=np.float64), (2, 2, 7, 6)),
              (Conv2D(2, 3, rng, stride=2, dtype=np.float64), (2, 2, 7, 6)), (ReLU(), (3, 2, 4, 5)),
              (MaxPool2(), (2, 2, 6, 7)), (AvgPool2(), (2, 2, 6, 7)),
              (BatchNorm(2, dtype=np.float64), (5, 2, 3, 3)), (BatchNorm(4, dtype=np.float64), (6, 4)),
              (Dropout(0.3, np.random.default_rng(9)), (4, 6)), (Flatten(), (2, 3, 2, 2)),
              (Dense(6, 3, rng, np.float64), (4, 6))]
    for i, (layer, shape) in enumerate(layers):
        worst[f"input:{i}:{type(layer).__name__}"] = input_gradient_check(layer, rng.standard_normal(shape))
    print("largest relative error", max(worst.values()))
    assert max(worst.values()) < 1e-4, {k: v for k, v in worst.items() if v >= 1e-4}


def test_rectangle_indirect_beats_direct():
    seeds = range(5)
    results = {h: [run_head(h, seed=s) for s in seeds] for h in ("direct", "indirect")}
    for s in seeds:
        d, i = results["direct"][s], results["indirect"][s]
        print(f"seed {s}: median direct {d.median:.2f} indirect {i.median:.2f}, "
              f"near-wrap failures direct {d.wrap_count} indirect {i.wrap_count}")
    direct_wraps = sum(r.wrap_count for r in results["direct"])
    indirect_wraps = sum(r.wrap_count for r in results["indirect"])
    assert all(i.median < d.median for d, i in zip(results["direct"], results["indirect"]))
    assert direct_wraps >= 10
    assert indirect_wraps == 0


def test_noisy_oracle_iteration(bone):
    # gain 0 is the plain i.i.d. oracle; gain 1 also grows the noise with the patch's distance from the
    # standard pose, which is what makes re-centring worthwhile
    records = _usable(_generate(bone, 300, seed=12, render=False), 200)
    for gain in (0.0, 1.0):
        res = run_experiment(records, lambda rec, rng: OraclePredictor(rec.pose, 0.5, rng, geom=rec.geom,
                                                                       deviation_gain=gain),
                             EstimatorConfig(k_max=3), trials_per_record=5, seed=0)
        m1, m2, m3 = (float(np.median(res.values("position_mm", k))) for k in (1, 2, 3))
        print(f"gain {gain:g}: {len(res.values('position_mm', 3))} trials; median position error "
              f"k=1 {m1:.4f} k=2 {m2:.4f} k=3 {m3:.4f} mm")
        assert len(res.values("position_mm", 3)) == 1000
        assert m3 <= m1
        assert m2 - m3 < m1 - m2


def test_registration_harness(bone):
    records = _usable(_generate(bone, 40, seed=13), 25)
    rows = registration_trials(records, lambda r: bone, ("gc", "mi"), trials=2, seed=0,
                               cfg=RegistrationConfig(max_renders=400))
    gc = [r for r in rows if r["metric"] == "gc"]
    mi = [r for r in rows if r["metric"] == "mi"]
    improved = np.mean([r["final_position_mm"] < r["init_position_mm"] for r in gc])
    print(f"GC improved {improved:.0%}; median final GC {np.median([r['final_position_mm'] for r in gc]):.3f} mm,"
          f" MI {np.median([r['final_position_mm'] for r in mi]):.3f} mm")
    assert len(gc) == 50 and len(mi) == 50
    assert all(r["renders"] <= 400 for r in rows)
    assert all(math.isfinite(r["final_position_mm"]) for r in mi)
    assert improved >= 0.9


def test_distribution_fidelity(bone):
    pvalues = {}
    # separate seeds: offsets are standard-normal draws scaled by sigma, so a shared seed repeats them
    for specs, sigma, split, seed in ((TRAINING_SPECS, 5.0, "train", 0), (EVALUATION_SPECS, 1.0, "test", 1)):
        recs = _generate(bone, 10_000, seed=seed, specs=specs, split=split, render=False)
        sod = [r.setup.source_object_distance for r in recs]
        pvalues[f"{split} SOD"] = stats.kstest(sod, "uniform", args=(362.8, 725.61 - 362.8)).pvalue
        off = np.array([r.position - r.nominal_position for r in recs])
        for a, name in enumerate("xyz"):
            pvalues[f"{split} position {name}"] = stats.kstest(off[:, a], "norm", args=(0, sigma)).pvalue
    print({k: round(v, 4) for k, v in pvalues.items()})
    assert min(pvalues.values()) > 0.01, pvalues


def test_cli_determinism(tmp_path):
    def run(d):
        out = tmp_path / d
        main(["--seed", "4", "--out", str(out / "gen"), "generate", "--split", "test", "--count", "6"])
        main(["--seed", "4", "--out", str(out / "train"), "train", "--train-count", "60", "--test-count", "20",
              "--epochs", "2", "--channels", "2", "--fc-base", "4"])
        main(["--seed", "4", "--out", str(out / "eval"), "evaluate", "--data", str(out / "gen"), "--noise", "0.5",
              "--trials", "3"])
        return out

    a, b = run("a"), run("b")
    files = ["gen/records.csv", "train/loss_curve.csv", "train/test_errors.csv", "eval/errors.csv",
             "eval/summary.csv"]
    for f in files:
        assert (a / f).read_bytes() == (b / f).read_bytes(), f
