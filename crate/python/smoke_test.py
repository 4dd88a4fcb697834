"""Smoke test for the Python bindings.

Build the extension first, then run from the repository root:

    cargo build --release -p banach-sa-py --features extension-module
    python3 python/smoke_test.py

The script copies target/release/libbanach_sa_py.so next to itself as
banach_sa_py.so when the module is not already importable.
"""

import math
import pathlib
import shutil
import sys
import tempfile

HERE = pathlib.Path(__file__).resolve().parent
ROOT = HERE.parent


def load():
    try:
        import banach_sa_py
        return banach_sa_py
    except ImportError:
        pass
    for suffix in ("so", "dylib"):
        built = ROOT / "target" / "release" / f"libbanach_sa_py.{suffix}"
        if built.exists():
            shutil.copy(built, HERE / "banach_sa_py.so")
            sys.path.insert(0, str(HERE))
            import banach_sa_py
            return banach_sa_py
    sys.exit("extension not built; see the module docstring")


def main():
    sa = load()
    m = 65
    space = sa.Space.sup(m)
    grid = [i / (m - 1) for i in range(m)]
    offset = [0.5 * math.sin(2 * math.pi * t) for t in grid]
    problem = sa.Problem.linear_contraction(0.5, offset, space)
    assert max(abs(a - 2 * b) for a, b in zip(problem.x_star, offset)) < 1e-12
    assert problem.error(problem.x_star) == 0.0
    assert max(abs(v) for v in problem.apply(problem.x_star)) < 1e-12

    assert sa.theta_rho_from_bounds(1.0, 2.0) == (4.0, 0.75)
    assert abs(sa.partition_identity([0.3, 0.2, 0.9, 0.5], 1, 3) - 1.0) < 1e-15

    schedule = sa.Schedule.power_law(1.0, 10.0, 1.0)
    assert abs(schedule.alpha(0) - 0.1) < 1e-15

    noise = sa.Noise.gaussian(1.0, space)
    z = noise.sample(3, 7)
    assert len(z) == m and z[0] == 0.0 and z == noise.sample(3, 7)

    run = sa.run_stochastic(problem, noise, schedule, space.zeros(), 20000, 1)
    assert len(run.error_curve) == 20001
    assert run.final_error < run.error_curve[0]
    assert run.checkpoints[-1][0] == 20000

    h = [0.05] * m
    start = [x + 0.05 for x in problem.x_star]
    det = sa.run_deterministic(problem, h, schedule, start, 20000)
    assert det.final_error < 1e-2, det.final_error

    heavy = sa.Noise.heavy_tailed_pointwise(1.5, sa.Space.lp(1.0, m), calibrate_to=sa.Schedule.log_harmonic())
    assert len(heavy.sample(10, 3)) == m

    config = (ROOT / "configs" / "gaussian.toml").read_text()
    config = config.replace("n_steps = 100000", "n_steps = 2000").replace("seed_count = 50", "seed_count = 3")
    with tempfile.TemporaryDirectory() as tmp:
        rows = sa.run_config(config, tmp)
        assert rows[-1][0] == 2000
        assert (pathlib.Path(tmp) / "summary.csv").exists()
    report = sa.verify_config(config + "\n[verify]\nseries_terms = 65536\nr2_samples = 200\n")
    assert all(status == "PASS" for _, _, status in report), report

    try:
        sa.Problem.linear_contraction(1.5, offset, space)
    except ValueError:
        pass
    else:
        raise AssertionError("gamma >= 1 accepted")

    print(f"python smoke test ok: final error {run.final_error:.4f}, deterministic {det.final_error:.2e}")


if __name__ == "__main__":
    main()
