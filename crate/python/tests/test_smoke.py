"""Smoke test for the Python bindings.

Build and install with `pip install . --no-build-isolation` (needs maturin),
or run `cargo build --release -p nphmm-python --features extension-module`,
copy `target/release/lib_nphmm.so` to `python/nphmm/_nphmm.so` and put
`python/` on `PYTHONPATH`.
"""

import math
import tempfile
from pathlib import Path

import nphmm


def test_model():
    z = 2.0 * (1.0 + (math.exp(-1.0) - 1.0))
    nu0 = (1.0 - math.exp(-1.0)) / z
    assert abs(nphmm.stationary_density(1.0, 0.0) - nu0) < 1e-12
    assert nphmm.transition_density(1.0, 0.3, 0.7) > 0.0
    states, obs = nphmm.simulate(100, a=1.0, seed=3)
    assert len(states) == 100 and len(obs) == 100 and len(obs[0]) == 2
    assert all(0.0 <= x <= 1.0 for x in states)
    again, _ = nphmm.simulate(100, a=1.0, seed=3)
    assert again == states
    try:
        nphmm.stationary_density(-1.0, 0.5)
    except ValueError:
        pass
    else:
        raise AssertionError("negative bandwidth accepted")


def test_spline():
    xs = [i / 9 for i in range(10)]
    ys = [[2.0 * x - 1.0, 0.5] for x in xs]
    f = nphmm.Spline.fit(xs, ys, 1e-3)
    assert f.ell == 2
    v = f(0.45)
    assert abs(v[0] + 0.1) < 1e-9 and abs(v[1] - 0.5) < 1e-9
    assert f.curvature_norm_sq() < 1e-12
    g = nphmm.Spline.from_text(f.to_text())
    assert g(0.3) == f(0.3)


def test_estimation():
    states, obs = nphmm.simulate(400, a=1.0, seed=1)
    lam = nphmm.lambda_schedule(1.0, 200)
    a_hat, f_hat, trace = nphmm.run_em(obs, 2, lam, iterations=5, n_a=30, n_f=30, seed=2)
    assert len(trace) == 5 and a_hat < 4.0
    total, per = nphmm.l2_error_half_circle(f_hat)
    assert len(per) == 2 and total < 0.8
    assert nphmm.hausdorff_half_circle(f_hat) < 1.5
    pll = nphmm.pseudo_log_likelihood(f_hat, obs, 2, "pair", a_hat)
    assert math.isfinite(pll)
    assert nphmm.hellinger(f_hat, f_hat) < 1e-7
    phi = nphmm.estimate_mixing_decay(states, [1, 2], bins=4)
    assert len(phi) == 2
    (row,) = nphmm.check_h3_bounds([1.0])
    assert row[1] > 0.8 and row[2] < 1.4


def test_experiment():
    with tempfile.TemporaryDirectory() as tmp:
        out = Path(tmp) / "run"
        files = nphmm.run_experiment(
            f"case=b1_known_nu\nn_blocks=100\niterations=3\nreplicates=1\nout_dir={out}\n"
        )
        names = sorted(Path(p).name for p in files)
        assert names == ["config.txt", "spline_r000.txt", "summary.csv", "trace_r000.csv"]
        assert len((out / "trace_r000.csv").read_text().splitlines()) == 4


if __name__ == "__main__":
    test_model()
    test_spline()
    test_estimation()
    test_experiment()
    print("python smoke test passed")
