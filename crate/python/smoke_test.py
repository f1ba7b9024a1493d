"""Smoke test for the orthant_rbm_py extension module.

Build and install first, e.g.

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run ``python python/smoke_test.py``.
"""

import math
from pathlib import Path

import orthant_rbm_py as orb

ROOT = Path(__file__).resolve().parent.parent


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    e1 = orb.Model.from_json(str(ROOT / "models" / "e1.json"))
    assert e1.dimension == 2

    report = e1.analyze()
    assert report["verdict"] == "DualSkewSymmetric", report["verdict"]

    decay = e1.decay()
    assert all(close(a, -2.0) for a in decay["a"]), decay["a"]
    assert all(close(a, -1.0) for a in e1.decay("paper")["a"])
    assert close(e1.predict([0.5, 0.5]), math.exp(-2.0))

    residuals = e1.pde_residuals()
    assert abs(residuals["generator_residual"]) < 1e-12
    assert e1.pde_residuals(candidate=[0.0, 0.0])["valid_candidate"] is False

    e3 = orb.Model([[1, 0.5], [0.5, 1]], [2, 1], [[1, -2], [-0.5, 1]])
    a = e3.decay()["a"]
    assert close(a[0], -8 / 7) and close(a[1], -16 / 7), a

    s = orb.is_s_matrix([[1, -1], [-1, 1]])
    assert s["verdict"] is False and s["dual"] is not None
    cert = orb.lemma2_certificate([[1, -1], [-1, 1]])
    assert cert["rank"] == 1 and abs(cert["perron_root"] - 2) < 1e-8

    step = orb.skorokhod_step([[1, 0], [-0.5, 1]], [-0.4, 0.1])
    assert step["kind"] == "pushed" and step["state"] == [0.0, 0.0]
    assert orb.skorokhod_step([[1, -1], [-1, 1]], [-0.1, -0.1])["kind"] == "infeasible"

    lo, hi = orb.wilson_interval(1353, 10_000)
    assert abs(lo - 0.1288) < 1e-4 and abs(hi - 0.1421) < 1e-4

    run = e1.simulate([0.5, 0.5], seed=7, index=3, escape_radius=6.0)
    assert run == e1.simulate([0.5, 0.5], seed=7, index=3, escape_radius=6.0)
    assert run["outcome"] in ("Absorbed", "Escaped")

    est = e1.estimate([0.5, 0.5], n=2000, seed=1, escape_radius=6.0)
    assert est["absorbed"] + est["escaped"] + est["undecided"] == 2000
    assert abs(est["p_hat"] - math.exp(-2.0)) < 0.05, est["p_hat"]

    half = orb.halfline_estimate(1.0, 1.0, 0.5, n=2000, seed=1)
    assert abs(half["prediction"] - math.exp(-1.0)) < 1e-12

    try:
        orb.Model([[1, 2], [2, 1]], [1, 1], [[1, -1], [-1, 1]])
    except ValueError as err:
        assert "invalid model" in str(err)
    else:
        raise AssertionError("indefinite covariance accepted")

    try:
        orb.Model([[1, 0], [0, 1]], [1, 1], [[1, 0], [0, 1]]).estimate([0.5, 0.5], n=10)
    except ValueError:
        pass
    else:
        raise AssertionError("assumption-violating model simulated without allow_degenerate")

    print(f"orthant_rbm_py {orb.__version__}: smoke test passed (p_hat {est['p_hat']:.4f})")


if __name__ == "__main__":
    main()
