#!/usr/bin/env python3
"""Smoke test for the pdegp_py extension module.

Builds nothing itself: expects `cargo build --release -p pdegp-py` to have
produced target/release/libpdegp_py.so, which is copied next to this script
under the importable name pdegp_py.so.
"""
import math
import shutil
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
ROOT = HERE.parent


def ensure_module():
    target = HERE / "pdegp_py.so"
    built = ROOT / "target" / "release" / "libpdegp_py.so"
    if not built.exists():
        sys.exit(f"missing {built}; run: cargo build --release -p pdegp-py")
    if not target.exists() or built.stat().st_mtime > target.stat().st_mtime:
        shutil.copyfile(built, target)
    sys.path.insert(0, str(HERE))


def approx(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(a), abs(b))


def main():
    ensure_module()
    import pdegp_py as gp

    # Kernel evaluation: Matern 5/2 at distance 0 equals 1, symmetric in x/y.
    assert approx(gp.covariance(2.5, 0.3, [0.1, 0.2], [0.1, 0.2]), 1.0, 1e-12)
    v1 = gp.covariance(2.5, 0.3, [0.0, 0.0], [0.1, 0.2])
    v2 = gp.covariance(2.5, 0.3, [0.1, 0.2], [0.0, 0.0])
    assert approx(v1, v2, 1e-12)
    # Derivative entries are antisymmetric under argument swap for odd order.
    d1 = gp.covariance(2.5, 0.3, [0.0], [0.05], gamma_x=[1])
    d2 = gp.covariance(2.5, 0.3, [0.05], [0.0], gamma_y=[1])
    assert approx(d1, d2, 1e-10)

    # Maximin ordering: first point has the largest lengthscale.
    pts = [[i / 9.0] for i in range(10)]
    perm, ls = gp.maximin_ordering(pts)
    assert sorted(perm) == list(range(10))
    assert ls[0] == max(ls)
    assert min(ls) > 0

    # Factorization on a small elliptic layout: log-det finite, precision and
    # covariance applications are mutual inverses.
    interior = [[(i + 1) / 6.0, (j + 1) / 6.0] for i in range(5) for j in range(5)]
    boundary = [[i / 5.0, 0.0] for i in range(6)] + [[i / 5.0, 1.0] for i in range(6)]
    fac = gp.factorize("elliptic", interior, boundary, 2.5, 0.3, rho=1e9)
    assert fac.n == len(interior) + len(boundary) + len(interior)
    assert fac.nnz >= fac.n
    assert math.isfinite(fac.log_det())
    v = [math.sin(0.3 * i) for i in range(fac.n)]
    w = fac.apply_covariance(fac.apply_precision(v))
    assert max(abs(a - b) for a, b in zip(v, w)) < 1e-8 * max(abs(a) for a in v)
    rows, cols, vals = fac.triplets()
    assert len(rows) == len(cols) == len(vals) == fac.nnz
    assert all(r <= c for r, c in zip(rows, cols))

    # Nonlinear elliptic solve on a coarse grid reaches the accuracy the
    # resolution supports (error decays ~ h^2.5 with this kernel/truth).
    sol = gp.solve_elliptic(16, 2.5, 0.3, rho=4.0, steps=3)
    assert sol["l2_error"] < 0.1, sol["l2_error"]

    # Burgers: a few Crank-Nicolson steps at a stable resolution.
    out = gp.solve_burgers(
        n_domain=120, dt=0.02, t_end=0.1, viscosity=0.02,
        nu=3.5, lengthscale=0.1, rho=1e9, steps=2,
    )
    assert out["l2_error"] < 5e-3, out["l2_error"]
    assert len(out["times"]) == 5

    print("smoke test passed")


if __name__ == "__main__":
    main()
