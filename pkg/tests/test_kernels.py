import os
import subprocess
import sys

import numpy as np
import pytest

import isqf
from isqf import _kernels
from isqf._kernels import _pure
from helpers import random_isqf, random_target

try:
    from isqf._kernels import _core
except ImportError:
    _core = None

needs_compiled = pytest.mark.skipif(_core is None, reason="compiled backend not built")


def _args_and_z(rng, tails):
    curve = random_isqf(rng, tails=tails)
    return curve._kernel_args(), random_target(rng, curve)


def test_backend_selection_reports_something_sane():
    assert _kernels.BACKEND in ("compiled", "pure")


def test_pure_env_var_forces_fallback():
    code = "import isqf; print(isqf.KERNEL_BACKEND)"
    env = dict(os.environ, ISQF_PURE="1")
    out = subprocess.run([sys.executable, "-c", code], env=env,
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "pure"


@needs_compiled
def test_eval_parity_between_backends():
    rng = np.random.default_rng(0)
    for _ in range(60):
        args, _ = _args_and_z(rng, "mixed")
        al = rng.uniform(1e-5, 1.0 - 1e-5, size=257)
        qp = _pure.eval_quantile(*args, al)
        qc = _core.eval_quantile(*args, al)
        np.testing.assert_allclose(qc, qp, rtol=1e-12, atol=1e-12)
        zs = rng.uniform(qp.min() - 2.0, qp.max() + 2.0, size=257)
        np.testing.assert_allclose(
            _core.eval_cdf(*args, zs), _pure.eval_cdf(*args, zs), rtol=1e-12, atol=1e-14
        )


@needs_compiled
def test_spline_crps_parity_between_backends():
    rng = np.random.default_rng(1)
    for _ in range(60):
        (levels, values, d, p, *_), z = _args_and_z(rng, "exp")
        pp = _pure.crps_spline_parts(levels, d, p, z)
        pc = _core.crps_spline_parts(levels, d, p, z)
        np.testing.assert_allclose(pc, pp, rtol=1e-10, atol=1e-12)

        B = 7
        bd = np.repeat(d[None], B, axis=0)
        bp = np.repeat(p[None], B, axis=0)
        bz = z + rng.normal(0.0, 1.0, size=B)
        mp, gdp, gpp = _pure.crps_spline_grad(levels, bd, bp, bz)
        mc, gdc, gpc = _core.crps_spline_grad(levels, bd, bp, bz)
        np.testing.assert_allclose(mc, mp, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(gdc, gdp, rtol=1e-9, atol=1e-10)
        np.testing.assert_allclose(gpc, gpp, rtol=1e-9, atol=1e-10)


@needs_compiled
def test_exp_tail_parity_between_backends():
    rng = np.random.default_rng(2)
    for side in (0, 1):
        lam = 0.08 if side == 0 else 0.93
        B = 64
        a = rng.uniform(0.3, 3.0, size=B) * (1.0 if side == 0 else -1.0)
        b = rng.normal(0.0, 3.0, size=B)
        z = rng.normal(0.0, 4.0, size=B)
        vp, gap, gbp = _pure.crps_exp_tail_grad(side, lam, a, b, z)
        vc, gac, gbc = _core.crps_exp_tail_grad(side, lam, a, b, z)
        np.testing.assert_allclose(vc, vp, rtol=1e-12, atol=1e-14)
        np.testing.assert_allclose(gac, gap, rtol=1e-11, atol=1e-13)
        np.testing.assert_allclose(gbc, gbp, rtol=1e-11, atol=1e-13)


def _fd(f, x, step=1e-6):
    return (f(x + step) - f(x - step)) / (2.0 * step)


def test_spline_grad_matches_finite_differences():
    rng = np.random.default_rng(3)
    for _ in range(25):
        curve = random_isqf(rng, tails="exp", k_min=3, k_max=6)
        levels = curve.knots.levels
        d, p = curve._d.copy(), curve._p.copy()
        z = random_target(rng, curve)
        _, gd, gp = _kernels.crps_spline_grad(levels, d[None], p[None], np.array([z]))

        # interior spline values only; boundary columns are pinned by knots
        k = int(rng.integers(0, d.shape[0]))
        if d.shape[1] > 2:
            j = int(rng.integers(1, d.shape[1] - 1))

            def loss_p(x):
                pp = p.copy()
                pp[k, j] = x
                return _kernels.crps_spline_parts(levels, d, pp, z).sum()

            fd = _fd(loss_p, p[k, j])
            assert gp[0, k, j] == pytest.approx(fd, rel=2e-5, abs=2e-6)

            def loss_d(x):
                dd = d.copy()
                dd[k, j] = x
                return _kernels.crps_spline_parts(levels, dd, p, z).sum()

            fd = _fd(loss_d, d[k, j], step=1e-7)
            assert gd[0, k, j] == pytest.approx(fd, rel=2e-4, abs=2e-5)


def test_exp_tail_grad_matches_finite_differences():
    rng = np.random.default_rng(4)
    for side in (0, 1):
        for _ in range(25):
            lam = rng.uniform(0.03, 0.25)
            lam = lam if side == 0 else 1.0 - lam
            a = rng.uniform(0.3, 2.5) * (1.0 if side == 0 else -1.0)
            b = rng.normal(0.0, 2.0)
            z = b + rng.normal(0.0, 2.0)
            _, ga, gb = (x[0] for x in _kernels.crps_exp_tail_grad(
                side, lam, np.array([a]), np.array([b]), np.array([z])))
            fa = _fd(lambda x: float(_kernels.crps_exp_tail(side, lam, x, b, z)), a)
            fb = _fd(lambda x: float(_kernels.crps_exp_tail(side, lam, a, x, z)), b)
            assert ga == pytest.approx(fa, rel=1e-5, abs=1e-7)
            assert gb == pytest.approx(fb, rel=1e-5, abs=1e-7)


def test_active_backend_matches_import_flag():
    want = "pure" if os.environ.get("ISQF_PURE") else ("compiled" if _core else "pure")
    assert isqf.KERNEL_BACKEND == want
