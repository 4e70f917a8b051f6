import numpy as np
import pytest

from abreulab.abreu_scheme import build_tilde_u
from abreulab.functionals import (G_eval, G_prime, J_eps_eval, J_eval, annulus_residual, eta_eps,
                                  profit_phi)
from abreulab.lagrangian import AiryParams, RochetChoneParams, make_airy, make_rochet_chone

half_sq = lambda x: 0.5 * np.sum(x * x, -1)  # noqa: E731


def test_G_values():
    for th in (0.0, 0.1, 0.25, 0.4):
        assert G_eval(1.0, th) == 0.0
    assert G_eval(np.e, 0.0) == pytest.approx(1.0, abs=1e-15)
    assert G_eval(16.0, 0.25) == pytest.approx(4.0, abs=1e-14)
    assert G_prime(4.0, 0.5) == pytest.approx(0.5)
    for bad in (0.0, -1.0):
        with pytest.raises(ValueError):
            G_eval(bad, 0.0)


def test_G_concave_increasing():
    t = np.logspace(-4, 4, 400)
    for th in (0.0, 0.1, 0.25, 0.4):
        g = G_eval(t, th)
        assert np.all(np.diff(g) > 0)
        dl = t[2:] - t[1:-1]
        dr = t[1:-1] - t[:-2]
        curv = 2 * ((g[2:] - g[1:-1]) / dl - (g[1:-1] - g[:-2]) / dr) / (dl + dr)
        assert np.all(curv <= 1e-12 * t[1:-1] ** (th - 2)), th
    np.testing.assert_allclose(G_prime(t, 0.25), t ** -0.75)


def test_J_examples(rc_disc):
    rc = make_rochet_chone(RochetChoneParams.constant(1.0), rc_disc.pair)
    airy = make_airy(AiryParams.quadratic(), rc_disc.pair)
    q = rc_disc.sample(half_sq)
    zero = rc_disc.sample(lambda x: 0 * x[..., 0])
    assert abs(J_eval(rc_disc, zero, rc, 0.0)) < 1e-14
    assert abs(J_eval(rc_disc, q, rc, half_sq)) < 1e-12
    assert abs(J_eval(rc_disc, q, airy, half_sq)) < 1e-12


def test_profit_identity(rc_disc, rng):
    rc = make_rochet_chone(RochetChoneParams.constant(1.0), rc_disc.pair)
    zero = rc_disc.sample(lambda x: 0 * x[..., 0])
    assert profit_phi(rc_disc, zero, 1.0, 0.0) == 0.0
    q = rc_disc.sample(half_sq)
    assert abs(profit_phi(rc_disc, q, 1.0, half_sq)) < 1e-12
    for _ in range(3):
        u = np.where(rc_disc.interior, rng.normal(size=rc_disc.grid.shape), np.nan)
        assert abs(profit_phi(rc_disc, u, 1.0, 0.0) + J_eval(rc_disc, u, rc, 0.0)) < 1e-12


def test_J_eps_terms(unit_disc):
    airy = make_airy(AiryParams.quadratic(), unit_disc.pair)
    u = unit_disc.sample(half_sq)
    # det D^2 u = 1 and v = utilde: J_eps reduces to J
    base = J_eval(unit_disc, u, airy, half_sq)
    for th in (0.0, 0.25):
        assert J_eps_eval(unit_disc, u, airy, u, 0.1, th, half_sq) == pytest.approx(base, abs=1e-12)
    # quadrature of the penalty alone
    shift = J_eps_eval(unit_disc, u, airy, u - 0.1, 0.5, 0.0, half_sq) - base
    area = np.sum(unit_disc.weights_annulus)
    assert shift == pytest.approx(0.01 * area / 1.0, rel=1e-12)
    with pytest.raises(ValueError):
        J_eps_eval(unit_disc, u, airy, u, 0.0, 0.0, half_sq)
    with pytest.raises(ValueError):
        J_eps_eval(unit_disc, u, airy, u, 0.1, 0.5, half_sq)


def test_J_eps_infinite_off_the_convex_cone(unit_disc):
    airy = make_airy(AiryParams.quadratic(), unit_disc.pair)
    saddle = lambda x: x[..., 0] ** 2 - x[..., 1] ** 2  # noqa: E731
    concave = lambda x: -half_sq(x)  # noqa: E731
    for f in (saddle, concave):
        v = unit_disc.sample(f)
        assert J_eps_eval(unit_disc, v, airy, v, 0.1, 0.0, f) == np.inf


def test_J_eps_tends_to_J(unit_disc):
    airy = make_airy(AiryParams.quadratic(), unit_disc.pair)
    f = lambda x: 0.5 * (2 * x[..., 0] ** 2 + x[..., 1] ** 2)  # noqa: E731
    v = unit_disc.sample(f)
    base = J_eval(unit_disc, v, airy, f)
    gaps = [abs(J_eps_eval(unit_disc, v, airy, v, e, 0.0, f) - base) for e in (1e-1, 1e-2, 1e-3)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] == pytest.approx(1e-3 * np.log(2) * np.sum(unit_disc.weights_omega), rel=1e-10)


def test_eta(unit_disc):
    const = unit_disc.sample(lambda x: 0 * x[..., 0] + 2.0)
    assert eta_eps(unit_disc, const, 0.1, 2.0) < 1e-12
    u = unit_disc.sample(half_sq)
    for eps in (1e-1, 1e-3):
        assert eta_eps(unit_disc, u, eps, half_sq) == pytest.approx(np.sqrt(eps * 2 * np.pi), rel=1e-3)
    r = eta_eps(unit_disc, u, 1e-2, half_sq) / eta_eps(unit_disc, u, 1e-4, half_sq)
    assert r == pytest.approx(10.0, rel=1e-12)


def test_annulus_residual(unit_disc, rng):
    ut = build_tilde_u(unit_disc, lambda x: 0.3 * x[..., 0], 1e-3, 1)
    assert annulus_residual(unit_disc, ut, ut) == 0.0
    c = 0.7
    area = np.sum(unit_disc.weights_annulus)
    assert annulus_residual(unit_disc, ut + c, ut) == pytest.approx(c * c * area, rel=1e-12)
    u = ut + np.where(unit_disc.interior, rng.normal(size=ut.shape), 0.0)
    w = unit_disc.weights_annulus
    m = w > 0
    ref = float(np.sum(w[m] * (u[m] - ut[m]) ** 2))
    assert abs(annulus_residual(unit_disc, u, ut) - ref) <= 1e-12 * max(ref, 1.0)
