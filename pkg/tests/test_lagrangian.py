import numpy as np
import pytest

from abreulab.geometry import DomainPair, NodeLabel, discretize
from abreulab.lagrangian import (AiryParams, LagrangianSpec, RochetChoneParams, assemble_f_eps,
                                 check_assumptions, detect_C_phi, make_airy,
                                 make_quadratic_family, make_rochet_chone, omega0_box)
from oracles import rc_interior_rhs_divergence


@pytest.fixture(scope="module")
def rc(rc_pair):
    return make_rochet_chone(RochetChoneParams.constant(1.0), rc_pair)


def test_rc_closed_forms(rc, rng):
    x = rng.uniform(1, 2, (20, 2))
    p = rng.normal(size=(20, 2))
    np.testing.assert_allclose(rc.hessP_F1(x, p), np.broadcast_to(np.eye(2), (20, 2, 2)))
    np.testing.assert_allclose(rc.mixed_F1(x, p), -np.ones((20, 2)))
    np.testing.assert_allclose(rc.gradP_F1(x, p), p - x)
    z = rng.normal(size=20)
    np.testing.assert_allclose(rc.F(x, z, p), 0.5 * np.sum(p * p, -1) - np.sum(x * p, -1) + z)
    assert rc.C_b == 0 and rc.C_under == 1.0


def test_rc_zero_density(rc_pair, rng):
    spec = make_rochet_chone(RochetChoneParams.constant(0.0), rc_pair)
    x = rng.uniform(1, 2, (10, 2))
    p = rng.normal(size=(10, 2))
    z = rng.normal(size=10)
    assert np.all(spec.F(x, z, p) == 0)
    assert np.all(spec.hessP_F1(x, p) == 0) and np.all(spec.mixed_F1(x, p) == 0)


def test_rc_density_validation():
    with pytest.raises(ValueError):
        RochetChoneParams.constant(-1.0)


def test_airy_examples(unit_pair, rng):
    x = rng.uniform(-0.5, 0.5, (30, 2))
    z = rng.normal(size=30)
    spec = make_airy(AiryParams.quadratic(), unit_pair)
    np.testing.assert_allclose(spec.f0(x, z), -1.0)
    aff = make_airy(AiryParams(lambda x: 2 * x[..., 0] - x[..., 1]), unit_pair)
    assert np.max(np.abs(aff.F(x, z, rng.normal(size=(30, 2))))) < 1e-6
    ex = AiryParams.exponential()
    r2 = np.sum(x * x, -1)
    np.testing.assert_allclose(ex.det_hess(x), (1 + r2) * np.exp(r2), rtol=1e-14)
    # finite-difference determinant agrees with the closed form
    fd = AiryParams(ex.q, fd_step=1e-3)
    np.testing.assert_allclose(fd.det_hess(x), (1 + r2) * np.exp(r2), rtol=1e-5)


def test_spec_rejects_negative_constants():
    with pytest.raises(ValueError):
        make_quadratic_family(C_b=-1.0)


def test_f_eps_rc_quadratic_interior(rc_disc, rc):
    u = rc_disc.sample(lambda x: 0.5 * np.sum(x * x, -1))
    f = assemble_f_eps(rc_disc, rc, u, u, 0.1, lambda x: 0.5 * np.sum(x * x, -1))
    inner = rc_disc.mask("omega0")
    assert np.max(np.abs(f[inner] - 1.0)) < 1e-10
    assert np.max(np.abs(f[rc_disc.mask("annulus")])) == 0.0


def test_f_eps_airy_interior_constant(unit_disc, rng):
    spec = make_airy(AiryParams.quadratic(), unit_disc.pair)
    u = np.where(unit_disc.interior, rng.normal(size=unit_disc.grid.shape), np.nan)
    f = assemble_f_eps(unit_disc, spec, u, u, 0.5, 0.0)
    assert np.all(f[unit_disc.mask("omega0")] == -1.0)


def test_f_eps_annulus_formula(unit_disc, rng):
    spec = make_airy(AiryParams.quadratic(), unit_disc.pair)
    u = np.where(unit_disc.interior, rng.normal(size=unit_disc.grid.shape), np.nan)
    ut = u - 0.3
    f = assemble_f_eps(unit_disc, spec, u, ut, 0.25, 0.0)
    np.testing.assert_allclose(f[unit_disc.mask("annulus")], 1.2)
    with pytest.raises(ValueError):
        assemble_f_eps(unit_disc, spec, u, ut, 0.0, 0.0)


def test_f_eps_locality(rc_disc, rc, rng):
    u = rc_disc.sample(lambda x: 0.5 * np.sum(x * x, -1) + 0.1 * np.sin(3 * x[..., 0]))
    f1 = assemble_f_eps(rc_disc, rc, u, u, 0.1, 0.0)
    i = j = int(round((1.5 - rc_disc.grid.origin[0]) / rc_disc.h))
    u2 = u.copy()
    u2[i, j] += 1e-3
    f2 = assemble_f_eps(rc_disc, rc, u2, u, 0.1, 0.0)
    changed = np.argwhere(np.abs(np.nan_to_num(f2 - f1)) > 0)
    assert np.max(np.abs(changed - [i, j])) <= 1


def test_f_eps_matches_divergence_form(rc_pair):
    rc = make_rochet_chone(RochetChoneParams.constant(1.0), rc_pair)
    u_fn = lambda x: np.exp(0.4 * x[..., 0]) + 0.3 * np.sin(x[..., 1]) * x[..., 0]  # noqa: E731
    errs = []
    for h in (1 / 32, 1 / 64):
        d = discretize(rc_pair, h)
        u = d.sample(u_fn)
        f = assemble_f_eps(d, rc, u, u, 0.1, u_fn)
        ref = rc_interior_rhs_divergence(d, np.nan_to_num(u))
        m = d.mask("omega0")
        errs.append(np.max(np.abs(f[m] - ref[m])))
    assert errs[1] < 1e-2
    assert errs[0] / errs[1] >= 3.0


def test_f_eps_without_gradient_term_is_pointwise(unit_disc):
    spec = make_quadratic_family(z2=2.0, z1=0.5, p2=0.0, p1=0.0)
    u = unit_disc.sample(lambda x: np.sin(3 * x[..., 0]) + x[..., 1] ** 2)
    f = assemble_f_eps(unit_disc, spec, u, u, 0.1, 0.0)
    m = unit_disc.mask("omega0")
    np.testing.assert_allclose(f[m], 2.0 * u[m] + 0.5, rtol=1e-14)


def test_check_assumptions_builtin(rc_pair, unit_pair, rc):
    v = check_assumptions(rc, omega0_box(rc_pair), n_samples=2000)
    assert v["F0"].passed and v["F1"].passed and v["F1s"].passed and v["bC"].passed
    assert rc.C_star == pytest.approx(1.0) or rc.C_star <= 3.0
    airy = make_airy(AiryParams.quadratic(), unit_pair)
    va = check_assumptions(airy, omega0_box(unit_pair), n_samples=2000)
    assert va["F0l"].passed and airy.C_b == 0
    assert va["F0"].passed


def test_check_assumptions_rc_with_C_star_3(rc_pair):
    spec = make_rochet_chone(RochetChoneParams.constant(1.0), rc_pair)
    spec.C_star = 3.0
    v = check_assumptions(spec, omega0_box(rc_pair), n_samples=2000)
    assert v["F0"].passed and v["F1"].passed


def test_concave_F0_fails(rc_pair):
    spec = make_quadratic_family(z2=-1.0, z1=0.0, p2=1.0)
    v = check_assumptions(spec, omega0_box(rc_pair), n_samples=500)
    assert not v["F0"].passed
    assert "z" in v["F0"].witness


def test_bC_fails_when_C_under_zero(rc_pair):
    spec = make_quadratic_family(z2=-0.5, p2=0.0, C_under=0.0)
    v = check_assumptions(spec, omega0_box(rc_pair), n_samples=200)
    assert not v["bC"].passed
    spec = make_quadratic_family(z2=-0.5, p2=2.0)
    assert check_assumptions(spec, omega0_box(rc_pair), n_samples=200, C_t=1.0)["bC"].passed


def test_detect_C_phi(unit_disc):
    q = lambda x: 0.5 * np.sum(x * x, -1)  # noqa: E731
    aff = lambda x: 0.3 * x[..., 0] + 1  # noqa: E731
    assert detect_C_phi(unit_disc, unit_disc.sample(q), q) == 0
    assert detect_C_phi(unit_disc, unit_disc.sample(aff), aff) == 1
    # smoothed max of affines: softplus with a tiny curvature scale
    k = 1e-3
    sm = lambda x: k * np.logaddexp(0, (x[..., 0] - 0.1) / k) + 0.2 * x[..., 1]  # noqa: E731
    assert detect_C_phi(unit_disc, unit_disc.sample(sm), sm) == 1
