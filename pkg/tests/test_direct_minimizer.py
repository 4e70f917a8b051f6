import numpy as np
import pytest

from abreulab.convexity import chord_envelope, is_admissible
from abreulab.direct_minimizer import (DirectOptions, DirectProblem, objective_and_subgradient,
                                       solve_direct, uniqueness_probe)
from abreulab.functionals import J_eval
from abreulab.geometry import DiskDomain, DiskRegion, DomainPair, discretize
from abreulab.lagrangian import (AiryParams, RochetChoneParams, make_airy, make_quadratic_family,
                                 make_rochet_chone)
from oracles import TinyQP, rc_interior_rhs_divergence

c = np.array([1.5, 1.5])
rc_phi = lambda x: 0.5 * np.sum((x - c) ** 2, -1)  # noqa: E731
affine = lambda x: 0.5 * x[..., 0] + 0.25 * x[..., 1] - 0.5  # noqa: E731


@pytest.fixture(scope="module")
def rc16(rc_pair):
    return discretize(rc_pair, 1 / 16), make_rochet_chone(RochetChoneParams.constant(1.0), rc_pair)


def test_options_validation():
    with pytest.raises(ValueError):
        DirectOptions(penalty=0.0)
    with pytest.raises(ValueError):
        DirectOptions(relaxation=2.0)


def test_affine_rigidity(rc16):
    disc, spec = rc16
    v, J, cert = solve_direct(disc, spec, affine)
    phi = disc.sample(affine)
    m = disc.interior
    assert np.max(np.abs(v[m] - phi[m])) <= 1e-6
    assert J == pytest.approx(J_eval(disc, phi, spec, affine), abs=1e-10)
    assert uniqueness_probe(disc, spec, affine, DirectOptions(restarts=3)) <= 1e-10


def test_feasibility_and_monotonicity(rc16):
    disc, spec = rc16
    res = solve_direct(disc, spec, rc_phi)
    assert res.converged
    phi = disc.sample(rc_phi)
    env = chord_envelope(disc, phi)
    assert is_admissible(disc, res.v, phi, tol=1e-6, envelope=env)
    assert res.J <= J_eval(disc, phi, spec, rc_phi) + 1e-12
    assert res.J <= J_eval(disc, env, spec, rc_phi) + 1e-8
    assert np.max(res.v[disc.interior] - env[disc.interior]) <= 1e-6
    assert res.certificate["cone_worst"] >= -1e-8
    for k in ("J", "primal_res", "dual_res", "convexity_worst", "restarts_spread"):
        assert k in res.certificate


def test_matches_tiny_qp_oracle(rc_pair):
    disc = discretize(rc_pair, 1 / 6)
    spec = make_rochet_chone(RochetChoneParams.constant(1.0), rc_pair)
    qp = TinyQP(disc, rc_phi)
    v_or, _, mu, _ = qp.active_set()
    res = solve_direct(disc, spec, rc_phi)
    assert np.max(np.abs(res.v[qp.free] - v_or)) <= 1e-6
    assert res.J == pytest.approx(qp.value(v_or), abs=1e-9)


def test_gradient_fd_check(rc16, rng):
    disc, spec = rc16
    pb = DirectProblem(disc, spec, rc_phi)
    v = pb.from_field(pb.phi) + 0.01 * rng.normal(size=pb.n_free)
    g = pb.gradient(v)
    d = rng.normal(size=pb.n_free)
    t = 1e-5
    fd = (pb.value(v + t * d) - pb.value(v - t * d)) / (2 * t)
    assert abs(fd - g @ d) <= 1e-6 * max(1.0, abs(fd))


def test_gradient_special_cases(rc16, unit_pair):
    disc, spec = rc16
    # at v = phi the gradient is the divergence-form Euler-Lagrange expression times cell area
    J0, g = objective_and_subgradient(disc, spec, disc.sample(rc_phi), rc_phi)
    ref = rc_interior_rhs_divergence(disc, np.nan_to_num(disc.sample(rc_phi)))
    deep = disc.compact_mask(0.15)
    np.testing.assert_allclose(g[deep], disc.h ** 2 * ref[deep], atol=1e-12)
    zero = make_quadratic_family(z2=0.0, z1=0.0, p2=0.0, p1=0.0)
    _, g0 = objective_and_subgradient(disc, zero, disc.sample(rc_phi), rc_phi)
    assert np.nanmax(np.abs(g0)) == 0.0
    ud = discretize(unit_pair, 1 / 16)
    airy = make_airy(AiryParams.quadratic(), unit_pair)
    _, ga = objective_and_subgradient(ud, airy, ud.sample(rc_phi), rc_phi)
    # f0 = -1: a negative gradient, so minimizing pushes v up; pinned nodes carry none
    free = ud.mask("omega0")
    np.testing.assert_allclose(ga[free], -ud.weights_omega0[free])
    assert np.all(ga[ud.interior & ~free] == 0)


def test_airy_matches_chord_envelope():
    pair = DomainPair(DiskDomain((0.0, 0.0), 1.0), DiskRegion((0.0, 0.0), 0.5))
    disc = discretize(pair, 1 / 16)
    spec = make_airy(AiryParams.quadratic(), pair)
    q = lambda x: 0.5 * np.sum(x * x, -1)  # noqa: E731
    v, _, _ = solve_direct(disc, spec, q, DirectOptions(restarts=1))
    env = chord_envelope(disc, disc.sample(q))
    assert np.max(np.abs(v[disc.interior] - env[disc.interior])) <= 1e-4


def test_probe_deterministic_across_threads(rc16):
    disc, spec = rc16
    opts = DirectOptions(restarts=3, seed=7)
    a = uniqueness_probe(disc, spec, rc_phi, opts)
    b = uniqueness_probe(disc, spec, rc_phi, opts, workers=3)
    assert a == b and a <= 1e-5
