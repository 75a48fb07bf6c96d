"""Periodic-orbit shooting, symmetric planar orbits, continuation, Floquet."""

import math
import warnings

import numpy as np
import pytest

from sectionscope.cr3bp import EARTH_MOON_MU, hamiltonian, lagrange_points
from sectionscope.errors import (ConfigError, ConvergenceError, FoldDetected,
                                 JacobianSingularError)
from sectionscope.flows import IntegratorConfig, integrate
from sectionscope.orbits import (classify_rotation, continue_family,
                                 find_periodic_point,
                                 find_symmetric_planar_orbit,
                                 floquet_multipliers,
                                 reciprocal_pair_residual,
                                 unit_multiplier_count, vertical_seed)

C_TEST = -1.7
VERTICAL_PERIOD = 1.0022163715043540  # 2 pi (-1/(2c))^{3/2} at c = -1.7


def test_vertical_seed_exact_at_zero_mass_ratio():
    x = vertical_seed(0.0, C_TEST)
    assert np.allclose(x, [0.0, 0.0, 10.0 / 17.0, 0.0, 0.0, 0.0],
                       atol=1e-12)
    assert hamiltonian(x, 0.0) == pytest.approx(C_TEST, abs=1e-13)


def test_vertical_fixed_point_newton():
    cfg = IntegratorConfig(max_time=5.0)
    # start off the exact point to give Newton something to do
    x0 = vertical_seed(0.0, C_TEST)
    x0[0] += 2e-3
    x0[4] += 1e-3
    from sectionscope.sections import page_embed, page_frame
    x0 = page_embed(x0, page_frame(x0, 0.0), np.zeros(4), 0.0, C_TEST, 0.0)
    orbit = find_periodic_point(x0, k=1, mu=0.0, c=C_TEST, cfg=cfg)
    assert orbit.residual < 1e-10
    assert orbit.period == pytest.approx(VERTICAL_PERIOD, abs=1e-8)
    assert orbit.symmetry == "vertical-collision"
    # quadratic contraction in the recorded history
    hist = orbit.newton_history
    assert hist[-1] < 1e-10
    for r0, r1 in zip(hist[:-2], hist[1:-1]):
        if r0 > 1e-7:  # above FD noise the contraction is quadratic
            assert r1 < 10.0 * r0 ** 2 + 1e-12


def test_orbit_closes_under_reintegration():
    cfg = IntegratorConfig(max_time=5.0)
    orbit = find_periodic_point(vertical_seed(0.0, C_TEST), k=1, mu=0.0,
                                c=C_TEST, cfg=cfg)
    traj = integrate(orbit.representative, 0.0, cfg, orbit.period, c=C_TEST)
    assert np.linalg.norm(traj.final_state() - orbit.representative) < 1e-8


def test_continued_vertical_orbit_small_mass_ratio():
    cfg = IntegratorConfig(max_time=5.0)
    mu = 1e-3
    orbit = find_periodic_point(vertical_seed(mu, C_TEST), k=1, mu=mu,
                                c=C_TEST, cfg=cfg)
    assert orbit.residual < 1e-9
    traj = integrate(orbit.representative, mu, cfg, orbit.period, c=C_TEST)
    assert np.linalg.norm(traj.final_state() - orbit.representative) < 1e-8


def test_ellipsoid_resonant_page_is_degenerate():
    # a/b = 1/2: every page point is 2-periodic, the shooting matrix of
    # the doubled map vanishes and the search must refuse, not "converge"
    from sectionscope.sections import ellipsoid_page_point
    z0 = ellipsoid_page_point(1.0, 2.0, rho=0.4, phase=0.2)
    z0jig = z0.copy()
    z0jig[0] *= complex(math.cos(0.01), math.sin(0.01))
    with pytest.raises(JacobianSingularError):
        find_periodic_point(z0jig, k=2, system="ellipsoid", ab=(1.0, 2.0))


def test_symmetric_planar_circular_orbit_kepler():
    # mu=0, c=-1.5: the retrograde circular orbit has q1=1/4, p2=-2 and
    # rotating-frame period 2 pi / 9 (Kepler n=8, period 2 pi / (n+1))
    cfg = IntegratorConfig(max_time=3.0)
    orbit = find_symmetric_planar_orbit(-1.5, 0.0, 0.3, branch=-1, cfg=cfg)
    assert orbit.representative[0] == pytest.approx(0.25, abs=1e-10)
    assert orbit.representative[4] == pytest.approx(-2.0, abs=1e-9)
    assert orbit.period == pytest.approx(2.0 * math.pi / 9.0, abs=1e-9)
    assert orbit.rotation == "retrograde"
    assert orbit.residual < 1e-8


def test_symmetric_orbit_x_axis_invariance():
    # the orbit is invariant under (q2, p1) -> (-q2, -p1) with t -> -t
    cfg = IntegratorConfig(max_time=3.0)
    orbit = find_symmetric_planar_orbit(-1.5, 0.0, 0.3, branch=-1, cfg=cfg)
    traj = integrate(orbit.representative, 0.0, cfg, orbit.period, c=-1.5)
    for t in np.linspace(0.0, orbit.period, 17):
        s = traj.state(t)
        sm = traj.state(orbit.period - t)
        mirror = np.array([sm[0], -sm[1], sm[2], -sm[3], sm[4], sm[5]])
        assert np.linalg.norm(s - mirror) < 1e-8


def test_earth_moon_branches_retrograde_and_direct():
    cfg = IntegratorConfig(max_time=3.0)
    mu = EARTH_MOON_MU
    c = lagrange_points(mu).energies[0] - 0.05
    m1 = mu - 1.0
    retro = find_symmetric_planar_orbit(c, mu, m1 + 0.05, branch=-1, cfg=cfg)
    direct = find_symmetric_planar_orbit(c, mu, m1 + 0.05, branch=+1, cfg=cfg)
    assert retro.rotation == "retrograde"
    assert direct.rotation == "direct"
    assert retro.residual < 1e-9 and direct.residual < 1e-9
    assert abs(retro.period - direct.period) > 0.1  # genuinely distinct


def test_classify_rotation_moon_centered():
    # a tight loop around the Moon has a global angular-momentum average
    # dominated by the frame term; the primary-centered value decides
    cfg = IntegratorConfig(max_time=3.0)
    mu = EARTH_MOON_MU
    c = lagrange_points(mu).energies[0] - 0.05
    orbit = find_symmetric_planar_orbit(c, mu, mu - 1.0 + 0.05, branch=-1,
                                        cfg=cfg)
    traj = integrate(orbit.representative, mu, cfg, orbit.period, c=c)
    assert classify_rotation(traj) == "retrograde"


def test_continuation_to_small_mass_ratio():
    cfg = IntegratorConfig(max_time=5.0)
    seed = find_periodic_point(vertical_seed(0.0, C_TEST), k=1, mu=0.0,
                               c=C_TEST, cfg=cfg)
    members = continue_family(seed, "mu", 5e-3, 1e-3, cfg=cfg)
    assert len(members) == 6
    assert members[-1].mu == pytest.approx(5e-3, abs=1e-14)
    for m in members:
        assert m.residual < 1e-9
    # the family moves continuously
    reps = np.array([m.representative for m in members])
    steps = np.linalg.norm(np.diff(reps, axis=0), axis=1)
    assert np.all(steps < 0.05)


def test_continuation_requires_converged_seed():
    cfg = IntegratorConfig(max_time=5.0)
    seed = find_periodic_point(vertical_seed(0.0, C_TEST), k=1, mu=0.0,
                               c=C_TEST, cfg=cfg)
    bad = type(seed)(representative=seed.representative + 1e-3,
                     period=seed.period, energy=seed.energy, mu=seed.mu,
                     residual=1e-3)
    with pytest.raises(ConfigError):
        continue_family(bad, "mu", 1e-2, 1e-3, cfg=cfg)


def test_continuation_giant_step_never_silently_wrong():
    # an absurd single step to mu = 0.5 either fails loudly or delivers a
    # member that genuinely closes at the new mass ratio
    from sectionscope.errors import MaxTimeExceeded
    cfg = IntegratorConfig(max_time=5.0)
    seed = find_periodic_point(vertical_seed(0.0, C_TEST), k=1, mu=0.0,
                               c=C_TEST, cfg=cfg)
    try:
        members = continue_family(seed, "mu", 0.5, 0.5, min_step=0.01,
                                  cfg=cfg, max_iter=8)
    except (FoldDetected, ConvergenceError, JacobianSingularError,
            MaxTimeExceeded):
        return
    last = members[-1]
    assert last.mu == pytest.approx(0.5, abs=1e-14)
    assert last.residual < 1e-9
    traj = integrate(last.representative, 0.5, cfg, last.period, c=C_TEST)
    assert np.linalg.norm(traj.final_state() - last.representative) < 1e-7


def test_floquet_reciprocal_pairs_and_unit_multipliers():
    cfg = IntegratorConfig(max_time=5.0)
    orbit = find_periodic_point(vertical_seed(0.0, C_TEST), k=1, mu=0.0,
                                c=C_TEST, cfg=cfg)
    mult = floquet_multipliers(orbit, cfg=cfg)
    assert len(mult) == 6
    assert reciprocal_pair_residual(mult) < 1e-6
    # the trivial pair along the orbit/energy directions sits at 1; the
    # FD monodromy splits the defective pair by ~sqrt(fd step), so the
    # count is taken at 1e-3 rather than the ideal 1e-6
    assert unit_multiplier_count(mult, tol=1e-3) >= 2


def test_floquet_symmetric_orbit():
    cfg = IntegratorConfig(max_time=3.0)
    orbit = find_symmetric_planar_orbit(-1.5, 0.0, 0.3, branch=-1, cfg=cfg)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mult = floquet_multipliers(orbit, cfg=cfg)
    assert reciprocal_pair_residual(mult) < 1e-5


def test_floquet_refuses_unconverged_orbit():
    cfg = IntegratorConfig(max_time=5.0)
    orbit = find_periodic_point(vertical_seed(0.0, C_TEST), k=1, mu=0.0,
                                c=C_TEST, cfg=cfg)
    orbit.residual = 1e-6
    with pytest.raises(ConfigError):
        floquet_multipliers(orbit, cfg=cfg)


def test_orbit_json_round_trip():
    import json
    cfg = IntegratorConfig(max_time=5.0)
    orbit = find_periodic_point(vertical_seed(0.0, C_TEST), k=1, mu=0.0,
                                c=C_TEST, cfg=cfg)
    d = json.loads(json.dumps(orbit.to_json()))
    assert d["symmetry"] == "vertical-collision"
    assert d["period"] == pytest.approx(orbit.period, rel=1e-15)
    assert len(d["representative"]) == 6
