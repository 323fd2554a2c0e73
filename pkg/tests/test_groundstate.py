"""Ground-state solvers against closed forms, scaling identities and each other.

Frozen constants used as oracles (exact sech-integral arithmetic, d=1):
with a = 1/sqrt(3) and omega = 1 the scalar profile q = (3 sqrt 3 / 2)
sech^2(x/2) has int q^2 = 18 and int q^3 = 108 sqrt(3) / 5, and the rescaled
pair (sqrt(2/3) q, q/sqrt(3)) has int P^2 = 12, int Q^2 = 6, int P^2 Q = 14.4.
"""

from __future__ import annotations

import math
import os

import numpy as np
import pytest

from mtl.catalog import (
    cubic_third_harmonic,
    quadratic_two_component,
    rabi_coupled,
    three_wave,
)
from mtl.model import Grid, MonomialTerm, SystemSpec, integrate, stationary_residual
from mtl.groundstate import (
    BoundState,
    CERTIFICATION_TOL,
    build_synchronous,
    closed_form_1d,
    first_integral_check,
    load_profiles,
    maximize_on_sphere,
    petviashvili_coupled,
    petviashvili_scalar,
    pohozaev_check,
    save_profiles,
)

A_SYNC = 1.0 / math.sqrt(3.0)
INT_Q2 = 18.0
INT_Q3 = 108.0 * math.sqrt(3.0) / 5.0


def _grid1(L=40.0, N=2048):
    return Grid(1, L, N)


def _scalar_modulus_spec(c, half_degree, omega=1.0, d=1):
    """Single-component system with energy c * |u|^(2*half_degree)."""
    return SystemSpec(d, (1.0,), (omega,), (MonomialTerm(c, (half_degree,), (half_degree,)),))


def test_closed_form_1d_solves_profile_equation():
    grid = _grid1()
    x = grid.axis_coords()
    for omega, a, s in ((1.0, A_SYNC, 2), (2.0, 1.4, 2), (1.0, 1.0, 5)):
        q = closed_form_1d(grid, omega, a, s)
        qxx = np.fft.ifft(-grid.k2() * np.fft.fft(q)).real
        res = -omega * q + qxx + a * q**s
        assert np.max(np.abs(res)) < 1e-9
    # frozen values for the synchronous coupling
    q = closed_form_1d(grid, 1.0, A_SYNC, 2)
    assert abs(np.max(q) - 3.0 * math.sqrt(3.0) / 2.0) < 1e-12
    assert abs(integrate(grid, q**2) - INT_Q2) < 1e-9
    assert abs(integrate(grid, q**3) - INT_Q3) < 1e-9


def test_closed_form_coupling_rescale():
    # profiles for couplings a and a' differ by the factor (a'/a)^(1/(s-1))
    grid = _grid1(N=256)
    for s in (2, 3, 5):
        qa = closed_form_1d(grid, 1.3, 0.7, s)
        qb = closed_form_1d(grid, 1.3, 2.1, s)
        factor = (0.7 / 2.1) ** (1.0 / (s - 1))
        assert np.max(np.abs(qb - factor * qa)) < 1e-12


def test_scaling_identity_links_mass_and_cubic_integral():
    # int q^2 = a (6 - d) / (6 omega) int q^3 for the quadratic profile equation
    grid = _grid1()
    for omega, a in ((1.0, A_SYNC), (2.0, 1.0)):
        q = closed_form_1d(grid, omega, a, 2)
        lhs = integrate(grid, q**2)
        rhs = a * (6 - 1) / (6 * omega) * integrate(grid, q**3)
        assert abs(lhs - rhs) < 1e-9 * max(1.0, lhs)
    g2 = Grid(2, 20.0, 256)
    q2, info = petviashvili_scalar(g2, 1.0, A_SYNC, 2)
    assert info.converged
    lhs = integrate(g2, q2**2)
    rhs = A_SYNC * (6 - 2) / 6.0 * integrate(g2, q2**3)
    assert abs(lhs - rhs) < 1e-7 * max(1.0, lhs)


def test_petviashvili_scalar_matches_closed_form():
    grid = _grid1(N=1024)
    q, info = petviashvili_scalar(grid, 1.3, 0.7, 2)
    assert info.converged
    assert np.max(np.abs(q - closed_form_1d(grid, 1.3, 0.7, 2))) < 1e-10


def test_petviashvili_scalar_2d_residual():
    grid = Grid(2, 20.0, 256)
    q, info = petviashvili_scalar(grid, 1.0, 1.0, 2)
    assert info.converged
    lap = np.fft.ifftn(-grid.k2() * np.fft.fftn(q)).real
    assert np.max(np.abs(-q + lap + q**2)) < 1e-10


def test_petviashvili_scalar_rejects_bad_inputs():
    grid = _grid1(N=256)
    with pytest.raises(ValueError):
        petviashvili_scalar(grid, -1.0, 1.0, 2)
    with pytest.raises(ValueError):
        petviashvili_scalar(grid, 1.0, 1.0, 1)


def test_sphere_maximizer_quadratic_family():
    sp = maximize_on_sphere(quadratic_two_component(2.0))
    assert abs(sp.value - 2.0 / (3.0 * math.sqrt(3.0))) < 1e-12
    assert abs(sp.point[0] - math.sqrt(2.0 / 3.0)) < 1e-10
    assert abs(sp.point[1] - 1.0 / math.sqrt(3.0)) < 1e-10
    assert abs(sp.multiplier - 3 * sp.value) < 1e-10
    assert sp.residual <= 1e-10
    assert sp.homogeneity == 3
    assert not sp.degenerate


def test_sphere_maximizer_three_wave():
    sp = maximize_on_sphere(three_wave(1))
    expect = (
        math.sqrt((5.0 - math.sqrt(5.0)) / 15.0),
        1.0 / math.sqrt(3.0),
        math.sqrt((5.0 + math.sqrt(5.0)) / 15.0),
    )
    assert abs(sp.value - (math.sqrt(3.0) + math.sqrt(15.0)) / 9.0) < 1e-10
    for got, want in zip(sp.point, expect):
        assert abs(got - want) < 1e-9
    assert all(v >= 0 for v in sp.point)


def test_sphere_maximizer_degenerate_for_defocusing():
    # energy +|u|^4: f = -x^4 has maximum 0 approached nowhere on the sphere;
    # the maximum over the sphere is -1 at the axes, flagged as not positive
    sp = maximize_on_sphere(_scalar_modulus_spec(0.5, 2))
    assert sp.value < 0


def test_build_synchronous_quadratic_matches_explicit_pair():
    grid = _grid1()
    bs, info = build_synchronous(quadratic_two_component(2.3), grid)
    assert info.converged
    assert bs.certified
    q = closed_form_1d(grid, 1.0, A_SYNC, 2)
    assert np.max(np.abs(bs.profiles[0] - math.sqrt(2.0 / 3.0) * q)) < 1e-12
    assert np.max(np.abs(bs.profiles[1] - q / math.sqrt(3.0))) < 1e-12
    assert abs(bs.mass_integrals[0] - 12.0) < 1e-8
    assert abs(bs.mass_integrals[1] - 6.0) < 1e-8
    # int n for the coupling term is -int P^2 Q = -14.4
    assert abs(bs.term_integrals[-1] + 14.4) < 1e-8


def test_build_synchronous_three_wave_certified():
    grid = _grid1()
    bs, info = build_synchronous(three_wave(1), grid)
    assert bs.certified
    a, b, c = bs.sphere.point
    # weighted mass ratios against the last component
    k1 = 9.0 * bs.mass_integrals[0] / bs.mass_integrals[2]
    assert abs(k1 - 9.0 * a**2 / c**2) < 1e-10


def test_build_synchronous_rejects_cross_coupled_quadratics():
    with pytest.raises(ValueError, match="coupled quadratically"):
        build_synchronous(rabi_coupled(dimension=1), _grid1(N=256))


def test_build_synchronous_rejects_detuned_system():
    # beta = 0 with sigma != 1/2 is not synchronous
    spec = quadratic_two_component(2.0, beta=0.0)
    with pytest.raises(ValueError, match="not synchronous"):
        build_synchronous(spec, _grid1(N=256))


def test_petviashvili_coupled_agrees_with_synchronous_route():
    grid = _grid1(N=1024)
    spec = quadratic_two_component(2.3)
    bs_c, info_c = petviashvili_coupled(spec, grid)
    bs_s, _ = build_synchronous(spec, grid)
    assert info_c.converged
    assert bs_c.certified
    diff = max(np.max(np.abs(a - b)) for a, b in zip(bs_c.profiles, bs_s.profiles))
    assert diff < 1e-9


def test_petviashvili_coupled_two_condensate():
    grid = _grid1(N=1024)
    bs, info = petviashvili_coupled(rabi_coupled(dimension=1), grid)
    assert info.converged
    assert bs.certified
    # both components real, even and nonvanishing with overlapping support
    mid = grid.points // 2
    assert bs.profiles[0][mid] * bs.profiles[1][mid] != 0
    assert integrate(grid, bs.profiles[0] * bs.profiles[1]) != 0


def test_petviashvili_coupled_third_harmonic():
    grid = _grid1(N=1024)
    bs, info = petviashvili_coupled(cubic_third_harmonic(dimension=1), grid)
    assert info.converged
    assert bs.certified
    assert all(v > 0 for v in bs.mass_integrals)


def test_petviashvili_coupled_rejects_indefinite_left_operator():
    spec = rabi_coupled(lam=2.0, omega=1.5, dimension=1)
    with pytest.raises(ValueError, match="positive definite"):
        petviashvili_coupled(spec, _grid1(N=256))


def test_petviashvili_coupled_reports_semi_trivial_collapse():
    # two decoupled quartic components started asymmetrically: the small one
    # dies out, leaving a certified one-component state plus a notice
    terms = (
        MonomialTerm(-0.5, (2, 0), (2, 0)),
        MonomialTerm(-0.5, (0, 2), (0, 2)),
    )
    spec = SystemSpec(1, (1.0, 1.0), (1, 1), terms)
    grid = _grid1(N=512)
    x = grid.axis_coords()
    seed = [np.exp(-(x**2) / 4.0), 1e-3 * np.exp(-(x**2) / 4.0)]
    bs, info = petviashvili_coupled(spec, grid, initial=seed)
    assert info.converged
    assert "semi-trivial" in info.message
    assert bs.certified


def test_identity_checks_fail_on_non_solutions():
    grid = _grid1()
    spec = quadratic_two_component(2.0)
    bs, _ = build_synchronous(spec, grid)
    bumped = BoundState.from_profiles(
        spec, grid, [1.05 * bs.profiles[0], bs.profiles[1]]
    )
    assert not bumped.certified
    assert not first_integral_check(bumped).ok
    assert not pohozaev_check(bumped).ok


def test_gradient_aggregate_identity():
    # sum_j int |grad Q_j|^2 = -(d/2) sum_k (alpha_k/2 - 1) int n_k
    grid = _grid1()
    for spec in (quadratic_two_component(1.7), three_wave(1)):
        bs, _ = build_synchronous(spec, grid)
        lhs = sum(bs.gradient_integrals)
        rhs = -0.5 * sum(
            (t.alpha / 2.0 - 1.0) * nk
            for t, nk in zip(spec.terms, bs.term_integrals)
        )
        assert abs(lhs - rhs) < 1e-9 * max(1.0, abs(lhs))


def test_certification_threshold_value():
    assert CERTIFICATION_TOL == 1e-8


def test_profile_file_round_trip(tmp_path):
    grid = _grid1(N=512)
    spec = rabi_coupled(dimension=1, omega="3/2")
    bs, _ = petviashvili_coupled(spec, grid)
    path = os.path.join(tmp_path, "state.mtl1")
    save_profiles(path, bs)
    pf = load_profiles(path)
    assert pf.grid == grid
    assert [str(w) for w in pf.omegas] == ["3/2", "3/2"]
    assert pf.residual_norms == bs.residual_norms
    for a, b in zip(pf.profiles, bs.profiles):
        assert a.dtype == np.float64
        assert (a == b).all()
    # and the loaded profiles still certify against a rebuilt residual
    res = stationary_residual(spec, pf.grid, pf.profiles)
    assert max(float(np.max(np.abs(r))) for r in res) <= CERTIFICATION_TOL


def test_profile_file_header_is_text(tmp_path):
    grid = _grid1(N=256)
    bs, _ = build_synchronous(quadratic_two_component(2.0), grid)
    path = os.path.join(tmp_path, "sync.mtl1")
    save_profiles(path, bs)
    with open(path, "rb") as fh:
        head = fh.read(200).split(b"\n\n")[0].decode("ascii")
    assert head.splitlines()[0] == "MTL1"
    assert "points 256" in head
    assert "omega 1 2" in head


def test_profile_file_rejects_corruption(tmp_path):
    grid = _grid1(N=256)
    bs, _ = build_synchronous(quadratic_two_component(2.0), grid)
    path = os.path.join(tmp_path, "sync.mtl1")
    save_profiles(path, bs)
    blob = open(path, "rb").read()
    truncated = os.path.join(tmp_path, "trunc.mtl1")
    with open(truncated, "wb") as fh:
        fh.write(blob[:-16])
    with pytest.raises(ValueError, match="payload"):
        load_profiles(truncated)
    wrong = os.path.join(tmp_path, "wrong.mtl1")
    with open(wrong, "wb") as fh:
        fh.write(b"JUNK" + blob[4:])
    with pytest.raises(ValueError, match="not a profile file"):
        load_profiles(wrong)


def test_from_profiles_rejects_complex_data():
    grid = _grid1(N=256)
    spec = quadratic_two_component(2.0)
    x = grid.axis_coords()
    with pytest.raises(ValueError, match="imaginary"):
        BoundState.from_profiles(
            spec, grid, [np.exp(-(x**2)) * (1 + 0.1j), np.exp(-(x**2))]
        )
