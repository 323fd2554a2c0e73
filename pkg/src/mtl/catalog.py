"""Built-in example systems, shared by the command-line configs and the tests."""

from __future__ import annotations

from .model import MonomialTerm, SystemSpec, _exact

__all__ = [
    "quadratic_two_component",
    "three_wave",
    "cubic_third_harmonic",
    "rabi_coupled",
]


def quadratic_two_component(sigma, omega=1.0, beta=None, dimension=1) -> SystemSpec:
    """Two components with a quadratic coupling -Re(conj(u)^2 v).

    The second component carries a detuning term ``beta |v|^2``; passing
    ``beta=None`` selects the synchronous value ``omega (1 - 2 sigma)``, for
    which the ground state is a pair of rescaled scalar profiles.
    """
    sigma = float(sigma)
    omega = _exact(omega)
    if sigma <= 0 or omega <= 0:
        raise ValueError("sigma and omega must be positive")
    if beta is None:
        beta = float(omega) * (1.0 - 2.0 * sigma)
    terms = []
    if beta != 0.0:
        terms.append(MonomialTerm(beta, (0, 1), (0, 1)))
    terms.append(MonomialTerm(-1.0, (0, 1), (2, 0)))
    return SystemSpec(
        dimension, (1.0, sigma), (omega, 2 * omega), tuple(terms), labels=("u", "v")
    )


def three_wave(dimension=1) -> SystemSpec:
    """Three resonant components with frequencies (3, 2, 1).

    The detunings (-7, -2, +1) make the system synchronous with common value
    2, so the ground state is a common scalar profile times a fixed direction.
    """
    terms = (
        MonomialTerm(-7.0, (1, 0, 0), (1, 0, 0)),
        MonomialTerm(-2.0, (0, 1, 0), (0, 1, 0)),
        MonomialTerm(1.0, (0, 0, 1), (0, 0, 1)),
        MonomialTerm(-1.0, (0, 1, 0), (0, 0, 2)),
        MonomialTerm(-2.0, (0, 1, 1), (1, 0, 0)),
    )
    return SystemSpec(
        dimension, (3.0, 2.0, 1.0), (3, 2, 1), terms, labels=("u", "v", "w")
    )


def cubic_third_harmonic(dimension=2, sigma=1.0, mu=1.0, omega=1.0) -> SystemSpec:
    """Fundamental beam coupled to its third harmonic in a Kerr medium."""
    sigma = float(sigma)
    mu = float(mu)
    omega = _exact(omega)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if omega <= 0:
        raise ValueError("omega must be positive for a bound state")
    terms = (
        MonomialTerm(1.0, (1, 0), (1, 0)),
        MonomialTerm(mu, (0, 1), (0, 1)),
        MonomialTerm(-1.0 / 18.0, (2, 0), (2, 0)),
        MonomialTerm(-9.0 / 2.0, (0, 2), (0, 2)),
        MonomialTerm(-2.0, (1, 1), (1, 1)),
        MonomialTerm(-2.0 / 9.0, (0, 1), (3, 0)),
    )
    return SystemSpec(
        dimension, (1.0, sigma), (omega, 3 * omega), terms, labels=("u", "w")
    )


def rabi_coupled(
    lam=0.5, k11=1.0, k12=1.5, k22=4.0, omega=1.5, dimension=2
) -> SystemSpec:
    """Two-component condensate with linear (Rabi) exchange coupling.

    Both components rotate with the same frequency; ``omega > |lam|`` keeps
    the linearized operator positive definite.
    """
    lam = float(lam)
    omega = _exact(omega)
    if lam == 0.0:
        raise ValueError("the exchange coupling lam must be nonzero")
    terms = [MonomialTerm(-2.0 * lam, (1, 0), (0, 1))]
    if k11:
        terms.append(MonomialTerm(-float(k11) / 2.0, (2, 0), (2, 0)))
    if k22:
        terms.append(MonomialTerm(-float(k22) / 2.0, (0, 2), (0, 2)))
    if k12:
        terms.append(MonomialTerm(-float(k12), (1, 1), (1, 1)))
    terms = tuple(terms)
    return SystemSpec(
        dimension, (1.0, 1.0), (omega, omega), terms, labels=("u", "v")
    )
