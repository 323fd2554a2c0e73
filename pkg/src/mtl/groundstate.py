"""Bound-state profiles: closed forms, Petviashvili iterations, identity checks.

A bound state rotates each component at its own frequency while the spatial
profiles Q_j solve the coupled stationary system

    -lambda_j omega_j Q_j + Lap Q_j - g_j(Q) = 0.

Besides the solvers, this module carries the classical consistency identities
(first integrals relating gradient integrals to term integrals, and the
scaling identity satisfied by the energy) and a small binary file format for
certified profiles.
"""

from __future__ import annotations

import functools
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import (
    Grid,
    SystemSpec,
    integrate,
    nonlinear_gradient,
    stationary_residual,
    virial_coefficient,
)

__all__ = [
    "BoundState",
    "SolverInfo",
    "SphereCriticalPoint",
    "CERTIFICATION_TOL",
    "closed_form_1d",
    "petviashvili_scalar",
    "petviashvili_coupled",
    "maximize_on_sphere",
    "build_synchronous",
    "first_integral_check",
    "pohozaev_check",
    "save_profiles",
    "load_profiles",
    "ProfileFile",
]

CERTIFICATION_TOL = 1e-8

_STAB_TOL = 1e-13
_GAP_TOL = 1e-12
_MAX_ITER = 2000


@dataclass
class SolverInfo:
    converged: bool
    iterations: int
    stabilizer: float
    increment: float
    message: str = ""


@dataclass
class SphereCriticalPoint:
    """Maximizer of the homogeneous interaction profile on the unit sphere."""

    point: tuple
    value: float
    multiplier: float
    residual: float
    homogeneity: int
    degenerate: bool = False


@dataclass
class BoundState:
    """Profiles plus the integrals every later analysis consumes."""

    spec: SystemSpec
    grid: Grid
    profiles: list
    residual_norms: tuple
    mass_integrals: tuple  # int Q_j^2
    gradient_integrals: tuple  # int |grad Q_j|^2
    term_integrals: tuple  # int n_k(Q)
    method: str = ""
    message: str = ""
    sphere: SphereCriticalPoint = None

    @property
    def certified(self) -> bool:
        return max(self.residual_norms) <= CERTIFICATION_TOL

    @property
    def hamiltonian_value(self) -> float:
        return 0.5 * sum(self.gradient_integrals) + 0.5 * sum(self.term_integrals)

    @classmethod
    def from_profiles(cls, spec, grid, profiles, method="", message="", sphere=None):
        """Build the record, measuring residuals and integrals on the grid."""
        clean = []
        for j, p in enumerate(profiles):
            p = np.asarray(p)
            if np.iscomplexobj(p):
                scale = np.max(np.abs(p.real)) or 1.0
                if np.max(np.abs(p.imag)) > 1e-10 * scale:
                    raise ValueError(f"profile {j} has a significant imaginary part")
                p = p.real
            clean.append(np.ascontiguousarray(p, dtype=np.float64))
        res = stationary_residual(spec, grid, clean)
        residual_norms = tuple(float(np.max(np.abs(r))) for r in res)
        mass_integrals = tuple(integrate(grid, p**2) for p in clean)
        gradient_integrals = tuple(_grad_sq_integral(grid, p) for p in clean)
        term_integrals = tuple(integrate(grid, t.density(clean)) for t in spec.terms)
        return cls(
            spec=spec,
            grid=grid,
            profiles=clean,
            residual_norms=residual_norms,
            mass_integrals=mass_integrals,
            gradient_integrals=gradient_integrals,
            term_integrals=term_integrals,
            method=method,
            message=message,
            sphere=sphere,
        )


def _grad_sq_integral(grid: Grid, values: np.ndarray) -> float:
    norm = grid.cell_volume / grid.points**grid.dimension
    fhat = np.fft.fftn(values)
    return norm * float(np.sum(grid.k2() * np.abs(fhat) ** 2))


def closed_form_1d(grid: Grid, omega: float, a: float, exponent: int) -> np.ndarray:
    """Exact 1d profile of -omega q + q'' + a q^exponent = 0.

    q(x) = [omega (s+1) / (2a)]^{1/(s-1)} sech^{2/(s-1)}(sqrt(omega) (s-1) x / 2)
    with s = exponent.  Requires omega, a > 0 and exponent >= 2.
    """
    if grid.dimension != 1:
        raise ValueError("the closed form is one-dimensional")
    s = int(exponent)
    if s < 2:
        raise ValueError("exponent must be at least 2")
    if omega <= 0 or a <= 0:
        raise ValueError("omega and a must be positive")
    x = grid.axis_coords()
    amp = (omega * (s + 1) / (2.0 * a)) ** (1.0 / (s - 1))
    sech = 1.0 / np.cosh(math.sqrt(omega) * (s - 1) * x / 2.0)
    return amp * sech ** (2.0 / (s - 1))


def petviashvili_scalar(
    grid: Grid,
    omega: float,
    a: float,
    exponent: int,
    initial: np.ndarray = None,
    max_iter: int = _MAX_ITER,
) -> tuple:
    """Fixed-point iteration for -omega q + Lap q + a q^exponent = 0.

    Each step applies (omega - Lap)^{-1} to a q^s and rescales by the
    stabilizing factor S^gamma, gamma = s/(s-1), where

        S = [omega int q^2 + int |grad q|^2] / [a int q^{s+1}].

    Returns (profile, SolverInfo).
    """
    s = int(exponent)
    if s < 2:
        raise ValueError("exponent must be at least 2")
    if omega <= 0 or a <= 0:
        raise ValueError("omega and a must be positive")
    gamma = s / (s - 1.0)
    k2 = grid.k2()
    inv = 1.0 / (omega + k2)
    if initial is None:
        r2 = 0.0
        for c in grid.coords():
            r2 = r2 + c**2
        amp = ((s + 1) * omega / (2.0 * a)) ** (1.0 / (s - 1))
        q = amp * np.exp(-omega * r2 / 4.0)
    else:
        q = np.asarray(initial, dtype=np.float64).copy()
    S, gap = math.nan, math.inf
    for it in range(1, max_iter + 1):
        rhs = a * q**s
        denom = integrate(grid, q * rhs)
        if denom <= 0:
            return q, SolverInfo(
                False, it, math.nan, gap, "nonlinear term lost positivity"
            )
        numer = omega * integrate(grid, q**2) + _grad_sq_integral(grid, q)
        S = numer / denom
        q_new = S**gamma * np.fft.ifftn(inv * np.fft.fftn(rhs)).real
        gap = float(np.max(np.abs(q_new - q)))
        q = q_new
        if abs(S - 1.0) <= _STAB_TOL and gap <= _GAP_TOL * max(1.0, float(np.max(np.abs(q)))):
            return q, SolverInfo(True, it, S, gap)
    return q, SolverInfo(False, max_iter, S, gap, "iteration budget exhausted")


@functools.lru_cache(maxsize=16)
def _scalar_profile_cached(dimension, extent, points, omega, a, exponent):
    # parameter sweeps over a synchronous family hit the same scalar problem
    # at every sample; callers must not mutate the cached profile
    grid = Grid(dimension, extent, points)
    return petviashvili_scalar(grid, omega, a, exponent)


def _quadratic_matrix(spec: SystemSpec) -> np.ndarray:
    """Linear coupling matrix C on real vectors from the degree-2 terms."""
    m = spec.components
    C = np.zeros((m, m))
    for term in spec.terms:
        if term.alpha != 2:
            continue
        for b in range(m):
            unit = [1.0 if l == b else 0.0 for l in range(m)]
            g = term.gradient(unit)
            for a_ in range(m):
                C[a_, b] += float(np.real(np.asarray(g[a_])))
    return 0.5 * (C + C.T)  # symmetric up to rounding by construction


def _nonlinear_homogeneity(spec: SystemSpec, context: str) -> int:
    degrees = sorted({t.alpha for t in spec.terms if t.alpha >= 3})
    if not degrees:
        raise ValueError(f"{context}: the system has no nonlinear terms")
    if len(degrees) > 1:
        warnings.warn(
            f"{context}: mixed nonlinear homogeneities {degrees}; using the largest "
            "for the stabilizing exponent (best effort)",
            stacklevel=3,
        )
    return degrees[-1]


def petviashvili_coupled(
    spec: SystemSpec,
    grid: Grid,
    initial: list = None,
    max_iter: int = _MAX_ITER,
    relaxation: float = 0.5,
) -> tuple:
    """Petviashvili iteration for the full coupled stationary system.

    The degree-2 terms are absorbed into the left operator
    L = diag(lambda_j omega_j - Lap) + C, which must be positive definite;
    the iteration then solves L Q = F(Q) with F the (negated) nonlinear part
    of the gradient, using one common stabilizing factor.  The update is
    mixed with the previous iterate (``relaxation`` in (0, 1]); full steps
    can enter a two-cycle on systems where one component feeds the other.

    Returns (BoundState, SolverInfo).  A component collapsing to zero is
    reported in the info message, not treated as failure.
    """
    if not 0.0 < relaxation <= 1.0:
        raise ValueError("relaxation must lie in (0, 1]")
    m = spec.components
    C = _quadratic_matrix(spec)
    base = np.diag(spec.lambda_omega) + C
    eigs = np.linalg.eigvalsh(base)
    if eigs.min() <= 0:
        raise ValueError(
            "left operator is not positive definite "
            f"(smallest eigenvalue {eigs.min():.3g}); detunings too strong"
        )
    alpha = _nonlinear_homogeneity(spec, "petviashvili_coupled")
    gamma = (alpha - 1.0) / (alpha - 2.0)
    if m**2 * grid.points**grid.dimension > 3e8:
        raise ValueError("grid too large for the batched mode-by-mode inverse")
    k2 = grid.k2()
    op = np.zeros(grid.shape + (m, m))
    for a_ in range(m):
        for b in range(m):
            op[..., a_, b] = C[a_, b]
        op[..., a_, a_] += spec.lambda_omega[a_] + k2
    inv = np.linalg.inv(op)

    if initial is None:
        r2 = 0.0
        for c in grid.coords():
            r2 = r2 + c**2
        scale = float(np.mean(spec.lambda_omega))
        Q = [np.exp(-scale * r2 / 4.0) for _ in range(m)]
    else:
        Q = [np.asarray(f, dtype=np.float64).copy() for f in initial]

    def nonlinear_part(fields):
        g = nonlinear_gradient(spec, fields)
        out = []
        for j in range(m):
            lin = sum(C[j, b] * fields[b] for b in range(m))
            out.append(-(np.real(g[j]) - lin))
        return out

    S, gap = math.nan, math.inf
    info = None
    for it in range(1, max_iter + 1):
        F = nonlinear_part(Q)
        denom = sum(integrate(grid, q * f) for q, f in zip(Q, F))
        if denom <= 0:
            info = SolverInfo(False, it, math.nan, gap, "nonlinear term lost positivity")
            break
        numer = 0.0
        for j in range(m):
            numer += spec.lambda_omega[j] * integrate(grid, Q[j] ** 2)
            numer += _grad_sq_integral(grid, Q[j])
        CQ = [sum(C[j, b] * Q[b] for b in range(m)) for j in range(m)]
        numer += sum(integrate(grid, q * cq) for q, cq in zip(Q, CQ))
        S = numer / denom
        Fh = np.stack([np.fft.fftn(f) for f in F], axis=-1)
        Qh = np.einsum("...ab,...b->...a", inv, Fh)
        Q_new = [
            (1.0 - relaxation) * Q[j]
            + relaxation * S**gamma * np.fft.ifftn(Qh[..., j]).real
            for j in range(m)
        ]
        gap = max(float(np.max(np.abs(a - b))) for a, b in zip(Q_new, Q))
        Q = Q_new
        amp = max(float(np.max(np.abs(q))) for q in Q)
        if abs(S - 1.0) <= _STAB_TOL and gap <= _GAP_TOL * max(1.0, amp):
            info = SolverInfo(True, it, S, gap)
            break
    if info is None:
        info = SolverInfo(False, max_iter, S, gap, "iteration budget exhausted")

    amp = max(float(np.max(np.abs(q))) for q in Q) or 1.0
    collapsed = [
        spec.labels[j]
        for j in range(m)
        if float(np.max(np.abs(Q[j]))) < 1e-8 * amp
    ]
    if collapsed:
        note = f"semi-trivial state: component(s) {', '.join(collapsed)} vanished"
        info.message = (info.message + "; " + note).strip("; ")
    bs = BoundState.from_profiles(
        spec, grid, Q, method="petviashvili", message=info.message
    )
    return bs, info


def _poly_eval(x, coeff, beta):
    v = coeff
    for xl, bl in zip(x, beta):
        if bl:
            v = v * xl**bl
    return v


def _sphere_f(spec: SystemSpec, degree: int):
    """f(x) = -(sum of the degree-p term densities) on real vectors."""
    terms = [(-t.coefficient, t.beta) for t in spec.terms if t.alpha == degree]

    def f(x):
        return sum(_poly_eval(x, c, b) for c, b in terms)

    def grad(x):
        m = len(x)
        g = np.zeros(m)
        for c, b in terms:
            for j in range(m):
                if b[j]:
                    bj = list(b)
                    bj[j] -= 1
                    g[j] += b[j] * _poly_eval(x, c, tuple(bj))
        return g

    def hess(x):
        m = len(x)
        H = np.zeros((m, m))
        for c, b in terms:
            for i in range(m):
                if not b[i]:
                    continue
                for j in range(m):
                    if i == j:
                        if b[i] >= 2:
                            bb = list(b)
                            bb[i] -= 2
                            H[i, i] += b[i] * (b[i] - 1) * _poly_eval(x, c, tuple(bb))
                    elif b[j]:
                        bb = list(b)
                        bb[i] -= 1
                        bb[j] -= 1
                        H[i, j] += b[i] * b[j] * _poly_eval(x, c, tuple(bb))
        return H

    return f, grad, hess


def maximize_on_sphere(
    spec: SystemSpec, starts: int = 64, seed: int = 7
) -> SphereCriticalPoint:
    """Maximize the homogeneous interaction profile over the unit sphere.

    The profile is f(x) = -(sum of the nonlinear term densities) evaluated on
    real vectors; the nonlinear terms must share a single homogeneity.  Runs
    projected gradient ascent from random and axis starts, then polishes the
    first-order conditions with Newton steps.  The multiplier of a critical
    point equals homogeneity * value.
    """
    p = _nonlinear_homogeneity(spec, "maximize_on_sphere")
    m = spec.components
    f, grad, hess = _sphere_f(spec, p)
    rng = np.random.default_rng(seed)
    points = [rng.normal(size=m) for _ in range(starts)]
    for j in range(m):
        e = np.zeros(m)
        e[j] = 1.0
        points += [e.copy(), -e]

    best = None
    for x0 in points:
        nrm = np.linalg.norm(x0)
        if nrm < 1e-12:
            continue
        x = x0 / nrm
        step = 0.2
        for _ in range(200):
            g = grad(x)
            y = x + step * g
            ny = np.linalg.norm(y)
            if ny < 1e-12:
                break
            y /= ny
            if f(y) >= f(x):
                x = y
            else:
                step *= 0.5
                if step < 1e-12:
                    break
        mu = p * f(x)
        z = np.append(x, mu)
        for _ in range(40):
            xx, mu = z[:m], z[m]
            G = np.append(grad(xx) - mu * xx, 0.5 * (1.0 - xx @ xx))
            if np.max(np.abs(G)) <= 1e-13:
                break
            J = np.zeros((m + 1, m + 1))
            J[:m, :m] = hess(xx) - mu * np.eye(m)
            J[:m, m] = -xx
            J[m, :m] = -xx
            try:
                z = z + np.linalg.solve(J, -G)
            except np.linalg.LinAlgError:
                break
        xx, mu = z[:m], z[m]
        res = float(np.max(np.abs(np.append(grad(xx) - mu * xx, 0.5 * (1 - xx @ xx)))))
        if res > 1e-10:
            continue
        val = f(xx)
        if best is None or val > best[0]:
            best = (val, xx.copy(), mu)
    if best is None:
        raise RuntimeError("no critical point of the sphere profile converged")
    val, x, mu = best
    # prefer the componentwise-nonnegative representative when it is as good
    y = np.abs(x)
    if f(y) >= val - 1e-12 * (1.0 + abs(val)):
        gy = grad(y)
        muy = p * f(y)
        if float(np.max(np.abs(gy - muy * y))) <= 1e-10:
            x, val, mu = y, f(y), muy
    scale = max((abs(t.coefficient) for t in spec.terms if t.alpha == p), default=0.0)
    residual = float(np.max(np.abs(grad(x) - mu * x)))
    return SphereCriticalPoint(
        point=tuple(float(v) for v in x),
        value=float(val),
        multiplier=float(mu),
        residual=residual,
        homogeneity=p,
        degenerate=bool(abs(val) <= 1e-12 * max(1.0, scale)),
    )


def build_synchronous(spec: SystemSpec, grid: Grid, seed: int = 7) -> tuple:
    """Ground state of a synchronous system from a scalar profile.

    Requires: the degree-2 coupling matrix is diagonal, the diagonal entries
    satisfy lambda_j omega_j + C_jj = const > 0, and the nonlinear terms share
    one homogeneity p with a positive sphere maximum f_max.  Then with
    a = p f_max / 2 and q solving -const q + Lap q + a q^{p-1} = 0, the state
    Q_j = X0_j q is a bound state, X0 the sphere maximizer.

    ``seed`` drives the multi-start of the sphere maximization.

    Returns (BoundState, SolverInfo).
    """
    m = spec.components
    C = _quadratic_matrix(spec)
    off = np.abs(C - np.diag(np.diag(C)))
    if np.max(off) > 0:
        a_, b_ = np.unravel_index(np.argmax(off), off.shape)
        raise ValueError(
            "system is not synchronous: components "
            f"{spec.labels[a_]} and {spec.labels[b_]} are coupled quadratically"
        )
    shifted = [lw + C[j, j] for j, lw in enumerate(spec.lambda_omega)]
    common = shifted[0]
    for j, v in enumerate(shifted[1:], start=1):
        if abs(v - common) > 1e-12 * max(1.0, abs(common)):
            raise ValueError(
                "system is not synchronous: shifted coefficients differ "
                f"({spec.labels[0]}: {common:g}, {spec.labels[j]}: {v:g})"
            )
    if common <= 0:
        raise ValueError(f"common shifted coefficient {common:g} must be positive")
    sphere = maximize_on_sphere(spec, seed=seed)
    if sphere.degenerate or sphere.value <= 0:
        raise ValueError(
            f"sphere maximum {sphere.value:g} is not positive; "
            "no synchronous ground state of this form"
        )
    p = sphere.homogeneity
    a = 0.5 * p * sphere.value
    if grid.dimension == 1:
        q = closed_form_1d(grid, common, a, p - 1)
        info = SolverInfo(True, 0, 1.0, 0.0, "closed form")
        method = "synchronous/closed-form"
    else:
        q, info = _scalar_profile_cached(
            grid.dimension, grid.extent, grid.points, float(common), float(a), p - 1
        )
        method = "synchronous/petviashvili"
    profiles = [x0 * q for x0 in sphere.point]
    bs = BoundState.from_profiles(
        spec, grid, profiles, method=method, message=info.message, sphere=sphere
    )
    return bs, info


@dataclass
class IdentityReport:
    ok: bool
    discrepancies: tuple
    tol: float
    message: str = ""


def first_integral_check(bs: BoundState, tol: float = 1e-6) -> IdentityReport:
    """Check int |grad Q_j|^2 against its expression in the term integrals.

    At a bound state, int |grad Q_j|^2 = sum_k s_{j,k} int n_k with

        s_{j,k} = 1/2 [ -(k_j/K)(d(a_k/2 - 1) + sum_l (k_l b_mk - b_lk))
                        + k_j b_mk - b_jk ],

    where k_j are the weighted mass ratios against the last component and
    K = sum_j k_j.  Reports relative discrepancies per component.
    """
    spec, m = bs.spec, bs.spec.components
    ref = m - 1
    ref_mass = spec.lambda_omega[ref] * bs.mass_integrals[ref]
    if ref_mass <= 0 or bs.mass_integrals[ref] < 1e-14:
        return IdentityReport(
            False, (), tol, "reference component has vanishing mass"
        )
    k = [
        spec.lambda_omega[j] * bs.mass_integrals[j] / ref_mass for j in range(m)
    ]
    K = sum(k)
    d = spec.dimension
    discrepancies = []
    ok = True
    for j in range(m):
        predicted = 0.0
        for t, nk in zip(spec.terms, bs.term_integrals):
            beta = t.beta
            inner = d * (t.alpha / 2.0 - 1.0) + sum(
                k[l] * beta[ref] - beta[l] for l in range(m)
            )
            s_jk = 0.5 * (-(k[j] / K) * inner + k[j] * beta[ref] - beta[j])
            predicted += s_jk * nk
        scale = max(abs(bs.gradient_integrals[j]), abs(predicted), 1e-12)
        rel = abs(bs.gradient_integrals[j] - predicted) / scale
        discrepancies.append(rel)
        ok = ok and rel <= tol
    return IdentityReport(ok, tuple(discrepancies), tol)


def pohozaev_check(bs: BoundState, tol: float = 1e-6) -> IdentityReport:
    """Check H(Q) = 1/8 sum_k (4 - d(alpha_k - 2)) int n_k at a bound state."""
    predicted = 0.0
    for t, nk in zip(bs.spec.terms, bs.term_integrals):
        predicted += 0.125 * virial_coefficient(t, bs.spec.dimension) * nk
    actual = bs.hamiltonian_value
    scale = max(abs(actual), abs(predicted), sum(abs(v) for v in bs.term_integrals), 1e-12)
    rel = abs(actual - predicted) / scale
    return IdentityReport(rel <= tol, (rel,), tol)


@dataclass
class ProfileFile:
    """Contents of a profile file: grid, real profiles, exact frequencies."""

    grid: Grid
    profiles: list
    omegas: tuple  # Fractions, exactly as stored
    residual_norms: tuple


_MAGIC = "MTL1"


def save_profiles(path: str, bs: BoundState) -> None:
    """Write profiles in the MTL1 format (text header + float64 payload)."""
    from .serialize import atomic_write_bytes, fmt_float

    lines = [
        _MAGIC,
        f"dimension {bs.grid.dimension}",
        f"components {bs.spec.components}",
        f"extent {fmt_float(bs.grid.extent)}",
        f"points {bs.grid.points}",
        "omega " + " ".join(str(w) for w in bs.spec.omega_exact),
        "residual " + " ".join(fmt_float(r) for r in bs.residual_norms),
    ]
    payload = b"".join(
        np.ascontiguousarray(p, dtype="<f8").tobytes() for p in bs.profiles
    )
    atomic_write_bytes(path, ("\n".join(lines) + "\n\n").encode("ascii") + payload)


def load_profiles(path: str) -> ProfileFile:
    """Read an MTL1 profile file back, bit-exactly."""
    with open(path, "rb") as fh:
        blob = fh.read()
    sep = blob.find(b"\n\n")
    if sep < 0 or not blob.startswith(_MAGIC.encode("ascii")):
        raise ValueError(f"{path}: not a profile file")
    header = blob[:sep].decode("ascii").splitlines()
    fields = {}
    for line in header[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest
    try:
        grid = Grid(
            int(fields["dimension"]), float(fields["extent"]), int(fields["points"])
        )
        m = int(fields["components"])
        omegas = tuple(Fraction(tok) for tok in fields["omega"].split())
        residuals = tuple(float(tok) for tok in fields["residual"].split())
    except (KeyError, ValueError) as exc:
        raise ValueError(f"{path}: malformed profile header ({exc})") from None
    if len(omegas) != m or len(residuals) != m:
        raise ValueError(f"{path}: header lists wrong number of components")
    count = m * grid.points**grid.dimension
    data = np.frombuffer(blob[sep + 2 :], dtype="<f8", count=-1)
    if data.size != count:
        raise ValueError(
            f"{path}: payload holds {data.size} values, expected {count}"
        )
    profiles = [
        data[i * count // m : (i + 1) * count // m].reshape(grid.shape).copy()
        for i in range(m)
    ]
    return ProfileFile(grid, profiles, omegas, residuals)
