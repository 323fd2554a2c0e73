"""Model layer for coupled gauge-invariant Schrodinger systems.

A system couples ``m`` complex fields through an energy density that is a sum
of real monomial terms ``n = c * Re(prod_j u_j^p_j conj(u_j)^q_j)``.  The
evolution is, componentwise,

    i lambda_j du_j/dt + Lap u_j = g_j(u),    g_j = sum_k dn_k/dconj(u_j),

with conserved mass ``M = 1/2 sum_j lambda_j omega_j int |u_j|^2`` and
Hamiltonian ``H = 1/2 sum_j int |grad u_j|^2 + 1/2 sum_k int n_k``.  Bound
states rotate as ``u_j(t) = exp(i omega_j t) Q_j``.

This module holds the data types (terms, system descriptions, periodic grids,
field states) and the exact phase-balance checks; solvers live elsewhere.
"""

from __future__ import annotations

import math
import numbers
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

__all__ = [
    "MonomialTerm",
    "SystemSpec",
    "Grid",
    "FieldState",
    "GaugeReport",
    "HamiltonianParts",
    "validate_gauge",
    "minimal_rotation_period",
    "integrate",
    "mass",
    "component_masses",
    "hamiltonian",
    "action",
    "nonlinear_gradient",
    "stationary_residual",
    "laplacian",
    "dilate",
    "radial_derivative",
    "virial_coefficient",
]


def _exact(value) -> Fraction:
    """Exact rational value of a frequency as given.

    Ints, strings like ``"3/2"`` and Fractions are taken verbatim; floats
    contribute their exact binary value, so the balance checks below see the
    same numbers the solvers do.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, numbers.Integral):
        return Fraction(int(value))
    if isinstance(value, str):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(value)
    if isinstance(value, numbers.Real):
        return Fraction(float(value))
    raise TypeError(f"cannot interpret {value!r} as a frequency")


@dataclass
class MonomialTerm:
    """One real monomial energy term ``c * Re(prod_j u_j^p_j conj(u_j)^q_j)``.

    Args:
        coefficient: real, nonzero prefactor ``c``.
        p: holomorphic exponents, one per component.
        q: antiholomorphic exponents, one per component.
    """

    coefficient: float
    p: tuple
    q: tuple

    def __post_init__(self):
        self.p = tuple(int(v) for v in self.p)
        self.q = tuple(int(v) for v in self.q)
        if len(self.p) != len(self.q):
            raise ValueError("exponent tuples p and q must have equal length")
        if any(v < 0 for v in self.p + self.q):
            raise ValueError("exponents must be nonnegative integers")
        self.coefficient = float(self.coefficient)
        if not math.isfinite(self.coefficient) or self.coefficient == 0.0:
            raise ValueError("term coefficient must be finite and nonzero")
        if self.alpha < 2:
            raise ValueError(
                f"term has total degree {self.alpha}; energy terms must be at least quadratic"
            )

    @property
    def beta(self) -> tuple:
        """Per-component total degree ``p_j + q_j``."""
        return tuple(pj + qj for pj, qj in zip(self.p, self.q))

    @property
    def alpha(self) -> int:
        """Total degree of the term."""
        return sum(self.p) + sum(self.q)

    @property
    def is_modulus_type(self) -> bool:
        """True when the term depends only on the moduli (p_j == q_j for all j)."""
        return self.p == self.q

    def describe(self, labels=None) -> str:
        """Printable form of the term, e.g. ``-1 Re[v conj(u)^2]``."""
        if labels is None:
            labels = tuple(f"u{j + 1}" for j in range(len(self.p)))
        factors = []
        for name, pj, qj in zip(labels, self.p, self.q):
            if pj == qj:
                if pj:
                    factors.append(f"|{name}|^{2 * pj}")
            else:
                if pj:
                    factors.append(name if pj == 1 else f"{name}^{pj}")
                if qj:
                    factors.append(f"conj({name})" if qj == 1 else f"conj({name})^{qj}")
        body = " ".join(factors) if factors else "1"
        return f"{self.coefficient:g} Re[{body}]"

    def _factors(self, fields):
        out = []
        for uj, pj, qj in zip(fields, self.p, self.q):
            if pj == 0 and qj == 0:
                out.append(1.0)
            else:
                f = 1.0
                if pj:
                    f = uj**pj
                if qj:
                    f = f * np.conj(uj) ** qj
                out.append(f)
        return out

    def density(self, fields) -> np.ndarray:
        """Pointwise value of the (real) term density on the given fields."""
        prod = 1.0
        for f in self._factors(fields):
            prod = prod * f
        return self.coefficient * np.real(prod)

    def gradient(self, fields) -> list:
        """Derivative of the term w.r.t. each ``conj(u_j)`` (the ``g_j`` pieces).

        Evaluated polynomially (never dividing by a field value, which may
        vanish).  Returns one array per component.
        """
        m = len(self.p)
        factors = self._factors(fields)
        out = []
        half_c = 0.5 * self.coefficient
        for j in range(m):
            pj, qj = self.p[j], self.q[j]
            if pj == 0 and qj == 0:
                out.append(np.zeros_like(np.asarray(fields[j], dtype=complex)))
                continue
            rest = 1.0
            for l in range(m):
                if l != j:
                    rest = rest * factors[l]
            uj = np.asarray(fields[j], dtype=complex)
            contrib = 0.0
            if qj:
                contrib = qj * uj**pj * np.conj(uj) ** (qj - 1) * rest
            if pj:
                contrib = contrib + pj * np.conj(uj) ** (pj - 1) * uj**qj * np.conj(rest)
            out.append(half_c * contrib)
        return out


@dataclass
class SystemSpec:
    """Description of a coupled system: dimension, coefficients and energy terms.

    Args:
        dimension: spatial dimension d (1..9; grid computation supports 1..3).
        lambdas: time-derivative coefficients lambda_j.
        omegas: rotation frequencies omega_j; ints, floats, Fractions or
            strings like ``"3/2"``.  Exact rational values are kept alongside
            the float values for the phase-balance checks.
        terms: the monomial energy terms.  May be empty (linear system, useful
            for diagnostics); a nonempty list must contain at least one term
            of total degree >= 3.
        labels: optional component names for reports; defaults to u1..um.

    The signs must satisfy ``lambda_j * omega_j > 0`` for every component so
    the weighted mass is positive definite.
    """

    dimension: int
    lambdas: tuple
    omegas: tuple
    terms: tuple = ()
    labels: tuple = None
    omega_exact: tuple = field(init=False, repr=False)

    def __post_init__(self):
        self.dimension = int(self.dimension)
        if not 1 <= self.dimension <= 9:
            raise ValueError(f"dimension must be in 1..9, got {self.dimension}")
        self.omega_exact = tuple(_exact(w) for w in self.omegas)
        self.lambdas = tuple(float(l) for l in self.lambdas)
        self.omegas = tuple(float(w) for w in self.omega_exact)
        m = len(self.lambdas)
        if m == 0:
            raise ValueError("at least one component is required")
        if len(self.omegas) != m:
            raise ValueError("lambdas and omegas must have equal length")
        for j, (lam, om) in enumerate(zip(self.lambdas, self.omegas)):
            if not (math.isfinite(lam) and math.isfinite(om)):
                raise ValueError(f"component {j}: lambda and omega must be finite")
            if lam * om <= 0:
                raise ValueError(
                    f"component {j}: lambda*omega = {lam * om:g} must be positive"
                )
        self.terms = tuple(self.terms)
        for k, term in enumerate(self.terms):
            if not isinstance(term, MonomialTerm):
                raise TypeError(f"terms[{k}] is not a MonomialTerm")
            if len(term.p) != m:
                raise ValueError(
                    f"terms[{k}] has {len(term.p)} exponents for {m} components"
                )
        if self.terms and max(t.alpha for t in self.terms) < 3:
            raise ValueError(
                "all terms are quadratic; a nonlinear system needs a term of total "
                "degree >= 3 (pass terms=() for a purely linear system)"
            )
        if self.labels is None:
            self.labels = tuple(f"u{j + 1}" for j in range(m))
        else:
            self.labels = tuple(str(s) for s in self.labels)
            if len(self.labels) != m:
                raise ValueError("labels must match the number of components")
            if len(set(self.labels)) != m:
                raise ValueError("labels must be unique")

    @property
    def components(self) -> int:
        return len(self.lambdas)

    @property
    def lambda_omega(self) -> tuple:
        """The positive weights lambda_j * omega_j."""
        return tuple(l * w for l, w in zip(self.lambdas, self.omegas))


@dataclass
class Grid:
    """Uniform periodic grid on the box [-extent, extent)^dimension.

    Args:
        dimension: 1, 2 or 3.
        extent: half-width L of the box.
        points: grid points N per axis; a power of two, at least 16.
    """

    dimension: int
    extent: float
    points: int

    def __post_init__(self):
        self.dimension = int(self.dimension)
        if self.dimension not in (1, 2, 3):
            raise ValueError("grid dimension must be 1, 2 or 3")
        self.extent = float(self.extent)
        if not (math.isfinite(self.extent) and self.extent > 0):
            raise ValueError("extent must be a positive finite number")
        self.points = int(self.points)
        if self.points < 16 or self.points & (self.points - 1):
            raise ValueError("points must be a power of two, at least 16")

    @property
    def h(self) -> float:
        """Grid spacing."""
        return 2.0 * self.extent / self.points

    @property
    def shape(self) -> tuple:
        return (self.points,) * self.dimension

    @property
    def cell_volume(self) -> float:
        return self.h**self.dimension

    def axis_coords(self) -> np.ndarray:
        """Coordinates along one axis, from -L inclusive to L exclusive."""
        return -self.extent + self.h * np.arange(self.points)

    def coords(self) -> list:
        """Per-axis coordinate arrays shaped for broadcasting over the box."""
        x = self.axis_coords()
        out = []
        for axis in range(self.dimension):
            shape = [1] * self.dimension
            shape[axis] = self.points
            out.append(x.reshape(shape))
        return out

    def wavenumbers(self) -> list:
        """Per-axis angular wavenumbers shaped for broadcasting (FFT order)."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.points, d=self.h)
        out = []
        for axis in range(self.dimension):
            shape = [1] * self.dimension
            shape[axis] = self.points
            out.append(k.reshape(shape))
        return out

    def k2(self) -> np.ndarray:
        """|k|^2 over the full box (FFT order)."""
        total = 0.0
        for k in self.wavenumbers():
            total = total + k**2
        return total


@dataclass
class FieldState:
    """A set of complex fields on a grid at one instant."""

    grid: Grid
    fields: list
    time: float = 0.0

    def __post_init__(self):
        self.fields = [np.ascontiguousarray(f, dtype=complex) for f in self.fields]
        for j, f in enumerate(self.fields):
            if f.shape != self.grid.shape:
                raise ValueError(
                    f"field {j} has shape {f.shape}, expected {self.grid.shape}"
                )
        self.time = float(self.time)

    def copy(self) -> "FieldState":
        return FieldState(self.grid, [f.copy() for f in self.fields], self.time)


@dataclass
class GaugeReport:
    """Result of the phase-balance check."""

    ok: bool
    offending: tuple  # (term index, signed balance mismatch) pairs
    invariance_dimension: int
    warnings: tuple


@dataclass
class HamiltonianParts:
    """Hamiltonian split into kinetic part and per-term integrals."""

    total: float
    kinetic: float
    term_integrals: tuple

    @property
    def potential(self) -> float:
        return 0.5 * sum(self.term_integrals)


def _rational_rank(rows) -> int:
    """Rank of a small matrix of Fractions/ints, by exact elimination."""
    rows = [[Fraction(v) for v in row] for row in rows]
    if not rows:
        return 0
    ncols = len(rows[0])
    rank = 0
    for col in range(ncols):
        pivot = next((i for i in range(rank, len(rows)) if rows[i][col] != 0), None)
        if pivot is None:
            continue
        rows[rank], rows[pivot] = rows[pivot], rows[rank]
        inv = rows[rank][col]
        rows[rank] = [v / inv for v in rows[rank]]
        for i in range(len(rows)):
            if i != rank and rows[i][col] != 0:
                f = rows[i][col]
                rows[i] = [a - f * b for a, b in zip(rows[i], rows[rank])]
        rank += 1
        if rank == len(rows):
            break
    return rank


_BALANCE_RTOL = 1e-12


def validate_gauge(spec: SystemSpec) -> GaugeReport:
    """Check that every term is invariant under the rotation exp(i omega_j t).

    A term with exponents (p, q) is invariant iff sum_j omega_j (p_j - q_j)
    vanishes.  The sums are evaluated exactly over rationals; a nonzero sum
    whose relative size is below 1e-12 (a decimal approximation of an exact
    ratio, typically) is accepted with a warning.

    Returns:
        GaugeReport with per-term mismatches, the dimension of the space of
        independent phase invariances, and any warnings.
    """
    warnings = []
    offending = []
    for k, term in enumerate(spec.terms):
        total = Fraction(0)
        scale = Fraction(0)
        for wj, pj, qj in zip(spec.omega_exact, term.p, term.q):
            total += wj * (pj - qj)
            scale += abs(wj) * abs(pj - qj)
        if total == 0:
            continue
        rel = abs(total) / scale  # scale > 0 whenever total != 0
        if rel <= _BALANCE_RTOL:
            warnings.append(
                f"term {k}: phase balance off by {float(total):.3e} "
                f"(relative {float(rel):.3e}); treating as balanced"
            )
        else:
            offending.append((k, float(total)))
    charge_rows = [[pj - qj for pj, qj in zip(t.p, t.q)] for t in spec.terms]
    invariance_dimension = spec.components - _rational_rank(charge_rows)
    if invariance_dimension >= 2 and not offending:
        warnings.append(
            f"{invariance_dimension} independent phase invariances: each carries its "
            "own conserved mass combination, so single-parameter transfer analysis "
            "is degenerate"
        )
    return GaugeReport(
        ok=not offending,
        offending=tuple(offending),
        invariance_dimension=invariance_dimension,
        warnings=tuple(warnings),
    )


def minimal_rotation_period(spec: SystemSpec) -> float:
    """Smallest T > 0 with exp(i omega_j T) = 1 for all j (exact rationals)."""
    fracs = [abs(w) for w in spec.omega_exact if w != 0]
    if not fracs:
        raise ValueError("all frequencies vanish; the rotation orbit is trivial")
    num = math.gcd(*(f.numerator for f in fracs))
    den = math.lcm(*(f.denominator for f in fracs))
    return 2.0 * math.pi / float(Fraction(num, den))


def integrate(grid: Grid, values: np.ndarray) -> float:
    """Rectangle-rule integral over the periodic box (spectrally accurate)."""
    return grid.cell_volume * float(np.sum(np.real(values)))


def mass(spec: SystemSpec, state: FieldState) -> float:
    """Conserved weighted mass M = 1/2 sum_j lambda_j omega_j int |u_j|^2."""
    return sum(component_masses(spec, state))


def component_masses(spec: SystemSpec, state: FieldState) -> tuple:
    """Per-component contributions 1/2 lambda_j omega_j int |u_j|^2."""
    out = []
    for lw, f in zip(spec.lambda_omega, state.fields):
        out.append(0.5 * lw * integrate(state.grid, np.abs(f) ** 2))
    return tuple(out)


def hamiltonian(spec: SystemSpec, state: FieldState) -> HamiltonianParts:
    """Hamiltonian H = 1/2 sum_j int |grad u_j|^2 + 1/2 sum_k int n_k.

    The kinetic part is evaluated spectrally.  Returns the split into the
    kinetic integral and the individual term integrals int n_k.
    """
    grid = state.grid
    k2 = grid.k2()
    norm = grid.cell_volume / grid.points**grid.dimension
    kinetic = 0.0
    for f in state.fields:
        fhat = np.fft.fftn(f)
        kinetic += 0.5 * norm * float(np.sum(k2 * np.abs(fhat) ** 2))
    term_integrals = tuple(
        integrate(grid, t.density(state.fields)) for t in spec.terms
    )
    return HamiltonianParts(
        total=kinetic + 0.5 * sum(term_integrals),
        kinetic=kinetic,
        term_integrals=term_integrals,
    )


def action(spec: SystemSpec, state: FieldState) -> float:
    """Action S = M + H."""
    return mass(spec, state) + hamiltonian(spec, state).total


def nonlinear_gradient(spec: SystemSpec, fields) -> list:
    """g_j(u) = sum_k dn_k/dconj(u_j), one complex array per component."""
    out = [np.zeros(np.shape(fields[j]), dtype=complex) for j in range(spec.components)]
    for term in spec.terms:
        for j, contrib in enumerate(term.gradient(fields)):
            out[j] += contrib
    return out


def laplacian(grid: Grid, values: np.ndarray) -> np.ndarray:
    """Spectral Laplacian on the periodic box."""
    return np.fft.ifftn(-grid.k2() * np.fft.fftn(values))


def dilate(grid: Grid, values: np.ndarray, factor: float) -> np.ndarray:
    """Sample u(factor * x) on the grid through the Fourier series of u.

    Evaluates the trigonometric interpolant of the periodic extension at the
    stretched points, one axis at a time.  Spectrally accurate for fields
    that decay well inside the box and ``factor`` near 1; for ``factor > 1``
    the stretched points wrap around the box, which only matters if the
    field has not decayed at the boundary.
    """
    factor = float(factor)
    if factor <= 0:
        raise ValueError("dilation factor must be positive")
    out = np.asarray(values, dtype=np.complex128)
    x = grid.axis_coords()
    kappa = 2.0 * np.pi * np.fft.fftfreq(grid.points, d=grid.h)
    # replaces the inverse FFT along one axis with interpolant evaluation at
    # the stretched coordinates; the DFT anchors phases at the first sample,
    # so the evaluation points are measured from x[0]
    evaluator = np.exp(1j * np.outer(factor * x - x[0], kappa)) / grid.points
    for axis in range(grid.dimension):
        coef = np.fft.fft(out, axis=axis)
        out = np.moveaxis(
            np.tensordot(evaluator, np.moveaxis(coef, axis, 0), axes=(1, 0)),
            0,
            axis,
        )
    return out


def radial_derivative(grid: Grid, values: np.ndarray) -> np.ndarray:
    """The generator x . grad(u) of dilations, computed spectrally."""
    u = np.asarray(values, dtype=np.complex128)
    hat = np.fft.fftn(u)
    out = np.zeros_like(u)
    for x, k in zip(grid.coords(), grid.wavenumbers()):
        out += x * np.fft.ifftn(1j * k * hat)
    return out


def stationary_residual(spec: SystemSpec, grid: Grid, profiles) -> list:
    """Residual of the rotating-state equations.

    A profile tuple Q solves the system iff

        -lambda_j omega_j Q_j + Lap Q_j - g_j(Q) = 0

    for every j.  Returns one complex residual array per component.
    """
    grads = nonlinear_gradient(spec, profiles)
    out = []
    for j, (lw, Q) in enumerate(zip(spec.lambda_omega, profiles)):
        Q = np.asarray(Q, dtype=complex)
        out.append(-lw * Q + laplacian(grid, Q) - grads[j])
    return out


def virial_coefficient(term: MonomialTerm, dimension: int) -> float:
    """Scaling weight 4 - d*(alpha - 2) of a term in the variance identity.

    Positive below the critical degree 2 + 4/d, zero exactly at it, negative
    above.  Appears both in d^2/dt^2 of the weighted variance and in the
    energy identity satisfied by bound states.
    """
    return 4.0 - dimension * (term.alpha - 2)
