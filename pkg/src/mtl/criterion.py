"""Instability analysis of certified bound states.

The total weighted mass is the one quadratic invariant shared by all
components, so the energy can be probed along deformations that rescale
space and trade mass between components while keeping that invariant fixed.
The second derivative of the energy along such a deformation is a small
symmetric matrix; a negative eigenvalue certifies orbital instability of
the bound state.

This module assembles that matrix from the cached integrals of a
BoundState, diagonalizes it with Jacobi rotations, runs structural
shortcuts that settle instability from the term list alone, sweeps family
parameters for sign changes of the minimal eigenvalue, and reconstructs
the destabilizing perturbation as a grid field.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .model import (
    FieldState,
    Grid,
    SystemSpec,
    dilate,
    hamiltonian,
    integrate,
    radial_derivative,
)
from .groundstate import (
    CERTIFICATION_TOL,
    BoundState,
    build_synchronous,
    petviashvili_coupled,
)
from .serialize import to_json

__all__ = [
    "UNSTABLE",
    "INCONCLUSIVE",
    "DEGENERATE",
    "InstabilityReport",
    "StructuralCheck",
    "DirectionDiagnostics",
    "SweepRow",
    "SweepResult",
    "ThresholdCandidates",
    "compute_k_ratios",
    "assemble_matrix",
    "eigen_symmetric",
    "verdict",
    "check_supercritical",
    "check_critical_I",
    "check_critical_II",
    "sweep_parameter",
    "constrained_scaling_curve",
    "unstable_direction_field",
    "quadratic_family_threshold",
    "system_fingerprint",
]

UNSTABLE = "UNSTABLE"
INCONCLUSIVE = "INCONCLUSIVE"
DEGENERATE = "DEGENERATE"

# relative noise floor under which the cached term integrals count as zero
_DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class StructuralCheck:
    """Outcome of one term-list shortcut, with the inputs that decided it."""

    name: str
    applies: bool
    reason: str
    details: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "name": self.name,
            "applies": self.applies,
            "reason": self.reason,
            "details": self.details,
        }


@dataclass
class InstabilityReport:
    """Verdict on one bound state.

    Attributes:
        k_ratios: weighted mass ratios, one per component in report order;
            the last entry is 1 by construction.
        matrix: the symmetric deformation Hessian; index 0 is the scaling
            coefficient, indices 1..m-1 the mass-transfer coefficients.
        eigenvalues: ascending eigenvalues of ``matrix``.
        eigenvectors: orthonormal columns matching ``eigenvalues``.
        verdict: UNSTABLE, INCONCLUSIVE, or DEGENERATE.
        tolerance: negativity threshold used for the verdict.
        structural_verdicts: outcomes of the term-list shortcuts.
        direction: (scaling, transfer_1, ..., transfer_m) coefficients of the
            destabilizing deformation when UNSTABLE, else None.  The last
            entry closes the mass constraint.
        component_order: original component index at each report position;
            the last position is the mass reference.
        residual_norms: certification residuals of the analyzed state.
        system_hash: fingerprint of the analyzed system.
        message: margin notes (minimal eigenvalue vs tolerance).
    """

    k_ratios: tuple
    matrix: np.ndarray
    eigenvalues: tuple
    eigenvectors: np.ndarray
    verdict: str
    tolerance: float
    structural_verdicts: tuple
    direction: tuple
    component_order: tuple
    residual_norms: tuple
    system_hash: str
    message: str = ""

    def as_dict(self) -> dict:
        m = self.matrix.shape[0]
        return {
            "k_ratios": list(self.k_ratios),
            "matrix": [[float(self.matrix[i, j]) for j in range(m)] for i in range(m)],
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "eigenvectors": [
                [float(self.eigenvectors[i, j]) for i in range(m)] for j in range(m)
            ],
            "verdict": self.verdict,
            "tolerance": float(self.tolerance),
            "message": self.message,
            "structural_verdicts": [c.as_dict() for c in self.structural_verdicts],
            "direction": None if self.direction is None else list(self.direction),
            "component_order": list(self.component_order),
            "provenance": {
                "system_hash": self.system_hash,
                "residual_norms": list(self.residual_norms),
            },
        }

    def to_json(self) -> str:
        return to_json(self.as_dict())


@dataclass(frozen=True)
class DirectionDiagnostics:
    """Cross-checks attached to a reconstructed unstable direction."""

    quadratic_form: float
    second_difference: float
    relative_gap: float
    mass_tangency: float
    step: float


def system_fingerprint(spec: SystemSpec) -> str:
    """Stable hash of a system description (dimension, weights, terms)."""
    parts = [f"d={spec.dimension}"]
    parts.append("lambda=" + ",".join(format(v, ".17g") for v in spec.lambdas))
    parts.append("omega=" + ",".join(str(w) for w in spec.omega_exact))
    for t in spec.terms:
        ps = ",".join(str(v) for v in t.p)
        qs = ",".join(str(v) for v in t.q)
        parts.append(f"term={format(t.coefficient, '.17g')}|{ps}|{qs}")
    parts.append("labels=" + ",".join(spec.labels))
    return hashlib.sha256(";".join(parts).encode("utf-8")).hexdigest()


def _weighted_masses(spec: SystemSpec, bs: BoundState) -> list:
    return [lw * mj for lw, mj in zip(spec.lambda_omega, bs.mass_integrals)]


def _component_order(spec: SystemSpec, bs: BoundState) -> tuple:
    """Report order of components; the last position is the mass reference.

    The native order is kept whenever the last component carries mass;
    otherwise the heaviest component is moved to the reference slot.
    """
    wm = _weighted_masses(spec, bs)
    top = max(wm)
    if top <= 0.0:
        raise ValueError("all components vanish; the state is degenerate")
    m = spec.components
    if wm[-1] > 1e-12 * top:
        return tuple(range(m))
    jref = int(np.argmax(wm))
    return tuple(j for j in range(m) if j != jref) + (jref,)


def compute_k_ratios(spec: SystemSpec, bs: BoundState, order=None) -> tuple:
    """Weighted mass of each component relative to the reference component.

    Returned in report order; the final entry is exactly 1.
    """
    if order is None:
        order = _component_order(spec, bs)
    wm = _weighted_masses(spec, bs)
    ref = wm[order[-1]]
    if ref <= 0.0:
        raise ValueError("reference component has no mass")
    return tuple(wm[j] / ref for j in order)


def assemble_matrix(spec: SystemSpec, bs: BoundState, order=None) -> np.ndarray:
    """Second derivative of the energy along mass-preserving deformations.

    Row/column 0 differentiates along the spatial rescaling, rows 1..m-1
    along the transfer of mass from each non-reference component into the
    reference.  Every entry is a finite sum over the energy terms weighted
    by the cached integrals int n_k; mass and gradient integrals enter only
    through the ratios k_j.
    """
    if order is None:
        order = _component_order(spec, bs)
    m = spec.components
    d = spec.dimension
    k = compute_k_ratios(spec, bs, order)
    n_ints = bs.term_integrals
    # per-component degrees of each term, permuted into report order
    betas = [[t.beta[orig] for orig in order] for t in spec.terms]

    A = np.zeros((m, m))
    a00 = 0.0
    for t, nk in zip(spec.terms, n_ints):
        a00 += (t.alpha / 2.0 - 1.0) * (d * t.alpha / 2.0 - d - 2.0) * nk
    A[0, 0] = 0.5 * d * a00

    for j in range(1, m):
        v = 0.0
        for t, b, nk in zip(spec.terms, betas, n_ints):
            v += (d * t.alpha / 4.0 - d / 2.0 - 1.0) * (b[j - 1] - k[j - 1] * b[m - 1]) * nk
        A[0, j] = A[j, 0] = v

    for j in range(1, m):
        kj = k[j - 1]
        for jp in range(j, m):
            kp = k[jp - 1]
            v = 0.0
            for b, nk in zip(betas, n_ints):
                bj, bp, bm = b[j - 1], b[jp - 1], b[m - 1]
                if j == jp:
                    w = 0.5 * kj * kj * bm * (bm - 2) + 0.5 * bj * (bj - 2) - kj * bj * bm
                else:
                    w = 0.5 * (kj * kp * bm * (bm - 2) + bj * bp - bm * (kj * bp + kp * bj))
                v += w * nk
            A[j, jp] = A[jp, j] = v
    return A


def eigen_symmetric(matrix) -> tuple:
    """Eigendecomposition of a small symmetric matrix by cyclic Jacobi sweeps.

    Returns (eigenvalues ascending, orthonormal eigenvector columns).  Each
    eigenvector is oriented so its largest-magnitude entry is positive.
    Termination: off-diagonal Frobenius mass at most 1e-14 of the matrix norm.
    """
    a = np.array(matrix, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("square matrix required")
    scale = math.sqrt(float(np.sum(a * a)))
    if float(np.max(np.abs(a - a.T), initial=0.0)) > 1e-12 * max(1.0, scale):
        raise ValueError("matrix is not symmetric")
    a = 0.5 * (a + a.T)
    n = a.shape[0]
    vecs = np.eye(n)
    if scale == 0.0:
        return np.zeros(n), vecs
    target = 1e-14 * scale
    for _ in range(100):
        off = math.sqrt(max(0.0, float(np.sum(a * a) - np.sum(np.diag(a) ** 2))))
        if off <= target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                diff = a[q, q] - a[p, p]
                if abs(apq) < 1e-18 * abs(diff):
                    # rotation angle below double precision; annihilate directly
                    a[p, q] = a[q, p] = 0.0
                    continue
                theta = diff / (2.0 * apq)
                t = math.copysign(1.0, theta) / (abs(theta) + math.hypot(theta, 1.0))
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = c
                rot[p, q] = s
                rot[q, p] = -s
                a = rot.T @ a @ rot
                vecs = vecs @ rot
    w = np.diag(a).copy()
    idx = np.argsort(w, kind="stable")
    w = w[idx]
    vecs = vecs[:, idx]
    for col in range(n):
        pivot = int(np.argmax(np.abs(vecs[:, col])))
        if vecs[pivot, col] < 0:
            vecs[:, col] = -vecs[:, col]
    return w, vecs


def _require_certified(spec: SystemSpec, bs: BoundState):
    worst = max(bs.residual_norms)
    if worst > CERTIFICATION_TOL:
        j = int(np.argmax(bs.residual_norms))
        raise ValueError(
            f"bound state is not certified: component {spec.labels[j]} residual "
            f"{worst:.3e} exceeds {CERTIFICATION_TOL:g}"
        )


def verdict(
    spec: SystemSpec, bs: BoundState, tolerance: float | None = None
) -> InstabilityReport:
    """Full pipeline: ratios, matrix, eigenvalues, verdict, direction.

    UNSTABLE requires an eigenvalue below -tau with
    tau = max(1e-10, 1e-8 * ||A||_F); anything larger is INCONCLUSIVE (the
    test is one-directional).  DEGENERATE means every term integral sits
    below quadrature noise, so the matrix carries no information.

    Pass ``tolerance`` to replace the adaptive tau with a fixed threshold.
    """
    if tolerance is not None and tolerance <= 0:
        raise ValueError(f"tolerance must be positive, got {tolerance:g}")
    _require_certified(spec, bs)
    m = spec.components
    checks = (
        check_supercritical(spec),
        check_critical_I(spec, bs),
        check_critical_II(spec, bs),
    )
    fingerprint = system_fingerprint(spec)
    wm = _weighted_masses(spec, bs)
    noise = _DEGENERATE_RTOL * max(1.0, *bs.mass_integrals) if m else 0.0
    degenerate_mass = max(wm) <= 0.0
    degenerate_terms = all(abs(v) <= noise for v in bs.term_integrals)
    if degenerate_mass or degenerate_terms:
        if degenerate_mass:
            order = tuple(range(m))
            k = (math.nan,) * m
            note = "all components vanish"
        else:
            order = _component_order(spec, bs)
            k = compute_k_ratios(spec, bs, order)
            note = "all term integrals below quadrature noise"
        return InstabilityReport(
            k_ratios=k,
            matrix=np.zeros((m, m)),
            eigenvalues=tuple([0.0] * m),
            eigenvectors=np.eye(m),
            verdict=DEGENERATE,
            tolerance=1e-10,
            structural_verdicts=checks,
            direction=None,
            component_order=order,
            residual_norms=bs.residual_norms,
            system_hash=fingerprint,
            message=note,
        )

    order = _component_order(spec, bs)
    k = compute_k_ratios(spec, bs, order)
    A = assemble_matrix(spec, bs, order)
    w, vecs = eigen_symmetric(A)
    if tolerance is not None:
        tau = float(tolerance)
    else:
        tau = max(1e-10, 1e-8 * math.sqrt(float(np.sum(A * A))))
    message = f"minimal eigenvalue {w[0]:.6e}, tolerance {tau:.3e}"
    if w[0] < -tau:
        label = UNSTABLE
        vec = vecs[:, 0]
        transfers = tuple(float(v) for v in vec[1:])
        closing = -sum(kj * gj for kj, gj in zip(k[: m - 1], transfers))
        direction = (float(vec[0]),) + transfers + (closing,)
    else:
        label = INCONCLUSIVE
        direction = None
        if abs(w[0]) <= tau:
            message += " (within the noise margin of zero)"
    return InstabilityReport(
        k_ratios=k,
        matrix=A,
        eigenvalues=tuple(float(v) for v in w),
        eigenvectors=vecs,
        verdict=label,
        tolerance=tau,
        structural_verdicts=checks,
        direction=direction,
        component_order=order,
        residual_norms=bs.residual_norms,
        system_hash=fingerprint,
        message=message,
    )


def check_supercritical(spec: SystemSpec) -> StructuralCheck:
    """Scaling-only shortcut: does some split degree p > 2 + 4/d order the terms?

    Looks for a degree p above the critical exponent such that every term
    strictly between degree 2 and p contributes nonnegative energy and every
    term above p nonpositive energy; terms exactly at degree 2 or at p drop
    out of the scaling derivative.  Signs are decided structurally: only
    modulus-type terms (p == q) have a definite sign, namely that of their
    coefficient; any other term blocks the candidate degree it constrains.
    If such a p exists, every real certified bound state is unstable.
    """
    name = "supercritical"
    d = spec.dimension
    crit = 2.0 + 4.0 / d
    alphas = sorted({float(t.alpha) for t in spec.terms if t.alpha > 2})
    if not alphas:
        return StructuralCheck(
            name, False, "no terms of degree above 2", {"critical_degree": crit}
        )
    candidates = [a for a in alphas if a > crit]
    candidates += [
        0.5 * (a + b) for a, b in zip(alphas, alphas[1:]) if 0.5 * (a + b) > crit
    ]
    candidates.append(max(alphas + [crit]) + 1.0)
    candidates = sorted(set(candidates))
    first_block = None
    for p in candidates:
        blocker = None
        for t in spec.terms:
            al = float(t.alpha)
            if al == 2.0 or al == p:
                continue
            if not t.is_modulus_type:
                blocker = (t, "is sign-indefinite (not a pure modulus power)")
                break
            if al < p and t.coefficient < 0:
                blocker = (t, f"has negative sign below the split degree {p:g}")
                break
            if al > p and t.coefficient > 0:
                blocker = (t, f"has positive sign above the split degree {p:g}")
                break
        if blocker is None:
            return StructuralCheck(
                name,
                True,
                f"terms are sign-ordered around split degree p={p:g} > {crit:g}",
                {"p": p, "critical_degree": crit},
            )
        if first_block is None:
            first_block = (p, blocker)
    p, (term, why) = first_block
    return StructuralCheck(
        name,
        False,
        f"term {term.describe(spec.labels)} {why}",
        {"critical_degree": crit, "candidates": candidates},
    )


def _critical_degree(spec: SystemSpec) -> Fraction:
    return Fraction(2) + Fraction(4, spec.dimension)


def _detuning_coefficients(spec: SystemSpec):
    """Diagonal quadratic coefficients c_j, or None if any quadratic is off-diagonal."""
    c = [0.0] * spec.components
    for t in spec.terms:
        if t.alpha != 2:
            continue
        if not (t.p == t.q and sum(t.p) == 1):
            return None, t
        c[t.p.index(1)] += t.coefficient
    return c, None


def check_critical_I(spec: SystemSpec, bs: BoundState = None) -> StructuralCheck:
    """Critical shortcut for diagonally detuned systems.

    Structure: every quadratic term is a diagonal detuning c_j |u_j|^2 and
    every other term sits exactly at the critical degree 2 + 4/d (so the
    scaling diagonal entry vanishes).  If some ordered component pair (i, j)
    has c_i lambda_j omega_j != c_j lambda_i omega_i, the mixed entry of the
    deformation Hessian is forced nonzero against a vanishing diagonal,
    which makes the 2x2 minor indefinite: every real certified bound state
    with both components nonvanishing is unstable.
    """
    name = "critical_I"
    crit = _critical_degree(spec)
    details = {"critical_degree": float(crit)}
    c, bad = _detuning_coefficients(spec)
    if c is None:
        return StructuralCheck(
            name,
            False,
            f"quadratic term {bad.describe(spec.labels)} couples components",
            details,
        )
    others = [t for t in spec.terms if t.alpha > 2]
    if not others:
        return StructuralCheck(name, False, "no terms above degree 2", details)
    for t in others:
        if Fraction(t.alpha) != crit:
            return StructuralCheck(
                name,
                False,
                f"term {t.describe(spec.labels)} has degree {t.alpha}, "
                f"not the critical degree {float(crit):g}",
                details,
            )
    lw = spec.lambda_omega
    m = spec.components
    masses = None if bs is None else bs.mass_integrals
    tiny = 0.0 if masses is None else 1e-12 * max(1.0, max(masses))
    balanced = True
    for i in range(m):
        for j in range(m):
            if i == j:
                continue
            lhs = c[i] * lw[j]
            rhs = c[j] * lw[i]
            if abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs), abs(rhs)):
                continue
            balanced = False
            if masses is not None and (masses[i] <= tiny or masses[j] <= tiny):
                continue
            details.update(
                {
                    "pair": [spec.labels[i], spec.labels[j]],
                    "c_i": c[i],
                    "c_j": c[j],
                    "weighted_products": [lhs, rhs],
                }
            )
            if bs is not None:
                predicted = -2.0 * (c[i] - c[j] * lw[i] / lw[j]) * masses[i]
                order = (i,) + tuple(l for l in range(m) if l not in (i, j)) + (j,)
                A = assemble_matrix(spec, bs, order)
                details.update(
                    {
                        "minor": [
                            [float(A[0, 0]), float(A[0, 1])],
                            [float(A[1, 0]), float(A[1, 1])],
                        ],
                        "minor_determinant": float(A[0, 0] * A[1, 1] - A[0, 1] ** 2),
                        "predicted_mixed_entry": predicted,
                    }
                )
            return StructuralCheck(
                name,
                True,
                f"detuning imbalance between {spec.labels[i]} and {spec.labels[j]}: "
                f"{lhs:g} != {rhs:g}",
                details,
            )
    if balanced:
        reason = "detuning coefficients balance for every component pair"
    else:
        reason = "imbalanced pairs exist but involve vanishing components"
    return StructuralCheck(name, False, reason, details)


def check_critical_II(spec: SystemSpec, bs: BoundState = None) -> StructuralCheck:
    """Critical shortcut for a single cross-coupled quadratic term.

    Structure: exactly one quadratic term, of cross type c Re(u_i conj(u_j)),
    with every other term exactly at the critical degree.  The verdict then
    rests on two computed numbers: the weighted masses of the two coupled
    components must differ, and their profile overlap must not vanish.
    """
    name = "critical_II"
    crit = _critical_degree(spec)
    details = {"critical_degree": float(crit)}
    quadratics = [t for t in spec.terms if t.alpha == 2]
    if len(quadratics) != 1:
        return StructuralCheck(
            name,
            False,
            f"expected exactly one quadratic term, found {len(quadratics)}",
            details,
        )
    t0 = quadratics[0]
    if not (sum(t0.p) == 1 and sum(t0.q) == 1 and t0.p != t0.q):
        return StructuralCheck(
            name,
            False,
            f"quadratic term {t0.describe(spec.labels)} is not a cross coupling",
            details,
        )
    i = t0.p.index(1)
    j = t0.q.index(1)
    others = [t for t in spec.terms if t.alpha > 2]
    if not others:
        return StructuralCheck(name, False, "no terms above degree 2", details)
    for t in others:
        if Fraction(t.alpha) != crit:
            return StructuralCheck(
                name,
                False,
                f"term {t.describe(spec.labels)} has degree {t.alpha}, "
                f"not the critical degree {float(crit):g}",
                details,
            )
    details["pair"] = [spec.labels[i], spec.labels[j]]
    if bs is None:
        return StructuralCheck(
            name,
            False,
            "structure matches, but the mass gap and overlap need a computed "
            "bound state",
            details,
        )
    lw = spec.lambda_omega
    wm_i = lw[i] * bs.mass_integrals[i]
    wm_j = lw[j] * bs.mass_integrals[j]
    if wm_i <= 0.0 or wm_j <= 0.0:
        return StructuralCheck(
            name, False, "one of the coupled components vanishes", details
        )
    gap = abs(wm_i - wm_j) / max(wm_i, wm_j)
    overlap = integrate(bs.grid, bs.profiles[i] * bs.profiles[j])
    overlap_rel = abs(overlap) / math.sqrt(
        bs.mass_integrals[i] * bs.mass_integrals[j]
    )
    gap_tol, overlap_tol = 1e-6, 1e-8
    details.update(
        {
            "weighted_masses": [wm_i, wm_j],
            "mass_gap": gap,
            "mass_gap_tolerance": gap_tol,
            "overlap": overlap,
            "relative_overlap": overlap_rel,
            "overlap_tolerance": overlap_tol,
        }
    )
    if gap <= gap_tol:
        return StructuralCheck(
            name,
            False,
            f"weighted masses coincide to {gap:.2e} (tolerance {gap_tol:g})",
            details,
        )
    if overlap_rel <= overlap_tol:
        return StructuralCheck(
            name,
            False,
            f"profile overlap vanishes to {overlap_rel:.2e} "
            f"(tolerance {overlap_tol:g})",
            details,
        )
    k1 = wm_i / wm_j
    predicted = -(1.0 - k1) * t0.coefficient * overlap
    m = spec.components
    order = (i,) + tuple(l for l in range(m) if l not in (i, j)) + (j,)
    A = assemble_matrix(spec, bs, order)
    details.update(
        {
            "k1": k1,
            "predicted_mixed_entry": predicted,
            "minor": [
                [float(A[0, 0]), float(A[0, 1])],
                [float(A[1, 0]), float(A[1, 1])],
            ],
            "minor_determinant": float(A[0, 0] * A[1, 1] - A[0, 1] ** 2),
        }
    )
    return StructuralCheck(
        name,
        True,
        f"mass gap {gap:.3g} and overlap {overlap:.3g} are both resolved",
        details,
    )


def constrained_scaling_curve(
    bs: BoundState, direction, t: float, order=None
) -> FieldState:
    """Deformed profiles at parameter t along a mass-preserving curve.

    ``direction`` holds (scaling, transfer_1, ..., transfer_{m-1}) in report
    order.  Space is rescaled by 1 + scaling*t, the first m-1 components in
    report order are multiplied by 1 + transfer_j*t, and the reference
    component's amplitude is solved from the requirement that the total
    weighted mass measured on the grid stays exactly fixed.
    """
    spec, grid = bs.spec, bs.grid
    m = spec.components
    if order is None:
        order = _component_order(spec, bs)
    direction = tuple(float(v) for v in direction)
    if len(direction) != m:
        raise ValueError(
            f"direction needs {m} entries (scaling plus {m - 1} transfers), "
            f"got {len(direction)}"
        )
    lam = 1.0 + direction[0] * t
    if lam <= 0.0:
        raise ValueError(f"scale factor {lam:g} is not positive at t={t:g}")
    wm = [_weighted_masses(spec, bs)[j] for j in order]
    if wm[-1] <= 0.0:
        raise ValueError("reference component has no mass")
    total = sum(wm)
    partial = sum(
        w * (1.0 + g * t) ** 2 for w, g in zip(wm[:-1], direction[1:])
    )
    radicand = (total - partial) / wm[-1]
    if radicand <= 0.0:
        raise ValueError(
            "mass constraint cannot close at this step; the transfer "
            "coefficients are too large"
        )
    amps = [1.0 + g * t for g in direction[1:]] + [math.sqrt(radicand)]
    half_d = 0.5 * spec.dimension
    fields = [None] * m
    for pos, orig in enumerate(order):
        stretched = dilate(grid, bs.profiles[orig], lam)
        fields[orig] = amps[pos] * lam**half_d * stretched
    return FieldState(grid, fields)


def unstable_direction_field(
    bs: BoundState,
    report: InstabilityReport,
    direction=None,
    step: float = 1e-3,
) -> tuple:
    """Destabilizing perturbation as a grid field, with consistency checks.

    The field has components transfer_j * Q_j + scaling * (d/2 * Q_j +
    x . grad Q_j).  Returns (FieldState, DirectionDiagnostics) where the
    diagnostics compare the matrix quadratic form against a centered second
    difference of the energy along the actual deformation curve, and record
    the weighted-mass tangency of the field.

    Args:
        bs: the certified bound state that was analyzed.
        report: its InstabilityReport; must be UNSTABLE.
        direction: optional override, either m coefficients
            (scaling, transfer_1..transfer_{m-1}) or m+1 with the closing
            transfer included; defaults to the report's direction.
        step: parameter step for the second difference.
    """
    if report.verdict != UNSTABLE:
        raise ValueError(
            f"unstable direction requires an {UNSTABLE} verdict, got {report.verdict}"
        )
    spec, grid = bs.spec, bs.grid
    m = spec.components
    order = report.component_order
    k = report.k_ratios
    if direction is None:
        direction = report.direction
    direction = tuple(float(v) for v in direction)
    if len(direction) == m + 1:
        closing = -sum(kj * gj for kj, gj in zip(k[: m - 1], direction[1:m]))
        if abs(direction[m] - closing) > 1e-8 * max(1.0, *map(abs, direction)):
            raise ValueError(
                f"final transfer {direction[m]:g} does not close the mass "
                f"constraint (expected {closing:g})"
            )
        core = direction[:m]
    elif len(direction) == m:
        core = direction
        closing = -sum(kj * gj for kj, gj in zip(k[: m - 1], direction[1:]))
    else:
        raise ValueError(f"direction must have {m} or {m + 1} entries")

    amps = list(core[1:]) + [closing]
    scaling = core[0]
    half_d = 0.5 * spec.dimension
    fields = [None] * m
    for pos, orig in enumerate(order):
        Q = bs.profiles[orig]
        gen = half_d * Q + radial_derivative(grid, Q).real
        fields[orig] = amps[pos] * Q + scaling * gen
    psi = FieldState(grid, fields)

    lw = spec.lambda_omega
    tangent = sum(
        lw[j] * integrate(grid, bs.profiles[j] * fields[j].real) for j in range(m)
    )
    total = sum(_weighted_masses(spec, bs))
    tangency = abs(tangent) / total

    z = np.array(core)
    quad = float(z @ report.matrix @ z)
    energies = []
    for t in (-step, 0.0, step):
        state = constrained_scaling_curve(bs, core, t, order)
        energies.append(hamiltonian(spec, state).total)
    second = (energies[0] - 2.0 * energies[1] + energies[2]) / step**2
    gap = abs(quad - second) / max(abs(quad), abs(second), 1e-30)
    return psi, DirectionDiagnostics(quad, second, gap, tangency, step)


@dataclass(frozen=True)
class SweepRow:
    parameter: float
    min_eigenvalue: float
    verdict: str


@dataclass(frozen=True)
class SweepResult:
    """Sampled minimal eigenvalues plus refined sign-change brackets."""

    rows: tuple
    brackets: tuple

    def table(self) -> str:
        lines = [f"{'parameter':>12}  {'min eigenvalue':>17}  verdict"]
        for r in self.rows:
            ev = "-" if r.min_eigenvalue is None else format(r.min_eigenvalue, ".6e")
            lines.append(f"{r.parameter:>12.6g}  {ev:>17}  {r.verdict}")
        return "\n".join(lines)


def _synchronous_or_coupled(spec: SystemSpec, grid: Grid):
    try:
        return build_synchronous(spec, grid)
    except ValueError:
        return petviashvili_coupled(spec, grid)


def sweep_parameter(
    build,
    values,
    grid: Grid,
    refine: bool = True,
    target_width: float = 1e-3,
    solve=None,
) -> SweepResult:
    """Scan a one-parameter family for sign changes of the minimal eigenvalue.

    Args:
        build: maps a parameter value to a SystemSpec.
        values: sample points (sorted internally).
        grid: computation grid shared by all samples.
        refine: bisect every sign change of the minimal eigenvalue down to
            ``target_width``.
        solve: optional (spec, grid) -> (BoundState, SolverInfo) override;
            the default tries the synchronous fast path, then the coupled
            iteration.

    A sample whose build or solve fails is recorded with verdict MISSING and
    skipped; the sweep continues.
    """
    if solve is None:
        solve = _synchronous_or_coupled

    def evaluate(value):
        try:
            spec = build(value)
            bs, info = solve(spec, grid)
            if not info.converged:
                return None
            return verdict(spec, bs)
        except (ValueError, RuntimeError, ZeroDivisionError):
            return None

    rows = []
    for v in sorted(float(x) for x in values):
        rep = evaluate(v)
        if rep is None:
            rows.append(SweepRow(v, None, "MISSING"))
        else:
            rows.append(SweepRow(v, rep.eigenvalues[0], rep.verdict))

    brackets = []
    if refine:
        for r1, r2 in zip(rows, rows[1:]):
            if r1.min_eigenvalue is None or r2.min_eigenvalue is None:
                continue
            if (r1.min_eigenvalue < 0.0) == (r2.min_eigenvalue < 0.0):
                continue
            lo, hi = r1.parameter, r2.parameter
            f_lo = r1.min_eigenvalue
            for _ in range(80):
                if hi - lo <= target_width:
                    break
                mid = 0.5 * (lo + hi)
                rep = evaluate(mid)
                if rep is None:
                    break
                f_mid = rep.eigenvalues[0]
                if (f_mid < 0.0) == (f_lo < 0.0):
                    lo, f_lo = mid, f_mid
                else:
                    hi = mid
            brackets.append((lo, hi))
    return SweepResult(tuple(rows), tuple(brackets))


@dataclass(frozen=True)
class ThresholdCandidates:
    """Closed-form candidates for a sweep threshold of the quadratic family.

    ``exact`` is the positive root of the determinant condition
    9(4-d)(1+4s) - d(1-2s)^2 = 0 satisfied by the assembled 2x2 matrix of
    the synchronous two-component quadratic family (NaN when the determinant
    never changes sign).  ``unweighted`` solves the variant whose (1-2s)^2
    carries no dimension factor and ``reduced`` solves (2s-1)^2 = 3(4-d);
    both simplifications circulate and agree with ``exact`` only at d=3,
    so they are reported for comparison, not asserted.
    """

    dimension: int
    exact: float
    exact_coefficients: tuple
    unweighted: float
    reduced: float


def _larger_root(a: float, b: float, c: float) -> float:
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        return math.nan
    return (-b + math.sqrt(disc)) / (2.0 * a)


def quadratic_family_threshold(dimension: int) -> ThresholdCandidates:
    """Candidate instability thresholds in sigma for the quadratic family."""
    d = int(dimension)
    if d < 1:
        raise ValueError("dimension must be positive")
    exact_coeffs = (4 * d, 32 * d - 144, 10 * d - 36)
    exact = _larger_root(*[float(v) for v in exact_coeffs])
    unweighted = _larger_root(4.0, -(52.0 - 12.0 * d), -(11.0 - 3.0 * d))
    reduced = math.nan
    if 3 * (4 - d) >= 0:
        reduced = 0.5 * (1.0 + math.sqrt(3.0 * (4 - d)))
    return ThresholdCandidates(d, exact, exact_coeffs, unweighted, reduced)
