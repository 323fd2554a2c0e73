"""Config-driven front end for the library pipelines.

A run is declared in a small INI dialect (sections ``[system]``,
``[system.term.N]``, ``[grid]``, ``[solver]``, ``[criterion]``,
``[simulate]``, ``[output]``, plus free parameters under ``[params]`` that
value expressions may reference).  Commands chain the library modules:

  validate     parse the config, print the phase-balance and synchronicity
               audit for every term
  groundstate  solve for the profiles; write the MTL1 file and the integral
               and identity-check report
  analyze      solve (or re-read a previously written profile file) and run
               the instability test; write the report JSON
  simulate     solve, optionally perturb along the computed unstable
               direction, integrate; write the trace CSV and events JSON
  reproduce    pinned end-to-end studies printing a pass/fail table

Exit codes: 0 completed, 1 reproduction row failed, 2 inconclusive verdict,
3 solver failure, 4 config error.  Whenever a command stops before writing
its artifacts the reason also lands in a machine-readable ``error.json``.

All report output funnels through the pinned float formatting in
``serialize``, so identical configs produce byte-identical files.
"""

from __future__ import annotations

import argparse
import ast
import math
import os
import re
import sys
from dataclasses import dataclass, replace
from fractions import Fraction
from importlib import resources

import numpy as np

from . import catalog
from .criterion import (
    UNSTABLE,
    check_critical_I,
    check_critical_II,
    check_supercritical,
    quadratic_family_threshold,
    sweep_parameter,
    system_fingerprint,
    verdict,
)
from .dynamics import evolve, orbit_distance, perturbed_initial_data, save_trace
from .groundstate import (
    CERTIFICATION_TOL,
    BoundState,
    SolverInfo,
    _quadratic_matrix,
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
from .model import Grid, GaugeReport, MonomialTerm, SystemSpec, integrate, validate_gauge
from .serialize import atomic_write_text, dump_json

__all__ = [
    "ConfigError",
    "SolverFailure",
    "RunConfig",
    "SolverSettings",
    "SimulateSettings",
    "OutputSettings",
    "parse_config",
    "default_grid",
    "main",
    "EXIT_OK",
    "EXIT_REPRODUCE",
    "EXIT_INCONCLUSIVE",
    "EXIT_SOLVER",
    "EXIT_CONFIG",
]

EXIT_OK = 0
EXIT_REPRODUCE = 1
EXIT_INCONCLUSIVE = 2
EXIT_SOLVER = 3
EXIT_CONFIG = 4


# --------------------------------------------------------------- exceptions


class ConfigError(Exception):
    """One or more config problems, each tagged with its source line.

    ``errors`` holds (line, message) pairs; line 0 refers to the file as a
    whole and negative lines to command-line overrides.
    """

    def __init__(self, source: str, errors):
        self.source = source
        self.errors = list(errors)
        super().__init__("\n".join(self.lines()))

    def lines(self) -> list:
        out = []
        for line, message in self.errors:
            if line > 0:
                out.append(f"{self.source}:{line}: {message}")
            elif line == 0:
                out.append(f"{self.source}: {message}")
            else:
                out.append(f"--set: {message}")
        return out


class SolverFailure(Exception):
    """Ground-state computation did not produce a certified state."""


# ------------------------------------------------------- value expressions


_FUNCTIONS = {"sqrt": math.sqrt, "exp": math.exp, "log": math.log}
_CONSTANTS = {"pi": math.pi}


class ExprError(ValueError):
    pass


def _eval_node(node, env):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, env)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return float(node.value)
        raise ExprError(f"literal {node.value!r} is not a number")
    if isinstance(node, ast.Name):
        if node.id in env:
            return float(env[node.id])
        if node.id in _CONSTANTS:
            return _CONSTANTS[node.id]
        raise ExprError(f"unknown name '{node.id}'")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.UAdd, ast.USub)):
        value = _eval_node(node.operand, env)
        return value if isinstance(node.op, ast.UAdd) else -value
    if isinstance(node, ast.BinOp):
        a = _eval_node(node.left, env)
        b = _eval_node(node.right, env)
        if isinstance(node.op, ast.Add):
            return a + b
        if isinstance(node.op, ast.Sub):
            return a - b
        if isinstance(node.op, ast.Mult):
            return a * b
        if isinstance(node.op, ast.Div):
            if b == 0.0:
                raise ExprError("division by zero")
            return a / b
        if isinstance(node.op, ast.Pow):
            return a**b
        raise ExprError(f"unsupported operator {type(node.op).__name__}")
    if (
        isinstance(node, ast.Call)
        and isinstance(node.func, ast.Name)
        and node.func.id in _FUNCTIONS
        and len(node.args) == 1
        and not node.keywords
    ):
        return _FUNCTIONS[node.func.id](_eval_node(node.args[0], env))
    raise ExprError(f"unsupported syntax ({type(node).__name__})")


def eval_number(text: str, env: dict) -> float:
    """Evaluate an arithmetic expression over numbers, parameters and sqrt/pi."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ExprError(f"bad expression {text!r}: {exc.msg}") from None
    try:
        value = _eval_node(tree, env)
    except ZeroDivisionError:
        raise ExprError(f"division by zero in {text!r}") from None
    except OverflowError:
        raise ExprError(f"overflow in {text!r}") from None
    if not math.isfinite(value):
        raise ExprError(f"{text!r} does not evaluate to a finite number")
    return float(value)


_RATIONAL_RE = re.compile(r"[+-]?[0-9]+(?:\s*/\s*[0-9]+)?")
_BOOL_WORDS = {
    "true": True,
    "yes": True,
    "on": True,
    "1": True,
    "false": False,
    "no": False,
    "off": False,
    "0": False,
}


# --------------------------------------------------------------- raw reader


_SECTION_RE = re.compile(r"\[([A-Za-z0-9_.]+)\]")
_KEY_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_TERM_SECTION_RE = re.compile(r"system\.term\.([1-9][0-9]*)")
_PLAIN_SECTIONS = (
    "params",
    "system",
    "grid",
    "solver",
    "criterion",
    "simulate",
    "output",
)


def _known_section(name: str) -> bool:
    return name in _PLAIN_SECTIONS or bool(_TERM_SECTION_RE.fullmatch(name))


def _read_sections(text: str):
    """Split config text into {section: {key: (value, line)}} plus header lines.

    Comment lines start with '#' or ';'.  Keys must precede an '=' and be
    unique within their section; sections must be declared once.
    """
    sections: dict = {}
    header_lines: dict = {}
    errors = []
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("["):
            match = _SECTION_RE.fullmatch(line)
            if not match:
                errors.append((lineno, f"malformed section header {line!r}"))
                current = None
                continue
            name = match.group(1)
            if not _known_section(name):
                errors.append((lineno, f"unknown section [{name}]"))
                current = None
                continue
            if name in sections:
                errors.append((lineno, f"duplicate section [{name}]"))
                current = None
                continue
            sections[name] = {}
            header_lines[name] = lineno
            current = sections[name]
            continue
        key, eq, value = line.partition("=")
        if not eq:
            errors.append((lineno, f"expected 'key = value', got {line!r}"))
            continue
        key = key.strip()
        value = value.strip()
        if not _KEY_RE.fullmatch(key):
            errors.append((lineno, f"bad key name {key!r}"))
            continue
        if current is None:
            errors.append((lineno, f"key '{key}' appears before any section"))
            continue
        if key in current:
            errors.append((lineno, f"duplicate key '{key}'"))
            continue
        if not value:
            errors.append((lineno, f"key '{key}' has an empty value"))
            continue
        current[key] = (value, lineno)
    return sections, header_lines, errors


def _apply_overrides(sections, overrides, errors):
    """Fold --set pairs into the section map.

    Bare names target [params]; dotted names target a section key, e.g.
    ``grid.points=256`` or ``system.term.1.coefficient=-2``.  Replacing an
    existing key keeps its position (parameter evaluation order is the file
    order).
    """
    for item in overrides:
        name, eq, value = item.partition("=")
        name = name.strip()
        value = value.strip()
        if not eq or not name or not value:
            errors.append((-1, f"expected NAME=VALUE, got {item!r}"))
            continue
        if "." in name:
            section, _, key = name.rpartition(".")
            if not _known_section(section):
                errors.append((-1, f"'{name}' does not address a known section"))
                continue
        else:
            section, key = "params", name
        if not _KEY_RE.fullmatch(key):
            errors.append((-1, f"bad key name {key!r}"))
            continue
        sections.setdefault(section, {})[key] = (value, -1)


# ------------------------------------------------------------- validation


def _where(section_key: str, got) -> int:
    return got[1] if got is not None else 0


def _take_number(
    entries,
    section,
    key,
    env,
    errors,
    default=None,
    required=False,
    header=0,
    minimum=None,
    maximum=None,
    positive=False,
):
    got = entries.pop(key, None)
    if got is None:
        if required:
            errors.append((header, f"[{section}] is missing required key '{key}'"))
        return default
    value, line = got
    try:
        number = eval_number(value, env)
    except ExprError as exc:
        errors.append((line, f"{key}: {exc}"))
        return default
    if positive and number <= 0:
        errors.append((line, f"{key} must be positive, got {number:g}"))
        return default
    if minimum is not None and number < minimum:
        errors.append((line, f"{key} must be at least {minimum:g}, got {number:g}"))
        return default
    if maximum is not None and number > maximum:
        errors.append((line, f"{key} must be at most {maximum:g}, got {number:g}"))
        return default
    return number


def _as_int(number, key, line, errors):
    if number is None:
        return None
    if abs(number - round(number)) > 1e-9:
        errors.append((line, f"{key} must be an integer, got {number:g}"))
        return None
    return int(round(number))


def _take_int(entries, section, key, env, errors, default=None, required=False, header=0, minimum=None):
    got = entries.get(key)
    line = _where(key, got)
    number = _take_number(
        entries, section, key, env, errors, None, required, header, minimum
    )
    if number is None:
        return default
    value = _as_int(number, key, line, errors)
    return default if value is None else value


def _take_flag(entries, section, key, errors, default):
    got = entries.pop(key, None)
    if got is None:
        return default
    value, line = got
    word = value.lower()
    if word not in _BOOL_WORDS:
        errors.append((line, f"{key} must be true or false, got {value!r}"))
        return default
    return _BOOL_WORDS[word]


def _take_string(entries, key, default=None):
    got = entries.pop(key, None)
    return default if got is None else got[0]


def _complain_unknown(entries, section, errors):
    for key, (_, line) in entries.items():
        errors.append((line, f"unknown key '{key}' in [{section}]"))


def _split_list(value: str) -> list:
    return [tok.strip() for tok in value.split(",")]


# ------------------------------------------------------------- data model


@dataclass
class SolverSettings:
    method: str = "petviashvili"
    tolerance: float = CERTIFICATION_TOL
    max_iter: int = 2000
    relaxation: float = 0.5
    seed: int = 7
    profile: str = None


@dataclass
class SimulateSettings:
    t_final: float
    dt: float = 1e-3
    t0: float = 0.0
    epsilon: float = None
    sample_every: int = 10
    error_tolerance: float = 1e-8
    error_control: bool = True


@dataclass
class OutputSettings:
    directory: str = "out"
    formats: tuple = ("json", "csv", "mtl1")


@dataclass
class RunConfig:
    """Fully validated run description, ready for the command pipelines."""

    source: str
    spec: SystemSpec
    grid: Grid
    explicit_extent: float
    explicit_points: int
    solver: SolverSettings
    criterion_tolerance: float
    simulate: SimulateSettings
    output: OutputSettings
    params: dict
    gauge: GaugeReport

    @property
    def grid_auto(self) -> bool:
        return self.explicit_extent is None and self.explicit_points is None


_AUTO_EXTENT = {1: 28.0, 2: 16.0, 3: 16.0}
_AUTO_POINTS = {1: 512, 2: 256, 3: 128}


def default_grid(spec: SystemSpec, extent=None, points=None) -> Grid:
    """Deterministic grid for a system whose grid block says ``auto``.

    The slowest profile decay rate is sqrt(mu), mu the smallest eigenvalue
    of diag(lambda_j omega_j) + C with C the quadratic coupling matrix, so
    the box half-width scales as 1/sqrt(mu) from a per-dimension base
    (28, 16, 16); the point count is the per-dimension base (512, 256, 128).
    """
    if spec.dimension not in _AUTO_EXTENT:
        raise ValueError(
            "automatic grids cover dimensions 1..3; set [grid] extent and points"
        )
    if extent is None:
        base = np.diag(spec.lambda_omega) + _quadratic_matrix(spec)
        mu = float(np.linalg.eigvalsh(base)[0])
        if mu <= 0:
            raise ValueError(
                f"the linear part is not positive definite (smallest eigenvalue "
                f"{mu:.3g}); set [grid] extent and points explicitly"
            )
        extent = _AUTO_EXTENT[spec.dimension] / math.sqrt(mu)
    if points is None:
        points = _AUTO_POINTS[spec.dimension]
    return Grid(spec.dimension, float(extent), int(points))


def _load_source(path: str):
    """Return (display name, text, base dir) for a path or ``builtin:<name>``."""
    if path.startswith("builtin:"):
        name = path[len("builtin:") :]
        root = resources.files("mtl") / "_configs"
        ref = root / f"{name}.cfg"
        if not ref.is_file():
            available = sorted(
                entry.name[: -len(".cfg")]
                for entry in root.iterdir()
                if entry.name.endswith(".cfg")
            )
            raise ConfigError(
                path,
                [(0, f"unknown builtin config '{name}'; available: {', '.join(available)}")],
            )
        return path, ref.read_text(encoding="utf-8"), os.getcwd()
    if not os.path.isfile(path):
        raise ConfigError(path, [(0, "no such config file")])
    with open(path, encoding="utf-8") as handle:
        return path, handle.read(), os.path.dirname(os.path.abspath(path))


def _parse_system(sections, headers, env, errors):
    """Build the SystemSpec from [system] and its term sections."""
    entries = dict(sections["system"])
    header = headers.get("system", 0)

    dimension = _take_int(
        entries, "system", "dimension", env, errors, required=True, header=header, minimum=1
    )

    lambdas = None
    got = entries.pop("lambda", None)
    if got is None:
        errors.append((header, "[system] is missing required key 'lambda'"))
    else:
        value, line = got
        try:
            lambdas = tuple(eval_number(tok, env) for tok in _split_list(value))
        except ExprError as exc:
            errors.append((line, f"lambda: {exc}"))

    omegas = None
    got = entries.pop("omega", None)
    if got is None:
        errors.append((header, "[system] is missing required key 'omega'"))
    else:
        value, line = got
        parsed = []
        for tok in _split_list(value):
            if _RATIONAL_RE.fullmatch(tok):
                parsed.append(tok.replace(" ", ""))  # exact rational, kept as text
                continue
            try:
                parsed.append(eval_number(tok, env))
            except ExprError as exc:
                errors.append((line, f"omega: {exc}"))
                parsed = None
                break
        omegas = tuple(parsed) if parsed is not None else None

    labels = None
    got = entries.pop("labels", None)
    if got is not None:
        value, line = got
        labels = tuple(_split_list(value))
        if not all(labels):
            errors.append((line, "labels must be a comma-separated list of names"))
            labels = None
    _complain_unknown(entries, "system", errors)

    term_sections = []
    for name in sections:
        match = _TERM_SECTION_RE.fullmatch(name)
        if match:
            term_sections.append((int(match.group(1)), name))
    term_sections.sort()
    expected = list(range(1, len(term_sections) + 1))
    if [idx for idx, _ in term_sections] != expected:
        errors.append(
            (
                header,
                "term sections must be numbered [system.term.1] .. "
                f"[system.term.{len(term_sections)}] without gaps",
            )
        )
        return None, ()

    ncomp = len(lambdas) if lambdas is not None else None
    terms = []
    term_lines = []
    for index, name in term_sections:
        tentries = dict(sections[name])
        theader = headers.get(name, 0)
        term_lines.append(theader)
        coeff = _take_number(
            tentries, name, "coefficient", env, errors, required=True, header=theader
        )
        exponents = {}
        for key in ("p", "q"):
            got = tentries.pop(key, None)
            if got is None:
                errors.append((theader, f"[{name}] is missing required key '{key}'"))
                continue
            value, line = got
            try:
                exponents[key] = tuple(
                    int(eval_number(tok, env)) for tok in _split_list(value)
                )
            except (ExprError, ValueError) as exc:
                errors.append((line, f"{key}: {exc}"))
        _complain_unknown(tentries, name, errors)
        if coeff is None or "p" not in exponents or "q" not in exponents:
            continue
        if ncomp is not None and (
            len(exponents["p"]) != ncomp or len(exponents["q"]) != ncomp
        ):
            errors.append(
                (
                    theader,
                    f"term {index} lists {len(exponents['p'])}/{len(exponents['q'])} "
                    f"exponents for {ncomp} components",
                )
            )
            continue
        try:
            terms.append(MonomialTerm(coeff, exponents["p"], exponents["q"]))
        except ValueError as exc:
            errors.append((theader, f"term {index}: {exc}"))

    if errors or dimension is None or lambdas is None or omegas is None:
        return None, tuple(term_lines)
    try:
        spec = SystemSpec(dimension, lambdas, omegas, tuple(terms), labels=labels)
    except (ValueError, TypeError) as exc:
        errors.append((header, str(exc)))
        return None, tuple(term_lines)
    return spec, tuple(term_lines)


def parse_config(path: str, overrides=()) -> RunConfig:
    """Parse and fully validate a config file (or ``builtin:<name>``).

    ``overrides`` holds ``--set`` pairs applied before validation.  Raises
    ConfigError carrying every problem found, each with its source line.
    """
    source, text, base_dir = _load_source(path)
    sections, headers, errors = _read_sections(text)
    _apply_overrides(sections, overrides, errors)
    if "system" not in sections:
        errors.append((0, "missing [system] section"))
        raise ConfigError(source, errors)

    env = {}
    for key, (value, line) in sections.get("params", {}).items():
        try:
            env[key] = eval_number(value, env)
        except ExprError as exc:
            errors.append((line if line > 0 else -1, f"{key}: {exc}"))

    spec, term_lines = _parse_system(sections, headers, env, errors)

    gauge = None
    if spec is not None:
        gauge = validate_gauge(spec)
        if not gauge.ok:
            for index, mismatch in gauge.offending:
                line = term_lines[index] if index < len(term_lines) else 0
                errors.append(
                    (
                        line,
                        f"term {index + 1} breaks the common gauge: phase sum "
                        f"mismatch {mismatch:g}",
                    )
                )

    # grid
    entries = dict(sections.get("grid", {}))
    gheader = headers.get("grid", 0)
    explicit_extent = None
    explicit_points = None
    got = entries.pop("extent", None)
    if got is not None and got[0].lower() != "auto":
        explicit_extent = _take_number(
            {"extent": got}, "grid", "extent", env, errors, positive=True
        )
    got = entries.pop("points", None)
    if got is not None and got[0].lower() != "auto":
        explicit_points = _take_int(
            {"points": got}, "grid", "points", env, errors, minimum=16
        )
    _complain_unknown(entries, "grid", errors)

    grid = None
    if spec is not None:
        if explicit_extent is not None and explicit_points is not None:
            try:
                grid = Grid(spec.dimension, explicit_extent, explicit_points)
            except ValueError as exc:
                errors.append((gheader, f"grid: {exc}"))
        elif spec.dimension <= 3:
            try:
                grid = default_grid(spec, explicit_extent, explicit_points)
            except ValueError as exc:
                errors.append((gheader, str(exc)))
        elif explicit_extent is not None or explicit_points is not None:
            errors.append((gheader, "grid computation supports dimensions 1..3"))

    # solver
    entries = dict(sections.get("solver", {}))
    sheader = headers.get("solver", 0)
    solver = SolverSettings()
    method = _take_string(entries, "method", solver.method)
    if method not in ("closed-form", "petviashvili", "synchronous", "file"):
        errors.append(
            (
                sheader,
                f"method must be closed-form, petviashvili, synchronous or file, "
                f"got {method!r}",
            )
        )
        method = solver.method
    tolerance = _take_number(
        entries, "solver", "tolerance", env, errors, solver.tolerance, positive=True
    )
    max_iter = _take_int(entries, "solver", "max_iter", env, errors, solver.max_iter, minimum=1)
    relaxation = _take_number(
        entries,
        "solver",
        "relaxation",
        env,
        errors,
        solver.relaxation,
        positive=True,
        maximum=1.0,
    )
    seed = _take_int(entries, "solver", "seed", env, errors, solver.seed, minimum=0)
    profile = _take_string(entries, "profile")
    if profile is not None and not os.path.isabs(profile):
        profile = os.path.join(base_dir, profile)
    if method == "file":
        if profile is None:
            errors.append((sheader, "method 'file' needs a 'profile' path"))
        elif not os.path.isfile(profile):
            errors.append((sheader, f"profile file {profile!r} does not exist"))
    elif profile is not None:
        errors.append((sheader, "'profile' only applies to method 'file'"))
    _complain_unknown(entries, "solver", errors)
    solver = SolverSettings(method, tolerance, max_iter, relaxation, seed, profile)

    # criterion
    entries = dict(sections.get("criterion", {}))
    criterion_tolerance = _take_number(
        entries, "criterion", "tolerance", env, errors, None, positive=True
    )
    _complain_unknown(entries, "criterion", errors)

    # simulate
    simulate = None
    if "simulate" in sections:
        entries = dict(sections["simulate"])
        mheader = headers.get("simulate", 0)
        t_final = _take_number(
            entries, "simulate", "T", env, errors, required=True, header=mheader, positive=True
        )
        dt = _take_number(entries, "simulate", "dt", env, errors, 1e-3, positive=True)
        t0 = _take_number(entries, "simulate", "t0", env, errors, 0.0)
        epsilon = _take_number(entries, "simulate", "epsilon", env, errors, None, positive=True)
        sample_every = _take_int(entries, "simulate", "sample_every", env, errors, 10, minimum=1)
        error_tolerance = _take_number(
            entries, "simulate", "error_tolerance", env, errors, 1e-8, positive=True
        )
        error_control = _take_flag(entries, "simulate", "error_control", errors, True)
        _complain_unknown(entries, "simulate", errors)
        if t_final is not None:
            simulate = SimulateSettings(
                t_final, dt, t0, epsilon, sample_every, error_tolerance, error_control
            )

    # output
    entries = dict(sections.get("output", {}))
    directory = _take_string(entries, "directory", "out")
    formats = ("json", "csv", "mtl1")
    got = entries.pop("formats", None)
    if got is not None:
        value, line = got
        tokens = tuple(tok.lower() for tok in _split_list(value))
        bad = [tok for tok in tokens if tok not in ("json", "csv", "mtl1")]
        if bad:
            errors.append((line, f"unknown format(s) {', '.join(bad)}; use json, csv, mtl1"))
        else:
            formats = tokens
    _complain_unknown(entries, "output", errors)
    output = OutputSettings(directory, formats)

    if errors or spec is None:
        raise ConfigError(source, errors)
    return RunConfig(
        source=source,
        spec=spec,
        grid=grid,
        explicit_extent=explicit_extent,
        explicit_points=explicit_points,
        solver=solver,
        criterion_tolerance=criterion_tolerance,
        simulate=simulate,
        output=output,
        params=env,
        gauge=gauge,
    )


# ------------------------------------------------------------ solver layer


def solve_ground_state(cfg: RunConfig):
    """Produce the certified bound state the config asks for.

    Raises SolverFailure when the computation does not converge or does not
    certify at the configured tolerance, and ConfigError for declarative
    mismatches discovered late (profile file vs config).
    """
    spec = cfg.spec
    method = cfg.solver.method
    if method == "file":
        path = cfg.solver.profile
        try:
            stored = load_profiles(path)
        except (OSError, ValueError) as exc:
            raise SolverFailure(str(exc)) from None
        if tuple(stored.omegas) != spec.omega_exact:
            got = ", ".join(str(w) for w in stored.omegas)
            want = ", ".join(str(w) for w in spec.omega_exact)
            raise ConfigError(
                cfg.source,
                [(0, f"profile file stores omega = ({got}), the system needs ({want})")],
            )
        if stored.grid.dimension != spec.dimension:
            raise ConfigError(
                cfg.source,
                [(0, f"profile file is {stored.grid.dimension}-dimensional, the system {spec.dimension}")],
            )
        for name, declared, actual in (
            ("extent", cfg.explicit_extent, stored.grid.extent),
            ("points", cfg.explicit_points, stored.grid.points),
        ):
            if declared is not None and declared != actual:
                raise ConfigError(
                    cfg.source,
                    [(0, f"profile file has grid {name} {actual:g}, the config declares {declared:g}")],
                )
        try:
            bs = BoundState.from_profiles(
                spec,
                stored.grid,
                stored.profiles,
                method="file",
                message=os.path.basename(path),
            )
        except ValueError as exc:
            raise SolverFailure(str(exc)) from None
        info = SolverInfo(True, 0, 1.0, 0.0, f"profiles read from {path}")
    else:
        if cfg.grid is None:
            raise ConfigError(
                cfg.source,
                [(0, "no computation grid: set [grid] extent and points for this system")],
            )
        if method == "closed-form" and spec.dimension != 1:
            raise ConfigError(
                cfg.source,
                [(0, "method 'closed-form' needs dimension 1; use 'synchronous'")],
            )
        try:
            if method in ("closed-form", "synchronous"):
                bs, info = build_synchronous(spec, cfg.grid, seed=cfg.solver.seed)
            else:
                bs, info = petviashvili_coupled(
                    spec,
                    cfg.grid,
                    max_iter=cfg.solver.max_iter,
                    relaxation=cfg.solver.relaxation,
                )
        except (ValueError, RuntimeError) as exc:
            raise SolverFailure(str(exc)) from None
    if not info.converged:
        detail = f": {info.message}" if info.message else ""
        raise SolverFailure(
            f"solver did not converge after {info.iterations} iteration(s){detail}"
        )
    worst = max(bs.residual_norms)
    if worst > cfg.solver.tolerance:
        raise SolverFailure(
            f"state is not certified: max residual {worst:.3e} exceeds the "
            f"solver tolerance {cfg.solver.tolerance:g}"
        )
    return bs, info


# -------------------------------------------------------------- artifacts


def _write_error(outdir, command, code, kind, message, details=()):
    try:
        os.makedirs(outdir, exist_ok=True)
        dump_json(
            os.path.join(outdir, "error.json"),
            {
                "command": command,
                "exit_code": code,
                "error": kind,
                "message": message,
                "details": list(details),
            },
        )
    except OSError:
        pass  # reporting the error on stderr still happened


def _fail_config(args, command, exc: ConfigError) -> int:
    for line in exc.lines():
        print(line, file=sys.stderr)
    _write_error(
        args.out or ".", command, EXIT_CONFIG, "config", "configuration is invalid", exc.lines()
    )
    return EXIT_CONFIG


def _fail_solver(outdir, command, exc: SolverFailure) -> int:
    print(f"solver failure: {exc}", file=sys.stderr)
    _write_error(outdir, command, EXIT_SOLVER, "solver", str(exc))
    return EXIT_SOLVER


def _outdir(args, cfg: RunConfig) -> str:
    return args.out or cfg.output.directory


def _groundstate_payload(cfg: RunConfig, bs: BoundState, info: SolverInfo) -> dict:
    spec = cfg.spec
    first = first_integral_check(bs, tol=1e-6)
    poho = pohozaev_check(bs, tol=1e-6)
    return {
        "system": {
            "hash": system_fingerprint(spec),
            "dimension": spec.dimension,
            "labels": list(spec.labels),
            "lambda": list(spec.lambdas),
            "omega": [str(w) for w in spec.omega_exact],
        },
        "grid": {
            "dimension": bs.grid.dimension,
            "extent": bs.grid.extent,
            "points": bs.grid.points,
        },
        "solver": {
            "method": bs.method or cfg.solver.method,
            "converged": info.converged,
            "iterations": info.iterations,
            "stabilizer": info.stabilizer,
            "increment": info.increment,
            "message": info.message,
            "seed": cfg.solver.seed,
        },
        "residual_norms": list(bs.residual_norms),
        "certified_at": cfg.solver.tolerance,
        "integrals": {
            "mass": list(bs.mass_integrals),
            "gradient": list(bs.gradient_integrals),
            "terms": list(bs.term_integrals),
        },
        "total_mass": 0.5
        * sum(lw * mi for lw, mi in zip(spec.lambda_omega, bs.mass_integrals)),
        "hamiltonian": bs.hamiltonian_value,
        "identities": {
            "first_integrals": {
                "ok": first.ok,
                "discrepancies": list(first.discrepancies),
                "tolerance": first.tol,
                "message": first.message,
            },
            "pohozaev": {
                "ok": poho.ok,
                "discrepancies": list(poho.discrepancies),
                "tolerance": poho.tol,
                "message": poho.message,
            },
        },
    }


# ---------------------------------------------------------------- commands


def _parse_or_fail(args, command):
    try:
        return parse_config(args.config, tuple(args.set)), None
    except ConfigError as exc:
        return None, _fail_config(args, command, exc)


def _phase_sum(spec: SystemSpec, term: MonomialTerm) -> Fraction:
    total = Fraction(0)
    for w, p, q in zip(spec.omega_exact, term.p, term.q):
        total += w * (p - q)
    return total


def _synchronicity(spec: SystemSpec) -> str:
    coupling = _quadratic_matrix(spec)
    off = np.abs(coupling - np.diag(np.diag(coupling)))
    if coupling.size and float(np.max(off)) > 0.0:
        a, b = np.unravel_index(int(np.argmax(off)), off.shape)
        return (
            f"not synchronous: components {spec.labels[a]} and {spec.labels[b]} "
            "are coupled quadratically"
        )
    shifted = [lw + coupling[j, j] for j, lw in enumerate(spec.lambda_omega)]
    common = shifted[0]
    spread = max(abs(v - common) for v in shifted)
    if spread > 1e-12 * max(1.0, abs(common)):
        listing = ", ".join(
            f"{label}: {value:g}" for label, value in zip(spec.labels, shifted)
        )
        return f"not synchronous: shifted coefficients differ ({listing})"
    if common <= 0:
        return f"not synchronous: common shifted coefficient {common:g} is not positive"
    return f"synchronous: common shifted coefficient {common:g}"


def cmd_validate(args) -> int:
    cfg, code = _parse_or_fail(args, "validate")
    if cfg is None:
        return code
    spec = cfg.spec
    lines = [f"system: dimension {spec.dimension}, {spec.components} component(s)"]
    for j, label in enumerate(spec.labels):
        lines.append(
            f"  {label}: lambda={spec.lambdas[j]:g} omega={spec.omega_exact[j]} "
            f"lambda*omega={spec.lambda_omega[j]:g}"
        )
    if cfg.params:
        lines.append(
            "params: "
            + ", ".join(f"{k}={v:g}" for k, v in cfg.params.items())
        )
    lines.append(f"terms: {len(spec.terms)}")
    for k, term in enumerate(spec.terms, start=1):
        lines.append(
            f"  {k}: {term.describe(spec.labels)}  p={term.p} q={term.q} "
            f"alpha={term.alpha} beta={term.beta} phase={_phase_sum(spec, term)}"
        )
    lines.append(
        f"gauge: ok, every term is phase-balanced; invariance dimension "
        f"{cfg.gauge.invariance_dimension}"
    )
    for warning in cfg.gauge.warnings:
        lines.append(f"warning: {warning}")
    lines.append(f"synchronicity: {_synchronicity(spec)}")
    if cfg.grid is not None:
        tag = "auto" if cfg.grid_auto else "explicit"
        lines.append(
            f"grid: {tag}, extent {cfg.grid.extent:g}, points {cfg.grid.points} "
            f"(h = {cfg.grid.h:g})"
        )
    else:
        lines.append("grid: none (set [grid] extent and points to solve)")
    lines.append(
        f"solver: method {cfg.solver.method}, tolerance {cfg.solver.tolerance:g}, "
        f"seed {cfg.solver.seed}"
    )
    print("\n".join(lines))
    return EXIT_OK


def cmd_groundstate(args) -> int:
    cfg, code = _parse_or_fail(args, "groundstate")
    if cfg is None:
        return code
    outdir = _outdir(args, cfg)
    try:
        bs, info = solve_ground_state(cfg)
    except SolverFailure as exc:
        return _fail_solver(outdir, "groundstate", exc)
    except ConfigError as exc:
        return _fail_config(args, "groundstate", exc)
    os.makedirs(outdir, exist_ok=True)
    payload = _groundstate_payload(cfg, bs, info)
    written = []
    if "mtl1" in cfg.output.formats:
        path = os.path.join(outdir, "profile.mtl1")
        save_profiles(path, bs)
        written.append(path)
    if "json" in cfg.output.formats:
        path = os.path.join(outdir, "groundstate.json")
        dump_json(path, payload)
        written.append(path)
    print(f"method {bs.method or cfg.solver.method}: converged in {info.iterations} iteration(s)")
    if info.message:
        print(f"note: {info.message}")
    print(
        f"max residual {max(bs.residual_norms):.3e} "
        f"(tolerance {cfg.solver.tolerance:g}): certified"
    )
    for j, label in enumerate(cfg.spec.labels):
        print(
            f"  {label}: int Q^2 = {bs.mass_integrals[j]:.9g}  "
            f"int |grad Q|^2 = {bs.gradient_integrals[j]:.9g}"
        )
    print(
        f"M(Q) = {payload['total_mass']:.9g}  H(Q) = {bs.hamiltonian_value:.9g}"
    )
    ids = payload["identities"]
    for name, data in (("first-integral", ids["first_integrals"]), ("Pohozaev", ids["pohozaev"])):
        worst = max(data["discrepancies"]) if data["discrepancies"] else math.nan
        state = "ok" if data["ok"] else "FAILED"
        print(f"{name} check: {state} (largest discrepancy {worst:.3e}, tolerance {data['tolerance']:g})")
    if written:
        print("wrote " + ", ".join(written))
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg, code = _parse_or_fail(args, "analyze")
    if cfg is None:
        return code
    if args.profile is not None:
        if not os.path.isfile(args.profile):
            return _fail_config(
                args,
                "analyze",
                ConfigError(cfg.source, [(0, f"profile file {args.profile!r} does not exist")]),
            )
        cfg = replace(
            cfg, solver=replace(cfg.solver, method="file", profile=args.profile)
        )
    outdir = _outdir(args, cfg)
    try:
        bs, _ = solve_ground_state(cfg)
        report = verdict(cfg.spec, bs, tolerance=cfg.criterion_tolerance)
    except SolverFailure as exc:
        return _fail_solver(outdir, "analyze", exc)
    except ConfigError as exc:
        return _fail_config(args, "analyze", exc)
    except ValueError as exc:
        return _fail_solver(outdir, "analyze", SolverFailure(str(exc)))
    os.makedirs(outdir, exist_ok=True)
    written = []
    if "json" in cfg.output.formats:
        path = os.path.join(outdir, "report.json")
        atomic_write_text(path, report.to_json() + "\n")
        written.append(path)
    print(f"verdict: {report.verdict}")
    print(f"  {report.message}")
    print("  eigenvalues: " + ", ".join(f"{v:.6g}" for v in report.eigenvalues))
    print("  mass ratios k: " + ", ".join(f"{v:.6g}" for v in report.k_ratios))
    order = ", ".join(cfg.spec.labels[j] for j in report.component_order)
    print(f"  component order: {order} (last is the mass reference)")
    if report.direction is not None:
        print(
            "  unstable direction (scaling, transfers..., closing): "
            + ", ".join(f"{v:.6g}" for v in report.direction)
        )
    for check in report.structural_verdicts:
        state = "applies" if check.applies else "does not apply"
        print(f"  shortcut {check.name}: {state}; {check.reason}")
    if written:
        print("wrote " + ", ".join(written))
    return EXIT_OK if report.verdict == UNSTABLE else EXIT_INCONCLUSIVE


def cmd_simulate(args) -> int:
    cfg, code = _parse_or_fail(args, "simulate")
    if cfg is None:
        return code
    if cfg.simulate is None:
        return _fail_config(
            args,
            "simulate",
            ConfigError(cfg.source, [(0, "missing [simulate] section")]),
        )
    sim = cfg.simulate
    outdir = _outdir(args, cfg)
    try:
        bs, _ = solve_ground_state(cfg)
    except SolverFailure as exc:
        return _fail_solver(outdir, "simulate", exc)
    except ConfigError as exc:
        return _fail_config(args, "simulate", exc)
    spec = cfg.spec
    if sim.t0 != 0.0:
        try:
            report = verdict(spec, bs, tolerance=cfg.criterion_tolerance)
        except ValueError as exc:
            return _fail_solver(outdir, "simulate", SolverFailure(str(exc)))
        if report.verdict != UNSTABLE:
            message = (
                f"t0 = {sim.t0:g} asks for a perturbed run, but the verdict is "
                f"{report.verdict}: no computed unstable direction to follow"
            )
            print(message, file=sys.stderr)
            _write_error(outdir, "simulate", EXIT_INCONCLUSIVE, "inconclusive", message)
            return EXIT_INCONCLUSIVE
        initial = perturbed_initial_data(
            bs, report.direction, amplitude=sim.t0, order=report.component_order
        )
    else:
        initial = perturbed_initial_data(bs, (0.0,) * spec.components, 0.0)
    trace = evolve(
        spec,
        initial,
        sim.t_final,
        dt=sim.dt,
        sample_every=sim.sample_every,
        bound_state=bs,
        threshold=sim.epsilon,
        error_tolerance=sim.error_tolerance,
        error_control=sim.error_control,
    )
    os.makedirs(outdir, exist_ok=True)
    written = []
    csv_path = os.path.join(outdir, "trace.csv")
    events_path = os.path.join(outdir, "trace.events.json")
    if "csv" in cfg.output.formats:
        save_trace(trace, csv_path, events_path)
        written += [csv_path, events_path]
    elif "json" in cfg.output.formats:
        save_trace(trace, os.devnull, events_path)
        written.append(events_path)
    mass = trace.total_mass
    energy = trace.hamiltonian
    mass_drift = max(abs(v - mass[0]) for v in mass) / max(abs(mass[0]), 1e-300)
    energy_drift = max(abs(v - energy[0]) for v in energy) / max(abs(energy[0]), 1e-300)
    print(
        f"integrated to t = {trace.times[-1]:g} in {trace.steps} step(s); "
        f"final dt {trace.dt_final:g}; {len(trace.times)} sample(s)"
    )
    print(f"mass drift {mass_drift:.3e}; energy drift {energy_drift:.3e}")
    if trace.orbit_distance is not None:
        dist = trace.orbit_distance
        print(
            f"orbit distance: initial {dist[0]:.6g}, final {dist[-1]:.6g}, "
            f"max {max(dist):.6g}"
        )
    for event in trace.events:
        print(f"event {event.kind} at t = {event.time:g}: {event.payload.get('cause', '')}")
    if written:
        print("wrote " + ", ".join(written))
    return EXIT_OK


# -------------------------------------------------------------- reproduce


@dataclass
class CaseRow:
    name: str
    target: str
    measured: str
    status: str  # "pass", "fail" or "info"


def _row(name, target, measured, ok=None) -> CaseRow:
    if ok is None:
        status = "info"
    else:
        status = "pass" if ok else "fail"
    return CaseRow(name, target, measured, status)


def _rel(value, reference) -> float:
    return abs(value - reference) / max(abs(reference), 1e-300)


def _quad_grid_1d() -> Grid:
    return Grid(1, 28.0, 512)


def _case_quadratic_1d(params, outdir) -> list:
    rows = []
    grid = _quad_grid_1d()
    a = 1.0 / math.sqrt(3.0)

    q_exact = closed_form_1d(grid, 1.0, a, 2)
    q_num, info = petviashvili_scalar(grid, 1.0, a, 2)
    gap = float(np.max(np.abs(q_num - q_exact)))
    rows.append(
        _row("scalar iteration matches the closed form", "<= 1e-08", f"{gap:.3e}", gap <= 1e-8)
    )

    int_q2 = integrate(grid, q_exact**2)
    int_q3 = integrate(grid, q_exact**3)
    rows.append(
        _row("int q^2", "18 (rel 1e-08)", f"{int_q2:.12g}", _rel(int_q2, 18.0) <= 1e-8)
    )
    target_q3 = 108.0 * math.sqrt(3.0) / 5.0
    rows.append(
        _row(
            "int q^3",
            "108 sqrt(3)/5 (rel 1e-08)",
            f"{int_q3:.12g}",
            _rel(int_q3, target_q3) <= 1e-8,
        )
    )
    identity = _rel(int_q2, (6.0 - 1.0) / (6.0 * math.sqrt(3.0)) * int_q3)
    rows.append(
        _row("mass-cubic identity at d=1", "residual <= 1e-06", f"{identity:.3e}", identity <= 1e-6)
    )

    spec2 = catalog.quadratic_two_component(2.0)
    state2, _ = build_synchronous(spec2, grid)
    first = first_integral_check(state2, tol=1e-5)
    poho = pohozaev_check(state2, tol=1e-5)
    worst = max(first.discrepancies)
    rows.append(
        _row("first integrals at sigma=2", "residuals <= 1e-05", f"{worst:.3e}", first.ok)
    )
    rows.append(
        _row("Pohozaev identity at sigma=2", "residual <= 1e-05", f"{poho.discrepancies[0]:.3e}", poho.ok)
    )

    candidates = quadratic_family_threshold(1)
    sweep = sweep_parameter(
        catalog.quadratic_two_component, [20.0, 24.0, 28.0, 32.0, 36.0], grid
    )
    if sweep.brackets:
        lo, hi = sweep.brackets[0]
        mid = 0.5 * (lo + hi)
        rows.append(
            _row(
                "threshold sweep vs symbolic root",
                f"{candidates.exact:.6f} +- 1e-03",
                f"{mid:.6f}",
                abs(mid - candidates.exact) <= 1e-3,
            )
        )
    else:
        rows.append(
            _row("threshold sweep vs symbolic root", "bracket found", "no sign change", False)
        )
    rows.append(
        _row(
            "threshold candidates",
            "reported",
            f"exact {candidates.exact:.5f}, unweighted {candidates.unweighted:.5f}, "
            f"reduced {candidates.reduced:.5f}",
        )
    )

    sigma_stated = float(params["sigma_stated"])
    spec_stated = catalog.quadratic_two_component(sigma_stated)
    state_stated, _ = build_synchronous(spec_stated, grid)
    report_stated = verdict(spec_stated, state_stated)
    atomic_write_text(
        os.path.join(outdir, "report_sigma25.json"), report_stated.to_json() + "\n"
    )
    rows.append(
        _row(
            f"sigma={sigma_stated:g} verdict (as pinned)",
            "UNSTABLE",
            f"{report_stated.verdict} (min eigenvalue {report_stated.eigenvalues[0]:.4g})",
            report_stated.verdict == UNSTABLE,
        )
    )

    sigma_demo = float(params["sigma_demo"])
    spec_demo = catalog.quadratic_two_component(sigma_demo)
    state_demo, _ = build_synchronous(spec_demo, grid)
    report_demo = verdict(spec_demo, state_demo)
    atomic_write_text(
        os.path.join(outdir, "report_sigma35.json"), report_demo.to_json() + "\n"
    )
    rows.append(
        _row(
            f"sigma={sigma_demo:g} verdict",
            "UNSTABLE",
            f"{report_demo.verdict} (min eigenvalue {report_demo.eigenvalues[0]:.4g})",
            report_demo.verdict == UNSTABLE,
        )
    )
    if report_demo.verdict != UNSTABLE:
        return rows

    horizon = float(params["T"])
    dt = float(params["dt"])
    stride = int(params["sample_every"])
    amplitude = float(params["amplitude"])
    initial = perturbed_initial_data(
        state_demo, report_demo.direction, amplitude=amplitude, order=report_demo.component_order
    )
    start = orbit_distance(initial, state_demo)[0]
    trace = evolve(
        spec_demo,
        initial,
        horizon,
        dt=dt,
        sample_every=stride,
        bound_state=state_demo,
        error_control=False,
    )
    save_trace(trace, os.path.join(outdir, "trace_sigma35.csv"))
    growth = max(trace.orbit_distance) / start
    rows.append(
        _row(
            f"orbit distance growth by t={horizon:g}",
            ">= 10x initial",
            f"{growth:.1f}x (initial {start:.4g})",
            growth >= 10.0,
        )
    )
    mass = trace.total_mass
    drift = max(abs(v - mass[0]) for v in mass) / abs(mass[0])
    rows.append(_row("total-mass drift", "<= 1e-09", f"{drift:.3e}", drift <= 1e-9))
    energy = trace.hamiltonian
    edrift = max(abs(v - energy[0]) for v in energy) / abs(energy[0])
    rows.append(_row("energy drift", "<= 1e-08", f"{edrift:.3e}", edrift <= 1e-8))
    swings = []
    for series in trace.component_masses:
        swings.append(max(abs(v - series[0]) for v in series) / abs(series[0]))
    swing = max(swings)
    rows.append(
        _row(
            "single-component mass change",
            "> 5% in at least one component",
            ", ".join(f"{s:.2%}" for s in swings),
            swing > 0.05,
        )
    )

    control_initial = perturbed_initial_data(state_demo, (0.0, 0.0), 0.0)
    control = evolve(
        spec_demo,
        control_initial,
        horizon,
        dt=dt,
        sample_every=stride,
        bound_state=state_demo,
        error_control=False,
    )
    save_trace(control, os.path.join(outdir, "trace_control.csv"))
    control_max = max(control.orbit_distance)
    rows.append(
        _row(
            "control run stays on the orbit (as pinned)",
            "<= 1e-06",
            f"{control_max:.3e}",
            control_max <= 1e-6,
        )
    )
    separation = control_max / max(trace.orbit_distance)
    rows.append(
        _row(
            "control vs perturbed separation",
            "control <= 1% of perturbed",
            f"{separation:.3e}",
            separation <= 1e-2,
        )
    )
    return rows


def _case_quadratic_3d_sweep(params, outdir) -> list:
    rows = []
    grid = Grid(3, 16.0, 128)
    width = float(params["width"])

    def build(sigma):
        return catalog.quadratic_two_component(sigma, dimension=3)

    candidates = quadratic_family_threshold(3)
    sweep = sweep_parameter(
        build, [3.0, 3.75, 4.5, 5.25], grid, target_width=width
    )
    dump_json(
        os.path.join(outdir, "sweep.json"),
        {
            "rows": [
                {
                    "parameter": r.parameter,
                    "min_eigenvalue": r.min_eigenvalue,
                    "verdict": r.verdict,
                }
                for r in sweep.rows
            ],
            "brackets": [list(b) for b in sweep.brackets],
            "candidates": {
                "exact": candidates.exact,
                "unweighted": candidates.unweighted,
                "reduced": candidates.reduced,
            },
        },
    )
    missing = [r.parameter for r in sweep.rows if r.verdict == "MISSING"]
    rows.append(
        _row(
            "all sweep samples solved",
            "no MISSING rows",
            "none" if not missing else ", ".join(f"{v:g}" for v in missing),
            not missing,
        )
    )
    if sweep.brackets:
        lo, hi = sweep.brackets[0]
        mid = 0.5 * (lo + hi)
        rows.append(
            _row("bracket width", f"<= {width:g}", f"{hi - lo:.3e}", hi - lo <= width)
        )
        rows.append(
            _row(
                "threshold at d=3",
                "4.1213 +- 1e-03",
                f"{mid:.6f}",
                abs(mid - 4.1213) <= 1e-3,
            )
        )
        rows.append(
            _row(
                "sweep vs symbolic root 2 + 3 sqrt(2)/2",
                "agree to 1e-03",
                f"{abs(mid - candidates.exact):.2e}",
                abs(mid - candidates.exact) <= 1e-3,
            )
        )
    else:
        rows.append(_row("threshold at d=3", "bracket found", "no sign change", False))

    spec = build(4.0)
    state, _ = build_synchronous(spec, grid)
    scalar = state.profiles[0] / state.sphere.point[0]
    int_q2 = integrate(grid, scalar**2)
    int_q3 = integrate(grid, scalar**3)
    identity = _rel(int_q2, (6.0 - 3.0) / (6.0 * math.sqrt(3.0)) * int_q3)
    rows.append(
        _row("mass-cubic identity at d=3", "residual <= 1e-06", f"{identity:.3e}", identity <= 1e-6)
    )
    return rows


def _case_three_wave_1d(params, outdir) -> list:
    rows = []
    spec = catalog.three_wave(1)
    sphere = maximize_on_sphere(spec)
    pinned_value = (math.sqrt(3.0) + math.sqrt(5.0)) / 9.0
    derived_value = (math.sqrt(3.0) + math.sqrt(15.0)) / 9.0
    rows.append(
        _row(
            "sphere maximum f_max (as pinned)",
            "(sqrt(3)+sqrt(5))/9 +- 1e-10",
            f"{sphere.value:.12g} (pinned {pinned_value:.12g})",
            abs(sphere.value - pinned_value) <= 1e-10,
        )
    )
    rows.append(
        _row(
            "sphere maximum f_max (derived)",
            "(sqrt(3)+sqrt(15))/9 +- 1e-10",
            f"{abs(sphere.value - derived_value):.3e}",
            abs(sphere.value - derived_value) <= 1e-10,
        )
    )
    pinned_point = (0.42919, 0.57735, 0.69167)
    gap = max(abs(x - y) for x, y in zip(sphere.point, pinned_point))
    rows.append(
        _row(
            "maximizer components (as pinned)",
            "(0.42919, 0.57735, 0.69167) +- 1e-06",
            "(" + ", ".join(f"{x:.6f}" for x in sphere.point) + ")",
            gap <= 1e-6,
        )
    )
    mid_gap = abs(sphere.point[1] - 1.0 / math.sqrt(3.0))
    rows.append(
        _row("maximizer middle component", "1/sqrt(3) +- 1e-08", f"{mid_gap:.3e}", mid_gap <= 1e-8)
    )
    rows.append(
        _row(
            "first-order conditions at the maximizer",
            "residual <= 1e-10",
            f"{sphere.residual:.3e}",
            sphere.residual <= 1e-10,
        )
    )

    state, _ = build_synchronous(spec, _quad_grid_1d())
    report = verdict(spec, state)
    atomic_write_text(os.path.join(outdir, "report.json"), report.to_json() + "\n")
    det = float(np.linalg.det(report.matrix))
    rows.append(
        _row(
            "verdict at d=1 (as pinned)",
            "UNSTABLE",
            report.verdict,
            report.verdict == UNSTABLE,
        )
    )
    rows.append(_row("det(A) < 0 (as pinned)", "negative", f"{det:.6g}", det < 0.0))
    rows.append(
        _row(
            "matrix eigenvalues",
            "reported",
            ", ".join(f"{v:.4g}" for v in report.eigenvalues),
        )
    )
    return rows


def _case_cubic_supercritical(params, outdir) -> list:
    rows = []
    spec3 = catalog.cubic_third_harmonic(dimension=3)
    checks3 = (
        check_supercritical(spec3),
        check_critical_I(spec3),
        check_critical_II(spec3),
    )
    dump_json(
        os.path.join(outdir, "checks.json"), [c.as_dict() for c in checks3]
    )
    super3 = checks3[0]
    rows.append(
        _row(
            "scaling shortcut at d=3",
            "applies (instability without solving)",
            "applies" if super3.applies else "does not apply",
            super3.applies,
        )
    )
    rows.append(_row("shortcut reason", "reported", super3.reason))
    quiet = [c.name for c in checks3[1:] if c.applies]
    rows.append(
        _row(
            "critical shortcuts at d=3",
            "do not apply",
            "none apply" if not quiet else ", ".join(quiet),
            not quiet,
        )
    )
    spec2 = catalog.cubic_third_harmonic(dimension=2)
    super2 = check_supercritical(spec2)
    rows.append(
        _row(
            "scaling shortcut at d=2",
            "does not apply (scale-critical)",
            "applies" if super2.applies else "does not apply",
            not super2.applies,
        )
    )
    return rows


def _case_rabi_2d(params, outdir) -> list:
    rows = []
    spec = catalog.rabi_coupled()
    grid = Grid(2, 16.0, 256)
    state, info = petviashvili_coupled(spec, grid)
    worst = max(state.residual_norms)
    rows.append(
        _row(
            "coupled iteration converged",
            f"residual <= {CERTIFICATION_TOL:g}",
            f"{worst:.3e} in {info.iterations} iteration(s)",
            info.converged and worst <= CERTIFICATION_TOL,
        )
    )
    save_profiles(os.path.join(outdir, "profile.mtl1"), state)
    int_p2, int_q2 = state.mass_integrals
    int_pq = integrate(grid, state.profiles[0] * state.profiles[1])
    rows.append(
        _row(
            "component integrals",
            "reported",
            f"int u^2 = {int_p2:.6g}, int v^2 = {int_q2:.6g}, int uv = {int_pq:.6g}",
        )
    )
    gap = abs(int_p2 - int_q2) / max(int_p2, int_q2)
    rows.append(
        _row("component masses differ", "relative gap > 1e-02", f"{gap:.3e}", gap > 1e-2)
    )
    report = verdict(spec, state)
    atomic_write_text(os.path.join(outdir, "report.json"), report.to_json() + "\n")
    rows.append(
        _row(
            "verdict",
            "UNSTABLE",
            f"{report.verdict} (min eigenvalue {report.eigenvalues[0]:.4g})",
            report.verdict == UNSTABLE,
        )
    )
    exchange = next(c for c in report.structural_verdicts if c.name == "critical_II")
    rows.append(
        _row(
            "two-component exchange shortcut",
            "reported",
            f"{'applies' if exchange.applies else 'does not apply'}; {exchange.reason}",
        )
    )
    return rows


_CASES = {
    "quadratic-1d": (
        _case_quadratic_1d,
        {
            "T": 80.0,
            "dt": 1e-3,
            "amplitude": 0.01,
            "sigma_stated": 25.0,
            "sigma_demo": 35.0,
            "sample_every": 100,
        },
        "closed forms, identities, threshold and the mass-transfer run (d=1)",
    ),
    "quadratic-3d-sweep": (
        _case_quadratic_3d_sweep,
        {"width": 1e-3},
        "instability threshold sweep of the d=3 quadratic family",
    ),
    "three-wave-1d": (
        _case_three_wave_1d,
        {},
        "sphere maximum and matrix test for the three-wave system at d=1",
    ),
    "cubic-supercritical": (
        _case_cubic_supercritical,
        {},
        "scaling shortcut for the cubic third-harmonic system at d=3",
    ),
    "rabi-2d": (
        _case_rabi_2d,
        {},
        "coupled ground state and verdict for the Rabi-coupled pair at d=2",
    ),
}


def cmd_reproduce(args) -> int:
    if args.list:
        width = max(len(name) for name in _CASES)
        for name, (_, _, blurb) in _CASES.items():
            print(f"{name:<{width}}  {blurb}")
        return EXIT_OK
    if args.case is None:
        print("reproduce: name a case or pass --list", file=sys.stderr)
        return EXIT_CONFIG
    if args.case not in _CASES:
        print(
            f"unknown case '{args.case}'; available: {', '.join(_CASES)}",
            file=sys.stderr,
        )
        return EXIT_CONFIG
    runner, defaults, _ = _CASES[args.case]
    params = dict(defaults)
    for item in args.set:
        name, eq, value = item.partition("=")
        name = name.strip()
        if not eq or name not in params:
            known = ", ".join(params) if params else "none"
            print(
                f"--set: '{item}' does not name a parameter of this case "
                f"(available: {known})",
                file=sys.stderr,
            )
            return EXIT_CONFIG
        try:
            params[name] = eval_number(value.strip(), {})
        except ExprError as exc:
            print(f"--set: {name}: {exc}", file=sys.stderr)
            return EXIT_CONFIG
    outdir = os.path.join(args.out or "out", args.case)
    os.makedirs(outdir, exist_ok=True)
    rows = runner(params, outdir)
    name_w = max(len(r.name) for r in rows)
    target_w = max(len(r.target) for r in rows)
    tag = {"pass": "PASS", "fail": "FAIL", "info": "  --"}
    print(args.case)
    for r in rows:
        print(f"  {r.name:<{name_w}}  {r.target:<{target_w}}  {r.measured}  [{tag[r.status]}]")
    passed = sum(r.status == "pass" for r in rows)
    failed = [r for r in rows if r.status == "fail"]
    dump_json(
        os.path.join(outdir, "summary.json"),
        {
            "case": args.case,
            "parameters": params,
            "rows": [
                {
                    "name": r.name,
                    "target": r.target,
                    "measured": r.measured,
                    "status": r.status,
                }
                for r in rows
            ],
            "passed": passed,
            "failed": len(failed),
        },
    )
    print(f"{passed} passed, {len(failed)} failed")
    if failed:
        for r in failed:
            print(f"FAILED: {r.name} (wanted {r.target}, measured {r.measured})")
        return EXIT_REPRODUCE
    return EXIT_OK


# ------------------------------------------------------------ entry point


class _Parser(argparse.ArgumentParser):
    """Argument parser whose usage errors exit with the config-error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _add_common(sub, with_config=True):
    if with_config:
        sub.add_argument("config", help="config file path or builtin:<name>")
    sub.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="NAME=VALUE",
        help="override a parameter (bare name) or section key (section.key)",
    )
    sub.add_argument(
        "--out", metavar="DIR", default=None, help="output directory override"
    )


def main(argv=None) -> int:
    parser = _Parser(
        prog="mtl",
        description="Ground states, instability tests and dynamics for coupled "
        "gauge-invariant Schrodinger systems.",
    )
    commands = parser.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    sub = commands.add_parser("validate", help="audit a system declaration")
    _add_common(sub)
    sub.set_defaults(handler=cmd_validate)

    sub = commands.add_parser("groundstate", help="solve for the bound-state profiles")
    _add_common(sub)
    sub.set_defaults(handler=cmd_groundstate)

    sub = commands.add_parser("analyze", help="run the instability test")
    _add_common(sub)
    sub.add_argument(
        "--profile", metavar="FILE", default=None, help="re-read a stored profile file"
    )
    sub.set_defaults(handler=cmd_analyze)

    sub = commands.add_parser("simulate", help="integrate the time-dependent system")
    _add_common(sub)
    sub.set_defaults(handler=cmd_simulate)

    sub = commands.add_parser("reproduce", help="run a pinned end-to-end study")
    sub.add_argument("case", nargs="?", default=None, help="case name (see --list)")
    sub.add_argument("--list", action="store_true", help="list the available cases")
    _add_common(sub, with_config=False)
    sub.set_defaults(handler=cmd_reproduce)

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else EXIT_OK
    if not hasattr(args, "handler"):
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    return args.handler(args)


if __name__ == "__main__":
    sys.exit(main())
