"""Builders for the golden files exercised by test_formats.py.

Run ``python3 tests/goldens.py`` to regenerate everything under
tests/golden/ after an intentional format change, then inspect the diff.
The builders pin every input (system, grid, perturbation, step count), so
the outputs are reproducible byte for byte on one platform; a BLAS or
libm swap can move the last digit of some values, in which case
regenerate and review.
"""

import os

from mtl import catalog
from mtl.criterion import verdict
from mtl.dynamics import evolve, perturbed_initial_data, trace_to_csv
from mtl.groundstate import build_synchronous, save_profiles
from mtl.model import Grid
from mtl.serialize import to_json

GOLDEN_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "golden")


def reference_state():
    spec = catalog.quadratic_two_component(2.0)
    bs, info = build_synchronous(spec, Grid(1, 28.0, 512))
    assert info.converged
    return spec, bs


def report_text(spec, bs) -> str:
    return verdict(spec, bs).to_json() + "\n"


def reference_trace(spec, bs):
    # five steps with a deliberate kick; the tiny threshold guarantees one
    # THRESHOLD_EXIT event so the events format is exercised
    initial = perturbed_initial_data(bs, (0.1, -0.2), 0.05)
    return evolve(
        spec,
        initial,
        0.01,
        dt=0.002,
        sample_every=1,
        bound_state=bs,
        threshold=1e-9,
        error_control=False,
    )


def events_text(trace) -> str:
    return to_json([e.as_dict() for e in trace.events]) + "\n"


def write_all() -> None:
    os.makedirs(GOLDEN_DIR, exist_ok=True)
    spec, bs = reference_state()
    save_profiles(os.path.join(GOLDEN_DIR, "profile.mtl1"), bs)
    with open(os.path.join(GOLDEN_DIR, "report.json"), "w") as fh:
        fh.write(report_text(spec, bs))
    trace = reference_trace(spec, bs)
    with open(os.path.join(GOLDEN_DIR, "trace.csv"), "w") as fh:
        fh.write(trace_to_csv(trace))
    with open(os.path.join(GOLDEN_DIR, "trace.events.json"), "w") as fh:
        fh.write(events_text(trace))
    print(f"wrote goldens to {GOLDEN_DIR}")


if __name__ == "__main__":
    write_all()
