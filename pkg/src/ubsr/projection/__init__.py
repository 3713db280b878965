"""Projection onto the shortfall level set Z by four interchangeable solvers."""
from .common import (
    IterationCounts,
    KktCertificate,
    Membership,
    NewtonTrace,
    ProjectionInstance,
    ProjectionResult,
    Solver,
    h_value_and_element,
    kkt_certificate,
    membership,
    solve_g_subproblem,
)
from .sepssn import project_sepssn
from .dirssn import DirSSNParams, project_dirssn
from .bisection import project_bisection
from .ipm import IPMParams, project_ipm

SOLVERS = {
    Solver.SEPSSN.value: project_sepssn,
    Solver.DIRSSN.value: project_dirssn,
    Solver.BISECTION.value: project_bisection,
    Solver.IPM.value: project_ipm,
}


def project(inst: ProjectionInstance, solver: str = "sepssn") -> ProjectionResult:
    """Project with the named solver and its default settings."""
    try:
        fn = SOLVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}; choose from {sorted(SOLVERS)}") from None
    return fn(inst)
