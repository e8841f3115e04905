"""Conic backend: a small tagged-constraint problem builder over cvxpy, solved by Clarabel.

Complex Hermitian PSD blocks never reach the solver as complex data. Each block is a
real symmetric 2n x 2n variable Z constrained to the embedding structure
[[Re, -Im], [Im, Re]], and trace inner products are taken through the embedding with
a factor 1/2 (Tr(embed(V) embed(E)) = 2 Re Tr(V E)).

Plain-text problem dump (``dump_problem``)::

    problem <name>
    sense maximize|minimize
    variable <name> <shape>
    objective linear <expression>
    objective log <weight> * log(<affine expression>)
    constraint <kind> <label>: <constraint>
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import cvxpy as cp
import numpy as np
import scipy.linalg

from star_uav.settings import SolverSettings

log = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-9
EIG_TOL = 1e-8


class ConicError(RuntimeError):
    """The dense eigensolver failed to converge."""


# --- Hermitian helpers ---


def _check_hermitian(A: np.ndarray, tol: float = HERMITIAN_TOL) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"Expected a square matrix, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.conj().T)) > tol * scale:
        raise ValueError("Matrix is not Hermitian within tolerance")
    return A


def hermitian_embed(A) -> np.ndarray:
    """Real symmetric embedding [[Re A, -Im A], [Im A, Re A]] of a Hermitian matrix."""
    A = _check_hermitian(A)
    return np.block([[A.real, -A.imag], [A.imag, A.real]])


def max_eigpair(A) -> tuple[float, np.ndarray]:
    """Largest eigenvalue and a unit eigenvector of a Hermitian matrix."""
    A = _check_hermitian(A)
    n = A.shape[0]
    try:
        w, v = scipy.linalg.eigh(A, subset_by_index=[n - 1, n - 1])
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConicError(f"Eigensolver failed: {exc}") from exc
    eps, vec = float(w[0]), v[:, 0]
    residual = float(np.linalg.norm(A @ vec - eps * vec))
    if residual > EIG_TOL * max(1.0, float(np.linalg.norm(A, 2))):
        raise ConicError(f"Eigenpair residual {residual:.3e} above tolerance")
    return eps, vec


# --- Problem model ---


def _flat(x) -> cp.Expression:
    if not isinstance(x, cp.Expression):
        x = cp.Constant(np.asarray(x, dtype=float))
    if x.ndim == 1:
        return x
    return cp.reshape(x, (x.size,), order="F")


@dataclass
class HermitianBlock:
    """An n x n Hermitian PSD decision block held through its real embedding."""

    name: str
    n: int
    embedded: cp.Variable

    @property
    def re(self) -> cp.Expression:
        return self.embedded[: self.n, : self.n]

    @property
    def im(self) -> cp.Expression:
        return self.embedded[self.n :, : self.n]

    def trace(self) -> cp.Expression:
        return cp.trace(self.re)

    def inner(self, V) -> cp.Expression:
        """Re Tr(V E) for a constant Hermitian V, through the halved embedded trace."""
        return 0.5 * cp.sum(cp.multiply(hermitian_embed(V), self.embedded))

    def value(self) -> np.ndarray | None:
        Z = self.embedded.value
        if Z is None:
            return None
        n = self.n
        re = 0.5 * (Z[:n, :n] + Z[n:, n:])
        im = 0.5 * (Z[n:, :n] - Z[:n, n:])
        E = re + 1j * im
        return 0.5 * (E + E.conj().T)


@dataclass
class TaggedConstraint:
    kind: str
    label: str
    constraint: cp.Constraint


class ConicProblem:
    """Declared variable blocks, a linear objective with optional concave log terms, and
    tagged constraints. Only the shapes the three subproblems need are supported."""

    def __init__(self, name: str = "", sense: str = "maximize"):
        if sense not in ("maximize", "minimize"):
            raise ValueError(f"Invalid sense {sense!r}")
        self.name = name
        self.sense = sense
        self.variables: dict[str, cp.Variable] = {}
        self.hermitian: dict[str, HermitianBlock] = {}
        self.linear_terms: list[cp.Expression] = []
        self.log_terms: list[tuple[float, cp.Expression]] = []
        self.constraints: list[TaggedConstraint] = []

    # --- variables ---

    def _register(self, name: str, var: cp.Variable) -> cp.Variable:
        if name in self.variables or name in self.hermitian:
            raise ValueError(f"Variable {name!r} already declared")
        self.variables[name] = var
        return var

    def scalar(self, name: str, nonneg: bool = False) -> cp.Variable:
        return self._register(name, cp.Variable(name=name, nonneg=nonneg))

    def vector(self, name: str, n: int, nonneg: bool = False) -> cp.Variable:
        return self._register(name, cp.Variable(n, name=name, nonneg=nonneg))

    def matrix(self, name: str, rows: int, cols: int) -> cp.Variable:
        return self._register(name, cp.Variable((rows, cols), name=name))

    def symmetric(self, name: str, n: int, psd: bool = True) -> cp.Variable:
        var = self._register(name, cp.Variable((n, n), name=name, symmetric=True))
        if psd:
            self.psd(var, f"{name} psd")
        return var

    def hermitian_psd(self, name: str, n: int) -> HermitianBlock:
        if name in self.variables or name in self.hermitian:
            raise ValueError(f"Variable {name!r} already declared")
        Z = cp.Variable((2 * n, 2 * n), name=name, symmetric=True)
        block = HermitianBlock(name=name, n=n, embedded=Z)
        self.hermitian[name] = block
        self.psd(Z, f"{name} psd")
        self.eq(Z[:n, :n], Z[n:, n:], f"{name} embedding re")
        self.eq(Z[:n, n:], -Z[n:, :n], f"{name} embedding im")
        return block

    # --- objective ---

    def add_objective(self, expr) -> None:
        self.linear_terms.append(expr)

    def add_log_objective(self, affine, weight: float = 1.0) -> None:
        """Add ``weight * log(affine)``; only valid for maximization with weight > 0."""
        self.log_terms.append((weight, affine))

    # --- constraints ---

    def _add(self, kind: str, constraint: cp.Constraint, label: str) -> cp.Constraint:
        self.constraints.append(TaggedConstraint(kind, label, constraint))
        return constraint

    def eq(self, lhs, rhs, label: str = "") -> cp.Constraint:
        return self._add("equality", lhs == rhs, label)

    def leq(self, lhs, rhs, label: str = "") -> cp.Constraint:
        return self._add("inequality", lhs <= rhs, label)

    def geq(self, lhs, rhs, label: str = "") -> cp.Constraint:
        return self._add("inequality", lhs >= rhs, label)

    def soc(self, t, x, label: str = "") -> cp.Constraint:
        """||x||_2 <= t."""
        return self._add("soc", cp.SOC(t, _flat(x)), label)

    def rotated_soc(self, x, y, z, label: str = "") -> cp.Constraint:
        """x * y >= ||z||^2 with x, y >= 0, as ||[2z, x - y]|| <= x + y."""
        return self._add(
            "rotated_soc", cp.SOC(x + y, cp.hstack([2 * _flat(z), _flat(x - y)])), label
        )

    def psd(self, expr, label: str = "") -> cp.Constraint:
        return self._add("psd", expr >> 0, label)

    # --- assembly ---

    def validate(self) -> None:
        declared = {v.id for v in self.variables.values()}
        declared |= {b.embedded.id for b in self.hermitian.values()}
        exprs = [c.constraint for c in self.constraints] + list(self.linear_terms)
        exprs += [t for _, t in self.log_terms]
        for expr in exprs:
            for var in expr.variables():
                if var.id not in declared:
                    raise ValueError(f"Variable {var.name()!r} used but not declared")
        if self.log_terms and self.sense != "maximize":
            raise ValueError("Log objective terms require a maximization problem")
        for weight, affine in self.log_terms:
            if weight <= 0 or not affine.is_affine():
                raise ValueError("Log terms need a positive weight and an affine argument")

    def to_cvxpy(self) -> cp.Problem:
        self.validate()
        terms = [cp.sum(t) for t in self.linear_terms]
        terms += [weight * cp.sum(cp.log(affine)) for weight, affine in self.log_terms]
        objective = sum(terms, cp.Constant(0.0))
        sense = cp.Maximize if self.sense == "maximize" else cp.Minimize
        return cp.Problem(sense(objective), [c.constraint for c in self.constraints])

    def describe(self) -> str:
        lines = [f"problem {self.name or '-'}", f"sense {self.sense}"]
        for name, var in self.variables.items():
            lines.append(f"variable {name} {var.shape}")
        for name, block in self.hermitian.items():
            lines.append(f"variable {name} hermitian[{block.n}] embedded {block.embedded.shape}")
        for term in self.linear_terms:
            lines.append(f"objective linear {term}")
        for weight, affine in self.log_terms:
            lines.append(f"objective log {weight!r} * log({affine})")
        for c in self.constraints:
            lines.append(f"constraint {c.kind} {c.label or '-'}: {c.constraint}")
        return "\n".join(lines) + "\n"


def dump_problem(problem: ConicProblem, path: str | Path) -> Path:
    """Write the plain-text form of a problem for offline inspection."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(problem.describe())
    tmp.replace(path)
    return path


# --- Solving ---


@dataclass
class ConicSolution:
    status: str
    objective: float | None = None
    values: dict[str, np.ndarray] = field(default_factory=dict)
    primal_residual: float = float("inf")
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def __getitem__(self, name: str) -> np.ndarray:
        return self.values[name]


# solvers aim an order of magnitude below the acceptance residual
SOLVER_TOL_MARGIN = 0.1


def _solver_options(settings: SolverSettings) -> dict:
    name = settings.solver.upper()
    if name == "CLARABEL":
        return {
            "max_iter": settings.max_solver_iters,
            "tol_feas": settings.feas_tol * SOLVER_TOL_MARGIN,
            "tol_gap_abs": settings.opt_tol,
            "tol_gap_rel": settings.opt_tol,
        }
    if name == "SCS":
        return {
            "max_iters": settings.max_solver_iters * 50,
            "eps_abs": settings.feas_tol * SOLVER_TOL_MARGIN,
            "eps_rel": settings.opt_tol,
        }
    return {}


def _primal_residual(problem: ConicProblem) -> float:
    worst = 0.0
    for c in problem.constraints:
        viol = c.constraint.violation()
        if viol is None:
            return float("inf")
        worst = max(worst, float(np.max(np.atleast_1d(viol))) if np.size(viol) else 0.0)
    return worst


def _attempt(
    problem: ConicProblem, prob: cp.Problem, settings: SolverSettings, options: dict
) -> ConicSolution:
    try:
        prob.solve(solver=settings.solver.upper(), **options)
    except cp.SolverError as exc:
        log.debug("Solver error on %s: %s", problem.name, exc)
        return ConicSolution(status="numerical-failure")

    stats = prob.solver_stats
    iterations = int(stats.num_iters or 0) if stats is not None else 0

    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return ConicSolution(status="infeasible", iterations=iterations)
    if prob.status == cp.USER_LIMIT:
        return ConicSolution(status="max-iterations", iterations=iterations)
    if prob.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE):
        log.debug("Solver returned %s on %s", prob.status, problem.name)
        return ConicSolution(status="numerical-failure", iterations=iterations)

    values: dict[str, np.ndarray] = {}
    for name, var in problem.variables.items():
        if var.value is None:
            return ConicSolution(status="numerical-failure", iterations=iterations)
        values[name] = np.array(var.value, dtype=float)
    for name, block in problem.hermitian.items():
        values[name] = block.value()

    scale = 1.0
    for v in values.values():
        if v is not None and np.size(v):
            scale = max(scale, 1.0 + float(np.max(np.abs(v))))
    # inaccurate solutions are kept only when they pass the same residual test
    residual = _primal_residual(problem)
    if residual > settings.feas_tol * scale:
        log.debug("Residual %.3e above tolerance on %s", residual, problem.name)
        return ConicSolution(
            status="numerical-failure", primal_residual=residual, iterations=iterations
        )

    return ConicSolution(
        status="optimal",
        objective=float(prob.value),
        values=values,
        primal_residual=residual,
        iterations=iterations,
    )


def solve(problem: ConicProblem, settings: SolverSettings | None = None) -> ConicSolution:
    """Solve a ConicProblem; solver trouble is reported through the status, never raised.

    A run with the tuned tolerances that neither solves nor proves infeasibility is
    repeated once with the solver's own defaults.
    """
    settings = settings or SolverSettings()
    prob = problem.to_cvxpy()
    sol = _attempt(problem, prob, settings, _solver_options(settings))
    if sol.status in ("optimal", "infeasible"):
        return sol
    log.debug(
        "Retrying %s with default %s options after %s", problem.name, settings.solver, sol.status
    )
    return _attempt(problem, prob, settings, {})
