"""Independent brute-force verifiers for the ranking model and all gradients.

Everything here recomputes from first principles (explicit permutation
distributions via plain exp-ratio products, central finite differences) and
deliberately shares no arithmetic code with the modules it checks.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .exceptions import CapacityError, InputError, NumericalError

ORACLE_CAP = 8  # 8! = 40320 permutations; fixed regardless of the ranking cap

REL_ERROR_FLOOR = 1e-8


@dataclass
class PermutationDistribution:
    """Explicit probability table over every permutation of n candidates."""

    n: int
    probabilities: dict  # tuple(permutation) -> probability

    def __post_init__(self):
        total = math.fsum(self.probabilities.values())
        if abs(total - 1.0) > 1e-9:
            raise NumericalError(f"permutation probabilities sum to {total!r}, not 1")
        for perm, p in self.probabilities.items():
            if not (0.0 < p <= 1.0 + 1e-12):
                raise NumericalError(f"probability of {perm} out of (0, 1]: {p!r}")

    def argmax(self) -> tuple:
        return max(self.probabilities, key=self.probabilities.get)


def _naive_perm_prob(scores, perm) -> float:
    # direct product of exp ratios, no log space on purpose
    prob = 1.0
    n = len(scores)
    for i in range(n):
        numer = math.exp(scores[perm[i]])
        denom = math.fsum(math.exp(scores[perm[k]]) for k in range(i, n))
        prob *= numer / denom
    return prob


def enumerate_distribution(scores) -> PermutationDistribution:
    """Materialize the full permutation distribution by direct evaluation."""
    s = [float(v) for v in np.asarray(scores, dtype=np.float64)]
    n = len(s)
    if n < 1:
        raise InputError("scores must be non-empty")
    if n > ORACLE_CAP:
        raise CapacityError(f"oracle enumeration is capped at n={ORACLE_CAP} (got n={n})")
    probs = {perm: _naive_perm_prob(s, perm) for perm in itertools.permutations(range(n))}
    return PermutationDistribution(n=n, probabilities=probs)


def naive_soft_loss(teacher_scores, student_scores) -> float:
    """KL divergence computed from two explicitly enumerated distributions."""
    t = enumerate_distribution(teacher_scores)
    s = enumerate_distribution(student_scores)
    if t.n != s.n:
        raise InputError("score lists differ in length")
    return math.fsum(
        pt * (math.log(pt) - math.log(s.probabilities[perm]))
        for perm, pt in t.probabilities.items())


def finite_diff_grad(loss_fn, point, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate."""
    x = np.asarray(point, dtype=np.float64)
    grad = np.empty(x.size)
    flat = x.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = loss_fn(x)
        flat[i] = orig - h
        f_minus = loss_fn(x)
        flat[i] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericalError(f"loss non-finite when perturbing coordinate {i}")
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x.shape) if x.ndim > 1 else grad


def relative_errors(analytic, numeric) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64).ravel()
    b = np.asarray(numeric, dtype=np.float64).ravel()
    scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_ERROR_FLOOR)
    return np.abs(a - b) / scale


@dataclass
class GradCheckReport:
    """Outcome of one gradient check: analytic vs central finite differences."""

    name: str
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray
    max_rel_error: float
    tolerance: float
    passed: bool
    instances: int = 1

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "max_rel_error": self.max_rel_error,
            "tolerance": self.tolerance,
            "passed": self.passed,
            "instances": self.instances,
        }


def check_gradient(name, loss_fn, grad_fn, point, tolerance: float = 1e-4,
                   h: float = 1e-5) -> GradCheckReport:
    """Compare ``grad_fn(point)`` against finite differences of ``loss_fn``."""
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(grad_fn(point.copy()), dtype=np.float64)
    numeric = finite_diff_grad(loss_fn, point.copy(), h=h)
    rel = relative_errors(analytic, numeric)
    worst = float(rel.max()) if rel.size else 0.0
    return GradCheckReport(
        name=name, analytic=analytic, numeric=numeric, rel_errors=rel,
        max_rel_error=worst, tolerance=tolerance, passed=worst <= tolerance)


@dataclass
class GradCheckSuiteResult:
    reports: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.reports)

    def worst(self) -> GradCheckReport:
        return max(self.reports, key=lambda r: r.max_rel_error)

    def to_dict(self) -> dict:
        return {"passed": self.passed, "checks": [r.to_dict() for r in self.reports]}


def run_gradcheck(checks=None, instances: int = 25, tolerance: float = 1e-4,
                  seed: int = 0) -> GradCheckSuiteResult:
    """Run a family of gradient checks, keeping the worst instance per check.

    ``checks`` maps a name to a factory ``f(rng) -> (point, loss_fn, grad_fn)``;
    defaults to the standard suite covering every loss in the package.
    """
    if checks is None:
        from .gradcheck_suite import standard_checks
        checks = standard_checks()
    rng = np.random.default_rng(seed)
    result = GradCheckSuiteResult()
    for name, factory in checks.items():
        worst = None
        for _ in range(instances):
            point, loss_fn, grad_fn = factory(rng)
            report = check_gradient(name, loss_fn, grad_fn, point, tolerance=tolerance)
            if worst is None or report.max_rel_error > worst.max_rel_error:
                worst = report
        worst.instances = instances
        result.reports.append(worst)
    return result
