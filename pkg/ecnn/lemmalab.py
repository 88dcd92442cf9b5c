"""
Lemma Lab

Finite-sample experiments behind the encoder design: when per-branch or
shared heads can fit the code-matrix targets exactly, when a shared head
cannot, noise tolerance of a shared head, the label-smoothing fixed point
and the mutual information carried by one q-ary column.

Features follow f_{n,x} = f^{y(x)}_n + n_{n,x} with Gaussian noise.
Every linear solve is done twice (SVD least squares and normal equations)
and the two answers are compared.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from ecnn.annealer import random_matrix
from ecnn.codebook import max_mutual_information
from ecnn.config import to_plain
from ecnn.errors import InvalidArgumentError
from ecnn.model import minimize_smoothed_ce, smoothing_fixed_point, smoothing_logit
from ecnn.seeding import substream

logger = logging.getLogger(__name__)

EXACT = 1e-8
AGREEMENT = 1e-8


@dataclass
class FeatureModel:
    """Principal features f^y_n (M, N, F), noise level and optional permutations S_n."""

    principal_features: np.ndarray
    noise_sigma: float = 0.0
    permutations: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.principal_features = np.asarray(self.principal_features, dtype=np.float64)
        if self.principal_features.ndim != 3:
            raise InvalidArgumentError("principal features must have shape (M, N, F)")
        if self.noise_sigma < 0:
            raise InvalidArgumentError("noise_sigma must be non-negative")
        if self.permutations is not None:
            self.permutations = np.asarray(self.permutations, dtype=np.int64)
            _, branches, width = self.principal_features.shape
            if self.permutations.shape != (branches, width):
                raise InvalidArgumentError("need one permutation of F indices per branch")
            for perm in self.permutations:
                if sorted(perm.tolist()) != list(range(width)):
                    raise InvalidArgumentError("permutations must be bijections on 0..F-1")

    @property
    def shape(self) -> Tuple[int, int, int]:
        m, n, f = self.principal_features.shape
        return int(m), int(n), int(f)

    @classmethod
    def permuted(
        cls, base: np.ndarray, permutations: np.ndarray, noise_sigma: float = 0.0
    ) -> "FeatureModel":
        """f^y_n = S_n f^y for base vectors f^y (M, F)."""
        base = np.asarray(base, dtype=np.float64)
        features = np.stack([base[:, perm] for perm in permutations], axis=1)
        return cls(features, noise_sigma, np.asarray(permutations))

    def sample(self, labels: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Observed features (K, N, F) for class labels (K,)."""
        clean = self.principal_features[np.asarray(labels)]
        if self.noise_sigma == 0:
            return clean.copy()
        return clean + rng.normal(0.0, self.noise_sigma, size=clean.shape)


@dataclass
class LinearSolution:
    coefficients: np.ndarray
    residual: float
    discrepancy: float


def least_squares(A: np.ndarray, b: np.ndarray) -> LinearSolution:
    """
    Solve min ||A x - b|| by SVD and cross-check with the normal equations.

    The discrepancy is NaN when A has neither full row nor full column rank.
    """
    x, *_ = np.linalg.lstsq(A, b, rcond=None)
    residual = float(np.linalg.norm(A @ x - b))
    rows, columns = A.shape
    rank = np.linalg.matrix_rank(A)
    if rank == columns:
        other = scipy.linalg.solve(A.T @ A, A.T @ b, assume_a="pos")
    elif rank == rows:
        other = A.T @ scipy.linalg.solve(A @ A.T, b, assume_a="pos")
    else:
        return LinearSolution(x, residual, math.nan)
    scale = max(1.0, float(np.max(np.abs(x))))
    return LinearSolution(x, residual, float(np.max(np.abs(x - other))) / scale)


def _signed_targets(bits: np.ndarray) -> np.ndarray:
    return 2.0 * np.asarray(bits, dtype=np.float64) - 1.0


def _max_finite(values: Sequence[float]) -> float:
    finite = [v for v in values if not math.isnan(v)]
    return max(finite) if finite else math.nan


@dataclass
class Lemma1Report:
    trials: int
    a_feasible_regime: bool
    a_pass_rate: float
    a_max_residual: float
    b_feasible_regime: bool
    b_pass_rate: float
    b_min_residual: float
    b_max_residual: float
    c_witnessed: bool
    c_min_residual: float
    solver_discrepancy: float

    @property
    def passed(self) -> bool:
        a_ok = self.a_pass_rate == 1.0 if self.a_feasible_regime else True
        b_ok = self.b_pass_rate == 1.0 if self.b_feasible_regime else self.b_min_residual > 1e-3
        return a_ok and b_ok and self.c_witnessed and not self.solver_discrepancy > AGREEMENT

    def to_dict(self) -> Dict[str, Any]:
        return {**to_plain(self), "passed": self.passed}


def verify_lemma1(
    F: int, K: int, N: int, M: int, trials: int = 20, seed: int = 0, noise_sigma: float = 0.5
) -> Lemma1Report:
    """
    Exact fits of +-1 code targets by linear heads.

    (a) one shared feature map, a head per branch: exact when K <= F.
    (b) a head shared by all branches: exact when N*K <= F.
    (c) both shared: rows with both symbols cannot be fitted; the residual
        equals the spread of each sample's targets across branches.
    """
    if min(F, K, N, M, trials) < 1:
        raise InvalidArgumentError("dimensions and trial count must be positive")
    rng = substream(seed, "lemma")
    a_pass, b_pass = 0, 0
    a_residuals: List[float] = []
    b_residuals: List[float] = []
    c_residuals: List[float] = []
    c_witnessed = True
    discrepancies: List[float] = []

    for _ in range(trials):
        code = random_matrix(M, N, 2, rng)
        labels = np.arange(K) % M
        targets = _signed_targets(code.entries[labels])
        features = FeatureModel(rng.normal(size=(M, N, F)), noise_sigma)
        shared = features.principal_features[labels, 0] + rng.normal(0.0, noise_sigma, (K, F))

        worst_a = 0.0
        for n in range(N):
            solution = least_squares(shared, targets[:, n])
            worst_a = max(worst_a, solution.residual)
            discrepancies.append(solution.discrepancy)
        a_residuals.append(worst_a)
        a_pass += int(worst_a < EXACT)

        observed = features.sample(labels, rng)
        stacked = observed.transpose(1, 0, 2).reshape(N * K, F)
        solution = least_squares(stacked, targets.T.reshape(-1))
        b_residuals.append(solution.residual)
        discrepancies.append(solution.discrepancy)
        b_pass += int(solution.residual < EXACT)

        repeated = np.tile(shared, (N, 1))
        fit = np.linalg.lstsq(repeated, targets.T.reshape(-1), rcond=None)[0]
        residual = float(np.linalg.norm(repeated @ fit - targets.T.reshape(-1)))
        spread = float(np.sqrt(np.sum((targets - targets.mean(axis=1, keepdims=True)) ** 2)))
        c_residuals.append(residual)
        if K <= F:
            discrepancies.append(abs(residual - spread) / max(1.0, spread))
        mixed = bool(np.any(targets.min(axis=1) != targets.max(axis=1)))
        if mixed and not residual > 1e-3:
            c_witnessed = False

    report = Lemma1Report(
        trials=trials,
        a_feasible_regime=K <= F,
        a_pass_rate=a_pass / trials,
        a_max_residual=max(a_residuals),
        b_feasible_regime=N * K <= F,
        b_pass_rate=b_pass / trials,
        b_min_residual=min(b_residuals),
        b_max_residual=max(b_residuals),
        c_witnessed=c_witnessed,
        c_min_residual=min(c_residuals),
        solver_discrepancy=_max_finite(discrepancies),
    )
    logger.info("Lemma 1 check F=%d K=%d N=%d M=%d: passed=%s", F, K, N, M, report.passed)
    return report


@dataclass
class Lemma2Report:
    trials: int
    a_pass_rate: float
    a_max_residual: float
    b_infeasible_regime: bool
    b_infeasible_rate: float
    b_min_residual: float
    control_pass_rate: float
    solver_discrepancy: float

    @property
    def passed(self) -> bool:
        b_ok = self.b_infeasible_rate == 1.0 if self.b_infeasible_regime else True
        return (
            self.a_pass_rate == 1.0
            and b_ok
            and self.control_pass_rate == 1.0
            and not self.solver_discrepancy > AGREEMENT
        )

    def to_dict(self) -> Dict[str, Any]:
        return {**to_plain(self), "passed": self.passed}


def verify_lemma2(F: int, M: int, N: int, trials: int = 50, seed: int = 0) -> Lemma2Report:
    """
    Branch features that are permutations of each other.

    (a) per-branch heads fit the targets exactly (needs M <= F).
    (b) a shared head cannot once N*M >= F*(M+1): residual > 1e-6 in
        every trial.
    The control uses identity permutations and a single branch with a shared
    head, which is solvable.
    """
    if min(F, M, N, trials) < 1:
        raise InvalidArgumentError("dimensions and trial count must be positive")
    if M > F:
        raise InvalidArgumentError("per-branch exact fits need M <= F")
    rng = substream(seed, "lemma")
    a_pass, b_infeasible, control_pass = 0, 0, 0
    a_residuals: List[float] = []
    b_residuals: List[float] = []
    discrepancies: List[float] = []

    for _ in range(trials):
        code = random_matrix(M, N, 2, rng) if 2**N >= M else None
        bits = code.entries if code is not None else rng.integers(0, 2, size=(M, N))
        targets = _signed_targets(bits)
        base = rng.normal(size=(M, F))
        perms = np.stack([rng.permutation(F) for _ in range(N)])
        features = FeatureModel.permuted(base, perms)

        worst = 0.0
        for n in range(N):
            solution = least_squares(features.principal_features[:, n, :], targets[:, n])
            worst = max(worst, solution.residual)
            discrepancies.append(solution.discrepancy)
        a_residuals.append(worst)
        a_pass += int(worst < EXACT)

        stacked = features.principal_features.transpose(1, 0, 2).reshape(N * M, F)
        solution = least_squares(stacked, targets.T.reshape(-1))
        b_residuals.append(solution.residual)
        discrepancies.append(solution.discrepancy)
        b_infeasible += int(solution.residual > 1e-6)

        control = least_squares(base, targets[:, 0])
        discrepancies.append(control.discrepancy)
        control_pass += int(control.residual < EXACT)

    report = Lemma2Report(
        trials=trials,
        a_pass_rate=a_pass / trials,
        a_max_residual=max(a_residuals),
        b_infeasible_regime=N * M >= F * (M + 1),
        b_infeasible_rate=b_infeasible / trials,
        b_min_residual=min(b_residuals),
        control_pass_rate=control_pass / trials,
        solver_discrepancy=_max_finite(discrepancies),
    )
    logger.info("Lemma 2 check F=%d M=%d N=%d: passed=%s", F, M, N, report.passed)
    return report


@dataclass
class Lemma3Report:
    trials: int
    rank: int
    min_margin: float
    head_difference_norm: float
    threshold_noise_norm: float
    sigma_grid: List[float]
    accuracy_curve: List[float]
    below_threshold_samples: int
    below_threshold_accuracy: float
    violations: int
    solver_discrepancy: float

    @property
    def passed(self) -> bool:
        return self.violations == 0 and not self.solver_discrepancy > AGREEMENT

    def to_dict(self) -> Dict[str, Any]:
        return {**to_plain(self), "passed": self.passed}


def verify_lemma3(
    F: int,
    M: int,
    N: int,
    sigma_grid: Sequence[float] = (0.0, 0.05, 0.1, 0.2, 0.5, 1.0),
    trials: int = 200,
    seed: int = 0,
) -> Lemma3Report:
    """
    Noise tolerance of a shared two-logit head.

    The head is fitted exactly on linearly independent principal features
    so that z(bit) - z(1 - bit) = 2. A noisy sample is classified correctly
    whenever ||noise|| * ||phi_0 - phi_1|| is below that margin; the
    report counts violations of this bound (expected 0) and the
    meta-accuracy at every noise level.
    """
    if min(F, M, N, trials) < 1:
        raise InvalidArgumentError("dimensions and trial count must be positive")
    if M * N > F:
        raise InvalidArgumentError(
            f"{M * N} principal features cannot be linearly independent in {F} dimensions"
        )
    rng = substream(seed, "lemma")
    code = random_matrix(M, N, 2, rng) if 2**N >= M else None
    bits = code.entries if code is not None else rng.integers(0, 2, size=(M, N))
    principal = rng.normal(size=(M, N, F))
    flat = principal.reshape(M * N, F)
    rank = int(np.linalg.matrix_rank(flat))
    if rank < M * N:
        raise InvalidArgumentError(f"principal features have rank {rank} < {M * N}")

    targets = np.stack([1.0 - 2.0 * bits, 2.0 * bits - 1.0], axis=-1).reshape(M * N, 2)
    solution = least_squares(flat, targets)
    phi = solution.coefficients.T
    difference = phi[0] - phi[1]
    norm = float(np.linalg.norm(difference))
    clean_gap = flat @ difference
    margins = np.abs(clean_gap)
    sign = np.sign(clean_gap).reshape(M, N)

    accuracy: List[float] = []
    below_total, below_correct, violations = 0, 0, 0
    for sigma in sigma_grid:
        labels = rng.integers(0, M, size=trials)
        noise = np.zeros((trials, N, F))
        if sigma > 0:
            noise = rng.normal(0.0, sigma, size=noise.shape)
        observed = principal[labels] + noise
        gap = observed @ difference
        correct = np.sign(gap) == sign[labels]
        accuracy.append(float(correct.mean()))

        bound = np.linalg.norm(noise, axis=-1) * norm
        below = bound < margins.reshape(M, N)[labels]
        below_total += int(below.sum())
        below_correct += int(correct[below].sum())
        violations += int(np.sum(below & ~correct))

    report = Lemma3Report(
        trials=trials,
        rank=rank,
        min_margin=float(margins.min()),
        head_difference_norm=norm,
        threshold_noise_norm=float(margins.min() / norm) if norm > 0 else math.inf,
        sigma_grid=[float(s) for s in sigma_grid],
        accuracy_curve=accuracy,
        below_threshold_samples=below_total,
        below_threshold_accuracy=below_correct / below_total if below_total else math.nan,
        violations=violations,
        solver_discrepancy=solution.discrepancy,
    )
    logger.info("Lemma 3 check F=%d M=%d N=%d: passed=%s", F, M, N, report.passed)
    return report


@dataclass
class Lemma4Row:
    gamma: float
    fixed_point: float
    direct_minimum: float
    difference: float
    logit: float
    residual: float


@dataclass
class Lemma4Report:
    rows: List[Lemma4Row] = field(default_factory=list)
    tolerance: float = 1e-6

    @property
    def passed(self) -> bool:
        ordered = sorted(self.rows, key=lambda r: r.gamma)
        decreasing = all(
            a.fixed_point > b.fixed_point for a, b in zip(ordered, ordered[1:])
        )
        return decreasing and all(r.difference <= self.tolerance for r in self.rows)

    def to_dict(self) -> Dict[str, Any]:
        return {**to_plain(self), "passed": self.passed}


def verify_lemma4(gammas: Sequence[float] = (0.05, 0.1, 0.2)) -> Lemma4Report:
    """Fixed point of the smoothing equation against direct minimisation."""
    report = Lemma4Report()
    for gamma in gammas:
        zeta = smoothing_fixed_point(gamma)
        direct = minimize_smoothed_ce(gamma)
        t = smoothing_logit(gamma)
        report.rows.append(
            Lemma4Row(
                gamma=float(gamma),
                fixed_point=zeta,
                direct_minimum=direct,
                difference=abs(zeta - direct),
                logit=t,
                residual=1.0 + math.exp(-t) - gamma * t,
            )
        )
    logger.info("Lemma 4 check over %d gammas: passed=%s", len(report.rows), report.passed)
    return report


@dataclass
class Lemma5Row:
    num_classes: int
    alphabet: int
    max_information: float
    log_alphabet: float
    divisible: bool


@dataclass
class Lemma5Report:
    rows: List[Lemma5Row] = field(default_factory=list)
    tolerance: float = 1e-12

    @property
    def increasing(self) -> bool:
        by_classes: Dict[int, List[Lemma5Row]] = {}
        for row in self.rows:
            by_classes.setdefault(row.num_classes, []).append(row)
        for rows in by_classes.values():
            ordered = sorted(rows, key=lambda r: r.alphabet)
            if any(a.max_information >= b.max_information for a, b in zip(ordered, ordered[1:])):
                return False
        return True

    @property
    def passed(self) -> bool:
        exact = all(
            abs(r.max_information - r.log_alphabet) <= self.tolerance
            for r in self.rows
            if r.divisible
        )
        bounded = all(r.max_information <= r.log_alphabet + self.tolerance for r in self.rows)
        return exact and bounded and self.increasing

    def to_dict(self) -> Dict[str, Any]:
        return {**to_plain(self), "increasing": self.increasing, "passed": self.passed}


def verify_lemma5(
    classes: Sequence[int] = (6, 10, 12), alphabets: Sequence[int] = (2, 3, 4)
) -> Lemma5Report:
    """Largest column mutual information per (M, q): log q when q divides M."""
    report = Lemma5Report()
    for num_classes in classes:
        for alphabet in alphabets:
            if alphabet > num_classes:
                continue
            report.rows.append(
                Lemma5Row(
                    num_classes=int(num_classes),
                    alphabet=int(alphabet),
                    max_information=max_mutual_information(num_classes, alphabet),
                    log_alphabet=math.log(alphabet),
                    divisible=num_classes % alphabet == 0,
                )
            )
    logger.info("Lemma 5 check over %d settings: passed=%s", len(report.rows), report.passed)
    return report
