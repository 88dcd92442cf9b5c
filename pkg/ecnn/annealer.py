"""
Code Matrix Design by Simulated Annealing

Searches for a code matrix with large row Hamming distances and large
column VI distances by minimising the annealing energy of
:func:`ecnn.codebook.energy` under single-entry moves.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np

from ecnn.codebook import (
    CodeMatrix,
    column_vi_against,
    count_partitions,
    energy,
    energy_terms,
    min_hamming,
    min_vi,
    pairwise_hamming,
    pairwise_vi,
)
from ecnn.config import from_mapping, to_plain
from ecnn.errors import DegenerateMatrixError, InvalidArgumentError, SearchStuckError
from ecnn.seeding import substream

logger = logging.getLogger(__name__)

MAX_RESAMPLES = 1000


@dataclass(frozen=True)
class AnnealSchedule:
    """Geometric cooling schedule; ``eta=None`` calibrates on the start matrix."""

    initial_temperature: float = 1.0
    cooling_factor: float = 0.95
    steps_per_temperature: int = 500
    num_temperatures: int = 200
    seed: int = 0
    eta: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.initial_temperature > 0:
            raise InvalidArgumentError("initial_temperature must be positive")
        if not 0 < self.cooling_factor < 1:
            raise InvalidArgumentError("cooling_factor must lie in (0, 1)")
        if self.steps_per_temperature < 1 or self.num_temperatures < 1:
            raise InvalidArgumentError("schedule step counts must be positive")
        if self.eta is not None and self.eta < 0:
            raise InvalidArgumentError("eta must be non-negative")

    def temperatures(self) -> np.ndarray:
        """T_t = T_0 * cooling_factor**t for every level t."""
        levels = np.arange(self.num_temperatures, dtype=np.float64)
        return self.initial_temperature * self.cooling_factor**levels

    def to_dict(self) -> Dict[str, Any]:
        return to_plain(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AnnealSchedule":
        return from_mapping(cls, data)


@dataclass(frozen=True)
class DesignResult:
    """Best matrix found by one annealing run."""

    matrix: CodeMatrix
    final_energy: float
    min_hamming: int
    min_vi: float
    eta_used: float
    energy_trace: Tuple[float, ...]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "num_classes": self.matrix.num_classes,
            "code_length": self.matrix.code_length,
            "alphabet": self.matrix.alphabet,
            "final_energy": self.final_energy,
            "min_hamming": self.min_hamming,
            "min_vi": self.min_vi,
            "eta_used": self.eta_used,
            "energy_trace": list(self.energy_trace),
        }


def calibrate_eta(m: CodeMatrix) -> float:
    """
    Weight that makes both energy sums equal on ``m``.

    Raises:
        DegenerateMatrixError: some column pair has zero VI; resample ``m``
    """
    if m.code_length < 2:
        raise InvalidArgumentError("eta calibration needs at least 2 columns")
    rows, columns = energy_terms(m)
    if math.isinf(columns):
        raise DegenerateMatrixError("duplicate column partitions; resample the matrix")
    return rows / columns


def _is_valid_move(entries: np.ndarray, i: int, j: int, symbol: int) -> bool:
    column = entries[:, j].copy()
    column[i] = symbol
    if np.all(column == column[0]):
        return False
    row = entries[i].copy()
    row[j] = symbol
    others = np.delete(entries, i, axis=0)
    return not bool(np.any(np.all(others == row, axis=1)))


def _propose_move(
    entries: np.ndarray, alphabet: int, rng: np.random.Generator
) -> Tuple[int, int, int]:
    rows, columns = entries.shape
    for _ in range(MAX_RESAMPLES):
        i = int(rng.integers(rows))
        j = int(rng.integers(columns))
        symbol = int((entries[i, j] + rng.integers(1, alphabet)) % alphabet)
        if _is_valid_move(entries, i, j, symbol):
            return i, j, symbol
    raise SearchStuckError(
        f"no valid single-entry neighbour after {MAX_RESAMPLES} proposals"
    )


def propose_neighbor(m: CodeMatrix, rng: np.random.Generator) -> CodeMatrix:
    """Copy of ``m`` with one entry changed to a different symbol."""
    i, j, symbol = _propose_move(m.entries, m.alphabet, rng)
    entries = m.entries.copy()
    entries[i, j] = symbol
    return CodeMatrix.from_rows(entries, m.alphabet)


def _check_dimensions(num_classes: int, code_length: int, alphabet: int) -> None:
    if num_classes < 2:
        raise InvalidArgumentError("a code matrix needs at least 2 classes")
    if code_length < 1 or alphabet < 2:
        raise InvalidArgumentError("code_length must be >= 1 and alphabet >= 2")
    if alphabet**code_length < num_classes:
        raise InvalidArgumentError(
            f"{code_length} symbols over alphabet {alphabet} cannot give "
            f"{num_classes} distinct codewords"
        )


def random_matrix(
    num_classes: int, code_length: int, alphabet: int, rng: np.random.Generator
) -> CodeMatrix:
    """Uniformly random matrix, redrawn until rows differ and columns vary."""
    _check_dimensions(num_classes, code_length, alphabet)
    for _ in range(MAX_RESAMPLES):
        entries = rng.integers(0, alphabet, size=(num_classes, code_length))
        distinct = len({row.tobytes() for row in entries}) == num_classes
        varied = bool(np.all(np.any(entries != entries[0], axis=0)))
        if distinct and varied:
            return CodeMatrix.from_rows(entries, alphabet)
    raise SearchStuckError(
        f"no valid {num_classes}x{code_length} matrix in {MAX_RESAMPLES} draws"
    )


class _EnergyState:
    """Pairwise distance tables kept in step with single-entry moves."""

    def __init__(self, m: CodeMatrix, eta: float):
        self.entries = m.entries.copy()
        self.alphabet = m.alphabet
        self.eta = eta
        self.hamming = pairwise_hamming(m).astype(np.float64)
        self.vi = pairwise_vi(m) if eta > 0 else None
        self._rows = np.triu_indices(m.num_classes, k=1)
        self._columns = np.triu_indices(m.code_length, k=1)
        self.value = self.total(self.hamming, self.vi)

    def total(self, hamming: np.ndarray, vi: Optional[np.ndarray]) -> float:
        value = float(np.sum(hamming[self._rows] ** -2.0))
        if vi is None or len(self._columns[0]) == 0:
            return value
        pairs = vi[self._columns]
        if np.any(pairs == 0.0):
            return math.inf
        return value + self.eta * float(np.sum(pairs**-2.0))

    def trial(self, i: int, j: int, symbol: int) -> Tuple[float, np.ndarray, Any]:
        old = self.entries[i, j]
        column = self.entries[:, j]
        change = (symbol != column).astype(np.float64) - (old != column)
        change[i] = 0.0
        hamming = self.hamming.copy()
        hamming[i, :] += change
        hamming[:, i] += change

        vi = None
        if self.vi is not None:
            entries = self.entries.copy()
            entries[i, j] = symbol
            vi = self.vi.copy()
            fresh = column_vi_against(entries, entries[:, j], self.alphabet)
            vi[j, :] = fresh
            vi[:, j] = fresh
        return self.total(hamming, vi), hamming, vi

    def commit(self, i: int, j: int, symbol: int, value: float, hamming, vi) -> None:
        self.entries[i, j] = symbol
        self.hamming = hamming
        self.vi = vi
        self.value = value


def _initial_matrix(
    num_classes: int,
    code_length: int,
    alphabet: int,
    schedule: AnnealSchedule,
    rng: np.random.Generator,
) -> Tuple[CodeMatrix, float]:
    if schedule.eta is not None:
        return random_matrix(num_classes, code_length, alphabet, rng), schedule.eta

    if code_length < 2:
        return random_matrix(num_classes, code_length, alphabet, rng), 0.0

    available = count_partitions(num_classes, alphabet)
    if code_length > available:
        logger.warning(
            "Only %d distinct column partitions exist for %d classes over "
            "alphabet %d; designing %d columns on row distances alone (eta=0)",
            available,
            num_classes,
            alphabet,
            code_length,
        )
        return random_matrix(num_classes, code_length, alphabet, rng), 0.0

    for _ in range(MAX_RESAMPLES):
        start = random_matrix(num_classes, code_length, alphabet, rng)
        try:
            return start, calibrate_eta(start)
        except DegenerateMatrixError:
            continue
    raise SearchStuckError(
        f"no start matrix with distinct column partitions in {MAX_RESAMPLES} draws"
    )


def design_matrix(
    num_classes: int,
    code_length: int,
    alphabet: int = 2,
    schedule: Optional[AnnealSchedule] = None,
) -> DesignResult:
    """
    Anneal a code matrix.

    Args:
        num_classes: Number of codewords M
        code_length: Symbols per codeword N
        alphabet: Symbol count q
        schedule: Cooling schedule and seed

    Returns:
        DesignResult holding the best matrix seen
    """
    schedule = schedule or AnnealSchedule()
    _check_dimensions(num_classes, code_length, alphabet)
    rng = substream(schedule.seed, "design")

    start, eta = _initial_matrix(num_classes, code_length, alphabet, schedule, rng)
    state = _EnergyState(start, eta)
    best_entries = state.entries.copy()
    best_value = state.value
    trace = []
    stuck = False

    logger.info(
        "Annealing %dx%d q=%d matrix, eta=%.6g, start energy %.6g",
        num_classes,
        code_length,
        alphabet,
        eta,
        best_value,
    )

    for level, temperature in enumerate(schedule.temperatures()):
        if not stuck:
            accepted = 0
            for _ in range(schedule.steps_per_temperature):
                try:
                    i, j, symbol = _propose_move(state.entries, alphabet, rng)
                except SearchStuckError:
                    logger.info("No valid neighbour remains; search ends at level %d", level)
                    stuck = True
                    break
                value, hamming, vi = state.trial(i, j, symbol)
                if value <= state.value:
                    accept = True
                else:
                    delta = value - state.value
                    accept = bool(rng.random() < math.exp(-delta / temperature))
                if accept:
                    state.commit(i, j, symbol, value, hamming, vi)
                    accepted += 1
                    if value < best_value:
                        best_value = value
                        best_entries = state.entries.copy()
            logger.debug("T=%.4g accepted %d moves", temperature, accepted)
        trace.append(best_value)
        if level % 10 == 0:
            logger.info("Level %d T=%.4g best energy %.6g", level, temperature, best_value)

    best = CodeMatrix.from_rows(best_entries, alphabet)
    return DesignResult(
        matrix=best,
        final_energy=energy(best, eta),
        min_hamming=min_hamming(best),
        min_vi=min_vi(best) if code_length >= 2 else math.nan,
        eta_used=float(eta),
        energy_trace=tuple(trace),
    )
