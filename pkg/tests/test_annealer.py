"""
Tests for code-matrix design by simulated annealing.
"""

import itertools
import logging
import math

import numpy as np
import pytest

from ecnn.annealer import (
    AnnealSchedule,
    calibrate_eta,
    design_matrix,
    propose_neighbor,
    random_matrix,
)
from ecnn.codebook import CodeMatrix, energy, energy_terms, min_hamming, min_vi
from ecnn.errors import DegenerateMatrixError, InvalidArgumentError, SearchStuckError
from tests.fixtures.test_data import DISTINCT_PARTITION_ROWS, SMALL_SCHEDULE, VI_C0_C1


def brute_force_minimum(num_classes: int, code_length: int, eta: float) -> float:
    """Lowest energy over every valid binary matrix of the given shape."""
    best = math.inf
    for bits in itertools.product((0, 1), repeat=num_classes * code_length):
        entries = np.array(bits).reshape(num_classes, code_length)
        try:
            candidate = CodeMatrix.from_rows(entries)
        except InvalidArgumentError:
            continue
        best = min(best, energy(candidate, eta))
    return best


class TestAnnealSchedule:
    """Test cases for the cooling schedule."""

    def test_geometric_temperatures(self) -> None:
        """Test that T_t = T_0 * r**t."""
        schedule = AnnealSchedule(initial_temperature=2.0, cooling_factor=0.5, num_temperatures=4)
        assert schedule.temperatures().tolist() == [2.0, 1.0, 0.5, 0.25]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"initial_temperature": 0.0},
            {"cooling_factor": 1.0},
            {"cooling_factor": 0.0},
            {"steps_per_temperature": 0},
            {"eta": -1.0},
        ],
    )
    def test_invalid_settings(self, kwargs) -> None:
        """Test that out-of-range schedule settings are rejected."""
        with pytest.raises(InvalidArgumentError):
            AnnealSchedule(**kwargs)

    def test_dict_round_trip(self) -> None:
        """Test that a schedule survives to_dict/from_dict."""
        schedule = AnnealSchedule(seed=9, eta=0.3, **SMALL_SCHEDULE)
        assert AnnealSchedule.from_dict(schedule.to_dict()) == schedule


class TestCalibrateEta:
    """Test cases for balancing the two energy sums."""

    def test_equal_sums(self, mocker) -> None:
        """Test that equal sums give eta = 1."""
        mocker.patch("ecnn.annealer.energy_terms", return_value=(1.3, 1.3))
        assert calibrate_eta(CodeMatrix.from_rows(DISTINCT_PARTITION_ROWS)) == 1.0

    def test_ratio(self, mocker) -> None:
        """Test that eta is the ratio of row to column sums."""
        mocker.patch("ecnn.annealer.energy_terms", return_value=(0.5, 2.0))
        assert calibrate_eta(CodeMatrix.from_rows(DISTINCT_PARTITION_ROWS)) == 0.25

    def test_closed_form(self) -> None:
        """Test calibration on a matrix with known distances."""
        m = CodeMatrix.from_rows(DISTINCT_PARTITION_ROWS)
        assert calibrate_eta(m) == pytest.approx(0.75 * VI_C0_C1**2 / 3.0, rel=1e-12)

    def test_duplicate_partitions_signal_retry(self, example_matrix: CodeMatrix) -> None:
        """Test that a zero VI asks the caller to resample."""
        with pytest.raises(DegenerateMatrixError):
            calibrate_eta(example_matrix)

    def test_single_column_rejected(self) -> None:
        """Test that calibration needs two columns."""
        with pytest.raises(InvalidArgumentError):
            calibrate_eta(CodeMatrix.from_rows([[0], [1]]))

    def test_random_matrix_balances_sums(self) -> None:
        """Test that eta * sum VI^-2 equals sum H^-2 on a random 10 x 20 matrix."""
        rng = np.random.default_rng(11)
        for _ in range(50):
            m = random_matrix(10, 20, 2, rng)
            try:
                eta = calibrate_eta(m)
            except DegenerateMatrixError:
                continue
            rows, columns = energy_terms(m)
            assert eta * columns == pytest.approx(rows, rel=1e-12)
            return
        pytest.fail("no random matrix with distinct partitions in 50 draws")


class TestNeighboursAndRandomMatrices:
    """Test cases for single-entry moves and random starting points."""

    def test_neighbour_changes_one_entry(self, four_class_matrix: CodeMatrix) -> None:
        """Test that a move changes exactly one entry and keeps the invariants."""
        rng = np.random.default_rng(0)
        for _ in range(20):
            neighbour = propose_neighbor(four_class_matrix, rng)
            assert np.count_nonzero(neighbour.entries != four_class_matrix.entries) == 1

    def test_neighbour_is_reproducible(self, four_class_matrix: CodeMatrix) -> None:
        """Test that the same generator state gives the same move."""
        first = propose_neighbor(four_class_matrix, np.random.default_rng(5))
        second = propose_neighbor(four_class_matrix, np.random.default_rng(5))
        assert first == second

    def test_two_class_binary_matrix_is_stuck(self) -> None:
        """Test that complementary rows have no valid single-entry neighbour."""
        m = CodeMatrix.from_rows([[0, 1, 0], [1, 0, 1]])
        with pytest.raises(SearchStuckError):
            propose_neighbor(m, np.random.default_rng(0))

    def test_ternary_neighbour_uses_other_symbol(self, ternary_matrix: CodeMatrix) -> None:
        """Test that q-ary moves switch to a different symbol."""
        neighbour = propose_neighbor(ternary_matrix, np.random.default_rng(2))
        changed = neighbour.entries != ternary_matrix.entries
        assert np.count_nonzero(changed) == 1
        assert neighbour.alphabet == 3

    def test_random_matrix_is_valid_and_reproducible(self) -> None:
        """Test that a 10 x 30 draw is valid and seeded."""
        first = random_matrix(10, 30, 2, np.random.default_rng(3))
        second = random_matrix(10, 30, 2, np.random.default_rng(3))
        assert first == second
        assert min_hamming(first) >= 1

    def test_infeasible_dimensions(self) -> None:
        """Test that too few codewords are rejected up front."""
        with pytest.raises(InvalidArgumentError):
            random_matrix(5, 2, 2, np.random.default_rng(0))
        with pytest.raises(InvalidArgumentError):
            design_matrix(1, 4)


class TestDesignMatrix:
    """Test cases for the annealing driver."""

    def setup_method(self) -> None:
        """Set up test fixtures."""
        self.schedule = AnnealSchedule(seed=7, **SMALL_SCHEDULE)

    def test_three_classes_three_columns(self) -> None:
        """Test that all three column partitions are used with equidistant rows."""
        result = design_matrix(3, 3, 2, self.schedule)
        assert result.min_vi > 0.0
        assert math.isfinite(result.final_energy)
        assert result.eta_used > 0.0
        assert result.min_hamming == 2

    def test_two_classes_are_complementary(self) -> None:
        """Test that M = 2 designs reach Hamming distance N."""
        result = design_matrix(2, 8, 2, self.schedule)
        assert result.min_hamming == 8
        assert result.eta_used == 0.0

    def test_deterministic(self) -> None:
        """Test that the same seed reproduces the result bit for bit."""
        assert design_matrix(4, 5, 2, self.schedule) == design_matrix(4, 5, 2, self.schedule)

    def test_trace_is_best_so_far(self) -> None:
        """Test that the trace never increases and matches the final energy."""
        result = design_matrix(4, 5, 2, self.schedule)
        trace = list(result.energy_trace)
        assert len(trace) == self.schedule.num_temperatures
        assert all(b <= a for a, b in zip(trace, trace[1:]))
        assert trace[-1] == pytest.approx(result.final_energy, rel=1e-9)
        assert result.final_energy == pytest.approx(energy(result.matrix, result.eta_used))

    def test_too_many_columns_falls_back_to_rows(self, caplog) -> None:
        """Test that N above the partition count anneals rows only, with a warning."""
        with caplog.at_level(logging.WARNING, logger="ecnn.annealer"):
            result = design_matrix(3, 4, 2, self.schedule)
        assert result.eta_used == 0.0
        assert min_vi(result.matrix) == 0.0
        assert "distinct column partitions" in caplog.text

    def test_explicit_eta(self) -> None:
        """Test that a schedule eta is used as given."""
        schedule = AnnealSchedule(seed=1, eta=0.25, **SMALL_SCHEDULE)
        assert design_matrix(4, 4, 2, schedule).eta_used == 0.25

    def test_ternary_design(self) -> None:
        """Test a q = 3 design keeps its alphabet and invariants."""
        result = design_matrix(4, 3, 3, self.schedule)
        assert result.matrix.alphabet == 3
        assert result.min_hamming >= 1

    def test_matches_brute_force_on_three_by_three(self) -> None:
        """Test that annealing reaches the exhaustive optimum for 3 x 3."""
        result = design_matrix(3, 3, 2, self.schedule)
        assert result.final_energy == pytest.approx(
            brute_force_minimum(3, 3, result.eta_used), rel=1e-12
        )

    @pytest.mark.slow
    def test_matches_brute_force_on_four_by_four(self) -> None:
        """Test that annealing reaches the exhaustive optimum for 4 x 4."""
        schedule = AnnealSchedule(
            seed=3, cooling_factor=0.9, steps_per_temperature=200, num_temperatures=40
        )
        result = design_matrix(4, 4, 2, schedule)
        assert result.final_energy == pytest.approx(
            brute_force_minimum(4, 4, result.eta_used), rel=1e-12
        )


if __name__ == "__main__":
    pytest.main([__file__])
