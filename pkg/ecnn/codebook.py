"""
Code-matrix representation, distance and information metrics, serialisation.

A code matrix assigns each of M classes an N-symbol codeword over a q-ary
alphabet. Rows are compared with the Hamming distance, columns (each a
partition of the classes into meta-classes) with the variation of
information. All logarithms are natural.
"""

import json
from dataclasses import dataclass
from pathlib import Path
from typing import FrozenSet, Iterable, Sequence, Tuple, Union

import numpy as np
from scipy.special import entr, stirling2

from ecnn.errors import InvalidArgumentError, ParseError

MatrixLike = Union[Sequence[Sequence[int]], np.ndarray]

_FIELDS = ("num_classes", "code_length", "alphabet", "entries")


@dataclass(frozen=True, eq=False)
class CodeMatrix:
    """An M x N q-ary code matrix with distinct rows and informative columns."""

    num_classes: int
    code_length: int
    alphabet: int
    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.array(self.entries, dtype=np.int64, copy=True)
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)
        self._validate(check_columns=True)

    @classmethod
    def from_rows(cls, rows: MatrixLike, alphabet: int = 2) -> "CodeMatrix":
        """Build a matrix from a nested sequence of codewords."""
        array = np.asarray(rows)
        if array.ndim != 2:
            raise InvalidArgumentError("code matrix rows must form a 2-D grid")
        return cls(
            num_classes=int(array.shape[0]),
            code_length=int(array.shape[1]),
            alphabet=alphabet,
            entries=array,
        )

    @classmethod
    def _without_column_check(cls, entries: np.ndarray, alphabet: int) -> "CodeMatrix":
        # Expanded matrices may legitimately carry all-zero columns.
        matrix = object.__new__(cls)
        frozen = np.array(entries, dtype=np.int64, copy=True)
        frozen.setflags(write=False)
        object.__setattr__(matrix, "num_classes", int(frozen.shape[0]))
        object.__setattr__(matrix, "code_length", int(frozen.shape[1]))
        object.__setattr__(matrix, "alphabet", alphabet)
        object.__setattr__(matrix, "entries", frozen)
        matrix._validate(check_columns=False)
        return matrix

    def _validate(self, check_columns: bool) -> None:
        if self.num_classes < 1 or self.code_length < 1:
            raise InvalidArgumentError("code matrix dimensions must be positive")
        if self.alphabet < 2:
            raise InvalidArgumentError(f"alphabet must be >= 2, got {self.alphabet}")
        if self.entries.shape != (self.num_classes, self.code_length):
            raise InvalidArgumentError(
                f"entries shape {self.entries.shape} does not match "
                f"{self.num_classes}x{self.code_length}"
            )
        if self.entries.min() < 0 or self.entries.max() >= self.alphabet:
            raise InvalidArgumentError(
                f"entries must lie in [0, {self.alphabet}), "
                f"found range [{self.entries.min()}, {self.entries.max()}]"
            )
        if len({row.tobytes() for row in self.entries}) != self.num_classes:
            raise InvalidArgumentError("code matrix rows must be pairwise distinct")
        if check_columns:
            constant = [
                n
                for n in range(self.code_length)
                if np.all(self.entries[:, n] == self.entries[0, n])
            ]
            if constant:
                raise InvalidArgumentError(
                    f"columns {constant} are constant and carry no meta-class task"
                )

    def row(self, index: int) -> np.ndarray:
        """Codeword of class ``index``."""
        return self.entries[index]

    def column(self, index: int) -> np.ndarray:
        """Meta-class assignment of column ``index``."""
        return self.entries[:, index]

    def column_partition(self, index: int) -> "ColumnPartition":
        """Partition of the classes induced by column ``index``."""
        return ColumnPartition.from_column(self.entries[:, index], self.alphabet)

    def signed(self) -> np.ndarray:
        """The +-1 form 2M - 1 used by the correlation decoder."""
        return 2.0 * self.entries.astype(np.float64) - 1.0

    def restrict_columns(self, columns: Iterable[int]) -> "CodeMatrix":
        """Sub-matrix on the given columns."""
        return CodeMatrix.from_rows(self.entries[:, list(columns)], self.alphabet)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CodeMatrix):
            return NotImplemented
        return (
            self.alphabet == other.alphabet
            and self.entries.shape == other.entries.shape
            and bool(np.array_equal(self.entries, other.entries))
        )

    def __hash__(self) -> int:
        return hash((self.alphabet, self.entries.shape, self.entries.tobytes()))

    def __repr__(self) -> str:
        return (
            f"CodeMatrix(M={self.num_classes}, N={self.code_length}, "
            f"q={self.alphabet}, rows={self.entries.tolist()})"
        )


@dataclass(frozen=True)
class ColumnPartition:
    """The meta-class clusters C^0..C^{q-1} of one code-matrix column."""

    cluster_sets: Tuple[FrozenSet[int], ...]
    num_classes: int

    def __post_init__(self) -> None:
        if self.num_classes < 1:
            raise InvalidArgumentError("a partition needs at least one class")
        seen: set = set()
        for cluster in self.cluster_sets:
            if seen & cluster:
                raise InvalidArgumentError("partition clusters must be disjoint")
            seen |= cluster
        if seen != set(range(self.num_classes)):
            raise InvalidArgumentError(
                f"partition clusters must cover classes 0..{self.num_classes - 1}"
            )

    @classmethod
    def from_column(cls, column: Sequence[int], alphabet: int) -> "ColumnPartition":
        values = [int(v) for v in column]
        clusters = tuple(
            frozenset(i for i, v in enumerate(values) if v == k) for k in range(alphabet)
        )
        return cls(cluster_sets=clusters, num_classes=len(values))

    def labels(self) -> np.ndarray:
        """Cluster index of every class."""
        out = np.empty(self.num_classes, dtype=np.int64)
        for k, cluster in enumerate(self.cluster_sets):
            for member in cluster:
                out[member] = k
        return out

    def sizes(self) -> np.ndarray:
        return np.array([len(c) for c in self.cluster_sets], dtype=np.int64)


def hamming_distance(a: Sequence[int], b: Sequence[int]) -> int:
    """Number of positions where two codewords differ."""
    left = np.asarray(a)
    right = np.asarray(b)
    if left.shape != right.shape:
        raise InvalidArgumentError(
            f"codeword lengths differ: {left.shape} vs {right.shape}"
        )
    return int(np.count_nonzero(left != right))


def pairwise_hamming(m: CodeMatrix) -> np.ndarray:
    """M x M matrix of row Hamming distances."""
    rows = m.entries
    return (rows[:, None, :] != rows[None, :, :]).sum(axis=2)


def min_hamming(m: CodeMatrix) -> int:
    """Minimum Hamming distance over unordered row pairs."""
    if m.num_classes < 2:
        raise InvalidArgumentError("minimum Hamming distance needs at least 2 rows")
    distances = pairwise_hamming(m)
    upper = distances[np.triu_indices(m.num_classes, k=1)]
    return int(upper.min())


def _entropy_of_counts(counts: np.ndarray, total: int) -> np.ndarray:
    return entr(counts / total).sum(axis=-1)


def column_vi_against(entries: np.ndarray, column: np.ndarray, alphabet: int) -> np.ndarray:
    """
    VI between ``column`` and every column of ``entries``.

    Returns a vector of length N. Pairs that are identical up to symbol
    relabelling are reported as exactly 0.
    """
    total = entries.shape[0]
    symbols = np.arange(alphabet)
    joint_codes = column[:, None] * alphabet + entries
    joint = (joint_codes[..., None] == np.arange(alphabet * alphabet)).sum(axis=0)
    own = (column[:, None] == symbols).sum(axis=0)
    other = (entries[..., None] == symbols).sum(axis=0)

    h_joint = _entropy_of_counts(joint, total)
    h_own = _entropy_of_counts(own, total)
    h_other = _entropy_of_counts(other, total)
    vi = np.maximum(2.0 * h_joint - h_own - h_other, 0.0)

    bijective = (np.count_nonzero(joint, axis=1) == np.count_nonzero(own)) & (
        np.count_nonzero(other, axis=1) == np.count_nonzero(own)
    )
    vi[bijective] = 0.0
    return vi


def vi_distance(a: ColumnPartition, b: ColumnPartition) -> float:
    """Variation of information between two partitions, in nats."""
    if a.num_classes != b.num_classes:
        raise InvalidArgumentError(
            f"partitions cover {a.num_classes} and {b.num_classes} classes"
        )
    alphabet = max(len(a.cluster_sets), len(b.cluster_sets))
    other = b.labels()[:, None]
    return float(column_vi_against(other, a.labels(), alphabet)[0])


def pairwise_vi(m: CodeMatrix) -> np.ndarray:
    """N x N matrix of column VI distances."""
    return np.stack(
        [column_vi_against(m.entries, m.entries[:, n], m.alphabet) for n in range(m.code_length)]
    )


def min_vi(m: CodeMatrix) -> float:
    """Minimum VI over unordered column pairs."""
    if m.code_length < 2:
        raise InvalidArgumentError("minimum VI distance needs at least 2 columns")
    distances = pairwise_vi(m)
    return float(distances[np.triu_indices(m.code_length, k=1)].min())


def mutual_information(c: ColumnPartition) -> float:
    """I(y, c) between the class label and a column, in nats."""
    sizes = c.sizes()
    if c.num_classes < 1 or sizes.sum() == 0:
        raise InvalidArgumentError("mutual information of an empty partition")
    shares = sizes[sizes > 0] / c.num_classes
    return float(np.sum(shares * np.log(1.0 / shares)))


def balanced_partition(num_classes: int, alphabet: int) -> ColumnPartition:
    """The most balanced split of ``num_classes`` into ``alphabet`` clusters."""
    if num_classes < 1 or alphabet < 2:
        raise InvalidArgumentError("need at least one class and alphabet >= 2")
    column = [i % alphabet for i in range(num_classes)]
    return ColumnPartition.from_column(column, alphabet)


def max_mutual_information(num_classes: int, alphabet: int) -> float:
    """Largest I(y, c) any q-ary column over ``num_classes`` classes can reach."""
    return mutual_information(balanced_partition(num_classes, alphabet))


def count_partitions(num_classes: int, alphabet: int) -> int:
    """Distinct non-constant column partitions (up to symbol relabelling)."""
    top = min(alphabet, num_classes)
    return int(sum(stirling2(num_classes, k, exact=True) for k in range(2, top + 1)))


def energy(m: CodeMatrix, eta: float) -> float:
    """
    Annealing energy: sum of H^-2 over row pairs plus eta times the sum of
    VI^-2 over column pairs. Any zero VI term makes the energy infinite;
    with eta == 0 the column sum is skipped.
    """
    hamming = pairwise_hamming(m)[np.triu_indices(m.num_classes, k=1)]
    row_term = float(np.sum(1.0 / hamming.astype(np.float64) ** 2))
    if eta == 0 or m.code_length < 2:
        return row_term
    vi = pairwise_vi(m)[np.triu_indices(m.code_length, k=1)]
    if np.any(vi == 0.0):
        return float("inf")
    return row_term + eta * float(np.sum(vi**-2.0))


def energy_terms(m: CodeMatrix) -> Tuple[float, float]:
    """The two energy sums (rows, columns) before eta weighting."""
    hamming = pairwise_hamming(m)[np.triu_indices(m.num_classes, k=1)]
    rows = float(np.sum(1.0 / hamming.astype(np.float64) ** 2))
    if m.code_length < 2:
        return rows, 0.0
    vi = pairwise_vi(m)[np.triu_indices(m.code_length, k=1)]
    if np.any(vi == 0.0):
        return rows, float("inf")
    return rows, float(np.sum(vi**-2.0))


def binary_expansion(m: CodeMatrix) -> CodeMatrix:
    """Replace every q-ary symbol with its one-hot block of length q."""
    one_hot = (m.entries[..., None] == np.arange(m.alphabet)).astype(np.int64)
    expanded = one_hot.reshape(m.num_classes, m.code_length * m.alphabet)
    return CodeMatrix._without_column_check(expanded, alphabet=2)


def mirror_columns(m: CodeMatrix) -> CodeMatrix:
    """
    Append the complement of every column: [M, 1 - M].

    Doubles the Hamming distance while driving the minimum VI to 0.
    """
    if m.alphabet != 2:
        raise InvalidArgumentError("column mirroring is defined for binary matrices")
    return CodeMatrix.from_rows(np.hstack([m.entries, 1 - m.entries]), alphabet=2)


def to_dict(m: CodeMatrix) -> dict:
    return {
        "num_classes": m.num_classes,
        "code_length": m.code_length,
        "alphabet": m.alphabet,
        "entries": m.entries.tolist(),
    }


def from_dict(payload: object, source: str = "") -> CodeMatrix:
    """Validate a decoded matrix object and build the CodeMatrix."""
    if not isinstance(payload, dict):
        raise ParseError("code matrix must be an object", source=source)
    missing = [key for key in _FIELDS if key not in payload]
    if missing:
        raise ParseError(f"missing fields {missing}", source=source)
    extra = sorted(set(payload) - set(_FIELDS))
    if extra:
        raise ParseError(f"unexpected fields {extra}", source=source)

    def _int(name: str) -> int:
        value = payload[name]
        if isinstance(value, bool) or not isinstance(value, int):
            raise ParseError(f"'{name}' must be an integer", source=source)
        return value

    num_classes = _int("num_classes")
    code_length = _int("code_length")
    alphabet = _int("alphabet")
    rows = payload["entries"]
    if not isinstance(rows, list) or len(rows) != num_classes:
        raise ParseError(f"'entries' must list {num_classes} rows", source=source)
    for index, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != code_length:
            raise ParseError(
                f"entries row {index} must have {code_length} symbols", source=source
            )
        for value in row:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ParseError(f"entries row {index} holds a non-integer", source=source)
            if not 0 <= value < alphabet:
                raise ParseError(
                    f"entries row {index} holds {value}, outside [0, {alphabet})",
                    source=source,
                )
    try:
        return CodeMatrix(num_classes, code_length, alphabet, np.array(rows, dtype=np.int64))
    except InvalidArgumentError as exc:
        raise ParseError(str(exc), source=source) from exc


def serialize(m: CodeMatrix) -> str:
    """Structured-text form of a code matrix."""
    return json.dumps(to_dict(m))


def parse(text: str, source: str = "") -> CodeMatrix:
    """Inverse of :func:`serialize`; rejects malformed or trailing text."""
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed code matrix text: {exc}", source=source) from exc
    return from_dict(payload, source=source)


def save_matrix(m: CodeMatrix, path: Path) -> None:
    Path(path).write_text(serialize(m) + "\n")


def load_matrix(path: Path) -> CodeMatrix:
    path = Path(path)
    return parse(path.read_text(), source=str(path))
