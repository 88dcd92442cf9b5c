"""
Shared constants and oracle values for the ecnn tests.
"""

import math

# The 3 x 4 example code matrix: classes 0..2, columns c0..c3.
EXAMPLE_ROWS = [
    [1, 0, 1, 0],
    [1, 1, 0, 1],
    [0, 0, 0, 1],
]

# Row pairs (0,1), (0,2), (1,2).
EXAMPLE_PAIRWISE_HAMMING = {(0, 1): 3, (0, 2): 3, (1, 2): 2}
EXAMPLE_MIN_HAMMING = 2

# VI(c0, c1) = 2 log 3 - 2 H(1/3, 2/3).
VI_C0_C1 = 2.0 * math.log(3.0) - 2.0 * (
    -(2.0 / 3.0) * math.log(2.0 / 3.0) - (1.0 / 3.0) * math.log(1.0 / 3.0)
)

# Row-only energies: distances {3, 3, 2} for the full matrix and {2, 2, 2}
# once only columns 0..2 are kept.
EXAMPLE_ROW_ENERGY = 1.0 / 9.0 + 1.0 / 9.0 + 1.0 / 4.0
EXAMPLE_FIRST_THREE_COLUMNS_ENERGY = 3.0 / 4.0

# Saturated logits tanh(z) ~ (1, 1, -1, 1) score the classes (-2, 4, 0).
SATURATED_LOGITS = [30.0, 30.0, -30.0, 30.0]
SATURATED_SCORES = [-2.0, 4.0, 0.0]

IDENTITY_ROWS = [
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
]

# All three binary partitions of three classes, one per column.
DISTINCT_PARTITION_ROWS = [
    [0, 0, 1],
    [0, 1, 0],
    [1, 0, 0],
]

LEMMA4_GAMMAS = [0.05, 0.1, 0.2]
LEMMA5_CLASSES = [6, 10, 12]
LEMMA5_ALPHABETS = [2, 3, 4]

# Small, quick configurations shared by trainer and CLI tests.
TINY_TRAINING = {
    "epochs": 3,
    "batch_size": 16,
    "learning_rate": 0.05,
    "momentum": 0.9,
}

SMALL_SCHEDULE = {
    "initial_temperature": 1.0,
    "cooling_factor": 0.9,
    "steps_per_temperature": 50,
    "num_temperatures": 20,
}
