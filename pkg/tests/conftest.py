import numpy as np
import pytest

from arrayaudit.core import GroupLabel, LabeledMatrix


@pytest.fixture
def small_matrix() -> LabeledMatrix:
    values = np.array(
        [
            [1.0, 2.0, 3.0],
            [4.0, 6.0, 5.0],
            [0.5, 0.25, 0.75],
        ]
    )
    return LabeledMatrix(
        ("A", "B", "C"),
        ("S1", "S2", "S3"),
        values,
        {"S1": GroupLabel.RESISTANT, "S2": GroupLabel.SENSITIVE},
    )
