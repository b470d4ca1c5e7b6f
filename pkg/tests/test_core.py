import numpy as np
import pytest

from arrayaudit.core import (
    GroupLabel,
    LabeledMatrix,
    PlatformMismatchError,
    SignatureList,
    extract_submatrix,
    label_census,
    validate,
)


def test_validate_well_formed(small_matrix):
    assert validate(small_matrix) == []


def test_validate_duplicate_sample_id():
    m = LabeledMatrix(("A", "B", "C"), ("S1", "S1", "S2"), np.zeros((3, 3)))
    violations = validate(m)
    assert len(violations) == 1
    assert violations[0].field == "sample_ids"
    assert violations[0].subject == "S1"


def test_validate_duplicate_feature_id():
    m = LabeledMatrix(("A", "A", "C"), ("S1", "S2", "S3"), np.zeros((3, 3)))
    assert [v.subject for v in validate(m)] == ["A"]


def test_validate_label_for_unknown_sample():
    m = LabeledMatrix(
        ("A", "B", "C"), ("S1", "S2", "S3"), np.zeros((3, 3)), {"S9": GroupLabel.SENSITIVE}
    )
    violations = validate(m)
    assert len(violations) == 1
    assert violations[0].field == "labels"
    assert violations[0].subject == "S9"


def test_validate_is_pure(small_matrix):
    assert validate(small_matrix) == validate(small_matrix)


def test_values_are_read_only(small_matrix):
    with pytest.raises(ValueError):
        small_matrix.values[0, 0] = 99.0


def test_extract_submatrix_preserves_signature_order(small_matrix):
    sub, absent = extract_submatrix(small_matrix, SignatureList(("B", "C")))
    assert sub.feature_ids == ("B", "C")
    assert absent == []
    np.testing.assert_array_equal(sub.values[0], small_matrix.values[1])


def test_extract_submatrix_reports_absent_ids():
    rng = np.random.default_rng(3)
    fids = tuple(f"g{i}" for i in range(43))
    m = LabeledMatrix(fids, ("a", "b", "c"), rng.standard_normal((43, 3)))
    sig = SignatureList(fids + ("u133b_1", "u133b_2"))
    sub, absent = extract_submatrix(m, sig)
    assert sub.n_features == 43
    assert absent == ["u133b_1", "u133b_2"]


def test_extract_submatrix_disjoint_raises(small_matrix):
    with pytest.raises(PlatformMismatchError):
        extract_submatrix(small_matrix, SignatureList(("X", "Y")))


def test_extract_submatrix_sample_filter(small_matrix):
    sub, _ = extract_submatrix(
        small_matrix, SignatureList(("A",)), sample_filter={GroupLabel.SENSITIVE}
    )
    assert sub.sample_ids == ("S2",)


def test_unlabeled_sample_counts_as_unknown(small_matrix):
    assert small_matrix.label_of("S3") == GroupLabel.UNKNOWN
    census = label_census(small_matrix)
    assert census[GroupLabel.UNKNOWN] == 1
    assert census[GroupLabel.RESISTANT] == 1


def test_signature_direction_requires_known_ids():
    from arrayaudit.core import Direction

    with pytest.raises(ValueError):
        SignatureList(("A",), (("B", Direction.UP_IN_SENSITIVE),))
