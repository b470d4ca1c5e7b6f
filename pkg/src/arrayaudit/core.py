"""Shared domain model: labeled matrices, rosters, signatures, findings.

All container types are immutable after construction and safe to share
across threads. No statistics and no I/O live here; detectors state their
own missing-value policy and this module never imputes.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from datetime import datetime
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


class GroupLabel(enum.Enum):
    SENSITIVE = "Sensitive"
    RESISTANT = "Resistant"
    INTERMEDIATE = "Intermediate"
    UNUSED = "Unused"
    UNKNOWN = "Unknown"

    def __str__(self) -> str:
        return self.value


#: Canonical ordering used wherever labels are sorted for output.
LABEL_ORDER = {lab: i for i, lab in enumerate(GroupLabel)}


class Direction(enum.Enum):
    UP_IN_RESISTANT = "UpInResistant"
    UP_IN_SENSITIVE = "UpInSensitive"

    def __str__(self) -> str:
        return self.value


class Measure(enum.Enum):
    GI50 = "GI50"
    TGI = "TGI"
    LC50 = "LC50"

    def __str__(self) -> str:
        return self.value


class Severity(enum.Enum):
    INFO = "Info"
    WARNING = "Warning"
    CRITICAL = "Critical"

    def __str__(self) -> str:
        return self.value


SEVERITY_ORDER = {Severity.INFO: 0, Severity.WARNING: 1, Severity.CRITICAL: 2}


class PlatformMismatchError(ValueError):
    """Signature and matrix/annotation share no feature ids."""


@dataclass(frozen=True, eq=False)
class LabeledMatrix:
    """Numeric feature x sample matrix with ids and optional group labels.

    ``values`` is coerced to a read-only float64 array of shape
    (n_features, n_samples). Missing entries are NaN. The constructor is
    deliberately permissive (duplicate ids, dangling labels are allowed so
    that defective files can be represented); ``validate`` reports such
    states as violations.
    """

    feature_ids: tuple[str, ...]
    sample_ids: tuple[str, ...]
    values: np.ndarray
    labels: Optional[Mapping[str, GroupLabel]] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_ids", tuple(self.feature_ids))
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.ndim != 2:
            raise ValueError(f"values must be 2-D, got ndim={vals.ndim}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.labels is not None:
            object.__setattr__(self, "labels", dict(self.labels))

    @property
    def n_features(self) -> int:
        return len(self.feature_ids)

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    def label_of(self, sample_id: str) -> GroupLabel:
        """Label for a sample; samples without an entry count as Unknown."""
        if self.labels is None:
            return GroupLabel.UNKNOWN
        return self.labels.get(sample_id, GroupLabel.UNKNOWN)

    def feature_index(self) -> dict[str, int]:
        return {fid: i for i, fid in enumerate(self.feature_ids)}

    def sample_index(self) -> dict[str, int]:
        return {sid: i for i, sid in enumerate(self.sample_ids)}

    def take_samples(self, indices: Sequence[int]) -> "LabeledMatrix":
        sids = tuple(self.sample_ids[i] for i in indices)
        labels = None
        if self.labels is not None:
            labels = {s: self.labels[s] for s in sids if s in self.labels}
        return LabeledMatrix(self.feature_ids, sids, self.values[:, list(indices)], labels)

    def with_labels(self, labels: Mapping[str, GroupLabel]) -> "LabeledMatrix":
        return LabeledMatrix(self.feature_ids, self.sample_ids, self.values, labels)


@dataclass(frozen=True)
class RosterEntry:
    sample_id: str
    label: GroupLabel
    source_id: str = ""
    note: Optional[str] = None


@dataclass(frozen=True)
class LabelRoster:
    """Ordered label claims; the same sample id may appear repeatedly.

    Repetition is the point: rosters record what each source asserted,
    conflicts included.
    """

    entries: tuple[RosterEntry, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        if not self.entries:
            raise ValueError("roster must contain at least one entry")

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.sample_id for e in self.entries]


@dataclass(frozen=True)
class SignatureList:
    """An ordered reported gene list, optionally with per-gene direction.

    Direction entries are kept as (feature_id, direction) pairs because a
    defective list can assign the same gene both directions; that is a
    lintable state, not a construction error.
    """

    feature_ids: tuple[str, ...]
    direction_entries: tuple[tuple[str, Direction], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_ids", tuple(self.feature_ids))
        object.__setattr__(self, "direction_entries", tuple(self.direction_entries))
        if not self.feature_ids:
            raise ValueError("signature must list at least one feature id")
        known = set(self.feature_ids)
        for fid, _ in self.direction_entries:
            if fid not in known:
                raise ValueError(f"direction assigned to unknown feature id {fid!r}")

    def __len__(self) -> int:
        return len(self.feature_ids)

    def direction_map(self) -> dict[str, set[Direction]]:
        out: dict[str, set[Direction]] = {}
        for fid, d in self.direction_entries:
            out.setdefault(fid, set()).add(d)
        return out


@dataclass(frozen=True)
class AnnotationIndex:
    """Ordered feature-id universe of a platform; row position is semantic."""

    platform_id: str
    feature_ids: tuple[str, ...]
    index: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "feature_ids", tuple(self.feature_ids))
        if len(set(self.feature_ids)) != len(self.feature_ids):
            raise ValueError("annotation feature ids must be unique")
        object.__setattr__(self, "index", {fid: i for i, fid in enumerate(self.feature_ids)})

    def __len__(self) -> int:
        return len(self.feature_ids)

    def __contains__(self, fid: str) -> bool:
        return fid in self.index


@dataclass(frozen=True)
class SensitivityRecord:
    """Potency of one drug against one cell line, on the -log10(molar)
    scale (higher value = more potent = more sensitive line)."""

    cell_line: str
    drug_id: str
    measure: Measure
    value: float

    def __post_init__(self) -> None:
        if not np.isfinite(self.value):
            raise ValueError(f"potency for {self.cell_line}/{self.drug_id} is not finite")


@dataclass(frozen=True)
class SampleMeta:
    sample_id: str
    run_timestamp: datetime
    scanner_id: str
    treatment_arm: str
    included: bool

    def __post_init__(self) -> None:
        if not self.sample_id:
            raise ValueError("sample_id must be nonempty")


@dataclass(frozen=True)
class Violation:
    field: str
    subject: str
    message: str


@dataclass(frozen=True)
class Finding:
    code: str
    severity: Severity
    subjects: tuple[str, ...]
    metrics: Mapping[str, float | int]
    message: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "subjects", tuple(self.subjects))
        object.__setattr__(self, "metrics", dict(self.metrics))


@dataclass(frozen=True)
class FindingsReport:
    findings: tuple[Finding, ...]
    tool_version: str
    input_digests: Mapping[str, str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "findings", tuple(self.findings))
        object.__setattr__(self, "input_digests", dict(self.input_digests))

    def max_severity(self) -> Optional[Severity]:
        if not self.findings:
            return None
        return max((f.severity for f in self.findings), key=SEVERITY_ORDER.get)


@dataclass(frozen=True)
class ContingencyTable:
    """Counts over (row label, column label) pairs with margins."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]

    @property
    def row_totals(self) -> tuple[int, ...]:
        return tuple(sum(row) for row in self.counts)

    @property
    def col_totals(self) -> tuple[int, ...]:
        return tuple(sum(row[j] for row in self.counts) for j in range(len(self.col_labels)))

    @property
    def total(self) -> int:
        return sum(self.row_totals)

    def as_text(self) -> str:
        width = max([8] + [len(lbl) for lbl in self.row_labels + self.col_labels]) + 2
        head = " " * width + "".join(f"{c:>{width}}" for c in self.col_labels) + f"{'total':>{width}}"
        lines = [head]
        for lbl, row, tot in zip(self.row_labels, self.counts, self.row_totals):
            lines.append(f"{lbl:>{width}}" + "".join(f"{v:>{width}}" for v in row) + f"{tot:>{width}}")
        lines.append(f"{'total':>{width}}" + "".join(f"{v:>{width}}" for v in self.col_totals) + f"{self.total:>{width}}")
        return "\n".join(lines)


def validate(m: LabeledMatrix) -> list[Violation]:
    """Report every invariant violation in a matrix.

    Violations are data, not errors: a forensic audit has to be able to
    describe a broken input without refusing to hold it.
    """
    out: list[Violation] = []
    seen: dict[str, int] = {}
    for fid in m.feature_ids:
        seen[fid] = seen.get(fid, 0) + 1
    for fid, n in seen.items():
        if n > 1:
            out.append(Violation("feature_ids", fid, f"feature id {fid!r} appears {n} times"))
    seen = {}
    for sid in m.sample_ids:
        seen[sid] = seen.get(sid, 0) + 1
    for sid, n in seen.items():
        if n > 1:
            out.append(Violation("sample_ids", sid, f"sample id {sid!r} appears {n} times"))
    if m.values.shape != (m.n_features, m.n_samples):
        out.append(
            Violation(
                "values",
                f"{m.values.shape[0]}x{m.values.shape[1]}",
                f"values shape {m.values.shape} does not match "
                f"{m.n_features} features x {m.n_samples} samples",
            )
        )
    if m.labels:
        known = set(m.sample_ids)
        for sid in m.labels:
            if sid not in known:
                out.append(Violation("labels", sid, f"label refers to unknown sample {sid!r}"))
    return out


def extract_submatrix(
    m: LabeledMatrix,
    sig: SignatureList,
    sample_filter: Optional[Iterable[GroupLabel]] = None,
) -> tuple[LabeledMatrix, list[str]]:
    """Restrict a matrix to the signature's features, in signature order.

    Returns the submatrix together with the signature ids absent from the
    matrix. An empty intersection raises PlatformMismatchError: the
    signature was almost certainly reported for a different platform.
    ``sample_filter`` optionally keeps only samples whose label is in the
    given set (samples without a label count as Unknown).
    """
    findex = m.feature_index()
    rows: list[int] = []
    kept_ids: list[str] = []
    absent: list[str] = []
    seen: set[str] = set()
    for fid in sig.feature_ids:
        if fid in seen:
            continue
        seen.add(fid)
        if fid in findex:
            rows.append(findex[fid])
            kept_ids.append(fid)
        else:
            absent.append(fid)
    if not rows:
        raise PlatformMismatchError(
            f"none of the {len(sig)} signature ids occur in the matrix; "
            "probable platform mismatch"
        )
    cols = range(m.n_samples)
    if sample_filter is not None:
        wanted = set(sample_filter)
        cols = [j for j, sid in enumerate(m.sample_ids) if m.label_of(sid) in wanted]
    sids = tuple(m.sample_ids[j] for j in cols)
    labels = None
    if m.labels is not None:
        labels = {s: m.labels[s] for s in sids if s in m.labels}
    sub = LabeledMatrix(tuple(kept_ids), sids, m.values[np.ix_(rows, list(cols))], labels)
    return sub, absent


def label_census(m: LabeledMatrix) -> dict[GroupLabel, int]:
    """Count samples per group label (unlabeled samples count as Unknown)."""
    out: dict[GroupLabel, int] = {}
    for sid in m.sample_ids:
        lab = m.label_of(sid)
        out[lab] = out.get(lab, 0) + 1
    return out
