"""Duplicate-sample detection and label-consistency forensics.

Duplication is defined by Pearson correlation at a tight threshold
(default 0.9999) rather than bitwise equality, because different sources
round the same underlying numbers differently. Components of the
correlation graph, not pairs, are the reporting unit; transitive closure
can merge near-duplicates, which is acceptable for forensics and
documented here.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from . import _kernels
from .core import ContingencyTable, Direction, GroupLabel, LabeledMatrix, LabelRoster


@dataclass(frozen=True)
class DupScanConfig:
    corr_threshold: float = 0.9999
    compare_on: str = "raw"  # raw | log
    missing_policy: str = "pairwise_complete"  # pairwise_complete | fail

    def __post_init__(self) -> None:
        if not (0.0 < self.corr_threshold <= 1.0):
            raise ValueError(f"corr_threshold must be in (0, 1], got {self.corr_threshold}")
        if self.compare_on not in ("raw", "log"):
            raise ValueError(f"compare_on must be raw|log, got {self.compare_on!r}")
        if self.missing_policy not in ("pairwise_complete", "fail"):
            raise ValueError(f"missing_policy must be pairwise_complete|fail, got {self.missing_policy!r}")


@dataclass(frozen=True)
class DupComponents:
    """Connected components (size >= 2) of the duplicate graph.

    ``multiplicity_histogram`` counts distinct samples at each observed
    multiplicity, singletons included at multiplicity 1, so the identity
    n_distinct = n_samples - sum(size - 1 over components) always holds.
    Degenerate (zero-variance or unsupported) columns never join the graph
    and are listed separately.
    """

    components: tuple[tuple[str, ...], ...]
    multiplicity_histogram: dict[int, int]
    n_distinct: int
    n_samples: int
    degenerate_columns: tuple[str, ...] = ()


def _connected_components(n: int, adjacency: np.ndarray) -> list[list[int]]:
    seen = [False] * n
    comps: list[list[int]] = []
    for start in range(n):
        if seen[start]:
            continue
        stack = [start]
        seen[start] = True
        members = []
        while stack:
            v = stack.pop()
            members.append(v)
            for w in np.nonzero(adjacency[v])[0]:
                if not seen[w]:
                    seen[w] = True
                    stack.append(int(w))
        comps.append(sorted(members))
    return comps


def _correlation_matrix(values: np.ndarray, cfg: DupScanConfig) -> np.ndarray:
    vals = np.asarray(values, dtype=np.float64)
    has_missing = bool(np.isnan(vals).any())
    if has_missing and cfg.missing_policy == "fail":
        raise ValueError("matrix contains missing values and missing_policy is 'fail'")
    if cfg.compare_on == "log":
        bad = (vals <= 0) & np.isfinite(vals)
        if bad.any():
            i, j = map(int, np.argwhere(bad)[0])
            raise ValueError(
                f"compare_on='log' requires positive values; value {vals[i, j]!r} at row {i}, column {j}"
            )
        vals = np.log(vals)
    if has_missing:
        return _kernels.pairwise_complete_column_correlations(vals)
    return _kernels.column_correlations(vals)


def find_duplicate_columns(m: LabeledMatrix, cfg: DupScanConfig = DupScanConfig()) -> DupComponents:
    """Group samples into duplicate components by pairwise correlation.

    Components are reported in order of their smallest column index, with
    members in column order, so output is deterministic under any
    evaluation schedule.
    """
    if m.n_samples < 2:
        raise ValueError("duplicate scan needs at least 2 samples")
    if m.n_features < 3:
        raise ValueError("duplicate scan needs at least 3 features")
    corr = _correlation_matrix(m.values, cfg)
    n = m.n_samples
    # a NaN diagonal is the degeneracy marker in both kernel paths
    degenerate_idx = [i for i in range(n) if np.isnan(corr[i, i])]
    degenerate = [m.sample_ids[i] for i in degenerate_idx]
    with np.errstate(invalid="ignore"):
        adj = corr >= cfg.corr_threshold
    # bitwise-identical columns are duplicates at every threshold <= 1,
    # even where the float correlation lands one ulp under 1.0
    byte_groups: dict[bytes, list[int]] = {}
    for j in range(n):
        byte_groups.setdefault(np.ascontiguousarray(m.values[:, j]).tobytes(), []).append(j)
    for group in byte_groups.values():
        for a in group:
            for b in group:
                adj[a, b] = True
    np.fill_diagonal(adj, False)
    for i in degenerate_idx:
        adj[i, :] = False
        adj[:, i] = False
    comps = [c for c in _connected_components(n, adj) if len(c) >= 2]
    comps.sort(key=lambda c: c[0])
    histogram: dict[int, int] = {}
    in_component = set()
    for c in comps:
        histogram[len(c)] = histogram.get(len(c), 0) + 1
        in_component.update(c)
    singletons = n - len(in_component)
    if singletons:
        histogram[1] = singletons
    n_distinct = n - sum(len(c) - 1 for c in comps)
    return DupComponents(
        components=tuple(tuple(m.sample_ids[i] for i in c) for c in comps),
        multiplicity_histogram=histogram,
        n_distinct=n_distinct,
        n_samples=n,
        degenerate_columns=tuple(degenerate),
    )


def classify_duplicate_labels(
    comps: DupComponents, labels: Mapping[str, GroupLabel]
) -> tuple[list[tuple[str, ...]], list[tuple[tuple[str, ...], dict[GroupLabel, int]]]]:
    """Split components into consistently and inconsistently labeled.

    A component is inconsistent iff it carries >= 2 distinct non-Unknown
    labels; Unknown never conflicts with anything.
    """
    consistent: list[tuple[str, ...]] = []
    inconsistent: list[tuple[tuple[str, ...], dict[GroupLabel, int]]] = []
    for comp in comps.components:
        multiset: dict[GroupLabel, int] = {}
        for sid in comp:
            lab = labels.get(sid, GroupLabel.UNKNOWN)
            multiset[lab] = multiset.get(lab, 0) + 1
        informative = {lab for lab in multiset if lab != GroupLabel.UNKNOWN}
        if len(informative) >= 2:
            inconsistent.append((comp, multiset))
        else:
            consistent.append(comp)
    return consistent, inconsistent


def roster_duplicates(r: LabelRoster) -> tuple[int, list[str], list[str]]:
    """Census of a roster: (distinct ids, duplicated ids, ids labeled
    inconsistently among their duplicates). Order follows first appearance."""
    order: list[str] = []
    label_sets: dict[str, set[GroupLabel]] = {}
    counts: dict[str, int] = {}
    for e in r.entries:
        if e.sample_id not in counts:
            order.append(e.sample_id)
            counts[e.sample_id] = 0
            label_sets[e.sample_id] = set()
        counts[e.sample_id] += 1
        label_sets[e.sample_id].add(e.label)
    duplicated = [sid for sid in order if counts[sid] >= 2]
    inconsistent = [
        sid
        for sid in duplicated
        if len({lab for lab in label_sets[sid] if lab != GroupLabel.UNKNOWN}) >= 2
    ]
    return len(order), duplicated, inconsistent


#: Extended label used on the claimed axis of a cross-tabulation for
#: samples whose duplicate roster entries disagree.
BOTH = "Both"

_CROSS_ORDER = {
    GroupLabel.SENSITIVE.value: 0,
    GroupLabel.INTERMEDIATE.value: 1,
    GroupLabel.RESISTANT.value: 2,
    BOTH: 3,
    GroupLabel.UNUSED.value: 4,
    GroupLabel.UNKNOWN.value: 5,
}


def roster_labeling(r: LabelRoster) -> dict[str, str]:
    """Collapse a roster to one label per id, using Both for conflicts."""
    out: dict[str, str] = {}
    sets: dict[str, set[GroupLabel]] = {}
    for e in r.entries:
        sets.setdefault(e.sample_id, set()).add(e.label)
    for sid, labs in sets.items():
        informative = {lab for lab in labs if lab != GroupLabel.UNKNOWN}
        if len(informative) >= 2:
            out[sid] = BOTH
        elif informative:
            out[sid] = next(iter(informative)).value
        else:
            out[sid] = GroupLabel.UNKNOWN.value
    return out


def _canon_label(lab) -> str:
    if isinstance(lab, GroupLabel):
        return lab.value
    return str(lab)


def cross_tabulate(a: Mapping[str, object], b: Mapping[str, object]) -> ContingencyTable:
    """Joint classification counts for two labelings of one sample universe.

    ``a`` may use the extended Both label for internally conflicting
    entries. Samples present on only one axis are an error only when the
    shared universe is empty; otherwise the table covers the intersection.
    """
    shared = [sid for sid in a if sid in b]
    if not shared:
        raise ValueError("the two labelings share no samples")
    rows = sorted({_canon_label(a[s]) for s in shared}, key=lambda x: _CROSS_ORDER.get(x, 99))
    cols = sorted({_canon_label(b[s]) for s in shared}, key=lambda x: _CROSS_ORDER.get(x, 99))
    ri = {lab: i for i, lab in enumerate(rows)}
    ci = {lab: i for i, lab in enumerate(cols)}
    counts = [[0] * len(cols) for _ in rows]
    for sid in shared:
        counts[ri[_canon_label(a[sid])]][ci[_canon_label(b[sid])]] += 1
    return ContingencyTable(tuple(rows), tuple(cols), tuple(tuple(r) for r in counts))


def fingerprint_matrix(m: LabeledMatrix, digits: int = 2) -> str:
    """Digest of a matrix's shape and values rounded to ``digits``.

    Ids and labels are deliberately excluded: the reuse this detects is a
    figure or table carrying the same numbers under different names.
    """
    vals = np.round(np.asarray(m.values, dtype=np.float64), digits) + 0.0
    vals = np.where(np.isnan(vals), np.nan, vals)  # canonicalize NaN payloads
    h = hashlib.sha256()
    h.update(struct.pack("<qqq", vals.shape[0], vals.shape[1], digits))
    h.update(np.ascontiguousarray(vals).tobytes())
    return h.hexdigest()


def matrices_identical(m1: LabeledMatrix, m2: LabeledMatrix, digits: int = 2) -> bool:
    if m1.values.shape != m2.values.shape:
        return False
    return fingerprint_matrix(m1, digits) == fingerprint_matrix(m2, digits)


@dataclass(frozen=True)
class FlipReport:
    """Per (drug, entity) label sequences across sources, and which drugs
    show at least one Sensitive/Resistant reversal."""

    sequences: dict[tuple[str, str], list[tuple[str, GroupLabel]]]
    flipped_drugs: dict[str, list[str]]  # drug -> entities carrying both labels
    drugs_checked: dict[str, int]  # drug -> number of sources covering it


def compare_labelings(
    sources: Sequence[tuple[str, str, Mapping[str, GroupLabel]]]
) -> FlipReport:
    """Compare sensitive/resistant labelings of the same entities across
    sources. A drug is flagged when any entity is labeled Sensitive by one
    source and Resistant by another."""
    if not sources:
        raise ValueError("at least one labeling source is required")
    sequences: dict[tuple[str, str], list[tuple[str, GroupLabel]]] = {}
    drug_sources: dict[str, set[str]] = {}
    for source_id, drug_id, labeling in sources:
        drug_sources.setdefault(drug_id, set()).add(source_id)
        for entity, lab in labeling.items():
            sequences.setdefault((drug_id, entity), []).append((source_id, lab))
    flipped: dict[str, list[str]] = {}
    for (drug_id, entity), seq in sorted(sequences.items()):
        labs = {lab for _, lab in seq}
        if GroupLabel.SENSITIVE in labs and GroupLabel.RESISTANT in labs:
            flipped.setdefault(drug_id, []).append(entity)
    return FlipReport(
        sequences=sequences,
        flipped_drugs=flipped,
        drugs_checked={d: len(s) for d, s in drug_sources.items()},
    )


def check_signature_directions(sig) -> list[str]:
    """Feature ids a signature lists as up in both groups (its direction
    entries conflict). Signatures without direction data lint clean."""
    conflicted = []
    for fid in dict.fromkeys(sig.feature_ids):
        dirs = {d for f, d in sig.direction_entries if f == fid}
        if Direction.UP_IN_RESISTANT in dirs and Direction.UP_IN_SENSITIVE in dirs:
            conflicted.append(fid)
    return conflicted
