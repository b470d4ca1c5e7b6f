"""Identify unlabeled rows/columns by brute-force correlation against a
reference panel, and detect index offsets between reported gene lists and
platform row order.

The row/column matcher is deliberately exhaustive: at the scales these
audits run at (thousands of features by tens of samples) an O(Q x R x C)
scan finishes in seconds, and nothing beats it for explainability. The
scan itself is a kernel in ``_kernels`` with numba and numpy backends.

Offsets are applied in annotation row space, not list position: a shift
of +1 replaces each reported id with the id on the next platform row.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

from . import _kernels
from .core import AnnotationIndex, GroupLabel, LabeledMatrix, SignatureList


@dataclass(frozen=True)
class MatchResult:
    """Outcome of matching query rows (or columns) against a reference.

    ``mapping`` sends each query id to its unique hit, or None when there
    is no hit or more than one; multi-hit queries are listed in
    ``ambiguous`` with all their hits. Degenerate (zero-variance or
    NaN-containing) rows can never match and are listed separately.
    """

    mapping: dict[str, Optional[str]]
    ambiguous: dict[str, tuple[str, ...]]
    degenerate: tuple[str, ...]
    n_matched: int
    n_unmatched: int
    n_ambiguous: int


def _match(
    query_ids: tuple[str, ...],
    query_values: np.ndarray,
    ref_ids: tuple[str, ...],
    ref_values: np.ndarray,
    min_corr: float,
) -> MatchResult:
    if query_values.shape[1] != ref_values.shape[1]:
        raise ValueError(
            f"query has {query_values.shape[1]} columns but reference has {ref_values.shape[1]}"
        )
    if query_values.shape[1] < 3:
        raise ValueError("matching needs at least 3 shared positions")
    qbad = ~np.isfinite(query_values).all(axis=1)
    rbad = ~np.isfinite(ref_values).all(axis=1)
    corr = _kernels.cross_row_correlations(
        np.where(qbad[:, None], 0.0, query_values),
        np.where(rbad[:, None], 0.0, ref_values),
    )
    corr[qbad, :] = np.nan
    corr[:, rbad] = np.nan

    mapping: dict[str, Optional[str]] = {}
    ambiguous: dict[str, tuple[str, ...]] = {}
    degenerate: list[str] = []
    n_matched = n_unmatched = n_ambiguous = 0
    with np.errstate(invalid="ignore"):
        hit_mask = corr >= min_corr
    for qi, qid in enumerate(query_ids):
        if np.isnan(corr[qi]).all():
            degenerate.append(qid)
            mapping[qid] = None
            n_unmatched += 1
            continue
        hits = np.nonzero(hit_mask[qi])[0]
        if hits.size == 1:
            mapping[qid] = ref_ids[int(hits[0])]
            n_matched += 1
        elif hits.size == 0:
            mapping[qid] = None
            n_unmatched += 1
        else:
            mapping[qid] = None
            ambiguous[qid] = tuple(ref_ids[int(h)] for h in hits)
            n_ambiguous += 1
    return MatchResult(
        mapping=mapping,
        ambiguous=ambiguous,
        degenerate=tuple(degenerate),
        n_matched=n_matched,
        n_unmatched=n_unmatched,
        n_ambiguous=n_ambiguous,
    )


def match_rows(query: LabeledMatrix, reference: LabeledMatrix, min_corr: float = 0.9999) -> MatchResult:
    """Identify query features by correlating each query row against every
    reference row (columns must correspond by position)."""
    return _match(query.feature_ids, query.values, reference.feature_ids, reference.values, min_corr)


def match_columns(query: LabeledMatrix, reference: LabeledMatrix, min_corr: float = 0.9999) -> MatchResult:
    """Identify query samples (e.g. unnamed cell lines) against a reference
    panel; rows must correspond by position."""
    return _match(query.sample_ids, query.values.T, reference.sample_ids, reference.values.T, min_corr)


@dataclass(frozen=True)
class OffsetResult:
    best_shift: int
    overlap_at_best: int
    outliers: tuple[str, ...]
    overlap_by_shift: dict[int, int]
    foreign_ids: tuple[str, ...]  # reported ids absent from the annotation


def detect_offset(
    reported: SignatureList,
    ann: AnnotationIndex,
    generated: SignatureList,
    max_shift: int = 3,
) -> OffsetResult:
    """Find the annotation-row shift that best aligns a reported gene list
    with an independently generated one.

    For each shift s, every reported id sitting on annotation row i is
    replaced by the id on row i+s (ids not on the platform can never shift
    and count as outliers everywhere; shifts off the end contribute
    nothing). Ties prefer smaller |s|, then negative over positive.
    """
    if len(reported) == 0 or len(generated) == 0:
        raise ValueError("offset detection needs nonempty signatures")
    gen = set(generated.feature_ids)
    rep = list(dict.fromkeys(reported.feature_ids))
    foreign = tuple(fid for fid in rep if fid not in ann)
    shifts = sorted(range(-max_shift, max_shift + 1), key=lambda s: (abs(s), s > 0))
    overlap_by_shift: dict[int, int] = {}
    best_shift = 0
    best_overlap = -1
    best_matched: set[str] = set()
    for s in shifts:
        matched = set()
        for fid in rep:
            row = ann.index.get(fid)
            if row is None:
                continue
            target = row + s
            if 0 <= target < len(ann.feature_ids) and ann.feature_ids[target] in gen:
                matched.add(fid)
        overlap_by_shift[s] = len(matched)
        if len(matched) > best_overlap:
            best_overlap = len(matched)
            best_shift = s
            best_matched = matched
    outliers = tuple(fid for fid in rep if fid not in best_matched)
    return OffsetResult(
        best_shift=best_shift,
        overlap_at_best=best_overlap,
        outliers=outliers,
        overlap_by_shift=dict(sorted(overlap_by_shift.items())),
        foreign_ids=foreign,
    )


def check_platform_membership(sig: SignatureList, ann: AnnotationIndex) -> list[str]:
    """Reported ids that do not exist on the platform at all (the
    gene-from-another-array case): exact set difference, reported order."""
    return [fid for fid in dict.fromkeys(sig.feature_ids) if fid not in ann]


def separation_score(
    m: LabeledMatrix,
    sig: SignatureList,
    labels: Optional[Mapping[str, GroupLabel]] = None,
) -> float:
    """How cleanly the signature genes split the two labeled groups.

    Mean over signature genes (those present in the matrix) of
    |t| / sqrt(t^2 + nu) with nu = n - 2, where t is the pooled-variance
    two-sample statistic. 0 means no structure, values near 1 mean a
    clean split.
    """
    lab = labels if labels is not None else (m.labels or {})
    groups: dict[GroupLabel, list[int]] = {}
    for j, sid in enumerate(m.sample_ids):
        g = lab.get(sid, GroupLabel.UNKNOWN)
        if g != GroupLabel.UNKNOWN:
            groups.setdefault(g, []).append(j)
    if len(groups) != 2:
        raise ValueError(f"need exactly two non-Unknown groups, found {sorted(g.value for g in groups)}")
    (g1, idx1), (g2, idx2) = sorted(groups.items(), key=lambda kv: kv[0].value)
    if len(idx1) < 2 or len(idx2) < 2:
        raise ValueError("each group needs at least 2 samples")
    findex = m.feature_index()
    rows = [findex[fid] for fid in dict.fromkeys(sig.feature_ids) if fid in findex]
    if not rows:
        raise ValueError("no signature gene is present in the matrix")
    x1 = m.values[np.ix_(rows, idx1)]
    x2 = m.values[np.ix_(rows, idx2)]
    if not (np.isfinite(x1).all() and np.isfinite(x2).all()):
        raise ValueError("separation scoring requires complete values for the signature genes")
    n1, n2 = len(idx1), len(idx2)
    nu = n1 + n2 - 2
    m1 = x1.mean(axis=1)
    m2 = x2.mean(axis=1)
    ss = (x1 - m1[:, None]) ** 2
    ss2 = (x2 - m2[:, None]) ** 2
    pooled = (ss.sum(axis=1) + ss2.sum(axis=1)) / nu
    se = np.sqrt(pooled * (1.0 / n1 + 1.0 / n2))
    diff = np.abs(m1 - m2)
    score = np.empty(len(rows))
    zero_se = se == 0
    score[zero_se] = np.where(diff[zero_se] > 0, 1.0, 0.0)
    with np.errstate(divide="ignore"):
        t = np.where(zero_se, 0.0, diff / np.where(zero_se, 1.0, se))
    ok = ~zero_se
    score[ok] = t[ok] / np.sqrt(t[ok] ** 2 + nu)
    return float(score.mean())
