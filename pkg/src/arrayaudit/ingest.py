"""Strict delimited-text parsers for every input kind, plus serializers.

Format rules are bit-exact on purpose: the audits downstream are only as
trustworthy as the ingest layer, so anything surprising (ragged row, junk
numeric cell, unknown label token) is an error with coordinates rather
than a silent coercion. Label vocabulary normalization is driven by a
shipped data file (``data/label_synonyms.json``) so new source
vocabularies can be added without code changes.

Parsing is locale-independent: decimal point only, no thousands
separators. Timestamps are ISO-8601; a missing timezone means UTC.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import datetime, timezone
from importlib import resources
from typing import Optional

import numpy as np

from .core import (
    AnnotationIndex,
    Direction,
    GroupLabel,
    LabeledMatrix,
    LabelRoster,
    Measure,
    RosterEntry,
    SampleMeta,
    SensitivityRecord,
    SignatureList,
)


class ParseError(ValueError):
    """Malformed input; message carries 1-based row/column coordinates."""


def _load_synonyms() -> dict[str, GroupLabel]:
    raw = json.loads(
        resources.files("arrayaudit").joinpath("data/label_synonyms.json").read_text("utf-8")
    )
    table: dict[str, GroupLabel] = {}
    for canonical, variants in raw.items():
        lab = GroupLabel(canonical)
        for v in variants:
            table[v.lower()] = lab
    return table


_SYNONYMS = _load_synonyms()

_DIRECTION_TOKENS = {
    "upinresistant": Direction.UP_IN_RESISTANT,
    "up_in_resistant": Direction.UP_IN_RESISTANT,
    "upinsensitive": Direction.UP_IN_SENSITIVE,
    "up_in_sensitive": Direction.UP_IN_SENSITIVE,
}


def normalize_label(token: str) -> GroupLabel:
    """Map a source vocabulary token (NR, Resp, RES, SEN, ...) to a label."""
    key = token.strip().lower()
    if key in _SYNONYMS:
        return _SYNONYMS[key]
    raise ParseError(f"unknown group label token {token!r}")


@dataclass(frozen=True)
class MatrixFormat:
    delimiter: str = "tab"
    has_label_row: bool = True
    label_row_key: str = "label"
    missing_token: str = "NA"

    def __post_init__(self) -> None:
        if self.delimiter not in ("tab", "comma"):
            raise ValueError(f"delimiter must be tab|comma, got {self.delimiter!r}")

    @property
    def sep(self) -> str:
        return "\t" if self.delimiter == "tab" else ","


def _split_lines(text: str) -> list[str]:
    # LF or CRLF; a single trailing newline does not create an empty row
    lines = text.replace("\r\n", "\n").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def _parse_cell(token: str, fmt: MatrixFormat, row: int, col: int) -> float:
    tok = token.strip()
    if tok == fmt.missing_token:
        return float("nan")
    # reject locale-style separators and other float() extensions
    if "," in tok or " " in tok or tok.lower() in ("nan", "inf", "-inf", "infinity", "-infinity"):
        raise ParseError(f"row {row}, column {col}: unparseable numeric cell {token!r}")
    try:
        return float(tok)
    except ValueError:
        raise ParseError(f"row {row}, column {col}: unparseable numeric cell {token!r}") from None


def parse_matrix(text: str, fmt: MatrixFormat = MatrixFormat()) -> LabeledMatrix:
    """Parse a delimited expression matrix.

    Layout: header row (corner cell then sample ids), an optional group
    label row whose first cell equals ``fmt.label_row_key``, then one row
    per feature (feature id followed by numeric cells). Label tokens are
    normalized through the synonym table; an empty token means Unknown.
    """
    lines = _split_lines(text)
    if not lines:
        raise ParseError("empty matrix file")
    sep = fmt.sep
    header = lines[0].split(sep)
    sample_ids = [c.strip() for c in header[1:]]
    if not sample_ids:
        raise ParseError("header row declares no sample ids")
    ncol = len(sample_ids)

    body_start = 1
    labels: Optional[dict[str, GroupLabel]] = None
    if fmt.has_label_row and len(lines) > 1:
        cells = lines[1].split(sep)
        if cells and cells[0].strip() == fmt.label_row_key:
            if len(cells) - 1 != ncol:
                raise ParseError(
                    f"row 2: label row has {len(cells) - 1} cells, expected {ncol}"
                )
            labels = {}
            for sid, tok in zip(sample_ids, cells[1:]):
                labels[sid] = normalize_label(tok)
            body_start = 2

    feature_ids: list[str] = []
    rows: list[list[float]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(lines[body_start:], start=body_start + 1):
        cells = line.split(sep)
        fid = cells[0].strip()
        if len(cells) - 1 != ncol:
            raise ParseError(
                f"row {lineno}: ragged row ({len(cells) - 1} cells, expected {ncol})"
            )
        if fid in seen:
            raise ParseError(f"row {lineno}: duplicate feature id {fid!r}")
        seen.add(fid)
        feature_ids.append(fid)
        rows.append(
            [_parse_cell(tok, fmt, lineno, j + 2) for j, tok in enumerate(cells[1:])]
        )
    if not feature_ids:
        raise ParseError("matrix has no feature rows")
    values = np.array(rows, dtype=np.float64)
    return LabeledMatrix(tuple(feature_ids), tuple(sample_ids), values, labels)


def serialize_matrix(m: LabeledMatrix, fmt: MatrixFormat = MatrixFormat()) -> str:
    """Inverse of parse_matrix up to canonicalization (canonical label
    tokens, numbers at 17 significant digits)."""
    sep = fmt.sep
    out = [sep.join(["id", *m.sample_ids])]
    if m.labels is not None:
        out.append(sep.join([fmt.label_row_key, *(m.label_of(s).value for s in m.sample_ids)]))
    for i, fid in enumerate(m.feature_ids):
        cells = [
            fmt.missing_token if np.isnan(v) else format(v, ".17g")
            for v in m.values[i]
        ]
        out.append(sep.join([fid, *cells]))
    return "\n".join(out) + "\n"


def _roster_fields(line: str, lineno: int) -> list[str]:
    cells = [c.strip() for c in line.split(",")]
    if len(cells) < 2:
        raise ParseError(f"row {lineno}: roster rows need at least sample_id,label")
    return cells


def parse_roster(text: str) -> LabelRoster:
    """Parse sample_id,label[,source,note] rows. Duplicate ids are kept:
    repeated and contradictory claims are exactly what gets audited."""
    lines = [ln for ln in _split_lines(text) if ln.strip()]
    if not lines:
        raise ParseError("empty roster file")
    start = 0
    first = [c.strip().lower() for c in lines[0].split(",")]
    if first[:2] == ["sample_id", "label"]:
        start = 1
    entries: list[RosterEntry] = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        cells = _roster_fields(line, lineno)
        label = normalize_label(cells[1])
        source = cells[2] if len(cells) > 2 else ""
        note = cells[3] if len(cells) > 3 and cells[3] else None
        entries.append(RosterEntry(cells[0], label, source, note))
    if not entries:
        raise ParseError("roster file has a header but no entries")
    return LabelRoster(tuple(entries))


def serialize_roster(r: LabelRoster) -> str:
    lines = ["sample_id,label,source,note"]
    for e in r.entries:
        lines.append(f"{e.sample_id},{e.label.value},{e.source_id},{e.note or ''}")
    return "\n".join(lines) + "\n"


def parse_signature(text: str) -> SignatureList:
    """Parse a reported gene list: one feature id per line, optionally
    followed by ,direction (UpInResistant / UpInSensitive)."""
    lines = [ln for ln in _split_lines(text) if ln.strip()]
    if not lines:
        raise ParseError("empty signature file")
    start = 0
    first = [c.strip().lower() for c in lines[0].split(",")]
    if first[0] == "feature_id":
        start = 1
    ids: list[str] = []
    dirs: list[tuple[str, Direction]] = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        cells = [c.strip() for c in line.split(",")]
        fid = cells[0]
        if not fid:
            raise ParseError(f"row {lineno}: empty feature id")
        ids.append(fid)
        if len(cells) > 1 and cells[1]:
            key = cells[1].lower()
            if key not in _DIRECTION_TOKENS:
                raise ParseError(f"row {lineno}: unknown direction token {cells[1]!r}")
            dirs.append((fid, _DIRECTION_TOKENS[key]))
    if not ids:
        raise ParseError("signature file has a header but no entries")
    return SignatureList(tuple(ids), tuple(dirs))


def serialize_signature(sig: SignatureList) -> str:
    dmap: dict[str, list[Direction]] = {}
    for fid, d in sig.direction_entries:
        dmap.setdefault(fid, []).append(d)
    consumed: dict[str, int] = {}
    lines = []
    for fid in sig.feature_ids:
        k = consumed.get(fid, 0)
        ds = dmap.get(fid, [])
        if k < len(ds):
            lines.append(f"{fid},{ds[k].value}")
            consumed[fid] = k + 1
        else:
            lines.append(fid)
    return "\n".join(lines) + "\n"


def parse_annotation(text: str) -> AnnotationIndex:
    """Parse a platform annotation: platform id on the first line, then
    one feature id per line in platform row order."""
    lines = [ln.strip() for ln in _split_lines(text)]
    lines = [ln for ln in lines if ln]
    if len(lines) < 2:
        raise ParseError("annotation needs a platform id line and at least one feature id")
    return AnnotationIndex(lines[0], tuple(lines[1:]))


def serialize_annotation(ann: AnnotationIndex) -> str:
    return "\n".join([ann.platform_id, *ann.feature_ids]) + "\n"


def parse_sensitivity(text: str) -> list[SensitivityRecord]:
    """Parse cell_line,drug_id,measure,value potency rows."""
    lines = [ln for ln in _split_lines(text) if ln.strip()]
    if not lines:
        raise ParseError("empty sensitivity file")
    start = 0
    if [c.strip().lower() for c in lines[0].split(",")][:1] == ["cell_line"]:
        start = 1
    records: list[SensitivityRecord] = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 4:
            raise ParseError(f"row {lineno}: expected 4 columns, got {len(cells)}")
        try:
            measure = Measure(cells[2])
        except ValueError:
            raise ParseError(f"row {lineno}: unknown measure {cells[2]!r}") from None
        try:
            value = float(cells[3])
        except ValueError:
            raise ParseError(f"row {lineno}: unparseable potency {cells[3]!r}") from None
        try:
            records.append(SensitivityRecord(cells[0], cells[1], measure, value))
        except ValueError as exc:
            raise ParseError(f"row {lineno}: {exc}") from None
    if not records:
        raise ParseError("sensitivity file has a header but no rows")
    return records


def serialize_sensitivity(records: list[SensitivityRecord]) -> str:
    lines = ["cell_line,drug_id,measure,value"]
    for r in records:
        lines.append(f"{r.cell_line},{r.drug_id},{r.measure.value},{format(r.value, '.17g')}")
    return "\n".join(lines) + "\n"


def parse_timestamp(token: str, lineno: int = 0) -> datetime:
    tok = token.strip()
    if tok.endswith("Z"):
        tok = tok[:-1] + "+00:00"
    try:
        ts = datetime.fromisoformat(tok)
    except ValueError:
        where = f"row {lineno}: " if lineno else ""
        raise ParseError(f"{where}unparseable ISO-8601 timestamp {token!r}") from None
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


def parse_sample_meta(text: str) -> list[SampleMeta]:
    """Parse sample_id,run_timestamp,scanner_id,treatment_arm,included rows."""
    lines = [ln for ln in _split_lines(text) if ln.strip()]
    if not lines:
        raise ParseError("empty sample metadata file")
    start = 0
    if [c.strip().lower() for c in lines[0].split(",")][:1] == ["sample_id"]:
        start = 1
    metas: list[SampleMeta] = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        cells = [c.strip() for c in line.split(",")]
        if len(cells) != 5:
            raise ParseError(f"row {lineno}: expected 5 columns, got {len(cells)}")
        ts = parse_timestamp(cells[1], lineno)
        if cells[4] not in ("0", "1"):
            raise ParseError(f"row {lineno}: included must be 0 or 1, got {cells[4]!r}")
        metas.append(SampleMeta(cells[0], ts, cells[2], cells[3], cells[4] == "1"))
    if not metas:
        raise ParseError("metadata file has a header but no rows")
    return metas


def serialize_sample_meta(metas: list[SampleMeta]) -> str:
    lines = ["sample_id,run_timestamp,scanner_id,treatment_arm,included"]
    for m in metas:
        ts = m.run_timestamp.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%S+00:00")
        lines.append(f"{m.sample_id},{ts},{m.scanner_id},{m.treatment_arm},{int(m.included)}")
    return "\n".join(lines) + "\n"
