import json

import numpy as np
import pytest

import corpus
import fixtures_lib as fx
from arrayaudit import ingest
from arrayaudit.cli import (
    FINDING_CODES,
    ManifestError,
    explain,
    load_manifest,
    main,
    report_to_json,
    run_audit,
)
from arrayaudit.core import GroupLabel, Severity

REQUIRED_CORRUPTED_CODES = {
    "DUP_INCONSISTENT_LABELS",
    "OFFSET_DETECTED",
    "SENTINEL_VIOLATION",
    "CONFOUND_PERFECT",
    "REUSED_ARTIFACT",
    "LABELING_FLIP",
}


def _check_report_schema(doc: dict) -> None:
    assert set(doc) == {"schema_version", "tool_version", "input_digests", "findings"}
    assert isinstance(doc["input_digests"], dict)
    for digest in doc["input_digests"].values():
        assert len(digest) == 64 and all(c in "0123456789abcdef" for c in digest)
    for f in doc["findings"]:
        assert set(f) == {"code", "severity", "subjects", "metrics", "message"}
        assert f["code"] in FINDING_CODES
        assert f["severity"] in ("Info", "Warning", "Critical")
        assert isinstance(f["subjects"], list)
        assert isinstance(f["metrics"], dict)


def test_corrupted_corpus_exits_2_with_expected_codes(tmp_path):
    manifest_path = corpus.write_corrupted_corpus(tmp_path / "bad")
    report, code = run_audit(manifest_path)
    assert code == 2
    codes = {f.code for f in report.findings}
    assert REQUIRED_CORRUPTED_CODES <= codes
    doc = json.loads((tmp_path / "bad" / "report.json").read_text())
    _check_report_schema(doc)
    # the duplicate census matches the planted multiplicity profile
    dup = next(f for f in report.findings if f.code == "DUP_COLUMNS")
    assert dup.metrics["n_distinct"] == 84
    assert dup.metrics["n_samples"] == 122


def test_clean_corpus_exits_0(tmp_path):
    manifest_path = corpus.write_clean_corpus(tmp_path / "good")
    report, code = run_audit(manifest_path)
    above_info = [f for f in report.findings if f.severity != Severity.INFO]
    assert above_info == []
    assert code == 0


def test_report_is_byte_deterministic(tmp_path):
    manifest_path = corpus.write_corrupted_corpus(tmp_path / "bad")
    report1, _ = run_audit(manifest_path)
    bytes1 = (tmp_path / "bad" / "report.json").read_bytes()
    report2, _ = run_audit(manifest_path)
    bytes2 = (tmp_path / "bad" / "report.json").read_bytes()
    assert bytes1 == bytes2
    assert report_to_json(report1) == report_to_json(report2)
    assert b"\r" not in bytes1


def test_finding_subjects_exist_in_inputs(tmp_path):
    manifest_path = corpus.write_corrupted_corpus(tmp_path / "bad")
    manifest = load_manifest(manifest_path)
    report, _ = run_audit(manifest)
    known_ids = set(manifest.inputs)
    for decl in manifest.inputs.values():
        text = (tmp_path / "bad" / decl.path).read_text()
        for token in text.replace("\t", "\n").replace(",", "\n").split("\n"):
            known_ids.add(token.strip())
    for f in report.findings:
        for subject in f.subjects:
            assert subject in known_ids or subject in ("pemetrexed", "cyclophosphamide")


def test_missing_input_file_exits_1(tmp_path):
    manifest_path = corpus.write_corrupted_corpus(tmp_path / "bad")
    (tmp_path / "bad" / "meta.csv").unlink()
    report, code = run_audit(manifest_path)
    assert code == 1
    assert any(f.code == "DEGENERATE_DATA" for f in report.findings)


def test_manifest_validation_errors(tmp_path):
    bad = {"inputs": {"m": {"path": "x.tsv", "kind": "matrix"}}, "checks": [{"check": "dup"}]}
    p = tmp_path / "m.json"
    p.write_text(json.dumps(bad))
    with pytest.raises(ManifestError, match="missing input reference"):
        load_manifest(p)

    bad2 = {"inputs": {"m": {"path": "x.tsv", "kind": "roster"}}, "checks": [{"check": "dup", "matrix": "m"}]}
    p.write_text(json.dumps(bad2))
    with pytest.raises(ManifestError, match="kind"):
        load_manifest(p)

    bad3 = {"inputs": {}, "checks": [{"check": "frobnicate"}]}
    p.write_text(json.dumps(bad3))
    with pytest.raises(ManifestError, match="unknown check"):
        load_manifest(p)


def test_explain_covers_all_codes():
    assert len(FINDING_CODES) == 17
    for code in FINDING_CODES:
        text = explain(code)
        assert len(text) > 20
    assert "duplicate" in explain("DUP_COLUMNS").lower()
    with pytest.raises(KeyError):
        explain("NOT_A_CODE")


# --- CLI surface ------------------------------------------------------------


def test_cli_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    assert "arrayaudit" in out and "schema" in out


def test_cli_explain(capsys):
    assert main(["explain", "OFFSET_DETECTED"]) == 0
    assert "indexing" in capsys.readouterr().out
    assert main(["explain", "BOGUS"]) == 1


def test_cli_report_run(tmp_path, capsys):
    manifest_path = corpus.write_corrupted_corpus(tmp_path / "bad")
    code = main(["report", "run", "--manifest", str(manifest_path)])
    out = capsys.readouterr().out
    assert code == 2
    assert "CONFOUND_PERFECT" in out


def test_cli_audit_dup_and_roster(tmp_path, capsys):
    m, _ = fx.duplicate_profile_matrix()
    path = tmp_path / "m.tsv"
    path.write_text(ingest.serialize_matrix(m))
    assert main(["audit", "dup", "--matrix", str(path)]) == 2
    out = capsys.readouterr().out
    assert "84 distinct" in out

    roster, _ = fx.roster95()
    rpath = tmp_path / "r.csv"
    rpath.write_text(ingest.serialize_roster(roster))
    assert main(["audit", "roster", "--roster", str(rpath)]) == 2
    out = capsys.readouterr().out
    assert "95 entries, 80 distinct" in out


def test_cli_audit_crosstab(tmp_path, capsys):
    roster, source_rules = fx.roster95()
    a = tmp_path / "a.csv"
    a.write_text(ingest.serialize_roster(roster))
    b = tmp_path / "b.csv"
    b.write_text("\n".join(f"{sid},{lab}" for sid, lab in source_rules.items()) + "\n")
    assert main(["audit", "crosstab", "--a", str(a), "--b", str(b)]) == 0
    out = capsys.readouterr().out
    assert "Both" in out and "Intermediate" in out


def test_cli_audit_offset(tmp_path, capsys):
    reported, ann, generated = fx.offset_fixture()
    (tmp_path / "rep.csv").write_text(ingest.serialize_signature(reported))
    (tmp_path / "gen.csv").write_text(ingest.serialize_signature(generated))
    (tmp_path / "ann.txt").write_text(ingest.serialize_annotation(ann))
    code = main(
        [
            "audit", "offset",
            "--reported", str(tmp_path / "rep.csv"),
            "--generated", str(tmp_path / "gen.csv"),
            "--annotation", str(tmp_path / "ann.txt"),
        ]
    )
    out = capsys.readouterr().out
    assert code == 2
    assert "best shift +1" in out


def test_cli_match_rows_roundtrip(tmp_path, capsys):
    rng = np.random.default_rng(1)
    from arrayaudit.core import LabeledMatrix

    vals = rng.standard_normal((30, 8))
    ref = LabeledMatrix(tuple(f"g{i}" for i in range(30)), tuple(f"s{j}" for j in range(8)), vals)
    perm = rng.permutation(30)
    query = LabeledMatrix(tuple(f"q{i}" for i in range(30)), ref.sample_ids, vals[perm])
    (tmp_path / "ref.tsv").write_text(ingest.serialize_matrix(ref))
    (tmp_path / "q.tsv").write_text(ingest.serialize_matrix(query))
    out_csv = tmp_path / "map.csv"
    code = main(
        [
            "match", "rows",
            "--query", str(tmp_path / "q.tsv"),
            "--reference", str(tmp_path / "ref.tsv"),
            "--out", str(out_csv),
        ]
    )
    assert code == 0
    lines = out_csv.read_text().strip().split("\n")[1:]
    assert len(lines) == 30
    for line in lines:
        qid, rid = line.split(",")
        assert rid == f"g{perm[int(qid[1:])]}"


def test_cli_signature_derive_and_predict(tmp_path, capsys):
    rng = np.random.default_rng(2)
    from arrayaudit.core import LabeledMatrix

    values = rng.standard_normal((40, 16))
    values[:5, :8] += 3.0
    labels = {f"s{j}": (GroupLabel.SENSITIVE if j < 8 else GroupLabel.RESISTANT) for j in range(16)}
    train = LabeledMatrix(tuple(f"g{i}" for i in range(40)), tuple(f"s{j}" for j in range(16)), values, labels)
    (tmp_path / "train.tsv").write_text(ingest.serialize_matrix(train))
    test_m = LabeledMatrix(
        tuple(f"g{i}" for i in range(40)),
        tuple(f"t{j}" for j in range(6)),
        rng.standard_normal((40, 6)),
    )
    (tmp_path / "test.tsv").write_text(ingest.serialize_matrix(test_m))

    sig_out = tmp_path / "sig.csv"
    assert main(["signature", "derive", "--matrix", str(tmp_path / "train.tsv"), "--k", "5", "--out", str(sig_out)]) == 0
    sig = ingest.parse_signature(sig_out.read_text())
    assert set(sig.feature_ids) == {f"g{i}" for i in range(5)}

    scores_out = tmp_path / "scores.csv"
    code = main(
        [
            "signature", "predict",
            "--train", str(tmp_path / "train.tsv"),
            "--test", str(tmp_path / "test.tsv"),
            "--k", "5",
            "--out", str(scores_out),
        ]
    )
    assert code == 0
    rows = scores_out.read_text().strip().split("\n")
    assert rows[0] == "sample_id,metagene_score,p_sensitive"
    assert len(rows) == 7
    for row in rows[1:]:
        p = float(row.split(",")[2])
        assert 0.0 <= p <= 1.0


def test_cli_roc(tmp_path, capsys):
    (tmp_path / "scores.csv").write_text("sample_id,score\na,0.9\nb,0.8\nc,0.4\nd,0.3\n")
    (tmp_path / "labels.csv").write_text("a,1\nb,1\nc,0\nd,0\n")
    assert main(["roc", "--scores", str(tmp_path / "scores.csv"), "--labels", str(tmp_path / "labels.csv")]) == 0
    assert "AUC = 1.000000" in capsys.readouterr().out


def test_cli_combo(tmp_path, capsys):
    (tmp_path / "in.csv").write_text(
        "sample_id,T,F,A,C\np1,0.5,0.5,0.5,0.5\np2,0.1,0.2,0.3,0.4\np3,0.9,0.9,0.9,0.9\n"
    )
    assert main(["combo", "--rule", "tfac", "--inputs", str(tmp_path / "in.csv"), "--batch-normalize"]) == 0
    out = capsys.readouterr().out
    lines = out.strip().split("\n")
    assert lines[0] == "sample_id,raw,normalized"
    raw_p1 = float(lines[1].split(",")[1])
    assert raw_p1 == 1.9375
    normalized = [float(l.split(",")[2]) for l in lines[1:]]
    assert min(normalized) == 0.0 and max(normalized) == 1.0


def test_cli_search_groups(tmp_path, capsys):
    panel, truth, target = fx.planted_panel(2025, 7, 7, 6, k=10)
    (tmp_path / "panel.tsv").write_text(ingest.serialize_matrix(panel))
    (tmp_path / "target.csv").write_text(ingest.serialize_signature(target))
    start = dict(truth)
    sens = [l for l, lab in truth.items() if lab == GroupLabel.SENSITIVE]
    start[sens[0]] = GroupLabel.UNUSED
    (tmp_path / "start.csv").write_text(
        "cell_line,state\n" + "\n".join(f"{l},{lab.value}" for l, lab in start.items()) + "\n"
    )
    trace = tmp_path / "trace.json"
    code = main(
        [
            "search", "groups",
            "--panel", str(tmp_path / "panel.tsv"),
            "--target", str(tmp_path / "target.csv"),
            "--k", "10",
            "--start", str(tmp_path / "start.csv"),
            "--trace", str(trace),
        ]
    )
    assert code == 0
    doc = json.loads(trace.read_text())
    assert doc["final"][sens[0]] == "Sensitive"
    assert doc["neighbors_per_step"] and all(n == 40 for n in doc["neighbors_per_step"])


def test_cli_audit_dose_and_confound(tmp_path, capsys):
    records, labels = fx.pemetrexed_reversal_records()
    (tmp_path / "gi50.csv").write_text(ingest.serialize_sensitivity(records))
    roster_lines = ["sample_id,label"] + [f"{line},{lab.value}" for line, lab in labels.items()]
    (tmp_path / "labels.csv").write_text("\n".join(roster_lines) + "\n")
    code = main(
        [
            "audit", "dose",
            "--records", str(tmp_path / "gi50.csv"),
            "--labels", str(tmp_path / "labels.csv"),
            "--drug", "pemetrexed",
            "--measure", "GI50",
        ]
    )
    assert code == 2
    assert "reversed" in capsys.readouterr().out

    (tmp_path / "meta.csv").write_text(ingest.serialize_sample_meta(fx.confound_meta()))
    code = main(["audit", "confound", "--meta", str(tmp_path / "meta.csv")])
    out = capsys.readouterr().out
    assert code == 2
    assert "perfect confounding: True" in out


def test_cli_error_paths(tmp_path, capsys):
    assert main(["audit", "dup", "--matrix", str(tmp_path / "missing.tsv")]) == 1
    assert main(["report", "run", "--manifest", str(tmp_path / "none.json")]) == 1


def test_cli_match_columns(tmp_path):
    rng = np.random.default_rng(9)
    from arrayaudit.core import LabeledMatrix

    vals = rng.standard_normal((25, 10))
    ref = LabeledMatrix(tuple(f"g{i}" for i in range(25)), tuple(f"CL{j}" for j in range(10)), vals)
    chosen = [7, 2, 5]
    query = LabeledMatrix(ref.feature_ids, ("a0", "a1", "a2"), vals[:, chosen])
    (tmp_path / "ref.tsv").write_text(ingest.serialize_matrix(ref))
    (tmp_path / "q.tsv").write_text(ingest.serialize_matrix(query))
    out = tmp_path / "map.csv"
    code = main(
        [
            "match", "columns",
            "--query", str(tmp_path / "q.tsv"),
            "--reference", str(tmp_path / "ref.tsv"),
            "--out", str(out),
        ]
    )
    assert code == 0
    got = dict(line.split(",") for line in out.read_text().strip().split("\n")[1:])
    assert got == {"a0": "CL7", "a1": "CL2", "a2": "CL5"}


def test_cli_audit_dup_log_switch(tmp_path, capsys):
    rng = np.random.default_rng(10)
    from arrayaudit.core import LabeledMatrix

    base = np.exp(rng.standard_normal(12))
    vals = np.column_stack([base, base, np.exp(rng.standard_normal(12))])
    m = LabeledMatrix(tuple(f"g{i}" for i in range(12)), ("c0", "c1", "c2"), vals)
    (tmp_path / "m.tsv").write_text(ingest.serialize_matrix(m))
    assert main(["audit", "dup", "--matrix", str(tmp_path / "m.tsv"), "--log"]) == 2
    assert "2 distinct" in capsys.readouterr().out
