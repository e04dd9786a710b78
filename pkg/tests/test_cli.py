import json
import os

import pytest

from apiseq.cli import main
from apiseq.corpusgen import read_manifest


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    assert main(["corpusgen", "--out", str(d), "--seed", "5", "--families", "Genome,Inject",
                 "--variants", "6", "--benign", "20"]) == 0
    db = d / "db"
    train = read_manifest(d / "train.json")
    mal = [e.path for e in train if e.label.is_malware]
    ben = [e.path for e in train if not e.label.is_malware]
    assert main(["train", "--db", str(db), "--label", "trojan", "--n", "3", *mal]) == 0
    assert main(["train", "--db", str(db), "--label", "Benign", "--n", "3", *ben]) == 0
    return d, db, read_manifest(d / "test.json")


def test_corpusgen_counts(corpus, capsys):
    d, _, _ = corpus
    code, out, _ = run(capsys, "corpusgen", "--out", d / "again", "--seed", "5", "--families", "Genome",
                       "--variants", "4", "--benign", "2")
    assert code == 0
    assert json.loads(out) == {"manifest.json": 6, "train.json": 4, "test.json": 2, "pack_manifest.json": 14}


def test_scan_trained_variant_is_malicious(corpus, capsys):
    _, db, test = corpus
    variant = next(e.path for e in test if e.family == "Inject")
    code, out, _ = run(capsys, "scan", variant, "--db", db, "--n", 3, "--coef", "dice")
    report = json.loads(out)
    assert code == 1
    assert report["decision"] == "Malicious" and report["family"] == "Trojan"
    assert list(report) == sorted(report)


def test_scan_benign_exit_zero(corpus, capsys):
    _, db, test = corpus
    benign = [e.path for e in test if not e.label.is_malware]
    codes = [run(capsys, "scan", p, "--db", db, "--n", 3, "--coef", "cosine")[0] for p in benign[:5]]
    assert codes == [0] * 5
    code, out, _ = run(capsys, "scan", benign[0], "--db", db, "--n", 3, "--pretty")
    assert code == 0 and out.startswith(f"{benign[0]}: Benign")


def test_scan_errors_exit_two(corpus, capsys, tmp_path):
    _, db, test = corpus
    code, _, err = run(capsys, "scan", tmp_path / "missing.misa", "--db", db, "--n", 3)
    assert code == 2 and "FileNotFoundError" in err
    bad = tmp_path / "bad.misa"
    bad.write_bytes(b"garbage")
    code, _, err = run(capsys, "scan", bad, "--db", db, "--n", 3)
    assert code == 2 and "apiseq scan" in err
    with pytest.raises(SystemExit) as exc:
        main(["scan", test[0].path, "--db", str(db), "--n", "5"])
    assert exc.value.code == 2


def test_cfg_dot_three_nodes(tmp_path, capsys):
    src = tmp_path / "jcc.asm"
    src.write_text("    JCC L\nA:  APICALL 1\n    HALT\nL:  APICALL 2\n    HALT\n")
    out = tmp_path / "g.dot"
    code, _, _ = run(capsys, "cfg", src, "--dot", out)
    dot = out.read_text()
    assert code == 0
    assert sum("[label=" in line and "->" not in line for line in dot.splitlines()) == 3
    assert dot.count("->") == 2


def test_disasm_and_ndif(tmp_path, capsys):
    src = tmp_path / "p.asm"
    src.write_text(".api 1 ReadFile\nAPICALL ReadFile\nHALT\n")
    code, out, _ = run(capsys, "disasm", src)
    assert code == 0 and "ReadFile" in out and len(out.splitlines()) == 2
    ndif = tmp_path / "p.ndif"
    assert run(capsys, "disasm", src, "--mode", "linear", "--ndif", ndif)[0] == 0
    code, out, _ = run(capsys, "extract", ndif, "--n", 2)
    assert code == 0 and json.loads(out)["paths"] == [["ReadFile"]]


def test_extract_grams(tmp_path, capsys):
    src = tmp_path / "p.asm"
    src.write_text(".api 1 ReadFile\n.api 2 WriteFile\n.api 3 CloseHandle\n"
                   "APICALL ReadFile\nAPICALL WriteFile\nAPICALL CloseHandle\nHALT\n")
    grams = tmp_path / "g.txt"
    code, out, _ = run(capsys, "extract", src, "--n", 2, "--grams", grams)
    report = json.loads(out)
    assert code == 0 and report["terminals"] == ["Halt"] and not report["truncated"]
    # CloseHandle is outside the twelve seeded ids, so it takes the next free one
    assert report["grams"] == [[1, 2], [2, 13]]
    assert grams.read_text().splitlines() == ["1,2", "2,13"]
    code, out, _ = run(capsys, "extract", src, "--pretty")
    assert "ReadFile -> WriteFile -> CloseHandle" in out


def test_phase_updates_databases(corpus, capsys, tmp_path):
    d, db, _ = corpus
    work = tmp_path / "db"
    work.mkdir()
    for f in os.listdir(db):
        (work / f).write_bytes((db / f).read_bytes())
    code, out, _ = run(capsys, "phase", "--db", work, "--test-manifest", d / "test.json", "--n", 3,
                       "--coef", "dice")
    report = json.loads(out)
    assert code == 0 and 0.0 <= report["detection_rate"] <= 1.0
    code, out, _ = run(capsys, "phase", "--db", work, "--test-manifest", d / "test.json", "--n", 3,
                       "--phase", 2, "--pretty")
    assert code == 0 and out.startswith("phase 2: detection 100.00%")


def test_pack_commands(corpus, capsys):
    d, _, _ = corpus
    entries = {e.role: e.path for e in read_manifest(d / "pack_manifest.json")}
    code, out, _ = run(capsys, "packcheck", entries["packed"])
    assert code == 0 and json.loads(out)["packed"] is True
    code, out, _ = run(capsys, "packcheck", entries["evasive"])
    assert json.loads(out)["packed"] is False
    code, out, _ = run(capsys, "packsig", entries["evasive"], "--sigs", d / "packers.sig")
    assert json.loads(out)["packer"] == "MiniPack"
    code, out, _ = run(capsys, "packsig", entries["plain"], "--sigs", d / "packers.sig")
    assert json.loads(out)["packer"] is None
    code, out, _ = run(capsys, "packeval", "--manifest", d / "pack_manifest.json", "--sigs", d / "packers.sig")
    parts = json.loads(out)["partitions"]
    assert code == 0 and len(parts["sig_only"]) == 4 and len(parts["both"]) == 4
    assert len(parts["neither"]) == 6 and parts["dyn_only"] == []
