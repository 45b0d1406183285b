import csv
import json

import pytest
import yaml

from mcmsim import cli
from mcmsim.circuit import Circuit
from mcmsim.config import ConfigError, load_config, parse_config
from mcmsim.sim.engine import StructuralError


def write_config(tmp_path, name="exp.yaml", **data):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return path


def repcode_config(tmp_path, **extra):
    base = dict(kind="repcode", spec={"distance": 3, "cycles": 3}, noise="noiseless", shots=200, seed=4)
    base.update(extra)
    return write_config(tmp_path, **base)


def test_run_noiseless_repcode(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", str(repcode_config(tmp_path)), "-o", str(out)]) == 0
    assert "logical failures: 0/200" in capsys.readouterr().out
    rows = list(csv.DictReader((out / "summary.csv").open()))
    assert rows[0]["failures"] == "0"
    det = list(csv.DictReader((out / "detection.csv").open()))
    assert all(float(r["mean"]) == 0 for r in det)


def test_run_is_byte_identical_across_threads(tmp_path):
    cfg = repcode_config(tmp_path, noise="default", shots=5000)
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["run", str(cfg), "-o", str(a), "--threads", "1"]) == 0
    assert cli.main(["run", str(cfg), "-o", str(b), "--threads", "2"]) == 0
    for name in ("shots.jsonl", "summary.csv", "detection.csv", "report.md", "circuit.txt", "config.yaml"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name


def test_config_hash_in_every_output(tmp_path):
    out = tmp_path / "out"
    path = repcode_config(tmp_path, noise="default")
    cli.main(["run", str(path), "-o", str(out)])
    h = load_config(path).config_hash
    for f in out.iterdir():
        if f.name.endswith(".meta.json") or f.name == "circuit.txt":
            continue
        assert h in f.read_text(), f.name


def test_tableau_engine_run_and_decode(tmp_path, capsys):
    out = tmp_path / "out"
    cfg = repcode_config(tmp_path, engine="tableau", shots=50, noise="default")
    assert cli.main(["run", str(cfg), "-o", str(out)]) == 0
    first = capsys.readouterr().out.strip().splitlines()[-1]
    assert cli.main(["decode", "--circuit", str(out / "circuit.txt"), "--shots", str(out / "shots.jsonl")]) == 0
    assert capsys.readouterr().out.strip() == first


def test_decode_and_analyze_frames_output(tmp_path, capsys):
    out = tmp_path / "out"
    cli.main(["run", str(repcode_config(tmp_path, noise="default", shots=500)), "-o", str(out)])
    first = capsys.readouterr().out.strip().splitlines()[-1]
    dec = tmp_path / "dec.csv"
    args = ["decode", "--circuit", str(out / "circuit.txt"), "--shots", str(out / "shots.jsonl"), "-o", str(dec)]
    assert cli.main(args) == 0
    assert capsys.readouterr().out.strip() == first
    assert len(dec.read_text().splitlines()) == 501
    det = tmp_path / "det.csv"
    assert cli.main(["analyze", "--circuit", str(out / "circuit.txt"), "--shots", str(out / "shots.jsonl"), "-o", str(det)]) == 0
    assert det.read_text() == (out / "detection.csv").read_text()


def test_distill_report(tmp_path):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, kind="distill", spec={"encoded": True}, noise="distillation", shots=300, seed=2)
    assert cli.main(["run", str(cfg), "-o", str(out)]) == 0
    report = (out / "report.md").read_text()
    assert "## Retry histogram" in report
    assert "## Per-basis failures" in report
    assert "## Bell fidelity" in report
    for b in ("XX", "YY", "ZZ"):
        assert (out / f"shots_{b}.jsonl").exists()
        assert f"| {b} | post_herald |" in report
    retries = list(csv.DictReader((out / "retries.csv").open()))
    assert sum(int(r["shots"]) for r in retries) == 900


@pytest.mark.parametrize(
    "kind,spec",
    [
        ("gerb", {"blocks": [0, 2, 4]}),
        ("ramsey_mcm", {"cycles": [0, 5, 10]}),
        ("replenish", {}),
        ("leakage_map", {"register_mhz": [0.0, 0.0, 1], "imaging_mhz": [-101.0, -99.0, 3], "duration_s": 1e-5}),
    ],
)
def test_other_kinds_run(tmp_path, kind, spec):
    out = tmp_path / "out"
    cfg = write_config(tmp_path, kind=kind, spec=spec, shots=100, seed=1)
    assert cli.main(["run", str(cfg), "-o", str(out)]) == 0
    assert (out / "report.md").exists() and (out / "config.yaml").exists()


def test_unknown_key_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, kind="repcode", spec={"distance": 3, "rounds": 4})
    assert cli.main(["run", str(cfg)]) == 2
    assert "spec.rounds" in capsys.readouterr().err


@pytest.mark.parametrize(
    "data,where",
    [
        ({"kind": "repcode", "spec": {"distance": 4}}, "spec.distance"),
        ({"kind": "surface"}, "kind"),
        ({"kind": "repcode", "shots": 0}, "shots"),
        ({"kind": "repcode", "noise": {"overrides": {"p_nope": 0.1}}}, "noise.overrides.p_nope"),
        ({"kind": "repcode", "noise": {"overrides": {"p_cz_pauli": 2.0}}}, "noise"),
        ({"kind": "distill", "engine": "tableau"}, "engine"),
        ({"kind": "distill", "spec": {"bases": ["XY"]}}, "spec.bases[0]"),
        ({"kind": "repcode", "color": 1}, "color"),
    ],
)
def test_config_errors_name_the_key(data, where):
    with pytest.raises(ConfigError, match=f"^{where.replace('[', '.').replace(']', '.')}"):
        parse_config(data)


def test_structural_error_exits_3(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise StructuralError("operation on a lost qubit")

    monkeypatch.setattr(cli, "sample_batch", boom)
    assert cli.main(["run", str(repcode_config(tmp_path)), "-o", str(tmp_path / "o")]) == 3
    assert "structural error" in capsys.readouterr().err


def test_config_hash_ignores_output_and_threads():
    a = parse_config({"kind": "repcode", "output": "x", "threads": 1})
    b = parse_config({"kind": "repcode", "output": "y", "threads": 8})
    c = parse_config({"kind": "repcode", "seed": 1})
    assert a.config_hash == b.config_hash != c.config_hash


def test_gen_writes_circuit_and_sidecar(tmp_path):
    out = tmp_path / "c.txt"
    assert cli.main(["gen", str(repcode_config(tmp_path)), "-o", str(out)]) == 0
    meta = json.loads((tmp_path / "c.meta.json").read_text())
    c = Circuit.from_text(out.read_text(), meta)
    assert c.metadata["spec"]["distance"] == 3
    assert cli.read_circuit_file(out).to_text() == out.read_text()


def test_gen_multiple_circuits(tmp_path):
    cfg = write_config(tmp_path, kind="distill", spec={"bases": ["XX", "ZZ"]})
    assert cli.main(["gen", str(cfg), "-o", str(tmp_path / "d.txt")]) == 0
    assert (tmp_path / "d_XX.txt").exists() and (tmp_path / "d_ZZ.meta.json").exists()


def test_gen_without_circuit_is_config_error(tmp_path):
    cfg = write_config(tmp_path, kind="replenish")
    assert cli.main(["gen", str(cfg), "-o", str(tmp_path / "x.txt")]) == 2


def test_reproduce_tables(tmp_path):
    out = tmp_path / "tables.md"
    assert cli.main(["reproduce-tables", "-o", str(out)]) == 0
    text = out.read_text()
    assert "25/17820" in text and "30/11700" in text
    assert "unencoded fidelity" in text


def test_analyze_counts(tmp_path, capsys):
    path = tmp_path / "counts.csv"
    path.write_text("condition,failures,trials\nXX,3,1443\nYY,3,1369\nZZ,4,1456\n")
    assert cli.main(["analyze", "--counts", str(path)]) == 0
    out = capsys.readouterr().out
    assert "bell fidelity: 0.996" in out


def test_leakage_map_command(tmp_path):
    out = tmp_path / "map.csv"
    args = ["leakage-map", "--register-mhz", "0", "0", "1", "--imaging-mhz", "-100", "0", "3", "--duration", "1e-5", "-o", str(out)]
    assert cli.main(args) == 0
    assert len(out.read_text().splitlines()) == 4


def test_missing_config_file_exits_2(tmp_path):
    assert cli.main(["run", str(tmp_path / "nope.yaml")]) == 2
