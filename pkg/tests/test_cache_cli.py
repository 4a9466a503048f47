import io
import json
import struct

import numpy as np
import pytest

from plasmabound import cache, formats
from plasmabound.cli import build_parser, main, resolve_config
from plasmabound.errors import MachineMismatch, VersionMismatch
from plasmabound.geometry import hausdorff
from plasmabound.machine import MachineDescription
from plasmabound.pipeline import PipelineConfig, Reconstructor


@pytest.fixture(scope="module")
def workdir(tmp_path_factory, machine, bank):
    d = tmp_path_factory.mktemp("cli")
    machine.save(d / "machine.json")
    cache.save_bank(d / "bank.pbk", bank, machine.hash)
    (d / "scenario.json").write_text(json.dumps({"schema_version": 1, "machine": "machine.json", "slices": 3,
                                                 "ramp": [1.0, 1.2]}))
    assert main(["synth", str(d / "scenario.json"), "-m", str(d / "meas.jsonl"), "-r", str(d / "ref.json")]) == 0
    return d


def _strip(rec):
    rec = dict(rec)
    rec.pop("timings_ms", None)
    return rec


def _reconstruct(d, meas, out, *extra):
    assert main(["reconstruct", str(d / "machine.json"), str(d / "bank.pbk"), str(meas), "-o", str(out),
                 *extra]) == 0
    return list(formats.read_jsonl(out))


# -- cache --------------------------------------------------------------------

def test_machine_file_round_trip(machine, workdir):
    again = MachineDescription.load(workdir / "machine.json")
    assert again.hash == machine.hash
    assert again.sensors.counts == machine.sensors.counts


def test_bank_round_trip(bank, machine, workdir):
    loaded = cache.load_bank(workdir / "bank.pbk", machine.hash)
    assert len(loaded) == len(bank)
    assert (loaded.h, loaded.epsilon, loaded.radius) == (bank.h, bank.epsilon, bank.radius)
    for a, b in zip(bank.entries, loaded.entries):
        assert a.center == b.center
        assert np.array_equal(a.mesh.nodes, b.mesh.nodes)
        assert np.array_equal(a.mesh.triangles, b.mesh.triangles)
        assert np.array_equal(a.system.S, b.system.S)
        assert (a.system.K != b.system.K).nnz == 0
        assert b.system.dd.min_pivot > 0 and b.system.dn.min_pivot > 0


def test_loaded_bank_reconstructs_identically(bank, machine, config, equilibrium, workdir):
    from plasmabound.synth import generate_measurements
    meas = generate_measurements(equilibrium, machine.sensors)
    a = Reconstructor(machine, config, bank).run(meas, equilibrium.coil_currents)
    b = Reconstructor(machine, config, cache.load_bank(workdir / "bank.pbk")).run(meas, equilibrium.coil_currents)
    assert np.allclose(a.boundary.polyline, b.boundary.polyline, rtol=0, atol=1e-12)


def test_precompute_idempotent(tmp_path, workdir):
    args = ["precompute", str(workdir / "machine.json"), "--h", "0.06", "--bank-grid", "3", "3"]
    assert main(args + ["-o", str(tmp_path / "a.pbk")]) == 0
    assert main(args + ["-o", str(tmp_path / "b.pbk"), "--workers", "3"]) == 0
    ha, hb = cache.read_header(tmp_path / "a.pbk"), cache.read_header(tmp_path / "b.pbk")
    assert ha["machine_hash"] == hb["machine_hash"]
    raw_a = (tmp_path / "a.pbk").read_bytes().replace(ha["created"].encode(), b"X" * len(ha["created"]))
    raw_b = (tmp_path / "b.pbk").read_bytes().replace(hb["created"].encode(), b"X" * len(hb["created"]))
    assert raw_a == raw_b
    bank = cache.load_bank(tmp_path / "a.pbk", ha["machine_hash"])
    assert len(bank) == 9
    for e in bank.entries:
        assert e.system.dd.min_pivot > 0 and e.system.inertia[0] == e.mesh.n_inner


def test_fixed_timestamp_gives_identical_bytes(bank, machine, tmp_path):
    cache.save_bank(tmp_path / "a.pbk", bank, machine.hash, created="2000-01-01T00:00:00Z")
    cache.save_bank(tmp_path / "b.pbk", bank, machine.hash, created="2000-01-01T00:00:00Z")
    assert (tmp_path / "a.pbk").read_bytes() == (tmp_path / "b.pbk").read_bytes()


@pytest.mark.parametrize("damage", ["magic", "version", "json", "truncated"])
def test_corrupted_cache_rejected(workdir, tmp_path, damage):
    raw = bytearray((workdir / "bank.pbk").read_bytes())
    if damage == "magic":
        raw[:8] = b"NOTABANK"
    elif damage == "version":
        raw[8:12] = struct.pack("<I", 99)
    elif damage == "json":
        raw[20:30] = b"\xff" * 10
    else:
        raw = raw[: len(raw) // 2]
    path = tmp_path / "bad.pbk"
    path.write_bytes(bytes(raw))
    with pytest.raises(VersionMismatch):
        cache.load_bank(path)


def test_machine_mismatch(workdir):
    with pytest.raises(MachineMismatch):
        cache.load_bank(workdir / "bank.pbk", "0" * 64)


def test_reconstruct_rejects_other_machine(workdir, tmp_path, capsys):
    assert main(["machine", "-o", str(tmp_path / "sym.json"), "--symmetric"]) == 0
    code = main(["reconstruct", str(tmp_path / "sym.json"), str(workdir / "bank.pbk"), str(workdir / "meas.jsonl")])
    assert code == 2
    assert "MachineMismatch" in capsys.readouterr().err


# -- synth --------------------------------------------------------------------

def test_synth_deterministic(workdir, tmp_path):
    assert main(["synth", str(workdir / "scenario.json"), "-m", str(tmp_path / "m.jsonl"),
                 "-r", str(tmp_path / "r.json")]) == 0
    assert (tmp_path / "m.jsonl").read_bytes() == (workdir / "meas.jsonl").read_bytes()
    assert (tmp_path / "r.json").read_bytes() == (workdir / "ref.json").read_bytes()


def test_reference_file_round_trip(workdir):
    ref = formats.read_boundary(workdir / "ref.json")
    poly = ref["polyline"]
    assert np.array_equal(poly[0], poly[-1]) and len(poly) > 100
    assert ref["kind"] == "xpoint" and ref["minor_radius"] > 0


def test_measurement_records(workdir, machine):
    recs = list(formats.read_jsonl(workdir / "meas.jsonl"))
    assert [r["seq"] for r in recs] == [0, 1, 2]
    seq, t, meas, cur = formats.parse_measurement(recs[2], (1.0, 1.0, 1.0))
    meas.check(machine.sensors)
    assert set(cur) == set(machine.coils.labels)
    # the ramp scales every signal
    _, _, m0, _ = formats.parse_measurement(recs[0], (1.0, 1.0, 1.0))
    assert np.allclose(meas.values, 1.2 * m0.values, rtol=1e-12)


def test_zero_plasma_gives_error_record(workdir, tmp_path):
    scen = tmp_path / "empty.json"
    scen.write_text(json.dumps({"schema_version": 1, "machine": str(workdir / "machine.json"), "plasma": False}))
    assert main(["synth", str(scen), "-m", str(tmp_path / "m.jsonl")]) == 0
    (rec,) = _reconstruct(workdir, tmp_path / "m.jsonl", tmp_path / "res.jsonl")
    assert rec["error"]["type"] == "ZeroCurrent"
    assert rec["error"]["stage"] == "current_center"


# -- reconstruct --------------------------------------------------------------

@pytest.fixture(scope="module")
def results(workdir):
    return _reconstruct(workdir, workdir / "meas.jsonl", workdir / "res.jsonl")


def test_noiseless_reconstruction_accuracy(workdir, results):
    ref = formats.read_boundary(workdir / "ref.json")
    rec = results[0]
    poly = np.column_stack([rec["boundary"]["r"], rec["boundary"]["z"]])
    assert hausdorff(poly, ref["polyline"]) < 0.01 * ref["minor_radius"]
    assert rec["boundary"]["kind"] == "xpoint"
    assert all(v >= 0 for v in rec["timings_ms"].values())


def test_deterministic_results(workdir, results, tmp_path):
    again = _reconstruct(workdir, workdir / "meas.jsonl", tmp_path / "again.jsonl", "--workers", "3")
    assert [_strip(r) for r in again] == [_strip(r) for r in results]


def test_stdin_and_stdout(workdir, results, monkeypatch, capsys):
    monkeypatch.setattr("sys.stdin", io.StringIO((workdir / "meas.jsonl").read_text()))
    assert main(["reconstruct", str(workdir / "machine.json"), str(workdir / "bank.pbk"), "-"]) == 0
    out = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
    assert [_strip(r) for r in out] == [_strip(r) for r in results]


def test_stage_isolation(workdir, results, tmp_path):
    recs = list(formats.read_jsonl(workdir / "meas.jsonl"))
    broken = dict(recs[1], b=recs[1]["b"][:-3])
    missing = {k: v for k, v in recs[1].items() if k != "f"}
    missing["seq"] = 7
    lines = [recs[0], broken, missing, recs[2]]
    formats.write_jsonl(tmp_path / "mixed.jsonl", lines)
    out = {r["seq"]: r for r in _reconstruct(workdir, tmp_path / "mixed.jsonl", tmp_path / "mixed_res.jsonl")}
    assert out[1]["error"]["stage"] in ("input", "fit")
    assert out[7]["error"]["stage"] == "input"
    assert _strip(out[0]) == _strip(results[0])
    assert _strip(out[2]) == _strip(results[2])


# -- plot data ----------------------------------------------------------------

def test_plotdata(workdir, results, machine, tmp_path):
    args = ["plotdata", str(workdir / "res.jsonl"), "-o", str(tmp_path / "a"), "--reference", str(workdir / "ref.json")]
    assert main(args) == 0
    lines = (tmp_path / "a" / "boundary_res_0.csv").read_text().splitlines()
    assert lines[0] == "r,z"
    assert lines[1] == lines[-1]
    res_lines = (tmp_path / "a" / "residuals_res_0.csv").read_text().splitlines()
    assert len(res_lines) - 1 == len(machine.sensors)
    summary = (tmp_path / "a" / "summary_res.csv").read_text().splitlines()
    assert len(summary) == 4
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["columns"]["boundary"] == ["r", "z"]
    args[3] = str(tmp_path / "b")
    assert main(args) == 0
    for name in manifest["files"] + ["manifest.json"]:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_plotdata_comparison(workdir, results, tmp_path):
    r6 = _reconstruct(workdir, workdir / "meas.jsonl", tmp_path / "order6.jsonl", "--n-e", "6", "--n-i", "6")
    assert main(["plotdata", str(workdir / "res.jsonl"), str(tmp_path / "order6.jsonl"), "-o",
                 str(tmp_path / "p"), "--reference", str(workdir / "ref.json")]) == 0
    rows = (tmp_path / "p" / "comparison.csv").read_text().splitlines()
    assert rows[0] == "seq,file,reference_file,hausdorff" and len(rows) == 4
    assert all(float(r.split(",")[-1]) < 0.01 for r in rows[1:])
    assert r6[0]["coeffs"]["n_e"] == 6


# -- configuration ------------------------------------------------------------

def test_config_precedence(tmp_path):
    (tmp_path / "cfg.json").write_text(json.dumps({"n_e": 5, "n_i": 5, "epsilon": 1e-3}))
    parser = build_parser()
    args = parser.parse_args(["precompute", "m.json", "-o", "x", "--config", str(tmp_path / "cfg.json"),
                              "--n-i", "6", "--single-pass"])
    cfg = resolve_config(args)
    assert (cfg.n_e, cfg.n_i, cfg.epsilon, cfg.two_pass) == (5, 6, 1e-3, False)
    assert cfg.h == PipelineConfig().h
    args = parser.parse_args(["precompute", "m.json", "-o", "x"])
    assert resolve_config(args) == PipelineConfig()


def test_bad_config_reported(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text(json.dumps({"n_e": 40}))
    code = main(["precompute", str(tmp_path / "missing.json"), "-o", str(tmp_path / "x"),
                 "--config", str(tmp_path / "cfg.json")])
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_config_validation():
    with pytest.raises(ValueError):
        PipelineConfig(n_e=13)
    with pytest.raises(ValueError):
        PipelineConfig(h=0.0)
    with pytest.raises(ValueError):
        PipelineConfig.from_dict({"bogus": 1})
