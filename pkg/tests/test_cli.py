import json
import subprocess
import sys

import numpy as np
import pytest

from bodykit.cli import main
from bodykit.meshkit import read_obj, write_obj


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    assert main(["gen-data", "--n", "40", "--seed", "5", "--out", str(data)]) == 0
    assert main(["train-generator", "--data", str(data), "--out", str(root / "gen"), "--epochs", "2"]) == 0
    assert main(["train-skinner", "--data", str(data), "--out", str(root / "sk"), "--epochs", "2"]) == 0
    return root, data


def test_gen_data_twice_identical(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "gen-data", "--n", 6, "--seed", 7, "--out", tmp_path / name)[0] == 0
    for f in ("records.bin", "dataset.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    run_json = json.loads((tmp_path / "a" / "run.json").read_text())
    assert run_json["seed"] == 7 and run_json["command"] == "gen-data"


def test_train_outputs(trained):
    root, _ = trained
    for name in ("gen", "sk"):
        d = root / name
        assert (d / "manifest.json").exists() and (d / "weights.bin").exists()
        assert (d / "curves.csv").read_text().startswith("epoch,")
        r = json.loads((d / "run.json").read_text())
        assert r["config_hash"] and str(d) in r["checkpoint_hashes"]


def test_generate_then_measure(trained, tmp_path, capsys):
    root, data = trained
    ds_anthro = np.fromfile(data / "records.bin", dtype="<f4")  # any valid c will do
    meta = json.loads((data / "dataset.json").read_text())
    off = meta["fields"]["anthro"]["offset"]
    c = ds_anthro[off:off + 37].astype(float).tolist()
    (tmp_path / "a.json").write_text(json.dumps({"c": c}))
    code, out, _ = run(capsys, "generate", "--generator", root / "gen", "--measurements", tmp_path / "a.json",
                       "--out", tmp_path / "m.obj")
    assert code == 0
    report = json.loads(out)
    assert set(report) >= {"requested", "achieved", "relative_error"}
    assert read_obj(tmp_path / "m.obj").V == meta["V"]
    code, out, _ = run(capsys, "measure", "--mesh", tmp_path / "m.obj")
    assert code == 0 and json.loads(out)["tape"] == pytest.approx(report["achieved"], rel=1e-4)


def test_generate_named_measurements(trained, tmp_path, capsys):
    root, data = trained
    names = [e["name"] for e in json.loads((data / "dataset.json").read_text())["registry"]["entries"]]
    (tmp_path / "a.json").write_text(json.dumps({"sex": 1, "measurements": {n: 0.5 for n in names}}))
    code, _, _ = run(capsys, "generate", "--generator", root / "gen", "--measurements", tmp_path / "a.json",
                     "--out", tmp_path / "m.obj")
    assert code == 0
    (tmp_path / "b.json").write_text(json.dumps({"sex": 1, "measurements": {}}))
    code, _, err = run(capsys, "generate", "--generator", root / "gen", "--measurements", tmp_path / "b.json",
                       "--out", tmp_path / "m.obj")
    assert code == 1 and json.loads(err.strip())["error"] == "CliError"


def test_interpolate(trained, tmp_path, capsys):
    root, _ = trained
    c = [0.0] + [0.5] * 36
    (tmp_path / "a1.json").write_text(json.dumps({"c": c}))
    (tmp_path / "a2.json").write_text(json.dumps({"c": [1.0] + [0.6] * 36}))
    code, out, _ = run(capsys, "interpolate", "--generator", root / "gen", "--a1", tmp_path / "a1.json",
                       "--a2", tmp_path / "a2.json", "--steps", 3, "--out", tmp_path / "seq")
    assert code == 0 and len(json.loads(out)["files"]) == 3
    assert (tmp_path / "seq" / "step_002.obj").exists()


def test_pose_and_fit(trained, tmp_path, capsys):
    root, data = trained
    tpl = read_obj(data / "template.obj")
    from bodykit.procgen import Dataset

    ds = Dataset(data)
    (tmp_path / "p.json").write_text(json.dumps({"joints": ds.joints[0].tolist()}))
    code, _, _ = run(capsys, "pose", "--skinner", root / "sk", "--bind", data / "template.obj",
                     "--pose", tmp_path / "p.json", "--out", tmp_path / "posed.obj")
    assert code == 0 and read_obj(tmp_path / "posed.obj").V == tpl.V
    write_obj(tpl.with_vertices(ds.posed[0]), tmp_path / "target.obj")
    (tmp_path / "cfg.json").write_text(json.dumps({"iterations": 5, "stage1_iterations": 5}))
    code, out, _ = run(capsys, "fit", "--generator", root / "gen", "--skinner", root / "sk",
                       "--target", tmp_path / "target.obj", "--joints", tmp_path / "p.json", "--staged",
                       "--config", tmp_path / "cfg.json", "--out", tmp_path / "fit" / "fitted.obj")
    assert code == 0
    report = json.loads((tmp_path / "fit" / "report.json").read_text())
    assert "sections_mm" in report and len(report["c"]) == 37
    assert json.loads(out)["chamfer_mm"] == report["chamfer_mm"]
    code, _, err = run(capsys, "fit", "--generator", root / "gen", "--skinner", root / "sk",
                       "--target", tmp_path / "target.obj", "--staged", "--out", tmp_path / "f2.obj")
    assert code == 1 and "--joints" in err


def test_measure_learned(trained, tmp_path, capsys):
    root, data = trained
    assert run(capsys, "train-experts", "--data", data, "--out", tmp_path / "ex", "--epochs", 1,
               "--mask", "binary")[0] == 0
    code, out, _ = run(capsys, "measure", "--mesh", data / "template.obj", "--learned", "--experts", tmp_path / "ex")
    res = json.loads(out)
    assert code == 0 and set(res["learned"]) == set(res["tape"])


def test_train_p2a(tmp_path, capsys):
    data = tmp_path / "d"
    run(capsys, "gen-data", "--n", 130, "--seed", 1, "--out", data)
    code, out, _ = run(capsys, "train-p2a", "--data", data, "--out", tmp_path / "p2a", "--epochs", 2)
    assert code == 0 and np.isfinite(json.loads(out)["test_loss"])


def test_ablate_p2a(tmp_path, capsys):
    data = tmp_path / "d"
    run(capsys, "gen-data", "--n", 130, "--seed", 1, "--out", data)
    code, out, _ = run(capsys, "ablate", "p2a-fourier", "--data", data, "--epochs", 2, "--out", tmp_path / "ab")
    assert code == 0 and "ordering" in out
    rows = json.loads((tmp_path / "ab" / "ablate_p2a-fourier.json").read_text())["rows"]
    assert [r["fourier_f"] for r in rows] == [0, 8, 32]


def test_errors_are_one_json_line(tmp_path, capsys):
    code, _, err = run(capsys, "measure", "--mesh", tmp_path / "missing.obj")
    assert code == 1
    line = err.strip().splitlines()
    assert len(line) == 1 and json.loads(line[0])["message"].startswith("no such file")
    code, _, err = run(capsys, "train-generator", "--data", tmp_path, "--out", tmp_path / "g")
    assert code == 1 and "no dataset" in json.loads(err.strip())["message"]


def test_usage_error_exit_code():
    proc = subprocess.run([sys.executable, "-m", "bodykit", "nonsense"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert json.loads(proc.stderr.strip())["error"] == "usage"


def test_data_env_default(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("BODYKIT_DATA", str(tmp_path / "envdata"))
    assert run(capsys, "gen-data", "--n", 2)[0] == 0
    assert (tmp_path / "envdata" / "dataset.json").exists()
