import io
import json
from pathlib import Path

import numpy as np
import pytest

from mixattn import cli, reference
from mixattn import tensor as T

DATA = Path(__file__).parent / "data"


def run(argv):
    out = io.StringIO()
    code = cli.main(argv, out=out)
    return code, out.getvalue()


def write_qkv(tmp_path, shape, seed=0, prec="f32"):
    rng = np.random.default_rng(seed)
    paths = []
    with T.precision(prec):
        for name in "qkv":
            p = tmp_path / f"{name}.gft4"
            T.dump_tensor(T.tensor4(rng.standard_normal(shape)), p)
            paths.append(str(p))
    return paths


def test_verify_oracle_passes():
    code, text = run(["verify", "--suite", "oracle", "--seed", "7"])
    assert code == 0
    assert all(line.startswith("PASS") for line in text.splitlines()[:-1])


def test_verify_fault_injection(monkeypatch):
    good = reference.softmax_attention

    def misscaled(q, k, v, causal=False):
        return good(q * 1.5, k, v, causal)

    monkeypatch.setattr(reference, "softmax_attention", misscaled)
    code, text = run(["verify", "--suite", "oracle", "--seed", "7"])
    assert code == 1
    assert "FAIL windowed_vs_dense_f32" in text


def test_verify_unknown_suite():
    with pytest.raises(SystemExit) as err:
        cli.main(["verify", "--suite", "nope"])
    assert err.value.code == 2


def test_bench_grid_row_count(tmp_path):
    csv_path = tmp_path / "b.csv"
    code, text = run(["bench", "--B", "1", "--H", "1", "--E", "8", "--N", "1024,2048,4096",
                      "--kernels", "dense,windowed:64,windowed:128", "--repeats", "3", "--out", str(csv_path)])
    assert code == 0
    assert text.splitlines()[0].startswith("grid:")
    assert len(csv_path.read_text().splitlines()) == 1 + 3 * 3 * 3


def test_bench_windowed_expands_over_w(tmp_path):
    code, text = run(["bench", "--dry-run", "--kernels", "windowed,dense", "--W", "64,128"])
    assert "['windowed:64', 'windowed:128', 'dense']" in text


def test_bench_dry_run_writes_nothing(tmp_path):
    csv_path = tmp_path / "b.csv"
    code, text = run(["bench", "--dry-run", "--out", str(csv_path)])
    assert code == 0 and not csv_path.exists()
    assert "N=[1024, 2048, 4096]" in text and "(9 points)" in text


def test_bench_memory_refusal_continues(tmp_path, monkeypatch):
    monkeypatch.setenv("MAE_MEM_CAP_BYTES", str(2_000_000))
    csv_path = tmp_path / "b.csv"
    code, text = run(["bench", "--B", "1", "--H", "1", "--E", "8", "--N", "64,2048", "--kernels", "dense",
                      "--out", str(csv_path)])
    assert code == 0
    assert "skip N=2048" in text
    assert len(csv_path.read_text().splitlines()) == 1 + 3


@pytest.mark.slow
def test_bench_speedup_grows_with_n(tmp_path):
    csv_path = tmp_path / "b.csv"
    run(["bench", "--B", "1", "--H", "4", "--kernels", "dense,windowed:64", "--out", str(csv_path)])
    rows = [r for r in csv_path.read_text().splitlines()[1:]]
    med = {}
    for r in rows:
        f = r.split(",")
        med.setdefault((f[0], int(f[4])), []).append(float(f[10]))
    speedups = [np.median(med[("dense", n)]) / np.median(med[("windowed:64", n)]) for n in (1024, 2048, 4096)]
    assert speedups == sorted(speedups)


def test_partition_regression_text():
    argv = ["partition", "--B", "4", "--N", "4096", "--H", "16", "--E", "64", "--W", "64",
            "--profile", "gaudi-paper", "--mode", "paper"]
    code, text = run(argv)
    assert code == 0
    rows = [line for line in text.splitlines() if not line.lstrip().startswith(("#", "h0"))]
    assert len(rows) == 17
    assert sum(line.startswith("*") for line in rows) == 1
    assert text == (DATA / "partition_gaudi_paper.txt").read_text()
    assert run(argv)[1] == text


def test_partition_single_head():
    code, text = run(["partition", "--H", "1"])
    rows = [line for line in text.splitlines()[2:]]
    assert len(rows) == 2
    starred = [r for r in rows if r.startswith("*")]
    assert len(starred) == 1
    lat = [max(float(r.split()[-3]), float(r.split()[-2])) for r in rows]
    assert starred[0] == rows[int(np.argmin(lat))]


def test_partition_missing_calibration(tmp_path):
    code, _ = run(["partition", "--profile", str(tmp_path / "nope.json")])
    assert code == 3


def test_config_file_with_flag_override(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"H": 4, "mode": "paper", "N": "1024"}))
    _, text = run(["partition", "--config", str(cfg), "--H", "2"])
    assert "H=2" in text and "mode=paper" in text and "N=1024" in text


def test_run_full_window_matches_dense(tmp_path):
    q, k, v = write_qkv(tmp_path, (1, 2, 100, 16))
    a, b = str(tmp_path / "a.gft4"), str(tmp_path / "b.gft4")
    assert run(["run", "--q", q, "--k", k, "--v", v, "--output", a, "--tau", "1", "--W", "128"])[0] == 0
    assert run(["run", "--q", q, "--k", k, "--v", v, "--output", b, "--kernel", "dense"])[0] == 0
    assert np.max(np.abs(T.load_tensor(a) - T.load_tensor(b))) < 1e-5


def test_run_empty_file(tmp_path, capsys):
    q, k, v = write_qkv(tmp_path, (1, 1, 4, 4))
    empty = tmp_path / "empty.gft4"
    empty.write_bytes(b"")
    code, _ = run(["run", "--q", str(empty), "--k", k, "--v", v, "--output", str(tmp_path / "o")])
    assert code == 3
    assert "offset 0" in capsys.readouterr().err


def test_run_head_composition(tmp_path):
    q, k, v = write_qkv(tmp_path, (1, 2, 64, 8), seed=3)
    outs = {}
    for tau in ("0", "0.5", "1"):
        path = str(tmp_path / f"o{tau}.gft4")
        run(["run", "--q", q, "--k", k, "--v", v, "--output", path, "--tau", tau])
        outs[tau] = T.load_tensor(path)
    composed = np.concatenate([outs["1"][:, :1], outs["0"][:, 1:]], axis=1)
    np.testing.assert_array_equal(composed, outs["0.5"])


def test_run_prints_checksum_and_respects_precision(tmp_path):
    q, k, v = write_qkv(tmp_path, (1, 2, 10, 8), prec="f64")
    out = tmp_path / "o.gft4"
    code, text = run(["run", "--q", q, "--k", k, "--v", v, "--output", str(out), "--precision", "f64",
                      "--feature-map", "orf", "--m", "16", "--heads-mode", "self"])
    assert code == 0 and "checksum=" in text
    assert T.load_tensor(out).dtype == np.float64


def test_calibrate_command(tmp_path):
    prof = tmp_path / "p.json"
    raw = tmp_path / "raw.csv"
    code, text = run(["calibrate", "--B", "1", "--H", "2", "--E", "16", "--N", "256,512,1024",
                      "--out", str(prof), "--csv", str(raw)])
    assert code == 0
    data = json.loads(prof.read_text())
    assert data["perf0"] > 0 and data["perf1"] > 0
    assert len(raw.read_text().splitlines()) == 1 + 2 * 3 * 3
    code, text = run(["partition", "--profile", str(prof), "--H", "4"])
    assert code == 0 and "calibrated" in text


def test_calibrate_insufficient_range(tmp_path):
    code, _ = run(["calibrate", "--B", "1", "--H", "1", "--E", "8", "--N", "256,512"])
    assert code == 3
