import numpy as np
import pytest

from mixattn import tensor as T
from mixattn.bench import (
    CSV_COLUMNS,
    MEM_CAP_ENV,
    KernelSpec,
    MemoryCapError,
    kernel_flops,
    measure_kernel,
    read_csv,
    reports_from_rows,
    write_csv,
)
from mixattn.perf import PATH_LINEAR, PATH_SPARSE, WorkloadSize, calibrate, flops_linear, flops_sparse

SMALL = WorkloadSize(B=1, N=128, H=2, E=16, W=64)


@pytest.mark.parametrize("text", ["dense", "windowed:64", "linear", "recurrent", "cumsum", "outer", "mixed:64:1"])
def test_kernel_spec_roundtrip(text):
    assert str(KernelSpec.parse(text)) == text


@pytest.mark.parametrize("text", ["bogus", "windowed", "mixed:64"])
def test_kernel_spec_invalid(text):
    with pytest.raises(ValueError):
        KernelSpec.parse(text)


def test_kernel_paths():
    assert KernelSpec.parse("windowed:64").path == PATH_SPARSE
    assert KernelSpec.parse("linear").path == PATH_LINEAR
    assert KernelSpec.parse("dense").path is None


def test_kernel_flops_follow_model():
    size = WorkloadSize(2, 256, 4, 32, 64)
    assert kernel_flops(KernelSpec.parse("windowed:128"), size) == flops_sparse(WorkloadSize(2, 256, 4, 32, 128), 4)
    assert kernel_flops(KernelSpec.parse("linear"), size) == flops_linear(size, 4)
    mixed = kernel_flops(KernelSpec.parse("mixed:64:1"), size)
    assert mixed == flops_sparse(size, 1) + flops_linear(size, 3)


def test_report_has_three_samples_and_warmup():
    rep = measure_kernel(KernelSpec.parse("windowed:64"), SMALL, repeats=3, seed=1)
    assert len(rep.samples) == 3
    assert rep.warmup_seconds > 0
    assert rep.min <= rep.median <= max(rep.samples)
    assert rep.seconds == rep.min
    assert rep.flops_per_sec == pytest.approx(rep.flops / rep.min)


@pytest.mark.parametrize("kernel", ["dense", "windowed:64", "linear", "recurrent", "cumsum", "outer", "mixed:64:1"])
def test_repeats_are_deterministic(kernel):
    with T.verify_mode():
        rep = measure_kernel(KernelSpec.parse(kernel), SMALL, repeats=3, seed=9)
    assert len(set(rep.checksums)) == 1
    again = measure_kernel(KernelSpec.parse(kernel), SMALL, repeats=3, seed=9)
    assert again.checksums == rep.checksums


def test_too_few_repeats():
    with pytest.raises(ValueError):
        measure_kernel(KernelSpec.parse("dense"), SMALL, repeats=2)


def test_memory_cap_refusal(monkeypatch):
    with pytest.raises(MemoryCapError) as err:
        measure_kernel(KernelSpec.parse("cumsum"), SMALL, mem_cap=1000)
    assert err.value.required > 1000
    assert str(err.value.required) in str(err.value)
    monkeypatch.setenv(MEM_CAP_ENV, "10")
    with pytest.raises(MemoryCapError):
        measure_kernel(KernelSpec.parse("dense"), SMALL)


def test_csv_rows_and_header(tmp_path):
    path = tmp_path / "out.csv"
    rep = measure_kernel(KernelSpec.parse("mixed:64:1"), SMALL, repeats=3, seed=4)
    write_csv(path, rep.rows())
    write_csv(path, rep.rows())
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert sum(line.startswith("kernel") for line in lines) == 1
    rows = read_csv(path)
    assert len(rows) == 6
    assert rows[0]["h0"] == "1" and rows[0]["h1"] == "1" and rows[0]["W"] == "64"
    assert rows[0]["schema_version"] == "1"
    assert [r["repeat"] for r in rows[:3]] == ["0", "1", "2"]


def test_reports_from_rows(tmp_path):
    path = tmp_path / "out.csv"
    reps = [measure_kernel(KernelSpec.parse(k), SMALL, seed=2) for k in ("windowed:64", "linear")]
    for r in reps:
        write_csv(path, r.rows())
    back = reports_from_rows(read_csv(path))
    assert [str(r.kernel) for r in back] == ["windowed:64", "linear"]
    for a, b in zip(reps, back):
        assert b.flops == a.flops
        np.testing.assert_allclose(b.samples, a.samples, rtol=1e-8)


@pytest.mark.slow
def test_calibration_self_consistency():
    reps = [measure_kernel(KernelSpec.parse(k), WorkloadSize(1, n, 4, 64, 64), repeats=3)
            for k in ("windowed:64", "linear") for n in (1024, 2048, 4096, 8192)]
    prof = calibrate(reps)
    errs = [abs(r.flops / (prof.perf0 if r.path == PATH_SPARSE else prof.perf1) - r.seconds) / r.seconds
            for r in reps]
    assert np.median(errs) <= 0.25
