import csv
import json

import numpy as np
import pytest

from inverse_obstacle.cli import main
from inverse_obstacle.cli.datasets import (
    Dataset,
    DatasetFormatError,
    NoiseParams,
    add_noise,
    derive_rng,
    generate_dataset,
    sample_coeffs,
)
from inverse_obstacle.cli.experiments import (
    UsageError,
    benchmark,
    count_local_minima,
    reconstruct,
    study_frechet_decay,
    study_landscape,
    study_scaling,
)
from inverse_obstacle.forward import ScatterConfig, solve_forward
from inverse_obstacle.geometry import StarCoeffs, is_valid


def test_derive_rng_streams():
    a = derive_rng(3, "noise", 4).random(5)
    assert np.array_equal(a, derive_rng(3, "noise", 4).random(5))
    assert not np.array_equal(a, derive_rng(3, "noise", 5).random(5))
    assert not np.array_equal(a, derive_rng(3, "shapes", 4).random(5))


def test_sample_coeffs_ranges():
    rng = np.random.default_rng(0)
    for M in (0, 1, 5, 20):
        c = sample_coeffs(M, rng).c
        assert c.shape == (2 * M + 1,)
        assert 1.0 <= c[0] <= 1.2
        amp = np.hypot(c[1 : M + 1], c[M + 1 :])
        assert np.all(amp <= 0.1 + 1e-15)
        assert is_valid(c)
    with pytest.raises(ValueError):
        sample_coeffs(-1, rng)


def test_noise_zero_is_exact():
    data = np.random.default_rng(1).standard_normal((4, 3)) + 1j
    assert np.array_equal(add_noise(data, 0.0, np.random.default_rng(2)), data)


def test_noise_mean_amplitude():
    ones = np.ones(1_000_000, dtype=complex)
    noisy = add_noise(ones, 0.05, np.random.default_rng(3))
    # |xi e^{i chi}| = xi has mean sigma
    assert np.mean(np.abs(noisy - 1)) == pytest.approx(0.05, rel=0.01)
    assert np.max(np.abs(noisy - 1)) <= 0.1


def test_noise_params_checks():
    with pytest.raises(ValueError):
        NoiseParams(-0.1)
    with pytest.warns(UserWarning):
        NoiseParams(1.5)
    with pytest.raises(ValueError):
        add_noise(np.ones(3), -1.0, np.random.default_rng(0))


@pytest.fixture(scope="module")
def small_ds():
    cfg = ScatterConfig.make(5.0, 8, 6)
    return generate_dataset(5.0, 2, 3, cfg, seed=9)


def test_dataset_matches_forward(small_ds):
    cfg = small_ds.config
    u = solve_forward(small_ds.coeffs[1], cfg)[0]
    assert np.array_equal(u, small_ds.data[1])
    again = generate_dataset(5.0, 2, 3, cfg, seed=9)
    assert np.array_equal(again.coeffs, small_ds.coeffs)


def test_dataset_roundtrip(small_ds, tmp_path):
    path = tmp_path / "d.isds"
    small_ds.save(path)
    back = Dataset.load(path)
    assert (back.k, back.M, back.n_t, back.n_d, back.aperture) == (5.0, 2, 8, 6, "full")
    assert np.array_equal(back.coeffs, small_ds.coeffs)
    assert np.array_equal(back.data, small_ds.data)


def test_dataset_layout(small_ds):
    buf = small_ds.to_bytes()
    assert buf[:5] == b"ISDS1"
    head = 5 + 4 + 8 + 16 + 1 + 8
    rec = np.frombuffer(buf, "<f8", offset=head)[: 5 + 2 * 48]
    assert np.array_equal(rec[:5], small_ds.coeffs[0])
    # receiver index runs fastest, real part before imaginary
    assert rec[5] == small_ds.data[0, 0, 0].real and rec[6] == small_ds.data[0, 0, 0].imag
    assert rec[7] == small_ds.data[0, 1, 0].real


def test_dataset_corruption(small_ds):
    buf = small_ds.to_bytes()
    with pytest.raises(DatasetFormatError):
        Dataset.from_bytes(b"XXXXX" + buf[5:])
    with pytest.raises(DatasetFormatError):
        Dataset.from_bytes(buf[:-8])
    with pytest.raises(DatasetFormatError):
        Dataset.from_bytes(buf + b"\0" * 8)
    with pytest.raises(DatasetFormatError):
        Dataset.from_bytes(buf[:12])


def test_empty_dataset():
    ds = generate_dataset(5.0, 1, 0, ScatterConfig.make(5.0, 4, 4), seed=0)
    back = Dataset.from_bytes(ds.to_bytes())
    assert len(back) == 0 and back.coeffs.shape == (0, 3)


def test_reconstruct_gn_from_truth_neighbourhood():
    cfg = ScatterConfig.make(5.0, 32, 32)
    truth = StarCoeffs(np.array([1.02, 0.01, -0.02]))
    u = solve_forward(truth, cfg)[0]
    c, info = reconstruct("gn", u, cfg, 1)
    assert np.linalg.norm(c.c - truth.c) < 1e-6
    assert "termination" in info


def test_reconstruct_usage_errors():
    cfg = ScatterConfig.make(5.0, 8, 8)
    u = np.zeros((8, 8), dtype=complex)
    with pytest.raises(UsageError):
        reconstruct("dl", u, cfg, 5)
    with pytest.raises(UsageError):
        reconstruct("magic", u, cfg, 5)


def test_benchmark_single_case(tmp_path):
    rep = benchmark(5.0, 1, n_cases=1, classical_n=32, methods=["gn"])
    assert rep.methods == ["gn"]
    assert rep.errors("gn").shape == (1,)
    rep.write(tmp_path)
    rows = list(csv.reader(open(tmp_path / "summary.csv")))
    assert rows[0] == ["metric", "GN"] and len(rows) == 3
    assert float(rows[1][1]) == rep.mean_error("gn")
    assert json.loads((tmp_path / "report.json").read_text())["cases"][0]["case"] == 0
    with pytest.raises(UsageError):
        benchmark(5.0, 1, n_cases=1, methods=["dl"])


def test_frechet_decay_rows():
    rows = study_frechet_decay(5.0, 12, 48, 48)
    assert rows.shape == (12, 2)
    assert np.array_equal(rows[:, 0], np.arange(1, 13))
    assert rows[:, 1].max() == 1.0
    assert rows[-1, 1] < rows[0, 1]


def test_landscape_small():
    a, b, F = study_landscape(5.0, grid_size=5, extent=0.1, n_t=16, n_d=16)
    assert F.shape == (5, 5)
    assert F[2, 2] == 0.0
    assert np.all(F[np.isfinite(F)] >= 0)
    assert count_local_minima(F) >= 1


def test_count_local_minima_examples():
    F = np.array([[3.0, 3, 3, 3, 3], [3, 1, 3, 1, 3], [3, 3, 3, 3, 3]])
    assert count_local_minima(F) == 2
    F[0, 0] = np.nan
    assert count_local_minima(F) == 1
    assert count_local_minima(np.ones((3, 3))) == 0


def test_scaling_loose_target_stops_at_smallest_size():
    rows = study_scaling([10.0], eps_v=1.0, sizes=(4, 8), epochs=3, n_val=4, n=16)
    assert rows[0].M == 0 and rows[0].threshold == 4 and rows[0].sizes == [4]
    rows = study_scaling([10.0], eps_v=0.0, sizes=(4,), epochs=3, n_val=4, n=16)
    assert rows[0].budget_exceeded
    with pytest.raises(ValueError):
        study_scaling([9.0], sizes=(4,), epochs=3, n_val=4, n=16)


def test_cli_gen_data_and_predict(tmp_path):
    ds = tmp_path / "d.isds"
    assert main(["gen-data", "--k", "5", "--M", "1", "--nt", "8", "--nd", "8", "--count", "4",
                 "--out", str(ds)]) == 0
    assert len(Dataset.load(ds)) == 4
    model = tmp_path / "m.isnn"
    assert main(["train", "--dataset", str(ds), "--epochs", "3", "--widths", "4", "2",
                 "--padding", "1", "--out", str(model)]) == 0
    out = tmp_path / "p.csv"
    assert main(["predict", "--model", str(model), "--dataset", str(ds), "--out", str(out)]) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0][:2] == ["index", "relative_error"] and len(rows) == 5


def test_cli_exit_codes(tmp_path, capsys):
    out = str(tmp_path / "x")
    assert main(["predict", "--dataset", str(tmp_path / "missing"), "--model", out, "--out", out]) == 2
    bad = tmp_path / "bad.isds"
    bad.write_bytes(b"nonsense")
    assert main(["train", "--dataset", str(bad), "--out", out]) == 2
    assert main(["reconstruct", "--method", "dl", "--out", out]) == 2
    assert "error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        main(["reconstruct", "--method", "nope", "--out", out])


def test_cli_reconstruct_writes_report(tmp_path):
    out = tmp_path / "r.json"
    assert main(["reconstruct", "--method", "gn", "--M", "1", "--nt", "16", "--nd", "16", "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["method"] == "gn" and len(rep["c_est"]) == 3
