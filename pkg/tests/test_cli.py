import json

import numpy as np
import pandas as pd
import pytest

from vcbart.archive import archive_hash, load_draws
from vcbart.cli import main, n_workers
from vcbart.exceptions import ConfigError


def write_panel_csv(path, n_subjects=30, n_i=2, seed=0):
    rng = np.random.default_rng(seed)
    N = n_subjects * n_i
    x = rng.standard_normal(N)
    z = rng.uniform(size=N)
    y = (1.0 + 2.0 * z) * x + 0.3 * rng.standard_normal(N)
    frame = pd.DataFrame({
        "subject_id": np.repeat(np.arange(n_subjects), n_i),
        "time": np.tile(np.arange(n_i), n_subjects),
        "y": y, "x1": x, "z1": z,
    })
    frame.to_csv(path, index=False)
    return frame


FIT_FLAGS = ["--x-cols", "x1", "--z-cols", "z1", "--n-trees", "5",
             "--n-iter", "60", "--n-burn", "20", "--n-chains", "1",
             "--seed", "4"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One fitted archive shared by the read-only subcommand tests."""
    root = tmp_path_factory.mktemp("cli")
    data_csv = root / "panel.csv"
    write_panel_csv(data_csv)
    archive = root / "draws.jsonl.gz"
    code = main(["fit", "--data", str(data_csv), "--out", str(archive)]
                + FIT_FLAGS)
    assert code == 0
    return root, data_csv, archive


# ----------------------------------------------------------------------
# simulate


def test_simulate_writes_panel_truth_manifest(tmp_path, capsys):
    out = tmp_path / "sim"
    code = main(["simulate", "--out-dir", str(out), "--n", "6",
                 "--n-i", "2", "--seed", "3"])
    assert code == 0
    assert "wrote 12 rows" in capsys.readouterr().out

    first = (out / "data.csv").read_text().splitlines()[0]
    assert first.startswith("# config_hash=")
    data = pd.read_csv(out / "data.csv", comment="#")
    assert len(data) == 12
    assert {"subject_id", "time", "y", "x1", "x5", "z1", "z20"} \
        <= set(data.columns)

    truth = pd.read_csv(out / "truth.csv", comment="#")
    assert list(truth.columns[:2]) == ["subject_id", "time"]
    assert {"beta0", "beta5"} <= set(truth.columns)

    with open(out / "manifest.json") as fh:
        manifest = json.load(fh)
    assert manifest["true_support"]["beta0"] == [0, 1]
    assert manifest["params"]["seed"] == 3


def test_simulate_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--out-dir", str(a), "--n", "4", "--n-i", "2",
                 "--seed", "9"]) == 0
    assert main(["simulate", "--out-dir", str(b), "--n", "4", "--n-i", "2",
                 "--seed", "9"]) == 0
    assert (a / "data.csv").read_bytes() == (b / "data.csv").read_bytes()


# ----------------------------------------------------------------------
# fit


def test_fit_writes_a_loadable_archive(pipeline, capsys):
    _, _, archive = pipeline
    draws = load_draws(archive)
    assert draws.meta["x_names"] == ["x1"]
    assert draws.meta["z_names"] == ["z1"]
    assert draws.meta["hyperparameters"]["n_trees"] == 5
    assert draws.n_draws == 40


def test_repeated_fits_share_bytes(pipeline, tmp_path):
    _, data_csv, archive = pipeline
    again = tmp_path / "again.jsonl.gz"
    assert main(["fit", "--data", str(data_csv), "--out", str(again)]
                + FIT_FLAGS) == 0
    assert archive_hash(again) == archive_hash(archive)

    other = tmp_path / "other.jsonl.gz"
    flags = FIT_FLAGS[:-1] + ["5"]  # different seed
    assert main(["fit", "--data", str(data_csv), "--out", str(other)]
                + flags) == 0
    assert archive_hash(other) != archive_hash(archive)


def test_parallel_chains_match_sequential_bytes(tmp_path, monkeypatch):
    data_csv = tmp_path / "panel.csv"
    write_panel_csv(data_csv, n_subjects=12, n_i=2)
    flags = ["--x-cols", "x1", "--z-cols", "z1", "--n-trees", "4",
             "--n-iter", "40", "--n-burn", "10", "--n-chains", "2",
             "--seed", "8"]
    seq = tmp_path / "seq.jsonl"
    monkeypatch.setenv("VCBART_THREADS", "1")
    assert main(["fit", "--data", str(data_csv), "--out", str(seq)]
                + flags) == 0
    par = tmp_path / "par.jsonl"
    monkeypatch.setenv("VCBART_THREADS", "2")
    assert main(["fit", "--data", str(data_csv), "--out", str(par)]
                + flags) == 0
    assert archive_hash(seq) == archive_hash(par)


def test_config_file_layering(pipeline, tmp_path):
    _, data_csv, _ = pipeline
    cfg = tmp_path / "settings.cfg"
    cfg.write_text("n_trees = 3\nn_iter = 30\nn_burn = 10\nn_chains = 1\n"
                   "seed = 1\n")
    base = ["fit", "--data", str(data_csv), "--x-cols", "x1",
            "--z-cols", "z1", "--config", str(cfg)]

    from_file = tmp_path / "file.jsonl"
    assert main(base + ["--out", str(from_file)]) == 0
    assert load_draws(from_file).meta["hyperparameters"]["n_trees"] == 3

    overridden = tmp_path / "flag.jsonl"
    assert main(base + ["--out", str(overridden), "--n-trees", "7"]) == 0
    assert load_draws(overridden).meta["hyperparameters"]["n_trees"] == 7


def test_tau_scale_rescales_jump_sd(pipeline, tmp_path):
    _, data_csv, _ = pipeline
    out = tmp_path / "scaled.jsonl"
    assert main(["fit", "--data", str(data_csv), "--out", str(out)]
                + FIT_FLAGS + ["--tau-scale", "0.5"]) == 0
    jump = load_draws(out).meta["hyperparameters"]["jump_sd"]
    np.testing.assert_allclose(jump, 0.5 / np.sqrt(5))


# ----------------------------------------------------------------------
# summarize / select / predict


def test_summarize_sweeps_a_grid(pipeline, tmp_path):
    _, _, archive = pipeline
    out = tmp_path / "surfaces.csv"
    assert main(["summarize", "--archive", str(archive), "--out", str(out),
                 "--grid-size", "11"]) == 0
    first = out.read_text().splitlines()[0]
    cfg = load_draws(archive).meta["config_hash"]
    assert first == f"# config_hash={cfg}"
    frame = pd.read_csv(out, comment="#")
    assert set(frame["coefficient"]) == {0, 1}
    assert len(frame) == 22
    assert set(frame["modifier"]) == {"z1"}
    assert np.all(frame["lower"] <= frame["upper"])

    by_index = tmp_path / "by_index.csv"
    assert main(["summarize", "--archive", str(archive),
                 "--out", str(by_index), "--grid-size", "11",
                 "--modifier", "1"]) == 0
    pd.testing.assert_frame_equal(pd.read_csv(by_index, comment="#"), frame)


def test_summarize_rejects_unknown_modifier(pipeline, tmp_path):
    _, _, archive = pipeline
    out = tmp_path / "x.csv"
    assert main(["summarize", "--archive", str(archive), "--out", str(out),
                 "--modifier", "nope"]) == 2
    assert main(["summarize", "--archive", str(archive), "--out", str(out),
                 "--modifier", "99"]) == 2


def test_summarize_at_explicit_points(pipeline, tmp_path):
    _, _, archive = pipeline
    query = tmp_path / "points.csv"
    pd.DataFrame({"z1": [0.1, 0.5, 0.9]}).to_csv(query, index=False)
    out = tmp_path / "at_points.csv"
    assert main(["summarize", "--archive", str(archive), "--out", str(out),
                 "--data", str(query)]) == 0
    frame = pd.read_csv(out, comment="#")
    assert len(frame) == 6  # 2 coefficients x 3 points
    assert set(frame["row"]) == {0, 1, 2}


def test_select_table(pipeline, tmp_path):
    _, _, archive = pipeline
    out = tmp_path / "selection.csv"
    assert main(["select", "--archive", str(archive), "--out", str(out)]) == 0
    frame = pd.read_csv(out, comment="#")
    assert len(frame) == 2  # (p+1) coefficients x R=1 modifier
    assert frame["probability"].between(0, 1).all()
    assert frame["in_mpm"].dtype == bool
    # the slope genuinely varies with z1, so its ensemble should split on it
    slope = frame[frame["coefficient"] == 1].iloc[0]
    assert slope["probability"] > 0.5 and slope["in_mpm"]


def test_predict_marginal(pipeline, tmp_path):
    root, data_csv, archive = pipeline
    out = tmp_path / "pred.csv"
    assert main(["predict", "--archive", str(archive), "--data",
                 str(data_csv), "--out", str(out)]) == 0
    frame = pd.read_csv(out, comment="#")
    assert list(frame.columns) == ["subject_id", "time", "mean", "lower",
                                   "upper"]
    assert len(frame) == 60
    assert np.all(frame["lower"] <= frame["mean"])
    assert np.all(frame["mean"] <= frame["upper"])
    truth = pd.read_csv(data_csv)
    rmse = float(np.sqrt(((frame["mean"] - truth["y"]) ** 2).mean()))
    assert rmse < 1.0


def test_predict_conditional_requires_history(pipeline, tmp_path):
    _, data_csv, archive = pipeline
    out = tmp_path / "pred.csv"
    assert main(["predict", "--archive", str(archive), "--data",
                 str(data_csv), "--out", str(out),
                 "--mode", "conditional"]) == 2
    assert main(["predict", "--archive", str(archive), "--data",
                 str(data_csv), "--out", str(out), "--mode", "conditional",
                 "--history", "0.5,-0.2"]) == 0


def test_predict_rejects_mismatched_columns(pipeline, tmp_path):
    _, data_csv, archive = pipeline
    out = tmp_path / "pred.csv"
    assert main(["predict", "--archive", str(archive), "--data",
                 str(data_csv), "--out", str(out),
                 "--x-cols", "nope"]) == 2

    stripped = tmp_path / "noz.csv"
    pd.read_csv(data_csv).drop(columns=["z1"]).to_csv(stripped, index=False)
    assert main(["predict", "--archive", str(archive), "--data",
                 str(stripped), "--out", str(out)]) == 3


# ----------------------------------------------------------------------
# cv-rho and benchmark


def test_cv_rho_subcommand(pipeline, tmp_path, capsys):
    _, data_csv, _ = pipeline
    out = tmp_path / "cv.csv"
    code = main(["cv-rho", "--data", str(data_csv), "--out", str(out),
                 "--grid", "0,0.5", "--folds", "2", "--x-cols", "x1",
                 "--z-cols", "z1", "--n-trees", "4", "--n-iter", "40",
                 "--n-burn", "10", "--n-chains", "1", "--seed", "1"])
    assert code == 0
    assert "chosen rho:" in capsys.readouterr().out
    frame = pd.read_csv(out, comment="#")
    assert list(frame.columns) == ["rho", "fold", "rmse"]
    assert len(frame) == 4
    assert set(frame["rho"]) == {0.0, 0.5}


def test_benchmark_subcommand(tmp_path, capsys):
    out = tmp_path / "bench"
    code = main(["benchmark", "--out-dir", str(out), "--replicates", "1",
                 "--n-trees", "3", "--n-iter", "30", "--n-burn", "10",
                 "--n-chains", "1", "--seed", "2"])
    assert code == 0
    text = capsys.readouterr().out
    assert "replicate 1/1" in text
    assert "beta MSE below linear in" in text
    frame = pd.read_csv(out / "results.csv")
    assert set(frame["method"]) == {"vcbart", "linear"}
    with open(out / "manifest.json") as fh:
        assert json.load(fh)["n_replicates"] == 1


# ----------------------------------------------------------------------
# exit codes and environment


def test_missing_data_file_is_a_data_error(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "absent.csv"),
                 "--out", str(tmp_path / "o.jsonl")] + FIT_FLAGS) == 3


def test_unknown_config_key_is_a_config_error(pipeline, tmp_path):
    _, data_csv, _ = pipeline
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("n_trees = 4\nturbo = yes\n")
    assert main(["fit", "--data", str(data_csv), "--config", str(cfg),
                 "--out", str(tmp_path / "o.jsonl"),
                 "--x-cols", "x1", "--z-cols", "z1"]) == 2


def test_missing_archive_is_a_config_error(tmp_path):
    query = tmp_path / "q.csv"
    pd.DataFrame({"x1": [0.0], "z1": [0.5]}).to_csv(query, index=False)
    assert main(["predict", "--archive", str(tmp_path / "none.jsonl"),
                 "--data", str(query), "--out", str(tmp_path / "o.csv")]) == 2


def test_overflowing_response_is_a_data_error(tmp_path):
    # std(y) overflows to inf; standardization must refuse rather than
    # divide the response away and archive inf-scaled draws
    frame = pd.DataFrame({
        "subject_id": np.repeat(np.arange(10), 2),
        "time": np.tile([0, 1], 10),
        "y": np.resize([1e200, -1e200], 20),
        "x1": np.resize([1e200, -1e200], 20),
        "z1": np.linspace(0, 1, 20),
    })
    data_csv = tmp_path / "huge.csv"
    frame.to_csv(data_csv, index=False)
    assert main(["fit", "--data", str(data_csv),
                 "--out", str(tmp_path / "o.jsonl")] + FIT_FLAGS) == 3


def test_sampler_blowup_is_exit_four(pipeline, tmp_path, monkeypatch):
    _, data_csv, _ = pipeline
    from vcbart.exceptions import NumericalError
    import vcbart.cli as cli_module

    def exploding_fit(*args, **kwargs):
        raise NumericalError("non-finite residuals at sweep 3")

    monkeypatch.setattr(cli_module, "fit_posterior", exploding_fit)
    assert main(["fit", "--data", str(data_csv),
                 "--out", str(tmp_path / "o.jsonl")] + FIT_FLAGS) == 4


def test_thread_env_validation(monkeypatch):
    monkeypatch.setenv("VCBART_THREADS", "3")
    assert n_workers() == 3
    monkeypatch.setenv("VCBART_THREADS", "zero")
    with pytest.raises(ConfigError):
        n_workers()
    monkeypatch.setenv("VCBART_THREADS", "0")
    with pytest.raises(ConfigError):
        n_workers()
    monkeypatch.delenv("VCBART_THREADS")
    assert n_workers() == 1


def test_bad_thread_env_fails_fit_with_config_exit(pipeline, tmp_path,
                                                   monkeypatch):
    _, data_csv, _ = pipeline
    monkeypatch.setenv("VCBART_THREADS", "-2")
    assert main(["fit", "--data", str(data_csv),
                 "--out", str(tmp_path / "o.jsonl")] + FIT_FLAGS) == 2


def test_unknown_subcommand_exits_via_argparse():
    with pytest.raises(SystemExit) as err:
        main(["frobnicate"])
    assert err.value.code == 2


def test_version_flag(capsys):
    with pytest.raises(SystemExit) as err:
        main(["--version"])
    assert err.value.code == 0
    assert "vcbart" in capsys.readouterr().out
