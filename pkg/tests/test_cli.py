import hashlib
from pathlib import Path

import pytest

from gnrul.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USER, UserError, main, parse_config
from gnrul.gradcore import NumericError
from gnrul import trainer

SMALL = """
# tiny end-to-end configuration
sim.n_steps = 60
sim.segment_length = 32
sim.n_pilot = 50
sim.n_train = 3
sim.n_test = 2
sampler.window = 300
sampler.min_spacing = 20
model.latent = 4
model.hidden = 6
model.n_core = 1
model.head_hidden = 6
model.lstm_hidden = 5
train.max_epochs = 2
train.samples_per_experiment = 6
train.batch_size = 8
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "run.cfg"
    cfg.write_text(SMALL)
    assert main(["simulate", "--config", str(cfg), "--out", str(root / "data"), "--seed", "3"]) == EXIT_OK
    return root, cfg


def digest(directory):
    h = hashlib.sha256()
    for p in sorted(Path(directory).rglob("*")):
        if p.is_file():
            h.update(str(p.relative_to(directory)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


class TestConfig:
    def test_empty_is_valid(self):
        cfg = parse_config("")
        assert cfg["sim"] == {} and cfg["paths"] == {}

    def test_types(self):
        cfg = parse_config("sim.z_f = none\nsampler.schedule = 1, 3\ntrain.clip_norm = 5\nsampler.self_edges = true")
        assert cfg["sim"]["z_f"] is None
        assert cfg["sampler"]["schedule"] == (1, 3)
        assert cfg["train"]["clip_norm"] == 5.0
        assert cfg["sampler"]["self_edges"] is True

    @pytest.mark.parametrize("text", ["sim.bogus = 1", "nosection = 1", "sim.n_steps = ten", "just text"])
    def test_errors_name_the_line(self, text):
        with pytest.raises(UserError, match="<config>:1"):
            parse_config(text)


class TestSimulate:
    def test_layout_and_summary(self, workspace):
        root, _ = workspace
        summary = (root / "data" / "summary.csv").read_text().splitlines()
        assert summary[0] == "exp_id,split,n_obs,failure_time,condition"
        assert len(summary) == 1 + 5
        assert sum(line.split(",")[1] == "test" for line in summary[1:]) == 2

    def test_same_seed_same_bytes(self, workspace, tmp_path):
        root, cfg = workspace
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "again"), "--seed", "3"]) == 0
        assert digest(tmp_path / "again") == digest(root / "data")

    def test_default_counts(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("sim.n_steps = 40\nsim.segment_length = 32\nsim.n_pilot = 20\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
        assert len((tmp_path / "d" / "summary.csv").read_text().splitlines()) == 1 + 15

    def test_invalid_config_exit_code(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("sim.rate = -1\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == EXIT_USER

    def test_missing_config(self, tmp_path):
        assert main(["simulate", "--config", str(tmp_path / "nope"), "--out", str(tmp_path)]) == EXIT_USER


@pytest.fixture(scope="module")
def run(workspace):
    root, cfg = workspace
    code = main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "gnn"),
                 "--model", "gnn-tcnn", "--seed", "1"])
    assert code == EXIT_OK
    return root, cfg


class TestTrainEvaluatePlot:
    def test_history(self, run):
        root, _ = run
        lines = (root / "gnn" / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,lr,train_nll,val_nll,n_past" and len(lines) == 3
        assert (root / "gnn" / "params.bin.manifest").is_file()

    def test_lstm(self, run, tmp_path):
        root, cfg = run
        assert main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(tmp_path),
                     "--model", "lstm-tcnn"]) == EXIT_OK
        assert "kind = lstm_tcnn" in (tmp_path / "model.cfg").read_text()

    def test_evaluate_n_past(self, run, capsys):
        root, cfg = run
        sizes = {}
        for n in (1, 10, 30):
            out = root / "reports" / f"r{n}.csv"
            assert main(["evaluate", "--config", str(cfg), "--checkpoint", str(root / "gnn"),
                         "--data", str(root / "data"), "--n-past", str(n), "--out", str(out)]) == EXIT_OK
            sizes[n] = len(out.read_text().splitlines())
            assert "aggregate NLL" in capsys.readouterr().out
        assert len(set(sizes.values())) == 1

    def test_evaluate_deterministic(self, run, tmp_path):
        root, cfg = run
        outs = []
        for i in range(2):
            out = tmp_path / f"{i}.csv"
            main(["evaluate", "--config", str(cfg), "--checkpoint", str(root / "gnn"), "--data", str(root / "data"),
                  "--n-past", "5", "--seed", "9", "--out", str(out)])
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_incompatible_manifest(self, run, tmp_path):
        root, cfg = run
        ckpt = tmp_path / "ckpt"
        ckpt.mkdir()
        for name in ("params.bin", "params.bin.manifest"):
            (ckpt / name).write_bytes((root / "gnn" / name).read_bytes())
        (ckpt / "model.cfg").write_text((root / "gnn" / "model.cfg").read_text().replace("latent = 4", "latent = 5"))
        assert main(["evaluate", "--checkpoint", str(ckpt), "--data", str(root / "data"),
                     "--out", str(tmp_path / "r.csv")]) == EXIT_USER

    def test_plot(self, run, tmp_path):
        root, cfg = run
        report = tmp_path / "r.csv"
        main(["evaluate", "--config", str(cfg), "--checkpoint", str(root / "gnn"), "--data", str(root / "data"),
              "--split", "all", "--out", str(report)])
        assert main(["plot", str(report), "--out", str(tmp_path / "svg")]) == EXIT_OK
        svgs = sorted((tmp_path / "svg").glob("*.svg"))
        assert len(svgs) == 5
        text = svgs[0].read_text()
        assert "remaining useful life [s]" in text and "time [s]" in text
        main(["plot", str(report), "--out", str(tmp_path / "svg2")])
        assert (tmp_path / "svg2" / svgs[0].name).read_bytes() == svgs[0].read_bytes()

    def test_plot_empty_report(self, tmp_path):
        report = tmp_path / "empty.csv"
        report.write_text(",".join(trainer.REPORT_COLUMNS) + "\n")
        assert main(["plot", str(report), "--out", str(tmp_path)]) == EXIT_USER

    def test_missing_dataset(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == EXIT_USER

    def test_numeric_failure_exit_code(self, run, tmp_path, monkeypatch):
        root, cfg = run

        def explode(*args, **kwargs):
            raise NumericError("non-finite gradient")

        monkeypatch.setattr(trainer, "adam_step", explode)
        code = main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(tmp_path)])
        assert code == EXIT_NUMERIC
        assert (tmp_path / "last_good" / "params.bin").is_file()


def test_ingest_command(tmp_path, monkeypatch):
    from gnrul import bearings
    from helpers import write_femto_fixture

    write_femto_fixture(tmp_path / "raw", "2_7", 230, length=8)
    monkeypatch.setattr(bearings, "default_split", lambda: {"2_7": bearings.SplitEntry("test", "B", 2290.0, 230)})
    code = main(["ingest", "--femto-root", str(tmp_path / "raw"), "--out", str(tmp_path / "ds")])
    assert code == EXIT_USER  # the 8-sample fixture is rejected at the default segment length
    code = main(["ingest", "--femto-root", str(tmp_path / "raw"), "--out", str(tmp_path / "ds"), "--segment-length", "8"])
    assert code == EXIT_OK
    assert (tmp_path / "ds" / "2_7" / "meta").is_file()
    assert main(["ingest", "--femto-root", str(tmp_path / "nothing"), "--out", str(tmp_path / "ds")]) == EXIT_USER
