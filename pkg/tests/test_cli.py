# -*- coding: utf-8 -*-

import json

import pandas as pd
import pytest

from lob_cusum import __title__, __version__
from lob_cusum.cli import DEFAULT_MANIFEST, build_parser, file_digest, main, parse_run
from lob_cusum.cusum import REGIME_COLUMNS
from lob_cusum.errors import ConfigError, LobCusumError, Nonconvergence
from lob_cusum.hawkes import HawkesParams, simulate
from lob_cusum.trades_through import (
    from_marked_events,
    read_trades_through_csv,
    write_trades_through_csv,
)


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


class TestParseRun:
    """
    Test argument parsing and validation
    """

    def test_subcommands(self):
        _, subparsers = build_parser()
        assert set(subparsers) == {
            "ingest",
            "synth",
            "extract",
            "simulate",
            "fit",
            "diagnose",
            "detect",
            "arl",
            "calibrate",
            "verify",
        }

    def test_defaults(self):
        run, _ = parse_run(["detect", "--events", "e", "--ref", "r", "--out", "o"])
        assert run.options["rho_up"] == 1.5
        assert run.options["rho_down"] == 0.5
        assert run.options["m"] == 5.0
        assert run.options["multiplicity"] == "ground"
        assert run.session is None

    def test_missing_required(self):
        with pytest.raises(ConfigError) as exc:
            parse_run(["extract", "--book", "b.csv"])
        assert "Subcommand 'extract' requires --trades, --out." in str(exc.value)

    def test_config_defaults(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"rho": 0.5, "m": 3.0}))
        run, _ = parse_run(["arl", "--config", str(path), "--m", "5"])
        assert run.options["rho"] == 0.5
        assert run.options["m"] == 5.0

    def test_config_unknown_key(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"rho": 0.5, "colour": "red"}))
        with pytest.raises(ConfigError) as exc:
            parse_run(["arl", "--config", str(path)])
        assert "Unknown configuration key(s): colour." in str(exc.value)

    def test_session_parsed(self):
        run, _ = parse_run(
            ["fit", "--events", "e", "--out", "o", "--session", "10:00:00-16:00:00"]
        )
        assert run.session.duration_seconds == 21_600.0


class TestFileDigest:
    """
    Test input digests
    """

    def test_digest(self, tmp_path):
        path = tmp_path / "a.txt"
        path.write_bytes(b"abc")
        assert file_digest(str(path)) == (
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        )

    def test_missing(self, tmp_path):
        with pytest.raises(LobCusumError) as exc:
            file_digest(str(tmp_path / "none"))
        assert "Unable to read input" in str(exc.value)


class TestExitCodes:
    """
    Test exit codes of the command line
    """

    def test_no_command(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_option(self):
        assert main(["arl", "--colour", "red"]) == 2

    def test_missing_required(self, workdir, capsys):
        assert main(["arl", "--rho", "0.5"]) == 2
        assert "requires --m" in capsys.readouterr().err

    @pytest.mark.parametrize(
        "argv",
        [
            ["arl", "--rho", "1", "--m", "5"],
            ["arl", "--rho", "0.5", "--m", "-1"],
            ["verify", "arl", "--rho", "0.5", "--m", "1"],
        ],
    )
    def test_invalid_configuration(self, workdir, argv):
        assert main(argv) == 2

    def test_data_error(self, workdir, capsys):
        code = main(["extract", "--book", "missing.csv", "--trades", "t", "--out", "o"])
        assert code == 1
        assert f"{__title__}: error:" in capsys.readouterr().err

    def test_malformed_input(self, workdir, write_csv, trades_csv):
        book = write_csv("ts_ns,side,level,price_ticks,size\n1,B,1,10,x\n")
        argv = ["extract", "--book", book, "--trades", trades_csv, "--out", "tt.csv"]
        assert main(argv) == 1

    def test_fit_nonconvergence(self, workdir, mocker, capsys):
        (workdir / "tt.csv").write_text(
            "ts_ns,side,depth,volume\n"
            "34200000000000,-1,1,5\n34201000000000,1,2,7\n"
        )
        mock_fit = mocker.patch(
            "lob_cusum.cli.fit_mle", side_effect=Nonconvergence("stalled")
        )
        assert main(["fit", "--events", "tt.csv", "--out", "params.json"]) == 1
        assert mock_fit.call_count == 1
        assert "stalled" in capsys.readouterr().err
        assert not (workdir / "params.json").exists()

    def test_verify_arl_needs_threshold(self, workdir, capsys):
        assert main(["verify", "arl", "--rho", "1.5", "--seed", "0"]) == 2
        assert "verify arl requires --m" in capsys.readouterr().err

    def test_verify_epsilon_events_need_ref(self, workdir, capsys):
        argv = ["verify", "epsilon", "--rho", "0.5", "--seed", "0"]
        assert main(argv + ["--events", "tt.csv"]) == 2
        assert "requires --ref" in capsys.readouterr().err


class TestFormulaCommands:
    """
    Test arl and calibrate output
    """

    def test_arl(self, workdir, capsys):
        assert main(["arl", "--rho", "0.5", "--m", "5"]) == 0
        assert capsys.readouterr().out == "184.186163\n"
        assert (workdir / DEFAULT_MANIFEST).exists()

    def test_arl_with_edd(self, workdir, capsys):
        assert main(["arl", "--rho", "1.5", "--m", "5", "--edd"]) == 0
        assert capsys.readouterr().out.split() == ["58.527441", "17.771798"]

    def test_arl_from_config(self, workdir, capsys):
        (workdir / "run.json").write_text(json.dumps({"rho": 0.5, "m": 3}))
        assert main(["arl", "--config", "run.json"]) == 0
        assert capsys.readouterr().out == "34.937027\n"

    def test_surface(self, workdir):
        argv = ["arl", "--rho", "0.5", "--m", "1", "--surface-out", "surface.csv"]
        argv += ["--rhos", "0.5,1.5", "--ms", "1,5"]
        assert main(argv) == 0
        frame = pd.read_csv(workdir / "surface.csv")
        assert list(frame.columns) == ["rho", "m", "arl", "edd"]
        assert len(frame) == 4
        assert (workdir / "surface.csv.manifest.json").exists()

    def test_calibrate(self, workdir, capsys):
        assert main(["calibrate", "--rho", "0.5", "--target", "184.186163"]) == 0
        assert capsys.readouterr().out == "5.000000\n"


class TestManifest:
    """
    Test run manifests
    """

    def test_contents(self, workdir, book_csv, trades_csv):
        out = str(workdir / "tt.csv")
        argv = ["extract", "--book", book_csv, "--trades", trades_csv, "--out", out]
        assert main(argv) == 0
        manifest = json.loads((workdir / "tt.csv.manifest.json").read_text())
        assert manifest["command"] == "extract"
        assert manifest["inputs"]["book"]["sha256"] == file_digest(book_csv)
        assert manifest["outputs"] == [out]
        assert manifest["seed"] is None
        assert manifest["versions"][__title__] == __version__
        assert {"numpy", "scipy", "pandas", "statsmodels"} <= set(manifest["versions"])

    def test_rerun_identical(self, workdir, book_csv, trades_csv):
        argv = ["extract", "--book", book_csv, "--trades", trades_csv]
        argv += ["--out", "tt.csv", "--manifest", "run.json"]
        assert main(argv) == 0
        first = (workdir / "run.json").read_bytes()
        assert main(argv) == 0
        assert (workdir / "run.json").read_bytes() == first

    def test_seeded_outputs_identical(self, workdir):
        argv = ["synth", "--seed", "4", "--duration", "60"]
        assert main(argv + ["--out-book", "b1.csv", "--out-trades", "t1.csv"]) == 0
        assert main(argv + ["--out-book", "b2.csv", "--out-trades", "t2.csv"]) == 0
        assert (workdir / "b1.csv").read_bytes() == (workdir / "b2.csv").read_bytes()
        assert (workdir / "t1.csv").read_bytes() == (workdir / "t2.csv").read_bytes()
        manifest = json.loads((workdir / "b1.csv.manifest.json").read_text())
        assert manifest["seed"] == 4


class TestDataCommands:
    """
    Test data subcommands
    """

    def test_ingest(self, workdir, book_csv, trades_csv, capsys):
        assert main(["ingest", "--book", book_csv, "--trades", trades_csv]) == 0
        assert json.loads(capsys.readouterr().out) == {"prints": 6, "snapshots": 2}

    def test_extract(self, workdir, book_csv, trades_csv):
        argv = ["extract", "--book", book_csv, "--trades", trades_csv]
        assert main(argv + ["--out", "tt.csv"]) == 0
        events = read_trades_through_csv(str(workdir / "tt.csv"))
        assert [(e.timestamp, e.depth, e.volume) for e in events] == [
            (1500, 1, 8),
            (2500, 2, 20),
            (2500, 2, 30),
        ]

    def test_simulate(self, workdir, hawkes_params):
        hawkes_params.save(str(workdir / "params.json"))
        argv = ["simulate", "--params", "params.json", "--seed", "3"]
        assert main(argv + ["--horizon", "100", "--out", "sim.csv"]) == 0
        events = read_trades_through_csv(str(workdir / "sim.csv"))
        assert events
        start = 34_200 * 1_000_000_000
        assert all(start <= e.timestamp <= start + 100 * 1_000_000_000 for e in events)

    def test_verify_arl(self, workdir, capsys):
        argv = ["verify", "arl", "--rho", "1.5", "--m", "1", "--seed", "0"]
        assert main(argv + ["--reps", "20"]) == 0
        result = json.loads(capsys.readouterr().out)
        assert result["arl"] == pytest.approx(2.8)
        assert result["edd"] == pytest.approx(2.421053, abs=1e-6)
        assert result["mc_arl"] >= 2

    def test_verify_epsilon(self, workdir, capsys):
        argv = ["verify", "epsilon", "--rho", "0.5", "--seed", "1", "--paths", "5"]
        assert main(argv + ["--eps", "0.1,0.01", "--out", "eps.json"]) == 0
        result = json.loads((workdir / "eps.json").read_text())
        assert result["epsilon"] == [0.1, 0.01]
        assert len(result["mean_gap"]) == 2
        assert json.loads(capsys.readouterr().out) == result

    def test_verify_epsilon_on_events(self, workdir, hawkes_params):
        hawkes_params.save(str(workdir / "params.json"))
        marked = simulate(hawkes_params, T=100.0, seed=4)
        events = from_marked_events(marked, 34_200 * 1_000_000_000)
        write_trades_through_csv(events, str(workdir / "tt.csv"))
        argv = ["verify", "epsilon", "--rho", "1.5", "--seed", "0"]
        argv += ["--events", "tt.csv", "--ref", "params.json", "--horizon", "100"]
        assert main(argv + ["--eps", "0.1,0.01", "--out", "eps.json"]) == 0
        result = json.loads((workdir / "eps.json").read_text())
        assert len(result["mean_gap"]) == 2
        assert result["mean_gap"][1] < result["mean_gap"][0]
        manifest = json.loads((workdir / "eps.json.manifest.json").read_text())
        assert set(manifest["inputs"]) == {"events", "ref"}


class TestPipeline:
    """
    Test synthetic data through fitting and detection
    """

    def test_end_to_end(self, workdir, capsys):
        synth = ["synth", "--seed", "7", "--duration", "1200", "--trade-rate", "1.0"]
        assert main(synth + ["--out-book", "b.csv", "--out-trades", "t.csv"]) == 0
        extract = ["extract", "--book", "b.csv", "--trades", "t.csv"]
        assert main(extract + ["--out", "tt.csv"]) == 0
        fit = ["fit", "--events", "tt.csv", "--horizon", "1200", "--n-bins", "1"]
        assert main(fit + ["--no-eta", "--out", "params.json"]) == 0
        params = HawkesParams.load(str(workdir / "params.json"))
        assert params.horizon == 1200.0
        assert params.n_bins == 1

        diagnose = ["diagnose", "--events", "tt.csv", "--params", "params.json"]
        assert main(diagnose + ["--lags", "5", "--qq-out", "qq.csv"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert set(report) == {"A", "B", "pooled"}
        assert (workdir / "qq.csv").exists()

        detect = ["detect", "--events", "tt.csv", "--ref", "params.json"]
        assert main(detect + ["--out", "regimes.csv"]) == 0
        frame = pd.read_csv(workdir / "regimes.csv")
        assert list(frame.columns) == REGIME_COLUMNS
        assert set(frame["regime"]) <= {"UP", "DOWN", "NEUTRAL"}
        assert frame["ts_ns"].is_monotonic_increasing
        for name in ("b.csv", "tt.csv", "params.json", "regimes.csv"):
            assert (workdir / f"{name}.manifest.json").exists()
