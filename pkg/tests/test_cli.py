"""End-to-end tests of the command-line front end.

Everything goes through parse_and_run (in-process) so exit codes and
stderr are observable without spawning interpreters.  A small speckle
pair is synthesized once per session with the synth subcommand and
shared by the correlation tests.
"""

import time

import numpy as np
import pytest
import yaml

from subsetdic.cli import _Progress, parse_and_run
from subsetdic.results_io import import_2d, import_strain, read_dic_csv


SYNTH_ARGS = ["synth", "--width", "400", "--height", "300",
              "--rng-seed", "3", "--field", "translation",
              "--shift", "0.25,0.4"]
DIC_ARGS = ["--roi-border", "20", "--seed", "200,150",
            "--subset-size", "21", "--subset-step", "10",
            "--max-displacement", "2", "--threads", "1"]


@pytest.fixture(scope="session")
def fixtures(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli_fixtures")
    rc = parse_and_run(SYNTH_ARGS + ["--out", str(d)])
    assert rc == 0
    return d


@pytest.fixture(scope="session")
def dic_run(fixtures, tmp_path_factory):
    """One correlation run shared by the strain and determinism tests."""
    out = tmp_path_factory.mktemp("cli_dic")
    rc = parse_and_run(["dic2d", "--ref", str(fixtures / "ref.pgm"),
                        "--def", str(fixtures / "def_*.pgm"),
                        *DIC_ARGS, "--out", str(out)])
    assert rc == 0
    return out


def test_synth_writes_fixture_pair(fixtures):
    assert (fixtures / "ref.pgm").exists()
    assert (fixtures / "def_0001.pgm").exists()
    echoed = yaml.safe_load((fixtures / "run_config.yaml").read_text())
    assert echoed["subcommand"] == "synth"
    assert echoed["shift"] == [0.25, 0.4]


def test_synth_noise_adds_noisy_reference(tmp_path):
    rc = parse_and_run(["synth", "--width", "120", "--height", "90",
                        "--noise", "2.0", "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "ref.pgm").exists()
    assert (tmp_path / "ref_noisy.pgm").exists()
    assert not (tmp_path / "def_0001.pgm").exists()


def test_dic2d_example_invocation(dic_run, capsys):
    out_file = dic_run / "dic_results_def_0001.csv"
    assert out_file.exists()
    assert (dic_run / "run_config.yaml").exists()
    result = read_dic_csv(out_file)
    conv = result.converged
    assert conv.any()
    # the synthesized field is a pure (0.25, 0.40) px translation
    assert abs(np.nanmean(result.u[conv]) - 0.25) < 0.02
    assert abs(np.nanmean(result.v[conv]) - 0.40) < 0.02


def test_summary_line_per_image(fixtures, tmp_path, capsys):
    rc = parse_and_run(["dic2d", "--ref", str(fixtures / "ref.pgm"),
                        "--def", str(fixtures / "def_*.pgm"),
                        *DIC_ARGS, "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "[1/1]" in out
    assert "% converged" in out
    assert "mean ZNCC" in out
    assert "dic_results_def_0001.csv" in out


def test_missing_seed_exits_2_and_names_the_flag(fixtures, tmp_path,
                                                 capsys):
    rc = parse_and_run(["dic2d", "--ref", str(fixtures / "ref.pgm"),
                        "--def", str(fixtures / "def_*.pgm"),
                        "--out", str(tmp_path)])
    assert rc == 2
    assert "--seed" in capsys.readouterr().err


def test_multiwindow_method_needs_no_seed(fixtures, tmp_path):
    rc = parse_and_run(["dic2d", "--ref", str(fixtures / "ref.pgm"),
                        "--def", str(fixtures / "def_*.pgm"),
                        "--method", "multiwindow", "--roi-border", "20",
                        "--subset-size", "21", "--subset-step", "10",
                        "--max-displacement", "2", "--threads", "1",
                        "--out", str(tmp_path)])
    assert rc == 0
    assert (tmp_path / "dic_results_def_0001.csv").exists()


def test_unmatched_deformed_glob_exits_3(fixtures, tmp_path, capsys):
    rc = parse_and_run(["dic2d", "--ref", str(fixtures / "ref.pgm"),
                        "--def", str(fixtures / "nothing_*.pgm"),
                        "--seed", "200,150", "--out", str(tmp_path)])
    assert rc == 3
    assert "no deformed images match" in capsys.readouterr().err


def test_missing_reference_exits_2(tmp_path, capsys):
    rc = parse_and_run(["dic2d", "--ref", str(tmp_path / "absent.pgm"),
                        "--def", "whatever_*.pgm", "--seed", "5,5"])
    assert rc == 2
    assert "absent.pgm" in capsys.readouterr().err


def test_invalid_parameter_exits_2(fixtures, capsys):
    rc = parse_and_run(["dic2d", "--ref", str(fixtures / "ref.pgm"),
                        "--def", str(fixtures / "def_*.pgm"),
                        "--seed", "200,150", "--subset-size", "10"])
    assert rc == 2
    assert "subset_size" in capsys.readouterr().err


def test_malformed_seed_exits_2(capsys):
    rc = parse_and_run(["dic2d", "--ref", "a.pgm", "--def", "b.pgm",
                        "--seed", "x,y"])
    assert rc == 2
    assert "--seed" in capsys.readouterr().err


def test_unknown_subcommand_exits_2(capsys):
    assert parse_and_run(["resolve"]) == 2


def test_help_exits_0(capsys):
    assert parse_and_run(["--help"]) == 0
    assert "dic2d" in capsys.readouterr().out


def test_unknown_yaml_key_exits_2(fixtures, tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("reference: r.pgm\nsubset_sz: 21\n")
    rc = parse_and_run(["dic2d", "--config", str(cfg)])
    assert rc == 2
    assert "subset_sz" in capsys.readouterr().err


def test_unknown_param_key_exits_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("params:\n  subset_sz: 21\n")
    rc = parse_and_run(["dic2d", "--config", str(cfg)])
    assert rc == 2
    assert "subset_sz" in capsys.readouterr().err


def test_broken_yaml_exits_2(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("reference: [unclosed\n")
    rc = parse_and_run(["dic2d", "--config", str(cfg)])
    assert rc == 2


def test_yaml_config_equals_flags(fixtures, tmp_path):
    """A config file and the equivalent flags resolve identically."""
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "reference": str(fixtures / "ref.pgm"),
        "deformed": str(fixtures / "def_*.pgm"),
        "roi_border": 20,
        "seed": [200, 150],
        "params": {"subset_size": 21, "subset_step": 10,
                   "max_displacement": 2, "threads": 1},
    }))
    d_yaml, d_flags = tmp_path / "via_yaml", tmp_path / "via_flags"
    assert parse_and_run(["dic2d", "--config", str(cfg),
                          "--out", str(d_yaml)]) == 0
    assert parse_and_run(["dic2d", "--ref", str(fixtures / "ref.pgm"),
                          "--def", str(fixtures / "def_*.pgm"),
                          *DIC_ARGS, "--out", str(d_flags)]) == 0

    echo_a = yaml.safe_load((d_yaml / "run_config.yaml").read_text())
    echo_b = yaml.safe_load((d_flags / "run_config.yaml").read_text())
    echo_a.pop("output"), echo_b.pop("output")
    assert echo_a == echo_b
    a = (d_yaml / "dic_results_def_0001.csv").read_bytes()
    b = (d_flags / "dic_results_def_0001.csv").read_bytes()
    assert a == b


def test_flags_override_yaml(fixtures, tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text(yaml.safe_dump({
        "reference": str(fixtures / "ref.pgm"),
        "deformed": str(fixtures / "def_*.pgm"),
        "seed": [200, 150], "roi_border": 20,
        "params": {"subset_size": 31, "subset_step": 10,
                   "max_displacement": 2, "threads": 1},
    }))
    rc = parse_and_run(["dic2d", "--config", str(cfg),
                        "--subset-size", "21", "--out", str(tmp_path)])
    assert rc == 0
    echoed = yaml.safe_load((tmp_path / "run_config.yaml").read_text())
    assert echoed["params"]["subset_size"] == 21


def test_echo_is_fully_resolved(dic_run):
    echoed = yaml.safe_load((dic_run / "run_config.yaml").read_text())
    assert echoed["subcommand"] == "dic2d"
    # defaults that were never mentioned on the command line are explicit
    p = echoed["params"]
    assert p["cost"] == "znssd"
    assert p["shape"] == "affine"
    assert p["method"] == "multiwindow_rg"
    assert p["zncc_accept_threshold"] == 0.70
    assert p["threads"] >= 1          # materialized, never the 0 sentinel
    assert echoed["seed"] == [200.0, 150.0]
    assert echoed["binary"] is False


def test_identical_runs_write_identical_files(fixtures, dic_run,
                                              tmp_path):
    rc = parse_and_run(["dic2d", "--ref", str(fixtures / "ref.pgm"),
                        "--def", str(fixtures / "def_*.pgm"),
                        *DIC_ARGS, "--out", str(tmp_path)])
    assert rc == 0
    a = (dic_run / "dic_results_def_0001.csv").read_bytes()
    b = (tmp_path / "dic_results_def_0001.csv").read_bytes()
    assert a == b


def test_binary_output_round_trips(fixtures, tmp_path):
    d1, d2 = tmp_path / "r1", tmp_path / "r2"
    for d in (d1, d2):
        rc = parse_and_run(["dic2d", "--ref", str(fixtures / "ref.pgm"),
                            "--def", str(fixtures / "def_*.pgm"),
                            *DIC_ARGS, "--binary", "--out", str(d)])
        assert rc == 0
    assert (d1 / "dic_results_def_0001.bin").read_bytes() == \
        (d2 / "dic_results_def_0001.bin").read_bytes()
    imported = import_2d(str(d1 / "dic_results_*.bin"), binary=True)
    assert len(imported) == 1
    assert imported[0].converged.any()


def test_strain_example_invocation(dic_run, tmp_path, capsys):
    rc = parse_and_run(["strain",
                        "--data", str(dic_run / "dic_results_*"),
                        "--window-points", "5", "--basis", "biquadratic",
                        "--formulation", "hencky",
                        "--out", str(tmp_path)])
    assert rc == 0
    out = capsys.readouterr().out
    assert "VSG" in out
    files = sorted(tmp_path.glob("strain_*.csv"))
    assert len(files) == 1
    imported = import_strain(str(tmp_path / "strain_*.csv"))
    field = imported.fields[0]
    assert field.formulation.value == "hencky"
    assert field.window_points == 5
    # a rigid translation carries no strain
    assert np.nanmax(np.abs(field.exx[field.valid])) < 5e-3


def test_strain_unmatched_glob_exits_3(tmp_path, capsys):
    rc = parse_and_run(["strain", "--data", str(tmp_path / "none_*"),
                        "--out", str(tmp_path)])
    assert rc == 3


def test_strain_requires_data(capsys):
    rc = parse_and_run(["strain"])
    assert rc == 2
    assert "--data" in capsys.readouterr().err


def test_env_threads_applied_and_flag_wins(fixtures, tmp_path,
                                           monkeypatch):
    monkeypatch.setenv("SUBSETDIC_THREADS", "1")
    d1, d2 = tmp_path / "env", tmp_path / "flag"
    args = ["dic2d", "--ref", str(fixtures / "ref.pgm"),
            "--def", str(fixtures / "def_*.pgm"),
            "--roi-border", "20", "--seed", "200,150",
            "--subset-size", "21", "--subset-step", "10",
            "--max-displacement", "2"]
    assert parse_and_run(args + ["--out", str(d1)]) == 0
    assert parse_and_run(args + ["--threads", "2",
                                 "--out", str(d2)]) == 0
    echo1 = yaml.safe_load((d1 / "run_config.yaml").read_text())
    echo2 = yaml.safe_load((d2 / "run_config.yaml").read_text())
    assert echo1["params"]["threads"] == 1
    assert echo2["params"]["threads"] == 2


def test_metrology_synthetic_sweep(tmp_path, capsys):
    rc = parse_and_run(["metrology", "--synthetic", "--width", "600",
                        "--height", "160", "--subset-sizes", "11,15,19",
                        "--threads", "1", "--out", str(tmp_path)])
    assert rc == 0
    for name in ("metrology_report.csv", "midline_convergence.png",
                 "spatial_resolution.png", "mei.png",
                 "run_config.yaml"):
        assert (tmp_path / name).exists(), name
    echoed = yaml.safe_load((tmp_path / "run_config.yaml").read_text())
    assert echoed["subset_sizes"] == [11, 15, 19]
    # the sweep defaults to a denser grid than plain correlation
    assert echoed["params"]["subset_step"] == 4
    assert echoed["params"]["max_displacement"] == 3.0
    out = capsys.readouterr().out
    assert "MEI summary" in out


def test_metrology_without_inputs_exits_2(capsys):
    rc = parse_and_run(["metrology"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "--ref" in err and "--synthetic" in err


def test_metrology_too_few_sizes_exits_2(capsys):
    rc = parse_and_run(["metrology", "--synthetic",
                        "--subset-sizes", "11,15"])
    assert rc == 2
    assert "at least 3" in capsys.readouterr().err


def test_progress_is_throttled(capsys):
    p = _Progress()
    p.say("one")
    p.say("two")          # immediately after; suppressed
    time.sleep(0.12)
    p.say("three")
    lines = capsys.readouterr().err.strip().splitlines()
    assert lines == ["one", "three"]
