import json

import numpy as np
import pytest

from mvfilter import io
from mvfilter.cli import main

SMALL = """
schema_version = 1
seed = 4
[model]
name = "{model}"
{params}
[grid]
T = 0.5
steps = 40
[particles]
N = 300
[optimizer]
n_pieces = 3
lambdas = [100.0, 10000.0]
max_iter = 20
tol = 0.01
[laplace]
eps_list = [0.5, 0.25, 0.125]
mc_samples = 200
nested = false
[sweep]
values = [0.025, 0.0125, 0.00625]
"""


def write_cfg(tmp_path, model="bounded-sensor", params=""):
    p = tmp_path / "cfg.toml"
    p.write_text(SMALL.format(model=model, params=params))
    return p


@pytest.mark.parametrize("cmd", ["check", "simulate", "filter", "skeleton", "rate", "laplace",
                                 "sweep"])
def test_subcommands_write_manifested_artifacts(tmp_path, cmd):
    cfg = write_cfg(tmp_path)
    out = tmp_path / "out"
    assert main([cmd, "--config", str(cfg), "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["artifacts"]
    for art in manifest["artifacts"]:
        assert io.sha256_file(out / art["file"]) == art["sha256"]


def test_check_all_gallery(tmp_path, capsys):
    assert main(["check", "--all", "--out", str(tmp_path)]) == 0
    assert capsys.readouterr().out.count("PASS") == 3


def test_zero_sensor_filter_equals_prior(tmp_path):
    cfg = write_cfg(tmp_path, "linear-gaussian", "[model.params]\nc = 0.0")
    main(["filter", "--config", str(cfg), "--out", str(tmp_path / "o")])
    header, cols = io.read_csv(tmp_path / "o" / "filter.csv")
    for h in header:
        if h.startswith("pi_"):
            np.testing.assert_array_equal(cols[h], cols["prior_" + h[3:]])


@pytest.mark.parametrize("cmd,name", [("filter", "filter.csv"), ("simulate", "simulate.csv"),
                                      ("skeleton", "skeleton.csv")])
def test_rerun_and_threads_are_byte_identical(tmp_path, cmd, name):
    cfg = write_cfg(tmp_path)
    blobs = []
    for threads in (1, 4, 8):
        out = tmp_path / f"t{threads}"
        main([cmd, "--config", str(cfg), "--out", str(out), "--threads", str(threads)])
        blobs.append((out / name).read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]


def test_seed_override_changes_output(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")])
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "b"), "--seed", "5"])
    assert (tmp_path / "a" / "simulate.csv").read_bytes() != \
        (tmp_path / "b" / "simulate.csv").read_bytes()


def test_sweep_reports_order(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "o")])
    doc = json.loads((tmp_path / "o" / "sweep.json").read_text())
    assert doc["slope"] >= 1.0


def test_sweep_refuses_two_points(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text("[sweep]\nvalues = [0.01, 0.005]\n")
    assert main(["sweep", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "sweep.values" in capsys.readouterr().err


def test_replay_flag(tmp_path):
    cfg = write_cfg(tmp_path)
    main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--replay"])
    header, arrays = io.read_replay(tmp_path / "o" / "replay.bin")
    assert arrays["particles"].shape == (41, 300, 1) and header["steps"] == 40


def test_config_errors_exit_2(tmp_path, capsys):
    p = tmp_path / "c.toml"
    p.write_text("[grid]\nsteps = 'many'\n")
    assert main(["filter", "--config", str(p)]) == 2
    assert "grid.steps" in capsys.readouterr().err
