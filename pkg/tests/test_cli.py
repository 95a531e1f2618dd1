import json

import numpy as np
import pytest

import nmtraj as nt
from nmtraj import cli
from nmtraj.errors import ConfigError


def _run(argv):
    return cli.main(argv)


def _write_config(path, **blocks):
    payload = {}
    payload.update(blocks)
    path.write_text(json.dumps(payload))
    return str(path)


def _read_csv(path):
    lines = path.read_text().strip().splitlines()
    header = lines[0].split(",")
    rows = [line.split(",") for line in lines[1:]]
    return header, rows


_ZERO_COUPLING_MODEL = {
    "dim": 2,
    "hamiltonian": [[[0.0, 0.0], [1.0, 0.0]], [[1.0, 0.0], [0.0, 0.0]]],
    "coupling": [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]],
    "initial_state": [[1.0, 0.0], [0.0, 0.0]],
}

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_DEPHASING_MODEL = {
    "dim": 2,
    "hamiltonian": [[[0.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [0.0, 0.0]]],
    "coupling": [[[1.0, 0.0], [0.0, 0.0]], [[0.0, 0.0], [-1.0, 0.0]]],
    "initial_state": [[_INV_SQRT2, 0.0], [_INV_SQRT2, 0.0]],
}


def test_config_defaults_load():
    config = cli.load_config(None)
    assert config.grid.n_steps == 8
    assert config.schedule == "zero-delay"
    assert config.model.dim == 2


def test_config_field_diagnostics(tmp_path):
    path = _write_config(tmp_path / "c.json", grid={"epsilon": 0.1, "n_steps": "x"})
    with pytest.raises(ConfigError, match="grid.n_steps"):
        cli.load_config(path)
    path = _write_config(tmp_path / "c2.json",
                         model={**_ZERO_COUPLING_MODEL, "hamiltonian": [[1, 2], [3, 4]]})
    with pytest.raises(ConfigError, match=r"model.hamiltonian\[0\]"):
        cli.load_config(path)
    path = _write_config(tmp_path / "c3.json",
                         schedule={"kind": "delayed", "delay": 0.25})
    with pytest.raises(ConfigError, match="schedule.delay"):
        cli.load_config(path)


def test_config_json_syntax_diagnostics(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "grid": {,}\n}')
    with pytest.raises(ConfigError, match="broken.json:2"):
        cli.load_config(str(path))


def test_evolve_zero_coupling_purity_constant(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", model=_ZERO_COUPLING_MODEL,
                        output={"directory": str(tmp_path / "out"), "format": "csv"})
    assert _run(["evolve", "--config", cfg]) == 0
    header, rows = _read_csv(tmp_path / "out" / "evolve.csv")
    purity_col = header.index("purity (dimensionless; tr rho^2)")
    for row in rows:
        assert float(row[purity_col]) == pytest.approx(1.0, abs=1e-10)


def test_evolve_dephasing_matches_oracle_column(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", model=_DEPHASING_MODEL,
                        output={"directory": str(tmp_path / "out"), "format": "csv"})
    assert _run(["evolve", "--config", cfg]) == 0
    header, rows = _read_csv(tmp_path / "out" / "evolve.csv")
    off_col = header.index("rho_re_01 (dimensionless)")
    oracle_col = header.index(
        "dephasing_oracle_offdiag (dimensionless; commuting two-level models)")
    for row in rows:
        assert float(row[off_col]) == pytest.approx(float(row[oracle_col]), abs=1e-12)


def test_evolve_markov_matches_exponential_decay(tmp_path):
    cfg = _write_config(tmp_path / "cfg.json", model=_DEPHASING_MODEL,
                        kernel={"kind": "markov", "g": 1.0},
                        output={"directory": str(tmp_path / "out"), "format": "csv"})
    assert _run(["evolve", "--config", cfg]) == 0
    header, rows = _read_csv(tmp_path / "out" / "evolve.csv")
    t_col = header.index("t (time)")
    off_col = header.index("rho_re_01 (dimensionless)")
    for row in rows:
        t = float(row[t_col])
        assert float(row[off_col]) == pytest.approx(0.5 * np.exp(-2.0 * t), abs=1e-12)


def test_trajectory_from_file_and_retarded_column(tmp_path):
    zfile = tmp_path / "z.txt"
    rng = np.random.default_rng(0)
    values = 0.05 * rng.standard_normal(8)
    zfile.write_text("\n".join(repr(float(v)) for v in values))
    out = tmp_path / "out"
    cfg = _write_config(tmp_path / "cfg.json",
                        output={"directory": str(out), "format": "csv"})
    assert _run(["trajectory", "--config", cfg, "--z-source", "file",
                 "--z-file", str(zfile)]) == 0
    header, rows = _read_csv(out / "trajectory.csv")
    zcol = header.index("z (integrated readout)")
    retcol = header.index(
        "retarded_readout (integrated units; kernel row x conditional expectations)")
    assert [float(r[zcol]) for r in rows] == pytest.approx(list(values), rel=1e-12)

    # Offline recompute of the final retarded value.
    config = cli.load_config(cfg)
    A = nt.build_kernel_matrix(config.kernel, config.grid)
    rec = nt.NoiseRecord(window=config.grid.full_window, values=values)
    traj = nt.solve_unnormalized(config.model, A, config.grid, 0.8, rec)
    assert float(rows[-1][retcol]) == pytest.approx(
        nt.retarded_expectation(traj, A, config.grid), rel=1e-12)


def test_trajectory_zero_noise_zero_coupling_is_free(tmp_path):
    zfile = tmp_path / "z.txt"
    zfile.write_text("\n".join(["0.0"] * 8))
    out = tmp_path / "out"
    cfg = _write_config(tmp_path / "cfg.json", model=_ZERO_COUPLING_MODEL,
                        output={"directory": str(out), "format": "csv"})
    assert _run(["trajectory", "--config", cfg, "--z-source", "file",
                 "--z-file", str(zfile)]) == 0
    header, rows = _read_csv(out / "trajectory.csv")
    ncol = header.index("norm (state norm; dimensionless)")
    for row in rows:
        assert float(row[ncol]) == pytest.approx(1.0, abs=1e-12)


def test_trajectory_record_length_mismatch(tmp_path, capsys):
    zfile = tmp_path / "z.txt"
    zfile.write_text("0.0\n0.0\n")
    cfg = _write_config(tmp_path / "cfg.json",
                        output={"directory": str(tmp_path / "out"), "format": "csv"})
    assert _run(["trajectory", "--config", cfg, "--z-source", "file",
                 "--z-file", str(zfile)]) == 1
    assert "record length" in capsys.readouterr().err


def test_trajectory_sampled_is_seed_reproducible(tmp_path):
    outs = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        cfg = _write_config(tmp_path / f"cfg_{sub}.json",
                            output={"directory": str(out), "format": "csv"})
        assert _run(["trajectory", "--config", cfg, "--seed", "123"]) == 0
        outs.append((out / "trajectory.csv").read_bytes())
    assert outs[0] == outs[1]


def test_ensemble_report_structure_and_determinism(tmp_path):
    payloads = []
    for sub in ("a", "b"):
        out = tmp_path / sub
        cfg = _write_config(tmp_path / f"cfg_{sub}.json",
                            sampling={"n_samples": 500, "seed": 77},
                            output={"directory": str(out), "format": "csv"})
        assert _run(["ensemble", "--config", cfg]) == 0
        payloads.append((out / "ensemble.json").read_bytes())
    assert payloads[0] == payloads[1]
    report = json.loads(payloads[0])
    assert report["n_samples"] == 500
    assert report["effective_sample_size"] > 10
    assert "within_3_se" in report["mean_readout"]
    rho = np.array([[complex(c[0], c[1]) for c in row] for row in report["rho"]])
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-12)


def test_ensemble_smoke_budget(tmp_path):
    import time
    cfg = _write_config(tmp_path / "cfg.json",
                        sampling={"n_samples": 100, "seed": 3},
                        output={"directory": str(tmp_path / "out"), "format": "csv"})
    start = time.monotonic()
    assert _run(["ensemble", "--config", cfg]) == 0
    assert time.monotonic() - start < 5.0


@pytest.mark.parametrize("schedule", ["zero-delay", "all-in-one", "x-readout"])
def test_detector_schedules(tmp_path, schedule):
    out = tmp_path / "out"
    cfg = _write_config(tmp_path / "cfg.json",
                        grid={"epsilon": 0.1, "n_steps": 12},
                        schedule={"kind": schedule, "t": 0.8},
                        output={"directory": str(out), "format": "csv"})
    assert _run(["detector", "--config", cfg, "--seed", "5"]) == 0
    report = json.loads((out / "detector.json").read_text())
    assert report["schedule"] == schedule
    assert report["t"] == 0.8
    if schedule == "x-readout":
        assert report["purity"] < 1.0 - 1e-6
        assert report["record_kind"] == "pointer"
    else:
        assert report["purity"] == pytest.approx(1.0, abs=1e-10)
        assert report["record_kind"] == "readout"


def test_detector_delayed_schedule(tmp_path):
    out = tmp_path / "out"
    cfg = _write_config(tmp_path / "cfg.json",
                        schedule={"kind": "delayed", "delay": 0.2},
                        output={"directory": str(out), "format": "csv"})
    assert _run(["detector", "--config", cfg, "--seed", "5"]) == 0
    report = json.loads((out / "detector.json").read_text())
    assert report["delay"] == 0.2
    assert len(report["record"]) == 6
    assert report["purity"] < 1.0


def test_verify_surfaces_invalid_kernel(tmp_path, capsys):
    cfg = _write_config(tmp_path / "cfg.json",
                        kernel={"kind": "tabulated",
                                "samples": [[0.0, 1.0], [0.1, -1.2], [0.2, 0.5]]},
                        output={"directory": str(tmp_path / "out"), "format": "csv"})
    assert _run(["verify", "--config", cfg]) == 1
    assert "positive semidefinite" in capsys.readouterr().err


def test_manifest_written(tmp_path):
    out = tmp_path / "out"
    cfg = _write_config(tmp_path / "cfg.json",
                        output={"directory": str(out), "format": "csv"})
    assert _run(["evolve", "--config", cfg]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["command"] == "evolve"
    assert "evolve.csv" in manifest["outputs"]
    assert len(manifest["config_sha256"]) == 64
