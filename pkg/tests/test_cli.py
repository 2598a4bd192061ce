import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from tebd import cli
from tebd.evolution import EvolutionReport, NumericalAbort
from tebd.mps import basis_state, load_snapshot


def write_config(tmp_path, data, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


def run(command, cfg_path, out, *extra):
    return cli.main([command, "--config", cfg_path, "--out", str(out), *extra])


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], [[float(v) for v in r] for r in rows[1:]]


def manifest(out):
    return json.loads((out / "manifest.json").read_text())


FERRO8 = {"n": 8, "hamiltonian": {"model": "ferromagnet", "B": 1.0, "J": 1.0}}


def test_ground_command(tmp_path):
    cfg = write_config(tmp_path, {**FERRO8, "initial": {"theta": 0.3}})
    out = tmp_path / "g"
    assert run("ground", cfg, out, "--oracle", "dense") == cli.EXIT_OK
    header, rows = read_csv(out / "energy.csv")
    assert header == ["tau", "energy", "max_chi", "discarded_weight_cum"]
    assert rows[-1][1] == pytest.approx(-15.0, abs=1e-6)
    summary = json.loads((out / "convergence.json").read_text())
    assert summary["converged"] and summary["dense_energy"] == pytest.approx(-15.0)
    state = load_snapshot(out / "ground_state.mps")
    assert state.n == 8
    m = manifest(out)
    assert m["status"] == "ok" and m["exit_code"] == 0
    for name, info in m["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == info["sha256"]
    assert set(m["files"]) == {"energy.csv", "ground_state.mps", "convergence.json"}
    assert m["config"]["ground"]["delta_tau"] == [0.1, 0.01, 0.001]


def test_ground_non_convergence_keeps_outputs(tmp_path):
    cfg = write_config(tmp_path, {**FERRO8, "initial": {"theta": 0.3}, "ground": {"delta_tau": [0.01], "max_steps": 20}})
    out = tmp_path / "g"
    assert run("ground", cfg, out) == cli.EXIT_NOT_CONVERGED
    assert (out / "energy.csv").exists() and (out / "ground_state.mps").exists()
    assert manifest(out)["status"] == "not_converged"


@pytest.mark.parametrize(
    "patch, message",
    [
        ({"ground": {"delta_tau": []}}, "delta_tau"),
        ({"bogus": 1}, "bogus"),
        ({"ground": {"delta_tau": [0.1], "tau": 1}}, "tau"),
        ({"truncation": {"chi_max": 0}}, "chi_max"),
        ({"hamiltonian": {"model": "ferromagnet", "K": 2}}, "K"),
        ({"initial": {"config": "0101"}}, "initial.config"),
        ({"initial": {"config": [0] * 8, "theta": 0.1}}, "exactly one"),
        ({"oracle": "exact"}, "oracle"),
    ],
)
def test_validation_fails_closed(tmp_path, capsys, patch, message):
    cfg = write_config(tmp_path, {**FERRO8, **patch})
    out = tmp_path / "v"
    assert run("ground", cfg, out) == cli.EXIT_VALIDATION
    assert message in capsys.readouterr().err
    m = manifest(out)
    assert m["status"] == "invalid" and m["files"] == {}


def test_quench_validation(tmp_path):
    base = {**FERRO8, "evolution": {"T": 1.0, "delta": 0.3}}
    assert run("quench", write_config(tmp_path, base), tmp_path / "a") == cli.EXIT_VALIDATION
    base["evolution"]["delta"] = 0.1
    base["checkpoint"] = {"every": 3}
    base["sampling"] = {"every": 2}
    assert run("quench", write_config(tmp_path, base), tmp_path / "b") == cli.EXIT_VALIDATION
    base["checkpoint"] = {"every": 4}
    base["sampling"] = {"every": 2, "bonds": [8]}
    assert run("quench", write_config(tmp_path, base), tmp_path / "c") == cli.EXIT_VALIDATION


def quench_config(tmp_path, **overrides):
    data = {
        "n": 10,
        "hamiltonian": {"model": "ferromagnet"},
        "initial": {"config": "0" * 10, "excitation": [{"site": 0, "op": "sigma_x"}, {"site": 1, "op": "sigma_x"}]},
        "evolution": {"T": 2.0, "delta": 0.01},
        "sampling": {"every": 50, "bonds": [5], "observables": ["energy", "sz_total", "norm"]},
        "checkpoint": {"every": 100},
    }
    data.update(overrides)
    return write_config(tmp_path, data)


def test_quench_outputs_and_oracle(tmp_path):
    out = tmp_path / "q"
    assert run("quench", quench_config(tmp_path), out, "--oracle", "two-magnon") == cli.EXIT_OK
    header, rows = read_csv(out / "fidelity.csv")
    assert header == ["t", "epsilon"]
    assert [r[0] for r in rows] == [0.0, 0.5, 1.0, 1.5, 2.0]
    assert rows[0][1] == 0.0 and max(r[1] for r in rows) < 1e-6
    header, spec = read_csv(out / "spectrum_bond5.csv")
    assert header == ["t", "alpha", "p_alpha"]
    assert spec[0] == [0.0, 1.0, 1.0]
    header, obs = read_csv(out / "observables.csv")
    assert header == ["t", "energy", "sz_total", "norm"]
    assert all(abs(r[2] - 6.0) < 1e-8 and abs(r[3] - 1.0) < 1e-10 for r in obs)
    header, _ = read_csv(out / "chi.csv")
    assert header == ["t", "max_chi", "discarded_weight_cum"]
    assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["step_00000100"]


def test_quench_is_deterministic_and_resumes_bit_exactly(tmp_path):
    cfg = quench_config(tmp_path, evolution={"T": 3.0, "delta": 0.01})
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    assert run("quench", cfg, a, "--oracle", "two-magnon") == 0
    assert run("quench", cfg, b, "--oracle", "two-magnon") == 0
    assert run("quench", cfg, c, "--oracle", "two-magnon", "--resume", str(a / "checkpoints" / "step_00000200")) == 0
    for name in ("fidelity.csv", "spectrum_bond5.csv", "observables.csv", "chi.csv", "final_state.mps"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
        assert (a / name).read_bytes() == (c / name).read_bytes()
    assert manifest(c)["notes"]["resumed_from_step"] == 200


def test_resume_rejects_other_config(tmp_path):
    a = tmp_path / "a"
    assert run("quench", quench_config(tmp_path), a) == 0
    other = quench_config(tmp_path, hamiltonian={"model": "ferromagnet", "B": 0.5})
    assert run("quench", other, tmp_path / "b", "--resume", str(a / "checkpoints" / "step_00000100")) == cli.EXIT_VALIDATION


def test_quench_zero_time(tmp_path):
    out = tmp_path / "q"
    cfg = quench_config(tmp_path, evolution={"T": 0.0, "delta": 0.01}, checkpoint={"every": 0})
    assert run("quench", cfg, out, "--oracle", "dense") == cli.EXIT_OK
    _, rows = read_csv(out / "fidelity.csv")
    assert rows == [[0.0, 0.0]]


def test_two_magnon_oracle_needs_sector(tmp_path):
    cfg = quench_config(tmp_path, initial={"theta": 0.2})
    assert run("quench", cfg, tmp_path / "q", "--oracle", "two-magnon") == cli.EXIT_VALIDATION


def test_numerical_abort_exit_code(tmp_path, monkeypatch):
    def explode(state, *args, **kwargs):
        raise NumericalAbort("non-finite tensor entries after step 1", state, EvolutionReport())

    monkeypatch.setattr(cli, "evolve_real", explode)
    out = tmp_path / "q"
    assert run("quench", quench_config(tmp_path), out) == cli.EXIT_NUMERICAL
    assert (out / "last_good.mps").exists()
    assert manifest(out)["status"] == "numerical_abort"


def test_correlator_identity_grid(tmp_path):
    cfg = write_config(
        tmp_path,
        {**FERRO8, "correlator": {"operator": "identity", "x": {"start": -2, "stop": 2}, "t": {"stop": 1.0, "step": 0.5}, "delta": 0.05}},
    )
    out = tmp_path / "c"
    assert run("correlator", cfg, out) == cli.EXIT_OK
    header, rows = read_csv(out / "correlator.csv")
    assert header == ["x", "t", "re", "im"]
    assert len(rows) == 15
    assert max(abs(complex(r[2], r[3]) - 1) for r in rows) < 1e-8
    header, sf = read_csv(out / "structure_factor.csv")
    assert header == ["k", "omega", "re", "abs"]


def test_correlator_against_dense_oracle(tmp_path):
    cfg = write_config(
        tmp_path,
        {**FERRO8, "correlator": {"x": {"start": -4, "stop": 3}, "t": {"stop": 1.0, "step": 0.25}, "delta": 0.001}},
    )
    out = tmp_path / "c"
    assert run("correlator", cfg, out, "--oracle", "dense") == cli.EXIT_OK
    assert manifest(out)["notes"]["oracle_max_abs_error"] < 1e-6
    assert (out / "correlator_oracle.csv").exists()


def test_correlator_annihilated_ground_state(tmp_path):
    cfg = write_config(tmp_path, {**FERRO8, "correlator": {"operator": "sigma_plus", "x": [0], "t": [0.0], "delta": 0.1}})
    assert run("correlator", cfg, tmp_path / "c") == cli.EXIT_RUNTIME


def test_correlator_from_input_file(tmp_path):
    k0, w0 = 2 * np.pi * 2 / 8, 2 * np.pi * 1 / (6 * 0.5)
    grid = tmp_path / "grid.csv"
    with open(grid, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "t", "re", "im"])
        for x in range(-4, 4):
            for j in range(6):
                t = 0.5 * j
                v = np.exp(1j * (k0 * x - w0 * t))
                writer.writerow([x, t, v.real, v.imag])
    cfg = write_config(tmp_path, {"correlator": {"input": str(grid)}})
    out = tmp_path / "c"
    assert run("correlator", cfg, out) == cli.EXIT_OK
    _, rows = read_csv(out / "structure_factor.csv")
    peak = max(rows, key=lambda r: r[3])
    assert peak[0] == pytest.approx(k0) and peak[1] == pytest.approx(w0)
    assert peak[3] == pytest.approx(48.0)


def test_scaling_single_point(tmp_path):
    cfg = write_config(tmp_path, {"scaling": {"n": [6], "chi": [4], "delta": [0.05], "steps": 2}})
    out = tmp_path / "s"
    assert run("scaling", cfg, out, "--threads", "1") == cli.EXIT_OK
    header, rows = read_csv(out / "scaling.csv")
    assert header == ["n", "chi", "delta", "steps", "seconds"]
    assert len(rows) == 1 and rows[0][:4] == [6, 4, 0.05, 2] and rows[0][4] > 0


def test_environment_overrides(tmp_path, monkeypatch):
    cfg = write_config(tmp_path, {**FERRO8, "initial": {"theta": 0.3}})
    out = tmp_path / "env"
    monkeypatch.setenv("TEBD_CONFIG", cfg)
    monkeypatch.setenv("TEBD_OUT", str(out))
    monkeypatch.setenv("TEBD_ORACLE", "dense")
    assert cli.main(["ground"]) == cli.EXIT_OK
    assert "dense_energy" in json.loads((out / "convergence.json").read_text())
    # an explicit flag wins over the environment
    assert cli.main(["ground", "--oracle", "none"]) == cli.EXIT_OK
    assert "dense_energy" not in json.loads((out / "convergence.json").read_text())


def test_snapshot_initial_state(tmp_path):
    g = tmp_path / "g"
    assert run("ground", write_config(tmp_path, {**FERRO8, "initial": {"theta": 0.3}}), g) == 0
    cfg = write_config(
        tmp_path,
        {**FERRO8, "initial": {"snapshot": str(g / "ground_state.mps")}, "correlator": {"operator": "identity", "x": [0], "t": [0.0, 0.5], "delta": 0.05}},
        name="c.yaml",
    )
    assert run("correlator", cfg, tmp_path / "c") == 0
    bad = write_config(tmp_path, {"n": 6, "hamiltonian": {"model": "ferromagnet"}, "initial": {"snapshot": str(g / "ground_state.mps")}}, name="b.yaml")
    assert run("ground", bad, tmp_path / "b") == cli.EXIT_VALIDATION


def test_csv_number_format():
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert cli.fmt(3) == "3"
    assert float(cli.fmt(np.pi)) == np.pi


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "tebd", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "tebd" in out.stdout
    bad = subprocess.run([sys.executable, "-m", "tebd", "ground", "--out", str(tmp_path)], capture_output=True, text=True)
    assert bad.returncode == cli.EXIT_VALIDATION


def test_basis_state_snapshot_round_trip(tmp_path):
    path = tmp_path / "s.mps"
    cli.save_snapshot_atomic(basis_state([0, 1, 1]), path)
    assert load_snapshot(path).bond_dims == basis_state([0, 1, 1]).bond_dims
