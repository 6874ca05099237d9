import csv
import shutil

import numpy as np
import pytest

from fracms import config as C
from fracms.cli import main
from fracms.fields import load_trajectory, read_field, write_field
from fracms.mesh import FracturePolyline, generate_test_mesh, write_mesh
from fracms.physics import GAS_CONSTANT

TINY = """
[mesh]
cells = 14

[coarse]
nx = 2
ny = 2

[time]
tau_days = 10
t_max_years = {years}

[offline]
M_off = 2

[output]
dir = "{out}"
export_years = []
"""


def write_config(tmp_path, name="run.toml", years=0.02, extra="", out=None):
    out = out or tmp_path / "out"
    p = tmp_path / name
    p.write_text(TINY.format(years=years, out=out.as_posix()) + extra)
    return p


def test_run_fine_one_step_writes_one_field(tmp_path, capsys):
    cfg = write_config(tmp_path, years=10 / 365)
    assert main(["run-fine", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    assert sorted(p.name for p in out.glob("fine_step*.txt")) == ["fine_step0001.txt"]
    traj = load_trajectory(out / "reference.npz")
    assert traj["states"].shape == (2, 15 * 15)
    nodes, values, kind = read_field(out / "fine_step0001.txt")
    np.testing.assert_array_equal(values, traj["states"][1])
    assert kind == "concentration"
    assert "reference=" in capsys.readouterr().out


def test_export_cadence_follows_requested_years():
    cfg = C.resolve({"output.export_years": [1.0, 3.0, 5.0]})
    assert C.export_steps(cfg, C.build_time(cfg)) == [37, 110, 183]


def test_missing_mesh_file_is_an_input_error(tmp_path, capsys):
    cfg = write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("cells = 14", 'source = "nowhere/mesh.txt"'))
    assert main(["run-fine", "--config", str(cfg)]) == 2
    assert "nowhere/mesh.txt" in capsys.readouterr().err


def test_mesh_file_source(tmp_path):
    mesh = generate_test_mesh((12.0, 12.0), [FracturePolyline(np.array([[1.0, 6.0], [11.0, 6.0]]))], 1.0)
    write_mesh(tmp_path / "m.txt", mesh)
    cfg = write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("cells = 14", 'source = "m.txt"'))
    assert main(["run-fine", "--config", str(cfg)]) == 0
    assert load_trajectory(tmp_path / "out" / "reference.npz")["states"].shape[1] == mesh.n_nodes


def test_missing_config_and_bad_values(tmp_path, capsys):
    assert main(["run-fine", "--config", str(tmp_path / "absent.toml")]) == 2
    assert "absent.toml" in capsys.readouterr().err
    cfg = write_config(tmp_path, extra="\n[online]\ntheta = 1.5\n")
    assert main(["run-gmsfem", "--config", str(cfg)]) == 2
    cfg = write_config(tmp_path, extra="\n[solver]\ncg_rtol = 1e-6\n")
    assert main(["run-fine", "--config", str(cfg)]) == 2


def test_unknown_key_is_rejected(tmp_path, capsys):
    cfg = write_config(tmp_path)
    cfg.write_text(cfg.read_text().replace("M_off = 2", "M_off = 2\nMoff = 3"))
    assert main(["run-fine", "--config", str(cfg)]) == 2
    assert "offline.Moff" in capsys.readouterr().err


def test_config_echo_captures_defaults(tmp_path):
    cfg = write_config(tmp_path)
    assert main(["run-fine", "--config", str(cfg)]) == 0
    echo = (tmp_path / "out" / "resolved_config.toml").read_text()
    for line in ("R = 8.314", "D_s = 1e-07", 'quadrature = "barycenter"', "cg_rtol = 1e-10", "M_off = 2"):
        assert line in echo
    # the echo is itself a valid configuration reproducing the run
    shutil.copy(tmp_path / "out" / "resolved_config.toml", tmp_path / "again.toml")
    assert C.load_config(tmp_path / "again.toml") == C.load_config(cfg)


@pytest.fixture(scope="module")
def fine_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("fine")
    cfg = write_config(tmp, years=0.1, out=tmp / "fine")
    assert main(["run-fine", "--config", str(cfg)]) == 0
    return tmp / "fine" / "reference.npz"


def test_gmsfem_outputs_are_byte_identical(tmp_path, fine_run):
    extra = "\n[online]\nenabled = true\nk = 2\nwarmup = 1\ntheta = 0.5\n"
    texts = []
    for name in ("a", "b"):
        cfg = write_config(tmp_path, f"{name}.toml", years=0.1, extra=extra, out=tmp_path / name)
        cfg.write_text(cfg.read_text().replace("M_off = 2", 'M_off = 2\nsnapshots = "randomized"\nM_i = 6\nlayers = 1'))
        assert main(["run-gmsfem", "--config", str(cfg), "--reference", str(fine_run), "--seed", "7"]) == 0
        texts.append([(tmp_path / name / f).read_bytes() for f in ("errors.csv", "indicators.csv")])
    assert texts[0] == texts[1]
    rows = list(csv.DictReader(open(tmp_path / "a" / "errors.csv")))
    assert [int(r["step"]) for r in rows] == list(range(1, 5))
    assert all(float(r["L2a_pct"]) >= 0 for r in rows)
    assert "seed = 7" in (tmp_path / "a" / "resolved_config.toml").read_text()


def test_gmsfem_without_reference_skips_errors(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["run-gmsfem", "--config", str(cfg)]) == 0
    assert (tmp_path / "out" / "offline_space.npz").exists()
    assert not (tmp_path / "out" / "errors.csv").exists()
    assert "errors not computed" in capsys.readouterr().out


def test_reference_shape_mismatch(tmp_path, fine_run):
    cfg = write_config(tmp_path, years=0.05)
    assert main(["run-gmsfem", "--config", str(cfg), "--reference", str(fine_run)]) == 2


def test_sweep_writes_one_row_per_value(tmp_path, fine_run, capsys):
    cfg = write_config(tmp_path, years=0.1, extra="\n[sweep]\nvalues = [1, 2, 4]\n")
    assert main(["sweep", "--config", str(cfg), "--reference", str(fine_run), "--jobs", "2"]) == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "sweep.csv")))
    assert [r["offline.M_off"] for r in rows] == ["1", "2", "4"]
    assert [int(r["dim"]) for r in rows] == [9, 18, 36]
    l2 = [float(r["L2a_pct"]) for r in rows]
    assert l2[2] <= l2[0]
    for v in (1, 2, 4):
        assert (tmp_path / "out" / f"offline.M_off={v}" / "errors.csv").exists()
    # serial and parallel sweeps agree byte for byte
    cfg2 = write_config(tmp_path, "serial.toml", years=0.1, extra="\n[sweep]\nvalues = [1, 2, 4]\n",
                        out=tmp_path / "serial")
    assert main(["sweep", "--config", str(cfg2), "--reference", str(fine_run)]) == 0
    assert (tmp_path / "serial" / "sweep.csv").read_bytes() == (tmp_path / "out" / "sweep.csv").read_bytes()
    assert main(["sweep", "--config", str(cfg2), "--reference", str(fine_run), "--jobs", "0"]) == 2


def test_export_pressure_arithmetic(tmp_path):
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    write_field(tmp_path / "c.txt", nodes, np.full(3, 10000.0))
    assert main(["export-field", "--state", str(tmp_path / "c.txt"), "--format", "pressure",
                 "--output", str(tmp_path / "p.txt")]) == 0
    _, p, kind = read_field(tmp_path / "p.txt")
    assert kind == "pressure"
    np.testing.assert_allclose(p, GAS_CONSTANT * 413 * 10000, rtol=1e-15)
    # pressure cannot be converted again
    assert main(["export-field", "--state", str(tmp_path / "p.txt"), "--format", "pressure",
                 "--output", str(tmp_path / "pp.txt")]) == 2


def test_export_constant_field_and_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    nodes = rng.uniform(0, 60, (20, 2))
    write_field(tmp_path / "one.txt", nodes, np.ones(20))
    assert main(["export-field", "--state", str(tmp_path / "one.txt"), "--output", str(tmp_path / "o.txt")]) == 0
    assert np.all(read_field(tmp_path / "o.txt")[1] == 1.0)
    values = rng.standard_normal(20) * 1e4
    write_field(tmp_path / "v.txt", nodes, values)
    main(["export-field", "--state", str(tmp_path / "v.txt"), "--output", str(tmp_path / "w.txt")])
    back_nodes, back, _ = read_field(tmp_path / "w.txt")
    assert np.array_equal(back, values) and np.array_equal(back_nodes, nodes)
    assert (tmp_path / "v.txt").read_bytes() == (tmp_path / "w.txt").read_bytes()


def test_export_from_trajectory(tmp_path, fine_run):
    assert main(["export-field", "--state", str(fine_run), "--step", "2", "--output", str(tmp_path / "s.txt")]) == 0
    np.testing.assert_array_equal(read_field(tmp_path / "s.txt")[1], load_trajectory(fine_run)["states"][2])
    assert main(["export-field", "--state", str(fine_run), "--step", "99", "--output", str(tmp_path / "x.txt")]) == 2


def test_export_unknown_format(tmp_path, capsys):
    write_field(tmp_path / "c.txt", np.zeros((1, 2)), [1.0])
    assert main(["export-field", "--state", str(tmp_path / "c.txt"), "--format", "velocity"]) == 2
    assert "velocity" in capsys.readouterr().err


def test_export_missing_state(tmp_path):
    assert main(["export-field", "--state", str(tmp_path / "none.txt")]) == 2
