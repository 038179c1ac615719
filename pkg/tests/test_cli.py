import numpy as np
import pytest

from anisoflow import build_grid, load_field, read_field
from anisoflow.cli import (builtin_initializer, constant_field, load_config,
                           main, random_uniform_field, run, tanh_circle_field)

BASE_CONFIG = """\
[grid]
dim = 1
nodes = 33
lengths = 1.0

[time]
T = 1.0
N = 10

[anisotropy]
kind = isotropic

[potential]
kind = double_well

[control]
y0 = constant(1.0)

[output]
seed = 3
"""


def write_config(tmp_path, text=BASE_CONFIG, name="run.ini"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


# -- initializers ------------------------------------------------------------------

def test_constant_initializer():
    g = build_grid(1, [9], [1.0])
    assert np.array_equal(builtin_initializer("constant(1)", g), np.ones(9))


def test_random_uniform_is_seeded():
    g = build_grid(1, [33], [1.0])
    a = builtin_initializer("random_uniform(-1, 1, 7)", g)
    b = random_uniform_field(g, -1, 1, 7)
    assert np.array_equal(a, b)
    assert np.all((a >= -1) & (a <= 1))
    assert not np.array_equal(a, random_uniform_field(g, -1, 1, 8))


def test_tanh_circle_profile():
    g = build_grid(2, [33, 33], [1.0, 1.0])
    f = builtin_initializer("tanh_circle(0.5, 0.5, 0.25, 0.05)", g)
    assert np.all(np.abs(f) < 1.0)
    # zero level set sits on the circle up to grid resolution
    dist = np.linalg.norm(g.nodes - [0.5, 0.5], axis=1)
    ring = np.abs(dist - 0.25) < 0.5 * g.spacing[0]
    assert np.max(np.abs(f[ring])) < np.tanh(0.5 * g.spacing[0] / 0.05) + 1e-12
    with pytest.raises(ValueError):
        tanh_circle_field(g, [0.5, 0.5], -0.1, 0.05)
    with pytest.raises(ValueError):
        tanh_circle_field(g, [0.5, 0.5], 0.25, 0.0)


def test_initializer_rejects_malformed():
    g = build_grid(1, [9], [1.0])
    for bad in ("nonsense(1)", "constant", "constant(1, 2)",
                "tanh_circle(0.5, 0.25)"):
        with pytest.raises(ValueError):
            builtin_initializer(bad, g)


# -- config validation ---------------------------------------------------------------

def test_unknown_key_is_named(tmp_path):
    cfg = BASE_CONFIG.replace("dim = 1", "dim = 1\nbogus = 1")
    path = write_config(tmp_path, cfg)
    with pytest.raises(Exception) as err:
        load_config(path)
    assert "grid.bogus" in str(err.value)


def test_unknown_section_rejected(tmp_path):
    path = write_config(tmp_path, BASE_CONFIG + "\n[mystery]\nx = 1\n")
    with pytest.raises(Exception) as err:
        load_config(path)
    assert "mystery" in str(err.value)


def test_override_applies(tmp_path, capsys):
    path = write_config(tmp_path)
    out = tmp_path / "out"
    code = run("simulate", path, overrides=["time.N=5"], out_dir=str(out))
    assert code == 0
    lines = (out / "diagnostics.csv").read_text().strip().splitlines()
    assert len(lines) == 7  # header + 6 states


def test_step_rule_violation_exits_1(tmp_path, capsys):
    path = write_config(tmp_path)
    code = run("simulate", path, overrides=["time.N=1", "time.T=1.5"],
               out_dir=str(tmp_path / "out"))
    captured = capsys.readouterr()
    assert code == 1
    assert "unique" in captured.err.lower()


def test_missing_file_reference_exits_1(tmp_path, capsys):
    cfg = BASE_CONFIG.replace("y0 = constant(1.0)",
                              "y0_file = does_not_exist.field")
    path = write_config(tmp_path, cfg)
    code = run("simulate", path, out_dir=str(tmp_path / "out"))
    assert code == 1
    assert "does_not_exist" in capsys.readouterr().err


# -- simulate ---------------------------------------------------------------------------

def test_simulate_stationary_run(tmp_path):
    path = write_config(tmp_path)
    out = tmp_path / "out"
    assert run("simulate", path, out_dir=str(out)) == 0
    diag = (out / "diagnostics.csv").read_text().strip().splitlines()
    energies = {line.split(",")[5] for line in diag[1:]}
    assert len(energies) == 1  # constant energy column
    g = build_grid(1, [33], [1.0])
    final = load_field(out / "state_0010.field", g)
    assert np.allclose(final, 1.0, atol=1e-12)
    manifest = (out / "manifest.txt").read_text()
    assert "config_hash=" in manifest
    assert "semiconvexity=1" in manifest
    assert "tau_below_uniqueness_bound=True" in manifest
    assert "tau_within_lipschitz_bound=True" in manifest
    assert "tau_within_energy_decay_bound=True" in manifest


def test_simulate_is_deterministic(tmp_path):
    cfg = BASE_CONFIG.replace("constant(1.0)", "random_uniform(-1, 1, 5)")
    path = write_config(tmp_path, cfg)
    outputs = []
    for name in ("o1", "o2"):
        out = tmp_path / name
        assert run("simulate", path, out_dir=str(out)) == 0
        outputs.append(((out / "diagnostics.csv").read_bytes(),
                        (out / "state_0010.field").read_bytes()))
    assert outputs[0] == outputs[1]


def test_states_roundtrip_through_snapshots(tmp_path):
    cfg = BASE_CONFIG.replace("constant(1.0)", "random_uniform(-1, 1, 9)")
    path = write_config(tmp_path, cfg)
    out = tmp_path / "out"
    assert run("simulate", path, out_dir=str(out)) == 0
    values, meta = read_field(out / "state_0000.field")
    assert meta["shape"] == (33,)
    g = build_grid(1, [33], [1.0])
    assert np.array_equal(values, random_uniform_field(g, -1, 1, 9))


# -- verify-energy -------------------------------------------------------------------------

def test_verify_energy_passes(tmp_path, capsys):
    cfg = BASE_CONFIG.replace("constant(1.0)", "random_uniform(-1, 1, 5)")
    path = write_config(tmp_path, cfg)
    out = tmp_path / "out"
    assert run("verify-energy", path, out_dir=str(out)) == 0
    assert "PASS" in capsys.readouterr().out
    assert "PASS" in (out / "energy_report.txt").read_text()


def test_verify_energy_requires_zero_forcing(tmp_path, capsys):
    cfg = BASE_CONFIG + "forcing = constant(0.5)\n"
    path = write_config(tmp_path, cfg)
    assert run("verify-energy", path, out_dir=str(tmp_path / "out")) == 1
    assert "forcing" in capsys.readouterr().err


# -- optimize ---------------------------------------------------------------------------------

def test_optimize_trivial_target(tmp_path):
    # target produced by the zero-forcing run: the zero control is optimal
    base = write_config(tmp_path)
    sim_out = tmp_path / "sim"
    assert run("simulate", base, out_dir=str(sim_out)) == 0
    cfg = BASE_CONFIG.replace(
        "y0 = constant(1.0)",
        "y0 = constant(1.0)\nlambda = 1e-2\ntarget = final_time\n"
        f"target_file = {sim_out / 'state_0010.field'}")
    path = write_config(tmp_path, cfg, name="opt.ini")
    out = tmp_path / "opt"
    assert run("optimize", path, out_dir=str(out)) == 0
    summary = (out / "optimize_summary.txt").read_text()
    assert "converged=True" in summary
    assert "final_cost=0" in summary
    assert (out / "history.csv").exists()
    assert (out / "control_0010.field").exists()


# -- studies -----------------------------------------------------------------------------------

def test_study_tau_cli(tmp_path, capsys):
    cfg = BASE_CONFIG.replace("N = 10", "N = 8").replace("T = 1.0", "T = 0.5")
    cfg = cfg.replace("constant(1.0)", "tanh_circle(0.5, 0.25, 0.1)")
    cfg += "\n[study]\nlevels = 4\n"
    path = write_config(tmp_path, cfg)
    out = tmp_path / "out"
    code = run("study-tau", path, out_dir=str(out))
    assert code == 0
    assert (out / "study_tau.csv").exists()
    assert "PASS" in (out / "study_tau_summary.txt").read_text()


def test_study_lipschitz_cli_step_guard(tmp_path, capsys):
    # tau = 0.5 > 1/3: rejected before solving
    cfg = BASE_CONFIG.replace("N = 10", "N = 2")
    path = write_config(tmp_path, cfg)
    assert run("study-lipschitz", path, out_dir=str(tmp_path / "out")) == 1
    assert "1/(1+2c)" in capsys.readouterr().err


def test_study_lipschitz_cli_runs(tmp_path):
    cfg = BASE_CONFIG.replace("N = 10", "N = 4")
    cfg = cfg.replace("constant(1.0)", "random_uniform(-0.5, 0.5, 2)")
    cfg += "\n[study]\nlevels = 3\npairs = 2\n"
    path = write_config(tmp_path, cfg)
    out = tmp_path / "out"
    assert run("study-lipschitz", path, out_dir=str(out)) == 0
    assert (out / "study_lipschitz.csv").exists()


def test_main_entry_point(tmp_path, capsys):
    path = write_config(tmp_path)
    code = main(["simulate", "--config", path, "--out",
                 str(tmp_path / "out"), "--seed", "1"])
    assert code == 0


def test_unknown_command(capsys):
    assert run("explode", "nope.ini") == 1


def test_optimize_distributed_target(tmp_path):
    # distributed tracking: one target snapshot per interval
    g = build_grid(1, [33], [1.0])
    tdir = tmp_path / "targets"
    tdir.mkdir()
    from anisoflow import write_field
    rng = np.random.default_rng(2)
    for j in range(1, 11):
        write_field(tdir / f"target_{j:04d}.field", g,
                    rng.uniform(-0.5, 0.5, g.n_nodes))
    cfg = BASE_CONFIG.replace(
        "y0 = constant(1.0)",
        "y0 = constant(0.0)\nlambda = 1e-2\ntarget = distributed\n"
        f"target_dir = {tdir}")
    path = write_config(tmp_path, cfg, name="dist.ini")
    out = tmp_path / "out"
    assert run("optimize", path, overrides=["optimize.max_iters=3"],
               out_dir=str(out)) == 0
    assert (out / "history.csv").exists()


def test_study_bounds_cli(tmp_path):
    cfg = BASE_CONFIG.replace("N = 10", "N = 8")
    cfg = cfg.replace("constant(1.0)", "tanh_circle(0.5, 0.25, 0.1)")
    cfg += "\n[study]\nlevels = 3\n"
    path = write_config(tmp_path, cfg)
    out = tmp_path / "out"
    assert run("study-bounds", path, out_dir=str(out)) == 0
    assert (out / "study_bounds.csv").exists()


def test_study_control_cli(tmp_path):
    # stationary data with a matching target: optimal controls are zero
    base = write_config(tmp_path)
    sim_out = tmp_path / "sim"
    assert run("simulate", base, out_dir=str(sim_out)) == 0
    cfg = BASE_CONFIG.replace("N = 10", "N = 4").replace(
        "y0 = constant(1.0)",
        "y0 = constant(1.0)\nlambda = 1e-2\ntarget = final_time\n"
        f"target_file = {sim_out / 'state_0010.field'}")
    cfg += "\n[study]\nlevels = 3\n"
    path = write_config(tmp_path, cfg, name="sc.ini")
    out = tmp_path / "out"
    assert run("study-control", path, out_dir=str(out)) == 0
    assert "PASS" in (out / "study_control_summary.txt").read_text()


def test_solver_failure_exits_2_with_partial_diagnostics(tmp_path, capsys):
    cfg = BASE_CONFIG.replace("constant(1.0)", "random_uniform(-1, 1, 4)")
    path = write_config(tmp_path, cfg)
    out = tmp_path / "out"
    # one Newton iteration cannot reach the residual target from random data
    code = run("simulate", path, overrides=["solver.max_newton_iters=1"],
               out_dir=str(out))
    assert code == 2
    assert "step 1" in capsys.readouterr().err
    diag = (out / "diagnostics.csv").read_text().strip().splitlines()
    assert diag[0].startswith("j,")
    assert len(diag) == 2  # header + the initial state row
