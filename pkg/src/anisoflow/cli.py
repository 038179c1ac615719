"""Command-line front end: config parsing, dispatch, and artifacts.

Configs are INI-style text (hand-editable, diffable); see the schema below
for the accepted sections and keys.  Every run writes a ``manifest.txt``
recording the config hash, the semiconvexity constant, sampled flux
constants, and the three step-size regime flags, so study output is
self-describing.  Numeric output uses 17 significant digits throughout,
which round-trips doubles exactly.

Exit codes: 0 success, 1 config error (the message names the offending
key), 2 solver or study failure (diagnostics that exist are still written).
"""

import argparse
import configparser
import hashlib
import os
import sys

import numpy as np

from . import studies
from .anisotropy import (IsotropicAnisotropy, MatrixFamilyAnisotropy,
                         estimate_constants)
from .control import (ControlProblem, DistributedTarget, FinalTimeTarget,
                      OptimizeOptions, cost, optimize, write_history)
from .grid import build_grid, load_field, write_field
from .potential import (DoubleWell, MoreauYosida, ZeroPotential,
                        build_truncation)
from .stepper import (NonConvergence, StepConfig, TimePartition,
                      UniquenessViolation, check_energy_stability,
                      solve_trajectory, write_diagnostics)

COMMANDS = ("simulate", "optimize", "verify-energy", "study-tau",
            "study-bounds", "study-lipschitz", "study-control")

# accepted sections and keys (lowercase; configparser lowercases on read)
_SCHEMA = {
    "grid": {"dim", "nodes", "lengths"},
    "time": {"t", "n", "breakpoints"},
    "anisotropy": {"kind", "delta", "matrices"},
    "potential": {"kind", "penalty", "cutoff"},
    "control": {"lambda", "target", "target_file", "target_dir",
                "y0", "y0_file", "forcing", "forcing_dir"},
    "solver": {"newton_tol", "max_newton_iters", "armijo_slope",
               "armijo_backtrack", "armijo_min_step", "linear_tol",
               "enforce_uniqueness", "max_descent_iters"},
    "optimize": {"max_iters", "grad_tol", "lbfgs", "lbfgs_memory"},
    "study": {"levels", "rate_min", "rate_max", "ratio_window",
              "growth_tol", "ratio_growth", "pairs", "perturbation_scale"},
    "output": {"directory", "seed"},
}


class ConfigError(Exception):
    def __init__(self, key, message):
        super().__init__(f"config error at '{key}': {message}")
        self.key = key


# -- built-in initial data ----------------------------------------------------

def constant_field(grid, value):
    return np.full(grid.n_nodes, float(value))


def random_uniform_field(grid, low, high, seed):
    rng = np.random.default_rng(int(seed))
    return rng.uniform(float(low), float(high), grid.n_nodes)


def tanh_circle_field(grid, center, radius, width):
    """Diffuse circular interface: tanh((radius - |x - center|) / width).

    Values lie strictly inside (-1, 1), positive inside the circle, with
    the zero level set on it (up to grid resolution).
    """
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")
    if width <= 0:
        raise ValueError(f"width must be positive, got {width}")
    center = np.atleast_1d(np.asarray(center, dtype=float))
    if center.size != grid.dim:
        raise ValueError(f"center needs {grid.dim} components, got {center.size}")
    dist = np.linalg.norm(grid.nodes - center, axis=1)
    return np.tanh((radius - dist) / width)


def builtin_initializer(spec, grid):
    """Build a field from an initializer string.

    Accepted forms (argument counts for a d-dimensional grid):
      constant(c)
      random_uniform(low, high, seed)
      tanh_circle(c1[, c2], radius, width)
    """
    spec = spec.strip()
    if "(" not in spec or not spec.endswith(")"):
        raise ValueError(f"malformed initializer '{spec}'")
    name, _, rest = spec.partition("(")
    name = name.strip()
    args = [a.strip() for a in rest[:-1].split(",") if a.strip()]
    if name == "constant":
        if len(args) != 1:
            raise ValueError("constant takes one argument")
        return constant_field(grid, float(args[0]))
    if name == "random_uniform":
        if len(args) != 3:
            raise ValueError("random_uniform takes (low, high, seed)")
        return random_uniform_field(grid, float(args[0]), float(args[1]),
                                    int(args[2]))
    if name == "tanh_circle":
        if len(args) != grid.dim + 2:
            raise ValueError(
                f"tanh_circle takes (center[{grid.dim}], radius, width)")
        center = [float(a) for a in args[:grid.dim]]
        return tanh_circle_field(grid, center, float(args[-2]), float(args[-1]))
    raise ValueError(f"unknown initializer '{name}'")


# -- config loading -----------------------------------------------------------

def load_config(path, overrides=()):
    """Parse and schema-check a config file, applying section.key overrides."""
    if not os.path.exists(path):
        raise ConfigError(path, "config file does not exist")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(path, f"unparseable config: {exc}") from exc
    cfg = {s: dict(parser[s]) for s in parser.sections()}
    for item in overrides:
        key, eq, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not (section and name and dot and eq):
            raise ConfigError(item, "overrides look like section.key=value")
        cfg.setdefault(section.lower(), {})[name.lower()] = value
    for section, keys in cfg.items():
        if section not in _SCHEMA:
            raise ConfigError(section, "unknown section")
        for key in keys:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"{section}.{key}", "unknown key")
    return cfg


def _get(cfg, section, key, default=None, required=False):
    value = cfg.get(section, {}).get(key.lower())
    if value is None:
        if required:
            raise ConfigError(f"{section}.{key}", "required key is missing")
        return default
    return value


def _get_float(cfg, section, key, default=None, required=False):
    raw = _get(cfg, section, key, None, required)
    if raw is None:
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}", f"not a number: '{raw}'")


def _get_int(cfg, section, key, default=None, required=False):
    raw = _get(cfg, section, key, None, required)
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"{section}.{key}", f"not an integer: '{raw}'")


def _get_bool(cfg, section, key, default=None):
    raw = _get(cfg, section, key)
    if raw is None:
        return default
    low = raw.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{section}.{key}", f"not a boolean: '{raw}'")


def _floats(raw):
    return [float(x) for x in raw.replace(",", " ").split()]


def _build_grid(cfg):
    dim = _get_int(cfg, "grid", "dim", required=True)
    try:
        nodes = [int(x) for x in _get(cfg, "grid", "nodes", required=True)
                 .replace(",", " ").split()]
        lengths = _floats(_get(cfg, "grid", "lengths", required=True))
        return build_grid(dim, nodes, lengths)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError("grid", str(exc))


def _build_partition(cfg):
    raw_breaks = _get(cfg, "time", "breakpoints")
    if raw_breaks is not None:
        try:
            return TimePartition(_floats(raw_breaks))
        except ValueError as exc:
            raise ConfigError("time.breakpoints", str(exc))
    final_time = _get_float(cfg, "time", "T", required=True)
    n_steps = _get_int(cfg, "time", "N", required=True)
    try:
        return TimePartition.uniform(final_time, n_steps)
    except ValueError as exc:
        raise ConfigError("time", str(exc))


def _build_anisotropy(cfg, dim):
    kind = _get(cfg, "anisotropy", "kind", default="isotropic").strip().lower()
    if kind == "isotropic":
        return IsotropicAnisotropy()
    if kind == "matrix_family":
        raw = _get(cfg, "anisotropy", "matrices", required=True)
        delta = _get_float(cfg, "anisotropy", "delta", default=0.0)
        mats = []
        for chunk in raw.split(";"):
            vals = _floats(chunk)
            if len(vals) != dim * dim:
                raise ConfigError("anisotropy.matrices",
                                  f"each matrix needs {dim * dim} row-major "
                                  f"entries, got {len(vals)}")
            mats.append(np.array(vals).reshape(dim, dim))
        try:
            return MatrixFamilyAnisotropy(mats, delta)
        except ValueError as exc:
            raise ConfigError("anisotropy", str(exc))
    raise ConfigError("anisotropy.kind", f"unknown kind '{kind}'")


def _build_potential(cfg):
    kind = _get(cfg, "potential", "kind", default="double_well").strip().lower()
    if kind == "double_well":
        return DoubleWell()
    if kind == "moreau_yosida":
        penalty = _get_float(cfg, "potential", "penalty", required=True)
        try:
            return MoreauYosida(penalty)
        except ValueError as exc:
            raise ConfigError("potential.penalty", str(exc))
    if kind == "truncated":
        cutoff = _get_float(cfg, "potential", "cutoff", required=True)
        try:
            return build_truncation(DoubleWell(), cutoff)
        except ValueError as exc:
            raise ConfigError("potential.cutoff", str(exc))
    if kind == "zero":
        return ZeroPotential()
    raise ConfigError("potential.kind", f"unknown kind '{kind}'")


def _build_step_config(cfg):
    kwargs = {}
    for key, getter in (("newton_tol", _get_float),
                        ("max_newton_iters", _get_int),
                        ("armijo_slope", _get_float),
                        ("armijo_backtrack", _get_float),
                        ("armijo_min_step", _get_float),
                        ("max_descent_iters", _get_int)):
        val = getter(cfg, "solver", key)
        if val is not None:
            kwargs[key] = val
    lin = _get_float(cfg, "solver", "linear_tol")
    if lin is not None:
        kwargs["linear_rtol"] = lin
    enforce = _get_bool(cfg, "solver", "enforce_uniqueness")
    if enforce is not None:
        kwargs["enforce_uniqueness"] = enforce
    try:
        return StepConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError("solver", str(exc))


def _build_optimize_options(cfg):
    opts = OptimizeOptions()
    v = _get_int(cfg, "optimize", "max_iters")
    if v is not None:
        opts.max_iters = v
    v = _get_float(cfg, "optimize", "grad_tol")
    if v is not None:
        opts.grad_tol = v
    v = _get_bool(cfg, "optimize", "lbfgs")
    if v is not None:
        opts.use_lbfgs = v
    v = _get_int(cfg, "optimize", "lbfgs_memory")
    if v is not None:
        opts.lbfgs_memory = v
    return opts


def _require_file(key, path):
    if not os.path.exists(path):
        raise ConfigError(key, f"referenced file '{path}' does not exist")
    return path


def _load_y0(cfg, grid):
    spec = _get(cfg, "control", "y0")
    path = _get(cfg, "control", "y0_file")
    if (spec is None) == (path is None):
        raise ConfigError("control.y0",
                          "give exactly one of control.y0, control.y0_file")
    if path is not None:
        return load_field(_require_file("control.y0_file", path), grid)
    try:
        return builtin_initializer(spec, grid)
    except ValueError as exc:
        raise ConfigError("control.y0", str(exc))


def _load_forcing(cfg, grid, partition):
    """Forcing fields for simulate/verify/study runs; zero by default."""
    directory = _get(cfg, "control", "forcing_dir")
    spec = _get(cfg, "control", "forcing", default="zero")
    n_steps = partition.n_steps
    if directory is not None:
        _require_file("control.forcing_dir", directory)
        rows = []
        for j in range(1, n_steps + 1):
            path = os.path.join(directory, f"control_{j:04d}.field")
            rows.append(load_field(_require_file("control.forcing_dir", path),
                                   grid))
        return np.array(rows)
    if spec.strip().lower() == "zero":
        return np.zeros((n_steps, grid.n_nodes))
    try:
        one = builtin_initializer(spec, grid)
    except ValueError as exc:
        raise ConfigError("control.forcing", str(exc))
    return np.tile(one, (n_steps, 1))


def _load_target(cfg, grid, partition):
    kind = _get(cfg, "control", "target", required=True).strip().lower()
    if kind == "final_time":
        path = _get(cfg, "control", "target_file", required=True)
        return FinalTimeTarget(load_field(
            _require_file("control.target_file", path), grid))
    if kind == "distributed":
        directory = _get(cfg, "control", "target_dir", required=True)
        _require_file("control.target_dir", directory)
        rows = []
        for j in range(1, partition.n_steps + 1):
            path = os.path.join(directory, f"target_{j:04d}.field")
            rows.append(load_field(_require_file("control.target_dir", path),
                                   grid))
        return DistributedTarget(np.array(rows))
    raise ConfigError("control.target", f"unknown target kind '{kind}'")


def _check_step_rule(partition, pot, step_config):
    c_psi = pot.semiconvexity()
    if step_config.enforce_uniqueness and c_psi > 0:
        bound = 1.0 / c_psi
        if partition.tau_max >= bound:
            raise ConfigError(
                "time", f"tau_max = {partition.tau_max:g} >= 1/c = {bound:g}: "
                "the implicit step is only guaranteed unique for tau < 1/c "
                "(c = semiconvexity constant); refine time.N or disable "
                "solver.enforce_uniqueness")


def _config_hash(cfg):
    canon = []
    for section in sorted(cfg):
        for key in sorted(cfg[section]):
            canon.append(f"{section}.{key}={cfg[section][key]}")
    return hashlib.sha256("\n".join(canon).encode()).hexdigest()


def _write_manifest(out_dir, command, cfg, grid, partition, aniso, pot, seed):
    consts = estimate_constants(aniso, sample_count=200, radius=2.0,
                                dim=grid.dim, seed=seed)
    c_psi = pot.semiconvexity()
    tau = partition.tau_max
    inv = np.inf if c_psi == 0 else 1.0 / c_psi
    lines = [
        f"command={command}",
        f"config_hash={_config_hash(cfg)}",
        f"seed={seed}",
        f"grid_dim={grid.dim}",
        f"grid_nodes={','.join(str(n) for n in grid.shape)}",
        f"grid_lengths={','.join(f'{x:.17g}' for x in grid.lengths)}",
        f"tau_max={tau:.17g}",
        f"semiconvexity={c_psi:.17g}",
        f"monotonicity_estimate={consts.monotonicity:.17g}",
        f"growth_estimate={consts.growth:.17g}",
        f"tau_below_uniqueness_bound={tau < inv}",
        f"tau_within_lipschitz_bound={tau <= 1.0 / (1.0 + 2.0 * c_psi)}",
        f"tau_within_energy_decay_bound={tau <= (np.inf if c_psi == 0 else 2.0 / c_psi)}",
    ]
    with open(os.path.join(out_dir, "manifest.txt"), "w") as f:
        f.write("\n".join(lines) + "\n")


def _write_states(out_dir, grid, states):
    for j, state in enumerate(states):
        write_field(os.path.join(out_dir, f"state_{j:04d}.field"), grid, state)


def _write_partial_diagnostics(out_dir, partition, diags):
    t = partition.breakpoints
    taus = partition.tau_steps
    with open(os.path.join(out_dir, "diagnostics.csv"), "w", newline="") as f:
        f.write("j,t_j,tau_j,newton_iters,residual_inf,energy\n")
        for j, diag in enumerate(diags):
            tau_j = 0.0 if j == 0 else taus[j - 1]
            f.write(f"{j},{t[j]:.17g},{tau_j:.17g},{diag.iterations},"
                    f"{diag.residual_inf:.17g},{diag.energy:.17g}\n")


def _study_perturbation_pairs(cfg, grid, partition, y0, forcing, seed):
    count = _get_int(cfg, "study", "pairs", default=5)
    scale = _get_float(cfg, "study", "perturbation_scale", default=0.1)
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(count):
        dy0 = scale * rng.uniform(-1.0, 1.0, grid.n_nodes)
        du = scale * rng.uniform(-1.0, 1.0, forcing.shape)
        pairs.append(((y0, forcing), (y0 + dy0, forcing + du)))
    return pairs


def run(command, config_path, overrides=(), out_dir=None, seed=None):
    """Execute one CLI command; returns the process exit status."""
    if command not in COMMANDS:
        print(f"unknown command '{command}'; expected one of {COMMANDS}",
              file=sys.stderr)
        return 1
    try:
        cfg = load_config(config_path, overrides)
        grid = _build_grid(cfg)
        partition = _build_partition(cfg)
        aniso = _build_anisotropy(cfg, grid.dim)
        pot = _build_potential(cfg)
        step_config = _build_step_config(cfg)
        _check_step_rule(partition, pot, step_config)
        if out_dir is None:
            out_dir = _get(cfg, "output", "directory", default="out")
        if seed is None:
            seed = _get_int(cfg, "output", "seed", default=0)

        if command == "study-lipschitz":
            c_psi = pot.semiconvexity()
            bound = 1.0 / (1.0 + 2.0 * c_psi)
            if partition.tau_max > bound + 1e-15:
                raise ConfigError(
                    "time", f"tau_max = {partition.tau_max:g} exceeds the "
                    f"stability-study bound 1/(1+2c) = {bound:g}")

        os.makedirs(out_dir, exist_ok=True)
        _write_manifest(out_dir, command, cfg, grid, partition, aniso, pot, seed)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1

    try:
        if command == "simulate":
            forcing = _load_forcing(cfg, grid, partition)
            try:
                traj = solve_trajectory(grid, aniso, pot, _load_y0(cfg, grid),
                                        forcing, partition, step_config)
            except (UniquenessViolation, NonConvergence) as exc:
                if getattr(exc, "partial_diagnostics", None):
                    _write_partial_diagnostics(out_dir, partition,
                                               exc.partial_diagnostics)
                print(f"solver failure at step {getattr(exc, 'step_index', '?')}: "
                      f"{exc}", file=sys.stderr)
                return 2
            _write_states(out_dir, grid, traj.states)
            write_diagnostics(traj, os.path.join(out_dir, "diagnostics.csv"))
            return 0

        if command == "verify-energy":
            forcing_spec = _get(cfg, "control", "forcing", default="zero")
            if forcing_spec.strip().lower() != "zero":
                raise ConfigError("control.forcing",
                                  "the energy check requires zero forcing")
            traj = solve_trajectory(grid, aniso, pot, _load_y0(cfg, grid),
                                    None, partition, step_config)
            write_diagnostics(traj, os.path.join(out_dir, "diagnostics.csv"))
            report = check_energy_stability(traj, aniso, pot)
            with open(os.path.join(out_dir, "energy_report.txt"), "w") as f:
                f.write(str(report) + "\n")
            print("PASS" if report.passed else "FAIL")
            return 0 if report.passed else 2

        if command == "optimize":
            problem = ControlProblem(grid, partition, _load_y0(cfg, grid),
                                     _load_target(cfg, grid, partition),
                                     _get_float(cfg, "control", "lambda",
                                                required=True),
                                     aniso, pot)
            opts = _build_optimize_options(cfg)
            u_star, traj, report = optimize(problem, problem.zero_control(),
                                            opts, step_config)
            write_history(report, os.path.join(out_dir, "history.csv"))
            for j in range(partition.n_steps):
                write_field(os.path.join(out_dir, f"control_{j + 1:04d}.field"),
                            grid, u_star[j])
            _write_states(out_dir, grid, traj.states)
            write_diagnostics(traj, os.path.join(out_dir, "diagnostics.csv"))
            with open(os.path.join(out_dir, "optimize_summary.txt"), "w") as f:
                f.write(f"converged={report.converged}\n"
                        f"iterations={report.iterations}\n"
                        f"final_cost={report.j_values[-1]:.17g}\n"
                        f"final_grad_norm={report.grad_norms[-1]:.17g}\n"
                        f"message={report.message}\n")
            return 0

        # refinement studies share the ladder configuration
        levels = _get_int(cfg, "study", "levels", default=4)
        y0 = _load_y0(cfg, grid)
        forcing = _load_forcing(cfg, grid, partition)
        base_n = partition.n_steps
        final_time = partition.final_time

        if command == "study-tau":
            window = (_get_float(cfg, "study", "rate_min", default=0.8),
                      _get_float(cfg, "study", "rate_max", default=1.2))
            report = studies.tau_convergence_study(
                grid, aniso, pot, y0, final_time, base_n, levels,
                control=forcing, config=step_config, rate_window=window)
        elif command == "study-bounds":
            report = studies.uniform_bound_study(
                grid, aniso, pot, y0, final_time, base_n, levels,
                control=forcing, config=step_config,
                ratio_window=_get_float(cfg, "study", "ratio_window",
                                        default=1.5),
                growth_tol=_get_float(cfg, "study", "growth_tol",
                                      default=1.05))
        elif command == "study-lipschitz":
            pairs = _study_perturbation_pairs(cfg, grid, partition, y0,
                                              forcing, seed)
            report = studies.lipschitz_study(
                grid, aniso, pot, pairs, final_time, base_n, levels,
                config=step_config,
                growth=_get_float(cfg, "study", "ratio_growth", default=1.5))
        else:  # study-control
            problem = ControlProblem(grid, partition, y0,
                                     _load_target(cfg, grid, partition),
                                     _get_float(cfg, "control", "lambda",
                                                required=True),
                                     aniso, pot)
            report = studies.control_convergence_study(
                problem, levels, options=_build_optimize_options(cfg),
                config=step_config)

        stem = command.replace("-", "_")
        studies.write_study_csv(report, os.path.join(out_dir, f"{stem}.csv"))
        summary = studies.summary_text(report)
        with open(os.path.join(out_dir, f"{stem}_summary.txt"), "w") as f:
            f.write(summary)
        print(summary, end="")
        return 0 if report.passed else 2

    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (UniquenessViolation, NonConvergence, ValueError,
            RuntimeError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 2


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="anisoflow",
        description="implicit phase-field solver, optimal control, and "
                    "verification studies")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="config file path")
    parser.add_argument("--set", dest="overrides", action="append",
                        default=[], metavar="section.key=value",
                        help="override a config entry (repeatable)")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for sampled diagnostics and study data")
    args = parser.parse_args(argv)
    return run(args.command, args.config, args.overrides, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(main())
