"""Command-line front end.

Subcommands:

    simulate --config <file> [--out <file>] [--seed <u64>] [--trajectories <n>]
    reproduce <fig2|fig3> [--out <dir>]
    netlist-check <file>

Configs are YAML with all physical quantities in base SI units.  Results
are written as CSV with a `# meta:` header line and 17-significant-digit
floats so repeated runs with the same config and seed are bit-identical.

Exit codes: 0 success, 1 engine failure, 2 config/parse failure.
"""

from __future__ import annotations

import argparse
import hashlib
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from . import analytic, mc, pde
from .circuit import (NetlistError, SingularNetworkError, Waveform,
                      parse_netlist, series_mc, solve_operating_point)
from .device import MemristorModel

__version__ = "0.1.0"


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class ResultTable:
    """Column-oriented numeric results with a metadata header."""

    meta: dict
    columns: list
    rows: np.ndarray  # (T, len(columns))

    def to_csv_text(self) -> str:
        meta = ";".join(f"{k}={v}" for k, v in sorted(self.meta.items()))
        lines = [f"# meta: {meta}", ",".join(self.columns)]
        for row in self.rows:
            lines.append(",".join(f"{x:.17g}" for x in row))
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        Path(path).write_text(self.to_csv_text())

    def write_dat(self, path) -> None:
        """Gnuplot-compatible whitespace-separated variant."""
        meta = ";".join(f"{k}={v}" for k, v in sorted(self.meta.items()))
        lines = [f"# meta: {meta}", "# " + " ".join(self.columns)]
        for row in self.rows:
            lines.append(" ".join(f"{x:.17g}" for x in row))
        Path(path).write_text("\n".join(lines) + "\n")

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, self.columns.index(name)]

    @classmethod
    def read_csv(cls, path) -> "ResultTable":
        text = Path(path).read_text().splitlines()
        if not text or not text[0].startswith("# meta:"):
            raise ValueError("missing '# meta:' header")
        meta = {}
        for item in text[0][len("# meta:"):].strip().split(";"):
            if item:
                k, _, v = item.partition("=")
                meta[k] = v
        columns = text[1].split(",")
        rows = np.array([[float(x) for x in line.split(",")]
                         for line in text[2:] if line.strip()])
        return cls(meta, columns, rows.reshape(-1, len(columns)))


# --------------------------------------------------------------------------
# Configuration

def _require(cfg: dict, key: str, types, what: str = "config"):
    if key not in cfg:
        raise ConfigError(f"{what}: missing required field '{key}'")
    val = cfg[key]
    if not isinstance(val, types):
        raise ConfigError(f"{what}: field '{key}' has wrong type "
                          f"({type(val).__name__})")
    return val


def _positive(cfg: dict, key: str, what: str = "config"):
    val = _require(cfg, key, (int, float), what)
    if val <= 0:
        raise ConfigError(f"{what}: field '{key}' must be positive")
    return float(val)


def load_config(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a mapping")
    return cfg


def _config_hash(cfg: dict) -> str:
    canon = yaml.safe_dump(cfg, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def _series_params(cfg: dict) -> analytic.ConstantDriveParams:
    s = _require(cfg, "series", dict)
    kw = {}
    for key in ("C", "R0", "R1", "tau0", "V0", "Va"):
        kw[key] = _positive(s, key, "series")
    kw["q0"] = float(s.get("q0", 0.0))
    return analytic.ConstantDriveParams(**kw)


def _series_model(params: analytic.ConstantDriveParams) -> MemristorModel:
    return MemristorModel.binary(params.R0, params.R1, params.tau0, params.V0)


def _series_netlist(params: analytic.ConstantDriveParams):
    return series_mc(_series_model(params), params.C,
                     Waveform.constant(params.Va), params.q0)


def _output_times(cfg: dict) -> np.ndarray:
    t_end = _positive(cfg, "t_end")
    if "output_dt" in cfg:
        dt = _positive(cfg, "output_dt")
        times = np.arange(0.0, t_end + dt / 2, dt)
        if times[-1] < t_end:
            times = np.append(times, t_end)
        return times
    n = int(cfg.get("output_points", 50))
    if n < 2:
        raise ConfigError("output_points must be >= 2")
    return np.linspace(0.0, t_end, n)


# --------------------------------------------------------------------------
# Engines

def _run_analytic(cfg: dict) -> ResultTable:
    params = _series_params(cfg)
    times = _output_times(cfg)
    p0 = np.array([analytic.p0_constant_voltage(params, float(t)) for t in times])
    rows = np.column_stack([times, p0, 1.0 - p0])
    meta = {"engine": "analytic", "prob_sum_tol": "1e-15",
            "config": _config_hash(cfg), "version": __version__}
    return ResultTable(meta, ["time", "p0", "p1"], rows)


def _run_pde(cfg: dict) -> ResultTable:
    params = _series_params(cfg)
    model = _series_model(params)
    times = _output_times(cfg)
    t_end = float(times[-1])
    n_cells = int(cfg.get("pde", {}).get("n_cells", 2000))
    grid = pde.ChargeGrid.for_drive(params.C, Waveform.constant(params.Va),
                                    t_end, n_cells, q_extra=params.q0)
    initial = pde.DistributionField.from_delta(grid, model.num_states, 0, params.q0)
    circ = pde.SeriesCircuitParams(params.C, Waveform.constant(params.Va))
    result = pde.run(initial, t_end, times, circ, model)
    cols = ["time"] + [f"p{i}" for i in range(model.num_states)]
    rows = np.column_stack([result.times, result.marginals])
    meta = {"engine": "pde", "n_cells": n_cells, "prob_sum_tol": "1e-8",
            "mass_error": f"{result.max_mass_error:.3e}",
            "config": _config_hash(cfg), "version": __version__}
    return ResultTable(meta, cols, rows)


def _run_mc(cfg: dict, seed_override=None, traj_override=None) -> ResultTable:
    mc_cfg = cfg.get("mc", {})
    n = int(traj_override if traj_override is not None
            else mc_cfg.get("trajectories", 1000))
    seed = int(seed_override if seed_override is not None
               else mc_cfg.get("seed", 0))
    bins = int(mc_cfg.get("bins", 50))
    times = _output_times(cfg)
    t_end = float(times[-1])
    if "netlist" in cfg:
        netlist = parse_netlist(Path(_require(cfg, "netlist", str)).read_text())
    else:
        netlist = _series_netlist(_series_params(cfg))
    stats = mc.run_ensemble(netlist, netlist.initial_state(), t_end, times,
                            n, seed, histogram_bins=bins)
    occ = stats.occupancy[0]
    se = stats.stderr[0]
    g = occ.shape[1]
    cols = (["time"] + [f"p{i}" for i in range(g)]
            + [f"stderr{i}" for i in range(g)])
    rows = np.column_stack([stats.times, occ, se])
    meta = {"engine": "mc", "trajectories": stats.n, "seed": seed,
            "failed": stats.n_failed, "events_up": stats.events_up,
            "events_down": stats.events_down, "prob_sum_tol": "1e-12",
            "config": _config_hash(cfg), "version": __version__}
    return ResultTable(meta, cols, rows)


def _run_compare(cfg: dict, seed_override=None, traj_override=None) -> ResultTable:
    params = _series_params(cfg)
    times = _output_times(cfg)
    ana = _run_analytic(cfg)
    pd_ = _run_pde(cfg)
    mc_ = _run_mc(cfg, seed_override, traj_override)
    p0a = ana.column("p0")
    p0p = pd_.column("p0")
    p0m = mc_.column("p0")
    sem = mc_.column("stderr0")
    rows = np.column_stack([times, p0a, p0p, p0m, sem])
    dev_pde = float(np.max(np.abs(p0a - p0p)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(p0a - p0m) / sem
    ratio = ratio[np.isfinite(ratio)]
    dev_mc = float(ratio.max()) if ratio.size else 0.0
    meta = {"engine": "compare",
            "max_abs_dev_pde": f"{dev_pde:.6e}",
            "max_dev_mc_over_stderr": f"{dev_mc:.6e}",
            "prob_sum_tol": "1e-8",
            "config": _config_hash(cfg), "version": __version__}
    return ResultTable(meta, ["time", "p0_analytic", "p0_pde", "p0_mc",
                              "p0_mc_stderr"], rows)


def cmd_simulate(cfg: dict, out=None, seed_override=None,
                 traj_override=None) -> ResultTable:
    engine = _require(cfg, "engine", str)
    if engine == "analytic":
        table = _run_analytic(cfg)
    elif engine == "pde":
        table = _run_pde(cfg)
    elif engine == "mc":
        table = _run_mc(cfg, seed_override, traj_override)
    elif engine == "compare":
        table = _run_compare(cfg, seed_override, traj_override)
    else:
        raise ConfigError(f"unknown engine {engine!r} "
                          "(expected mc, pde, analytic or compare)")
    out = out or cfg.get("out")
    if out:
        table.write_csv(out)
    return table


# --------------------------------------------------------------------------
# Figure reproduction

FIG_T_STAR = 1.0  # characteristic saturation time used for the figures


def cmd_reproduce(figure: str, out_dir=".") -> ResultTable:
    params = analytic.ConstantDriveParams.figure2()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    times = np.linspace(0.0, 0.03, 301)
    p0 = np.array([analytic.p0_constant_voltage(params, float(t)) for t in times])
    if figure == "fig2":
        rows = np.column_stack([times, p0, 1.0 - p0])
        meta = {"figure": "fig2", "C": params.C, "R0": params.R0,
                "Va": params.Va, "V0": params.V0, "tau0": params.tau0,
                "q0": params.q0, "version": __version__}
        table = ResultTable(meta, ["time", "p0", "p1"], rows)
    elif figure == "fig3":
        t1 = analytic.mean_switching_time(params, FIG_T_STAR)
        p0_star = analytic.p0_constant_voltage(params, FIG_T_STAR)
        decay = np.exp(-times / t1)
        decay_plateau = p0_star + (1.0 - p0_star) * decay
        rows = np.column_stack([times, p0, decay, decay_plateau])
        meta = {"figure": "fig3", "mean_switching_time": f"{t1:.17g}",
                "t_star": FIG_T_STAR, "p0_t_star": f"{p0_star:.17g}",
                "version": __version__}
        table = ResultTable(
            meta, ["time", "p0", "exp_decay", "exp_decay_to_plateau"], rows)
    else:
        raise ConfigError(f"unknown figure {figure!r} (expected fig2 or fig3)")
    table.write_csv(out_dir / f"{figure}.csv")
    table.write_dat(out_dir / f"{figure}.dat")
    return table


# --------------------------------------------------------------------------
# Netlist checking

def cmd_netlist_check(path) -> tuple:
    """(report text, ok flag)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        return f"ERROR: cannot read {path}: {exc}", False
    try:
        netlist = parse_netlist(text)
    except (NetlistError, SingularNetworkError) as exc:
        return f"ERROR: {exc}", False
    lines = [f"components: {len(netlist.components())}",
             f"nodes (incl. ground): {len(netlist.nodes()) + (0 if '0' in netlist.nodes() else 1)}"]
    try:
        solve_operating_point(netlist, netlist.initial_state())
    except (SingularNetworkError, ValueError) as exc:
        return "\n".join(lines + [f"ERROR: operating point unsolvable: {exc}"]), False
    lines.append("operating point: solvable")
    return "OK\n" + "\n".join(lines), True


# --------------------------------------------------------------------------
# Entry point

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="memstoch",
        description="Stochastic memristor-capacitor circuit simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run one engine from a config file")
    sim.add_argument("--config", required=True)
    sim.add_argument("--out")
    sim.add_argument("--seed", type=int)
    sim.add_argument("--trajectories", type=int)

    rep = sub.add_parser("reproduce", help="regenerate a reference figure dataset")
    rep.add_argument("figure", choices=["fig2", "fig3"])
    rep.add_argument("--out", default=".")

    chk = sub.add_parser("netlist-check", help="validate a netlist file")
    chk.add_argument("path")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            cfg = load_config(args.config)
            table = cmd_simulate(cfg, args.out, args.seed, args.trajectories)
            if not args.out and not cfg.get("out"):
                sys.stdout.write(table.to_csv_text())
            return 0
        if args.command == "reproduce":
            cmd_reproduce(args.figure, args.out)
            return 0
        if args.command == "netlist-check":
            report, ok = cmd_netlist_check(args.path)
            print(report)
            return 0 if ok else 2
    except (ConfigError, NetlistError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # engine failure
        print(f"engine error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
