"""Command line entry point: simulate, select, train, benchmark, compensate.

Every subcommand writes a ``config_resolved`` JSON sidecar holding all of
its effective parameters; ``thermosurrogate replay <sidecar>`` reruns it.
Diagnostics go to stderr, data only to files. Exit status is 0 on success,
1 on a domain error and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import re
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .dataset import InitialConditions, NodeTimeSeries, NormMode, Quantity, load_csv, save_csv, split
from .error_chain import compensation_offset, load_chain, tcp_drift, write_offsets_csv
from .errors import ConfigError, EmptyReport, ThermoError
from .models import ALL_KINDS, ModelKind, ModelSpec
from .node_select import DEFAULT_TAU, fit_plan
from .report import best_config_row, read_best_configs, reports_from_metrics, write_best_configs, write_reports
from .thermal_sim import load_network_config, make_run_suite, ranges_from_dict
from .train import (PARENT_SOURCES, REPEAT_SEEDS, FoldData, OptimConfig, SearchSpace, apply_config, generalised_protocol,
                    random_search, read_metrics, specialised_protocol, train_model, tune_specialised,
                    write_metrics, write_trial_log)

log = logging.getLogger("thermosurrogate")

SIDECAR = "config_resolved.json"
MANIFEST = "manifest.json"
_RUN_FILE = re.compile(r"^(?P<run>.+)_(?P<q>temperature|heatflux)\.csv$")

class UsageError(Exception):
    pass

def default_seed() -> int:
    raw = os.environ.get("THERMO_SEED")
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"THERMO_SEED must be an integer, got {raw!r}") from None

def _write_sidecar(path: Path, command: str, params: dict) -> None:
    path.write_text(json.dumps({"command": command, "version": __version__, "params": params},
                               indent=1, sort_keys=True) + "\n", encoding="utf-8")

def _sidecar_for(out: Path) -> Path:
    return out.with_name(out.name + "." + SIDECAR)

def _run_key(run_id: str):
    m = re.search(r"(\d+)$", run_id)
    return (run_id[: m.start()] if m else run_id, int(m.group(1)) if m else -1, run_id)

def load_runs(data: Path, quantity: Quantity | str) -> list[NodeTimeSeries]:
    """All ``<RUN>_<quantity>.csv`` files under ``data``, ordered by run number."""
    quantity = Quantity(quantity)
    if not data.is_dir():
        raise ConfigError(f"{data}: not a directory")
    conds = {}
    manifest = data / MANIFEST
    if manifest.exists():
        for r in json.loads(manifest.read_text(encoding="utf-8")).get("runs", []):
            conds[r["run_id"]] = InitialConditions.from_dict(r["initial_conditions"])
    found = []
    for p in data.iterdir():
        m = _RUN_FILE.match(p.name)
        if m and m.group("q") == quantity.value:
            found.append((m.group("run"), p))
    if not found:
        raise ConfigError(f"{data}: no *_{quantity.value}.csv files")
    found.sort(key=lambda rp: _run_key(rp[0]))
    return [load_csv(p, quantity, run_id=r, initial_conditions=conds.get(r)) for r, p in found]

# subcommands ------------------------------------------------------------------------

def cmd_simulate(a: argparse.Namespace) -> dict:
    if a.runs < 1:
        raise UsageError("--runs must be >= 1")
    net, cfg = load_network_config(a.config)
    sim = {**cfg.get("simulation", {})}
    for key in ("dt", "steps", "substeps"):
        if getattr(a, key) is not None:
            sim[key] = getattr(a, key)
    ranges = ranges_from_dict(cfg.get("ranges"))
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    suite = make_run_suite(a.runs, net, a.seed, dt=float(sim.get("dt", 60.0)), steps=int(sim.get("steps", 600)),
                           substeps=int(sim.get("substeps", 10)), ranges=ranges)
    entries = []
    for temp, flux in suite:
        save_csv(temp, out / f"{temp.run_id}_{Quantity.TEMPERATURE.value}.csv")
        save_csv(flux, out / f"{flux.run_id}_{Quantity.HEAT_FLUX.value}.csv")
        entries.append({"run_id": temp.run_id, "initial_conditions": temp.initial_conditions.to_dict()})
    (out / MANIFEST).write_text(json.dumps({"seed": a.seed, "runs": entries}, indent=1) + "\n", encoding="utf-8")
    params = {"config": a.config, "runs": a.runs, "seed": a.seed, "out": str(out), "dt": float(sim.get("dt", 60.0)),
              "steps": int(sim.get("steps", 600)), "substeps": int(sim.get("substeps", 10)),
              "network_config": cfg}
    _write_sidecar(out / SIDECAR, "simulate", params)
    log.info("wrote %d runs to %s", a.runs, out)
    return params

def cmd_select(a: argparse.Namespace) -> dict:
    if not 0.0 < a.tau < 1.0:
        raise UsageError("--tau must lie in (0, 1)")
    runs = load_runs(Path(a.data), a.quantity)
    train_parts = [split(r)[0] for r in runs]
    plan = fit_plan(train_parts, a.tau)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    plan.save(out)
    params = {"data": a.data, "quantity": a.quantity, "tau": a.tau, "out": str(out)}
    _write_sidecar(_sidecar_for(out), "select", params)
    log.info("retained %d of %d nodes (tau=%g)", len(plan.retained), plan.n_nodes, a.tau)
    return params

def _parse_search(text: str) -> int:
    if text in ("none", "off", "0", "trials=0"):
        return 0
    m = re.fullmatch(r"trials=(\d+)", text)
    if not m:
        raise UsageError(f"--search expects 'trials=N' or 'none', got {text!r}")
    return int(m.group(1))

def _parse_arch(text: str) -> list[ModelKind]:
    valid = [k.value for k in ALL_KINDS]
    if text == "all":
        return list(ALL_KINDS)
    kinds = []
    for part in text.split(","):
        if part not in valid:
            raise UsageError(f"unknown architecture {part!r}; valid: {', '.join(valid)}, all")
        kinds.append(ModelKind(part))
    return kinds

def _fold_tuner(space: SearchSpace, trials: int, seed: int, kind: ModelKind, sink: list):
    def configure(fold: FoldData, spec: ModelSpec, optim: OptimConfig):
        def objective(cfg):
            s, o = apply_config(spec, optim, cfg)
            return train_model(s, o, fold.prep.train, fold.prep.val, seed).val_curve[-1]

        best, trials_log = random_search(space, objective, trials, seed, kind)
        sink.append((fold.held_out.run_id, best, trials_log))
        return apply_config(spec, optim, best)

    return configure

def cmd_train(a: argparse.Namespace) -> dict:
    kinds = _parse_arch(a.arch)
    trials = _parse_search(a.search)
    if not 0.0 < a.tau < 1.0:
        raise UsageError("--tau must lie in (0, 1)")
    if a.epochs < 1:
        raise UsageError("--epochs must be >= 1")
    seeds = tuple(int(s) for s in a.seeds.split(",")) if a.seeds else REPEAT_SEEDS
    quantities = [q.value for q in Quantity] if a.quantity == "both" else [a.quantity]
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("metrics.csv", "trial_log.csv"):
        (out / name).unlink(missing_ok=True)
    optim = OptimConfig(epochs=a.epochs)
    space = SearchSpace()
    base_cfg = {"learning_rate": optim.learning_rate, "weight_decay": optim.weight_decay,
                "dropout": 0.0, "hidden": a.hidden, "layers": a.layers, "heads": 2}
    best_rows = []
    for q in quantities:
        runs = load_runs(Path(a.data), q)
        if a.runs:
            wanted = set(a.runs.split(","))
            runs = [r for r in runs if r.run_id in wanted]
            if not runs:
                raise UsageError(f"--runs {a.runs!r} matches no run in {a.data}")
        for kind in kinds:
            spec = ModelSpec(kind=kind, d_in=1, d_out=1, hidden=a.hidden, layers=a.layers)
            if a.protocol == "specialised":
                for run in runs:
                    s, o, cfg = spec, optim, dict(base_cfg)
                    if trials:
                        tr, va, _ = split(run)
                        cfg, tlog = tune_specialised(tr, va, spec, optim, space, trials, a.tau, a.seed, a.norm)
                        write_trial_log(tlog, out / "trial_log.csv",
                                        {"protocol": a.protocol, "quantity": q, "run_id": run.run_id, "kind": kind.value})
                        s, o = apply_config(spec, optim, cfg)
                    m = specialised_protocol(run, s, a.tau, o, seeds, a.norm, parents=a.parents)
                    write_metrics([m], out / "metrics.csv", a.protocol, q)
                    best_rows.append(best_config_row(run.run_id, q, kind.value, cfg))
                    log.info("%s %s %s: mse=%.4g±%.2g", q, run.run_id, kind.value, m.mse_mean, m.mse_std)
            else:
                sink: list = []
                configure = _fold_tuner(space, trials, a.seed, kind, sink) if trials else None
                rows = generalised_protocol(runs, spec, a.tau, optim, seeds, a.norm, configure, a.parents)
                write_metrics(rows, out / "metrics.csv", a.protocol, q)
                chosen = {r: c for r, c, _ in sink}
                for run_id, _, tlog in sink:
                    write_trial_log(tlog, out / "trial_log.csv",
                                    {"protocol": a.protocol, "quantity": q, "run_id": run_id, "kind": kind.value})
                for m in rows:
                    best_rows.append(best_config_row(m.run_id, q, kind.value, chosen.get(m.run_id, base_cfg)))
                    log.info("%s fold %s %s: mse=%.4g (in-dist %.4g)", q, m.run_id, kind.value, m.mse_mean,
                             m.in_distribution_mse)
    write_best_configs(best_rows, out / "best_configs.csv")
    params = {"data": a.data, "arch": [k.value for k in kinds], "protocol": a.protocol, "search_trials": trials,
              "quantity": quantities, "epochs": a.epochs, "seeds": list(seeds), "tau": a.tau, "seed": a.seed,
              "norm": a.norm, "parents": a.parents, "hidden": a.hidden, "layers": a.layers, "runs": a.runs, "out": str(out),
              "optim": {k: getattr(optim, k) for k in optim.__dataclass_fields__}}
    _write_sidecar(out / SIDECAR, "train", params)
    return params

def cmd_benchmark(a: argparse.Namespace) -> dict:
    data = Path(a.data)
    if not data.is_dir():
        raise ConfigError(f"{data}: not a directory")
    out = Path(a.out)

    def inputs(name):
        # earlier reports written inside the data tree are not inputs
        return sorted(p for p in data.rglob(name) if out.resolve() not in p.resolve().parents)

    metric_files = inputs("metrics.csv")
    rows = [r for p in metric_files for r in read_metrics(p)]
    if not rows:
        raise EmptyReport(f"{data}: no metrics.csv rows found")
    write_reports(reports_from_metrics(rows), out)
    best = read_best_configs(inputs("best_configs.csv"))
    write_best_configs(best, out / "best_configs.csv")
    params = {"data": str(data), "out": str(out), "inputs": [str(p.relative_to(data)) for p in metric_files]}
    _write_sidecar(out / SIDECAR, "benchmark", params)
    return params

def cmd_compensate(a: argparse.Namespace) -> dict:
    pred = load_csv(a.predictions, Quantity.TEMPERATURE)
    chain = load_chain(a.chain)
    est = tcp_drift(pred, chain)
    offset = compensation_offset(est)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_offsets_csv(pred.timestamps, est, offset, out)
    params = {"predictions": a.predictions, "chain": a.chain, "out": str(out)}
    _write_sidecar(_sidecar_for(out), "compensate", params)
    return params

# parser -----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="thermosurrogate", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic temperature/heat-flux runs")
    s.add_argument("--config", default=None, help="network JSON (packaged default if omitted)")
    s.add_argument("--runs", type=int, default=12)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--dt", type=float, default=None)
    s.add_argument("--steps", type=int, default=None)
    s.add_argument("--substeps", type=int, default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("select", help="fit the correlation-based node reduction plan")
    s.add_argument("--data", required=True)
    s.add_argument("--quantity", choices=[q.value for q in Quantity], default=Quantity.TEMPERATURE.value)
    s.add_argument("--tau", type=float, default=DEFAULT_TAU)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_select)

    s = sub.add_parser("train", help="train surrogates under one protocol")
    s.add_argument("--data", required=True)
    s.add_argument("--arch", default="gru", help=f"one of {', '.join(k.value for k in ALL_KINDS)}, a comma list, or all")
    s.add_argument("--protocol", choices=["specialised", "generalised"], default="specialised")
    s.add_argument("--search", default="trials=20", help="'trials=N' or 'none'")
    s.add_argument("--quantity", choices=[*(q.value for q in Quantity), "both"], default="both")
    s.add_argument("--epochs", type=int, default=OptimConfig.epochs)
    s.add_argument("--seeds", default=None, help="comma-separated repeat seeds (default 1,2,3)")
    s.add_argument("--seed", type=int, default=None, help="search/tuning seed")
    s.add_argument("--tau", type=float, default=DEFAULT_TAU)
    s.add_argument("--norm", choices=[m.value for m in NormMode], default=NormMode.MINMAX.value)
    s.add_argument("--parents", choices=list(PARENT_SOURCES), default="predicted",
                   help="rebuild discarded nodes from predicted or measured parent values")
    s.add_argument("--hidden", type=int, default=32, help="hidden units when not searching")
    s.add_argument("--layers", type=int, default=1, help="layers when not searching")
    s.add_argument("--runs", default=None, help="comma-separated run ids to restrict to")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("benchmark", help="aggregate metrics into report tables")
    s.add_argument("--data", required=True, help="directory searched recursively for metrics.csv")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("compensate", help="turn predicted temperatures into axis offsets")
    s.add_argument("--predictions", required=True)
    s.add_argument("--chain", default=None, help="chain JSON (packaged default if omitted)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_compensate)

    s = sub.add_parser("replay", help="rerun a command from its config_resolved sidecar")
    s.add_argument("sidecar")
    s.set_defaults(func=None)
    return p

def _replay_argv(sidecar: str) -> list[str]:
    try:
        doc = json.loads(Path(sidecar).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read sidecar {sidecar}: {exc}") from None
    cmd, prm = doc["command"], doc["params"]
    argv = [cmd]
    if cmd == "simulate":
        argv += ["--runs", str(prm["runs"]), "--seed", str(prm["seed"]), "--out", prm["out"],
                 "--dt", repr(prm["dt"]), "--steps", str(prm["steps"]), "--substeps", str(prm["substeps"])]
        if prm.get("config"):
            argv += ["--config", prm["config"]]
    elif cmd == "select":
        argv += ["--data", prm["data"], "--quantity", prm["quantity"], "--tau", repr(prm["tau"]), "--out", prm["out"]]
    elif cmd == "train":
        q = prm["quantity"]
        argv += ["--data", prm["data"], "--arch", ",".join(prm["arch"]), "--protocol", prm["protocol"],
                 "--search", f"trials={prm['search_trials']}", "--quantity", q[0] if len(q) == 1 else "both",
                 "--epochs", str(prm["epochs"]), "--seeds", ",".join(map(str, prm["seeds"])),
                 "--seed", str(prm["seed"]), "--tau", repr(prm["tau"]), "--norm", prm["norm"],
                 "--parents", prm.get("parents", "predicted"),
                 "--hidden", str(prm["hidden"]), "--layers", str(prm["layers"]), "--out", prm["out"]]
        if prm.get("runs"):
            argv += ["--runs", prm["runs"]]
    elif cmd == "benchmark":
        argv += ["--data", prm["data"], "--out", prm["out"]]
    elif cmd == "compensate":
        argv += ["--predictions", prm["predictions"], "--out", prm["out"]]
        if prm.get("chain"):
            argv += ["--chain", prm["chain"]]
    else:
        raise UsageError(f"unknown command {cmd!r} in {sidecar}")
    return argv

def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if a.command == "replay":
            a = parser.parse_args(_replay_argv(a.sidecar))
        if getattr(a, "seed", "absent") is None:
            a.seed = default_seed()
        a.func(a)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (ThermoError, OSError) as exc:
        print(f"{parser.prog}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0

if __name__ == "__main__":
    sys.exit(main())
