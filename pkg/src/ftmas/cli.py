"""Command-line interface.

    ftmas synthesize --config run.yaml --out out/
    ftmas simulate   --config run.yaml --out out/ [--seed N] [--set key=value]...
    ftmas scenario 2 [--config topology.yaml] --out out/
    ftmas sweep      --config sweep.yaml --out out/

``scenario N`` writes the preset as ``scenario_N.yaml`` into the output
directory and then runs exactly what ``simulate`` would run on that file.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .config import RunConfig, apply_overrides, dump_config, load_config, normalized
from .errors import ConfigError, FtmasError, NeverExceeds, NotHurwitz
from .plant import assemble_fault, effective_input, leader_input_bound
from .robustness import max_recovery_delay, sample_severity_perturbations, severity_uncertainty_bound
from .simulate import TeamSetup, integrate, metrics, summary_json
from .synth_healthy import certify_healthy, synthesize_healthy
from .synth_reconfig import synthesize_reconfig

# ---------------------------------------------------------------------------
# scenario presets
# ---------------------------------------------------------------------------

_FAULT_AGENT0 = ["healthy", "outage", "healthy", "healthy"]
_FAULT_AGENT1 = ["loe:0.7", "stuck:1.0", "healthy", "healthy"]
_HEALTHY = ["healthy"] * 4

SCENARIOS = {
    "1": {
        "name": "scenario-1 faulty team without reconfiguration",
        "faults": [
            {"agent": 0, "t_f": 25.0, "t_r": None, "modes": _FAULT_AGENT0},
            {"agent": 1, "t_f": 25.0, "t_r": None, "modes": _FAULT_AGENT1},
        ],
    },
    "2": {
        "name": "scenario-2 reconfiguration after a 5 s delay",
        "faults": [
            {"agent": 0, "t_f": 25.0, "t_r": 30.0, "modes": _FAULT_AGENT0},
            {"agent": 1, "t_f": 25.0, "t_r": 30.0, "modes": _FAULT_AGENT1},
        ],
    },
    "3": {
        "name": "scenario-3 reconfiguration with severity estimation errors",
        "faults": [
            {"agent": 0, "t_f": 25.0, "t_r": 30.0, "modes": _FAULT_AGENT0},
            {"agent": 1, "t_f": 25.0, "t_r": 30.0, "modes": _FAULT_AGENT1,
             "estimated": ["loe:0.6", "stuck:0.9", "healthy", "healthy"]},
        ],
    },
    "4.1": {
        "name": "scenario-4.1 false alarm on agent 1",
        "faults": [
            {"agent": 1, "t_f": 20.0, "t_r": 20.0, "modes": _HEALTHY, "estimated": _FAULT_AGENT1},
        ],
    },
    "4.2": {
        "name": "scenario-4.2 fault on agent 1 isolated to agent 0",
        "faults": [
            {"agent": 0, "t_f": 20.0, "t_r": 20.0, "modes": _HEALTHY, "estimated": _FAULT_AGENT1},
            {"agent": 1, "t_f": 20.0, "t_r": None, "modes": _FAULT_AGENT1},
        ],
    },
}


def scenario_config(key: str, user: dict | None = None) -> dict:
    """Preset document for scenario ``key``, with ``user`` keys merged on top."""
    if key not in SCENARIOS:
        raise ConfigError(f"unknown scenario {key!r}", [("scenario", f"choose from {sorted(SCENARIOS)}")])
    doc = normalized(RunConfig.model_validate(SCENARIOS[key]))
    return _merge(doc, user or {})


def _merge(base: dict, top: dict) -> dict:
    out = dict(base)
    for k, v in top.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


# ---------------------------------------------------------------------------
# runs
# ---------------------------------------------------------------------------


def design(cfg: RunConfig) -> dict:
    """Model, topology, leader bound and healthy gains of a configuration."""
    model, leader = cfg.model_and_leader()
    top = cfg.build_topology()
    x0, x, xa = cfg.initial_states(model.n)
    u0M = cfg.design.u0M
    if u0M is None:
        u0M = leader_input_bound(model, leader, cfg.sim.horizon, x0) * cfg.design.u0M_margin
    g = synthesize_healthy(model, top, u0M, cfg.design.gamma, safety=cfg.design.safety,
                           c2_scale=cfg.design.c2_scale)
    return dict(model=model, leader=leader, top=top, gains=g, x0=x0, x=x, xa=xa, u0M=u0M)


def _reconfig_for(cfg: RunConfig, model, spec):
    part = assemble_fault(model, spec, use_estimates=True)
    return synthesize_reconfig(model, part, pole_radius=cfg.design.pole_radius,
                               feas_tol=cfg.design.feas_tol, max_iter=cfg.design.max_iter)


def synthesize_report(cfg: RunConfig) -> dict:
    d = design(cfg)
    model, g = d["model"], d["gains"]
    rep = {
        "healthy": {
            "gamma": g.gamma, "c1": g.c1, "c2": g.c2, "c0": g.c0, "c3": g.coupling.c3,
            "c4inv": g.coupling.c4inv, "u0M": d["u0M"], "P": g.P, "K": g.K,
            "certificate": certify_healthy(model, d["top"], g),
        },
        "reconfig": {},
    }
    for spec in cfg.fault_specs():
        rg = _reconfig_for(cfg, model, spec)
        entry = {
            "method": rg.method, "alpha": rg.alpha, "gamma_f": rg.gamma_f, "exact": rg.exact,
            "matching_residual": rg.matching_residual, "stuck_residual": rg.stuck_residual,
            "friend_residual": rg.friend_residual, "lmi_margin": rg.lmi_margin,
            "K1r": rg.K1r, "K2r": rg.K2r, "u_C": rg.u_C,
            "closed_loop_poles": np.sort(np.linalg.eigvals(rg.closed_loop).real),
        }
        entry["robustness"] = _severity(cfg, rg)
        rep["reconfig"][str(spec.agent)] = entry
    return rep


def _severity(cfg: RunConfig, rg) -> dict:
    try:
        eps, P = severity_uncertainty_bound(rg, cfg.robustness.weights, cfg.robustness.norm)
    except NotHurwitz as exc:
        return {"error": str(exc)}
    samples = sample_severity_perturbations(rg, eps, n=20, seed=cfg.seed)
    return {
        "eps_max": [None if not np.isfinite(e) else float(e) for e in eps],
        "norm": cfg.robustness.norm,
        "P_lyap": P,
        "samples_hurwitz": int(sum(s < 0 for _, s in samples)),
        "samples": len(samples),
    }


def true_closed_loop(model, spec, rg) -> np.ndarray:
    """``A + B_true S K1r``: the reconfigured loop acting on the real actuators."""
    Beff, _ = effective_input(model, spec.modes, np.zeros(model.m))
    return model.A + Beff @ rg.partition.scatter_matrix() @ rg.K1r


def run_simulation(cfg: RunConfig) -> tuple:
    """Run one configuration; returns ``(trace, metrics, extra summary entries)``."""
    d = design(cfg)
    model = d["model"]
    specs = cfg.fault_specs()
    setup = TeamSetup(
        model=model, leader=d["leader"], top=d["top"], gains=d["gains"], x0=d["x0"],
        x=d["x"], xa=d["xa"], faults=specs, disturbances=cfg.disturbance_specs(model.p),
        phi=cfg.design.phi, pole_radius=cfg.design.pole_radius,
    )
    for spec in specs:
        if spec.t_r <= cfg.sim.horizon:
            setup.reconfig[spec.agent] = _reconfig_for(cfg, model, spec)
    trace = integrate(setup, h=cfg.sim.h, horizon=cfg.sim.horizon, overflow_guard=cfg.sim.overflow_guard)
    gamma_f = {a: rg.gamma_f for a, rg in trace.reconfig.items()}
    rep = metrics(trace, gamma=d["gains"].gamma, gamma_f=gamma_f, settle=cfg.sim.settle,
                  window=cfg.sim.window)
    rep["u0M"] = d["u0M"]
    rep["max_state_norm"] = [float(np.nanmax(np.linalg.norm(trace.x[:, i], axis=1)))
                             for i in range(trace.N)]
    extra = {"robustness": {}, "true_closed_loop_max_real": {}}
    for spec in specs:
        a = spec.agent
        rob = {}
        if a in trace.reconfig:
            rg = trace.reconfig[a]
            extra["true_closed_loop_max_real"][str(a)] = float(
                np.max(np.linalg.eigvals(true_closed_loop(model, spec, rg)).real))
            rob.update(_severity(cfg, rg))
        if cfg.robustness.x_M is not None and spec.is_faulty:
            k = int(round(spec.t_f / trace.h))
            try:
                rob["delta_max"] = max_recovery_delay(
                    model, spec, d["gains"], trace.t, trace.xa[:, a], trace.ua[:, a],
                    trace.x[k, a], cfg.robustness.x_M)
            except NeverExceeds:
                rob["delta_max"] = None
            rob["x_M"] = cfg.robustness.x_M
        if rob:
            extra["robustness"][str(a)] = rob
    rep["stable"] = (not trace.diverged) and all(
        v < 0 for v in extra["true_closed_loop_max_real"].values())
    return trace, rep, extra


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def _json(obj) -> str:
    def default(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        if isinstance(o, np.bool_):
            return bool(o)
        raise TypeError(f"not JSON serializable: {type(o)}")
    return json.dumps(obj, indent=2, sort_keys=True, default=default)


def _simulate_to(cfg: RunConfig, out: Path) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.normalized.yaml").write_text(dump_config(cfg))
    trace, rep, extra = run_simulation(cfg)
    trace.to_csv(out / "trace.csv", stride=cfg.sim.csv_stride)
    (out / "summary.json").write_text(summary_json(trace, rep, {"name": cfg.name, "seed": cfg.seed, **extra}))
    emit_plots([out / "trace.csv"], out)
    return rep


PLOT_TEMPLATE = '''\
"""Plot {title} from {csv_name}."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv_path!r}
with open(path) as fh:
    rows = list(csv.DictReader(fh))
t = [float(r["t"]) for r in rows]
fig, ax = plt.subplots(figsize=(8, 4))
{body}
ax.set_xlabel({xlabel!r})
ax.set_ylabel({ylabel!r})
ax.legend(loc="best", fontsize="small")
fig.tight_layout()
fig.savefig({png!r}, dpi=150)
'''


SWEEP_TEMPLATE = '''\
"""Plot the stability verdict of each sweep point from {csv_name}."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv_path!r}
with open(path) as fh:
    rows = list(csv.DictReader(fh))
x = list(range(len(rows)))
fig, ax = plt.subplots(figsize=(8, 4))
ax.plot(x, [float(r["stable"] == "True") for r in rows], "o-")
ax.set_xticks(x, [r["value"] for r in rows], rotation=45)
ax.set_xlabel("swept value")
ax.set_ylabel("stable (1) / unstable (0)")
fig.tight_layout()
fig.savefig({png!r}, dpi=150)
'''


def emit_plots(files, out_dir) -> list:
    """Write standalone matplotlib scripts for trace or sweep CSV files.

    A trace yields one script per state family; a sweep table yields one
    script plotting the stability verdict against the swept value.

    Raises
    ------
    FileNotFoundError
        If no file is given or a file does not exist.
    """
    files = [Path(f) for f in files]
    if not files:
        raise FileNotFoundError("no trace files to plot")
    out_dir = Path(out_dir)
    written = []
    for f in files:
        if not f.is_file():
            raise FileNotFoundError(f"trace file {f} not found")
        with open(f) as fh:
            header = next(csv.reader(fh), [])
        stem = f.stem
        if header and header[0] == "value":
            p = out_dir / f"plot_{stem}_stability.py"
            p.write_text(SWEEP_TEMPLATE.format(csv_name=f.name, csv_path=str(f), png=f"{stem}_stability.png"))
            written.append(p)
            continue
        agents = sorted({c.split("_")[0] for c in header if c.startswith("agent")},
                        key=lambda s: int(s[5:]))
        families = [c[len("leader_"):] for c in header if c.startswith("leader_")]
        if not families:
            raise ValueError(f"{f} has no leader state columns")
        for s in families:
            lines = [f'ax.plot(t, [float(r["leader_{s}"]) for r in rows], "k--", label="leader")']
            lines += [f'ax.plot(t, [float(r["{a}_{s}"]) for r in rows], label="{a}")' for a in agents]
            script = PLOT_TEMPLATE.format(title=s, csv_name=f.name, csv_path=str(f), body="\n".join(lines),
                                          xlabel="t [s]", ylabel=s, png=f"{stem}_{s}.png")
            p = out_dir / f"plot_{stem}_{s}.py"
            p.write_text(script)
            written.append(p)
    return written


def run_sweep(cfg: RunConfig, raw: dict, out: Path, overrides=()) -> list:
    if cfg.sweep is None:
        raise ConfigError("sweep needs a 'sweep' section", [("sweep", "missing key and values")])
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for v in cfg.sweep.values:
        text = yaml.safe_dump(v, default_flow_style=True).strip()
        if text.endswith("..."):
            text = text[:-3].strip()
        point = load_config(yaml.safe_dump(apply_overrides(raw, list(overrides) + [f"{cfg.sweep.key}={text}"])))
        point = point.model_copy(update={"sweep": None})
        trace, rep, extra = run_simulation(point)
        rows.append({
            "value": v,
            "stable": rep["stable"],
            "diverged": sorted(trace.diverged),
            "true_closed_loop_max_real": max(extra["true_closed_loop_max_real"].values(), default=None),
            "ea_norm_ss_max": max(rep["ea_norm_ss"]),
            "surge_error_rel_ss_max": max(rep["surge_error_rel_ss"]),
        })
    with open(out / "sweep.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["value"], lineterminator="\n")
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (" ".join(map(str, v)) if isinstance(v, list) else v) for k, v in r.items()})
    (out / "sweep.json").write_text(_json({"key": cfg.sweep.key, "rows": rows}))
    emit_plots([out / "sweep.csv"], out)
    return rows


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ftmas", description="Fault-tolerant leader-follower team control.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("synthesize", "simulate", "sweep"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        _common(p)
    p = sub.add_parser("scenario")
    p.add_argument("which", choices=sorted(SCENARIOS))
    p.add_argument("--config", default=None, help="overrides merged on top of the preset (e.g. topology)")
    _common(p)
    return ap


def _common(p):
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    out = Path(args.out)
    try:
        if args.command == "scenario":
            user = {}
            if args.config:
                user = yaml.safe_load(Path(args.config).read_text()) or {}
            doc = scenario_config(args.which, user)
            out.mkdir(parents=True, exist_ok=True)
            preset = out / f"scenario_{args.which.replace('.', '_')}.yaml"
            preset.write_text(yaml.safe_dump(doc, sort_keys=False, default_flow_style=None))
            cfg = load_config(preset.read_text(), args.overrides, args.seed)
            rep = _simulate_to(cfg, out)
            print(_json({"diverged": rep["diverged"], "stable": rep["stable"]}))
            return 0
        text = Path(args.config).read_text()
        cfg = load_config(text, args.overrides, args.seed)
        if args.command == "synthesize":
            out.mkdir(parents=True, exist_ok=True)
            (out / "synthesis.json").write_text(_json(synthesize_report(cfg)))
        elif args.command == "simulate":
            rep = _simulate_to(cfg, out)
            print(_json({"diverged": rep["diverged"], "stable": rep["stable"]}))
        else:
            raw = yaml.safe_load(text) or {}
            if args.seed is not None:
                raw["seed"] = args.seed
            rows = run_sweep(cfg, raw, out, args.overrides)
            for r in rows:
                print(f"{r['value']}\tstable={r['stable']}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        for where, msg in exc.diagnostics:
            print(f"  {where}: {msg}", file=sys.stderr)
        return 2
    except FtmasError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
