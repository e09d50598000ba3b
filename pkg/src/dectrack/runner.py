"""Scenario runs, fixed-margin sweeps and their CSV/JSON outputs."""

import csv
import io
import json
import logging
import os
from dataclasses import replace

import numpy as np

from .sim import Simulation, csv_columns, record_row

log = logging.getLogger(__name__)

# quantities the simulation needs but that are implementation choices
IMPLEMENTATION_DEFAULTS = ("dt", "planner.d_max", "control.d_min", "targets.process_noise",
                           "targets.radii", "targets.angular_rate", "sensors.gain",
                           "sensors.decay", "risk.peak", "risk.spread")


def run_scenario(cfg, seed=None, steps=None, keep_messages=False):
    """Simulate ``cfg`` as configured; returns a :class:`~dectrack.sim.RunResult`."""
    if steps is not None:
        cfg = replace(cfg, steps=int(steps))
    return Simulation(cfg, seed, keep_messages=keep_messages).run()


def run_centralized(cfg, seed=None, steps=None):
    return run_scenario(replace(cfg, mode="centralized"), seed, steps)


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def csv_text(result):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_columns(result.config.n_robots, result.config.n_targets))
    for rec in result.records:
        w.writerow([_fmt(v) for v in record_row(rec)])
    return buf.getvalue()


def _lookup(cfg_dict, dotted):
    node = cfg_dict
    for part in dotted.split("."):
        node = node[part]
    return node


def summary(result):
    from .config import to_dict
    recs = result.records
    cfg_d = to_dict(result.config)
    out = {
        "name": result.config.name,
        "seed": result.seed,
        "mode": result.config.mode,
        "risk_aware": result.config.risk_aware,
        "steps": len(recs),
        "initial": result.initial,
        "messages": {"count": result.log.count, "bytes": result.log.bytes,
                     "by_type": {k: {"count": c, "bytes": b}
                                 for k, (c, b) in sorted(result.log.by_type.items())}},
        "flags": result.flags,
        "implementation_defaults": {k: _lookup(cfg_d, k) for k in IMPLEMENTATION_DEFAULTS},
    }
    if recs:
        last = recs[-1]
        out["final"] = {"mean_trace_P": float(last.trace_P.mean()),
                        "mean_eta": float(last.eta.mean()),
                        "cum_failures": last.cum_failures,
                        "lambda2_true": last.lambda2_true,
                        "positions": last.positions.tolist()}
        out["mean"] = {"trace_P": float(np.mean([r.trace_P.mean() for r in recs])),
                       "eta": float(np.mean([r.eta.mean() for r in recs])),
                       "trace_O_inv": float(np.mean([r.trace_O_inv.mean() for r in recs])),
                       "total_risk": float(np.mean([r.total_risk for r in recs]))}
        out["min"] = {"lambda2_true": float(min(r.lambda2_true for r in recs)),
                      "pair_distance": float(min(r.min_pair_dist for r in recs))}
        out["planner_converged_all"] = all(r.planner_converged for r in recs)
    return out


def write_outputs(result, out_dir, stem=None, messages=False):
    os.makedirs(out_dir, exist_ok=True)
    stem = stem or f"{result.config.name}_{result.config.mode}_seed{result.seed}"
    csv_path = os.path.join(out_dir, stem + ".csv")
    json_path = os.path.join(out_dir, stem + ".json")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(csv_text(result))
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump(summary(result), fh, indent=2)
    if messages and result.log.keep_entries:
        result.log.dump_jsonl(os.path.join(out_dir, stem + "_messages.jsonl"))
    return csv_path, json_path


def run_sweep(cfg, etas, seeds=None, tail_steps=None, steps=None):
    """Fixed-margin sweep with random failures off.

    Each row holds ``eta`` and the mean ``Tr P`` / ``Tr O^-1`` over robots, over
    the last ``tail_steps`` steps and over seeds. Run length is ``steps``, else
    ``cfg.sweep.steps``, else ``cfg.steps``.
    """
    etas = list(etas)
    if not etas:
        raise ValueError("sweep needs at least one eta value")
    seeds = list(cfg.sweep.seeds if seeds is None else seeds)
    tail = cfg.sweep.tail_steps if tail_steps is None else tail_steps
    steps = steps or cfg.sweep.steps or cfg.steps
    base = replace(cfg, steps=steps,
                   failures=replace(cfg.failures, random=False, scripted=()))
    rows = []
    for eta in etas:
        c = replace(base, planner=replace(base.planner, eta_override=float(eta)))
        tp, to = [], []
        for s in seeds:
            recs = Simulation(c, s).run().records[-tail:]
            tp.append(np.mean([r.trace_P.mean() for r in recs]))
            to.append(np.mean([r.trace_O_inv.mean() for r in recs]))
        rows.append({"eta": float(eta), "mean_trace_P": float(np.mean(tp)),
                     "mean_trace_O_inv": float(np.mean(to))})
    return rows


def sweep_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["eta", "mean_trace_P", "mean_trace_O_inv"])
    for r in rows:
        w.writerow([_fmt(r["eta"]), _fmt(r["mean_trace_P"]), _fmt(r["mean_trace_O_inv"])])
    return buf.getvalue()
