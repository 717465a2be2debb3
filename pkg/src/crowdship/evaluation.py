"""Evaluation runs, aggregation, result files and parameter sweeps."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import POLICIES, POLICY_LABELS, ConfigError, ExperimentConfig
from .environment import CrowdShippingEnv
from .simulation import EpisodeStats, build_policy, build_table, run_episode
from .training import config_digest, load_networks, run_training

log = logging.getLogger(__name__)

SWEEP_AXES = {
    "detour_fee": ("fees.detour_fee", float),
    "base_fee": ("fees.base_fee", float),
    "kappa": ("kappa", int),
    "order_shipper_ratio": ("env.order_shipper_ratio", float),
    "D": ("env.max_delay", int),
}
DETOUR_BINS = np.arange(0.0, 32.0, 2.0)


@dataclass
class Evaluation:
    config: ExperimentConfig
    episodes: list[EpisodeStats]
    summary: dict

    @property
    def mean_cost(self) -> float:
        return self.summary["mean"]["cost"]


def _stats_summary(values: np.ndarray) -> tuple[float, float]:
    std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
    return float(np.mean(values)), std


def summarize(cfg: ExperimentConfig, episodes: Sequence[EpisodeStats]) -> dict:
    """Mean and standard deviation of every scalar field plus the plot series."""
    hours = len(episodes[0].pricing_hist) if episodes else 0
    per_hour = max(1, 60 // cfg.env.delta)
    mean, std = {}, {}
    for key in EpisodeStats.SCALARS:
        mean[key], std[key] = _stats_summary(np.array([getattr(s, key) for s in episodes], dtype=float))
    cost = np.array([s.epoch_cost for s in episodes])
    offers = np.array([s.epoch_offers for s in episodes])
    offered_orders = np.array([s.epoch_offered_orders for s in episodes])
    hourly_cost, hourly_batch = [], []
    for h in range(hours):
        sl = slice(h * per_hour, (h + 1) * per_hour)
        hourly_cost.append(float(cost[:, sl].sum(axis=1).mean()))
        n = offers[:, sl].sum()
        hourly_batch.append(float(offered_orders[:, sl].sum() / n) if n else 0.0)
    detours = np.concatenate([np.asarray(s.detours, dtype=float) for s in episodes]) if episodes else np.zeros(0)
    counts, _ = np.histogram(detours, bins=np.append(DETOUR_BINS, np.inf))
    heat = np.sum([s.pricing_hist for s in episodes], axis=0).tolist() if episodes else []
    return {
        "policy": cfg.policy,
        "label": POLICY_LABELS[cfg.policy],
        "config_digest": config_digest(cfg),
        "episodes": len(episodes),
        "days": cfg.eval.days,
        "repeats": cfg.eval.repeats,
        "seed": cfg.eval.seed,
        "mean": mean,
        "std": std,
        "hourly_cost": hourly_cost,
        "hourly_batch_size": hourly_batch,
        "detour_bins": DETOUR_BINS.tolist(),
        "detour_counts": counts.tolist(),
        "multipliers": list(cfg.fees.multipliers),
        "pricing_heatmap": heat,
    }


def run_evaluation(cfg: ExperimentConfig, checkpoints=None, out=None, policy=None, plots: bool = True) -> Evaluation:
    """Evaluation-mode episodes over days x repeats (no exploration, no learning)."""
    table = build_table(cfg)
    if policy is None:
        value = pricing = None
        if cfg.policy != "greedy+fixed":
            if checkpoints is None:
                raise ConfigError(f"policy {cfg.policy} needs trained checkpoints")
            value, pricing = load_networks(checkpoints, cfg, table.num_locations)
        policy = build_policy(cfg, table.num_locations, value, pricing)
    env = CrowdShippingEnv(cfg.env, cfg.fees, table)
    episodes = []
    for r in range(cfg.eval.repeats):
        for d in range(cfg.eval.days):
            episodes.append(run_episode(cfg, env, policy, cfg.eval.seed, d, r))
    episodes.sort(key=lambda s: (s.day, s.repeat))
    result = Evaluation(cfg, episodes, summarize(cfg, episodes))
    if out is not None:
        write_evaluation(result, Path(out), plots)
    return result


def write_evaluation(result: Evaluation, out: Path, plots: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    s = result.summary
    with open(out / "episodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("seed", "day", "repeat", *EpisodeStats.SCALARS))
        for e in result.episodes:
            w.writerow((e.seed, e.day, e.repeat, *(e.scalars().values())))
    (out / "summary.json").write_text(json.dumps(s, indent=2, sort_keys=True) + "\n")
    with open(out / "hourly.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("hour", "mean_cost", "mean_batch_size"))
        for h, (c, b) in enumerate(zip(s["hourly_cost"], s["hourly_batch_size"])):
            w.writerow((h, c, b))
    with open(out / "detour_distribution.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("detour_from_minutes", "count"))
        w.writerows(zip(s["detour_bins"], s["detour_counts"]))
    with open(out / "pricing_heatmap.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("hour", *(f"x{m:g}" for m in s["multipliers"])))
        for h, row in enumerate(s["pricing_heatmap"]):
            w.writerow((h, *row))
    if plots:
        from .plots import render_evaluation
        render_evaluation(s, out)


# -- sweeps ------------------------------------------------------------------

def axis_override(axis: str, value) -> tuple[str, object]:
    if axis not in SWEEP_AXES:
        raise ConfigError(f"unknown sweep axis {axis!r}; valid axes: {', '.join(SWEEP_AXES)}")
    path, cast = SWEEP_AXES[axis]
    return path, cast(value)


def run_sweep(cfg: ExperimentConfig, axis: str, values: Sequence, out=None, checkpoints=None,
              policies: Sequence[str] = POLICIES, train_missing: bool = True, plots: bool = True) -> dict:
    """Evaluate every policy at every axis value on the same arrival streams.

    Learned policies use ``checkpoints/<axis>=<value>/<policy>`` when present, otherwise
    they are trained first (into ``out``) if ``train_missing`` is set.
    """
    unknown = [p for p in policies if p not in POLICIES]
    if unknown:
        raise ConfigError(f"unknown policies {unknown}; choose from {', '.join(POLICIES)}")
    overrides = [axis_override(axis, v) for v in values]
    out = Path(out) if out is not None else None
    rows = []
    for path, value in overrides:
        tag = f"{axis}={value:g}" if isinstance(value, float) else f"{axis}={value}"
        row = {"axis": axis, "value": value, "cost": {}, "std": {}, "mean_detour": {}, "mean_batch_size": {}}
        for pol in policies:
            c = cfg.replace(**{path: value, "policy": pol})
            ckpt = None
            if pol != "greedy+fixed":
                ckpt = Path(checkpoints) / tag / pol if checkpoints is not None else None
                if ckpt is None or not ckpt.exists():
                    if not train_missing or out is None:
                        raise ConfigError(f"no checkpoints for {pol} at {tag}")
                    ckpt = run_training(c, out / tag / pol / "train")
            res = run_evaluation(c, ckpt, out / tag / pol if out is not None else None, plots=plots)
            label = POLICY_LABELS[pol]
            row["cost"][label] = res.summary["mean"]["cost"]
            row["std"][label] = res.summary["std"]["cost"]
            row["mean_detour"][label] = res.summary["mean"]["mean_detour"]
            row["mean_batch_size"][label] = res.summary["mean"]["mean_batch_size"]
        nd = row["cost"].get("N+D")
        row["pct_over_nd"] = {k: (v - nd) / nd * 100.0 for k, v in row["cost"].items() if k != "N+D"} if nd else {}
        rows.append(row)
    table = {"axis": axis, "values": [r["value"] for r in rows], "rows": rows}
    if out is not None:
        write_sweep(table, out, plots)
    return table


def write_sweep(table: dict, out: Path, plots: bool = True) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep.json").write_text(json.dumps(table, indent=2, sort_keys=True) + "\n")
    labels = sorted({k for r in table["rows"] for k in r["cost"]}, key=list(POLICY_LABELS.values()).index)
    others = [k for k in labels if k != "N+D"]
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow((table["axis"], *(f"cost_{k}" for k in labels), *(f"pct_{k}_over_N+D" for k in others
                                                                    if "N+D" in labels)))
        for r in table["rows"]:
            pct = [r["pct_over_nd"][k] for k in others] if "N+D" in labels else []
            w.writerow((r["value"], *(r["cost"][k] for k in labels), *pct))
    if plots:
        from .plots import render_sweep
        render_sweep(table, out)
