"""Episode runner shared by training, evaluation and single-day simulation."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field
from typing import Protocol

import numpy as np

from .config import ExperimentConfig
from .environment import DELIVERED, LOST, CrowdShippingEnv, stream
from .geo import TravelTimeTable, build_travel_table, generate_locations, load_locations_csv
from .matching import SOLVERS
from .nn import Mlp, TargetPair
from .policies import (PRICING_BASE_FEATURES, VALUE_FEATURES, DdqnPricing, EpochContext, EpochPolicy,
                       FixedPricing, GreedyMatching, NeurAdpMatching, compose, to_decisions)
from .routing import feasible_pair_arrays

log = logging.getLogger(__name__)

TRACE_FIELDS = ("epoch", "new_orders", "new_shippers", "outstanding", "offers", "accepted", "delays",
                "delivered", "lost", "cost")


class InvariantViolation(RuntimeError):
    """A bookkeeping identity failed; results cannot be trusted."""


def build_table(cfg: ExperimentConfig) -> TravelTimeTable:
    e = cfg.env
    locs = load_locations_csv(e.locations_csv) if e.locations_csv else \
        generate_locations(e.num_locations, e.radius_km, e.location_seed)
    return build_travel_table(locs, e.speed_kmh)


def value_network(cfg: ExperimentConfig, num_locations: int, seed: int) -> Mlp:
    return Mlp(num_locations, VALUE_FEATURES, cfg.train.embed_dim, cfg.train.hidden, seed=seed,
               dtype=cfg.train.precision)


def pricing_network(cfg: ExperimentConfig, num_locations: int, seed: int) -> Mlp:
    k = len(cfg.fees.multipliers)
    return Mlp(num_locations, PRICING_BASE_FEATURES + k, cfg.train.embed_dim, cfg.train.hidden, seed=seed,
               dtype=cfg.train.precision)


def build_policy(cfg: ExperimentConfig, num_locations: int, value: TargetPair | None = None,
                 pricing: TargetPair | None = None) -> EpochPolicy:
    """Policy named by ``cfg.policy``; missing networks are freshly initialised from the seed."""
    matching_name, pricing_name = cfg.policy.split("+")
    if matching_name == "neuradp":
        value = value or TargetPair.from_online(value_network(cfg, num_locations, cfg.seed * 2 + 1), cfg.train.tau)
        matching = NeurAdpMatching(value, cfg.train.noise_std, SOLVERS[cfg.solver])
    else:
        matching = GreedyMatching()
    if pricing_name == "ddqn":
        pricing = pricing or TargetPair.from_online(pricing_network(cfg, num_locations, cfg.seed * 2 + 2),
                                                    cfg.train.tau)
        price = DdqnPricing(pricing, cfg.fees.multipliers, cfg.train.epsilon_min,
                            cfg.train.softmax_temperature)
    else:
        price = FixedPricing(cfg.fixed_multiplier)
    return compose(price, matching)


@dataclass
class EpisodeStats:
    seed: int
    day: int
    repeat: int
    cost: float = 0.0
    match_cost: float = 0.0
    lost_cost: float = 0.0
    entered: int = 0
    rejected_at_entry: int = 0
    delivered: int = 0
    lost: int = 0
    delays: int = 0            # delay decisions taken (order-epochs)
    offers: int = 0
    accepted: int = 0
    mean_detour: float = 0.0   # over accepted offers
    mean_batch_size: float = 0.0  # orders per offer
    epoch_cost: list[float] = field(default_factory=list)
    epoch_offers: list[int] = field(default_factory=list)
    epoch_offered_orders: list[int] = field(default_factory=list)
    detours: list[float] = field(default_factory=list)
    pricing_hist: list[list[int]] = field(default_factory=list)   # [hour][multiplier index]

    SCALARS = ("cost", "match_cost", "lost_cost", "entered", "rejected_at_entry", "delivered", "lost",
               "delays", "offers", "accepted", "mean_detour", "mean_batch_size")

    def scalars(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.SCALARS}

    def to_dict(self) -> dict:
        return asdict(self)


class Learner(Protocol):
    def begin_epoch(self, t, orders, shippers, pa, ctx, policy, outcome) -> None: ...
    def end_epoch(self, t, orders, ctx, decisions, fates, done) -> None: ...


def run_episode(cfg: ExperimentConfig, env: CrowdShippingEnv, policy: EpochPolicy, seed: int, day: int,
                repeat: int = 0, explore: bool = False, learner: Learner | None = None,
                explore_rng: np.random.Generator | None = None, trace_path=None) -> EpisodeStats:
    """Play one day. Without exploration or a learner the run is a pure function of its inputs."""
    e = cfg.env
    mults = list(cfg.fees.multipliers)
    hours = -(-e.horizon_minutes // 60)
    stats = EpisodeStats(seed, day, repeat, pricing_hist=[[0] * len(mults) for _ in range(hours)])
    rng = explore_rng if explore_rng is not None else stream(seed, "exploration", day, repeat)
    state = env.reset(seed, day, repeat)
    trace = []
    offered_orders = 0
    for t in range(env.num_epochs):
        orders, shippers = state.orders, state.shippers
        ctx = EpochContext(t, e.delta, e.horizon_minutes, e.max_epochs)
        prices = policy.price(orders, ctx, explore, rng)
        hour = min(t * e.delta // 60, hours - 1)
        for p in prices:
            stats.pricing_hist[hour][mults.index(float(p))] += 1
        pa = feasible_pair_arrays(orders, shippers, cfg.kappa, env.dispatch_minute(t), env.table)
        outcome = policy.match(orders, shippers, pa, ctx, cfg.fees, explore, rng)
        if learner is not None:
            learner.begin_epoch(t, orders, shippers, pa, ctx, policy, outcome)
        decisions = to_decisions(outcome.solution, pa, outcome.probabilities, orders, shippers, cfg.fees)
        n_new = sum(1 for o in orders if o.entry_minute == t * e.delta)
        nxt, cost, fates = env.advance(decisions)
        accepted = 0
        for m in decisions.matches:
            if fates[m.order_ids[0]].status == DELIVERED:
                accepted += 1
                stats.detours.append(m.detour_minutes)
        stats.offers += len(decisions.matches)
        stats.accepted += accepted
        stats.delays += len(decisions.delays)
        offered_orders += sum(len(m.order_ids) for m in decisions.matches)
        stats.epoch_cost.append(cost)
        stats.epoch_offers.append(len(decisions.matches))
        stats.epoch_offered_orders.append(sum(len(m.order_ids) for m in decisions.matches))
        if learner is not None:
            learner.end_epoch(t, orders, ctx, decisions, fates, nxt.epoch >= env.num_epochs)
        trace.append((t, n_new, len(shippers), len(orders), len(decisions.matches), accepted,
                      len(decisions.delays), sum(f.status == DELIVERED for f in fates.values()),
                      sum(f.status == LOST for f in fates.values()), cost))
        state = nxt

    led = env.ledger
    stats.cost = float(sum(stats.epoch_cost))
    stats.match_cost, stats.lost_cost = led.match_cost, led.lost_cost
    stats.entered, stats.rejected_at_entry = led.entered, led.rejected_at_entry
    stats.delivered, stats.lost = led.delivered, led.lost
    stats.mean_detour = float(np.mean(stats.detours)) if stats.detours else 0.0
    stats.mean_batch_size = offered_orders / stats.offers if stats.offers else 0.0
    check_episode(stats, led)
    if trace_path is not None:
        with open(trace_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_FIELDS)
            w.writerows(trace)
    return stats


def check_episode(stats: EpisodeStats, ledger) -> None:
    """Conservation of orders and double-entry cost reconciliation."""
    if ledger.entered != ledger.delivered + ledger.lost + ledger.rejected_at_entry:
        raise InvariantViolation(f"orders not conserved: entered {ledger.entered} != delivered {ledger.delivered}"
                                 f" + lost {ledger.lost} + rejected {ledger.rejected_at_entry}")
    by_fate = ledger.match_cost + ledger.lost_cost
    for name, value in (("environment total", ledger.cost), ("per-order attribution", by_fate)):
        if abs(stats.cost - value) > 1e-6:
            raise InvariantViolation(f"episode cost {stats.cost:.9f} disagrees with {name} {value:.9f}")
