"""Pricing (DDQN, fixed) and matching (NeurADP, greedy) policies."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .economics import FeeSchedule
from .environment import Decisions, Match
from .matching import (MatchingInstance, MatchingSolution, Solver, add_exploration_noise, build_instance,
                       solve)
from .model import CrowdShipper, Order
from .nn import Mlp, TargetPair
from .routing import PairArrays

CANDIDATE_SCALE = 50.0
VALUE_FEATURES = 2      # normalised epochs left, normalised clock
PRICING_BASE_FEATURES = 3


@dataclass(frozen=True)
class EpochContext:
    epoch: int
    delta: int
    horizon_minutes: int
    max_epochs: int

    @property
    def minute(self) -> float:
        return self.epoch * self.delta


def pricing_state_features(orders: Sequence[Order], ctx: EpochContext) -> np.ndarray:
    n = len(orders)
    out = np.empty((n, PRICING_BASE_FEATURES))
    out[:, 0] = [o.remaining_epochs / ctx.max_epochs for o in orders]
    out[:, 1] = ctx.minute / ctx.horizon_minutes
    out[:, 2] = min(n / CANDIDATE_SCALE, 1.0)
    return np.clip(out, 0.0, 1.0)


def post_decision_features(orders: Sequence[Order], ctx: EpochContext) -> np.ndarray:
    """Order features after this epoch's decision: one epoch consumed, clock advanced."""
    out = np.empty((len(orders), VALUE_FEATURES))
    out[:, 0] = [max(o.remaining_epochs - 1, 0) / ctx.max_epochs for o in orders]
    out[:, 1] = (ctx.epoch + 1) * ctx.delta / ctx.horizon_minutes
    return np.clip(out, 0.0, 1.0)


def with_action(state_features: np.ndarray, num_actions: int) -> np.ndarray:
    """Repeat each state row once per action and append the one-hot action."""
    n = len(state_features)
    rows = np.repeat(state_features, num_actions, axis=0)
    onehot = np.tile(np.eye(num_actions), (n, 1))
    return np.hstack([rows, onehot])


# -- pricing -----------------------------------------------------------------

class FixedPricing:
    name = "fixed"
    learns = False

    def __init__(self, multiplier: float = 1.0):
        self.multiplier = multiplier

    def price(self, orders, ctx, explore=False, rng=None) -> np.ndarray:
        return np.full(len(orders), self.multiplier)


class DdqnPricing:
    """Per-order multiplier chosen by the smallest predicted long-run cost."""

    name = "ddqn"
    learns = True

    def __init__(self, nets: TargetPair, multipliers: Sequence[float], epsilon: float = 0.0,
                 temperature: float = 1.0):
        self.nets = nets
        self.multipliers = np.asarray(multipliers, dtype=float)
        self.epsilon = epsilon
        self.temperature = temperature
        self.q_fn = None   # optional override (orders, ctx) -> (n, |P|), used by tests

    def q_values(self, orders: Sequence[Order], ctx: EpochContext, net: Mlp | None = None) -> np.ndarray:
        if self.q_fn is not None:
            return np.asarray(self.q_fn(orders, ctx), dtype=float)
        net = net or self.nets.online
        k = len(self.multipliers)
        feats = with_action(pricing_state_features(orders, ctx), k)
        dest = np.repeat([o.destination for o in orders], k)
        return net.predict(dest, feats).reshape(len(orders), k)

    def price(self, orders: Sequence[Order], ctx: EpochContext, explore: bool = False,
              rng: np.random.Generator | None = None) -> np.ndarray:
        if not orders:
            return np.zeros(0)
        q = self.q_values(orders, ctx)
        choice = np.argmin(q, axis=1)   # first minimum -> smallest multiplier
        if explore and self.epsilon > 0:
            flip = rng.random(len(orders)) < self.epsilon
            for i in np.nonzero(flip)[0]:
                z = -(q[i] - q[i].min()) / self.temperature
                p = np.exp(z)
                choice[i] = rng.choice(len(p), p=p / p.sum())
        return self.multipliers[choice]


# -- matching ----------------------------------------------------------------

@dataclass
class MatchingOutcome:
    solution: MatchingSolution
    instance: MatchingInstance | None      # noise-free instance when one was built
    probabilities: np.ndarray              # acceptance probability per pair
    v_hat: np.ndarray | None = None


def _pair_probabilities(pa: PairArrays, orders: Sequence[Order], fees: FeeSchedule) -> np.ndarray:
    inst, psi = build_instance(pa.batches, pa.shipper, pa.detour_minutes, orders, 0 if not len(pa) else
                               int(pa.shipper.max()) + 1, np.zeros(len(orders)), fees)
    return psi


class NeurAdpMatching:
    name = "neuradp"
    learns = True

    def __init__(self, nets: TargetPair, noise_std: float = 0.5, solver: Solver = solve):
        self.nets = nets
        self.noise_std = noise_std
        self.solver = solver
        self.v_fn = None   # optional override (orders, ctx) -> values, used by tests

    def values(self, orders: Sequence[Order], ctx: EpochContext, net: Mlp | None = None) -> np.ndarray:
        if not orders:
            return np.zeros(0)
        if self.v_fn is not None:
            return np.asarray(self.v_fn(orders, ctx), dtype=float)
        net = net or self.nets.target
        return net.predict([o.destination for o in orders], post_decision_features(orders, ctx))

    def clean_instance(self, orders, shippers, pa: PairArrays, ctx, fees, net: Mlp | None = None):
        v = self.values(orders, ctx, net)
        inst, psi = build_instance(pa.batches, pa.shipper, pa.detour_minutes, orders, len(shippers), v, fees,
                                   [c.id for c in shippers])
        return inst, psi, v

    def decide(self, orders: Sequence[Order], shippers: Sequence[CrowdShipper], pa: PairArrays,
               ctx: EpochContext, fees: FeeSchedule, explore: bool = False,
               rng: np.random.Generator | None = None) -> MatchingOutcome:
        inst, psi, v = self.clean_instance(orders, shippers, pa, ctx, fees)
        use = add_exploration_noise(inst, self.noise_std, rng) if explore and self.noise_std > 0 else inst
        return MatchingOutcome(self.solver(use), inst, psi, v)


class GreedyMatching:
    """Most urgent order first, each taking its smallest-detour free option."""

    name = "greedy"
    learns = False

    def decide(self, orders: Sequence[Order], shippers: Sequence[CrowdShipper], pa: PairArrays,
               ctx: EpochContext, fees: FeeSchedule, explore: bool = False, rng=None) -> MatchingOutcome:
        psi = _pair_probabilities(pa, orders, fees) if len(pa) else np.zeros(0)
        sol = greedy_decide(orders, shippers, pa)
        return MatchingOutcome(sol, None, psi)


def greedy_decide(orders: Sequence[Order], shippers: Sequence[CrowdShipper], pa: PairArrays) -> MatchingSolution:
    n = len(orders)
    ship_ids = [c.id for c in shippers]
    by_order: list[list[int]] = [[] for _ in range(n)]
    for p in range(len(pa)):
        for i in pa.batches[p, :pa.sizes[p]]:
            by_order[int(i)].append(p)

    def key(p):
        ids = sorted(orders[int(i)].id for i in pa.batches[p, :pa.sizes[p]])
        return (float(pa.detour_minutes[p]), ship_ids[int(pa.shipper[p])], len(ids), ids)

    used_orders: set[int] = set()
    used_shippers: set[int] = set()
    chosen = []
    for i in sorted(range(n), key=lambda i: (orders[i].remaining_epochs, orders[i].id)):
        if i in used_orders:
            continue
        options = [p for p in by_order[i] if int(pa.shipper[p]) not in used_shippers
                   and not any(int(j) in used_orders for j in pa.batches[p, :pa.sizes[p]])]
        if not options:
            continue
        p = min(options, key=key)
        chosen.append(p)
        used_shippers.add(int(pa.shipper[p]))
        used_orders.update(int(j) for j in pa.batches[p, :pa.sizes[p]])
    delayed = tuple(i for i in range(n) if i not in used_orders)
    return MatchingSolution(tuple(sorted(chosen)), delayed, float("nan"))


# -- composition -------------------------------------------------------------

def to_decisions(solution: MatchingSolution, pa: PairArrays, probabilities: np.ndarray,
                 orders: Sequence[Order], shippers: Sequence[CrowdShipper], fees: FeeSchedule) -> Decisions:
    matches = []
    for p in solution.chosen_pairs:
        k = int(pa.sizes[p])
        members = [orders[int(i)] for i in pa.batches[p, :k]]
        detour = float(pa.detour_minutes[p])
        cost = sum(o.current_multiplier * fees.base_fee for o in members) + detour * fees.detour_fee
        matches.append(Match(tuple(o.id for o in members), shippers[int(pa.shipper[p])].id, detour,
                             float(probabilities[p]), cost))
    return Decisions(matches, [orders[i].id for i in solution.delayed])


@dataclass
class EpochPolicy:
    """Pricing first, then matching on the priced orders."""

    pricing: FixedPricing | DdqnPricing
    matching: NeurAdpMatching | GreedyMatching

    @property
    def name(self) -> str:
        return f"{self.matching.name}+{self.pricing.name}"

    def price(self, orders, ctx, explore=False, rng=None) -> np.ndarray:
        prices = self.pricing.price(orders, ctx, explore, rng)
        for o, p in zip(orders, prices):
            o.current_multiplier = float(p)
        return prices

    def match(self, orders, shippers, pa, ctx, fees, explore=False, rng=None) -> MatchingOutcome:
        return self.matching.decide(orders, shippers, pa, ctx, fees, explore, rng)


def compose(pricing, matching) -> EpochPolicy:
    return EpochPolicy(pricing, matching)
