"""Stochastic store environment: arrivals, order lifetimes, acceptance draws and transitions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .config import ArrivalProfile, EnvConfig
from .economics import FeeSchedule
from .geo import STORE, TravelTimeTable
from .model import CrowdShipper, Order, SystemState

STREAMS = {"orders": 1, "shippers": 2, "spatial": 3, "acceptance": 4, "exploration": 5, "replay": 6}

DELIVERED, LOST, RETAINED = "delivered", "lost", "retained"


class ContractViolation(RuntimeError):
    """Decisions handed to the environment break its input contract."""


def stream(seed: int, name: str, *keys: int) -> np.random.Generator:
    """Independent generator for one named stream of one (seed, keys) context."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[name], *map(int, keys)]))


def init_order(order_id: int, destination: int, entry_minute: float, max_delay: float, delta: float,
               table: TravelTimeTable) -> Order | None:
    """New order with its initial count of matchable epochs, or None if undeliverable."""
    direct = table.time(STORE, destination)
    if direct > max_delay:
        return None
    epochs = math.floor((max_delay - direct) / delta + 1e-12)
    return Order(order_id, destination, entry_minute, entry_minute + max_delay, epochs)


def spatial_weights(num_locations: int, rng: np.random.Generator, rate: float = 1.0,
                    eps: float = 0.01) -> np.ndarray:
    """Categorical distribution over non-store locations from Poisson weights."""
    w = rng.poisson(rate, num_locations - 1) + eps
    return w / w.sum()


def sample_count(mean: float, sigma: float, rng: np.random.Generator) -> int:
    return int(max(0, round(rng.normal(mean, sigma)))) if sigma > 0 else int(max(0, round(mean)))


def sample_arrivals(profile: ArrivalProfile, epoch: int, weights: tuple[np.ndarray, np.ndarray],
                    order_rng: np.random.Generator, shipper_rng: np.random.Generator):
    """Destinations of new orders and homes of new shippers for one epoch (location ids)."""
    order_w, shipper_w = weights
    n_orders = 0
    if epoch < profile.cutoff_epoch:
        n_orders = sample_count(profile.order_means[epoch], profile.sigma, order_rng)
    n_shippers = sample_count(profile.shipper_means[epoch], profile.sigma, shipper_rng)
    dests = order_rng.choice(len(order_w), size=n_orders, p=order_w) + 1
    homes = shipper_rng.choice(len(shipper_w), size=n_shippers, p=shipper_w) + 1
    return dests.tolist(), homes.tolist()


def draw_acceptances(probabilities: Sequence[float], rng: np.random.Generator) -> list[bool]:
    p = np.asarray(probabilities, dtype=float)
    return (rng.random(len(p)) < p).tolist()


@dataclass(frozen=True)
class Match:
    order_ids: tuple[int, ...]
    shipper_id: int
    detour_minutes: float
    probability: float
    match_cost: float        # cost paid if accepted


@dataclass
class Decisions:
    matches: list[Match] = field(default_factory=list)
    delays: list[int] = field(default_factory=list)


@dataclass(frozen=True)
class ExogenousDraw:
    accepted: tuple[bool, ...]
    new_shippers: tuple[CrowdShipper, ...]
    new_orders: tuple[Order, ...]


@dataclass
class Fate:
    status: str              # delivered / lost / retained
    cost: float = 0.0        # cost attributed to the order this epoch
    offered: bool = False


@dataclass
class Ledger:
    entered: int = 0
    rejected_at_entry: int = 0
    delivered: int = 0
    lost: int = 0
    cost: float = 0.0
    match_cost: float = 0.0
    lost_cost: float = 0.0


def step(state: SystemState, decisions: Decisions, draw: ExogenousDraw,
         fees: FeeSchedule) -> tuple[SystemState, float, dict[int, Fate]]:
    """Apply decisions and the revealed outcome; returns (next state, realized cost, per-order fates)."""
    orders = state.order_by_id()
    covered: dict[int, int] = {}
    for m in decisions.matches:
        for oid in m.order_ids:
            covered[oid] = covered.get(oid, 0) + 1
    for oid in decisions.delays:
        covered[oid] = covered.get(oid, 0) + 1
    if set(covered) != set(orders) or any(v != 1 for v in covered.values()):
        missing = sorted(set(orders) - set(covered))
        extra = sorted(k for k, v in covered.items() if v != 1 or k not in orders)
        raise ContractViolation(f"decisions must cover each order exactly once (missing {missing}, bad {extra})")
    shipper_ids = [m.shipper_id for m in decisions.matches]
    known = {c.id for c in state.shippers}
    if len(set(shipper_ids)) != len(shipper_ids) or not set(shipper_ids) <= known:
        raise ContractViolation("each present shipper may take at most one batch")
    if len(draw.accepted) != len(decisions.matches):
        raise ContractViolation("one acceptance outcome per offered batch required")

    fates: dict[int, Fate] = {}
    cost = 0.0
    retained: list[Order] = []

    def carry(order: Order, offered: bool) -> None:
        nonlocal cost
        if order.remaining_epochs == 0:
            fates[order.id] = Fate(LOST, fees.lost_cost, offered)
            cost += fees.lost_cost
        else:
            order.remaining_epochs -= 1
            retained.append(order)
            fates[order.id] = Fate(RETAINED, 0.0, offered)

    for m, ok in zip(decisions.matches, draw.accepted):
        if ok:
            cost += m.match_cost
            k = len(m.order_ids)
            for oid in m.order_ids:
                o = orders[oid]
                share = o.current_multiplier * fees.base_fee + m.detour_minutes * fees.detour_fee / k
                fates[oid] = Fate(DELIVERED, share, True)
        else:
            for oid in m.order_ids:
                carry(orders[oid], True)
    for oid in decisions.delays:
        carry(orders[oid], False)

    retained.sort(key=lambda o: o.id)
    nxt = SystemState(state.epoch + 1, list(draw.new_shippers), retained + list(draw.new_orders))
    return nxt, cost, fates


class CrowdShippingEnv:
    """One simulated day. Arrivals depend only on (seed, day); acceptances also on the repeat index."""

    def __init__(self, env: EnvConfig, fees: FeeSchedule, table: TravelTimeTable,
                 profile: ArrivalProfile | None = None):
        self.cfg = env
        self.fees = fees
        self.table = table
        self.profile = profile or ArrivalProfile.from_config(env)
        self.ledger = Ledger()
        self.state: SystemState | None = None

    def reset(self, seed: int, day: int, repeat: int = 0) -> SystemState:
        self._order_rng = stream(seed, "orders", day)
        self._shipper_rng = stream(seed, "shippers", day)
        self._spatial_rng = stream(seed, "spatial", day)
        self._accept_rng = stream(seed, "acceptance", day, repeat)
        self._next_order_id = 0
        self._next_shipper_id = 0
        self.ledger = Ledger()
        shippers, orders = self._arrivals(0)
        self.state = SystemState(0, shippers, orders)
        return self.state

    @property
    def num_epochs(self) -> int:
        return self.cfg.num_epochs

    def dispatch_minute(self, epoch: int) -> float:
        return float(epoch * self.cfg.delta)

    def _arrivals(self, epoch: int) -> tuple[list[CrowdShipper], list[Order]]:
        n = self.table.num_locations
        weights = (spatial_weights(n, self._spatial_rng, self.cfg.spatial_rate, self.cfg.spatial_eps),
                   spatial_weights(n, self._spatial_rng, self.cfg.spatial_rate, self.cfg.spatial_eps))
        dests, homes = sample_arrivals(self.profile, epoch, weights, self._order_rng, self._shipper_rng)
        orders = []
        for d in dests:
            o = init_order(self._next_order_id, d, self.dispatch_minute(epoch), self.cfg.max_delay,
                           self.cfg.delta, self.table)
            self._next_order_id += 1
            self.ledger.entered += 1
            if o is None:
                self.ledger.rejected_at_entry += 1
            else:
                orders.append(o)
        shippers = []
        for h in homes:
            shippers.append(CrowdShipper(self._next_shipper_id, int(h), epoch))
            self._next_shipper_id += 1
        return shippers, orders

    def exogenous(self, decisions: Decisions) -> ExogenousDraw:
        accepted = draw_acceptances([m.probability for m in decisions.matches], self._accept_rng)
        epoch = self.state.epoch + 1
        if epoch < self.num_epochs:
            shippers, orders = self._arrivals(epoch)
        else:
            shippers, orders = [], []
        return ExogenousDraw(tuple(accepted), tuple(shippers), tuple(orders))

    def advance(self, decisions: Decisions, draw: ExogenousDraw | None = None):
        """Transition the internal state; returns (next state, realized cost, fates)."""
        draw = draw or self.exogenous(decisions)
        nxt, cost, fates = step(self.state, decisions, draw, self.fees)
        for f in fates.values():
            if f.status == DELIVERED:
                self.ledger.delivered += 1
                self.ledger.match_cost += f.cost
            elif f.status == LOST:
                self.ledger.lost += 1
                self.ledger.lost_cost += f.cost
        if nxt.epoch >= self.num_epochs:
            # end of day: anything still open falls back to the external courier
            for o in nxt.orders:
                fates[o.id] = Fate(LOST, self.fees.lost_cost, fates.get(o.id, Fate(RETAINED)).offered)
                self.ledger.lost += 1
                self.ledger.lost_cost += self.fees.lost_cost
                cost += self.fees.lost_cost
            nxt = SystemState(nxt.epoch, [], [])
        self.ledger.cost += cost
        self.state = nxt
        return nxt, cost, fates

    @property
    def done(self) -> bool:
        return self.state is not None and self.state.epoch >= self.num_epochs
