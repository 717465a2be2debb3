"""Cost model: fees, acceptance probability and expected costs."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .model import Order

DEFAULT_MULTIPLIERS = (0.8, 0.9, 1.0, 1.1, 1.2)


@dataclass(frozen=True)
class FeeSchedule:
    base_fee: float = 4.0
    detour_fee: float = 0.1      # dollars per detour minute
    lost_cost: float = 8.0
    multipliers: tuple[float, ...] = DEFAULT_MULTIPLIERS
    accept_slope: float = 5.0
    accept_offset: float = 5.5

    def __post_init__(self):
        if min(self.base_fee, self.detour_fee, self.lost_cost) < 0:
            raise ValueError("fees must be non-negative")
        mult = tuple(float(m) for m in self.multipliers)
        if not mult or any(m <= 0 for m in mult):
            raise ValueError("multipliers must be strictly positive")
        if any(b <= a for a, b in zip(mult, mult[1:])):
            raise ValueError("multipliers must be sorted ascending without repeats")
        object.__setattr__(self, "multipliers", mult)


@dataclass(frozen=True)
class PricedBatch:
    order_ids: tuple[int, ...]
    multipliers: tuple[float, ...]
    adj_base_fee: float
    base_fee_sum: float


def price_batch(batch: Sequence[Order], fees: FeeSchedule,
                multipliers: Sequence[float] | None = None) -> PricedBatch:
    mult = tuple(o.current_multiplier for o in batch) if multipliers is None else tuple(multipliers)
    if len(mult) != len(batch):
        raise ValueError("one multiplier per order required")
    return PricedBatch(tuple(o.id for o in batch), mult,
                       adj_base_fee=sum(m * fees.base_fee for m in mult),
                       base_fee_sum=len(batch) * fees.base_fee)


def delay_cost(order: Order, fees: FeeSchedule) -> float:
    return fees.lost_cost if order.remaining_epochs == 0 else 0.0


def batch_delay_cost(batch: Iterable[Order], fees: FeeSchedule) -> float:
    return float(sum(delay_cost(o, fees) for o in batch))


def acceptance_from_fees(base_fee_sum, adj_base_fee, fees: FeeSchedule = FeeSchedule()):
    """Logistic acceptance in the base/adjusted fee ratio; works on arrays."""
    adj = np.asarray(adj_base_fee, dtype=float)
    if np.any(adj <= 0):
        raise ValueError("adjusted base fee must be positive")
    z = fees.accept_slope * (np.asarray(base_fee_sum, dtype=float) / adj) - fees.accept_offset
    out = 1.0 / (1.0 + np.exp(z))
    return float(out) if out.ndim == 0 else out


def acceptance_probability(priced: PricedBatch, fees: FeeSchedule = FeeSchedule()) -> float:
    return acceptance_from_fees(priced.base_fee_sum, priced.adj_base_fee, fees)


def match_cost(priced: PricedBatch, detour_minutes: float, fees: FeeSchedule) -> float:
    if detour_minutes < 0:
        raise ValueError("detour must be non-negative")
    return priced.adj_base_fee + detour_minutes * fees.detour_fee


def expected_match_cost(priced: PricedBatch, detour_minutes: float, batch: Sequence[Order],
                        fees: FeeSchedule, psi: float | None = None) -> float:
    psi = acceptance_probability(priced, fees) if psi is None else psi
    return psi * match_cost(priced, detour_minutes, fees) + (1 - psi) * batch_delay_cost(batch, fees)


def epoch_cost(selected_matches: Sequence[tuple[Sequence[Order], float]], selected_delays: Sequence[Order],
               fees: FeeSchedule) -> float:
    seen: set[int] = set()
    total = 0.0
    for batch, expected in selected_matches:
        for o in batch:
            if o.id in seen:
                raise ValueError(f"order {o.id} covered twice")
            seen.add(o.id)
        total += expected
    for o in selected_delays:
        if o.id in seen:
            raise ValueError(f"order {o.id} is both matched and delayed")
        seen.add(o.id)
        total += delay_cost(o, fees)
    return total


def attribute_match_cost(multiplier: float, batch_size: int, detour_minutes: float, fees: FeeSchedule) -> float:
    """Per-order share of an accepted batch: own fee plus an equal detour share."""
    return multiplier * fees.base_fee + detour_minutes * fees.detour_fee / batch_size
