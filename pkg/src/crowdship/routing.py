"""Batch enumeration, route feasibility and optimal route selection.

A route starts at the store, visits every destination of a batch once and
ends at the shipper's home. Among the permutations meeting every order's
deadline the shortest one wins; exact ties go to the lexicographically
smallest destination sequence.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .geo import STORE, TravelTimeTable
from .model import CrowdShipper, Order

log = logging.getLogger(__name__)

MAX_KAPPA = 4
TIME_TOL = 1e-9


@dataclass(frozen=True)
class Route:
    stops: tuple[int, ...]
    order_ids: tuple[int, ...]  # delivery order, aligned with stops[1:-1]
    total_minutes: float


@dataclass(frozen=True)
class FeasiblePair:
    batch: tuple[Order, ...]
    shipper: CrowdShipper
    best_route: Route
    detour_minutes: float

    @property
    def order_ids(self) -> tuple[int, ...]:
        return tuple(o.id for o in self.batch)


def check_kappa(kappa: int) -> int:
    if not 1 <= kappa <= MAX_KAPPA:
        raise ValueError(f"kappa must be in 1..{MAX_KAPPA}, got {kappa}")
    return kappa


def enumerate_batches(orders: Sequence[Order], kappa: int) -> list[tuple[Order, ...]]:
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    ordered = sorted(orders, key=lambda o: o.id)
    out = []
    for k in range(1, min(kappa, len(ordered)) + 1):
        out.extend(itertools.combinations(ordered, k))
    out.sort(key=lambda b: tuple(o.id for o in b))
    return out


def route_time(stops: Sequence[int], table: TravelTimeTable) -> float:
    return float(sum(table.time(a, b) for a, b in zip(stops[:-1], stops[1:])))


def route_feasible(stops: Sequence[int], dispatch_minute: float, deadlines: Sequence[float],
                   table: TravelTimeTable) -> bool:
    """Deadlines are aligned with the interior stops ``stops[1:-1]``."""
    interior = len(stops) - 2
    if len(deadlines) != interior:
        raise ValueError(f"need {interior} deadlines, got {len(deadlines)}")
    clock = dispatch_minute
    for j in range(interior):
        clock += table.time(stops[j], stops[j + 1])
        if clock > deadlines[j] + TIME_TOL:
            return False
    return True


def optimal_route(batch: Sequence[Order], shipper: CrowdShipper, dispatch_minute: float,
                  table: TravelTimeTable) -> Route | None:
    best: Route | None = None
    best_key = None
    for perm in itertools.permutations(batch):
        stops = (STORE, *(o.destination for o in perm), shipper.home)
        if not route_feasible(stops, dispatch_minute, [o.deadline_minute for o in perm], table):
            continue
        total = route_time(stops, table)
        key = stops[1:-1]
        if (best is None or total < best.total_minutes - TIME_TOL
                or (abs(total - best.total_minutes) <= TIME_TOL and key < best_key)):
            best = Route(stops, tuple(o.id for o in perm), total)
            best_key = key
    return best


def detour_time(best_route: Route, shipper: CrowdShipper, table: TravelTimeTable) -> float:
    detour = best_route.total_minutes - table.time(STORE, shipper.home)
    if detour < 0:
        if detour < -1e-6:
            log.warning("negative detour %.6f min for shipper %s; clamped to 0", detour, shipper.id)
        return 0.0
    return detour


@dataclass
class PairArrays:
    """Column layout of the feasible (batch, shipper) pairs of one epoch.

    ``batches`` holds order indices into the epoch's order list, padded with -1;
    ``sequence`` holds the chosen visiting order using the same indices.
    """

    batches: np.ndarray      # (P, kappa) int
    sizes: np.ndarray        # (P,) int
    shipper: np.ndarray      # (P,) int, index into the shipper list
    sequence: np.ndarray     # (P, kappa) int
    route_minutes: np.ndarray
    detour_minutes: np.ndarray

    def __len__(self) -> int:
        return len(self.sizes)

    @classmethod
    def empty(cls, kappa: int) -> "PairArrays":
        z = np.zeros(0, dtype=np.int64)
        zk = np.zeros((0, kappa), dtype=np.int64)
        return cls(zk, z, z.copy(), zk.copy(), np.zeros(0), np.zeros(0))


def feasible_pair_arrays(orders: Sequence[Order], shippers: Sequence[CrowdShipper], kappa: int,
                         dispatch_minute: float, table: TravelTimeTable) -> PairArrays:
    """Vectorised twin of :func:`build_feasible_pairs` (same pairs, same order)."""
    check_kappa(kappa)
    n, m = len(orders), len(shippers)
    if n == 0 or m == 0:
        return PairArrays.empty(kappa)
    ids = np.array([o.id for o in orders])
    rank = np.argsort(ids, kind="stable")  # orders visited in id order
    dest = np.array([o.destination for o in orders])
    dead = np.array([o.deadline_minute for o in orders], dtype=float)
    homes = np.array([c.home for c in shippers])
    mins = table.minutes
    base = len(mins)
    direct_home = mins[STORE, homes]

    blocks = []
    for k in range(1, min(kappa, n) + 1):
        combos = np.array(list(itertools.combinations(range(n), k)), dtype=np.int64)
        combos = rank[combos]  # combinations over id-sorted positions
        best_total = np.full((len(combos), m), np.inf)
        best_key = np.full((len(combos), m), np.iinfo(np.int64).max)
        best_perm = np.zeros((len(combos), m), dtype=np.int64)
        perms = list(itertools.permutations(range(k)))
        for pi, perm in enumerate(perms):
            seq = combos[:, perm]
            d = dest[seq]
            clock = np.full(len(combos), float(dispatch_minute))
            ok = np.ones(len(combos), dtype=bool)
            prev = np.full(len(combos), STORE)
            key = np.zeros(len(combos), dtype=np.int64)
            for j in range(k):
                clock = clock + mins[prev, d[:, j]]
                ok &= clock <= dead[seq[:, j]] + TIME_TOL
                prev = d[:, j]
                key = key * base + d[:, j]
            total = (clock - dispatch_minute)[:, None] + mins[prev[:, None], homes[None, :]]
            total = np.where(ok[:, None], total, np.inf)
            better = total < best_total - TIME_TOL
            with np.errstate(invalid="ignore"):  # inf - inf on jointly infeasible cells
                tie = (np.abs(total - best_total) <= TIME_TOL) & (key[:, None] < best_key) & np.isfinite(total)
            take = better | tie
            best_total = np.where(take, total, best_total)
            best_key = np.where(take, key[:, None], best_key)
            best_perm = np.where(take, pi, best_perm)
        bi, si = np.nonzero(np.isfinite(best_total))
        if len(bi) == 0:
            continue
        perm_arr = np.array(perms, dtype=np.int64)[best_perm[bi, si]]
        seq = np.take_along_axis(combos[bi], perm_arr, axis=1)
        pad = np.full((len(bi), kappa - k), -1, dtype=np.int64)
        rt = best_total[bi, si]
        blocks.append((np.hstack([combos[bi], pad]), np.full(len(bi), k), si, np.hstack([seq, pad]),
                       rt, np.maximum(rt - direct_home[si], 0.0)))
    if not blocks:
        return PairArrays.empty(kappa)
    cols = [np.concatenate(c) for c in zip(*blocks)]
    pa = PairArrays(*cols)
    # canonical order: by sorted batch ids (lexicographic), then shipper id
    id_rows = np.where(pa.batches >= 0, ids[np.maximum(pa.batches, 0)], -1)
    ship_ids = np.array([c.id for c in shippers])[pa.shipper]
    keys = [ship_ids] + [id_rows[:, j] for j in range(kappa - 1, -1, -1)]
    order = np.lexsort(keys)
    return PairArrays(pa.batches[order], pa.sizes[order], pa.shipper[order], pa.sequence[order],
                      pa.route_minutes[order], pa.detour_minutes[order])


def pairs_from_arrays(pa: PairArrays, orders: Sequence[Order],
                      shippers: Sequence[CrowdShipper]) -> list[FeasiblePair]:
    out = []
    for p in range(len(pa)):
        k = int(pa.sizes[p])
        batch = tuple(orders[i] for i in pa.batches[p, :k])
        seq = [orders[i] for i in pa.sequence[p, :k]]
        c = shippers[pa.shipper[p]]
        route = Route((STORE, *(o.destination for o in seq), c.home), tuple(o.id for o in seq),
                      float(pa.route_minutes[p]))
        out.append(FeasiblePair(batch, c, route, float(pa.detour_minutes[p])))
    return out


def build_feasible_pairs(orders: Sequence[Order], shippers: Sequence[CrowdShipper], kappa: int,
                         dispatch_minute: float, table: TravelTimeTable) -> list[FeasiblePair]:
    """Every (batch, shipper) with at least one deadline-feasible route."""
    out = []
    for batch in enumerate_batches(orders, kappa):
        for c in sorted(shippers, key=lambda s: s.id):
            route = optimal_route(batch, c, dispatch_minute, table)
            if route is not None:
                out.append(FeasiblePair(batch, c, route, detour_time(route, c, table)))
    return out
