"""Per-epoch assignment ILP with downstream-value-augmented costs.

Variables are one binary per feasible (batch, shipper) pair and one delay
binary per order. Every order is covered exactly once (a chosen pair or its
delay) and every shipper takes at most one batch.

The exact solver branches over shippers. Substituting the delay variables
out of the partition constraint leaves a set-packing problem over pairs
whose reduced cost is ``match coefficient - sum of member delay
coefficients``; only pairs with non-positive reduced cost can appear in an
optimum. Each node is bounded by letting every unassigned shipper take its
best option disjoint from the orders already used. On large instances
each order first gets a non-negative price (Lagrange multiplier of its
at-most-once constraint); options are then ranked by reduced cost plus the
prices of their orders and the free orders' prices are subtracted from the
bound, which stops shippers from all counting the same valuable order.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from .economics import FeeSchedule, PricedBatch, acceptance_from_fees, acceptance_probability, match_cost
from .model import Order

TIE_TOL = 1e-9


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class MatchingInstance:
    pair_orders: np.ndarray     # (P, kappa) order indices, -1 padded
    pair_shipper: np.ndarray    # (P,)
    match_coef: np.ndarray      # (P,) expected match cost incl. downstream value
    delay_coef: np.ndarray      # (n,) delay cost incl. downstream value
    num_shippers: int
    order_ids: tuple[int, ...] = ()
    shipper_ids: tuple[int, ...] = ()

    @property
    def num_orders(self) -> int:
        return len(self.delay_coef)

    @property
    def num_pairs(self) -> int:
        return len(self.match_coef)

    def validate(self) -> None:
        if not (np.all(np.isfinite(self.match_coef)) and np.all(np.isfinite(self.delay_coef))):
            raise SolverError("non-finite coefficient in matching instance")
        if len(self.pair_shipper) != self.num_pairs or len(self.pair_orders) != self.num_pairs:
            raise SolverError("pair arrays disagree in length")
        if self.num_pairs:
            if self.pair_orders.max() >= self.num_orders or self.pair_shipper.max() >= self.num_shippers:
                raise SolverError("pair references an unknown order or shipper")

    def to_json(self) -> str:
        """Dump variables, coefficients and constraints for offline inspection."""
        pairs = [[int(i) for i in row if i >= 0] for row in self.pair_orders]
        return json.dumps({
            "orders": list(self.order_ids) or list(range(self.num_orders)),
            "shippers": list(self.shipper_ids) or list(range(self.num_shippers)),
            "x": [{"index": p, "orders": pairs[p], "shipper": int(self.pair_shipper[p]),
                   "coef": float(self.match_coef[p])} for p in range(self.num_pairs)],
            "y": [{"index": self.num_pairs + o, "order": o, "coef": float(self.delay_coef[o])}
                  for o in range(self.num_orders)],
            "constraints": {
                "cover_each_order_once": [[p for p in range(self.num_pairs) if o in pairs[p]]
                                          + [self.num_pairs + o] for o in range(self.num_orders)],
                "at_most_one_batch_per_shipper": [
                    [p for p in range(self.num_pairs) if self.pair_shipper[p] == s]
                    for s in range(self.num_shippers)],
            },
        }, indent=1)


@dataclass(frozen=True)
class MatchingSolution:
    chosen_pairs: tuple[int, ...]
    delayed: tuple[int, ...]     # order indices
    objective: float

    def variable_vector(self, num_pairs: int) -> tuple[int, ...]:
        return tuple(sorted(self.chosen_pairs)) + tuple(num_pairs + o for o in sorted(self.delayed))


def augment_delay_cost(order: Order, v_hat: float, fees: FeeSchedule) -> float:
    if order.remaining_epochs == 0:
        return fees.lost_cost
    return float(v_hat)


def augment_match_cost(priced: PricedBatch, detour_minutes: float, batch: Sequence[Order],
                       v_hats: Sequence[float], fees: FeeSchedule, psi: float | None = None) -> float:
    psi = acceptance_probability(priced, fees) if psi is None else psi
    rejected = sum(fees.lost_cost if o.remaining_epochs == 0 else float(v)
                   for o, v in zip(batch, v_hats, strict=True))
    return psi * match_cost(priced, detour_minutes, fees) + (1 - psi) * rejected


def build_instance(pair_orders: np.ndarray, pair_shipper: np.ndarray, detour_minutes: np.ndarray,
                   orders: Sequence[Order], num_shippers: int, v_hat: np.ndarray, fees: FeeSchedule,
                   shipper_ids: Sequence[int] = ()) -> tuple[MatchingInstance, np.ndarray]:
    """Vectorised coefficients for all pairs; returns the instance and each pair's acceptance probability."""
    n = len(orders)
    epochs = np.array([o.remaining_epochs for o in orders], dtype=np.int64)
    mult = np.array([o.current_multiplier for o in orders], dtype=float)
    v_hat = np.where(epochs == 0, 0.0, np.asarray(v_hat, dtype=float).reshape(n))
    delay_coef = np.where(epochs == 0, fees.lost_cost, v_hat)
    if len(pair_orders):
        mask = pair_orders >= 0
        idx = np.where(mask, pair_orders, 0)
        k = mask.sum(axis=1)
        adj = (np.where(mask, mult[idx], 0.0)).sum(axis=1) * fees.base_fee
        psi = acceptance_from_fees(k * fees.base_fee, adj, fees)
        psi = np.atleast_1d(psi)
        rejected = np.where(mask, delay_coef[idx], 0.0).sum(axis=1)
        coef = psi * (adj + detour_minutes * fees.detour_fee) + (1 - psi) * rejected
    else:
        psi = np.zeros(0)
        coef = np.zeros(0)
    pair_orders = np.asarray(pair_orders, dtype=np.int64)
    if pair_orders.ndim != 2:
        pair_orders = pair_orders.reshape(len(coef), -1 if len(coef) else 1)
    inst = MatchingInstance(pair_orders,
                            np.asarray(pair_shipper, dtype=np.int64), coef, delay_coef, num_shippers,
                            tuple(o.id for o in orders), tuple(shipper_ids))
    return inst, psi


def add_exploration_noise(instance: MatchingInstance, noise_std: float, rng: np.random.Generator) -> MatchingInstance:
    if noise_std < 0:
        raise ValueError(f"noise_std must be >= 0, got {noise_std}")
    if noise_std == 0:
        return instance
    noisy = instance.match_coef + rng.normal(0.0, noise_std, instance.num_pairs)
    return replace(instance, match_coef=noisy)


LAGRANGE_MIN_PAIRS = 64     # below this the plain bound is already fast
LAGRANGE_ITERS = 100


def order_multipliers(rows: np.ndarray, reduced: np.ndarray, pair_orders: np.ndarray, num_orders: int,
                      num_rows: int, upper: float, iters: int = LAGRANGE_ITERS) -> np.ndarray:
    """Non-negative order prices that tighten the per-shipper bound (subgradient ascent).

    For prices lam >= 0 the value
    ``sum_s min(0, min_p reduced[p] + lam(p)) - sum_o lam[o]`` bounds every packing
    from below; ``upper`` is the value of any feasible packing and sets the step length.
    """
    lam = np.zeros(num_orders + 1)      # last slot absorbs the -1 padding
    if len(reduced) == 0:
        return lam[:-1]
    best, best_lam = -np.inf, lam[:-1].copy()
    theta, stall = 2.0, 0
    for _ in range(iters):
        adj = reduced + lam[pair_orders].sum(axis=1)
        order = np.lexsort((adj, rows))
        first = order[np.r_[0, np.nonzero(np.diff(rows[order]))[0] + 1]]
        picked = first[adj[first] < 0]
        value = float(adj[picked].sum() - lam[:-1].sum())
        if value > best + 1e-12:
            best, best_lam, stall = value, lam[:-1].copy(), 0
        else:
            stall += 1
            if stall >= 5:
                theta, stall = theta / 2, 0
        gap = upper - value
        if gap <= 1e-9 or theta < 1e-4:
            break
        use = np.bincount(pair_orders[picked].ravel() % (num_orders + 1), minlength=num_orders + 1)[:-1]
        grad = use - 1.0
        grad[(lam[:-1] <= 0) & (grad < 0)] = 0.0
        norm = float(grad @ grad)
        if norm == 0:
            break
        lam[:-1] = np.maximum(0.0, lam[:-1] + theta * gap / norm * grad)
    return best_lam


def solve(instance: MatchingInstance, lagrangian: bool | None = None) -> MatchingSolution:
    """Provably optimal solution; exact ties go to the lexicographically smallest variable vector.

    ``lagrangian`` forces the order-price bound on or off; by default it is used
    for instances with many candidate pairs.
    """
    instance.validate()
    P, n = instance.num_pairs, instance.num_orders
    delay = instance.delay_coef
    base = float(delay.sum())
    if P == 0:
        return MatchingSolution((), tuple(range(n)), base)
    members = [tuple(int(i) for i in row if i >= 0) for row in instance.pair_orders]
    reduced = instance.match_coef - np.array([delay[list(m)].sum() for m in members])
    masks = [0] * P
    for p in range(P):
        m = 0
        for o in members[p]:
            m |= 1 << o
        masks[p] = m

    useful = np.nonzero(reduced <= TIE_TOL)[0]
    lam = np.zeros(n)
    if lagrangian or (lagrangian is None and len(useful) >= LAGRANGE_MIN_PAIRS):
        upper, used = 0.0, 0
        taken_s: set[int] = set()
        for p in useful[np.argsort(reduced[useful], kind="stable")]:
            s = int(instance.pair_shipper[p])
            if s not in taken_s and not masks[p] & used:
                taken_s.add(s)
                used |= masks[p]
                upper += min(float(reduced[p]), 0.0)
        po = instance.pair_orders[useful]
        lam = order_multipliers(instance.pair_shipper[useful], reduced[useful], np.where(po < 0, n, po), n,
                                instance.num_shippers, upper)
    price = np.array([lam[list(m)].sum() for m in members])

    # per shipper: useful options sorted by (priced reduced cost, pair index)
    options: list[list[tuple[float, float, int]]] = [[] for _ in range(instance.num_shippers)]
    for p in useful:
        options[int(instance.pair_shipper[p])].append((float(reduced[p] + price[p]), float(reduced[p]), int(p)))
    active = [s for s in range(instance.num_shippers) if options[s]]
    for s in active:
        options[s].sort()

    best_obj = np.inf
    best_vec: tuple[int, ...] | None = None
    best_pairs: tuple[int, ...] = ()
    chosen: list[int] = []

    def rest_bound(depth: int, used: int, free_price: float) -> float:
        total = -free_price
        for s in active[depth:]:
            for a, _, p in options[s]:
                if masks[p] & used == 0:
                    total += min(a, 0.0)
                    break
        return total

    def leaf(obj: float) -> None:
        nonlocal best_obj, best_vec, best_pairs
        if obj > best_obj + TIE_TOL:
            return
        covered = 0
        for p in chosen:
            covered |= masks[p]
        vec = tuple(sorted(chosen)) + tuple(P + o for o in range(n) if not covered >> o & 1)
        if best_vec is None or obj < best_obj - TIE_TOL or vec < best_vec:
            best_obj, best_vec, best_pairs = obj, vec, tuple(chosen)

    def dfs(depth: int, used: int, obj: float, free_price: float) -> None:
        if depth == len(active):
            leaf(obj)
            return
        s = active[depth]
        rest = rest_bound(depth + 1, used, free_price)
        skip_tried = False
        for a, r, p in options[s]:
            if a > 0 and not skip_tried:
                # leaving the shipper idle (priced cost 0) sits before positive options
                skip_tried = True
                if obj + rest <= best_obj + TIE_TOL:
                    dfs(depth + 1, used, obj, free_price)
            if obj + a + rest > best_obj + TIE_TOL:
                break
            if masks[p] & used:
                continue
            chosen.append(p)
            dfs(depth + 1, used | masks[p], obj + r, free_price - price[p])
            chosen.pop()
        if not skip_tried and obj + rest <= best_obj + TIE_TOL:
            dfs(depth + 1, used, obj, free_price)

    dfs(0, 0, 0.0, float(lam.sum()))
    if best_vec is None:
        raise SolverError("no feasible assignment found; the all-delay solution should always exist")
    covered = set()
    for p in best_pairs:
        covered.update(members[p])
    pairs = tuple(sorted(best_pairs))
    delayed = tuple(o for o in range(n) if o not in covered)
    objective = float(instance.match_coef[list(pairs)].sum() + delay[list(delayed)].sum())
    return MatchingSolution(pairs, delayed, objective)


def solve_milp(instance: MatchingInstance) -> MatchingSolution:
    """Same model through scipy's HiGHS MILP interface (optional backend).

    Returns an optimal solution but does not apply the lexicographic tie-break.
    """
    from scipy.optimize import Bounds, LinearConstraint, milp

    instance.validate()
    P, n = instance.num_pairs, instance.num_orders
    c = np.concatenate([instance.match_coef, instance.delay_coef])
    cover = np.zeros((n, P + n))
    for p, row in enumerate(instance.pair_orders):
        for o in row:
            if o >= 0:
                cover[o, p] = 1.0
    cover[np.arange(n), P + np.arange(n)] = 1.0
    cap = np.zeros((instance.num_shippers, P + n))
    cap[instance.pair_shipper, np.arange(P)] = 1.0
    cons = [LinearConstraint(cover, 1, 1)]
    if instance.num_shippers:
        cons.append(LinearConstraint(cap, 0, 1))
    res = milp(c, constraints=cons, integrality=np.ones(P + n), bounds=Bounds(0, 1))
    if not res.success:
        raise SolverError(f"MILP backend failed: {res.message}")
    x = np.round(res.x).astype(int)
    pairs = tuple(int(p) for p in np.nonzero(x[:P])[0])
    delayed = tuple(int(o) for o in np.nonzero(x[P:])[0])
    return MatchingSolution(pairs, delayed, float(c @ x))


Solver = Callable[[MatchingInstance], MatchingSolution]
SOLVERS: dict[str, Solver] = {"bnb": solve, "milp": solve_milp}
