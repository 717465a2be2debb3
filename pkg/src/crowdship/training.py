"""Joint training of the value network (matching) and the pricing Q-network."""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, dump_config, save_config
from .environment import LOST, RETAINED, CrowdShippingEnv, stream
from .matching import MatchingInstance, MatchingSolution
from .nn import AdamState, Mlp, ReplayBuffer, TargetPair, adam_step, load_checkpoint, save_checkpoint, soft_update
from .policies import (DdqnPricing, EpochPolicy, NeurAdpMatching, post_decision_features, pricing_state_features,
                       with_action)
from .simulation import build_policy, build_table, pricing_network, run_episode, value_network

log = logging.getLogger(__name__)

CHECKPOINT_FILES = {
    ("value", "online"): "value_online.ckpt",
    ("value", "target"): "value_target.ckpt",
    ("pricing", "online"): "pricing_online.ckpt",
    ("pricing", "target"): "pricing_target.ckpt",
}
LOG_FIELDS = ("episode", "epsilon", "noise_std", "cost", "delivered", "lost", "value_loss", "pricing_loss",
              "value_updates", "pricing_updates", "value_buffer", "pricing_buffer")


class TrainingDiverged(RuntimeError):
    pass


def make_matching_target(instance: MatchingInstance, solution: MatchingSolution) -> np.ndarray:
    """Each order's share of the optimal objective: its delay coefficient, or its batch's
    match coefficient split equally among the batch."""
    share = np.array(instance.delay_coef, dtype=float)
    for p in solution.chosen_pairs:
        members = [int(i) for i in instance.pair_orders[p] if i >= 0]
        share[members] = instance.match_coef[p] / len(members)
    return share


def make_pricing_target(cost: float, next_q: np.ndarray | None) -> float:
    """Attributed cost plus the cheapest predicted continuation (none when terminal)."""
    if next_q is None:
        return float(cost)
    return float(cost + np.min(next_q))


@dataclass
class _Net:
    pair: TargetPair
    adam: AdamState
    buffer: ReplayBuffer
    updates: int = 0
    loss_sum: float = 0.0


class JointLearner:
    """Collects both experience streams during an episode and runs the per-epoch updates."""

    def __init__(self, cfg: ExperimentConfig, policy: EpochPolicy, rng: np.random.Generator):
        self.cfg = cfg
        self.policy = policy
        self.rng = rng
        tc = cfg.train
        self.tag = cfg.policy
        self.value = self.pricing = None
        if isinstance(policy.matching, NeurAdpMatching) and tc.train_matching:
            pair = policy.matching.nets
            self.value = _Net(pair, AdamState.zeros(pair.online.size, pair.online.dtype),
                              ReplayBuffer(tc.buffer_capacity, tc.priority_alpha, tc.priority_beta, self.tag))
        if isinstance(policy.pricing, DdqnPricing) and tc.train_pricing:
            pair = policy.pricing.nets
            self.pricing = _Net(pair, AdamState.zeros(pair.online.size, pair.online.dtype),
                                ReplayBuffer(tc.buffer_capacity, tc.priority_alpha, tc.priority_beta, self.tag))
        self.num_actions = len(cfg.fees.multipliers)
        self._pending_v: dict[int, tuple[int, np.ndarray]] = {}
        self._pending_q: dict[int, tuple[int, np.ndarray, int]] = {}

    def reset_episode(self) -> None:
        self._pending_v.clear()
        self._pending_q.clear()
        for net in (self.value, self.pricing):
            if net is not None:
                net.updates, net.loss_sum = 0, 0.0

    # -- experience collection ------------------------------------------------

    def begin_epoch(self, t, orders, shippers, pa, ctx, policy, outcome) -> None:
        if self.value is not None:
            inst = outcome.instance
            sol = outcome.solution
            if sol is not None and inst is not None and policy.matching.noise_std > 0:
                sol = policy.matching.solver(inst)   # targets use the noise-free problem
            share = make_matching_target(inst, sol)
            for i, o in enumerate(orders):
                prev = self._pending_v.pop(o.id, None)
                if prev is not None:
                    self.value.buffer.add((prev[0], prev[1], share[i]), tag=self.tag)
            feats = post_decision_features(orders, ctx)
            self._epoch_v = {o.id: (o.destination, feats[i]) for i, o in enumerate(orders)
                             if o.remaining_epochs > 0}
        if self.pricing is not None:
            states = pricing_state_features(orders, ctx)
            mults = list(self.cfg.fees.multipliers)
            self._epoch_q = {}
            for i, o in enumerate(orders):
                prev = self._pending_q.pop(o.id, None)
                if prev is not None:
                    self.pricing.buffer.add((prev[0], prev[1], prev[2], 0.0, states[i]), tag=self.tag)
                self._epoch_q[o.id] = (o.destination, states[i], mults.index(o.current_multiplier))

    def end_epoch(self, t, orders, ctx, decisions, fates, done) -> None:
        if self.value is not None:
            for oid, (dest, feats) in self._epoch_v.items():
                fate = fates[oid]
                if fate.status == RETAINED:
                    self._pending_v[oid] = (dest, feats)
                elif fate.status == LOST:       # closed by the end of the day
                    self.value.buffer.add((dest, feats, self.cfg.fees.lost_cost), tag=self.tag)
        if self.pricing is not None:
            for oid, (dest, s, a) in self._epoch_q.items():
                fate = fates[oid]
                if fate.status == RETAINED:
                    self._pending_q[oid] = (dest, s, a)
                else:
                    self.pricing.buffer.add((dest, s, a, fate.cost, None), tag=self.tag)
        self.update()

    # -- gradient steps -------------------------------------------------------

    def update(self) -> None:
        tc = self.cfg.train
        if self.value is not None and len(self.value.buffer) >= tc.warmup:
            self._fit(self.value, self._value_targets)
        if self.pricing is not None and len(self.pricing.buffer) >= tc.warmup:
            self._fit(self.pricing, self._pricing_targets)

    def _value_targets(self, items):
        dest = np.array([it[0] for it in items])
        x = np.stack([it[1] for it in items])
        y = np.array([it[2] for it in items], dtype=float)
        return dest, x, y

    def _pricing_targets(self, items):
        k = self.num_actions
        dest = np.array([it[0] for it in items])
        s = np.stack([it[1] for it in items])
        a = np.array([it[2] for it in items])
        x = np.hstack([s, np.eye(k)[a]])
        y = np.array([it[3] for it in items], dtype=float)
        live = [j for j, it in enumerate(items) if it[4] is not None]
        if live:
            nxt = np.stack([items[j][4] for j in live])
            q = self.pricing.pair.target.predict(np.repeat(dest[live], k), with_action(nxt, k)).reshape(len(live), k)
            for row, j in enumerate(live):
                y[j] = make_pricing_target(y[j], q[row])
        return dest, x, y

    def _fit(self, net: _Net, targets) -> None:
        tc = self.cfg.train
        idx, items, w = net.buffer.sample(tc.batch_size, self.rng)
        dest, x, y = targets(items)
        online = net.pair.online
        pred = online.forward(dest, x)
        td = pred - y
        loss = float(np.mean(w * td * td))
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss after {net.updates} updates")
        try:
            grad = online.backward(2.0 * w * td / len(td))
            adam_step(online.params, grad, net.adam, tc.lr)
        except FloatingPointError as exc:
            raise TrainingDiverged(str(exc)) from exc
        soft_update(net.pair, tc.tau)
        net.buffer.update_priorities(idx, td)
        net.updates += 1
        net.loss_sum += loss


# -- checkpoints -------------------------------------------------------------

def config_digest(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


def save_networks(out: Path, policy: EpochPolicy, cfg: ExperimentConfig, meta: dict | None = None) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    pairs = {}
    if isinstance(policy.matching, NeurAdpMatching):
        pairs["value"] = policy.matching.nets
    if isinstance(policy.pricing, DdqnPricing):
        pairs["pricing"] = policy.pricing.nets
    written = []
    info = {"policy": cfg.policy, "config_digest": config_digest(cfg), **(meta or {})}
    for name, pair in pairs.items():
        for role in ("online", "target"):
            path = out / CHECKPOINT_FILES[(name, role)]
            tmp = path.with_suffix(".tmp")
            save_checkpoint(tmp, getattr(pair, role), {**info, "network": name, "role": role})
            tmp.replace(path)
            written.append(path)
    return written


def load_networks(ckpt_dir, cfg: ExperimentConfig, num_locations: int) -> tuple[TargetPair | None, TargetPair | None]:
    """Load whichever networks the configured policy needs, checking dimensions against the config."""
    ckpt_dir = Path(ckpt_dir)
    matching_name, pricing_name = cfg.policy.split("+")
    hidden = list(cfg.train.hidden)

    def pair(name: str, proto: Mlp) -> TargetPair:
        expect = proto.dims() | {"hidden": hidden}
        nets = {role: load_checkpoint(ckpt_dir / CHECKPOINT_FILES[(name, role)], expect)
                for role in ("online", "target")}
        return TargetPair(nets["online"], nets["target"], cfg.train.tau)

    value = pricing = None
    if matching_name == "neuradp":
        value = pair("value", value_network(cfg, num_locations, 0))
    if pricing_name == "ddqn":
        pricing = pair("pricing", pricing_network(cfg, num_locations, 0))
    return value, pricing


# -- training loop -----------------------------------------------------------

def schedule(cfg: ExperimentConfig, episode: int) -> tuple[float, float]:
    tc = cfg.train
    eps = max(tc.epsilon_min, tc.epsilon_start * tc.epsilon_decay ** episode)
    return eps, tc.noise_std * tc.noise_decay ** episode


def run_training(cfg: ExperimentConfig, out, episodes: int | None = None, progress=None) -> Path:
    """Train the configured policy pair; writes checkpoints, the config and a per-episode log to ``out``."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.toml")
    n_episodes = cfg.train.episodes if episodes is None else episodes
    table = build_table(cfg)
    env = CrowdShippingEnv(cfg.env, cfg.fees, table)
    policy = build_policy(cfg, table.num_locations)
    learner = JointLearner(cfg, policy, stream(cfg.seed, "replay"))
    save_networks(out, policy, cfg, {"episodes": 0})
    log_path = out / "training_log.csv"
    with open(log_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_FIELDS)
        for ep in range(n_episodes):
            eps, noise = schedule(cfg, ep)
            if isinstance(policy.pricing, DdqnPricing):
                policy.pricing.epsilon = eps
            if isinstance(policy.matching, NeurAdpMatching):
                policy.matching.noise_std = noise
            learner.reset_episode()
            try:
                stats = run_episode(cfg, env, policy, cfg.seed, ep, explore=True, learner=learner,
                                    explore_rng=stream(cfg.seed, "exploration", ep))
            except TrainingDiverged:
                log.error("training diverged in episode %d; keeping checkpoints from episode %d", ep, ep)
                raise
            v, q = learner.value, learner.pricing
            row = (ep, eps, noise, round(stats.cost, 6), stats.delivered, stats.lost,
                   v.loss_sum / v.updates if v and v.updates else "", q.loss_sum / q.updates if q and q.updates else "",
                   v.updates if v else 0, q.updates if q else 0, len(v.buffer) if v else 0, len(q.buffer) if q else 0)
            writer.writerow(row)
            fh.flush()
            save_networks(out, policy, cfg, {"episodes": ep + 1})
            if progress is not None:
                progress(ep, stats)
            log.info("episode %d cost %.1f eps %.3f", ep, stats.cost, eps)
    if isinstance(policy.matching, NeurAdpMatching):
        policy.matching.noise_std = cfg.train.noise_std
    return out
