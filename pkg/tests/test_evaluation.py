import csv
import hashlib
import json

import pytest
from conftest import tiny_config

from crowdship.config import ConfigError
from crowdship.evaluation import DETOUR_BINS, SWEEP_AXES, run_evaluation, run_sweep
from crowdship.training import CHECKPOINT_FILES, run_training


@pytest.fixture(scope="module")
def untrained(tmp_path_factory):
    cfg = tiny_config(**{"train.warmup": 8})
    return cfg, run_training(cfg, tmp_path_factory.mktemp("ckpt"), episodes=1)


def test_greedy_fixed_is_reproducible(tmp_path):
    cfg = tiny_config(policy="greedy+fixed")
    a = run_evaluation(cfg, out=tmp_path / "a", plots=False)
    b = run_evaluation(cfg, out=tmp_path / "b", plots=False)
    assert a.summary["episodes"] == 2 and a.mean_cost == b.mean_cost
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()


def test_episode_count_is_days_times_repeats():
    cfg = tiny_config(policy="greedy+fixed", **{"eval.days": 3, "eval.repeats": 2})
    res = run_evaluation(cfg, plots=False)
    assert res.summary["episodes"] == 6
    assert [(e.day, e.repeat) for e in res.episodes] == [(d, r) for d in range(3) for r in range(2)]


def test_learned_policy_json_identical_and_checkpoints_untouched(untrained, tmp_path):
    cfg, ckpt = untrained

    def digest():
        return {n: hashlib.sha256((ckpt / n).read_bytes()).hexdigest() for n in CHECKPOINT_FILES.values()}
    before = digest()
    run_evaluation(cfg, ckpt, tmp_path / "a")
    run_evaluation(cfg, ckpt, tmp_path / "b")
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    assert digest() == before


def test_result_files(untrained, tmp_path):
    cfg, ckpt = untrained
    res = run_evaluation(cfg, ckpt, tmp_path)
    for name in ("episodes.csv", "summary.json", "hourly.csv", "detour_distribution.csv", "pricing_heatmap.csv",
                 "hourly_cost.png", "detour_distribution.png", "batch_size_by_hour.png", "pricing_heatmap.png"):
        assert (tmp_path / name).stat().st_size > 0
    with open(tmp_path / "episodes.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert sum(float(r["cost"]) for r in rows) / 2 == pytest.approx(res.mean_cost)
    s = json.loads((tmp_path / "summary.json").read_text())
    assert len(s["detour_counts"]) == len(DETOUR_BINS)
    assert sum(s["detour_counts"]) == sum(int(r["accepted"]) for r in rows)
    # every outstanding order is priced once per epoch, then either delayed or offered
    assert sum(map(sum, s["pricing_heatmap"])) == sum(e.delays + sum(e.epoch_offered_orders) for e in res.episodes)
    assert sum(s["hourly_cost"]) == pytest.approx(res.mean_cost)


def test_dimension_mismatch_names_field(untrained):
    cfg, ckpt = untrained
    with pytest.raises(ValueError, match="hidden"):
        run_evaluation(cfg.replace(**{"train.hidden": [8, 8, 8]}), ckpt, plots=False)


def test_learned_policy_requires_checkpoints():
    with pytest.raises(ConfigError):
        run_evaluation(tiny_config(policy="neuradp+fixed"), plots=False)


def test_single_value_sweep_equals_evaluation(untrained, tmp_path):
    cfg, ckpt = untrained
    (tmp_path / "ck" / "detour_fee=0.1").mkdir(parents=True)
    (tmp_path / "ck" / "detour_fee=0.1" / "neuradp+ddqn").symlink_to(ckpt)
    table = run_sweep(cfg, "detour_fee", [0.1], tmp_path / "out", tmp_path / "ck",
                      policies=("neuradp+ddqn", "greedy+fixed"), train_missing=False)
    (row,) = table["rows"]
    assert row["cost"]["N+D"] == run_evaluation(cfg, ckpt, plots=False).mean_cost
    assert row["cost"]["G+F"] == run_evaluation(cfg.replace(policy="greedy+fixed"), plots=False).mean_cost
    gf, nd = row["cost"]["G+F"], row["cost"]["N+D"]
    assert row["pct_over_nd"]["G+F"] == pytest.approx((gf - nd) / nd * 100)
    for name in ("sweep.json", "sweep.csv", "sweep.png"):
        assert (tmp_path / "out" / name).exists()


def test_sweep_is_pure(tmp_path):
    cfg = tiny_config()
    a = run_sweep(cfg, "base_fee", ["2", "5"], policies=("greedy+fixed",))
    b = run_sweep(cfg, "base_fee", [2, 5], policies=("greedy+fixed",))
    assert a == b and [r["value"] for r in a["rows"]] == [2.0, 5.0]


def test_sweep_trains_missing_checkpoints(tmp_path):
    cfg = tiny_config(**{"train.episodes": 1})
    table = run_sweep(cfg, "kappa", [2], tmp_path, policies=("greedy+ddqn",), plots=False)
    assert (tmp_path / "kappa=2" / "greedy+ddqn" / "train" / "pricing_online.ckpt").exists()
    assert "G+D" in table["rows"][0]["cost"]


def test_unknown_axis_lists_valid_axes():
    with pytest.raises(ConfigError) as err:
        run_sweep(tiny_config(), "speed", [1.0])
    for axis in SWEEP_AXES:
        assert axis in str(err.value)
    with pytest.raises(ConfigError):
        run_sweep(tiny_config(), "kappa", [1], policies=("random",))
