import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crowdship.geo import build_travel_table
from crowdship.model import CrowdShipper, Order

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def line_table(points_km):
    """Travel table over planar points (km) at 60 km/h, so minutes equal kilometres."""
    return build_travel_table(np.asarray(points_km, dtype=float), speed_kmh=60.0)


def order(oid, dest, epochs=5, deadline=1e9, mult=1.0, entry=0.0):
    return Order(oid, dest, entry, deadline, epochs, mult)


def shipper(sid, home, epoch=0):
    return CrowdShipper(sid, home, epoch)


@pytest.fixture
def small_table():
    # store, then points along/around the x axis
    return line_table([[0, 0], [10, 0], [0, 4], [3, 4], [5, 0], [8, 6]])


def tiny_config(**overrides):
    """Small, fast experiment config for episode-level tests."""
    from crowdship.config import ExperimentConfig
    base = {
        "env.horizon_minutes": 180, "env.num_locations": 40, "env.radius_km": 4.0, "env.orders_per_day": 40.0,
        "env.order_cutoff_minutes": 30, "train.hidden": [16, 16, 16], "train.embed_dim": 4,
        "train.warmup": 40, "train.batch_size": 8, "train.episodes": 2, "eval.days": 2, "eval.repeats": 1,
    }
    base.update(overrides)
    return ExperimentConfig().replace(**base)
