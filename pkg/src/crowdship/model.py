"""Core entities shared by the simulator and the decision layer."""
from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class Order:
    id: int
    destination: int
    entry_minute: float
    deadline_minute: float
    remaining_epochs: int
    current_multiplier: float = 1.0


@dataclass(frozen=True)
class CrowdShipper:
    id: int
    home: int
    arrival_epoch: int


@dataclass
class SystemState:
    epoch: int
    shippers: list[CrowdShipper] = field(default_factory=list)
    orders: list[Order] = field(default_factory=list)

    def order_by_id(self) -> dict[int, Order]:
        return {o.id: o for o in self.orders}
