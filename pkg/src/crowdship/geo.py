"""Location universe and travel times.

Location 0 is always the store. Coordinates are either planar kilometres
(``x_km``, ``y_km``) or geographic degrees (``lat``, ``lon``); the travel
time between two locations is the straight-line distance driven at a
constant speed.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

STORE = 0
EARTH_RADIUS_KM = 6371.0088


class LocationError(ValueError):
    """Raised for malformed location input."""


@dataclass(frozen=True)
class Locations:
    coords: np.ndarray  # (L+1, 2); row 0 is the store
    geographic: bool = False

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=float)
        if coords.ndim != 2 or coords.shape[1] != 2 or len(coords) < 1:
            raise LocationError("coords must be an (n, 2) array with the store in row 0")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    def __len__(self) -> int:
        return len(self.coords)


@dataclass(frozen=True)
class TravelTimeTable:
    minutes: np.ndarray
    speed_kmh: float
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.minutes.setflags(write=False)

    @property
    def num_locations(self) -> int:
        return len(self.minutes)

    def time(self, a: int, b: int) -> float:
        n = len(self.minutes)
        if not (0 <= a < n and 0 <= b < n):
            raise IndexError(f"unknown location id in ({a}, {b}); valid ids are 0..{n - 1}")
        return float(self.minutes[a, b])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["from", "to", "minutes"])
            n = len(self.minutes)
            for a in range(n):
                for b in range(n):
                    w.writerow([a, b, f"{self.minutes[a, b]:.6f}"])


def generate_locations(count: int, radius_km: float, seed: int) -> Locations:
    """Store at the origin plus ``count`` points uniform in a disc."""
    if count < 1:
        raise LocationError(f"count must be >= 1, got {count}")
    if not radius_km > 0:
        raise LocationError(f"radius_km must be > 0, got {radius_km}")
    rng = np.random.default_rng(seed)
    r = radius_km * np.sqrt(rng.uniform(0.0, 1.0, count))
    theta = rng.uniform(0.0, 2 * np.pi, count)
    pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
    return Locations(np.vstack([[0.0, 0.0], pts]))


def haversine_km(coords: np.ndarray) -> np.ndarray:
    lat = np.radians(coords[:, 0])[:, None]
    lon = np.radians(coords[:, 1])[:, None]
    dlat = lat - lat.T
    dlon = lon - lon.T
    h = np.sin(dlat / 2) ** 2 + np.cos(lat) * np.cos(lat.T) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(h, 0.0, 1.0)))


def euclidean_km(coords: np.ndarray) -> np.ndarray:
    diff = coords[:, None, :] - coords[None, :, :]
    return np.sqrt((diff**2).sum(axis=-1))


def build_travel_table(locations: Locations | np.ndarray, speed_kmh: float = 30.0) -> TravelTimeTable:
    if not speed_kmh > 0:
        raise LocationError(f"speed_kmh must be > 0, got {speed_kmh}")
    if isinstance(locations, Locations):
        coords, geographic = locations.coords, locations.geographic
    else:
        coords, geographic = np.asarray(locations, dtype=float), False
    km = haversine_km(coords) if geographic else euclidean_km(coords)
    minutes = km * 60.0 / speed_kmh
    np.fill_diagonal(minutes, 0.0)
    return TravelTimeTable(minutes=minutes, speed_kmh=float(speed_kmh), coords=coords)


def load_locations_csv(path) -> Locations:
    """Read ``id,lat,lon`` or ``id,x_km,y_km`` rows; ids must be dense from 0."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise LocationError(f"{path}: empty file") from None
        if header == ["id", "lat", "lon"]:
            geographic = True
        elif header == ["id", "x_km", "y_km"]:
            geographic = False
        else:
            raise LocationError(f"{path}:1: header must be id,lat,lon or id,x_km,y_km, got {','.join(header)}")
        rows: dict[int, tuple[float, float]] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 3:
                raise LocationError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            try:
                lid = int(row[0])
                a, b = float(row[1]), float(row[2])
            except ValueError:
                raise LocationError(f"{path}:{lineno}: malformed row {row!r}") from None
            if lid < 0:
                raise LocationError(f"{path}:{lineno}: negative id {lid}")
            if lid in rows:
                raise LocationError(f"{path}:{lineno}: duplicate id {lid}")
            rows[lid] = (a, b)
    if STORE not in rows:
        raise LocationError(f"{path}: store location (id 0) absent")
    ids = sorted(rows)
    if ids != list(range(len(ids))):
        missing = sorted(set(range(ids[-1] + 1)) - set(ids))
        raise LocationError(f"{path}: ids must be dense from 0; missing {missing[:5]}")
    return Locations(np.array([rows[i] for i in ids]), geographic=geographic)
