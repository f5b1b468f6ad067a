"""Donor-pool construction by exact matching on static attributes."""

from __future__ import annotations

import math
import warnings
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np

from .errors import NoDonors, UnknownKey
from .panel import PanelDataset, UnitRecord

__all__ = [
    "DISTANCE_KEY",
    "EARTH_RADIUS_KM",
    "DonorFilterSpec",
    "DonorPool",
    "build_pool",
    "haversine_km",
    "placebo_pool",
    "pool_without",
]

DISTANCE_KEY = "radial-distance-km"
EARTH_RADIUS_KM = 6371.0


def haversine_km(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance between two ``(lat, lon)`` points in degrees."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = (math.sin((lat2 - lat1) / 2) ** 2
         + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2)
    return 2.0 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class DonorFilterSpec:
    anchor: str
    equals: tuple[tuple[str, object], ...] = ()
    ranges: tuple[tuple[str, float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "equals", tuple((k, v) for k, v in self.equals))
        object.__setattr__(self, "ranges", tuple((k, float(lo), float(hi)) for k, lo, hi in self.ranges))

    def keys(self) -> list[str]:
        return [k for k, _ in self.equals] + [k for k, _, _ in self.ranges]

    def admits(self, unit: UnitRecord) -> bool:
        attrs = unit.attributes
        for key, want in self.equals:
            if key not in attrs or not _same(attrs[key], want):
                return False
        for key, lo, hi in self.ranges:
            v = attrs.get(key)
            if isinstance(v, (str, bool)) or v is None or not lo <= float(v) <= hi:
                return False
        return True


def _same(have, want) -> bool:
    if isinstance(want, bool) or isinstance(have, bool):
        return isinstance(have, bool) and isinstance(want, bool) and have == want
    if isinstance(want, (int, float)) and isinstance(have, (int, float)):
        return float(have) == float(want)
    return str(have) == str(want)


@dataclass(frozen=True, eq=False)
class DonorPool:
    treated: str
    donors: tuple[str, ...]
    features: Mapping[str, np.ndarray] = field(default_factory=dict)  # aligned with members

    def __post_init__(self):
        donors = tuple(self.donors)
        object.__setattr__(self, "donors", donors)
        if not donors:
            raise NoDonors(f"no donors for treated unit {self.treated!r}")
        if self.treated in donors:
            raise ValueError("treated unit cannot be its own donor")
        if len(set(donors)) != len(donors):
            raise ValueError("duplicate donors")
        feats = {}
        for k, v in self.features.items():
            arr = np.array(v, dtype=float)
            if arr.shape != (len(donors) + 1,):
                raise ValueError(f"feature {k!r} must align with treated + donors")
            arr.flags.writeable = False
            feats[k] = arr
        object.__setattr__(self, "features", MappingProxyType(feats))

    @property
    def members(self) -> tuple[str, ...]:
        return (self.treated, *self.donors)

    def __reduce__(self):
        return (DonorPool, (self.treated, self.donors, dict(self.features)))


def _derived_features(panel: PanelDataset, members: Sequence[str]) -> dict[str, np.ndarray]:
    units = [panel.unit(u) for u in members]
    coords = [(u.attributes.get("latitude"), u.attributes.get("longitude")) for u in units]
    if any(isinstance(c, (str, bool)) or c is None for pair in coords for c in pair):
        return {}
    anchor = coords[0]
    return {DISTANCE_KEY: np.array([haversine_km(anchor, c) for c in coords])}


def build_pool(panel: PanelDataset, spec: DonorFilterSpec) -> DonorPool:
    """Admit every non-anchor unit that passes all equality and range predicates."""
    treated = panel.unit(spec.anchor)
    present = set()
    for u in panel.units:
        present.update(u.attributes)
    for key in spec.keys():
        if key not in present:
            raise UnknownKey("attribute", key)
    if not spec.admits(treated):
        warnings.warn(f"treated unit {treated.id!r} fails its own donor predicates", stacklevel=2)
    donors = tuple(u.id for u in panel.units if u.id != treated.id and spec.admits(u))
    if not donors:
        raise NoDonors(f"no unit passes the donor predicates for {treated.id!r}")
    members = (treated.id, *donors)
    return DonorPool(treated.id, donors, _derived_features(panel, members))


def placebo_pool(panel: PanelDataset, pool: DonorPool, unit: str) -> DonorPool:
    """Pool with ``unit`` as pseudo-treated; the real treated unit never donates."""
    if unit == pool.treated:
        return pool
    donors = tuple(d for d in pool.donors if d != unit)
    members = (unit, *donors)
    return DonorPool(unit, donors, _derived_features(panel, members))


def pool_without(pool: DonorPool, donor: str) -> DonorPool:
    """Drop one donor, keeping the remaining feature values unchanged."""
    if donor not in pool.donors:
        raise KeyError(f"{donor!r} is not a donor")
    keep = [i for i, u in enumerate(pool.members) if u != donor]
    donors = tuple(d for d in pool.donors if d != donor)
    return DonorPool(pool.treated, donors, {k: v[keep] for k, v in pool.features.items()})
