"""City registry, the region-city bias matrix, and geolocation metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

EARTH_RADIUS_KM = 6371.0
ACC_RADIUS_KM = 161.0


class RegistryError(KeyError):
    """Unknown city or region id."""


def _check_coords(lat, lon):
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    if np.any(np.abs(lat) > 90.0) or np.any(np.isnan(lat)):
        raise ValueError("latitude outside [-90, 90]")
    if np.any(np.abs(lon) > 180.0) or np.any(np.isnan(lon)):
        raise ValueError("longitude outside [-180, 180]")
    return lat, lon


def haversine(lat1, lon1, lat2, lon2, radius=EARTH_RADIUS_KM):
    """Great-circle distance in km between points given in degrees.

    Accepts scalars or broadcastable arrays.
    """
    lat1, lon1 = _check_coords(lat1, lon1)
    lat2, lon2 = _check_coords(lat2, lon2)
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlmb = np.radians(lon2 - lon1)
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlmb / 2) ** 2
    d = 2.0 * radius * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


@dataclass(frozen=True)
class City:
    city_id: str
    country_id: str
    lat: float
    lon: float


class CityRegistry:
    """Cities with their region, indexed densely in insertion order.

    Regions may be countries or administrative regions; the code path is the
    same.
    """

    def __init__(self, cities):
        self.cities = []
        self.city_index = {}
        self.country_index = {}
        self.countries = []
        for c in cities:
            c = c if isinstance(c, City) else City(*c)
            _check_coords(c.lat, c.lon)
            if c.city_id in self.city_index:
                raise ValueError(f"duplicate city id {c.city_id!r}")
            self.city_index[c.city_id] = len(self.cities)
            self.cities.append(c)
            if c.country_id not in self.country_index:
                self.country_index[c.country_id] = len(self.countries)
                self.countries.append(c.country_id)
        self.city_country = np.array(
            [self.country_index[c.country_id] for c in self.cities], dtype=np.int64
        )
        self.lat = np.array([c.lat for c in self.cities])
        self.lon = np.array([c.lon for c in self.cities])

    @property
    def n_cities(self):
        return len(self.cities)

    @property
    def n_countries(self):
        return len(self.countries)

    def city_idx(self, city_id):
        try:
            return self.city_index[city_id]
        except KeyError:
            raise RegistryError(f"unknown city id {city_id!r}") from None

    def country_of(self, city_id):
        return int(self.city_country[self.city_idx(city_id)])

    @classmethod
    def from_tsv(cls, path):
        cities = []
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 4:
                    raise ValueError(f"{path}:{line_no}: expected 4 tab-separated columns")
                cities.append(City(parts[0], parts[1], float(parts[2]), float(parts[3])))
        return cls(cities)

    def to_tsv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for c in self.cities:
                fh.write(f"{c.city_id}\t{c.country_id}\t{c.lat!r}\t{c.lon!r}\n")


def build_bias(registry):
    """M_co x M_ci matrix: 0 where the city lies in the region, else -1."""
    bias = -np.ones((registry.n_countries, registry.n_cities))
    bias[registry.city_country, np.arange(registry.n_cities)] = 0.0
    return bias


@dataclass
class MetricsReport:
    accuracy: float
    acc161: float
    median_km: float
    mean_km: float
    relative_country_error: float
    n: int

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


def relative_country_error(predicted, gold, registry):
    """Share of wrong-city predictions that also land in the wrong region.

    Zero when no prediction is wrong.
    """
    pred_idx = np.array([registry.city_idx(c) for c in predicted], dtype=np.int64)
    gold_idx = np.array([registry.city_idx(c) for c in gold], dtype=np.int64)
    wrong = pred_idx != gold_idx
    if not wrong.any():
        return 0.0
    cc = registry.city_country
    return float(np.mean(cc[pred_idx[wrong]] != cc[gold_idx[wrong]]))


class EvalAccumulator:
    """Shard-wise metric accumulation; ``report`` recomputes the median globally."""

    def __init__(self, registry):
        self.registry = registry
        self.distances = []
        self.correct = []
        self.predicted = []
        self.gold = []

    def update(self, predicted, gold_lat, gold_lon, gold_cities):
        reg = self.registry
        if not len(predicted) == len(gold_lat) == len(gold_lon) == len(gold_cities):
            raise ValueError("prediction and gold lists differ in length")
        idx = np.array([reg.city_idx(c) for c in predicted], dtype=np.int64)
        if len(idx):
            d = haversine(reg.lat[idx], reg.lon[idx], np.asarray(gold_lat, float),
                          np.asarray(gold_lon, float))
            self.distances.extend(np.atleast_1d(d).tolist())
        self.correct.extend(p == g for p, g in zip(predicted, gold_cities))
        self.predicted.extend(predicted)
        self.gold.extend(gold_cities)
        return self

    def report(self):
        n = len(self.distances)
        if n == 0:
            return MetricsReport(0.0, 0.0, 0.0, 0.0, 0.0, 0)
        d = np.asarray(self.distances)
        labelled = [(p, g) for p, g in zip(self.predicted, self.gold) if g is not None]
        rce = relative_country_error(*zip(*labelled), self.registry) if labelled else 0.0
        return MetricsReport(
            accuracy=float(np.mean(self.correct)),
            acc161=float(np.mean(d <= ACC_RADIUS_KM)),
            median_km=float(np.median(d)),
            mean_km=float(np.mean(d)),
            relative_country_error=rce,
            n=n,
        )


def evaluate(predicted, gold_lat, gold_lon, gold_cities, registry):
    """Accuracy, Acc@161 (inclusive), median/mean error km, relative region error."""
    return EvalAccumulator(registry).update(predicted, gold_lat, gold_lon, gold_cities).report()
