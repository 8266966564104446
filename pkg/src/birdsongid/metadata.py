"""Metadata featurization: imputation, sun-position day parts, 7-vector.

Missing attribute values are drawn from a normal distribution fitted per
species (falling back to global statistics, then to range midpoints), and
every feature carries an availability flag so the network can discount
imputed values.

The day is bucketed into six sunlight categories bounded by the sun
crossing 9 degrees below and 4 degrees above the horizon; crossing times
come from a day-of-year almanac approximation accurate to a few minutes.
"""
from __future__ import annotations

import datetime
import enum
import math
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np

from .corpus import CorpusManifest, RecordingMetadata

ATTRIBUTES = ("latitude", "longitude", "elevation", "time")

# Clamp ranges for imputed draws; elevation uses its normalization range.
ATTRIBUTE_RANGES = {
    "latitude": (-90.0, 90.0),
    "longitude": (-180.0, 180.0),
    "elevation": (0.0, 5000.0),
    "time": (0.0, np.nextafter(1440.0, 0.0)),
}

# Raw-unit means whose normalized form is 0.5, used when an attribute is
# missing for the entire corpus.
NEUTRAL_MEANS = {"latitude": 0.0, "longitude": 0.0, "elevation": 2500.0, "time": 720.0}

ELEVATION_MAX = 5000.0

# Stand-in date for day-part classification when the recording date is
# missing: an equinox, so neither long nor short days are assumed.
DEFAULT_DATE = datetime.date(2000, 3, 21)

DAWN_ALTITUDE = -9.0  # degrees relative to horizon
DAY_ALTITUDE = 4.0


class DayPart(enum.IntEnum):
    NIGHT1 = 0
    DAWN = 1
    FORENOON = 2
    AFTERNOON = 3
    DUSK = 4
    NIGHT2 = 5


class AllDay(enum.Enum):
    """Sun never crosses the requested altitude on this day."""

    ABOVE = "above"
    BELOW = "below"


@dataclass
class SpeciesAttributeStats:
    """Per-species mean/variance/count for each imputable attribute.

    mean/var/count are (num_species, len(ATTRIBUTES)) arrays; variance is
    the population variance of the present values.
    """

    mean: np.ndarray
    var: np.ndarray
    count: np.ndarray

    def for_species(self, species_id: int, attribute: str) -> tuple[float, float]:
        col = ATTRIBUTES.index(attribute)
        return float(self.mean[species_id, col]), float(self.var[species_id, col])


def _attribute_value(md: RecordingMetadata, attribute: str) -> float | None:
    if attribute == "time":
        return md.time_of_day
    return getattr(md, attribute)


def compute_species_stats(manifest: CorpusManifest) -> SpeciesAttributeStats:
    """Fit per-species normal statistics over the present attribute values.

    Species with no observed values for an attribute inherit the global
    statistics; attributes missing corpus-wide get a neutral mean (the
    normalization midpoint) with zero variance.
    """
    k = manifest.num_species
    mean = np.zeros((k, len(ATTRIBUTES)))
    var = np.zeros((k, len(ATTRIBUTES)))
    count = np.zeros((k, len(ATTRIBUTES)), dtype=int)
    for col, attribute in enumerate(ATTRIBUTES):
        per_species: list[list[float]] = [[] for _ in range(k)]
        for e in manifest.entries:
            value = _attribute_value(e.metadata, attribute)
            if value is not None:
                per_species[e.species_id].append(float(value))
        pooled = [v for group in per_species for v in group]
        if pooled:
            global_mean, global_var = np.mean(pooled), np.var(pooled)
        else:
            global_mean, global_var = NEUTRAL_MEANS[attribute], 0.0
        for s in range(k):
            count[s, col] = len(per_species[s])
            if per_species[s]:
                mean[s, col] = np.mean(per_species[s])
                var[s, col] = np.var(per_species[s])
            else:
                mean[s, col] = global_mean
                var[s, col] = global_var
    return SpeciesAttributeStats(mean, var, count)


def impute_attribute(species_id: int, attribute: str,
                     stats: SpeciesAttributeStats,
                     rng: np.random.Generator) -> float:
    """Draw a plausible value for a missing attribute, clamped to range."""
    mu, variance = stats.for_species(species_id, attribute)
    value = rng.normal(mu, math.sqrt(variance))
    lo, hi = ATTRIBUTE_RANGES[attribute]
    return float(min(max(value, lo), hi))


def _sin(deg: float) -> float:
    return math.sin(math.radians(deg))


def _cos(deg: float) -> float:
    return math.cos(math.radians(deg))


def sun_event_times(lat: float, lon: float, date: datetime.date,
                    sun_altitude: float) -> tuple[float, float] | AllDay:
    """Approximate the UTC minutes at which the sun rises to / sets below
    ``sun_altitude`` degrees, by the day-of-year almanac method.

    Returns (rise, set) in minutes UTC, or an AllDay marker when the sun
    stays on one side of the altitude for the whole day (polar day/night,
    or any |latitude| where the hour-angle cosine leaves [-1, 1]).
    """
    day_of_year = date.timetuple().tm_yday
    lng_hour = lon / 15.0
    zenith = 90.0 - sun_altitude

    def crossing(rising: bool) -> float | AllDay:
        t = day_of_year + ((6.0 if rising else 18.0) - lng_hour) / 24.0
        m = 0.9856 * t - 3.289
        l = (m + 1.916 * _sin(m) + 0.020 * _sin(2 * m) + 282.634) % 360.0
        ra = math.degrees(math.atan(0.91764 * math.tan(math.radians(l))))
        ra += (math.floor(l / 90.0) - math.floor(ra / 90.0)) * 90.0
        ra /= 15.0
        sin_dec = 0.39782 * _sin(l)
        cos_dec = math.cos(math.asin(sin_dec))
        denom = cos_dec * _cos(lat)
        if denom == 0.0:
            return AllDay.ABOVE if sin_dec * _sin(lat) > _cos(zenith) else AllDay.BELOW
        cos_h = (_cos(zenith) - sin_dec * _sin(lat)) / denom
        if cos_h > 1.0:
            return AllDay.BELOW
        if cos_h < -1.0:
            return AllDay.ABOVE
        h = 360.0 - math.degrees(math.acos(cos_h)) if rising else math.degrees(math.acos(cos_h))
        h /= 15.0
        local_t = h + ra - 0.06571 * t - 6.622
        return ((local_t - lng_hour) % 24.0) * 60.0

    rise = crossing(rising=True)
    if isinstance(rise, AllDay):
        return rise
    set_ = crossing(rising=False)
    if isinstance(set_, AllDay):
        return set_
    return rise, set_


def _local_offset_minutes(lon: float) -> float:
    # Local civil time approximated as UTC + round(lon / 15) hours.
    return round(lon / 15.0) * 60.0


def _day_part_bounds(lat: float, lon: float, date: datetime.date) -> list[float]:
    """The five local-time boundaries between the six day parts.

    Degenerate events collapse so that the bounds are non-decreasing and
    the parts always partition [0, 1440).
    """
    offset = _local_offset_minutes(lon)

    def to_local(utc_minutes):
        return (utc_minutes + offset) % 1440.0

    ev9 = sun_event_times(lat, lon, date, DAWN_ALTITUDE)
    ev4 = sun_event_times(lat, lon, date, DAY_ALTITUDE)

    if isinstance(ev9, AllDay):
        # ABOVE: never darker than -9 deg, the night parts vanish.
        # BELOW: never brighter than -9 deg, everything is night.
        rise9, set9 = (0.0, 1440.0) if ev9 is AllDay.ABOVE else (None, None)
    else:
        rise9, set9 = to_local(ev9[0]), to_local(ev9[1])

    if isinstance(ev4, AllDay):
        rise4, set4 = (0.0, 1440.0) if ev4 is AllDay.ABOVE else (None, None)
    else:
        rise4, set4 = to_local(ev4[0]), to_local(ev4[1])

    if rise4 is not None:
        noon = (rise4 + set4) / 2.0
    elif rise9 is not None:
        noon = (rise9 + set9) / 2.0
    else:
        noon = 720.0
    if rise4 is None:
        rise4 = set4 = noon  # sun never clearly up: no forenoon/afternoon
    if rise9 is None:
        rise9, set9 = rise4, set4  # sun never above -9: nights swallow the rest

    bounds = []
    prev = 0.0
    for value in (rise9, rise4, noon, set4, set9):
        prev = min(max(value, prev), 1440.0)
        bounds.append(prev)
    return bounds


def classify_day_part(lat: float, lon: float, date: datetime.date,
                      time_of_day: float) -> DayPart:
    """Assign a local-civil-time instant to one of the six day parts.

    Intervals are half-open, so an instant exactly on a boundary belongs
    to the later part (noon itself is Afternoon).
    """
    if not 0.0 <= time_of_day < 1440.0:
        raise ValueError(f"time_of_day {time_of_day} outside [0, 1440)")
    bounds = _day_part_bounds(lat, lon, date)
    return DayPart(bisect_right(bounds, time_of_day))


# Indices into the 7-element metadata vector.
COORDS_AVAILABLE, LATITUDE, LONGITUDE = 0, 1, 2
ELEVATION_AVAILABLE, ELEVATION = 3, 4
DAYPART_AVAILABLE, DAYPART = 5, 6


def metadata_vector(md: RecordingMetadata, stats: SpeciesAttributeStats,
                    rng: np.random.Generator) -> np.ndarray:
    """The network's 7-element metadata input, all entries in [0, 1].

    Layout: [coords available, latitude, longitude, elevation available,
    elevation, day part available, day part]. Missing values are imputed
    (draw order: latitude, longitude, elevation, time) but their
    availability flag stays 0. Day part requires coordinates, date and
    time; whatever is missing is imputed, a missing date falls back to an
    equinox.
    """
    lat, lon = md.latitude, md.longitude
    coords_available = md.has_coordinates
    if lat is None:
        lat = impute_attribute(md.species_id, "latitude", stats, rng)
    if lon is None:
        lon = impute_attribute(md.species_id, "longitude", stats, rng)
    elevation = md.elevation
    elevation_available = elevation is not None
    if elevation is None:
        elevation = impute_attribute(md.species_id, "elevation", stats, rng)
    time_of_day = md.time_of_day
    daypart_available = (coords_available and md.date is not None
                         and time_of_day is not None)
    if time_of_day is None:
        time_of_day = impute_attribute(md.species_id, "time", stats, rng)
    date = md.date if md.date is not None else DEFAULT_DATE
    part = classify_day_part(lat, lon, date, time_of_day)
    return np.array([
        1.0 if coords_available else 0.0,
        (lat + 90.0) / 180.0,
        (lon + 180.0) / 360.0,
        1.0 if elevation_available else 0.0,
        min(max(elevation, 0.0), ELEVATION_MAX) / ELEVATION_MAX,
        1.0 if daypart_available else 0.0,
        part.value / 5.0,
    ])
