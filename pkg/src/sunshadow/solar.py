"""Sun position from UTC timestamps and camera geolocation.

Implements the NOAA solar calculator formulation (Julian-century polynomial
ephemeris with the equation of time), good to roughly a hundredth of a
degree over 1900-2100, far below what shadow labeling is sensitive to.
Atmospheric refraction is not applied; frames with the sun at or below the
geometric horizon are flagged rather than corrected.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .core import ImageSequence, LightingTable, ensure_utc
from .errors import DataError

log = logging.getLogger(__name__)

YEAR_MIN = 1900
YEAR_MAX = 2100


@dataclass(frozen=True)
class SolarQuery:
    """A single where-and-when for the sun position."""

    instant: datetime
    latitude: float
    longitude: float

    def __post_init__(self):
        if not (-90.0 <= self.latitude <= 90.0):
            raise DataError(f"latitude {self.latitude} outside [-90, 90]")
        if not (-180.0 <= self.longitude <= 180.0):
            raise DataError(f"longitude {self.longitude} outside [-180, 180]")


def _julian_day(instant: datetime) -> float:
    """Julian day number of a UTC instant (proleptic Gregorian)."""
    instant = ensure_utc(instant)
    day_fraction = (
        instant.hour + instant.minute / 60.0 + (instant.second + instant.microsecond * 1e-6) / 3600.0
    ) / 24.0
    return instant.toordinal() + 1721424.5 + day_fraction


def solar_angles(instant: datetime, latitude: float, longitude: float) -> tuple[float, float]:
    """Return (azimuth, elevation) in degrees for a UTC instant.

    Azimuth is measured clockwise from true North; elevation from the
    geometric horizon. Raises DataError for timestamps outside 1900-2100,
    the validity window of the polynomial ephemeris.
    """
    instant = ensure_utc(instant)
    if not (YEAR_MIN <= instant.year <= YEAR_MAX):
        raise DataError(
            f"timestamp {instant.isoformat()} outside the {YEAR_MIN}-{YEAR_MAX} validity window"
        )
    rad = math.radians
    jd = _julian_day(instant)
    t = (jd - 2451545.0) / 36525.0

    mean_long = (280.46646 + t * (36000.76983 + t * 0.0003032)) % 360.0
    mean_anom = 357.52911 + t * (35999.05029 - 0.0001537 * t)
    eccent = 0.016708634 - t * (0.000042037 + 0.0000001267 * t)
    eq_center = (
        math.sin(rad(mean_anom)) * (1.914602 - t * (0.004817 + 0.000014 * t))
        + math.sin(rad(2 * mean_anom)) * (0.019993 - 0.000101 * t)
        + math.sin(rad(3 * mean_anom)) * 0.000289
    )
    true_long = mean_long + eq_center
    omega = 125.04 - 1934.136 * t
    apparent_long = true_long - 0.00569 - 0.00478 * math.sin(rad(omega))

    mean_obliq = 23.0 + (26.0 + (21.448 - t * (46.815 + t * (0.00059 - t * 0.001813))) / 60.0) / 60.0
    obliq = mean_obliq + 0.00256 * math.cos(rad(omega))

    declination = math.asin(math.sin(rad(obliq)) * math.sin(rad(apparent_long)))

    # Equation of time, in minutes.
    y = math.tan(rad(obliq) / 2.0) ** 2
    eq_time = 4.0 * math.degrees(
        y * math.sin(2 * rad(mean_long))
        - 2.0 * eccent * math.sin(rad(mean_anom))
        + 4.0 * eccent * y * math.sin(rad(mean_anom)) * math.cos(2 * rad(mean_long))
        - 0.5 * y * y * math.sin(4 * rad(mean_long))
        - 1.25 * eccent * eccent * math.sin(2 * rad(mean_anom))
    )

    minutes_utc = instant.hour * 60.0 + instant.minute + (instant.second + instant.microsecond * 1e-6) / 60.0
    true_solar_minutes = (minutes_utc + eq_time + 4.0 * longitude) % 1440.0
    hour_angle = rad(true_solar_minutes / 4.0 - 180.0)

    lat = rad(latitude)
    east = -math.cos(declination) * math.sin(hour_angle)
    north = math.sin(declination) * math.cos(lat) - math.cos(declination) * math.sin(lat) * math.cos(hour_angle)
    up = math.sin(declination) * math.sin(lat) + math.cos(declination) * math.cos(lat) * math.cos(hour_angle)

    azimuth = math.degrees(math.atan2(east, north)) % 360.0
    elevation = math.degrees(math.asin(max(-1.0, min(1.0, up))))
    return azimuth, elevation


def sun_direction(query: SolarQuery) -> tuple[np.ndarray, bool]:
    """Unit East-North-Up vector toward the sun, plus an above-horizon flag."""
    azimuth, elevation = solar_angles(query.instant, query.latitude, query.longitude)
    az = math.radians(azimuth)
    el = math.radians(elevation)
    direction = np.array(
        [math.sin(az) * math.cos(el), math.cos(az) * math.cos(el), math.sin(el)]
    )
    direction /= np.linalg.norm(direction)
    return direction, elevation > 0.0


def lighting_table(seq: ImageSequence) -> LightingTable:
    """Sun direction for every frame of a sequence.

    Frames with the sun at or below the horizon are kept but logged; the
    EM driver excludes them from every pixel's linear system.
    """
    directions = np.empty((seq.n_frames, 3))
    above = np.empty(seq.n_frames, dtype=bool)
    for i, instant in enumerate(seq.timestamps):
        directions[i], above[i] = sun_direction(
            SolarQuery(instant=instant, latitude=seq.latitude, longitude=seq.longitude)
        )
    n_below = int((~above).sum())
    if n_below:
        log.warning("%d of %d frames have the sun below the horizon", n_below, seq.n_frames)
    return LightingTable(directions=directions, above_horizon=above)
