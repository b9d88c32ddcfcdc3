"""Shared builders for the test suite."""

from datetime import datetime, timedelta, timezone

import numpy as np
import pytest

from sunshadow.core import ImageSequence, LightingTable
from sunshadow.solar import SolarQuery, solar_angles, sun_direction

ST_LOUIS = (38.63, -90.20)


def daylight_lighting(n, seed=0, lat=ST_LOUIS[0], lon=ST_LOUIS[1], span_days=365.0,
                      start=None, min_elevation=2.0):
    """n random daylight instants over a window, with their sun directions."""
    rng = np.random.default_rng(seed)
    start = start or datetime(2013, 1, 1, tzinfo=timezone.utc)
    chosen = {}
    while len(chosen) < n:
        second = int(rng.integers(0, int(span_days * 86400)))
        if second in chosen:
            continue
        instant = start + timedelta(seconds=second)
        if solar_angles(instant, lat, lon)[1] >= min_elevation:
            chosen[second] = instant
    times = [chosen[k] for k in sorted(chosen)]
    directions = np.empty((n, 3))
    above = np.empty(n, dtype=bool)
    for i, t in enumerate(times):
        directions[i], above[i] = sun_direction(SolarQuery(t, lat, lon))
    return times, LightingTable(directions=directions, above_horizon=above)


def pixel_sequence(trajectories, times=None, lat=ST_LOUIS[0], lon=ST_LOUIS[1]):
    """Grayscale sequence over a 1 x p grid from an (n, p) intensity array."""
    trajectories = np.asarray(trajectories, dtype=np.float64)
    if trajectories.ndim == 1:
        trajectories = trajectories[:, None]
    n, p = trajectories.shape
    if times is None:
        base = datetime(2013, 1, 1, tzinfo=timezone.utc)
        times = [base + timedelta(hours=i) for i in range(n)]
    return ImageSequence(
        frames=trajectories,
        timestamps=times,
        latitude=lat,
        longitude=lon,
        sky_mask=np.ones((1, p), dtype=bool),
    )


@pytest.fixture(scope="session")
def year_lights():
    """40 daylight instants spread over a year at the default camera site."""
    return daylight_lighting(40, seed=17)


@pytest.fixture(scope="session")
def dense_year_lights():
    """120 daylight instants over a year, for recovery tests."""
    return daylight_lighting(120, seed=23)
