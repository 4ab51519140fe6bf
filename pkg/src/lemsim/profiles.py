"""Synthetic generation, demand, and grid tariff series.

Solar output follows a Gaussian irradiance bump multiplied by nominal
capacity, with optional Gaussian noise and persistent cloud occlusion
events. Household demand is bimodal (morning and evening peaks). Utility
and feed-in tariffs are step functions elevated inside peak-hour windows.
All series are kWh per trading period except the tariffs ($/MWh).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

# Irradiance is treated as zero beyond this many widths from the peak,
# so nights stay dark even before noise is applied.
SUPPORT_WIDTHS = 3.0

# Mean persistence of a cloud event, in periods.
CLOUD_MEAN_PERIODS = 3.0


@dataclass
class ProfileConfig:
    """Knobs for one agent's procedural profiles.

    Attributes:
        period_count: number of trading periods tau.
        nominal_capacity: installed generation capacity C_nom (kW; one
            period is treated as one capacity-unit-hour, so the peak
            noiseless output equals this value in kWh).
        irradiance_peak_period: index of solar noon.
        irradiance_width: Gaussian width of the irradiance bump (periods).
        noise_sigma: scale of zero-mean multiplicative Gaussian noise.
        cloud_probability: chance per period that a cloud event starts.
        cloud_depth: maximum fractional output reduction per cloud.
        demand_morning_peak / demand_evening_peak: peak period indices.
        demand_morning_magnitude / demand_evening_magnitude: peak kWh.
        demand_width: Gaussian width of each demand bump (periods).
        smoothing_window: centered moving-average window (periods).
        seed: PRNG seed; fixed seed gives a bit-identical series.
    """

    period_count: int = 24
    nominal_capacity: float = 60.0
    irradiance_peak_period: int = 12
    irradiance_width: float = 3.0
    noise_sigma: float = 0.05
    cloud_probability: float = 0.15
    cloud_depth: float = 0.6
    demand_morning_peak: int = 8
    demand_evening_peak: int = 19
    demand_morning_magnitude: float = 20.0
    demand_evening_magnitude: float = 30.0
    demand_width: float = 2.0
    smoothing_window: int = 3
    seed: int = 0

    def validate(self) -> None:
        if self.period_count < 1:
            raise ValueError("profile config: period_count must be >= 1")
        if self.nominal_capacity < 0:
            raise ValueError("profile config: nominal_capacity must be >= 0")
        if not 0.0 <= self.cloud_probability <= 1.0:
            raise ValueError("profile config: cloud_probability must be in [0, 1]")
        if not 0.0 <= self.cloud_depth <= 1.0:
            raise ValueError("profile config: cloud_depth must be in [0, 1]")
        if self.smoothing_window < 1:
            raise ValueError("profile config: smoothing_window must be >= 1")
        if self.noise_sigma < 0:
            raise ValueError("profile config: noise_sigma must be >= 0")
        for name in ("demand_morning_peak", "demand_evening_peak"):
            idx = getattr(self, name)
            if not 0 <= idx < self.period_count:
                raise ValueError(f"profile config: {name} out of range [0, {self.period_count})")


def _rng(seed: int, stream: int) -> np.random.Generator:
    # PCG64 keyed on (seed, stream) so generation and demand of the same
    # agent never share a draw sequence.
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


def smooth(series: np.ndarray, window: int) -> np.ndarray:
    """Centered moving average; the window truncates at the edges.

    Output length equals input length. window=1 is the identity.
    """
    if window < 1:
        raise ValueError("smooth: window must be >= 1")
    values = np.asarray(series, dtype=float)
    if window == 1:
        return values.copy()
    n = len(values)
    lo = (window - 1) // 2
    hi = window // 2
    out = np.empty(n)
    for i in range(n):
        a = max(0, i - lo)
        b = min(n, i + hi + 1)
        out[i] = values[a:b].mean()
    return out


def _irradiance(config: ProfileConfig) -> np.ndarray:
    t = np.arange(config.period_count, dtype=float)
    peak = float(config.irradiance_peak_period)
    width = max(float(config.irradiance_width), 1e-9)
    lam = np.exp(-((t - peak) ** 2) / (2.0 * width**2))
    lam[np.abs(t - peak) > SUPPORT_WIDTHS * width] = 0.0
    return lam


def _cloud_series(config: ProfileConfig, rng: np.random.Generator) -> np.ndarray:
    """Per-period fractional occlusion, negative values in [-cloud_depth, 0].

    A cloud starts with cloud_probability, takes a uniform depth, and
    persists a geometric number of periods (mean CLOUD_MEAN_PERIODS).
    While one is active no new event is drawn.
    """
    eps = np.zeros(config.period_count)
    remaining = 0
    depth = 0.0
    for t in range(config.period_count):
        if remaining > 0:
            eps[t] = -depth
            remaining -= 1
            continue
        if config.cloud_probability > 0 and rng.uniform() < config.cloud_probability:
            depth = config.cloud_depth * rng.uniform()
            remaining = int(rng.geometric(1.0 / CLOUD_MEAN_PERIODS))
            eps[t] = -depth
            remaining -= 1
    return eps


def generate_generation(config: ProfileConfig) -> np.ndarray:
    """Solar generation series: C_nom * lambda_t * (1 + noise + cloud).

    Clamped to >= 0 and passed through the smoothing filter. Noiseless
    output peaks at exactly the nominal capacity.
    """
    config.validate()
    rng = _rng(config.seed, 0)
    lam = _irradiance(config)
    noise = np.zeros(config.period_count)
    if config.noise_sigma > 0:
        noise = rng.normal(0.0, config.noise_sigma, size=config.period_count)
    clouds = _cloud_series(config, rng)
    raw = config.nominal_capacity * lam * (1.0 + noise + clouds)
    raw = np.maximum(raw, 0.0)
    return smooth(raw, config.smoothing_window)


def generate_demand(config: ProfileConfig) -> np.ndarray:
    """Bimodal household demand with morning and evening Gaussian peaks."""
    config.validate()
    rng = _rng(config.seed, 1)
    t = np.arange(config.period_count, dtype=float)
    width = max(float(config.demand_width), 1e-9)

    def bump(peak: int, magnitude: float) -> np.ndarray:
        return magnitude * np.exp(-((t - peak) ** 2) / (2.0 * width**2))

    raw = bump(config.demand_morning_peak, config.demand_morning_magnitude) + bump(
        config.demand_evening_peak, config.demand_evening_magnitude
    )
    if config.noise_sigma > 0:
        raw = raw * (1.0 + rng.normal(0.0, config.noise_sigma, size=config.period_count))
    raw = np.maximum(raw, 0.0)
    return smooth(raw, config.smoothing_window)


def generate_dso_prices(
    config: ProfileConfig,
    p_fit_base: float,
    p_utility_base: float,
    peak_multiplier: float = 1.0,
    peak_halfwidth: int = 2,
) -> tuple[np.ndarray, np.ndarray]:
    """Step-function feed-in tariff and utility price series ($/MWh).

    Both are elevated by peak_multiplier within peak_halfwidth periods of
    the configured morning and evening demand peaks. The utility price
    stays strictly above the feed-in tariff everywhere.
    """
    config.validate()
    if not p_utility_base > p_fit_base > 0:
        raise ValueError("dso prices: require p_utility_base > p_fit_base > 0")
    if peak_multiplier < 1.0:
        raise ValueError("dso prices: peak_multiplier must be >= 1")
    fit = np.full(config.period_count, float(p_fit_base))
    utility = np.full(config.period_count, float(p_utility_base))
    t = np.arange(config.period_count)
    in_window = (np.abs(t - config.demand_morning_peak) <= peak_halfwidth) | (
        np.abs(t - config.demand_evening_peak) <= peak_halfwidth
    )
    fit[in_window] *= peak_multiplier
    utility[in_window] *= peak_multiplier
    return fit, utility


def load_profiles_csv(path: str) -> dict[str, np.ndarray]:
    """Read per-agent series from CSV: header row of agent ids, one row per period."""
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"profiles csv {path}: empty file") from None
        columns: dict[str, list[float]] = {name.strip(): [] for name in header}
        names = [name.strip() for name in header]
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(names):
                raise ValueError(f"profiles csv {path}: line {lineno} has {len(row)} fields, expected {len(names)}")
            for name, cell in zip(names, row):
                columns[name].append(float(cell))
    return {name: np.asarray(vals, dtype=float) for name, vals in columns.items()}
