"""Gaussian population coding of the 6D observation into regular spike trains."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_VARIABLES = 6
N_PER_VARIABLE = 10
N_CHANNELS = N_VARIABLES * N_PER_VARIABLE
WINDOW = 0.020

VARIABLE_NAMES = ("x_p", "y_p", "v_x", "v_y", "x_ee", "y_ee")

# x axis: 10 centres at Table-I spacing 0.1493 m starting just behind the home target
X_RANGE = (0.6, 0.6 + 9 * 0.1493)
Y_RANGE = (-0.519, 0.519)


def velocity_range(v_max: float, margin: float = 0.2) -> tuple[float, float]:
    return (-v_max - margin, v_max + margin)


def default_ranges(v_max: float, margin: float = 0.2) -> tuple[tuple[float, float], ...]:
    vr = velocity_range(v_max, margin)
    return (X_RANGE, Y_RANGE, vr, vr, X_RANGE, Y_RANGE)


@dataclass(frozen=True)
class CodecConfig:
    r_max: float = 200.0
    velocity_margin: float = 0.2
    sigma_scale: float = 1.0  # sigma = sigma_scale * centre spacing


class PopulationCodec:
    """Ten Gaussian tuning curves per variable, uniformly tiling each range.

    Parameters
    ----------
    ranges : sequence of 6 (lo, hi) pairs
        Value range per variable, ordered (x_p, y_p, v_x, v_y, x_ee, y_ee).
    r_max : float
        Peak firing rate in Hz.
    sigma_scale : float
        Tuning width as a multiple of the centre spacing.
    """

    def __init__(self, ranges, r_max: float = 200.0, sigma_scale: float = 1.0):
        ranges = [tuple(map(float, r)) for r in ranges]
        if len(ranges) != N_VARIABLES:
            raise ValueError(f"expected {N_VARIABLES} ranges, got {len(ranges)}")
        for lo, hi in ranges:
            if not hi > lo:
                raise ValueError(f"degenerate range ({lo}, {hi})")
        if r_max <= 0 or sigma_scale <= 0:
            raise ValueError("r_max and sigma_scale must be positive")
        self.ranges = tuple(ranges)
        self.r_max = float(r_max)
        self.centers = np.array([np.linspace(lo, hi, N_PER_VARIABLE) for lo, hi in ranges])
        self.spacing = self.centers[:, 1] - self.centers[:, 0]
        self.sigma = sigma_scale * self.spacing

    @classmethod
    def for_preset(cls, preset, cfg: CodecConfig | None = None) -> "PopulationCodec":
        cfg = cfg or CodecConfig()
        return cls(default_ranges(preset.v_max, cfg.velocity_margin), cfg.r_max, cfg.sigma_scale)

    def encode_rates(self, obs) -> np.ndarray:
        """Firing rate (Hz) of all 60 channels, variable-major.

        Accepts one observation or a stack of shape (M, 6) -> (M, 60).
        """
        x = np.asarray(obs.as_tuple() if hasattr(obs, "as_tuple") else obs, dtype=float)
        if x.ndim not in (1, 2) or x.shape[-1] != N_VARIABLES:
            raise ValueError(f"observation must have {N_VARIABLES} components, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError(f"non-finite observation {x}")
        z = (x[..., :, None] - self.centers) / self.sigma[:, None]
        rates = self.r_max * np.exp(-0.5 * z * z)
        return rates.reshape(*x.shape[:-1], N_CHANNELS)


def spike_counts(rates, window: float = WINDOW) -> np.ndarray:
    return np.floor(np.asarray(rates, dtype=float) * window).astype(np.int64)


@dataclass(frozen=True)
class SpikePattern:
    """Sorted spike times (seconds, within ``[0, window)``) for each input channel."""

    channel_spikes: tuple
    window: float = WINDOW

    def __post_init__(self):
        for k, times in enumerate(self.channel_spikes):
            t = np.asarray(times)
            if t.size and (t[0] < 0 or t[-1] >= self.window or np.any(np.diff(t) < 0)):
                raise ValueError(f"channel {k}: spike times must be sorted and inside [0, {self.window})")

    @classmethod
    def empty(cls, n_channels: int = N_CHANNELS, window: float = WINDOW) -> "SpikePattern":
        return cls(tuple(np.empty(0) for _ in range(n_channels)), window)

    @property
    def n_channels(self) -> int:
        return len(self.channel_spikes)

    def total_spikes(self) -> int:
        return sum(len(t) for t in self.channel_spikes)

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """(channel index, time) of every spike, channel-major."""
        if not self.channel_spikes:
            return np.empty(0, dtype=np.int64), np.empty(0)
        sizes = [len(t) for t in self.channel_spikes]
        chans = np.repeat(np.arange(len(sizes)), sizes)
        times = np.concatenate([np.asarray(t, dtype=float) for t in self.channel_spikes])
        return chans, times


def rates_to_spikes(rates, window: float = WINDOW) -> SpikePattern:
    """Regular spike trains: ``n = floor(r * window)`` spikes at ``(k + 0.5) * window / n``."""
    rates = np.asarray(rates, dtype=float)
    if np.any(rates < 0) or not np.all(np.isfinite(rates)):
        raise ValueError("rates must be finite and non-negative")
    out = []
    for n in spike_counts(rates, window):
        if n == 0:
            out.append(np.empty(0))
        else:
            out.append((np.arange(n) + 0.5) * (window / n))
    return SpikePattern(tuple(out), window)
