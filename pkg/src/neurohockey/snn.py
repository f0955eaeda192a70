"""Software stand-in for the mixed-signal reservoir: LIF neurons with mismatch.

Synapses are delta-current and there is no bias, so between input spikes a
membrane only decays. :meth:`Reservoir.simulate_window` exploits that and
touches the state only at time bins that carry input; decay is applied
lazily per neuron from the bin at which its potential was last valid.
This is the same forward-Euler model as :meth:`Reservoir.simulate_window_dense`,
which steps every ``sim_dt`` and is kept as the reference implementation.
"""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np

from .encoding import N_CHANNELS, WINDOW
from .rng import substream

_NEVER = -(10**9)


@dataclass(frozen=True)
class ReservoirConfig:
    n_hidden: int = 1020
    fan_in: int = 16
    weight_std: float = 0.6
    tau_m: float = 0.020
    v_threshold: float = 1.0
    v_reset: float = 0.0
    t_refractory: float = 0.002
    mismatch_cv: float = 0.1
    sim_dt: float = 1e-4
    tau_s: float = 0.100
    seed: int = 0

    def validate(self) -> None:
        problems = []
        if self.n_hidden < 1:
            problems.append(f"n_hidden={self.n_hidden} must be >= 1")
        if not 1 <= self.fan_in <= N_CHANNELS:
            problems.append(f"fan_in={self.fan_in} must be in [1, {N_CHANNELS}]")
        if self.weight_std < 0:
            problems.append(f"weight_std={self.weight_std} must be >= 0")
        if self.tau_m <= 0:
            problems.append(f"tau_m={self.tau_m} must be > 0")
        if self.tau_s <= 0:
            problems.append(f"tau_s={self.tau_s} must be > 0")
        if not self.v_threshold > self.v_reset:
            problems.append(f"v_threshold={self.v_threshold} must exceed v_reset={self.v_reset}")
        if self.t_refractory < 0:
            problems.append(f"t_refractory={self.t_refractory} must be >= 0")
        if not 0.0 <= self.mismatch_cv <= 0.5:
            problems.append(f"mismatch_cv={self.mismatch_cv} must be in [0, 0.5]")
        if self.sim_dt <= 0:
            problems.append(f"sim_dt={self.sim_dt} must be > 0")
        else:
            ratio = WINDOW / self.sim_dt
            if abs(ratio - round(ratio)) > 1e-9:
                problems.append(f"sim_dt={self.sim_dt} must divide the {WINDOW * 1e3:g} ms window")
            ref = self.t_refractory / self.sim_dt
            if abs(ref - round(ref)) > 1e-9:
                problems.append(f"t_refractory={self.t_refractory} must be a multiple of sim_dt")
        if problems:
            raise ValueError("invalid ReservoirConfig: " + "; ".join(problems))

    @property
    def window_steps(self) -> int:
        return int(round(WINDOW / self.sim_dt))

    @property
    def refractory_steps(self) -> int:
        return int(round(self.t_refractory / self.sim_dt))


@dataclass
class Reservoir:
    """Fixed input weights, per-neuron jittered constants and the membrane state."""

    config: ReservoirConfig
    w_in: np.ndarray
    tau_m: np.ndarray
    v_th: np.ndarray
    v: np.ndarray = field(init=False, repr=False)
    _t_valid: np.ndarray = field(init=False, repr=False)
    _ref_end: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.config.n_hidden
        self.w_in = np.array(self.w_in, dtype=float)
        self.tau_m = np.array(self.tau_m, dtype=float)
        self.v_th = np.array(self.v_th, dtype=float)
        if self.w_in.shape != (n, N_CHANNELS):
            raise ValueError(f"w_in must have shape ({n}, {N_CHANNELS}), got {self.w_in.shape}")
        if self.tau_m.shape != (n,) or self.v_th.shape != (n,):
            raise ValueError("tau_m and v_th must have one entry per neuron")
        if np.any(self.tau_m <= 0):
            raise ValueError("all tau_m must be positive")
        if np.any(self.v_th <= self.config.v_reset):
            raise ValueError("all thresholds must exceed v_reset")
        for arr in (self.w_in, self.tau_m, self.v_th):
            arr.setflags(write=False)
        self._decay = np.exp(-self.config.sim_dt / self.tau_m)
        self._decay.setflags(write=False)
        self.reset_state()

    @property
    def n_hidden(self) -> int:
        return self.config.n_hidden

    def reset_state(self) -> "Reservoir":
        n = self.config.n_hidden
        self.v = np.full(n, self.config.v_reset)
        self._t_valid = np.full(n, -1, dtype=np.int64)
        self._ref_end = np.full(n, _NEVER, dtype=np.int64)
        return self

    def _input_events(self, pattern) -> tuple[np.ndarray, np.ndarray]:
        """(unique bins, per-bin input current) for one window."""
        chans, times = pattern.flat()
        if times.size == 0:
            return np.empty(0, dtype=np.int64), np.empty((0, self.n_hidden))
        if np.any(times < 0) or np.any(times >= pattern.window):
            raise ValueError("input spike outside the window")
        bins = np.floor(np.round(times / self.config.sim_dt, 6)).astype(np.int64)
        order = np.argsort(bins, kind="stable")
        bins, chans = bins[order], chans[order]
        uniq, start = np.unique(bins, return_index=True)
        stops = np.append(start[1:], bins.size)
        currents = np.empty((uniq.size, self.n_hidden))
        for k, (a, b) in enumerate(zip(start, stops)):
            currents[k] = self.w_in[:, chans[a:b]].sum(axis=1)
        return uniq, currents

    def simulate_window(self, pattern) -> np.ndarray:
        """Run one 20 ms window; return per-neuron spike counts.

        Membrane state carries over to the next call.
        """
        cfg = self.config
        counts = np.zeros(self.n_hidden, dtype=np.int64)
        bins, currents = self._input_events(pattern)
        v, t_valid, ref_end = self.v, self._t_valid, self._ref_end
        for s, current in zip(bins.tolist(), currents):
            live = ref_end < s
            base = np.maximum(t_valid, ref_end)
            v_new = v * self._decay ** (s - base) + current
            fire = live & (v_new >= self.v_th)
            v = np.where(live, v_new, v)
            v[fire] = cfg.v_reset
            t_valid = np.where(live, s, t_valid)
            ref_end = np.where(fire, s + cfg.refractory_steps, ref_end)
            counts += fire
        # re-express timestamps relative to the next window
        w = self._steps(pattern)
        self.v = v
        self._t_valid = t_valid - w
        self._ref_end = np.where(ref_end == _NEVER, _NEVER, ref_end - w)
        return counts

    def _steps(self, pattern) -> int:
        ratio = pattern.window / self.config.sim_dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(f"window {pattern.window} is not a multiple of sim_dt")
        return int(round(ratio))

    def simulate_window_dense(self, pattern, raster: bool = False):
        """Reference forward-Euler stepper: every ``sim_dt`` bin is visited.

        With ``raster=True`` also returns the (steps, n_hidden) boolean spike raster.
        """
        cfg = self.config
        w = self._steps(pattern)
        drive = np.zeros((w, N_CHANNELS))
        chans, times = pattern.flat()
        if np.any(times < 0) or np.any(times >= pattern.window):
            raise ValueError("input spike outside the window")
        bins = np.floor(np.round(times / cfg.sim_dt, 6)).astype(np.int64)
        np.add.at(drive, (bins, chans), 1.0)
        # materialise the lazily-decayed potential at the window start
        live = self._ref_end < 0
        base = np.maximum(self._t_valid, self._ref_end)
        v = np.where(live, self.v * self._decay ** (-1 - base), self.v)
        ref_left = np.where(self._ref_end >= 0, self._ref_end + 1, 0)
        counts = np.zeros(self.n_hidden, dtype=np.int64)
        spikes = np.zeros((w, self.n_hidden), dtype=bool) if raster else None
        for s in range(w):
            refractory = ref_left > 0
            v = np.where(refractory, cfg.v_reset, v * self._decay + self.w_in @ drive[s])
            ref_left = np.where(refractory, ref_left - 1, 0)
            fire = (~refractory) & (v >= self.v_th)
            v[fire] = cfg.v_reset
            ref_left[fire] = cfg.refractory_steps
            counts += fire
            if raster:
                spikes[s] = fire
        self.v = v
        self._t_valid = np.full(self.n_hidden, -1, dtype=np.int64)
        self._ref_end = np.where(ref_left > 0, ref_left - 1, _NEVER)
        return (counts, spikes) if raster else counts

    # -- persistence -------------------------------------------------------
    def export_csv(self, weights_path, params_path) -> None:
        with open(weights_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["neuron_id", "channel_id", "weight"])
            rows, cols = np.nonzero(self.w_in)
            for i, j in zip(rows.tolist(), cols.tolist()):
                wr.writerow([i, j, repr(float(self.w_in[i, j]))])
        with open(params_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["neuron_id", "tau_m", "v_th"])
            for i in range(self.n_hidden):
                wr.writerow([i, repr(float(self.tau_m[i])), repr(float(self.v_th[i]))])

    @classmethod
    def from_csv(cls, config: ReservoirConfig, weights_path, params_path) -> "Reservoir":
        n = config.n_hidden
        w = np.zeros((n, N_CHANNELS))
        with open(weights_path, newline="") as fh:
            for row in csv.DictReader(fh):
                w[int(row["neuron_id"]), int(row["channel_id"])] = float(row["weight"])
        tau = np.empty(n)
        vth = np.empty(n)
        with open(params_path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != n:
            raise ValueError(f"{params_path}: expected {n} neurons, found {len(rows)}")
        for row in rows:
            i = int(row["neuron_id"])
            tau[i] = float(row["tau_m"])
            vth[i] = float(row["v_th"])
        return cls(config, w, tau, vth)


def build_reservoir(cfg: ReservoirConfig) -> Reservoir:
    """Draw a reservoir from ``cfg.seed``; the same config always yields the same reservoir."""
    cfg.validate()
    rng = substream(cfg.seed, "reservoir")
    n = cfg.n_hidden
    w = np.zeros((n, N_CHANNELS))
    for i in range(n):
        chans = rng.choice(N_CHANNELS, size=cfg.fan_in, replace=False)
        w[i, chans] = rng.normal(0.0, cfg.weight_std, size=cfg.fan_in)
        # an exact 0.0 draw would drop a synapse from the sparsity pattern
        w[i, chans[w[i, chans] == 0.0]] = np.finfo(float).tiny
    eta = rng.normal(0.0, cfg.mismatch_cv, size=n) if cfg.mismatch_cv > 0 else np.zeros(n)
    zeta = rng.normal(0.0, cfg.mismatch_cv, size=n) if cfg.mismatch_cv > 0 else np.zeros(n)
    tau = cfg.tau_m * np.maximum(1.0 + eta, 0.05)
    span = cfg.v_threshold - cfg.v_reset
    v_th = cfg.v_threshold * (1.0 + zeta)
    v_th = np.maximum(v_th, cfg.v_reset + 0.05 * span)
    return Reservoir(cfg, w, tau, v_th)


@dataclass
class FilteredTraces:
    """Exponentially filtered spike counts fed to the readout."""

    s_bar: np.ndarray
    tau_s: float = 0.100

    @classmethod
    def zeros(cls, n: int, tau_s: float = 0.100) -> "FilteredTraces":
        return cls(np.zeros(n), tau_s)

    def reset(self) -> None:
        self.s_bar[:] = 0.0


def update_traces(traces: FilteredTraces, counts, dt: float = WINDOW) -> FilteredTraces:
    counts = np.asarray(counts)
    if np.any(counts < 0):
        raise ValueError("spike counts must be non-negative")
    decay = np.exp(-dt / traces.tau_s) if np.isfinite(traces.tau_s) else 1.0
    traces.s_bar = traces.s_bar * decay + counts
    return traces


def config_dict(cfg: ReservoirConfig) -> dict:
    return asdict(cfg)
