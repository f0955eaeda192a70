"""Closed-loop training: encode -> reservoir -> readout -> table, over episodes and seeds."""
from __future__ import annotations

import csv
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig, save_config
from .encoding import PopulationCodec, rates_to_spikes
from .env import AirHockeyEnv, EnvState, Outcome, get_preset
from .readout import ReadoutState, save_weights_csv
from .rng import substream
from .snn import FilteredTraces, Reservoir, build_reservoir, update_traces

log = logging.getLogger(__name__)

MA_WINDOW = 30
EPISODE_FIELDS = ["seed", "episode", "outcome", "return", "steps",
                  "action0_count", "action1_count", "first_contact_step"]
TRAJECTORY_FIELDS = ["episode", "step", "action", "pi0", "pi1", "reward",
                     "x_p", "y_p", "v_x", "v_y", "x_ee", "y_ee", "outcome"]


class TrainingFault(RuntimeError):
    def __init__(self, seed: int, episode: int, cause: BaseException):
        super().__init__(f"seed {seed}, episode {episode}: {type(cause).__name__}: {cause}")
        self.seed = seed
        self.episode = episode


@dataclass
class EpisodeLog:
    seed: int
    episode: int
    outcome: str
    total_reward: float
    steps: int
    action_counts: tuple[int, int]
    first_contact_step: int | None

    @property
    def success(self) -> bool:
        return self.outcome == Outcome.SUCCESS.value

    def row(self) -> list:
        return [self.seed, self.episode, self.outcome, repr(self.total_reward), self.steps,
                self.action_counts[0], self.action_counts[1],
                "" if self.first_contact_step is None else self.first_contact_step]


@dataclass
class Agent:
    """Everything on the network side of the loop for one seed.

    The readout sees ``s_bar - offset`` where ``offset`` is a slow running
    mean of the traces. Raw traces share one large common component across
    all states, so without it the policy gradient is dominated by a single
    stiff direction and learning either crawls or collapses.
    """

    codec: PopulationCodec
    reservoir: Reservoir
    readout: ReadoutState
    traces: FilteredTraces
    offset: np.ndarray | None = None
    centering_rate: float = 0.0

    @classmethod
    def from_config(cls, cfg: RunConfig, seed: int, W=None, offset=None) -> "Agent":
        preset = get_preset(cfg.preset)
        res = build_reservoir(replace(cfg.reservoir, seed=seed))
        if cfg.centering_rate > 0:
            offset = np.zeros(res.n_hidden) if offset is None else np.array(offset, dtype=float)
            if offset.shape != (res.n_hidden,):
                raise ValueError(f"offset must have shape ({res.n_hidden},), got {offset.shape}")
        else:
            offset = None
        return cls(
            codec=PopulationCodec.for_preset(preset, cfg.codec),
            reservoir=res,
            readout=ReadoutState(res.n_hidden, cfg.readout, W),
            traces=FilteredTraces.zeros(res.n_hidden, cfg.reservoir.tau_s),
            offset=offset,
            centering_rate=cfg.centering_rate,
        )

    def features(self, obs: EnvState, adapt: bool = False) -> np.ndarray:
        pattern = rates_to_spikes(self.codec.encode_rates(obs))
        counts = self.reservoir.simulate_window(pattern)
        s_bar = update_traces(self.traces, counts).s_bar
        if self.offset is None:
            return s_bar
        if adapt:
            self.offset += self.centering_rate * (s_bar - self.offset)
        return s_bar - self.offset


def run_episode(env: AirHockeyEnv, agent: Agent, spawn_rng, action_rng, *,
                seed: int = 0, episode: int = 0, learn: bool = True,
                action_override: Callable[[EnvState], int] | None = None,
                trajectory: list | None = None) -> EpisodeLog:
    """Play one episode; with ``learn`` the step rewards feed the pending update.

    ``action_override`` replaces the sampled action (the policy is still
    evaluated so the random streams advance identically). Per-step rows are
    appended to ``trajectory`` when given.
    """
    obs = env.reset(spawn_rng)
    agent.reservoir.reset_state()
    agent.traces.reset()
    agent.readout.start_episode()
    total = 0.0
    counts = [0, 0]
    first_contact = None
    while True:
        s_bar = agent.features(obs, adapt=learn)
        sample = agent.readout.forward(s_bar, action_rng)
        action = sample.action if action_override is None else int(action_override(obs))
        res = env.step_control(action)
        if learn:
            agent.readout.accumulate_step(sample.probs, action, s_bar, res.reward)
        total += res.reward
        counts[action] += 1
        if res.contact and first_contact is None:
            first_contact = env.steps
        if trajectory is not None:
            o = res.obs
            trajectory.append([episode, env.steps, action, repr(float(sample.probs[0])),
                               repr(float(sample.probs[1])), repr(res.reward), o.x_p, o.y_p,
                               o.v_x, o.v_y, o.x_ee, o.y_ee, res.outcome.value])
        obs = res.obs
        if res.done:
            break
    return EpisodeLog(seed, episode, res.outcome.value, total, env.steps, tuple(counts), first_contact)


def episode_streams(seed: int, episode: int):
    return substream(seed, "env-spawn", episode), substream(seed, "action-sampling", episode)


def snapshot_path(out_dir, seed: int, episode: int | str) -> Path:
    tag = episode if isinstance(episode, str) else f"ep{episode:05d}"
    return Path(out_dir) / "weights" / f"weights_seed{seed}_{tag}.csv"


def offset_path(weights_path) -> Path:
    """Trace offset stored next to a weight snapshot (``weights_*`` -> ``offset_*``)."""
    p = Path(weights_path)
    if not p.name.startswith("weights_"):
        raise ValueError(f"{p} is not a weight snapshot name")
    return p.with_name("offset_" + p.name[len("weights_"):])


def save_snapshot(agent: Agent, path) -> None:
    save_weights_csv(agent.readout.W, path)
    if agent.offset is not None:
        np.savetxt(offset_path(path), agent.offset, fmt="%.17g", header="offset", comments="")


def load_offset_csv(path, n_hidden: int) -> np.ndarray:
    v = np.atleast_1d(np.loadtxt(path, skiprows=1, ndmin=1))
    if v.shape != (n_hidden,) or not np.all(np.isfinite(v)):
        raise ValueError(f"{path}: expected {n_hidden} finite offsets, got shape {v.shape}")
    return v


@dataclass
class SeedResult:
    seed: int
    logs: list[EpisodeLog]
    W: np.ndarray
    n_applied: int
    offset: np.ndarray | None = None
    eval_logs: list[EpisodeLog] = field(default_factory=list)
    wall_time: float = 0.0


def run_seed(cfg: RunConfig, seed: int, out_dir=None, *, start_episode: int = 0,
             W0=None, offset0=None) -> SeedResult:
    """Train one seed; updates are applied after every second episode.

    Resuming from ``start_episode`` (even) with the snapshot ``W0``/``offset0``
    taken at that point reproduces the remainder of the original run.
    """
    t0 = time.perf_counter()
    preset = get_preset(cfg.preset)
    env = AirHockeyEnv(preset, cfg.env)
    agent = Agent.from_config(cfg, seed, W0, offset0)
    if out_dir is not None:
        (Path(out_dir) / "weights").mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "reservoir").mkdir(parents=True, exist_ok=True)
        agent.reservoir.export_csv(Path(out_dir) / "reservoir" / f"reservoir_seed{seed}_weights.csv",
                                   Path(out_dir) / "reservoir" / f"reservoir_seed{seed}_params.csv")
        if start_episode == 0:
            save_snapshot(agent, snapshot_path(out_dir, seed, 0))
    logs = []
    for ep in range(start_episode, cfg.episodes):
        spawn_rng, action_rng = episode_streams(seed, ep)
        try:
            logs.append(run_episode(env, agent, spawn_rng, action_rng, seed=seed, episode=ep))
            if (ep + 1) % 2 == 0:
                agent.readout.apply_update()
        except Exception as exc:
            raise TrainingFault(seed, ep, exc) from exc
        done = ep + 1
        if out_dir is not None and cfg.snapshot_interval and done % cfg.snapshot_interval == 0:
            save_snapshot(agent, snapshot_path(out_dir, seed, done))
    if out_dir is not None:
        save_snapshot(agent, snapshot_path(out_dir, seed, "final"))
    offset = None if agent.offset is None else agent.offset.copy()
    eval_logs = []
    if cfg.frozen_eval:
        eval_logs = evaluate(cfg, seed, agent.readout.W, offset)
    return SeedResult(seed, logs, agent.readout.W.copy(), agent.readout.n_applied, offset,
                      eval_logs, time.perf_counter() - t0)


def evaluate(cfg: RunConfig, seed: int, W, offset=None, episodes: int = 100,
             trajectory: list | None = None, first_episode: int = 0) -> list[EpisodeLog]:
    """Roll out a frozen policy (weights and trace offset fixed) on the eval streams."""
    env = AirHockeyEnv(get_preset(cfg.preset), cfg.env)
    agent = Agent.from_config(cfg, seed, W, offset)
    logs = []
    for ep in range(first_episode, first_episode + episodes):
        spawn_rng = substream(seed, "eval-spawn", ep)
        action_rng = substream(seed, "eval-action", ep)
        logs.append(run_episode(env, agent, spawn_rng, action_rng, seed=seed, episode=ep,
                                learn=False, trajectory=trajectory))
    return logs


# -- metrics ---------------------------------------------------------------

def moving_average(flags, window: int = MA_WINDOW) -> np.ndarray:
    """Trailing mean over ``flags[max(0, e - window + 1) : e + 1]`` for every ``e``."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(flags)
    if x.size == 0:
        return np.empty(0)
    csum = np.concatenate([[0], np.cumsum(x)])
    e = np.arange(x.size)
    lo = np.maximum(0, e - window + 1)
    return (csum[e + 1] - csum[lo]) / (e + 1 - lo)


@dataclass
class LearningCurve:
    seeds: list[int]
    flags: np.ndarray      # (n_seeds, episodes) success indicators
    per_seed: np.ndarray   # moving averages, same shape
    window: int = MA_WINDOW

    @classmethod
    def from_flags(cls, seeds, flags, window: int = MA_WINDOW) -> "LearningCurve":
        flags = np.asarray(flags, dtype=float)
        ma = np.array([moving_average(f, window) for f in flags])
        return cls(list(seeds), flags, ma, window)

    @property
    def mean(self) -> np.ndarray:
        return self.per_seed.mean(axis=0)

    @property
    def q25(self) -> np.ndarray:
        return np.percentile(self.per_seed, 25, axis=0)

    @property
    def q75(self) -> np.ndarray:
        return np.percentile(self.per_seed, 75, axis=0)

    def final_success(self, last: int) -> np.ndarray:
        """Per-seed fraction of successes over the final ``last`` episodes."""
        return self.flags[:, -last:].mean(axis=1)

    def episodes_to_threshold(self, threshold: float, curve=None) -> int | None:
        """First episode at which a full-window moving average reaches ``threshold``."""
        curve = self.mean if curve is None else curve
        idx = np.nonzero(curve[self.window - 1:] >= threshold)[0]
        return None if idx.size == 0 else int(idx[0] + self.window - 1)


# -- on-disk artefacts -------------------------------------------------------

def write_episodes_csv(path, logs) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(EPISODE_FIELDS)
        for lg in logs:
            wr.writerow(lg.row())


def read_episodes_csv(path) -> list[EpisodeLog]:
    out = []
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = set(EPISODE_FIELDS) - set(rd.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for r in rd:
            fc = r["first_contact_step"]
            out.append(EpisodeLog(int(r["seed"]), int(r["episode"]), r["outcome"], float(r["return"]),
                                  int(r["steps"]), (int(r["action0_count"]), int(r["action1_count"])),
                                  int(fc) if fc else None))
    return out


def curve_from_logs(logs, window: int = MA_WINDOW) -> LearningCurve:
    by_seed: dict[int, list[EpisodeLog]] = {}
    for lg in logs:
        by_seed.setdefault(lg.seed, []).append(lg)
    seeds = sorted(by_seed)
    lengths = {len(by_seed[s]) for s in seeds}
    if len(lengths) != 1:
        raise ValueError(f"seeds have unequal episode counts: {sorted(lengths)}")
    flags = [[lg.success for lg in sorted(by_seed[s], key=lambda l: l.episode)] for s in seeds]
    return LearningCurve.from_flags(seeds, flags, window)


def write_curve_csv(path, curve: LearningCurve) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["episode"] + [f"ma_seed{s}" for s in curve.seeds] + ["mean", "q25", "q75"])
        mean, q25, q75 = curve.mean, curve.q25, curve.q75
        for e in range(curve.per_seed.shape[1]):
            wr.writerow([e] + [repr(float(v)) for v in curve.per_seed[:, e]]
                        + [repr(float(mean[e])), repr(float(q25[e])), repr(float(q75[e]))])


def _check_writable(out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / ".write_probe"
    try:
        probe.write_text("ok")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"output directory {out_dir} is not writable: {exc}") from exc


def manifest_extras(cfg: RunConfig) -> dict:
    preset = get_preset(cfg.preset)
    codec = PopulationCodec.for_preset(preset, cfg.codec)
    extra = {
        "speed_min": preset.speed_range[0],
        "speed_max": preset.speed_range[1],
        "spawn_x": preset.spawn_x,
        "spawn_x_window": preset.spawn_x_window,
        "codec.spacing": tuple(float(s) for s in codec.spacing),
        "env.substeps": cfg.env.substeps,
    }
    return extra


def _run_seed_job(args):
    cfg, seed, out_dir = args
    return run_seed(cfg, seed, out_dir)


def run_training(cfg: RunConfig, out_dir=None, progress: bool = False) -> LearningCurve:
    """Train every seed in ``cfg`` and write episodes/curve/manifest/snapshots to ``out_dir``."""
    cfg.validate()
    out_dir = Path(out_dir or cfg.output_dir or "runs")
    _check_writable(out_dir)
    cfg = replace(cfg, output_dir=str(out_dir))
    save_config(cfg, out_dir / "manifest.txt", manifest_extras(cfg))

    jobs = [(cfg, s, out_dir) for s in cfg.seeds]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(cfg.workers, len(jobs), os.cpu_count() or 1)) as pool:
            results = list(pool.map(_run_seed_job, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_seed_job(job))
            if progress:
                r = results[-1]
                rate = np.mean([lg.success for lg in r.logs[-100:]])
                log.info("seed %d done in %.1fs, final-100 success %.2f", r.seed, r.wall_time, rate)

    logs = [lg for r in results for lg in r.logs]
    write_episodes_csv(out_dir / "episodes.csv", logs)
    curve = curve_from_logs(logs)
    write_curve_csv(out_dir / "curve.csv", curve)
    if cfg.frozen_eval:
        write_episodes_csv(out_dir / "eval.csv", [lg for r in results for lg in r.eval_logs])
    with open(out_dir / "summary.txt", "w") as fh:
        for r in results:
            fh.write(f"seed={r.seed} applied_updates={r.n_applied} "
                     f"final100_success={np.mean([lg.success for lg in r.logs[-100:]]):.4f} "
                     f"wall_time_s={r.wall_time:.1f}\n")
    return curve


def episode_dicts(logs) -> list[dict]:
    return [asdict(lg) for lg in logs]
