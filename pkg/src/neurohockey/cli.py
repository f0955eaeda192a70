"""Command-line driver: ``neurohockey {train,replay,report,validate-config}``."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .config import (
    ConfigError,
    RunConfig,
    apply_overrides,
    default_output_root,
    dump_config,
    load_config,
)
from .env import PRESETS
from .readout import load_weights_csv
from .trainer import (
    MA_WINDOW,
    TRAJECTORY_FIELDS,
    TrainingFault,
    curve_from_logs,
    evaluate,
    load_offset_csv,
    offset_path,
    read_episodes_csv,
    run_seed,
    run_training,
    write_episodes_csv,
)

log = logging.getLogger("neurohockey")

EXIT_OK, EXIT_FAULT, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise UsageError(f"override {item!r} is not key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    return out


def _parse_seeds(text: str) -> tuple[int, ...]:
    """``"5"`` means five seeds 0..4; ``"3,7,9"`` lists them explicitly."""
    text = text.strip()
    if "," in text:
        return tuple(int(s) for s in text.split(",") if s.strip())
    n = int(text)
    if n < 1:
        raise UsageError("--seeds needs a positive count or a comma-separated list")
    return tuple(range(n))


def resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "preset", None):
        if args.preset not in PRESETS:
            raise UsageError(f"unknown preset {args.preset!r}; choose from {', '.join(PRESETS)}")
        cfg = apply_overrides(cfg, {"preset": args.preset})
    if getattr(args, "episodes", None) is not None:
        cfg = apply_overrides(cfg, {"episodes": str(args.episodes)})
    if getattr(args, "seeds", None):
        cfg = apply_overrides(cfg, {"seeds": ",".join(map(str, _parse_seeds(args.seeds)))})
    if getattr(args, "workers", None) is not None:
        cfg = apply_overrides(cfg, {"workers": str(args.workers)})
    cfg = apply_overrides(cfg, _parse_overrides(getattr(args, "set", None)))
    return cfg.validate()


# -- train -------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = resolve_config(args)
    out = Path(args.out or cfg.output_dir or Path(default_output_root()) / cfg.preset)
    log.info("training %s: %d seeds x %d episodes -> %s", cfg.preset, len(cfg.seeds), cfg.episodes, out)
    try:
        curve = run_training(cfg, out, progress=True)
    except TrainingFault as exc:
        print(f"neurohockey train: run aborted at {exc}", file=sys.stderr)
        return EXIT_FAULT
    final = curve.final_success(min(100, curve.flags.shape[1]))
    log.info("final-100 success per seed: %s", " ".join(f"{v:.2f}" for v in final))
    if not args.no_plots:
        _plot_curves({cfg.preset: [curve]}, out / "curve.png")
    return EXIT_OK


# -- replay ------------------------------------------------------------------

def cmd_replay(args) -> int:
    run_dir = Path(args.run)
    manifest = run_dir / "manifest.txt"
    if not manifest.exists():
        raise UsageError(f"{manifest} not found")
    cfg = load_config(manifest)
    if args.preset:
        cfg = apply_overrides(cfg, {"preset": args.preset})
    W = load_weights_csv(args.snapshot, cfg.reservoir.n_hidden)
    offset = None
    if cfg.centering_rate > 0:
        offset = load_offset_csv(offset_path(args.snapshot), cfg.reservoir.n_hidden)
    seed = args.seed if args.seed is not None else cfg.seeds[0]
    out = Path(args.out or run_dir / f"replay_seed{seed}.csv")
    if args.learn:
        # resume training from the snapshot: reproduces the logged episodes
        start = args.start_episode
        if start % 2:
            raise UsageError("--start-episode must be even (snapshots sit on update boundaries)")
        end = start + args.episodes
        res = run_seed(apply_overrides(cfg, {"episodes": str(end)}), seed, None, start_episode=start,
                       W0=W, offset0=offset)
        write_episodes_csv(out, res.logs)
        log.info("replayed %d learning episodes -> %s", len(res.logs), out)
        return EXIT_OK
    rows: list = []
    logs = evaluate(cfg, seed, W, offset, episodes=args.episodes, trajectory=rows, first_episode=args.start_episode)
    with open(out, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(TRAJECTORY_FIELDS)
        wr.writerows(rows)
    n_ok = sum(lg.success for lg in logs)
    log.info("replay: %d/%d successes -> %s", n_ok, len(logs), out)
    print(f"successes={n_ok}/{len(logs)}")
    return EXIT_OK


# -- report ------------------------------------------------------------------

def summarise(curve, tail: int = 200, threshold: float = 0.97) -> dict:
    tail = min(tail, curve.flags.shape[1])
    per_seed = curve.final_success(tail)
    return {
        "seeds": len(curve.seeds),
        "episodes": curve.flags.shape[1],
        "asymptotic_success": float(per_seed.mean()),
        "asymptotic_min": float(per_seed.min()),
        "asymptotic_max": float(per_seed.max()),
        "episodes_to_threshold": curve.episodes_to_threshold(threshold),
    }


def cmd_report(args) -> int:
    groups: dict[str, list] = {}
    n_ok = 0
    for d in args.runs:
        d = Path(d)
        try:
            cfg = load_config(d / "manifest.txt")
            logs = read_episodes_csv(d / "episodes.csv")
            if not logs:
                raise ValueError("no episodes")
        except (OSError, ValueError, KeyError, ConfigError) as exc:
            print(f"warning: skipping {d}: {exc}", file=sys.stderr)
            continue
        groups.setdefault(cfg.preset, []).extend(logs)
        n_ok += 1
    if n_ok == 0:
        print("neurohockey report: error: no readable run directories", file=sys.stderr)
        return EXIT_FAULT
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    curves = {}
    rows = []
    for preset, logs in groups.items():
        # same seed from two run dirs: keep the first occurrence
        seen, merged = set(), []
        for lg in logs:
            if (lg.seed, lg.episode) not in seen:
                seen.add((lg.seed, lg.episode))
                merged.append(lg)
        curve = curve_from_logs(merged, args.window)
        curves[preset] = [curve]
        row = {"preset": preset, **summarise(curve, args.tail, args.threshold)}
        rows.append(row)
    fields = ["preset", "seeds", "episodes", "asymptotic_success", "asymptotic_min",
              "asymptotic_max", "episodes_to_threshold"]
    with open(out / "report.csv", "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=fields)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: ("" if r[k] is None else r[k]) for k in fields})
    lines = [f"| preset | seeds | episodes | success (last {args.tail}) | "
             f"episodes to {args.threshold:.0%} |", "|---|---|---|---|---|"]
    for r in rows:
        ett = "not reached" if r["episodes_to_threshold"] is None else str(r["episodes_to_threshold"])
        lines.append(f"| {r['preset']} | {r['seeds']} | {r['episodes']} | "
                     f"{r['asymptotic_success']:.1%} | {ett} |")
    table = "\n".join(lines) + "\n"
    (out / "report.md").write_text(table)
    print(table, end="")
    if not args.no_plots:
        _plot_curves(curves, out / "curves.png")
    return EXIT_OK


def _plot_curves(curves: dict, path) -> None:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:  # plotting is optional
        log.warning("matplotlib unavailable; skipping %s", path)
        return
    fig, ax = plt.subplots(figsize=(7, 4))
    for name, cs in curves.items():
        for c in cs:
            x = np.arange(c.per_seed.shape[1])
            ax.plot(x, c.mean, label=f"{name} (n={len(c.seeds)})")
            ax.fill_between(x, c.q25, c.q75, alpha=0.25)
    ax.set_xlabel("episode")
    ax.set_ylabel(f"success rate ({MA_WINDOW}-episode moving average)")
    ax.set_ylim(-0.02, 1.02)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


# -- validate-config ---------------------------------------------------------

def cmd_validate(args) -> int:
    cfg = resolve_config(args)
    sys.stdout.write(dump_config(cfg))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="neurohockey", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def config_args(sp):
        sp.add_argument("--config", help="flat key=value config file (e.g. a run manifest)")
        sp.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
        sp.add_argument("--episodes", type=int)
        sp.add_argument("--seeds", help="seed count N (0..N-1) or comma-separated list")
        sp.add_argument("--workers", type=int, help="parallel seed workers")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config key, e.g. reservoir.n_hidden=256")

    t = sub.add_parser("train", help="train one preset over one or more seeds")
    config_args(t)
    t.add_argument("--out", help=f"output directory (default ${{{'NEUROHOCKEY_OUT'}}}/<preset>)")
    t.add_argument("--no-plots", action="store_true")
    t.set_defaults(func=cmd_train)

    r = sub.add_parser("replay", help="roll out a weight snapshot and log per-step trajectories")
    r.add_argument("--run", required=True, help="training run directory (holds manifest.txt)")
    r.add_argument("--snapshot", required=True, help="weights CSV from the run's weights/ folder")
    r.add_argument("--seed", type=int)
    r.add_argument("--preset", help="replay on a different preset than the one trained")
    r.add_argument("--episodes", type=int, default=10)
    r.add_argument("--start-episode", type=int, default=0)
    r.add_argument("--learn", action="store_true",
                   help="keep learning (reproduces the training run from the snapshot on)")
    r.add_argument("--out")
    r.set_defaults(func=cmd_replay)

    rep = sub.add_parser("report", help="aggregate run directories into tables and plots")
    rep.add_argument("runs", nargs="+")
    rep.add_argument("--out")
    rep.add_argument("--tail", type=int, default=200, help="episodes counted as asymptotic")
    rep.add_argument("--threshold", type=float, default=0.97)
    rep.add_argument("--window", type=int, default=MA_WINDOW)
    rep.add_argument("--no-plots", action="store_true")
    rep.set_defaults(func=cmd_report)

    v = sub.add_parser("validate-config", help="resolve and print a config")
    config_args(v)
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"neurohockey {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"neurohockey {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_FAULT


if __name__ == "__main__":
    sys.exit(main())
