"""Command-line entry point: gen, train, eval, ablate, report, config.

Exit codes: 0 success, 2 usage, 3 missing input artifact, 4 runtime abort.
Every command writes only inside ``--out`` and leaves a ``manifest.json`` there.
Set ``MOBILEMANIP_LOG_LEVEL`` (e.g. ``DEBUG``) to change verbosity.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import os
import subprocess
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

from . import __version__

log = logging.getLogger("mobilemanip")

EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_ABORT = 4


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _usage(msg: str) -> CLIError:
    return CLIError(msg, EXIT_USAGE)


def _missing(msg: str) -> CLIError:
    return CLIError(msg, EXIT_MISSING)


# -- manifests ----------------------------------------------------------------------


def git_revision() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], cwd=Path(__file__).resolve().parent,
                             capture_output=True, text=True, timeout=5)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out: Path, command: str, argv: Sequence[str], config: dict, seeds, outputs, started: str) -> None:
    from .rl.checkpoint import config_hash

    manifest = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "config_hash": config_hash(config),
        "seeds": list(seeds),
        "git_revision": git_revision(),
        "version": __version__,
        "started": started,
        "finished": _now(),
        "outputs": sorted(outputs),
    }
    path = out / "manifest.json"
    if command == "train" and path.exists():
        # several skills trained into one bank directory share a manifest
        prev = json.loads(path.read_text())
        if prev.get("command") == "train":
            runs = prev.pop("runs", [])
            manifest["runs"] = runs + [{k: prev[k] for k in ("argv", "config", "config_hash", "seeds", "started")}]
            manifest["outputs"] = sorted(set(prev.get("outputs", [])) | set(outputs))
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _read_episodes(path: str):
    from .episodes import read_episodes

    p = Path(path)
    if not p.exists():
        raise _missing(f"episode file not found: {p}")
    eps = read_episodes(p)
    if not eps:
        raise _usage(f"{p} holds no episodes")
    return eps


def parse_seeds(text: str) -> tuple[int, list]:
    """``"AxB"`` gives A bank seeds by B eval seeds; ``"0,1,2"`` or ``"N"`` give eval seeds only."""
    try:
        if "x" in text:
            a, b = (int(v) for v in text.split("x"))
            if a < 1 or b < 1:
                raise ValueError
            return a, list(range(b))
        if "," in text:
            return 1, [int(v) for v in text.split(",")]
        n = int(text)
        if n < 1:
            raise ValueError
        return 1, list(range(n))
    except ValueError:
        raise _usage(f"bad --seeds {text!r}; use AxB, a comma list, or a count") from None


# -- commands ---------------------------------------------------------------------------


def cmd_gen(args, argv) -> None:
    from .episodes import LayoutInfeasibleError, RejectionBudgetError, generate_episodes, generate_layouts
    from .episodes import write_episodes

    started = _now()
    if args.count < 0:
        raise _usage("--count must be non-negative")
    out = _out_dir(args.out)
    layouts = None if args.task == "navroom" else generate_layouts(args.seed)
    try:
        eps = generate_episodes(args.task, layouts, args.split, args.count, seed=args.seed)
    except (LayoutInfeasibleError, RejectionBudgetError) as e:
        raise CLIError(f"episode generation failed: {e}", EXIT_ABORT) from e
    name = "episodes.jsonl"
    write_episodes(out / name, eps)
    log.info("wrote %d %s/%s episodes to %s", len(eps), args.task, args.split, out / name)
    config = {"task": args.task, "split": args.split, "count": args.count}
    write_manifest(out, "gen", argv, config, [args.seed], [name], started)


def _nav_reward(reward: str):
    from .rewards import POINT_NAV, REGION_NAV

    return {
        "region": ("region", REGION_NAV),
        "point": ("point", POINT_NAV),
        "point_collision": ("point", replace(POINT_NAV, collision_penalty=True)),
    }[reward]


def cmd_train(args, argv) -> None:
    from .rl import NonFiniteLossError, PPOConfig, train_skill

    started = _now()
    eps = _read_episodes(args.episodes)
    eval_eps = _read_episodes(args.eval_episodes) if args.eval_episodes else eps[: args.eval_count]
    if args.steps < 0:
        raise _usage("--steps must be non-negative")
    mode, nav_cfg = _nav_reward(args.reward)
    n_envs = args.n_envs or (16 if args.skill == "navigate" else 64)
    cfg = PPOConfig(n_envs=n_envs, total_steps=args.steps)
    out = _out_dir(args.out)
    ckpt, curve = f"{args.skill}.ckpt", f"{args.skill}_curve.csv"
    config = {
        "skill": args.skill, "variant": args.variant, "reward": args.reward, "ppo": cfg.to_dict(),
        "init_variant": args.init_variant, "radius": args.radius, "episodes": Path(args.episodes).name,
        "eval_episodes": Path(args.eval_episodes).name if args.eval_episodes else None,
        "eval_count": len(eval_eps), "eval_every": args.eval_every,
    }
    try:
        train_skill(
            args.skill, eps, eval_eps, cfg, seed=args.seed, mode=mode, variant=args.variant,
            init_variant=args.init_variant, eval_every=args.eval_every, radius=args.radius,
            nav_cfg=nav_cfg if args.skill == "navigate" else None,
            checkpoint=out / ckpt, curve_path=out / curve, meta={"reward": args.reward},
        )
    except NonFiniteLossError as e:
        raise CLIError(f"training aborted: {e}", EXIT_ABORT) from e
    write_manifest(out, "train", argv, config, [args.seed], [ckpt, curve], started)


def _banks(args, kinds, n_banks: int) -> list:
    """(label, bank) pairs; ``--bank`` may hold checkpoints or one subdirectory per training seed."""
    from .chaineval import OracleBank, PolicyBank

    if args.oracle:
        return [("oracle", OracleBank())]
    if not args.bank:
        raise _usage("give --bank DIR or --oracle")
    root = Path(args.bank)
    if not root.is_dir():
        raise _missing(f"skill bank directory not found: {root}")
    dirs = [root] if any(root.glob("*.ckpt")) else sorted(p for p in root.iterdir() if p.is_dir())
    if not dirs:
        raise _missing(f"skill bank {root} is empty; missing: {', '.join(kinds)}")
    if len(dirs) < n_banks:
        raise _missing(f"{root} has {len(dirs)} bank(s), --seeds asks for {n_banks}")
    out = []
    for d in dirs[:n_banks]:
        bank = PolicyBank(d)
        lacking = bank.missing(kinds)
        if lacking:
            raise _missing(f"skill bank {d} is missing: {', '.join(lacking)}")
        out.append((d.name, bank))
    return out


def _chain_runs(args, episodes, cfg) -> list:
    from .chaineval import execute_chain, required_kinds

    n_banks, seeds = parse_seeds(args.seeds)
    task = episodes[0].task
    banks = _banks(args, required_kinds(task), n_banks)
    if args.oracle and n_banks > 1:
        seeds = list(range(n_banks * len(seeds)))
    runs = []
    for label, bank in banks:
        for seed in seeds:
            for ep in episodes:
                runs.append((label, execute_chain(ep, bank, seed, cfg)))
    return runs


def _check_task(episodes, task: str) -> None:
    found = sorted({e.task for e in episodes})
    if found != [task]:
        raise _usage(f"--task {task} but the episode file holds {', '.join(found)}")


def _write_transcripts(path: Path, runs, with_steps: bool) -> None:
    with open(path, "w") as f:
        for label, tr in runs:
            f.write(json.dumps({"bank": label, **tr.to_dict(with_steps)}, sort_keys=True) + "\n")


def cmd_eval(args, argv) -> None:
    from .chaineval import ChainConfig, progressive_rates, write_report

    started = _now()
    eps = _read_episodes(args.episodes)
    _check_task(eps, args.task)
    cfg = ChainConfig(variant=args.variant, nav_mode=args.nav_mode, radius=args.radius,
                      handoff_sigma=args.sigma, record_steps=args.record_steps)
    runs = _chain_runs(args, eps, cfg)
    out = _out_dir(args.out)
    report = progressive_rates([t for _, t in runs])
    write_report(out, report, "report")
    _write_transcripts(out / "transcripts.jsonl", runs, args.record_steps)
    log.info("%s: task success %.3f over %d runs", args.task, report.success_rate, report.n)
    config = {"task": args.task, "chain": cfg.to_dict(), "oracle": args.oracle,
              "bank": Path(args.bank).name if args.bank else None, "episodes": Path(args.episodes).name}
    seeds = sorted({t.seed for _, t in runs})
    write_manifest(out, "eval", argv, config, seeds, ["report.csv", "report.json", "transcripts.jsonl"], started)


def cmd_ablate(args, argv) -> None:
    from .chaineval import ChainConfig, get_ablation, handoff_csv, handoff_noise, progressive_rates, write_report

    started = _now()
    eps = _read_episodes(args.episodes)
    out = _out_dir(args.out)
    if args.name == "handoff_noise":
        try:
            sigmas = [float(s) for s in args.sigmas.split(",")]
        except ValueError:
            raise _usage(f"bad --sigmas {args.sigmas!r}") from None
        if any(s < 0 for s in sigmas):
            raise _usage("--sigmas must be non-negative")
        _, seeds = parse_seeds(args.seeds)
        if not args.oracle:
            raise _usage("handoff_noise runs scripted skills; pass --oracle")
        rows = handoff_noise(eps, sigmas, seed=seeds[0])
        (out / "handoff_noise.csv").write_text(handoff_csv(rows))
        config = {"name": args.name, "sigmas": sigmas, "episodes": Path(args.episodes).name}
        write_manifest(out, "ablate", argv, config, seeds[:1], ["handoff_noise.csv"], started)
        return
    try:
        ab = get_ablation(args.name)
    except ValueError as e:
        raise _usage(str(e)) from None
    tasks = sorted({e.task for e in eps})
    if len(tasks) != 1:
        raise _usage(f"ablations run one task at a time; the episode file holds {', '.join(tasks)}")
    cfg: ChainConfig = ab.chain_config()
    runs = _chain_runs(args, eps, cfg)
    report = progressive_rates([t for _, t in runs])
    write_report(out, report, "report")
    data = json.loads((out / "report.json").read_text())
    data["label"] = ab.name
    (out / "report.json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    config = {"name": ab.name, "ablation": asdict(ab), "chain": cfg.to_dict(), "oracle": args.oracle,
              "episodes": Path(args.episodes).name}
    write_manifest(out, "ablate", argv, config, sorted({t.seed for _, t in runs}), ["report.csv", "report.json"],
                   started)


def merge_reports(reports: Sequence[dict], labels: Sequence[str]) -> str:
    """Stage x variant table; with exactly two inputs a ``delta`` column (second minus first)."""
    first = reports[0]
    for r, lab in zip(reports, labels):
        if r.get("task") != first.get("task") or r.get("stages") != first.get("stages"):
            raise _usage(f"report {lab!r} does not match the schema of {labels[0]!r} (task or stage list differs)")
    head = ["stage"] + [f"{lab}_{k}" for lab in labels for k in ("mean", "stderr")]
    if len(reports) == 2:
        head.append("delta")
    rows = [",".join(head)]
    for i, stage in enumerate(first["stages"]):
        cells = [stage]
        for r in reports:
            cells += [f"{r['mean'][i]:.6f}", f"{r['stderr'][i]:.6f}"]
        if len(reports) == 2:
            cells.append(f"{reports[1]['mean'][i] - reports[0]['mean'][i]:.6f}")
        rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def _plot(path: Path, reports, labels) -> bool:
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping the plot")
        return False
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for r, lab in zip(reports, labels):
        ax.errorbar(range(len(r["stages"])), r["mean"], yerr=r["stderr"], label=lab, marker="o", capsize=2)
    ax.set_xticks(range(len(reports[0]["stages"])), reports[0]["stages"], rotation=45)
    ax.set_ylim(0, 1.02)
    ax.set_ylabel("completion rate")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return True


def cmd_report(args, argv) -> None:
    started = _now()
    if not args.inputs:
        raise _usage("report needs at least one --inputs file")
    reports, labels = [], []
    for p in map(Path, args.inputs):
        if not p.exists():
            raise _missing(f"report not found: {p}")
        try:
            r = json.loads(p.read_text())
        except json.JSONDecodeError:
            raise _usage(f"{p} is not a JSON report") from None
        if not {"task", "stages", "mean", "stderr"} <= set(r):
            raise _usage(f"{p} is not a completion report")
        reports.append(r)
        labels.append(r.get("label") or p.parent.name or p.stem)
    out = _out_dir(args.out)
    (out / "table.csv").write_text(merge_reports(reports, labels))
    outputs = ["table.csv"]
    if args.plot and _plot(out / "table.png", reports, labels):
        outputs.append("table.png")
    write_manifest(out, "report", argv, {"inputs": [Path(p).name for p in args.inputs], "labels": labels}, [],
                   outputs, started)


def default_config() -> dict:
    from .chaineval import ChainConfig
    from .rewards import default_config_dict
    from .rl import PPOConfig
    from .sampler import InitNoise
    from .world import DEFAULT_WORLD

    return {
        "world": asdict(DEFAULT_WORLD),
        "rewards": default_config_dict(),
        "ppo": PPOConfig().to_dict(),
        "init_noise": asdict(InitNoise()),
        "chain": ChainConfig().to_dict(),
    }


def cmd_config(args, argv) -> None:
    if not args.print_defaults:
        raise _usage("config needs --print-defaults")
    print(json.dumps(default_config(), indent=2, sort_keys=True))


# -- parser ---------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    from .episodes import SPLITS, TASKS
    from .skills import SKILLS, VARIANTS

    p = argparse.ArgumentParser(prog="mobilemanip", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an episode file")
    g.add_argument("--task", required=True, choices=TASKS)
    g.add_argument("--split", required=True, choices=SPLITS)
    g.add_argument("--count", required=True, type=int)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train", help="train one skill with PPO (single-threaded)")
    t.add_argument("--skill", required=True, choices=SKILLS)
    t.add_argument("--variant", default="mobile", choices=VARIANTS)
    t.add_argument("--init-variant", choices=VARIANTS, help="initial-state distribution, if not --variant")
    t.add_argument("--reward", default="region", choices=["region", "point", "point_collision"],
                   help="navigation goal type (ignored by manipulation skills)")
    t.add_argument("--episodes", required=True)
    t.add_argument("--eval-episodes", help="held-out episode file; defaults to the first --eval-count training episodes")
    t.add_argument("--eval-count", type=int, default=50)
    t.add_argument("--eval-every", type=int, default=8, help="updates between held-out evaluations")
    t.add_argument("--steps", type=int, default=1_000_000)
    t.add_argument("--n-envs", type=int, help="parallel environments (default 16 for navigate, 64 otherwise)")
    t.add_argument("--radius", type=float, default=2.0)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)

    for name, help_ in (("eval", "progressive completion of chained skills"), ("ablate", "run a named ablation")):
        e = sub.add_parser(name, help=help_)
        if name == "eval":
            e.add_argument("--task", required=True, choices=TASKS[:3])
            e.add_argument("--variant", default="mobile", choices=VARIANTS)
            e.add_argument("--nav-mode", default="region", choices=["region", "point"])
            e.add_argument("--radius", type=float, default=2.0)
            e.add_argument("--sigma", type=float, default=0.0, help="hand-off noise after each navigation (m)")
            e.add_argument("--record-steps", action="store_true")
        else:
            e.add_argument("--name", required=True)
            e.add_argument("--sigmas", default="0,0.1,0.2,0.3")
        src = e.add_mutually_exclusive_group()
        src.add_argument("--bank", help="directory of <skill>.ckpt files, or of one such directory per seed")
        src.add_argument("--oracle", action="store_true", help="use scripted skills")
        e.add_argument("--episodes", required=True)
        e.add_argument("--seeds", default="1")
        e.add_argument("--out", required=True)

    r = sub.add_parser("report", help="merge completion reports into one table")
    r.add_argument("--inputs", nargs="*", default=[])
    r.add_argument("--plot", action="store_true", help="also write table.png (needs matplotlib)")
    r.add_argument("--out", required=True)

    c = sub.add_parser("config", help="show configuration")
    c.add_argument("--print-defaults", action="store_true")
    return p


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate, "report": cmd_report,
            "config": cmd_config}


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    level = os.environ.get("MOBILEMANIP_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        COMMANDS[args.command](args, argv)
    except CLIError as e:
        print(f"mobilemanip {args.command}: {e}", file=sys.stderr)
        return e.code
    except Exception as e:  # anything else is a runtime abort
        log.debug("abort", exc_info=True)
        print(f"mobilemanip {args.command}: aborted: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ABORT
    return 0


if __name__ == "__main__":
    sys.exit(main())
