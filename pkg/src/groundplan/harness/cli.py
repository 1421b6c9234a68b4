"""Command-line entry point: ``groundplan <command> ...``.

Exit codes: 2 for configuration errors, 1 when a check command fails, 0 otherwise.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..executor import mpc_run
from ..videoplan import save_plan
from ..envs import dump_frames, state_from_obs
from .campaign import ablation_suite, build_world_model, episode_for, run_campaign
from .config import ConfigError, HarnessConfig, load_config
from .oracles import gradient_suite, lq_oracle
from .report import emit_report, episodes_jsonl, report_csv

log = logging.getLogger("groundplan")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="groundplan", description="Video-guided latent collocation experiments.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the master seed")
    common.add_argument("--out", type=Path, default=None, help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in [("campaign", "run every (horizon, source, method) cell"),
                           ("ablate", "run GVP-WM and its ablation variants")]:
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("config", type=Path)
    sp = sub.add_parser("plan", parents=[common], help="run and log a single GVP-WM episode")
    sp.add_argument("config", type=Path)
    sp.add_argument("--episode", type=int, required=True)
    sp.add_argument("--dump-frames", action="store_true")
    sub.add_parser("gradcheck", parents=[common], help="Jacobian and ALM gradient checks")
    sub.add_parser("oracle-lq", parents=[common], help="ALM against KKT on linear-quadratic instances")
    return p


def _load(args) -> HarnessConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, campaign=replace(cfg.campaign, seed=args.seed))
    return cfg


def _write_outputs(report, cfg: HarnessConfig, out: Path | None, stem: str) -> None:
    timing = cfg.report.timing
    if out is None:
        sys.stdout.write(report_csv(report, timing))
        return
    out.mkdir(parents=True, exist_ok=True)
    emit_report(report, "csv", out / f"{stem}.csv", timing)
    emit_report(report, "markdown", out / f"{stem}.md", timing)
    (out / f"{stem}_episodes.jsonl").write_text(episodes_jsonl(report, timing), encoding="utf-8")
    print(f"wrote {out / f'{stem}.csv'}")


def _cmd_plan(args, cfg: HarnessConfig) -> int:
    spec, E, f = build_world_model(cfg)
    T = cfg.campaign.horizons[0]
    source = cfg.campaign.sources[0]
    ep = episode_for(cfg, spec, T, source, args.episode)
    res = mpc_run(spec, ep.s0, ep.goal, ep.plan, E, f, cfg.solver_config(T), cfg.mpc_config(), ep.rng)
    sys.stdout.write(res.log_lines())
    print(f"episode {args.episode} ({source}, T={T}): success={res.success} "
          f"final_dist={res.final_dist:.4f} final_residual={res.final_residual:.2e}")
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        save_plan(ep.plan, args.out / f"plan_{args.episode:04d}.csv")
        (args.out / f"episode_{args.episode:04d}.jsonl").write_text(res.log_lines(), encoding="utf-8")
    if args.dump_frames:
        states = [state_from_obs(spec, o) for o in res.states]
        paths = dump_frames(spec, states, ep.goal, args.out or Path("."), args.episode)
        print(f"wrote {len(paths)} frames to {paths[0].parent}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    try:
        if args.command == "gradcheck":
            reports = gradient_suite(seed=args.seed or 0)
        elif args.command == "oracle-lq":
            reports = [lq_oracle(seed=args.seed or 0)]
        else:
            cfg = _load(args)
            if args.command == "plan":
                return _cmd_plan(args, cfg)
            if args.jobs < 1:
                print("error: --jobs must be >= 1", file=sys.stderr)
                return 2
            run = run_campaign if args.command == "campaign" else ablation_suite
            report = run(cfg, jobs=args.jobs)
            _write_outputs(report, cfg, args.out, args.command)
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    for r in reports:
        print(r.line())
    return 0 if all(r.passed for r in reports) else 1


if __name__ == "__main__":
    sys.exit(main())
