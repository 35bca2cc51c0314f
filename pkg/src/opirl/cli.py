"""Operator surface: subcommands, config files, run manifests, and plots.

Config precedence is defaults < file < command-line overrides. Every
artifact-producing command writes a manifest first and finalizes it on
exit, so a run can be reproduced from the manifest alone.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__, agent as agent_mod, expert as expert_mod
from .agent import OpirlConfig
from .errors import ContractError, SchemaError
from .expert import SacConfig, evaluate_policy, load_policy
from .irl import RewardHandle
from .oracle import format_report_table, verify_all, write_report_file
from .seeding import component_rng

_SECTIONS = {"agent": OpirlConfig, "expert": SacConfig}


def _convert(raw: str, kind: type):
    if kind is bool:
        lowered = raw.strip().lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw)


def load_config(path=None, overrides=(), section: str = "agent"):
    """Builds the section's config dataclass from defaults, then the file,
    then `key=value` overrides, validating names and types throughout."""
    if section not in _SECTIONS:
        raise ContractError(f"unknown config section {section!r}")
    cls = _SECTIONS[section]
    spec = {f.name: f for f in fields(cls)}
    values: dict = {}

    def apply(key: str, raw: str, where: str):
        if key not in spec:
            raise ContractError(
                f"{where}: unknown key {key!r} in [{section}]; "
                f"valid keys: {', '.join(sorted(spec))}"
            )
        base = cls()
        kind = type(getattr(base, key))
        try:
            values[key] = _convert(raw, kind)
        except (TypeError, ValueError) as exc:
            raise ContractError(
                f"{where}: key {key!r} expects {kind.__name__}, got {raw!r} ({exc})"
            ) from exc

    if path is not None:
        parser = configparser.ConfigParser()
        read = parser.read(path)
        if not read:
            raise ContractError(f"config file {path!r} not found")
        if parser.has_section(section):
            for key, raw in parser.items(section):
                apply(key, raw, f"{path}[{section}]")
    for item in overrides:
        if "=" not in item:
            raise ContractError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        key = key.strip()
        if "." in key:
            sec, key = key.split(".", 1)
            if sec != section:
                continue
        apply(key, raw, "override")
    return cls(**values)


# -- manifests ---------------------------------------------------------------------


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            digest.update(chunk)
    return digest.hexdigest()


class RunManifest:
    def __init__(self, out_dir: Path, command: str, argv: list[str], seed: int,
                 env_id: str, config) -> None:
        self.path = out_dir / "manifest.json"
        self.data = {
            "command": command,
            "argv": argv,
            "seed": seed,
            "env_id": env_id,
            "config": asdict(config) if config is not None else None,
            "version": __version__,
            "inputs": {},
            "outputs": [],
            "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "finished": None,
            "status": "running",
        }

    def add_input(self, path) -> None:
        self.data["inputs"][str(path)] = _sha256(path)

    def add_output(self, path) -> None:
        self.data["outputs"].append(str(path))

    def write(self) -> None:
        with open(self.path, "w") as fh:
            json.dump(self.data, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def finalize(self, status: str) -> None:
        self.data["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
        self.data["status"] = status
        self.write()


# -- plotting (self-contained SVG) ----------------------------------------------------

_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


def _read_series(csv_path, column: str) -> tuple[list[float], list[float]]:
    xs, ys = [], []
    with open(csv_path) as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise SchemaError(f"{csv_path}: no column {column!r}; "
                              f"has {reader.fieldnames}")
        for row in reader:
            y = float(row[column])
            if np.isnan(y):
                continue
            xs.append(float(row.get("step", len(xs))))
            ys.append(y)
    return xs, ys


def render_chart(series: list[tuple[str, list[float], list[float]]],
                 column: str, width=720, height=440) -> str:
    """Axes, ticks, legend, one polyline per series; same input gives
    byte-identical output."""
    ml, mr, mt, mb = 70, 20, 30, 50
    pw, ph = width - ml - mr, height - mt - mb
    all_x = [x for _, xs, _ in series for x in xs]
    all_y = [y for _, _, ys in series for y in ys]
    if not all_x:
        raise ContractError("nothing to plot: all series are empty")
    x0, x1 = min(all_x), max(all_x)
    y0, y1 = min(all_y), max(all_y)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y1 = y0 + 1.0
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def px(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def py(y):
        return mt + (1.0 - (y - y0) / (y1 - y0)) * ph

    def fmt(v):
        return format(v, ".6g")

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="monospace" font-size="12">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + ph}" stroke="black"/>',
        f'<line x1="{ml}" y1="{mt + ph}" x2="{ml + pw}" y2="{mt + ph}" stroke="black"/>',
    ]
    for i in range(5):
        xv = x0 + (x1 - x0) * i / 4
        yv = y0 + (y1 - y0) * i / 4
        parts.append(f'<line x1="{fmt(px(xv))}" y1="{mt + ph}" x2="{fmt(px(xv))}" '
                     f'y2="{mt + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{fmt(px(xv))}" y="{mt + ph + 20}" '
                     f'text-anchor="middle">{fmt(xv)}</text>')
        parts.append(f'<line x1="{ml - 5}" y1="{fmt(py(yv))}" x2="{ml}" '
                     f'y2="{fmt(py(yv))}" stroke="black"/>')
        parts.append(f'<text x="{ml - 8}" y="{fmt(py(yv) + 4)}" '
                     f'text-anchor="end">{fmt(yv)}</text>')
    parts.append(f'<text x="{ml + pw / 2}" y="{height - 12}" '
                 f'text-anchor="middle">step</text>')
    parts.append(f'<text x="{ml + pw / 2}" y="{mt - 10}" '
                 f'text-anchor="middle">{column}</text>')
    for k, (label, xs, ys) in enumerate(series):
        color = _PALETTE[k % len(_PALETTE)]
        points = " ".join(f"{fmt(px(x))},{fmt(py(y))}" for x, y in zip(xs, ys))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                     f'points="{points}"/>')
        ly = mt + 16 + 16 * k
        parts.append(f'<line x1="{ml + pw - 150}" y1="{ly - 4}" x2="{ml + pw - 120}" '
                     f'y2="{ly - 4}" stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{ml + pw - 114}" y="{ly}">{label}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


# -- subcommands -----------------------------------------------------------------------


def _cmd_train_expert(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = load_config(args.config, args.set or (), section="expert")
    if args.steps is not None:
        cfg.total_steps = args.steps
    manifest = RunManifest(out, "train-expert", sys.argv[1:], args.seed, args.env, cfg)
    manifest.write()
    try:
        policy, final = expert_mod.train_expert(args.env, cfg, args.seed,
                                                out_dir=str(out), log=print)
    except Exception:
        manifest.finalize("failed")
        raise
    manifest.add_output(out / "expert_policy.txt")
    manifest.add_output(out / "expert_metrics.csv")
    manifest.finalize("done")
    print(f"expert return {final.get('return_mean', float('nan')):.3f} "
          f"success {final.get('success_rate', float('nan')):.2f}")
    return 0


def _cmd_collect(args) -> int:
    policy, meta = load_policy(args.checkpoint)
    env_id = args.env or meta["env_id"]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    episodes = expert_mod.collect(policy, env_id, args.episodes, args.seed,
                                  out, deterministic=not args.stochastic)
    returns = [ep.episode_return for ep in episodes]
    print(f"wrote {len(episodes)} episodes to {out} "
          f"(mean return {np.mean(returns):.3f})")
    return 0


def _cmd_train_opirl(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg = load_config(args.config, args.set or (), section="agent")
    if args.steps is not None:
        cfg.total_steps = args.steps
    manifest = RunManifest(out, "train-opirl", sys.argv[1:], args.seed, args.env, cfg)
    manifest.add_input(args.demos)
    manifest.write()
    try:
        result = agent_mod.train(args.env, args.demos, cfg, args.seed,
                                 out_dir=str(out), log=print)
    except Exception:
        manifest.finalize("failed")
        raise
    for name in ("metrics.csv", "reward.txt", "policy.txt"):
        manifest.add_output(out / name)
    manifest.finalize("done")
    print(f"final return {result.final_return:.3f} success {result.final_success:.2f}")
    return 0


def _cmd_transfer(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    handle = RewardHandle.load(args.reward)
    cfg = load_config(args.config, args.set or (), section="expert")
    if args.steps is not None:
        cfg.total_steps = args.steps
    manifest = RunManifest(out, "transfer", sys.argv[1:], args.seed, args.env, cfg)
    manifest.add_input(args.reward)
    manifest.write()
    try:
        result = agent_mod.transfer(handle, args.env, cfg, args.seed,
                                    out_dir=str(out), log=print)
    except Exception:
        manifest.finalize("failed")
        raise
    manifest.add_output(out / "transfer_policy.txt")
    manifest.add_output(out / "transfer_metrics.csv")
    manifest.finalize("done")
    print(f"transfer return {result['final_return']:.3f} "
          f"success {result['final_success']:.2f}")
    return 0


def _cmd_eval(args) -> int:
    policy, meta = load_policy(args.checkpoint)
    env_id = args.env or meta["env_id"]
    from .envs import make_env

    env = make_env(env_id)
    transform = None
    if policy.obs_dim == env.obs_dim + 1:
        # policy trained on absorbing-wrapped observations
        def transform(o):
            return np.concatenate([o, [0.0]])
    elif policy.obs_dim != env.obs_dim:
        raise SchemaError(f"policy obs dim {policy.obs_dim} does not match "
                          f"env {env_id!r} ({env.obs_dim})")
    rng = component_rng(args.seed, "cli-eval")
    ev = evaluate_policy(policy, env, args.episodes, rng,
                         deterministic=not args.stochastic,
                         obs_transform=transform)
    print(json.dumps(ev, sort_keys=True))
    return 0


def _cmd_verify(args) -> int:
    reports = verify_all(seed=args.seed, trials=args.trials,
                         include_discriminator=not args.skip_discriminator)
    print(format_report_table(reports))
    if args.out:
        write_report_file(args.out, reports)
        print(f"report written to {args.out}")
    return 0 if all(r.passed for r in reports) else 1


def _cmd_plot(args) -> int:
    series = []
    for path in args.metrics:
        xs, ys = _read_series(path, args.column)
        series.append((Path(path).stem, xs, ys))
    svg = render_chart(series, args.column)
    with open(args.out, "w") as fh:
        fh.write(svg)
    print(f"chart written to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="opirl",
        description="Learn transferable rewards from demonstrations with "
                    "off-policy distribution matching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-expert", help="train a SAC expert on the true reward")
    p.add_argument("--env", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out-dir", default="runs/expert")
    p.set_defaults(fn=_cmd_train_expert)

    p = sub.add_parser("collect", help="roll out demonstration episodes to a file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--episodes", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stochastic", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_collect)

    p = sub.add_parser("train-opirl", help="learn reward and policy from demos")
    p.add_argument("--env", required=True)
    p.add_argument("--demos", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out-dir", default="runs/opirl")
    p.set_defaults(fn=_cmd_train_opirl)

    p = sub.add_parser("transfer", help="retrain a policy against a frozen reward")
    p.add_argument("--reward", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--out-dir", default="runs/transfer")
    p.set_defaults(fn=_cmd_transfer)

    p = sub.add_parser("eval", help="evaluate a policy checkpoint on ground truth")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--stochastic", action="store_true")
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("verify", help="run the exact identity checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--skip-discriminator", action="store_true")
    p.add_argument("--out", default=None, help="JSON report path")
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("plot", help="draw learning curves as a standalone SVG")
    p.add_argument("--metrics", nargs="+", required=True)
    p.add_argument("--column", default="episode-return-mean")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # runtime failure -> exit 1 with diagnostic
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
