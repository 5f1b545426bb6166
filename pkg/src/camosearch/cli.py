"""Command-line front end.

Subcommands:

* ``search``          - run the full discrete search and export artifacts.
* ``baseline-random`` - score randomly generated camouflages (the
  "random" baseline) and report aggregate statistics.
* ``render``          - build one texture from a pattern PNG (ER or bilinear).
* ``eval``            - score one pattern/texture through an oracle and
  print the evaluation report.

Configuration comes from an optional JSON file plus flag overrides; every
search hyperparameter defaults to the standard setting. See the README
for the schema.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .metrics import compute_report, render_report, testing_grid, training_grid
from .oracles import (
    ConstantOracle,
    DetectionOracle,
    FrequencyPreferenceOracle,
    OracleQuery,
    PlantedWeaknessOracle,
)
from .search import (
    OracleFailure,
    SearchConfig,
    pattern_digest,
    random_pattern,
    run_search,
)
from .textures import (
    ConfigMismatchError,
    ErConfig,
    bilinear_resize,
    er_construct,
    load_pattern,
    load_texture,
    save_png,
)

REMOTE_ADDR_ENV = "CAMOSEARCH_REMOTE_ADDR"


class CliError(Exception):
    """Configuration or usage error; reported on stderr with exit code 2."""


@dataclass
class RunConfig:
    search: SearchConfig
    er: ErConfig
    oracle_spec: str
    transform_set: str
    out_dir: Path
    resume_from: Path | None = None


SEARCH_FIELD_FLAGS = (
    "init_count",
    "pool_size",
    "start_count",
    "mutants_per_step",
    "inner_steps",
    "outer_loops",
    "global_mutants",
    "inner_radius",
    "global_radius",
    "seed",
    "parallelism",
)


def parse_er(value) -> ErConfig:
    if isinstance(value, ErConfig):
        return value
    if isinstance(value, str):
        return ErConfig.from_label(value)
    if isinstance(value, dict):
        return ErConfig(**value)
    raise CliError(f"cannot parse ER configuration from {value!r}")


def build_oracle(spec: str, er: ErConfig) -> DetectionOracle:
    """Parse an oracle spec string.

    Forms: constant:SCORE | planted:SEED | frequency:SEED:PREFERRED_E |
    remote[:HOST:PORT] (address falls back to $CAMOSEARCH_REMOTE_ADDR).
    """
    kind, _, rest = spec.partition(":")
    try:
        if kind == "constant":
            return ConstantOracle(float(rest))
        if kind == "planted":
            return PlantedWeaknessOracle(int(rest), er.pattern_exponent)
        if kind == "frequency":
            seed, _, preferred = rest.partition(":")
            return FrequencyPreferenceOracle(int(seed), int(preferred))
        if kind == "remote":
            address = rest or os.environ.get(REMOTE_ADDR_ENV, "")
            if not address:
                raise CliError(
                    f"remote oracle needs an address: use remote:HOST:PORT "
                    f"or set ${REMOTE_ADDR_ENV}"
                )
            from .remote import RemoteOracle

            return RemoteOracle(address)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad oracle spec {spec!r}: {exc}") from exc
    raise CliError(f"unknown oracle kind {kind!r} (constant/planted/frequency/remote)")


def load_run_config(args) -> RunConfig:
    file_cfg = {}
    if args.config:
        try:
            file_cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise CliError(f"cannot read config {args.config}: {exc}") from exc

    search_fields = dict(file_cfg.get("search", {}))
    for name in SEARCH_FIELD_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            search_fields[name] = value
    try:
        search = SearchConfig(**search_fields)
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid search configuration: {exc}") from exc

    er_value = args.er or file_cfg.get("er", "E5-R2")
    try:
        er = parse_er(er_value)
    except ValueError as exc:
        raise CliError(str(exc)) from exc

    transform_set = args.transforms or file_cfg.get("transforms", "testing")
    if transform_set not in ("training", "testing"):
        raise CliError(f"transforms must be training or testing, got {transform_set!r}")

    out_dir = Path(args.out_dir or file_cfg.get("out_dir", "camosearch_out"))
    resume = Path(args.resume) if getattr(args, "resume", None) else None
    oracle_spec = args.oracle or file_cfg.get("oracle", "planted:0")
    return RunConfig(search=search, er=er, oracle_spec=oracle_spec,
                     transform_set=transform_set, out_dir=out_dir, resume_from=resume)


def _grid_for(name: str):
    return training_grid() if name == "training" else testing_grid()


def _config_echo(cfg: RunConfig) -> list[str]:
    lines = [f"er: {cfg.er.label} (pattern side 2^{cfg.er.pattern_exponent})",
             f"oracle: {cfg.oracle_spec}",
             f"transform set (reporting): {cfg.transform_set}"]
    for name, value in ckpt.config_to_dict(cfg.search).items():
        lines.append(f"search.{name}: {value}")
    return lines


def cmd_search(cfg: RunConfig) -> int:
    replay = None
    if cfg.resume_from is not None:
        try:
            saved = ckpt.read_checkpoint(cfg.resume_from)
        except (OSError, ValueError, KeyError) as exc:
            raise CliError(f"cannot resume from {cfg.resume_from}: {exc}") from exc
        # the checkpointed configuration is authoritative: replay only works
        # against the exact run that was interrupted
        cfg = replace(cfg, search=saved.config, er=saved.er)
        replay = saved.replay_records

    oracle = build_oracle(cfg.oracle_spec, cfg.er)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    checkpoint_path = out / "checkpoint.json"

    try:
        pool, trace = run_search(cfg.search, cfg.er, oracle,
                                 checkpoint_path=checkpoint_path, replay=replay)
    except OracleFailure as failure:
        print(f"error: {failure}", file=sys.stderr)
        if failure.checkpoint_path:
            print(f"checkpoint written to {failure.checkpoint_path}; "
                  f"resume with --resume", file=sys.stderr)
        oracle.close()
        return 1

    pool_dir = out / "pool"
    pool_dir.mkdir(exist_ok=True)
    for rank, cand in enumerate(pool.members):
        stem = f"{rank:02d}_{cand.content_hash[:12]}"
        save_png(cand.pattern, pool_dir / f"{stem}_pattern.png")
        save_png(er_construct(cand.pattern, cfg.er), pool_dir / f"{stem}_texture.png")

    with (out / "trace.jsonl").open("w") as fh:
        for event in ckpt.iter_trace_events(trace):
            fh.write(json.dumps(event, separators=(",", ":")) + "\n")

    best = pool.best
    final_query = OracleQuery(transforms=tuple(testing_grid()),
                              pattern=best.pattern, er=cfg.er)
    try:
        final_scores = oracle.evaluate(final_query).scores
    except Exception as exc:  # noqa: BLE001
        print(f"error: final evaluation failed: {exc}", file=sys.stderr)
        oracle.close()
        return 1
    oracle.close()
    report = compute_report(final_scores)
    (out / "report.txt").write_text(
        render_report(report, cfg.er.label, title="Final testing-grid report (best candidate)")
    )

    planned = cfg.search.planned_queries()
    summary = [
        "camosearch run summary",
        "======================",
        *_config_echo(cfg),
        f"query budget: planned {planned}, consumed {trace.query_count}, "
        f"cache hits {trace.cache_hits}",
        f"best candidate: {best.content_hash}",
        f"best search score (training grid): {best.score:.6f}",
        f"best testing-grid S_avg: {report.s_avg:.6f}",
        f"best testing-grid P_0.5: {report.p_05:.6f}",
        f"pool size: {len(pool)}",
        "",
    ]
    (out / "summary.txt").write_text("\n".join(summary))
    print(f"search finished: best score {best.score:.6f} "
          f"({trace.query_count} queries, {trace.cache_hits} cache hits)")
    print(f"artifacts in {out}")
    return 0


def cmd_baseline_random(cfg: RunConfig, count: int) -> int:
    if count < 1:
        raise CliError("baseline count must be >= 1")
    oracle = build_oracle(cfg.oracle_spec, cfg.er)
    grid = tuple(_grid_for(cfg.transform_set))
    rng = np.random.default_rng(cfg.search.seed)
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)

    rows = []
    try:
        for index in range(count):
            pattern = random_pattern(rng, cfg.er.pattern_exponent)
            query = OracleQuery(transforms=grid, pattern=pattern, er=cfg.er)
            report = compute_report(oracle.evaluate(query).scores)
            rows.append((index, pattern_digest(pattern), report.s_avg, report.p_05))
    except Exception as exc:  # noqa: BLE001
        print(f"error: baseline evaluation failed: {exc}", file=sys.stderr)
        return 1
    finally:
        oracle.close()

    with (out / "baseline.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "content_hash", "s_avg", "p_05"])
        writer.writerows(rows)

    mean_s = float(np.mean([r[2] for r in rows]))
    mean_p = float(np.mean([r[3] for r in rows]))
    summary = [
        "random-baseline summary",
        "=======================",
        *_config_echo(cfg),
        f"candidates: {count}",
        f"mean S_avg: {mean_s:.6f}",
        f"mean P_0.5: {mean_p:.6f}",
        "",
    ]
    (out / "baseline_summary.txt").write_text("\n".join(summary))
    print(f"baseline over {count} candidates: mean S_avg {mean_s:.6f}, "
          f"mean P_0.5 {mean_p:.6f}")
    return 0


def cmd_render(pattern_path: str, er: ErConfig, mode: str, out_path: str) -> int:
    try:
        pattern = load_pattern(pattern_path)
    except (OSError, ValueError) as exc:
        raise CliError(f"cannot load pattern {pattern_path}: {exc}") from exc
    try:
        if mode == "er":
            texture = er_construct(pattern, er)
        elif mode == "bilinear":
            texture = bilinear_resize(pattern)
        else:
            raise CliError(f"unknown render mode {mode!r}")
    except ConfigMismatchError as exc:
        raise CliError(str(exc)) from exc
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    save_png(texture, out_path)
    print(f"wrote {out_path}")
    return 0


def cmd_eval(cfg: RunConfig, pattern_path: str | None, texture_path: str | None) -> int:
    if (pattern_path is None) == (texture_path is None):
        raise CliError("eval needs exactly one of --pattern or --texture")
    oracle = build_oracle(cfg.oracle_spec, cfg.er)
    grid = tuple(_grid_for(cfg.transform_set))
    try:
        if pattern_path is not None:
            pattern = load_pattern(pattern_path)
            if pattern.side_exponent != cfg.er.pattern_exponent:
                raise CliError(
                    f"pattern side 2^{pattern.side_exponent} does not match "
                    f"--er {cfg.er.label} (expects 2^{cfg.er.pattern_exponent})"
                )
            query = OracleQuery(transforms=grid, pattern=pattern, er=cfg.er)
        else:
            query = OracleQuery(transforms=grid, texture=load_texture(texture_path))
        scores = oracle.evaluate(query).scores
    except (CliError, OSError) as exc:
        raise CliError(str(exc)) from exc
    except Exception as exc:  # noqa: BLE001
        print(f"error: evaluation failed: {exc}", file=sys.stderr)
        return 1
    finally:
        oracle.close()
    print(render_report(compute_report(scores), cfg.er.label))
    return 0


def _add_common_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON config file")
    parser.add_argument("--oracle", help="oracle spec (constant:C | planted:SEED | "
                                         "frequency:SEED:E | remote:HOST:PORT)")
    parser.add_argument("--transforms", choices=("training", "testing"),
                        help="transform grid for reporting/eval")
    parser.add_argument("--out-dir", help="artifact directory")
    parser.add_argument("--er", help="ER label such as E5-R2")
    parser.add_argument("--parallelism", type=int, help="max concurrent oracle queries")
    parser.add_argument("--seed", type=int, help="RNG seed")
    for name in ("init-count", "pool-size", "start-count", "mutants-per-step",
                 "inner-steps", "outer-loops", "global-mutants"):
        parser.add_argument(f"--{name}", type=int, dest=name.replace("-", "_"))
    parser.add_argument("--inner-radius", type=float, dest="inner_radius")
    parser.add_argument("--global-radius", type=float, dest="global_radius")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="camosearch",
        description="Mosaic camouflage construction and black-box adversarial search",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_search = sub.add_parser("search", help="run the discrete search")
    _add_common_flags(p_search)
    p_search.add_argument("--resume", help="checkpoint file to resume from")

    p_base = sub.add_parser("baseline-random", help="evaluate random camouflages")
    _add_common_flags(p_base)
    p_base.add_argument("--count", type=int, default=100, help="number of candidates")

    p_render = sub.add_parser("render", help="build one texture from a pattern PNG")
    p_render.add_argument("pattern", help="pattern PNG path")
    p_render.add_argument("--er", default="E5-R2", help="ER label such as E5-R2")
    p_render.add_argument("--mode", choices=("er", "bilinear"), default="er")
    p_render.add_argument("--out", required=True, help="output texture PNG path")

    p_eval = sub.add_parser("eval", help="score one pattern/texture through an oracle")
    _add_common_flags(p_eval)
    p_eval.add_argument("--pattern", help="pattern PNG to evaluate (with --er)")
    p_eval.add_argument("--texture", help="texture PNG to evaluate directly")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "render":
            return cmd_render(args.pattern, parse_er(args.er), args.mode, args.out)
        cfg = load_run_config(args)
        if args.command == "search":
            return cmd_search(cfg)
        if args.command == "baseline-random":
            return cmd_baseline_random(cfg, args.count)
        if args.command == "eval":
            return cmd_eval(cfg, args.pattern, args.texture)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    raise AssertionError(f"unhandled command {args.command!r}")


if __name__ == "__main__":
    sys.exit(main())
