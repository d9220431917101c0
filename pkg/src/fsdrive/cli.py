"""Command-line interface.

Exit codes: 0 success, 2 validation error (scenario/config/schema),
3 runtime error, 4 provider failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

EXIT_VALIDATION = 2
EXIT_RUNTIME = 3
EXIT_PROVIDER = 4


def _add_run(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("run", help="run one scenario episode under the fast-slow controller")
    p.add_argument("--scenario", required=True, help="scenario JSON path or builtin name")
    p.add_argument("--provider", default="mock", choices=["mock", "http"])
    p.add_argument("--endpoint", default=None, help="chat-completions URL for --provider http")
    p.add_argument("--model", default=None, help="model name for --provider http")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ablate", default="", help="comma list of features to disable: ts,rz,mem")
    p.add_argument("--latency", type=float, default=None, help="fixed slow latency (s)")
    p.add_argument("--predictor-checkpoint", default=None, help="forecaster .npz to use in the loop")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--plots", action="store_true", help="emit charts after the episode")


def _add_train(sub) -> None:
    p = sub.add_parser("train-predictor", help="train the trajectory forecaster")
    p.add_argument("--data", required=True, help="columnar dataset CSV")
    p.add_argument("--config", default=None, help="JSON training config")
    p.add_argument("--out", default="predictor.npz", help="checkpoint path")
    p.add_argument("--baseline", action="store_true", help="train the plain recurrent baseline")


def _add_eval(sub) -> None:
    p = sub.add_parser("eval-predictor", help="evaluate a forecaster checkpoint")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split-seed", type=int, default=0)


def _add_replay(sub) -> None:
    p = sub.add_parser("replay", help="recompute metrics and charts from an episode log")
    p.add_argument("--log", required=True)
    p.add_argument("--scenario", required=True)
    p.add_argument("--plots", action="store_true")
    p.add_argument("--out", default="out")


def _add_gen_data(sub) -> None:
    p = sub.add_parser("gen-data", help="generate the trajectory dataset from simulator rollouts")
    p.add_argument("--out", required=True, help="dataset CSV to write")
    p.add_argument("--episodes-per-scenario", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)


def _add_memory(sub) -> None:
    p = sub.add_parser("memory-export", help="copy an exemplar store (validates and re-serializes)")
    p.add_argument("--store", required=True, help="source store (JSONL); 'builtin' for the seed store")
    p.add_argument("--out", required=True)
    p = sub.add_parser("memory-import", help="merge exemplars from one store into another")
    p.add_argument("--src", required=True)
    p.add_argument("--store", required=True, help="destination store (JSONL), created if missing")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="fsdrive", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run(sub)
    _add_train(sub)
    _add_eval(sub)
    _add_replay(sub)
    _add_gen_data(sub)
    _add_memory(sub)
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except SystemExit:
        raise
    except Exception as exc:  # categorized below
        from fsdrive.attention.providers import ProviderError
        from fsdrive.world.scenario import ScenarioError

        if isinstance(exc, (ScenarioError, ValueError)):
            print(f"validation error: {exc}", file=sys.stderr)
            return EXIT_VALIDATION
        if isinstance(exc, ProviderError):
            print(f"provider error: {exc}", file=sys.stderr)
            return EXIT_PROVIDER
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _load_spec(token: str):
    from fsdrive.world.scenario import builtin_scenario_path, load_scenario_file

    path = Path(token)
    if not path.exists():
        path = builtin_scenario_path(token)
    return load_scenario_file(path)


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "run":
        return _cmd_run(args)
    if args.command == "train-predictor":
        return _cmd_train(args)
    if args.command == "eval-predictor":
        return _cmd_eval(args)
    if args.command == "replay":
        return _cmd_replay(args)
    if args.command == "gen-data":
        return _cmd_gen_data(args)
    if args.command == "memory-export":
        return _cmd_memory_export(args)
    if args.command == "memory-import":
        return _cmd_memory_import(args)
    raise ValueError(f"unknown command {args.command}")


def _cmd_run(args: argparse.Namespace) -> int:
    from fsdrive.attention.providers import HttpChatProvider, HttpProviderConfig
    from fsdrive.runtime.loop import AblationToggles, RunConfig, run_episode
    from fsdrive.runtime.plots import emit_plots

    spec = _load_spec(args.scenario)
    provider = None
    if args.provider == "http":
        if not args.endpoint or not args.model:
            raise ValueError("--provider http requires --endpoint and --model")
        provider = HttpChatProvider(HttpProviderConfig(endpoint=args.endpoint, model=args.model))
    config = RunConfig(
        seed=args.seed,
        ablation=AblationToggles.from_spec(args.ablate),
        fixed_latency_s=args.latency,
        predictor_checkpoint=args.predictor_checkpoint,
        out_dir=args.out,
    )
    metrics, log = run_episode(spec, config, provider=provider)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    metrics_path = out / f"{spec.name}_seed{args.seed}_metrics.json"
    metrics_path.write_text(json.dumps(asdict(metrics), indent=2))
    print(json.dumps(asdict(metrics), indent=2))
    if args.plots:
        for path in emit_plots(log, out):
            print(f"wrote {path}")
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    from fsdrive.predictor import (
        ForecastModel,
        ModelConfig,
        PlainRecurrentBaseline,
        TrainConfig,
        build_windows,
        read_dataset,
        save_model,
        split_windows,
        train,
    )

    cfg = TrainConfig()
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        model_doc = doc.pop("model", None)
        cfg = TrainConfig(**doc)
        if model_doc:
            model_doc["kernels"] = tuple(model_doc.get("kernels", (3, 7, 11)))
            cfg.model = ModelConfig(**model_doc)
    model_cfg = cfg.model or ModelConfig()
    tracks = read_dataset(args.data)
    windows = build_windows(tracks, t_in=model_cfg.t_in, n_out=model_cfg.n_out)
    train_set, val_set, _ = split_windows(windows, seed=cfg.seed)
    model_cls = PlainRecurrentBaseline if args.baseline else ForecastModel
    model, history = train(train_set, val_set, cfg, model_cls=model_cls)
    save_model(model, args.out)
    print(f"trained on {len(train_set)} windows; best val MSE {min(history):.4f}; wrote {args.out}")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    from fsdrive.predictor import build_windows, evaluate, load_model, read_dataset, split_windows

    model = load_model(args.model)
    tracks = read_dataset(args.data)
    windows = build_windows(tracks, t_in=model.cfg.t_in, n_out=model.cfg.n_out)
    _, _, test_set = split_windows(windows, seed=args.split_seed)
    metrics = evaluate(model, test_set)
    print(json.dumps(asdict(metrics), indent=2))
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    from fsdrive.runtime.plots import emit_plots
    from fsdrive.world.log import EpisodeLog
    from fsdrive.world.metrics import compute_metrics

    spec = _load_spec(args.scenario)
    log = EpisodeLog.read_csv(args.log, spec)
    metrics = compute_metrics(log)
    print(json.dumps(asdict(metrics), indent=2))
    if args.plots:
        for path in emit_plots(log, args.out):
            print(f"wrote {path}")
    return 0


def _cmd_gen_data(args: argparse.Namespace) -> int:
    from fsdrive.predictor.data import write_dataset
    from fsdrive.world.dataset import generate_dataset_rows

    rows = generate_dataset_rows(
        episodes_per_scenario=args.episodes_per_scenario, seed=args.seed
    )
    write_dataset(rows, args.out)
    print(f"wrote {args.out}")
    return 0


def _open_store(token: str):
    from importlib import resources

    from fsdrive.memory import HashEmbedding, MemoryStore

    if token == "builtin":
        store = MemoryStore(HashEmbedding())
        from fsdrive.runtime.loop import load_seed_memory

        load_seed_memory(store)
        return store
    path = Path(token)
    if not path.exists():
        raise ValueError(f"memory store {token!r} does not exist")
    return MemoryStore(HashEmbedding(), path=path)


def _cmd_memory_export(args: argparse.Namespace) -> int:
    store = _open_store(args.store)
    store.save(args.out)
    print(f"exported {len(store)} items to {args.out}")
    return 0


def _cmd_memory_import(args: argparse.Namespace) -> int:
    from fsdrive.memory import HashEmbedding, MemoryStore

    src = _open_store(args.src)
    dst = MemoryStore(HashEmbedding(), path=args.store)
    added = 0
    for item in src.items:
        before = len(dst)
        dst.record(item.human, item.answer, item.tags)
        added += len(dst) - before
    print(f"imported {added} new items into {args.store} ({len(dst)} total)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
