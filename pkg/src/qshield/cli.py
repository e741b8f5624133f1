"""Command-line driver: data generation, training, evaluation, serving, review.

Exit codes: 0 success, 1 operational failure (missing file, diverged training,
unreachable server), 2 usage error. Every stochastic subcommand takes --seed
and defaults to a fixed constant so transcripts reproduce exactly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
import urllib.error
import urllib.request

from . import baseline as baseline_mod
from . import data as data_mod
from .gateway import Gateway, ServiceConfig
from .labels import CLASSES
from .metrics import evaluate_model
from .model import (
    ConfigError,
    ModelConfig,
    ModelFileError,
    init_params,
    load_model,
    predict,
    save_model,
)
from .server import GatewayServer
from .training import TrainConfig, TrainingDivergedError, train, warm_start_retrain

logger = logging.getLogger(__name__)

DEFAULT_SEED = 7


def _parse_counts(spec: str) -> dict[str, int]:
    counts = {}
    for part in spec.split(","):
        if not part:
            continue
        label, _, value = part.partition("=")
        if not value:
            raise ValueError(f"bad count entry {part!r}; expected label=count")
        counts[label.strip()] = int(value)
    if not counts:
        raise ValueError("no counts given")
    return counts


def _parse_heights(spec: str) -> tuple[int, ...]:
    return tuple(int(h) for h in spec.split(","))


def _load_corpus_or_fail(path):
    samples, stats = data_mod.load_corpus(path)
    logger.info("loaded %d samples from %s", stats.total, path)
    return samples


# -- subcommand implementations ------------------------------------------------


def _cmd_gen_data(args) -> int:
    counts = _parse_counts(args.counts)
    samples = data_mod.generate_synthetic(
        counts, seed=args.seed, exclude_families=tuple(args.exclude_family)
    )
    data_mod.save_corpus(samples, args.output)
    stats = data_mod.corpus_stats(samples)
    print(f"wrote {stats.total} samples to {args.output}")
    for label in CLASSES:
        if stats.counts[label]:
            print(f"  {label}: {stats.counts[label]}")
    return 0


def _cmd_balance(args) -> int:
    samples = _load_corpus_or_fail(args.input)
    balanced = data_mod.balance_by_threshold(samples, args.threshold, seed=args.seed)
    data_mod.save_corpus(balanced, args.output)
    print(f"balanced {len(samples)} -> {len(balanced)} samples (threshold {args.threshold})")
    return 0


def _cmd_split(args) -> int:
    samples = _load_corpus_or_fail(args.input)
    train_set, test_set = data_mod.stratified_split(samples, args.test_fraction, seed=args.seed)
    data_mod.save_corpus(train_set, args.train_out)
    data_mod.save_corpus(test_set, args.test_out)
    print(f"split {len(samples)} samples into {len(train_set)} train / {len(test_set)} test")
    return 0


def _cmd_train(args) -> int:
    corpus = _load_corpus_or_fail(args.corpus)
    eval_corpus = _load_corpus_or_fail(args.val_corpus) if args.val_corpus else None
    train_config = TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        l2_lambda=args.l2_lambda,
        seed=args.seed,
    )
    if args.init_model:
        params = load_model(args.init_model)
        final, history = warm_start_retrain(params, corpus, train_config, eval_corpus=eval_corpus)
    else:
        model_config = ModelConfig(
            k=args.k,
            filter_heights=_parse_heights(args.filter_heights),
            filters_per_height=args.filters_per_height,
            max_seq_len=args.max_seq_len,
            dropout_p=args.dropout,
            use_bias=args.use_bias,
            l2_lambda=args.l2_lambda if args.l2_lambda is not None else 1e-4,
            seed=args.seed,
        )
        params = init_params(model_config)
        final, history = train(params, corpus, train_config, eval_corpus=eval_corpus)
    save_model(final, args.output)
    print(
        f"trained {history.steps} steps over {args.epochs} epochs; "
        f"final loss {history.total[-1]:.4f}" if history.steps else "trained 0 steps"
    )
    print(f"model v{final.version} written to {args.output}")
    if args.history_csv:
        history.to_csv(args.history_csv)
        print(f"history written to {args.history_csv}")
    if args.loss_plot:
        from .reports import plot_history

        plot_history(history, args.loss_plot)
        print(f"loss curve written to {args.loss_plot}")
    return 0


def _cmd_eval(args) -> int:
    corpus = _load_corpus_or_fail(args.corpus)
    if args.baseline:
        if not args.train_corpus:
            raise ValueError("--baseline needs --train-corpus")
        train_corpus = _load_corpus_or_fail(args.train_corpus)
        config = baseline_mod.BaselineConfig(
            epochs=args.epochs, learning_rate=args.lr, seed=args.seed
        )
        report = baseline_mod.baseline_train_eval(train_corpus, corpus, config)
    else:
        if not args.model:
            raise ValueError("--model is required unless --baseline is set")
        params = load_model(args.model)
        report = evaluate_model(params, corpus)
    print(report.to_table())
    print(json.dumps(report.to_dict(), sort_keys=True))
    if args.json_out:
        from .reports import save_metrics_json

        save_metrics_json(report, args.json_out)
    if args.plot:
        from .reports import plot_metrics

        plot_metrics(report, args.plot)
        print(f"metrics figure written to {args.plot}")
    return 0


def _cmd_predict(args) -> int:
    params = load_model(args.model)
    verdict = predict(params, args.text)
    print(json.dumps(verdict.to_dict(), sort_keys=True))
    return 0


def build_service_config(args) -> ServiceConfig:
    """Config file (flag or QSHIELD_CONFIG env) with command-line overrides on top."""
    config_path = args.config or os.environ.get("QSHIELD_CONFIG")
    config = ServiceConfig.from_file(config_path) if config_path else ServiceConfig()
    overrides = {
        "host": args.host,
        "port": args.port,
        "data_dir": args.data_dir,
        "confidence_threshold": args.confidence_threshold,
        "sampling_rate": args.sampling_rate,
        "retrain_trigger_count": args.retrain_count,
        "retrain_epochs": args.retrain_epochs,
        "static_dir": args.static_dir,
    }
    for key, value in overrides.items():
        if value is not None:
            config = dataclasses.replace(config, **{key: value})
    if args.no_auto_retrain:
        config = dataclasses.replace(config, auto_retrain=False)
    config.validate()
    return config


def _cmd_serve(args) -> int:
    config = build_service_config(args)
    params = load_model(args.model) if args.model else None
    seed_corpus = _load_corpus_or_fail(args.corpus) if args.corpus else None
    gateway = Gateway(config, params=params, seed_corpus=seed_corpus)
    server = GatewayServer(gateway)
    print(f"serving model v{gateway.active_version} on {server.url}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.stop()
    return 0


def _http_json(method: str, url: str, payload: dict | None = None) -> dict:
    body = None if payload is None else json.dumps(payload).encode("utf-8")
    req = urllib.request.Request(url, data=body, method=method)
    if body is not None:
        req.add_header("Content-Type", "application/json")
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return json.loads(resp.read().decode("utf-8"))
    except urllib.error.HTTPError as exc:
        detail = exc.read().decode("utf-8", errors="replace")
        raise RuntimeError(f"server returned {exc.code}: {detail}") from exc


def _cmd_review_list(args) -> int:
    url = f"{args.server}/v1/review/pending?limit={args.limit}"
    if args.cursor:
        url += f"&cursor={args.cursor}"
    page = _http_json("GET", url)
    if args.json:
        print(json.dumps(page, sort_keys=True))
        return 0
    items = page["items"]
    if not items:
        print("no pending samples")
        return 0
    for item in items:
        print(
            f"{item['id']}  conf={item['confidence']:.3f}  pred={item['predicted_class']:<7}"
            f"  {item['text'][:80]!r}"
        )
    if page.get("next_cursor"):
        print(f"next cursor: {page['next_cursor']}")
    return 0


def _cmd_review_label(args) -> int:
    item = _http_json(
        "POST", f"{args.server}/v1/review/{args.id}/label", {"label": args.label}
    )
    print(f"{item['id']} -> {item['status']}" + (f" ({item['assigned_label']})" if item.get("assigned_label") else ""))
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qshield",
        description="Malicious web request detection: character-level CNN with online re-learning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a deterministic synthetic corpus")
    p.add_argument("--counts", required=True, help="per-class counts, e.g. benign=2000,sqli=472")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument(
        "--exclude-family",
        action="append",
        default=[],
        metavar="LABEL:FAMILY",
        help="exclude a template family (repeatable)",
    )
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("balance", help="downsample classes above a threshold")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--threshold", type=int, default=2000)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=_cmd_balance)

    p = sub.add_parser("split", help="stratified train/test split")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train the CNN on a labeled corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("-o", "--output", required=True, help="model file path")
    p.add_argument("--val-corpus", help="optional eval corpus for per-epoch metrics")
    p.add_argument("--init-model", help="warm-start from an existing model file")
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--optimizer", choices=("adam", "sgd"), default="adam")
    p.add_argument("--l2-lambda", type=float, default=None)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--k", type=int, default=32, help="embedding dimension")
    p.add_argument("--filter-heights", default="2,3,4,5")
    p.add_argument("--filters-per-height", type=int, default=32)
    p.add_argument("--max-seq-len", type=int, default=256)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--use-bias", action="store_true")
    p.add_argument("--history-csv", help="write per-step loss CSV here")
    p.add_argument("--loss-plot", help="render the loss curve PNG here")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a model (or the TF-IDF baseline) on a corpus")
    p.add_argument("--model", help="CNN model file")
    p.add_argument("--corpus", required=True, help="test corpus")
    p.add_argument("--baseline", action="store_true", help="evaluate the TF-IDF baseline instead")
    p.add_argument("--train-corpus", help="baseline training corpus")
    p.add_argument("--epochs", type=int, default=5, help="baseline training epochs")
    p.add_argument("--lr", type=float, default=1e-3, help="baseline learning rate")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--json-out", help="write the JSON report here")
    p.add_argument("--plot", help="render the per-class metrics PNG here")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("predict", help="classify one string")
    p.add_argument("--model", required=True)
    p.add_argument("--text", required=True)
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("serve", help="run the classification gateway")
    p.add_argument("--config", help="JSON config file (or set QSHIELD_CONFIG)")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--model", help="model file to serve (defaults to data dir state)")
    p.add_argument("--corpus", help="seed labeled corpus for first boot")
    p.add_argument("--confidence-threshold", type=float)
    p.add_argument("--sampling-rate", type=float)
    p.add_argument("--retrain-count", type=int)
    p.add_argument("--retrain-epochs", type=int)
    p.add_argument("--static-dir", help="serve review UI assets from this directory")
    p.add_argument("--no-auto-retrain", action="store_true")
    p.set_defaults(func=_cmd_serve)

    p = sub.add_parser("review", help="headless review queue operations")
    review_sub = p.add_subparsers(dest="review_command", required=True)

    rl = review_sub.add_parser("list", help="list pending review items")
    rl.add_argument("--server", required=True, help="gateway base URL")
    rl.add_argument("--limit", type=int, default=50)
    rl.add_argument("--cursor")
    rl.add_argument("--json", action="store_true")
    rl.set_defaults(func=_cmd_review_list)

    rb = review_sub.add_parser("label", help="label or discard one pending item")
    rb.add_argument("--server", required=True)
    rb.add_argument("--id", required=True)
    rb.add_argument("--label", required=True, choices=CLASSES + ("discard",))
    rb.set_defaults(func=_cmd_review_label)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (
        OSError,
        ValueError,
        ConfigError,
        ModelFileError,
        TrainingDivergedError,
        RuntimeError,
        urllib.error.URLError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
