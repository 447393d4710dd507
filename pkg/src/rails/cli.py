"""Command-line entry point.

Every subcommand writes its outputs plus a ``manifest.json`` (resolved config,
config hash, seed, version) under --out. Exit codes: 0 success, 1 validation
error (machine-readable JSON on stderr), 2 internal invariant violation.
"""

from __future__ import annotations

import argparse
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .core import RailsConfig
from .decision import calibration_scores, predict, sense
from .errors import (
    FormatError,
    InternalInvariantError,
    InvalidConfigError,
    InvalidInputError,
    RailsError,
)
from .flocking import LabeledDataset
from .harness import (
    ATTACK_KINDS,
    AttackSpec,
    attack,
    build_mappers,
    canonical_attack_spec,
    canonical_blob_spec,
    canonical_config,
    curves_csv,
    evaluate,
    learning_curves,
    make_blobs,
)
from .rng import substream
from .store import (
    MemoryStore,
    atomic_write,
    config_hash,
    config_to_dict,
    load_config,
    load_dataset,
    load_embeddings,
    save_dataset,
)

E_MISSING_INPUT = "E_MISSING_INPUT"
E_INVALID_CONFIG = "E_INVALID_CONFIG"
E_INVALID_INPUT = "E_INVALID_INPUT"
E_BAD_FORMAT = "E_BAD_FORMAT"
E_INTERNAL = "E_INTERNAL"


class CliError(Exception):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(message)


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default; flag problems are validation
    # errors here, so route them through the JSON envelope with status 1.
    def error(self, message):
        raise CliError(E_MISSING_INPUT if "required" in message else E_INVALID_INPUT, message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rails", description="Immune-inspired robust classification runs")
    parser.add_argument("--version", action="version", version=f"rails {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, train=False, test=False):
        p.add_argument("--config", type=Path, help="run configuration JSON")
        if train:
            p.add_argument("--train", type=Path, help="training dataset CSV")
        if test:
            p.add_argument("--test", type=Path, help="test dataset CSV")
        p.add_argument("--embeddings", type=Path, action="append", default=[],
                       help="EmbeddingFile for the training set (repeat per layer)")
        p.add_argument("--test-embeddings", type=Path, action="append", default=[],
                       help="EmbeddingFile for the test set (repeat per layer)")
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--format", choices=("csv", "json"), default="csv")

    common(sub.add_parser("predict", help="classify every test row"), train=True, test=True)
    common(sub.add_parser("evaluate", help="SA/RA report against an attacked copy of --test"),
           train=True, test=True)
    common(sub.add_parser("attack", help="write a perturbed copy of --test"), train=True, test=True)
    common(sub.add_parser("curves", help="emit per-query affinity learning curves"),
           train=True, test=True)
    common(sub.add_parser("sense", help="threat-score every test row"), train=True, test=True)
    common(sub.add_parser("make-blobs", help="generate the canonical blob datasets"))

    for name in ("evaluate", "attack"):
        p = sub.choices[name]
        p.add_argument("--attack-kind", choices=ATTACK_KINDS, default="centroid-drift")
        p.add_argument("--epsilon", type=float, default=None,
                       help="L-infinity budget (default: canonical 0.15)")
        p.add_argument("--steps", type=int, default=10, help="boundary-greedy step limit")
    return parser


def _require_file(path: Path | None, flag: str) -> Path:
    if path is None:
        raise CliError(E_MISSING_INPUT, f"missing required flag {flag}")
    if not path.exists():
        raise CliError(E_MISSING_INPUT, f"{flag} file not found: {path}")
    return path


def _load_run_config(args) -> RailsConfig:
    if args.config is not None:
        config = load_config(_require_file(args.config, "--config"))
    else:
        config = canonical_config()
    if args.seed is not None:
        config = config.with_seed(args.seed)
    return config


def _load_embedding_maps(paths):
    mappers = {}
    for path in paths:
        mapper = load_embeddings(_require_file(path, "--embeddings"))
        if mapper.layer_id in mappers:
            raise CliError(E_INVALID_INPUT, f"duplicate embedding layer {mapper.layer_id!r}")
        mappers[mapper.layer_id] = mapper
    return mappers


def _companions_for_row(test_embeddings, row: int):
    if not test_embeddings:
        return None
    return {layer: m.row(row) for layer, m in test_embeddings.items()}


def _write_manifest(out: Path, subcommand: str, config: RailsConfig, outputs: list[str]) -> None:
    manifest = {
        "version": __version__,
        "subcommand": subcommand,
        "seed": config.seed,
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "outputs": sorted(outputs),
        "wall_time": datetime.now(timezone.utc).isoformat(),
    }
    atomic_write(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _prepare(args):
    config = _load_run_config(args)
    train = load_dataset(_require_file(args.train, "--train"))
    embeddings = _load_embedding_maps(args.embeddings)
    for mapper in embeddings.values():
        if mapper.n_rows != train.n:
            raise CliError(
                E_INVALID_INPUT,
                f"embedding layer {mapper.layer_id!r} has {mapper.n_rows} rows, train has {train.n}",
            )
    mappers = build_mappers(config, train.dim, embeddings)
    return config, train, mappers


def _load_test(args, train: LabeledDataset):
    test = load_dataset(_require_file(args.test, "--test"))
    if test.dim != train.dim:
        raise CliError(E_INVALID_INPUT, f"test dim {test.dim} != train dim {train.dim}")
    test_embeddings = _load_embedding_maps(args.test_embeddings)
    for mapper in test_embeddings.values():
        if mapper.n_rows != test.n:
            raise CliError(
                E_INVALID_INPUT,
                f"test embedding layer {mapper.layer_id!r} has {mapper.n_rows} rows, test has {test.n}",
            )
    return test, test_embeddings


def _cmd_make_blobs(args) -> tuple[list[str], RailsConfig]:
    config = canonical_config(args.seed) if args.seed is not None else canonical_config()
    if args.config is not None:
        config = _load_run_config(args)
    spec = canonical_blob_spec(config.seed)
    train, test = make_blobs(spec)
    save_dataset(args.out / "train.csv", train)
    save_dataset(args.out / "test.csv", test)
    return ["train.csv", "test.csv"], config


def _cmd_attack(args) -> tuple[list[str], RailsConfig]:
    config, train, _ = _prepare(args)
    test, _ = _load_test(args, train)
    epsilon = args.epsilon if args.epsilon is not None else canonical_attack_spec().epsilon
    spec = AttackSpec(kind=args.attack_kind, epsilon=epsilon, steps=args.steps, seed=config.seed)
    adv = attack(test, spec, train)
    save_dataset(args.out / "attacked_test.csv", adv)
    return ["attacked_test.csv"], config


def _cmd_evaluate(args) -> tuple[list[str], RailsConfig]:
    config, train, mappers = _prepare(args)
    test, _ = _load_test(args, train)
    epsilon = args.epsilon if args.epsilon is not None else canonical_attack_spec().epsilon
    spec = AttackSpec(kind=args.attack_kind, epsilon=epsilon, steps=args.steps, seed=config.seed)
    adv = attack(test, spec, train)
    report = evaluate(train, test, adv, config, mappers=mappers, epsilon=spec.epsilon)
    atomic_write(args.out / "eval_report.csv", report.to_csv())
    sidecar = {
        "epsilon": spec.epsilon,
        "attack_kind": spec.kind,
        "seed": config.seed,
        "config": config_to_dict(config),
        "config_hash": config_hash(config),
        "rows": [
            {"method": r.method, "split": r.split, "accuracy": r.accuracy} for r in report.rows
        ],
    }
    atomic_write(args.out / "eval_report.json", json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return ["eval_report.csv", "eval_report.json"], config


def _cmd_predict(args) -> tuple[list[str], RailsConfig]:
    config, train, mappers = _prepare(args)
    test, test_embeddings = _load_test(args, train)
    rng = substream(config.seed, "calibration")
    rows = rng.choice(train.n, size=min(100, train.n), replace=False)
    calibration = calibration_scores(train, mappers, config.k, rows=[int(r) for r in rows])
    store = MemoryStore(args.out / "memory_store")
    records = []
    for i in range(test.n):
        result = predict(
            train, mappers, test.example(i), config,
            query_index=i, calibration=calibration,
            companions=_companions_for_row(test_embeddings, i),
        )
        store.append(f"q{i}", result.plasma_memory, config)
        records.append(
            {
                "query_id": f"q{i}",
                "label": result.prediction.label,
                "plasma_total": result.prediction.plasma_total,
                "votes": {str(c): v for c, v in result.prediction.vote_counts.items()},
            }
        )
    outputs = ["memory_store/records.bin", "memory_store/manifest.json"]
    if args.format == "json":
        atomic_write(args.out / "predictions.json", json.dumps(records, indent=2) + "\n")
        outputs.append("predictions.json")
    else:
        classes = range(train.n_classes)
        lines = ["query_id,label,plasma_total," + ",".join(f"votes_{c}" for c in classes)]
        for rec in records:
            votes = ",".join(str(rec["votes"].get(str(c), 0)) for c in classes)
            lines.append(f"{rec['query_id']},{rec['label']},{rec['plasma_total']},{votes}")
        atomic_write(args.out / "predictions.csv", "\n".join(lines) + "\n")
        outputs.append("predictions.csv")
    return outputs, config


def _cmd_sense(args) -> tuple[list[str], RailsConfig]:
    config, train, mappers = _prepare(args)
    test, test_embeddings = _load_test(args, train)
    rng = substream(config.seed, "calibration")
    rows = rng.choice(train.n, size=min(100, train.n), replace=False)
    calibration = calibration_scores(train, mappers, config.k, rows=[int(r) for r in rows])
    reports = []
    for i in range(test.n):
        report = sense(
            train, mappers, test.example(i), config.k, calibration,
            companions=_companions_for_row(test_embeddings, i),
        )
        reports.append(
            {
                "query_id": f"q{i}",
                "raw_score": report.raw_score,
                "percentile": report.percentile,
                "flagged": report.flagged,
            }
        )
    if args.format == "json":
        atomic_write(args.out / "threat.json", json.dumps(reports, indent=2) + "\n")
        return ["threat.json"], config
    lines = ["query_id,raw_score,percentile,flagged"]
    for rec in reports:
        lines.append(
            f"{rec['query_id']},{rec['raw_score']!r},{rec['percentile']!r},{str(rec['flagged']).lower()}"
        )
    atomic_write(args.out / "threat.csv", "\n".join(lines) + "\n")
    return ["threat.csv"], config


def _cmd_curves(args) -> tuple[list[str], RailsConfig]:
    config, train, mappers = _prepare(args)
    test, test_embeddings = _load_test(args, train)
    outputs = []
    for i in range(test.n):
        result = predict(
            train, mappers, test.example(i), config,
            query_index=i, with_sensing=False, keep_history=True,
            companions=_companions_for_row(test_embeddings, i),
        )
        curves = learning_curves(result.runs, f"q{i}")
        name = f"curves_q{i}.csv"
        atomic_write(args.out / name, curves_csv(curves))
        outputs.append(name)
    return outputs, config


_COMMANDS = {
    "make-blobs": _cmd_make_blobs,
    "attack": _cmd_attack,
    "evaluate": _cmd_evaluate,
    "predict": _cmd_predict,
    "sense": _cmd_sense,
    "curves": _cmd_curves,
}


def _emit_error(code: str, message: str) -> None:
    print(json.dumps({"error": code, "message": message}), file=sys.stderr)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        args.out.mkdir(parents=True, exist_ok=True)
        outputs, config = _COMMANDS[args.subcommand](args)
        _write_manifest(args.out, args.subcommand, config, outputs)
        return 0
    except CliError as exc:
        _emit_error(exc.code, str(exc))
        return 1
    except FileNotFoundError as exc:
        _emit_error(E_MISSING_INPUT, str(exc))
        return 1
    except FormatError as exc:
        _emit_error(E_BAD_FORMAT, str(exc))
        return 1
    except InvalidConfigError as exc:
        _emit_error(E_INVALID_CONFIG, str(exc))
        return 1
    except InvalidInputError as exc:
        _emit_error(E_INVALID_INPUT, str(exc))
        return 1
    except InternalInvariantError as exc:
        _emit_error(E_INTERNAL, str(exc))
        return 2
    except RailsError as exc:
        _emit_error(E_INVALID_INPUT, str(exc))
        return 1


if __name__ == "__main__":
    sys.exit(main())
