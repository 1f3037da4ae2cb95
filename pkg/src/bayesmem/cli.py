"""Command-line surface: fit / learn / update / predict / protocol.

Exit codes: 0 success, 1 unreadable or corrupt files (I/O), 2 invalid
arguments or configuration.  Every command is deterministic in its inputs
and declared seeds; no command mutates its input files.  The run manifest
written by `protocol` carries provenance (versions, digests, timings) and
is the one output excluded from the byte-identity guarantee.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from bayesmem import __version__, backend, classifier, protocol
from bayesmem.features import l2_normalize, load_shard, split_by_class
from bayesmem.memory import (
    EstimatorConfig,
    MemoryBank,
    add_class,
    form_memory,
    load_bank,
    save_bank,
    update_class,
)
from bayesmem.utils import DataFormatError, ValidationError, resolve_threads

EXIT_OK = 0
EXIT_IO = 1
EXIT_VALIDATION = 2


def _estimator_from_args(args) -> EstimatorConfig:
    if args.estimator == "gmm":
        return EstimatorConfig(kind="gmm", components=args.components)
    return EstimatorConfig(kind="kde", bandwidth=args.bandwidth)


def _load_normalized(path, fmt="auto"):
    return l2_normalize(load_shard(path, fmt=fmt))


def cmd_fit(args) -> int:
    estimator = _estimator_from_args(args)
    threads = resolve_threads(args.threads)
    dataset = _load_normalized(args.features)
    bank = MemoryBank(K=dataset.K, estimator=estimator)
    for cid, ds in sorted(split_by_class(dataset).items()):
        add_class(bank, form_memory(cid, ds, estimator, seed=args.seed, threads=threads))
    save_bank(bank, args.out)
    print(f"fit {len(bank.classes)} classes (K={bank.K}, {estimator.kind}) -> {args.out}")
    return EXIT_OK


def cmd_learn(args) -> int:
    threads = resolve_threads(args.threads)
    bank = load_bank(args.bank)
    dataset = _load_normalized(args.features)
    if dataset.K != bank.K:
        raise ValidationError(f"shard K={dataset.K} does not match bank K={bank.K}")
    overlap = sorted(set(dataset.class_ids()) & set(bank.class_ids()))
    if overlap:
        raise ValidationError(
            f"classes {overlap} already in bank; `learn` adds new classes only "
            "(use `update` for new data of existing classes)"
        )
    for cid, ds in sorted(split_by_class(dataset).items()):
        add_class(bank, form_memory(cid, ds, bank.estimator, seed=args.seed, threads=threads))
    save_bank(bank, args.out)
    print(f"learned {len(dataset.class_ids())} new classes -> {args.out}")
    return EXIT_OK


def cmd_update(args) -> int:
    bank = load_bank(args.bank)
    dataset = _load_normalized(args.features)
    if dataset.K != bank.K:
        raise ValidationError(f"shard K={dataset.K} does not match bank K={bank.K}")
    unknown = sorted(set(dataset.class_ids()) - set(bank.class_ids()))
    if unknown:
        raise ValidationError(
            f"classes {unknown} not in bank; `update` handles existing classes only "
            "(use `learn` for new classes)"
        )
    for cid, ds in sorted(split_by_class(dataset).items()):
        update_class(bank, cid, ds)
    save_bank(bank, args.out)
    print(f"updated {len(dataset.class_ids())} classes -> {args.out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    threads = resolve_threads(args.threads)
    bank = load_bank(args.bank)
    dataset = _load_normalized(args.features)
    if dataset.K != bank.K:
        raise ValidationError(f"shard K={dataset.K} does not match bank K={bank.K}")
    batch = classifier.predict_batch(
        bank, dataset.values, uniform_prior=args.uniform_prior, threads=threads
    )
    ids = batch.class_ids
    with open(args.out, "w", encoding="utf-8") as fh:
        header = "index,label,pred,log_joint"
        if args.posteriors:
            header += "".join(f",post_{int(c)}" for c in ids)
        fh.write(header + "\n")
        post = classifier.softmax_rows(batch.log_joint) if args.posteriors else None
        best = batch.log_joint[np.arange(len(dataset)), np.argmax(batch.log_joint, axis=1)]
        for i in range(len(dataset)):
            row = f"{i},{int(dataset.labels[i])},{int(batch.predicted[i])},{float(best[i])!r}"
            if post is not None:
                row += "".join(f",{float(v)!r}" for v in post[i])
            fh.write(row + "\n")
    n_clamped = int(batch.clamped.sum())
    if n_clamped:
        print(f"warning: {n_clamped} predictions hit the log-density clamp", file=sys.stderr)
    print(f"predicted {len(dataset)} samples -> {args.out}")
    return EXIT_OK


# --- protocol command ------------------------------------------------------

_PROTOCOL_KEYS = {
    "mode", "train", "test", "synthetic", "classes_per_round", "shots_per_class",
    "samples_per_round_per_class", "rounds", "class_order", "seed", "seeds",
    "estimator", "feature_subsample", "refit_from_cache", "threads",
}
_SYNTH_KEYS = {"kind", "classes", "K", "n_train", "n_test", "sigma", "spread", "separation", "seed"}


def _parse_protocol_config(raw: dict):
    """Validate the protocol config file, reporting every violation at once."""
    errors: list[str] = []
    for key in sorted(set(raw) - _PROTOCOL_KEYS):
        errors.append(f"unknown config key {key!r}")
    mode = raw.get("mode")
    if mode not in protocol.MODES:
        errors.append(f"'mode' must be one of {protocol.MODES}, got {mode!r}")
    has_files = "train" in raw or "test" in raw
    has_synth = "synthetic" in raw
    if has_files and has_synth:
        errors.append("give either train/test paths or a synthetic block, not both")
    if not has_files and not has_synth:
        errors.append("missing required field: train/test paths or a synthetic block")
    if has_files:
        for key in ("train", "test"):
            if key not in raw:
                errors.append(f"missing required field '{key}'")
    synth = raw.get("synthetic")
    if has_synth:
        if not isinstance(synth, dict):
            errors.append("'synthetic' must be an object")
        else:
            for key in sorted(set(synth) - _SYNTH_KEYS):
                errors.append(f"unknown synthetic key {key!r}")
            for key in ("classes", "K"):
                if key not in synth:
                    errors.append(f"missing required synthetic field '{key}'")
    est = raw.get("estimator", {"kind": "gmm", "components": 2})
    estimator = None
    if not isinstance(est, dict) or est.get("kind") not in ("gmm", "kde"):
        errors.append("'estimator' must be {'kind': 'gmm'|'kde', ...}")
    else:
        try:
            estimator = EstimatorConfig(
                kind=est["kind"],
                components=int(est.get("components", 2)),
                bandwidth=est.get("bandwidth"),
            )
        except (ValidationError, TypeError, ValueError) as exc:
            errors.append(f"estimator: {exc}")
    if mode in ("class_incremental", "few_shot") and int(raw.get("classes_per_round", 1)) < 1:
        errors.append("'classes_per_round' must be >= 1")
    if mode == "few_shot" and "shots_per_class" not in raw:
        errors.append("missing required field 'shots_per_class' (few_shot mode)")
    if mode == "data_incremental" and "samples_per_round_per_class" not in raw:
        errors.append("missing required field 'samples_per_round_per_class' (data_incremental mode)")
    fs = raw.get("feature_subsample")
    feature_subsample = None
    if fs is not None:
        if not isinstance(fs, dict) or "count" not in fs:
            errors.append("'feature_subsample' must be {'count': int, 'seed': int}")
        else:
            feature_subsample = (int(fs["count"]), int(fs.get("seed", 0)))
    if errors:
        raise ValidationError("; ".join(errors))

    cfg = protocol.ProtocolConfig(
        mode=mode,
        estimator=estimator,
        class_order=raw.get("class_order"),
        classes_per_round=int(raw.get("classes_per_round", 1)),
        shots_per_class=(
            int(raw["shots_per_class"]) if raw.get("shots_per_class") is not None else None
        ),
        samples_per_round_per_class=int(raw.get("samples_per_round_per_class", 0)),
        rounds=int(raw["rounds"]) if raw.get("rounds") is not None else None,
        seed=int(raw.get("seed", 0)),
        feature_subsample=feature_subsample,
        refit_from_cache=bool(raw.get("refit_from_cache", False)),
        threads=int(raw.get("threads", 1)),
    )
    return cfg, raw


def _synthetic_datasets(synth: dict):
    kind = synth.get("kind", "separated")
    n_classes = int(synth["classes"])
    k = int(synth["K"])
    sigma = float(synth.get("sigma", 0.05))
    spread = float(synth.get("spread", 1.0))
    seed = int(synth.get("seed", 0))
    if kind == "bimodal":
        specs = protocol.bimodal_class_specs(
            n_classes, k, spread=spread, separation=float(synth.get("separation", 0.5)),
            sigma=sigma, seed=seed,
        )
    elif kind == "separated":
        specs = protocol.separated_class_specs(n_classes, k, spread=spread, sigma=sigma, seed=seed)
    else:
        raise ValidationError(f"unknown synthetic kind {kind!r}")
    return protocol.make_synthetic_dataset(
        specs, int(synth.get("n_train", 100)), int(synth.get("n_test", 50)), seed=seed
    )


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def cmd_protocol(args) -> int:
    with open(args.config, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    cfg, raw = _parse_protocol_config(raw)
    # Precedence: --threads flag, then BAYESMEM_THREADS, then config value.
    if args.threads is not None or os.environ.get("BAYESMEM_THREADS", "").strip():
        cfg = replace(cfg, threads=resolve_threads(args.threads))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    inputs: dict = {}
    if "synthetic" in raw:
        train, test = _synthetic_datasets(raw["synthetic"])
        inputs["synthetic"] = raw["synthetic"]
    else:
        train = _load_normalized(raw["train"])
        test = _load_normalized(raw["test"])
        inputs["train"] = {"path": raw["train"], "sha256": _sha256(raw["train"])}
        inputs["test"] = {"path": raw["test"], "sha256": _sha256(raw["test"])}

    t0 = time.perf_counter()
    seeds = raw.get("seeds")
    if seeds:
        reports, summary = protocol.run_repeated(train, test, cfg, [int(s) for s in seeds])
        for s, rep in zip(seeds, reports):
            protocol.write_report_json(rep, out_dir / f"report_seed{s}.json")
            protocol.write_report_csv(rep, out_dir / f"report_seed{s}.csv")
        with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
            fh.write(json.dumps(summary, sort_keys=True, indent=2) + "\n")
        report = reports[0]
    else:
        report = protocol.run_protocol(train, test, cfg)
        protocol.write_report_json(report, out_dir / "report.json")
        protocol.write_report_csv(report, out_dir / "report.csv")

    manifest = {
        "config_file": str(args.config),
        "config": report.config,
        "inputs": inputs,
        "versions": {
            "bayesmem": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "kernel_backend": backend.active_backend(),
        },
        "durations_s": {
            "total": time.perf_counter() - t0,
            "rounds": [rr.duration_s for rr in report.rounds],
        },
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        fh.write(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"protocol run complete: {len(report.rounds)} rounds -> {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bayesmem",
        description="Continual-learning classifier over fixed feature vectors",
    )
    parser.add_argument("--version", action="version", version=f"bayesmem {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument(
            "--threads", type=int, default=None,
            help="internal parallelism cap (default: BAYESMEM_THREADS or 1); "
            "results are identical for any value",
        )

    p = sub.add_parser("fit", help="fit a new memory bank from a labeled shard")
    p.add_argument("--features", required=True, help="feature shard (FVS1 binary or CSV)")
    p.add_argument("--estimator", choices=["gmm", "kde"], default="gmm")
    p.add_argument("--components", type=int, default=2, help="GMM components per feature (default 2)")
    p.add_argument("--bandwidth", type=float, default=None, help="fixed KDE bandwidth (default: Silverman)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output bank file")
    add_threads(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("learn", help="add new classes from a shard to an existing bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    add_threads(p)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("update", help="absorb new data of existing classes (data-incremental)")
    p.add_argument("--bank", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    add_threads(p)
    p.set_defaults(func=cmd_update)

    p = sub.add_parser("predict", help="classify a shard against a bank")
    p.add_argument("--bank", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output CSV")
    p.add_argument("--posteriors", action="store_true", help="append normalized posterior columns")
    p.add_argument("--uniform-prior", action="store_true", help="ablation: ignore stored class counts")
    add_threads(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("protocol", help="run a continual-learning evaluation protocol")
    p.add_argument("--config", required=True, help="JSON protocol config")
    p.add_argument("--out", required=True, help="output directory")
    add_threads(p)
    p.set_defaults(func=cmd_protocol)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "components", 1) is not None and getattr(args, "components", 1) < 1:
            raise ValidationError(f"--components must be >= 1, got {args.components}")
        if getattr(args, "bandwidth", None) is not None and args.bandwidth <= 0:
            raise ValidationError(f"--bandwidth must be positive, got {args.bandwidth}")
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (DataFormatError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
