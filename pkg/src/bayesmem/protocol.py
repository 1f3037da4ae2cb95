"""Continual-learning evaluation protocols and the mean-class-recall metric.

Supports class-incremental rounds (optionally few-shot), data-incremental
rounds over a fixed class set, axis sweeps (component count, class order,
feature count), and seeded synthetic datasets whose Bayes error can be
estimated by Monte Carlo.  Every run is a pure function of (datasets,
config): all randomness flows through declared seeds, and serialized
reports exclude wall-clock timings (those go to the run manifest).
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from bayesmem import _core_py, classifier
from bayesmem.features import (
    FeatureDataset,
    l2_normalize,
    select_features,
    split_by_class,
    subsample_features,
)
from bayesmem.memory import (
    EstimatorConfig,
    MemoryBank,
    add_class,
    form_memory,
    memory_footprint,
    update_class,
)
from bayesmem.utils import ValidationError, derive_seed

MODES = ("class_incremental", "data_incremental", "few_shot")


# ---------------------------------------------------------------------------
# Synthetic data


@dataclass(frozen=True)
class SyntheticClassSpec:
    """Ground-truth factorized mixture for one class: per-dimension 1-D GMMs.

    weights/mus/sigmas are (K, S) arrays; feature k of this class is drawn
    from sum_s weights[k,s] * N(mus[k,s], sigmas[k,s]^2), independently of
    the other features.
    """

    weights: np.ndarray
    mus: np.ndarray
    sigmas: np.ndarray

    @property
    def K(self) -> int:
        return self.mus.shape[0]


def separated_class_specs(
    n_classes: int, k: int, spread: float = 1.0, sigma: float = 0.05, seed: int = 0
) -> list[SyntheticClassSpec]:
    """Unimodal classes with mean vectors on distinct random directions.

    With sigma well below the typical inter-mean distance the Bayes error
    is negligible by construction.
    """
    rng = np.random.default_rng(derive_seed(seed, 2))
    dirs = rng.standard_normal((n_classes, k))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    specs = []
    for c in range(n_classes):
        specs.append(
            SyntheticClassSpec(
                weights=np.ones((k, 1)),
                mus=(dirs[c] * spread)[:, None],
                sigmas=np.full((k, 1), sigma),
            )
        )
    return specs


def bimodal_class_specs(
    n_classes: int,
    k: int,
    spread: float = 1.0,
    separation: float = 0.5,
    sigma: float = 0.05,
    seed: int = 0,
) -> list[SyntheticClassSpec]:
    """Two-component classes: each feature is bimodal around the class direction."""
    base = separated_class_specs(n_classes, k, spread=spread, sigma=sigma, seed=seed)
    specs = []
    for spec in base:
        center = spec.mus[:, 0]
        specs.append(
            SyntheticClassSpec(
                weights=np.full((k, 2), 0.5),
                mus=np.stack([center - separation, center + separation], axis=1),
                sigmas=np.full((k, 2), sigma),
            )
        )
    return specs


def _sample_class(spec: SyntheticClassSpec, n: int, rng) -> np.ndarray:
    k, s = spec.mus.shape
    cumw = np.cumsum(spec.weights, axis=1)
    u = rng.random((n, k))
    idx = np.empty((n, k), dtype=np.int64)
    for dim in range(k):
        idx[:, dim] = np.searchsorted(cumw[dim], u[:, dim], side="right")
    np.clip(idx, 0, s - 1, out=idx)
    noise = rng.standard_normal((n, k))
    dims = np.arange(k)[None, :]
    return spec.mus[dims, idx] + noise * spec.sigmas[dims, idx]


def make_synthetic_dataset(
    specs: list[SyntheticClassSpec], n_train: int, n_test: int, seed: int = 0
):
    """Draw (train, test) datasets from per-class factorized mixtures.

    Samples are L2-normalized, matching the pipeline's contract for real
    feature shards.  Deterministic in (specs, counts, seed).
    """
    k = specs[0].K
    train_vals, train_labels, test_vals, test_labels = [], [], [], []
    for cid, spec in enumerate(specs):
        if spec.K != k:
            raise ValidationError("all class specs must share K")
        rng_tr = np.random.default_rng(derive_seed(seed, 0, cid))
        rng_te = np.random.default_rng(derive_seed(seed, 1, cid))
        train_vals.append(_sample_class(spec, n_train, rng_tr))
        test_vals.append(_sample_class(spec, n_test, rng_te))
        train_labels.append(np.full(n_train, cid, dtype=np.int64))
        test_labels.append(np.full(n_test, cid, dtype=np.int64))
    train = FeatureDataset(K=k, labels=np.concatenate(train_labels), values=np.vstack(train_vals))
    test = FeatureDataset(K=k, labels=np.concatenate(test_labels), values=np.vstack(test_vals))
    return l2_normalize(train), l2_normalize(test)


def estimate_bayes_error(specs: list[SyntheticClassSpec], n_per_class: int = 2000, seed: int = 0) -> float:
    """Monte-Carlo Bayes error of the generative spec (equal priors).

    Classifies fresh raw draws by the true per-class factorized densities;
    the resulting error lower-bounds what any classifier can do on this
    family, so acceptance thresholds can be justified by construction.
    """
    wrong = 0
    total = 0
    for cid, spec in enumerate(specs):
        rng = np.random.default_rng(derive_seed(seed, 3, cid))
        x = _sample_class(spec, n_per_class, rng)
        scores = np.empty((n_per_class, len(specs)))
        for m, other in enumerate(specs):
            lpdf = _core_py.gmm_feature_log_pdf(x, other.weights, other.mus, other.sigmas)
            scores[:, m] = lpdf.sum(axis=1)
        wrong += int((np.argmax(scores, axis=1) != cid).sum())
        total += n_per_class
    return wrong / total


# ---------------------------------------------------------------------------
# Protocol configuration and reports


@dataclass(frozen=True)
class ProtocolConfig:
    """One continual-learning run, fully determined together with the datasets."""

    mode: str
    estimator: EstimatorConfig
    class_order: Optional[list[int]] = None  # default: ascending class ids
    classes_per_round: int = 1
    shots_per_class: Optional[int] = None
    samples_per_round_per_class: int = 0
    rounds: Optional[int] = None  # data_incremental; default: as many as the data allows
    seed: int = 0
    feature_subsample: Optional[tuple[int, int]] = None  # (count, seed)
    refit_from_cache: bool = False  # data_incremental debug: refit over retained vectors
    threads: int = 1


@dataclass
class RoundReport:
    round_index: int
    classes: list[int]  # learned so far, in learning order
    recalls: dict[int, float]  # keyed by class id
    mcr: float
    accuracy: float  # diagnostic only; MCR is the metric
    duration_s: float

    @property
    def n_classes(self) -> int:
        return len(self.classes)


@dataclass
class EvalReport:
    config: dict
    rounds: list[RoundReport]
    footprint: dict
    final_bank: Optional[MemoryBank] = None  # not serialized

    @property
    def final_mcr(self) -> float:
        return self.rounds[-1].mcr


def config_to_dict(cfg: ProtocolConfig) -> dict:
    d = dataclasses.asdict(cfg)
    d["estimator"] = dataclasses.asdict(cfg.estimator)
    if cfg.feature_subsample is not None:
        d["feature_subsample"] = list(cfg.feature_subsample)
    return d


def mean_class_recall(predictions, labels, classes_in_scope):
    """Unweighted mean over classes of per-class recall.

    Robust to test-set imbalance, unlike plain accuracy: every in-scope
    class contributes equally.  A class with no test samples has undefined
    recall and is an error.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.shape != labels.shape:
        raise ValidationError(
            f"predictions and labels differ in length: {predictions.shape} vs {labels.shape}"
        )
    scope = sorted(int(c) for c in classes_in_scope)
    if not scope:
        raise ValidationError("classes_in_scope is empty")
    out_of_scope = set(int(c) for c in np.unique(labels)) - set(scope)
    if out_of_scope:
        raise ValidationError(f"labels outside scope: {sorted(out_of_scope)}")
    recalls: dict[int, float] = {}
    for c in scope:
        mask = labels == c
        total = int(mask.sum())
        if total == 0:
            raise ValidationError(f"class {c} has no test samples; recall undefined")
        recalls[c] = float((predictions[mask] == c).sum() / total)
    mcr = float(np.mean(list(recalls.values())))
    return mcr, recalls


def _validate(cfg: ProtocolConfig, train: FeatureDataset, test: FeatureDataset) -> ProtocolConfig:
    errors: list[str] = []
    if cfg.mode not in MODES:
        errors.append(f"mode must be one of {MODES}, got {cfg.mode!r}")
    if train.K != test.K:
        errors.append(f"train K={train.K} and test K={test.K} differ")
    train_classes = train.class_ids()
    order = cfg.class_order if cfg.class_order is not None else list(train_classes)
    if sorted(order) != train_classes:
        errors.append("class_order must be a permutation of the training classes")
    test_classes = set(test.class_ids())
    missing = [c for c in train_classes if c not in test_classes]
    if missing:
        errors.append(f"classes with no test samples: {missing}")
    if cfg.mode != "data_incremental" and cfg.classes_per_round < 1:
        errors.append(f"classes_per_round must be >= 1, got {cfg.classes_per_round}")
    if cfg.mode == "few_shot" and (cfg.shots_per_class is None or cfg.shots_per_class < 1):
        errors.append("few_shot mode requires shots_per_class >= 1")
    rounds = cfg.rounds
    if cfg.mode == "data_incremental":
        split = split_by_class(train)
        sizes = {cid: len(ds) for cid, ds in split.items()}
        if cfg.samples_per_round_per_class < 1:
            errors.append(
                "data_incremental mode requires samples_per_round_per_class >= 1, "
                f"got {cfg.samples_per_round_per_class}"
            )
        else:
            max_rounds = min(sizes.values()) // cfg.samples_per_round_per_class
            if rounds is None:
                rounds = max_rounds
            if rounds < 1:
                errors.append("schedule yields zero rounds")
            else:
                need = rounds * cfg.samples_per_round_per_class
                short = {c: n for c, n in sizes.items() if n < need}
                if short:
                    errors.append(
                        f"schedule exhausts classes {sorted(short)}: "
                        f"need {need} samples per class, have {short}"
                    )
    if cfg.feature_subsample is not None:
        count, _ = cfg.feature_subsample
        if not 1 <= count <= train.K:
            errors.append(f"feature_subsample count must be in [1, {train.K}], got {count}")
    if cfg.threads < 1:
        errors.append(f"threads must be >= 1, got {cfg.threads}")
    if errors:
        raise ValidationError("; ".join(errors))
    return replace(cfg, class_order=[int(c) for c in order], rounds=rounds)


def _apply_projection(train, test, cfg: ProtocolConfig):
    if cfg.feature_subsample is not None:
        count, sub_seed = cfg.feature_subsample
        train, indices = subsample_features(train, count, sub_seed)
        test = select_features(test, indices)
    # Normalization is idempotent, so this is a no-op for already-clean
    # inputs and restores unit norms after a projection.
    return l2_normalize(train), l2_normalize(test)


def _take_shots(ds: FeatureDataset, shots: int, seed: int) -> FeatureDataset:
    n = len(ds)
    take = min(shots, n)
    idx = np.sort(np.random.default_rng(seed).choice(n, size=take, replace=False))
    return FeatureDataset(
        K=ds.K, labels=ds.labels[idx], values=ds.values[idx], normalized=ds.normalized
    )


def _evaluate_round(bank, test, scope, threads):
    mask = np.isin(test.labels, list(scope))
    labels = test.labels[mask]
    preds = classifier.predict_batch(bank, test.values[mask], threads=threads).predicted
    mcr, recalls = mean_class_recall(preds, labels, scope)
    accuracy = float(np.mean(preds == labels))
    return mcr, recalls, accuracy


def run_class_incremental(train, test, config: ProtocolConfig) -> EvalReport:
    """Learn classes round by round; report MCR over classes learned so far.

    In few_shot mode each new class's training records are first
    subsampled to shots_per_class, with a per-class seed derived from
    (run seed, class id) so the draw is independent of the round schedule.
    """
    cfg = _validate(config, train, test)
    if cfg.mode == "data_incremental":
        raise ValidationError("use run_data_incremental for data_incremental mode")
    train, test = _apply_projection(train, test, cfg)
    train_split = split_by_class(train)
    order = cfg.class_order
    cpr = cfg.classes_per_round
    n_rounds = math.ceil(len(order) / cpr)
    bank = MemoryBank(K=train.K, estimator=cfg.estimator)
    rounds: list[RoundReport] = []
    for r in range(n_rounds):
        t0 = time.perf_counter()
        for cid in order[r * cpr : (r + 1) * cpr]:
            ds = train_split[cid]
            if cfg.mode == "few_shot":
                ds = _take_shots(ds, cfg.shots_per_class, derive_seed(cfg.seed, cid))
            add_class(bank, form_memory(cid, ds, cfg.estimator, seed=cfg.seed, threads=cfg.threads))
        learned = order[: (r + 1) * cpr]
        mcr, recalls, accuracy = _evaluate_round(bank, test, learned, cfg.threads)
        rounds.append(
            RoundReport(
                round_index=r + 1,
                classes=list(learned),
                recalls=recalls,
                mcr=mcr,
                accuracy=accuracy,
                duration_s=time.perf_counter() - t0,
            )
        )
    return EvalReport(
        config=config_to_dict(cfg),
        rounds=rounds,
        footprint=memory_footprint(bank),
        final_bank=bank,
    )


def run_data_incremental(train, test, config: ProtocolConfig) -> EvalReport:
    """All classes from round 1; later rounds absorb new samples per class.

    The test pool is the full test set from the start.  Round r delivers
    each class's records [r*spc, (r+1)*spc) in dataset order.  With
    refit_from_cache the per-class feature matrices are retained and each
    round refits from scratch (a debug mode for comparing incremental EM
    against full refits; it stores raw vectors, which the normal path never
    does).
    """
    cfg = _validate(config, train, test)
    if cfg.mode != "data_incremental":
        raise ValidationError("run_data_incremental requires mode=data_incremental")
    train, test = _apply_projection(train, test, cfg)
    train_split = split_by_class(train)
    order = cfg.class_order
    spc = cfg.samples_per_round_per_class
    scope = list(order)
    rounds: list[RoundReport] = []
    bank = MemoryBank(K=train.K, estimator=cfg.estimator)
    for r in range(cfg.rounds):
        t0 = time.perf_counter()
        if cfg.refit_from_cache:
            bank = MemoryBank(K=train.K, estimator=cfg.estimator)
        for cid in order:
            full = train_split[cid]
            if cfg.refit_from_cache:
                chunk = FeatureDataset(
                    K=full.K,
                    labels=full.labels[: (r + 1) * spc],
                    values=full.values[: (r + 1) * spc],
                    normalized=full.normalized,
                )
                add_class(bank, form_memory(cid, chunk, cfg.estimator, cfg.seed, cfg.threads))
                continue
            chunk = FeatureDataset(
                K=full.K,
                labels=full.labels[r * spc : (r + 1) * spc],
                values=full.values[r * spc : (r + 1) * spc],
                normalized=full.normalized,
            )
            if r == 0:
                add_class(bank, form_memory(cid, chunk, cfg.estimator, cfg.seed, cfg.threads))
            else:
                update_class(bank, cid, chunk)
        mcr, recalls, accuracy = _evaluate_round(bank, test, scope, cfg.threads)
        rounds.append(
            RoundReport(
                round_index=r + 1,
                classes=scope,
                recalls=recalls,
                mcr=mcr,
                accuracy=accuracy,
                duration_s=time.perf_counter() - t0,
            )
        )
    return EvalReport(
        config=config_to_dict(cfg),
        rounds=rounds,
        footprint=memory_footprint(bank),
        final_bank=bank,
    )


def run_protocol(train, test, config: ProtocolConfig) -> EvalReport:
    """Dispatch to the mode's runner."""
    if config.mode == "data_incremental":
        return run_data_incremental(train, test, config)
    return run_class_incremental(train, test, config)


SWEEP_AXES = ("gmm_components", "class_order", "feature_count")
_FEATURE_AXIS_TAG = 101


def sweep(train, test, base: ProtocolConfig, axis: str, values) -> list[EvalReport]:
    """One full protocol run per axis value; only the swept factor varies."""
    if axis not in SWEEP_AXES:
        raise ValidationError(f"axis must be one of {SWEEP_AXES}, got {axis!r}")
    reports = []
    for v in values:
        if axis == "gmm_components":
            cfg = replace(base, estimator=EstimatorConfig(kind="gmm", components=int(v)))
        elif axis == "class_order":
            rng = np.random.default_rng(derive_seed(int(v)))
            order = [int(c) for c in rng.permutation(train.class_ids())]
            cfg = replace(base, class_order=order)
        else:
            sub_seed = (
                base.feature_subsample[1]
                if base.feature_subsample is not None
                else derive_seed(base.seed, _FEATURE_AXIS_TAG)
            )
            cfg = replace(base, feature_subsample=(int(v), sub_seed))
        reports.append(run_protocol(train, test, cfg))
    return reports


def run_repeated(train, test, config: ProtocolConfig, seeds) -> tuple[list[EvalReport], dict]:
    """Repeat a run over seeds; summarize final MCR as mean +/- std."""
    reports = [run_protocol(train, test, replace(config, seed=int(s))) for s in seeds]
    finals = np.array([rep.final_mcr for rep in reports])
    summary = {
        "seeds": [int(s) for s in seeds],
        "final_mcr_per_seed": [float(v) for v in finals],
        "final_mcr_mean": float(finals.mean()),
        "final_mcr_std": float(finals.std()),
    }
    return reports, summary


# ---------------------------------------------------------------------------
# Report serialization


def report_json_dict(report: EvalReport) -> dict:
    """Canonical JSON form: config echo, per-round results, bank footprint.

    Wall-clock durations are deliberately absent (they break run-to-run
    byte identity); they are published in the run manifest instead.
    """
    return {
        "config": report.config,
        "rounds": [
            {
                "round": rr.round_index,
                "n_classes": rr.n_classes,
                "classes": rr.classes,
                "mcr": rr.mcr,
                "recalls": [rr.recalls[c] for c in sorted(rr.recalls)],
                "accuracy": rr.accuracy,
            }
            for rr in report.rounds
        ],
        "footprint": report.footprint,
    }


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def report_results_bytes(report: EvalReport) -> bytes:
    """Canonical bytes of the measured results (rounds + footprint).

    Excludes the config echo, so runs that are equivalent by construction
    (e.g. few-shot with shots covering every sample vs. plain
    class-incremental) compare byte-equal.
    """
    d = report_json_dict(report)
    return _dumps({"rounds": d["rounds"], "footprint": d["footprint"]}).encode()


def write_report_json(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_dumps(report_json_dict(report)))


def write_report_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("round,n_classes,mcr\n")
        for rr in report.rounds:
            fh.write(f"{rr.round_index},{rr.n_classes},{rr.mcr!r}\n")
