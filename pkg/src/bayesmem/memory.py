"""Per-class knowledge: form, hold, update, and persist density banks.

A ClassMemory is one class's K fitted 1-D models plus its sample count; a
MemoryBank maps class ids to memories and is the classifier's entire
state.  GMM memories also carry responsibility-weighted sufficient
statistics (count, sum, sum of squares) per (feature, component) so new
data of an existing class can be absorbed without retaining raw vectors.

Bank file format ("BMB1", version 1, little-endian):
  magic "BMB1" | u32 version | u8 kind (1=gmm, 2=kde) | u32 K
  | u32 S_requested (gmm) or u8 fixed_bw_flag + f64 bandwidth (kde)
  | u32 n_classes
  | class table: n_classes x (u32 class_id, u64 count, u32 S_eff, u64 block_bytes)
  | per-class blocks, classes in ascending id order:
      gmm: weights, mus, sigmas, counts, sums, sumsqs   (each K*S_eff f64)
      kde: bandwidths (K f64), centers (count*K f64)
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from bayesmem import backend
from bayesmem.density import (
    BANDWIDTH_FLOOR,
    EmConfig,
    Gmm1D,
    Kde1D,
    effective_components,
    gmm_from_arrays,
)
from bayesmem.features import FeatureDataset
from bayesmem.utils import DataFormatError, ValidationError, derive_seed, run_chunked

BANK_MAGIC = b"BMB1"
BANK_VERSION = 1
_KIND_TAGS = {"gmm": 1, "kde": 2}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}

# Feature dimensions per fitting chunk.  Fixed: results must not depend on
# the thread cap, only chunk scheduling may.
FIT_CHUNK = 256


@dataclass(frozen=True)
class EstimatorConfig:
    """Which density estimator a bank uses, with its knob.

    kind "gmm": `components` is the requested S (may be reduced per class
    when a class has very few samples).  kind "kde": `bandwidth` fixes the
    kernel width for every dimension; None derives it per dimension by
    Silverman's rule.
    """

    kind: str
    components: int = 2
    bandwidth: Optional[float] = None

    def __post_init__(self):
        if self.kind not in _KIND_TAGS:
            raise ValidationError(f"estimator kind must be gmm or kde, got {self.kind!r}")
        if self.kind == "gmm" and self.components < 1:
            raise ValidationError(f"components must be >= 1, got {self.components}")
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise ValidationError(f"bandwidth must be positive, got {self.bandwidth}")


@dataclass
class ClassMemory:
    """All stored knowledge for one class."""

    class_id: int
    count: int
    kind: str
    # GMM mode: (K, S_eff) arrays; params are always the M-step image of the
    # sufficient statistics.
    weights: Optional[np.ndarray] = None
    mus: Optional[np.ndarray] = None
    sigmas: Optional[np.ndarray] = None
    suff_counts: Optional[np.ndarray] = None
    suff_sums: Optional[np.ndarray] = None
    suff_sumsqs: Optional[np.ndarray] = None
    # KDE mode: stored sample matrix and per-dimension kernel widths.
    centers: Optional[np.ndarray] = None  # (count, K)
    bandwidths: Optional[np.ndarray] = None  # (K,)

    @property
    def K(self) -> int:
        if self.kind == "gmm":
            return self.mus.shape[0]
        return self.centers.shape[1]

    @property
    def n_components(self) -> int:
        return self.mus.shape[1] if self.kind == "gmm" else 0

    def model(self, k: int):
        """The 1-D density model of feature dimension k."""
        if self.kind == "gmm":
            return gmm_from_arrays(self.weights[k], self.mus[k], self.sigmas[k])
        return Kde1D(centers=self.centers[:, k].copy(), bandwidth=float(self.bandwidths[k]))

    @property
    def models(self) -> list:
        return [self.model(k) for k in range(self.K)]


@dataclass
class MemoryBank:
    """Everything learned so far: per-class memories plus the estimator contract."""

    K: int
    estimator: EstimatorConfig
    classes: dict[int, ClassMemory] = field(default_factory=dict)

    @property
    def total_count(self) -> int:
        return sum(cm.count for cm in self.classes.values())

    def class_ids(self) -> list[int]:
        return sorted(self.classes)

    def __contains__(self, class_id: int) -> bool:
        return class_id in self.classes


def feature_seed(seed: int, class_id: int, k: int) -> int:
    """Deterministic per-feature fitting seed: a stable hash of (seed, class, dim)."""
    return derive_seed(seed, class_id, k)


def _check_records(class_id: int, dataset: FeatureDataset):
    if len(dataset) == 0:
        raise ValidationError(f"class {class_id}: no records to fit")
    if not dataset.normalized:
        raise ValidationError(f"class {class_id}: records must be L2-normalized first")
    if not np.all(dataset.labels == class_id):
        found = sorted(int(c) for c in np.unique(dataset.labels))
        raise ValidationError(f"class {class_id}: mixed labels in records {found}")


def _fit_gmm_arrays(xt, s_eff, seeds, config: EmConfig, threads: int):
    """Fit per-dimension GMMs over chunked dimension ranges.

    `seeds` are the per-feature seeds (one per dimension); the quantile
    initializer is deterministic so they do not influence the fit today,
    but they are derived and threaded here so a stochastic initializer
    would stay reproducible.
    """
    k = xt.shape[0]
    weights = np.empty((k, s_eff))
    mus = np.empty((k, s_eff))
    sigmas = np.empty((k, s_eff))
    counts = np.empty((k, s_eff))
    sums = np.empty((k, s_eff))
    sumsqs = np.empty((k, s_eff))

    def fit_chunk(start, stop):
        out = backend.gmm_fit_batch(
            xt[start:stop],
            s_eff,
            config.max_iter,
            config.tol,
            config.sigma_floor,
            config.rescue_frac,
        )
        return start, stop, out

    for start, stop, out in run_chunked(fit_chunk, k, FIT_CHUNK, threads):
        weights[start:stop] = out["weights"]
        mus[start:stop] = out["mus"]
        sigmas[start:stop] = out["sigmas"]
        counts[start:stop] = out["counts"]
        sums[start:stop] = out["sums"]
        sumsqs[start:stop] = out["sumsqs"]
    return weights, mus, sigmas, counts, sums, sumsqs


def _kde_bandwidths(values: np.ndarray, estimator: EstimatorConfig) -> np.ndarray:
    k = values.shape[1]
    if estimator.bandwidth is not None:
        return np.full(k, max(float(estimator.bandwidth), BANDWIDTH_FLOOR))
    n = values.shape[0]
    std = np.sqrt(np.mean((values - values.mean(axis=0)) ** 2, axis=0))
    return np.maximum(1.06 * std * n ** (-0.2), BANDWIDTH_FLOOR)


def form_memory(
    class_id: int,
    dataset: FeatureDataset,
    estimator: EstimatorConfig,
    seed: int = 0,
    threads: int = 1,
    em_config: EmConfig = EmConfig(),
) -> ClassMemory:
    """Fit one density model per feature dimension over a class's records."""
    _check_records(class_id, dataset)
    n = len(dataset)
    if estimator.kind == "gmm":
        s_eff = effective_components(n, estimator.components)
        xt = np.ascontiguousarray(dataset.values.T)
        seeds = [feature_seed(seed, class_id, k) for k in range(dataset.K)]
        w, mu, sg, c, sm, sq = _fit_gmm_arrays(xt, s_eff, seeds, em_config, threads)
        return ClassMemory(
            class_id=class_id,
            count=n,
            kind="gmm",
            weights=w,
            mus=mu,
            sigmas=sg,
            suff_counts=c,
            suff_sums=sm,
            suff_sumsqs=sq,
        )
    return ClassMemory(
        class_id=class_id,
        count=n,
        kind="kde",
        centers=dataset.values.copy(),
        bandwidths=_kde_bandwidths(dataset.values, estimator),
    )


def add_class(bank: MemoryBank, memory: ClassMemory) -> MemoryBank:
    """Insert a new class's memory; never touches existing classes.

    Duplicate ids are an error: merging data into an existing class is the
    explicit data-incremental path (update_class), never a silent side
    effect of class-incremental learning.
    """
    if memory.class_id in bank.classes:
        raise ValidationError(f"class {memory.class_id} already learned; use update_class")
    if memory.K != bank.K:
        raise ValidationError(f"dimension mismatch: bank K={bank.K}, memory K={memory.K}")
    if memory.kind != bank.estimator.kind:
        raise ValidationError(
            f"estimator mismatch: bank {bank.estimator.kind}, memory {memory.kind}"
        )
    bank.classes[memory.class_id] = memory
    return bank


def _gmm_mstep(counts, sums, sumsqs, sigma_floor):
    total = counts.sum(axis=1, keepdims=True)
    weights = counts / total
    safe = np.maximum(counts, 1e-300)
    mus = sums / safe
    var = np.maximum(sumsqs / safe - mus * mus, 0.0)
    sigmas = np.maximum(np.sqrt(var), sigma_floor)
    return weights, mus, sigmas


def _canonical_sort(weights, mus, sigmas, counts, sums, sumsqs):
    order = np.lexsort((weights, sigmas, mus), axis=1)
    rows = np.arange(mus.shape[0])[:, None]
    return (
        weights[rows, order],
        mus[rows, order],
        sigmas[rows, order],
        counts[rows, order],
        sums[rows, order],
        sumsqs[rows, order],
    )


def update_class(
    bank: MemoryBank,
    class_id: int,
    dataset: FeatureDataset,
    em_config: EmConfig = EmConfig(),
) -> MemoryBank:
    """Absorb new records of an existing class (data-incremental step).

    GMM mode runs one incremental EM step: an E-pass over the new batch
    under the current models, a merge into the stored sufficient
    statistics, and an M-step from the merged accumulators.  Exact for
    single-component models; an approximation to a full refit otherwise.
    KDE mode appends the new values and re-derives bandwidths.  The class
    entry is swapped in whole, so concurrent readers never see a
    half-updated class.
    """
    if class_id not in bank.classes:
        raise ValidationError(f"class {class_id} not in bank; use form_memory + add_class")
    if len(dataset) == 0:
        return bank
    _check_records(class_id, dataset)
    if dataset.K != bank.K:
        raise ValidationError(f"dimension mismatch: bank K={bank.K}, records K={dataset.K}")
    old = bank.classes[class_id]
    n_new = len(dataset)

    if old.kind == "gmm":
        c_new, s_new, q_new = backend.gmm_resp_stats(
            dataset.values, old.weights, old.mus, old.sigmas
        )
        counts = old.suff_counts + c_new
        sums = old.suff_sums + s_new
        sumsqs = old.suff_sumsqs + q_new
        weights, mus, sigmas = _gmm_mstep(counts, sums, sumsqs, em_config.sigma_floor)
        weights, mus, sigmas, counts, sums, sumsqs = _canonical_sort(
            weights, mus, sigmas, counts, sums, sumsqs
        )
        updated = ClassMemory(
            class_id=class_id,
            count=old.count + n_new,
            kind="gmm",
            weights=weights,
            mus=mus,
            sigmas=sigmas,
            suff_counts=counts,
            suff_sums=sums,
            suff_sumsqs=sumsqs,
        )
    else:
        centers = np.vstack([old.centers, dataset.values])
        updated = ClassMemory(
            class_id=class_id,
            count=old.count + n_new,
            kind="kde",
            centers=centers,
            bandwidths=_kde_bandwidths(centers, bank.estimator),
        )
    bank.classes[class_id] = updated
    return bank


def serialize_class_memory(cm: ClassMemory) -> bytes:
    """Canonical bytes of one class's stored knowledge (id, count, parameters)."""
    head = struct.pack("<IQI", cm.class_id, cm.count, cm.n_components)
    if cm.kind == "gmm":
        block = b"".join(
            np.ascontiguousarray(a, dtype="<f8").tobytes()
            for a in (cm.weights, cm.mus, cm.sigmas, cm.suff_counts, cm.suff_sums, cm.suff_sumsqs)
        )
    else:
        block = (
            np.ascontiguousarray(cm.bandwidths, dtype="<f8").tobytes()
            + np.ascontiguousarray(cm.centers, dtype="<f8").tobytes()
        )
    return head + block


def bank_to_bytes(bank: MemoryBank) -> bytes:
    """Serialize a bank; classes in ascending id order (canonical form)."""
    parts = [BANK_MAGIC, struct.pack("<IBI", BANK_VERSION, _KIND_TAGS[bank.estimator.kind], bank.K)]
    if bank.estimator.kind == "gmm":
        parts.append(struct.pack("<I", bank.estimator.components))
    else:
        fixed = bank.estimator.bandwidth is not None
        parts.append(struct.pack("<Bd", int(fixed), bank.estimator.bandwidth or 0.0))
    ids = bank.class_ids()
    parts.append(struct.pack("<I", len(ids)))
    blocks = []
    for cid in ids:
        cm = bank.classes[cid]
        payload = serialize_class_memory(cm)
        block = payload[16:]  # strip the (id, count, S) head; it lives in the table
        parts.append(struct.pack("<IQIQ", cid, cm.count, cm.n_components, len(block)))
        blocks.append(block)
    parts.extend(blocks)
    return b"".join(parts)


def save_bank(bank: MemoryBank, path) -> None:
    data = bank_to_bytes(bank)
    with open(path, "wb") as fh:
        fh.write(data)


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.off + size > len(self.data):
            raise DataFormatError(f"{self.path}: truncated bank file")
        vals = struct.unpack_from(fmt, self.data, self.off)
        self.off += size
        return vals

    def array(self, count: int) -> np.ndarray:
        size = 8 * count
        if self.off + size > len(self.data):
            raise DataFormatError(f"{self.path}: truncated bank file")
        arr = np.frombuffer(self.data, dtype="<f8", count=count, offset=self.off).copy()
        self.off += size
        return arr


def load_bank(path) -> MemoryBank:
    """Read a bank file; lossless inverse of save_bank."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != BANK_MAGIC:
        raise DataFormatError(f"{path}: not a memory bank file (bad magic)")
    rd = _Reader(data, path)
    rd.off = 4
    (version, tag, k) = rd.take("<IBI")
    if version != BANK_VERSION:
        raise DataFormatError(f"{path}: unsupported bank version {version}")
    if tag not in _TAG_KINDS:
        raise DataFormatError(f"{path}: unknown estimator tag {tag}")
    kind = _TAG_KINDS[tag]
    if kind == "gmm":
        (components,) = rd.take("<I")
        estimator = EstimatorConfig(kind="gmm", components=components)
    else:
        fixed, bw = rd.take("<Bd")
        estimator = EstimatorConfig(kind="kde", bandwidth=bw if fixed else None)
    (n_classes,) = rd.take("<I")
    table = [rd.take("<IQIQ") for _ in range(n_classes)]
    bank = MemoryBank(K=k, estimator=estimator)
    for cid, count, s_eff, block_bytes in table:
        start = rd.off
        if kind == "gmm":
            expect = 6 * k * s_eff * 8
            if block_bytes != expect:
                raise DataFormatError(f"{path}: class {cid} block size mismatch")
            w = rd.array(k * s_eff).reshape(k, s_eff)
            mu = rd.array(k * s_eff).reshape(k, s_eff)
            sg = rd.array(k * s_eff).reshape(k, s_eff)
            c = rd.array(k * s_eff).reshape(k, s_eff)
            sm = rd.array(k * s_eff).reshape(k, s_eff)
            sq = rd.array(k * s_eff).reshape(k, s_eff)
            cm = ClassMemory(
                class_id=cid, count=count, kind="gmm",
                weights=w, mus=mu, sigmas=sg,
                suff_counts=c, suff_sums=sm, suff_sumsqs=sq,
            )
        else:
            expect = (k + count * k) * 8
            if block_bytes != expect:
                raise DataFormatError(f"{path}: class {cid} block size mismatch")
            bw_arr = rd.array(k)
            centers = rd.array(count * k).reshape(count, k)
            cm = ClassMemory(
                class_id=cid, count=count, kind="kde", centers=centers, bandwidths=bw_arr
            )
        assert rd.off - start == block_bytes
        bank.classes[cid] = cm
    if rd.off != len(data):
        raise DataFormatError(f"{path}: {len(data) - rd.off} trailing bytes")
    return bank


def memory_footprint(bank: MemoryBank) -> dict:
    """Exact stored-number counts, per class and total.

    GMM classes store 3*S_eff*K model parameters (weights included; the
    compact nominal figure of 2*S*K omits them) plus 3*S_eff*K sufficient
    statistics for incremental updates.  KDE classes store count*K kernel
    centers plus the bandwidths (one per dimension under Silverman's rule,
    a single shared value when fixed).
    """
    per_class = {}
    for cid in bank.class_ids():
        cm = bank.classes[cid]
        if cm.kind == "gmm":
            params = 3 * cm.n_components * cm.K
            entry = {"param_reals": params, "suffstat_reals": params, "integers": 1}
        else:
            bw_reals = 1 if bank.estimator.bandwidth is not None else cm.K
            entry = {
                "param_reals": cm.count * cm.K + bw_reals,
                "center_reals": cm.count * cm.K,
                "bandwidth_reals": bw_reals,
                "suffstat_reals": 0,
                "integers": 1,
            }
        per_class[cid] = entry
    return {
        "K": bank.K,
        "estimator": bank.estimator.kind,
        "n_classes": len(per_class),
        "per_class": per_class,
        "total_param_reals": sum(e["param_reals"] for e in per_class.values()),
        "total_suffstat_reals": sum(e["suffstat_reals"] for e in per_class.values()),
        "total_integers": len(per_class),
    }
