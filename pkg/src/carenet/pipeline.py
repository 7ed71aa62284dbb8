"""Per-core preprocessing and the training protocol.

Preprocessing per core follows a fixed order: cluster tissue/paraffin,
truncate to the biofingerprint region, first outlier pass, Savitzky-Golay
smoothing, EMSC against per-core tissue/paraffin references plus the shared
water-vapor model, min-max normalization, second outlier pass.

The protocol holds out one test patient per subtype, builds four
subtype-stratified folds over the remaining patients, balances training
spectra by undersampling, and trains with Adam plus a reduce-on-plateau
schedule driven by the dev loss.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .chemometrics import emsc_build_model, emsc_correct_rows, remove_outliers
from .clustering import select_paraffin, select_tissue
from .dataset import SUBTYPE_NONE, SUBTYPES, HyperCube, SpectraSet, subtype_one_hot
from .errors import DataError, NumericalError
from .model import CarenetModel, build_carenet
from .nn import Adam, PlateauScheduler, bce_loss, cce_loss, check_finite, make_rng
from .spectral import (
    BIOFINGERPRINT_BAND,
    WavenumberAxis,
    band_slice,
    minmax_normalize_rows,
    savgol_smooth,
)

__all__ = [
    "PatientRecord",
    "SplitPlan",
    "Fold",
    "TrainConfig",
    "StageCounts",
    "CoreResult",
    "FoldResult",
    "make_split",
    "undersample_balance",
    "preprocess_h2o",
    "preprocess_core",
    "preprocess_panel",
    "train_fold",
    "targets_for_head",
    "patients_from_spectraset",
]


@dataclass(frozen=True)
class PatientRecord:
    """One patient: a cancer core and an adjacent-tissue core."""

    patient_id: int
    subtype: str
    ca_core_id: int
    at_core_id: int

    def __post_init__(self):
        if self.subtype not in SUBTYPES:
            raise DataError(f"unknown subtype {self.subtype!r}")


@dataclass(frozen=True)
class Fold:
    train_patients: tuple[int, ...]
    dev_patients: tuple[int, ...]


@dataclass(frozen=True)
class SplitPlan:
    """Hold-out plus cross-validation assignment, all at patient level."""

    seed: int
    test_patients: tuple[int, ...]            # one per subtype, subtype order
    test_type_cores: tuple[tuple[int, str], ...]  # (patient_id, "CA"|"AT") pairs
    folds: tuple[Fold, ...]


@dataclass(frozen=True)
class TrainConfig:
    head: str
    epochs: int = 50
    batch_size: int = 250
    lr: float = 1e-3
    init_seed: int = 0
    shuffle_seed: int = 1
    undersample_seed: int = 2

    def __post_init__(self):
        if self.head not in ("type", "subtype"):
            raise DataError(f"unknown head {self.head!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise DataError("epochs, batch_size, and lr must be positive")


# ---------------------------------------------------------------------------
# split protocol


def make_split(patients: list[PatientRecord], seed: int) -> SplitPlan:
    """Hold out one patient per subtype, then stratify the rest into 4 folds.

    The remaining patients are dealt, subtype by subtype, round-robin into
    five slots; four slots become the dev sets (the largest slot goes last,
    giving the 21/5, 21/5, 21/5, 20/6 pattern at the 30-patient scale) and
    the fifth stays in every training set.
    """
    rng = make_rng(seed)
    by_subtype: dict[str, list[PatientRecord]] = {s: [] for s in SUBTYPES}
    for rec in patients:
        by_subtype[rec.subtype].append(rec)
    for subtype, group in by_subtype.items():
        if not group:
            raise DataError(f"no patients with subtype {subtype}")

    test: list[int] = []
    remaining: list[PatientRecord] = []
    for subtype in SUBTYPES:
        group = sorted(by_subtype[subtype], key=lambda r: r.patient_id)
        pick = int(rng.integers(len(group)))
        test.append(group[pick].patient_id)
        remaining.extend(r for i, r in enumerate(group) if i != pick)

    # type testing uses two CA cores and two AT cores among the held-out four
    order = rng.permutation(4)
    type_cores = tuple(
        (test[i], "CA" if rank < 2 else "AT")
        for rank, i in enumerate(order.tolist())
    )

    slots: list[list[int]] = [[] for _ in range(5)]
    cursor = 0
    for subtype in SUBTYPES:
        ids = [r.patient_id for r in remaining if r.subtype == subtype]
        ids = [ids[i] for i in rng.permutation(len(ids))]
        for pid in ids:
            slots[cursor % 5].append(pid)
            cursor += 1

    if len(remaining) < 4:
        raise DataError("need at least four non-test patients to build folds")
    dev_sets = [slots[1], slots[2], slots[3], slots[0]]  # largest slot last
    always_train = slots[4]
    all_ids = {r.patient_id for r in remaining}
    folds = []
    for dev in dev_sets:
        train = sorted(all_ids - set(dev))
        if not dev:
            raise DataError("a fold ended up with an empty dev set")
        folds.append(Fold(train_patients=tuple(train), dev_patients=tuple(sorted(dev))))
    del always_train  # implicitly inside every train set
    return SplitPlan(seed=seed, test_patients=tuple(test),
                     test_type_cores=type_cores, folds=tuple(folds))


def undersample_balance(labels: np.ndarray, seed: int) -> np.ndarray:
    """Indices keeping min-class-count spectra per class, original order.

    Classes already at the minority count keep every index, so balanced
    input comes back as the identity.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise DataError("cannot balance an empty label vector")
    classes, counts = np.unique(labels, return_counts=True)
    target = int(counts.min())
    rng = make_rng(seed)
    kept = []
    for cls in classes:
        idx = np.flatnonzero(labels == cls)
        if idx.size > target:
            idx = rng.choice(idx, size=target, replace=False)
        kept.append(idx)
    return np.sort(np.concatenate(kept))


# ---------------------------------------------------------------------------
# preprocessing


@dataclass
class StageCounts:
    """Spectrum counts surviving each stage; must be non-increasing."""

    tissue_pixels: int
    after_outlier1: int
    after_emsc: int
    after_normalize: int
    after_outlier2: int

    def as_dict(self) -> dict:
        return {
            "tissue_pixels": self.tissue_pixels,
            "after_outlier1": self.after_outlier1,
            "after_emsc": self.after_emsc,
            "after_normalize": self.after_normalize,
            "after_outlier2": self.after_outlier2,
        }


@dataclass
class CoreResult:
    """Preprocessed tissue spectra of one core plus provenance and counts."""

    core_id: int
    patient_id: int
    core_type: str
    subtype: str
    spectra: np.ndarray  # (n, 467) float32 in [0, 1]
    rows: np.ndarray
    cols: np.ndarray
    counts: StageCounts
    tissue_plausible: bool
    paraffin_plausible: bool
    tissue_mask: np.ndarray | None = None    # (rows, cols) bool, for PGM export
    paraffin_mask: np.ndarray | None = None


def _outlier_pass(rows: np.ndarray, n_pcs: int, confidence: float) -> np.ndarray:
    """Keep mask from one T2/Q pass; degenerate variance keeps everything.

    Identical spectra give every point the same (zero) statistics, so there
    is nothing to reject; the pass is skipped rather than failed.
    """
    try:
        with warnings.catch_warnings():
            # near-identical spectra legitimately produce zero-variance
            # components here; the degenerate outcome is handled below
            warnings.filterwarnings("ignore", message="excluding zero-variance")
            _, report = remove_outliers(rows, n_pcs=n_pcs, confidence=confidence)
        return report.kept
    except NumericalError:
        return np.ones(rows.shape[0], dtype=bool)
    except DataError:
        # fewer rows than components: not enough data to model, keep all
        return np.ones(rows.shape[0], dtype=bool)


def preprocess_h2o(h2o_cube: HyperCube, n_outlier_pcs: int = 10,
                   confidence: float = 0.95) -> np.ndarray:
    """Environment-image spectra: truncate, outlier pass, smooth."""
    sel = band_slice(h2o_cube.axis, BIOFINGERPRINT_BAND)
    rows = h2o_cube.spectra_matrix().astype(np.float64)[:, sel]
    rows = rows[_outlier_pass(rows, n_outlier_pcs, confidence)]
    return savgol_smooth(rows)


def preprocess_core(cube: HyperCube, h2o_spectra: np.ndarray, seed: int = 0,
                    n_outlier_pcs: int = 10, confidence: float = 0.95) -> CoreResult:
    """Run the full per-core chain; raises DataError when no tissue survives."""
    tissue_mask = select_tissue(cube, seed=seed)
    paraffin_mask = select_paraffin(cube, tissue_mask, seed=seed)
    if not tissue_mask.mask.any():
        raise DataError(f"core {cube.core_id}: clustering found no tissue pixels")
    if not paraffin_mask.mask.any():
        raise DataError(f"core {cube.core_id}: clustering found no paraffin pixels")

    sel = band_slice(cube.axis, BIOFINGERPRINT_BAND)
    flat = cube.spectra_matrix().astype(np.float64)
    tissue_idx = np.flatnonzero(tissue_mask.mask.ravel())
    tissue = flat[tissue_idx][:, sel]
    paraffin = flat[paraffin_mask.mask.ravel()][:, sel]
    n0 = tissue.shape[0]

    keep1 = _outlier_pass(tissue, n_outlier_pcs, confidence)
    tissue = tissue[keep1]
    tissue_idx = tissue_idx[keep1]
    paraffin = paraffin[_outlier_pass(paraffin, n_outlier_pcs, confidence)]
    n1 = tissue.shape[0]
    if n1 == 0:
        raise DataError(f"core {cube.core_id}: no tissue spectra survived outlier removal")

    tissue = savgol_smooth(tissue)
    paraffin = savgol_smooth(paraffin)

    values = cube.axis.values
    sub_axis = WavenumberAxis(float(values[sel.start]), float(values[sel.stop - 1]),
                              sel.stop - sel.start)
    emsc = emsc_build_model(tissue.mean(axis=0), paraffin, h2o_spectra, sub_axis)
    corrected, _, usable = emsc_correct_rows(tissue, emsc)
    corrected = corrected[usable]
    tissue_idx = tissue_idx[usable]
    n2 = corrected.shape[0]
    if n2 == 0:
        raise DataError(f"core {cube.core_id}: EMSC flagged every spectrum as non-tissue")

    normalized, keep_norm = minmax_normalize_rows(corrected)
    normalized = normalized[keep_norm]
    tissue_idx = tissue_idx[keep_norm]
    n3 = normalized.shape[0]
    if n3 == 0:
        raise DataError(f"core {cube.core_id}: all spectra degenerate after normalization")

    keep2 = _outlier_pass(normalized, n_outlier_pcs, confidence)
    normalized = normalized[keep2]
    tissue_idx = tissue_idx[keep2]
    n4 = normalized.shape[0]
    if n4 == 0:
        raise DataError(f"core {cube.core_id}: second outlier pass rejected everything")

    counts = StageCounts(tissue_pixels=n0, after_outlier1=n1, after_emsc=n2,
                         after_normalize=n3, after_outlier2=n4)
    return CoreResult(
        core_id=cube.core_id,
        patient_id=cube.patient_id,
        core_type=cube.core_type,
        subtype=cube.subtype,
        spectra=normalized.astype(np.float32),
        rows=(tissue_idx // cube.cols).astype(np.int32),
        cols=(tissue_idx % cube.cols).astype(np.int32),
        counts=counts,
        tissue_plausible=tissue_mask.plausible,
        paraffin_plausible=paraffin_mask.plausible,
        tissue_mask=tissue_mask.mask,
        paraffin_mask=paraffin_mask.mask,
    )


def preprocess_panel(cubes: list[HyperCube], h2o_cube: HyperCube, seed: int = 0,
                     jobs: int = 1, n_outlier_pcs: int = 10, confidence: float = 0.95):
    """Preprocess every core against a shared H2O model.

    Degenerate cores are reported and skipped, not fatal. Returns
    (SpectraSet, per-core CoreResult dict, skipped list of (core_id, reason)).
    """
    h2o = preprocess_h2o(h2o_cube, n_outlier_pcs, confidence)

    def run(cube: HyperCube):
        return preprocess_core(cube, h2o, seed=seed,
                               n_outlier_pcs=n_outlier_pcs, confidence=confidence)

    results: list[CoreResult | Exception] = [None] * len(cubes)  # type: ignore[list-item]
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(run, cube) for cube in cubes]
            for i, future in enumerate(futures):
                try:
                    results[i] = future.result()
                except (DataError, NumericalError) as exc:
                    results[i] = exc
    else:
        for i, cube in enumerate(cubes):
            try:
                results[i] = run(cube)
            except (DataError, NumericalError) as exc:
                results[i] = exc

    kept: list[CoreResult] = []
    skipped: list[tuple[int, str]] = []
    for cube, res in zip(cubes, results):
        if isinstance(res, Exception):
            skipped.append((cube.core_id, str(res)))
        else:
            kept.append(res)
    if not kept:
        raise DataError("every core failed preprocessing")

    n = sum(r.spectra.shape[0] for r in kept)
    sel = band_slice(cubes[0].axis, BIOFINGERPRINT_BAND)
    values = cubes[0].axis.values
    axis = WavenumberAxis(float(values[sel.start]), float(values[sel.stop - 1]),
                          sel.stop - sel.start)
    spectra = np.concatenate([r.spectra for r in kept])
    sset = SpectraSet(
        spectra=spectra,
        patient_id=np.concatenate([np.full(len(r.rows), r.patient_id, np.int32) for r in kept]),
        core_id=np.concatenate([np.full(len(r.rows), r.core_id, np.int32) for r in kept]),
        row=np.concatenate([r.rows for r in kept]),
        col=np.concatenate([r.cols for r in kept]),
        core_type=np.concatenate(
            [np.full(len(r.rows), 1 if r.core_type == "CA" else 0, np.int8) for r in kept]),
        subtype=np.concatenate(
            [np.full(len(r.rows),
                     SUBTYPES.index(r.subtype) if r.core_type == "CA" else SUBTYPE_NONE,
                     np.int8) for r in kept]),
        axis=axis,
    )
    assert len(sset) == n
    results = {r.core_id: r for r in kept}
    return sset, results, skipped


def patients_from_spectraset(sset: SpectraSet) -> list[PatientRecord]:
    """Reconstruct patient records; every patient must have one CA and one AT core."""
    records = []
    for pid in np.unique(sset.patient_id):
        rows = sset.patient_id == pid
        ca_cores = np.unique(sset.core_id[rows & (sset.core_type == 1)])
        at_cores = np.unique(sset.core_id[rows & (sset.core_type == 0)])
        if len(ca_cores) != 1 or len(at_cores) != 1:
            raise DataError(
                f"patient {pid} must have exactly one CA and one AT core, "
                f"got {len(ca_cores)}/{len(at_cores)}"
            )
        subt = np.unique(sset.subtype[rows & (sset.core_type == 1)])
        if len(subt) != 1:
            raise DataError(f"patient {pid} has inconsistent subtype labels")
        records.append(PatientRecord(patient_id=int(pid), subtype=SUBTYPES[int(subt[0])],
                                     ca_core_id=int(ca_cores[0]), at_core_id=int(at_cores[0])))
    return records


# ---------------------------------------------------------------------------
# training


def targets_for_head(sset: SpectraSet, head: str, mask: np.ndarray):
    """(class labels, training targets) for the spectra selected by mask.

    The subtype head sees CA spectra only; requesting it on data without any
    cancer spectra is an error.
    """
    if head == "type":
        labels = sset.core_type[mask].astype(np.int64)
        return labels, labels.astype(np.float32)
    ca = mask & (sset.core_type == 1)
    if not ca.any():
        raise DataError("subtype head needs CA spectra, found none in selection")
    labels = sset.subtype[ca].astype(np.int64)
    return labels, subtype_one_hot(labels)


def head_mask(sset: SpectraSet, head: str, patient_ids) -> np.ndarray:
    """Spectra selection for a patient list under the given head."""
    mask = np.isin(sset.patient_id, np.asarray(list(patient_ids), dtype=np.int32))
    if head == "subtype":
        mask &= sset.core_type == 1
    return mask


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_accuracy: float
    lr: float


@dataclass
class FoldResult:
    model_final: CarenetModel
    model_best: CarenetModel
    history: list[EpochRecord]
    best_epoch: int

    def history_dicts(self) -> list[dict]:
        return [vars(rec).copy() for rec in self.history]


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled batch index arrays covering every sample exactly once."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start:start + batch_size]


def _forward_chunked(model: CarenetModel, x: np.ndarray, chunk: int = 2048) -> np.ndarray:
    outs = [model.forward(x[i:i + chunk]) for i in range(0, x.shape[0], chunk)]
    return np.concatenate(outs)


def _loss_and_accuracy(probs: np.ndarray, labels: np.ndarray, targets, head: str):
    if head == "type":
        loss, _ = bce_loss(probs[:, 0], targets)
        pred = (probs[:, 0] >= 0.5).astype(np.int64)
    else:
        loss, _ = cce_loss(probs, targets)
        pred = probs.argmax(axis=1)
    return loss, float((pred == labels).mean())


def train_fold(config: TrainConfig, train_x: np.ndarray, train_labels: np.ndarray,
               train_targets: np.ndarray, dev_x: np.ndarray, dev_labels: np.ndarray,
               dev_targets: np.ndarray) -> FoldResult:
    """Train one fold; deterministic for fixed seeds.

    train_x/dev_x are (n, 467) float32 spectra; targets are 0/1 floats for
    the type head and one-hot rows for the subtype head.
    """
    if train_x.shape[0] == 0 or dev_x.shape[0] == 0:
        raise DataError("train and dev sets must be non-empty")
    model = build_carenet(config.head, seed=config.init_seed)
    optimizer = Adam(model.parameters(), lr=config.lr)
    scheduler = PlateauScheduler(lr=config.lr)
    rng = make_rng(config.shuffle_seed)

    history: list[EpochRecord] = []
    best_loss = np.inf
    best_values = model.parameter_values()
    best_epoch = 0
    for epoch in range(1, config.epochs + 1):
        losses = []
        weights = []
        for idx in _epoch_batches(train_x.shape[0], config.batch_size, rng):
            probs = model.forward(train_x[idx])
            check_finite("training forward pass", probs)
            if config.head == "type":
                loss, grad = bce_loss(probs[:, 0], train_targets[idx])
                model.backward(grad[:, None])
            else:
                loss, grad = cce_loss(probs, train_targets[idx])
                model.backward(grad)
            check_finite("training loss", loss)
            optimizer.step()
            losses.append(loss)
            weights.append(idx.size)
        train_loss = float(np.average(losses, weights=weights))

        dev_probs = _forward_chunked(model, dev_x)
        check_finite("dev forward pass", dev_probs)
        dev_loss, dev_acc = _loss_and_accuracy(dev_probs, dev_labels, dev_targets, config.head)
        lr = scheduler.step(dev_loss)
        optimizer.lr = lr
        history.append(EpochRecord(epoch=epoch, train_loss=train_loss,
                                   dev_loss=dev_loss, dev_accuracy=dev_acc, lr=lr))
        if dev_loss < best_loss:
            best_loss = dev_loss
            best_values = model.parameter_values()
            best_epoch = epoch

    model_best = build_carenet(config.head, seed=config.init_seed)
    model_best.set_parameter_values(best_values)
    return FoldResult(model_final=model, model_best=model_best,
                      history=history, best_epoch=best_epoch)
