"""Supervised fitting of the quality head on rated reference/degraded pairs."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import DataError, NumericalError, SpatialQError
from .features import AnalysisConfig
from .pipeline import DifferenceCache, analysis_for
from .qnet import ModelParams, NetConfig, backward, forward, init_params, quantize
from .render import RenderFilterSet
from .stats import pearson

log = logging.getLogger(__name__)

MANIFEST_COLUMNS = ("id", "ref_path", "deg_path", "condition", "mos", "ci95", "hidden_ref", "split")
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class RatedPair:
    id: str
    ref_path: Path
    deg_path: Path
    condition: str
    mos: float
    ci95: float
    hidden_ref: bool
    split: str
    extra: dict = field(default_factory=dict, compare=False)

    def fields(self) -> dict:
        """Flat view used by subset filters."""
        return {
            "id": self.id, "condition": self.condition, "split": self.split,
            "hidden_ref": str(self.hidden_ref).lower(), **self.extra,
        }


def _parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes"):
        return True
    if t in ("0", "false", "no", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def load_manifest(path) -> list[RatedPair]:
    """Parse a manifest CSV; paths are resolved relative to the manifest.

    Columns beyond the required ones (e.g. ``scene``) are kept in ``extra``.
    """
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"manifest {path.name}: missing column(s) {', '.join(missing)}")
        pairs = []
        for k, row in enumerate(reader, start=1):
            try:
                mos = float(row["mos"])
                ci95 = float(row["ci95"])
                hidden = _parse_bool(row["hidden_ref"])
            except ValueError as exc:
                raise DataError(f"bad value at row {k}: {exc}") from None
            if not 0.0 <= mos <= 100.0:
                raise DataError(f"mos out of range at row {k}")
            if ci95 < 0:
                raise DataError(f"negative ci95 at row {k}")
            if row["split"] not in SPLITS:
                raise DataError(f"unknown split {row['split']!r} at row {k}")
            extra = {c: v for c, v in row.items() if c not in MANIFEST_COLUMNS and c is not None}
            pairs.append(RatedPair(
                row["id"], base / row["ref_path"], base / row["deg_path"], row["condition"],
                mos, ci95, hidden, row["split"], extra,
            ))
    return pairs


def write_manifest(rows: Sequence[dict], path, extra_columns: Sequence[str] = ()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=[*MANIFEST_COLUMNS, *extra_columns], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


# -- optimizer ---------------------------------------------------------------

@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.003
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    patience_epochs: int = 15
    max_epochs: int = 1000
    seed: int = 0

    def __post_init__(self):
        if min(self.lr, self.batch_size, self.eps_adam, self.patience_epochs, self.max_epochs) <= 0:
            raise DataError("training hyper-parameters must be positive")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise DataError("Adam betas must lie in (0, 1)")


@dataclass
class AdamState:
    m: ModelParams
    v: ModelParams
    step: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> AdamState:
        return cls(ModelParams.zeros_like(params), ModelParams.zeros_like(params))


def adam_step(params: ModelParams, grads: ModelParams, state: AdamState, hyper: TrainHyper,
              names: Sequence[str]) -> None:
    """Bias-corrected Adam update of ``names``, in place and in that order."""
    for name in names:
        if not np.all(np.isfinite(getattr(grads, name))):
            raise NumericalError(f"diverged: non-finite gradient for {name}")
    state.step += 1
    c1 = 1.0 - hyper.beta1 ** state.step
    c2 = 1.0 - hyper.beta2 ** state.step
    for name in names:
        g = getattr(grads, name)
        m = getattr(state.m, name)
        v = getattr(state.v, name)
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        p = getattr(params, name)
        p -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps_adam)


class EarlyStopping:
    """Tracks the best validation score; signals a stop after ``patience`` flat epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = -math.inf
        self.best_epoch = -1
        self.best_state = None
        self.stale = 0

    def update(self, epoch: int, value: float, state=None) -> bool:
        if value > self.best:
            self.best, self.best_epoch, self.best_state, self.stale = value, epoch, state, 0
        else:
            self.stale += 1
        return self.stale >= self.patience


@dataclass
class TrainReport:
    train_loss: list[float] = field(default_factory=list)
    val_pearson: list[float] = field(default_factory=list)
    best_epoch: int = -1
    total_steps: int = 0

    @property
    def epochs_run(self) -> int:
        return len(self.train_loss)

    def to_dict(self) -> dict:
        return {
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_val_pearson": self.val_pearson[self.best_epoch] if self.best_epoch >= 0 else None,
            "total_steps": self.total_steps,
            "train_loss": self.train_loss,
            "val_pearson": [v if math.isfinite(v) else None for v in self.val_pearson],
        }


def predict(pairs: Sequence[RatedPair], cache: DifferenceCache, params: ModelParams,
            net: NetConfig) -> np.ndarray:
    """Multi-head mean prediction per pair, on the 0-100 scale."""
    out = np.empty(len(pairs))
    for i, pair in enumerate(pairs):
        scores = [forward(cache.get(pair, k), params, net)[0] for k in range(len(cache.heads))]
        out[i] = 100.0 * float(np.mean(scores))
    return out


def _validation_pearson(pairs, cache, params, net) -> float:
    preds = predict(pairs, cache, params, net)
    try:
        return pearson(preds, [p.mos for p in pairs])
    except DataError:
        return -math.inf


def train(train_pairs: Sequence[RatedPair], val_pairs: Sequence[RatedPair],
          heads: Sequence[RenderFilterSet], net: NetConfig, hyper: TrainHyper,
          analysis: AnalysisConfig | None = None, cache: DifferenceCache | None = None,
          threads: int = 1,
          on_batch: Callable[[list[RatedPair]], None] | None = None) -> tuple[ModelParams, TrainReport]:
    """Adam on the MSE between score and mos/100, early-stopped on validation Pearson.

    Hidden-reference rows are dropped from both sets. Each example sees one
    seeded random head per epoch; validation uses every head. Returns the
    best-validation checkpoint, rounded to float32.
    """
    train_pairs = [p for p in train_pairs if not p.hidden_ref]
    val_pairs = [p for p in val_pairs if not p.hidden_ref]
    if not train_pairs:
        raise DataError("no training pairs after hidden-reference exclusion")
    if len(val_pairs) < 2 or len({p.mos for p in val_pairs}) < 2:
        raise DataError("validation set needs at least two distinct mos values")
    if cache is None:
        cache = DifferenceCache(heads, analysis or analysis_for(net), threads)
    cache.prefetch([*train_pairs, *val_pairs])

    rng = np.random.default_rng(hyper.seed)
    params = init_params(net, hyper.seed)
    state = AdamState.zeros(params)
    names = net.trainable()
    stopper = EarlyStopping(hyper.patience_epochs)
    report = TrainReport()
    n_heads = len(cache.heads)
    targets = np.array([p.mos / 100.0 for p in train_pairs])

    for epoch in range(hyper.max_epochs):
        order = rng.permutation(len(train_pairs))
        head_choice = rng.integers(n_heads, size=len(train_pairs))
        epoch_loss = 0.0
        for start in range(0, len(order), hyper.batch_size):
            batch = order[start:start + hyper.batch_size]
            if on_batch is not None:
                on_batch([train_pairs[i] for i in batch])
            grads = ModelParams.zeros_like(params)
            for i in batch:
                score, fcache = forward(cache.get(train_pairs[i], int(head_choice[i])), params, net)
                err = score - targets[i]
                epoch_loss += err * err
                g = backward(fcache, params, net, 2.0 * err / len(batch))
                for name in names:
                    getattr(grads, name)[...] += getattr(g, name)
            try:
                adam_step(params, grads, state, hyper, names)
            except NumericalError:
                raise NumericalError(f"diverged at epoch {epoch}") from None
            report.total_steps += 1
        epoch_loss /= len(train_pairs)
        if not math.isfinite(epoch_loss):
            raise NumericalError(f"diverged at epoch {epoch}")
        val_r = _validation_pearson(val_pairs, cache, params, net)
        report.train_loss.append(epoch_loss)
        report.val_pearson.append(val_r)
        log.debug("epoch %d loss %.5f val pearson %.4f", epoch, epoch_loss, val_r)
        if stopper.update(epoch, val_r, params.copy()):
            break

    report.best_epoch = stopper.best_epoch
    best = stopper.best_state if stopper.best_state is not None else params
    return quantize(best), report


# -- evaluation ----------------------------------------------------------------

@dataclass
class EvalResult:
    rows: list[dict]
    errors: list[tuple[str, str]]


def evaluate_model(pairs: Sequence[RatedPair], heads: Sequence[RenderFilterSet], params: ModelParams,
                   net: NetConfig, analysis: AnalysisConfig | None = None,
                   exclude_hidden: bool = True, threads: int = 1,
                   cache: DifferenceCache | None = None) -> EvalResult:
    """Predict every pair; per-row failures are collected rather than raised."""
    cache = cache or DifferenceCache(heads, analysis or analysis_for(net), threads)
    chosen = [p for p in pairs if not (exclude_hidden and p.hidden_ref)]
    good, errors = [], []
    for pair in chosen:
        missing = [str(p) for p in (pair.ref_path, pair.deg_path) if not Path(p).is_file()]
        if missing:
            errors.append((pair.id, f"missing file {missing[0]}"))
        else:
            good.append(pair)
    try:
        cache.prefetch(good)
    except SpatialQError:
        pass  # isolate the failing rows below
    rows = []
    for pair in good:
        try:
            pred = float(predict([pair], cache, params, net)[0])
        except SpatialQError as exc:
            errors.append((pair.id, str(exc)))
            continue
        rows.append({**pair.fields(), "pred": pred, "mos": pair.mos, "ci95": pair.ci95})
    return EvalResult(rows, errors)
