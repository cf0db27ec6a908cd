"""Minibatch training with per-epoch validation and best-checkpoint retention."""

import copy
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ..pipeline.pairs import make_batches, split_train_val
from ..tensor import DTYPE, Tensor, bce_loss, optimizer_step, take_rows

log = logging.getLogger(__name__)

VALIDATION_FRACTION = 0.15
FEATURE_CHUNK = 64


class TrainingDivergedError(FloatingPointError):
    """The loss or a gradient stopped being finite."""

    def __init__(self, epoch, batch, detail="loss is not finite"):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}: {detail}")
        self.epoch = epoch
        self.batch = batch


class PairDataset:
    """Training pairs together with the runs their frames come from."""

    def __init__(self, pairs, runs):
        if isinstance(runs, dict):
            self.runs = dict(runs)
        else:
            self.runs = {r.key: r for r in runs}
        self.pairs = list(pairs)
        missing = {k for p in self.pairs for k in (p.ref_run, p.test_run)} - set(self.runs)
        if missing:
            raise KeyError(f"pairs reference runs that were not supplied: {sorted(missing)}")

    def __len__(self):
        return len(self.pairs)

    @property
    def labels(self):
        return np.array([p.label for p in self.pairs], np.int64)

    def subset(self, pairs):
        return PairDataset(pairs, self.runs)

    def image(self, run_key, index):
        return self.runs[run_key].images[index]

    def frame_index(self, pairs):
        """Unique (run, frame) keys in first-seen order plus B x T row indices for both windows."""
        slots = {}
        ref_rows = np.empty((len(pairs), 10), np.intp)
        test_rows = np.empty((len(pairs), 10), np.intp)
        for b, p in enumerate(pairs):
            for rows, run, frames in ((ref_rows, p.ref_run, p.ref_frames()), (test_rows, p.test_run, p.test_frames())):
                for t, i in enumerate(frames):
                    rows[b, t] = slots.setdefault((run, i), len(slots))
        return list(slots), ref_rows, test_rows

    def stack(self, keys):
        return np.stack([self.image(run, i) for run, i in keys]).astype(DTYPE, copy=False)

    def windows(self, pairs=None):
        """Dense B x 2 x T x C x H x W array of the pairs' windows."""
        pairs = self.pairs if pairs is None else pairs
        out = []
        for p in pairs:
            ref = np.stack([self.image(p.ref_run, i) for i in p.ref_frames()])
            test = np.stack([self.image(p.test_run, i) for i in p.test_frames()])
            out.append(np.stack([ref, test]))
        return np.stack(out).astype(DTYPE, copy=False)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    val_loss: float
    val_accuracy: float
    batches: int


@dataclass
class TrainingHistory:
    epochs: list = field(default_factory=list)
    batch_losses: list = field(default_factory=list)
    best_epoch: int = -1
    best_val_accuracy: float = -1.0

    def to_dict(self):
        return {
            "epochs": [vars(e) for e in self.epochs],
            "batch_losses": list(self.batch_losses),
            "best_epoch": self.best_epoch,
            "best_val_accuracy": self.best_val_accuracy,
        }

    @classmethod
    def from_dict(cls, d):
        return cls([EpochRecord(**e) for e in d.get("epochs", [])], list(d.get("batch_losses", [])),
                   d.get("best_epoch", -1), d.get("best_val_accuracy", -1.0))


def _snapshot(model):
    p = model.params
    return (
        {name: t.data.copy() for name, t in p},
        [s.copy() for s in model.bn_states],
        copy.deepcopy(p.first_moment),
        copy.deepcopy(p.second_moment),
        p.step_count,
    )


def _restore(model, snap):
    values, bn, m1, m2, steps = snap
    for name, t in model.params:
        t.data[...] = values[name]
    model.bn_states[:] = [s.copy() for s in bn]
    model.params.first_moment = copy.deepcopy(m1)
    model.params.second_moment = copy.deepcopy(m2)
    model.params.step_count = steps


def train_step(model, dataset, pairs, learning_rate, optimizer="adam"):
    """One optimizer step on a batch; returns (loss, probabilities).

    Every distinct frame of the batch is embedded once, so batchnorm
    statistics are taken over the batch's unique frames.
    """
    keys, ref_rows, test_rows = dataset.frame_index(pairs)
    feats = model.embed(dataset.stack(keys), training=True)
    p = model.head(take_rows(feats, ref_rows), take_rows(feats, test_rows))
    loss = bce_loss(p, [q.label for q in pairs])
    model.params.zero_grad()
    if math.isfinite(loss.item()):
        loss.backward()
        optimizer_step(model.params, optimizer, learning_rate)
    return loss.item(), p.data.copy()


def predict_pairs(model, dataset, pairs=None):
    """Inference-mode probabilities; each distinct frame is embedded once."""
    pairs = dataset.pairs if pairs is None else pairs
    if not pairs:
        return np.zeros(0, DTYPE)
    keys, ref_rows, test_rows = dataset.frame_index(pairs)
    feats = np.concatenate([model.extract_features(dataset.stack(keys[i:i + FEATURE_CHUNK]))
                            for i in range(0, len(keys), FEATURE_CHUNK)])
    return np.concatenate([model.match_features(feats[ref_rows[i:i + FEATURE_CHUNK]], feats[test_rows[i:i + FEATURE_CHUNK]])
                           for i in range(0, len(pairs), FEATURE_CHUNK)])


def evaluate(model, dataset, pairs=None):
    """(mean BCE loss, accuracy) over pairs, in inference mode."""
    pairs = dataset.pairs if pairs is None else pairs
    if not pairs:
        return float("nan"), float("nan")
    p = predict_pairs(model, dataset, pairs)
    y = np.array([q.label for q in pairs], DTYPE)
    loss = bce_loss(Tensor(p), y).item()
    acc = float(np.mean((p > 0.5) == (y == 1)))
    return loss, acc


def train(model, dataset, validation=None, epochs=None, seed=None, progress=None):
    """Fit ``model`` in place and return its :class:`TrainingHistory`.

    ``validation`` is a list of pairs (drawn from ``dataset``'s runs) or
    None to hold out a seeded fraction of ``dataset``. After the last epoch
    the parameters, batchnorm statistics and optimizer state of the epoch
    with the best validation accuracy are restored.
    """
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    seed = cfg.seed if seed is None else seed
    pairs = dataset.pairs
    if validation is None:
        pairs, validation = split_train_val(pairs, VALIDATION_FRACTION, seed)
    if not pairs:
        raise ValueError("no training pairs")
    if cfg.max_validation_pairs is not None and len(validation) > cfg.max_validation_pairs:
        pick = np.sort(np.random.default_rng([seed, 1]).choice(len(validation), cfg.max_validation_pairs, replace=False))
        validation = [validation[i] for i in pick]

    history = TrainingHistory()
    best = None
    for epoch in range(epochs):
        start = time.perf_counter()
        batches = make_batches(pairs, cfg.batch_size, seed, epoch, cfg.batches_per_group)
        loss_sum = correct = seen = 0.0
        for b, batch in enumerate(batches):
            try:
                loss, p = train_step(model, dataset, batch, cfg.learning_rate, cfg.optimizer)
            except FloatingPointError as exc:
                raise TrainingDivergedError(epoch, b, str(exc)) from exc
            if not math.isfinite(loss):
                raise TrainingDivergedError(epoch, b)
            history.batch_losses.append(loss)
            y = np.array([q.label for q in batch])
            loss_sum += loss * len(batch)
            correct += float(np.sum((p > 0.5) == (y == 1)))
            seen += len(batch)
        val_loss, val_acc = evaluate(model, dataset.subset(validation), validation) if validation else (math.nan, math.nan)
        rec = EpochRecord(epoch, loss_sum / seen, correct / seen, val_loss, val_acc, len(batches))
        history.epochs.append(rec)
        log.info("epoch %d: train loss %.4f acc %.3f, val loss %.4f acc %.3f (%d batches, %.0fs)", epoch,
                 rec.train_loss, rec.train_accuracy, val_loss, val_acc, rec.batches, time.perf_counter() - start)
        if progress is not None:
            progress(rec)
        # accuracy saturates quickly on separable data, so equal accuracy falls back to the lower loss;
        # without validation the last epoch wins
        prev = history.epochs[history.best_epoch] if best is not None else None
        if (best is None or not math.isfinite(val_acc) or val_acc > history.best_val_accuracy
                or (val_acc == history.best_val_accuracy and val_loss < prev.val_loss)):
            history.best_val_accuracy = val_acc
            history.best_epoch = epoch
            best = _snapshot(model)
    _restore(model, best)
    model.history = history
    return history
