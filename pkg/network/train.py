"""
train.py
Mini-batch Adam training of the convnet with early stopping on validation loss.
"""
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from config import (
    LEARNING_RATE,
    ADAM_BETAS,
    ADAM_EPSILON,
    BATCH_SIZE,
    MAX_EPOCHS,
    PATIENCE,
    PRECISION
)
from logger import log_event, log_epoch, log_artifact, log_warning
from utils import (
    TagNoiseError,
    ShapeError,
    NonFiniteActivationError,
    TrainingDivergedError,
    ParseError,
    make_rng,
    data_lines,
    write_table
)
from analysis.metrics import macro_auc
from frontend.melspec import read_mels
from .convnet import PRECISIONS, init_params, loss_and_gradients, forward, loss


@dataclass(frozen=True)
class TrainConfig:
    optimizer: str = "adam"
    learningRate: float = LEARNING_RATE
    betas: tuple = ADAM_BETAS
    epsilon: float = ADAM_EPSILON
    batchSize: int = BATCH_SIZE
    maxEpochs: int = MAX_EPOCHS
    patience: int = PATIENCE
    seed: int = 0
    precision: str = PRECISION

    def __post_init__(self):
        if self.optimizer != "adam":
            raise TagNoiseError(f"unsupported optimizer '{self.optimizer}'")
        if self.batchSize < 1:
            raise TagNoiseError("batch size must be at least 1")
        if self.patience < 1:
            raise TagNoiseError("patience must be at least 1")
        if self.maxEpochs < 1:
            raise TagNoiseError("max epochs must be at least 1")
        if self.learningRate < 0:
            raise TagNoiseError("learning rate must be non-negative")
        if self.precision not in PRECISIONS:
            raise TagNoiseError(f"precision must be one of {list(PRECISIONS)}")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    @property
    def dtype(self):
        return PRECISIONS[self.precision]


@dataclass(frozen=True)
class FeatureSet:
    """values: (N, C, H, W) features, rows aligned with trackIds"""
    trackIds: tuple
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "trackIds", tuple(self.trackIds))
        if self.values.shape[0] != len(self.trackIds):
            raise ShapeError(f"{self.values.shape[0]} feature rows for {len(self.trackIds)} tracks")

    def __len__(self):
        return len(self.trackIds)

    def subset(self, rows):
        rows = np.asarray(rows, dtype=np.int64)
        return FeatureSet(tuple(self.trackIds[i] for i in rows), self.values[rows])


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    trainLoss: float
    validLoss: float
    validAuc: object
    wallSeconds: float


def load_feature_set(featureDir, trackIds):
    """
    Stack '<track_id>.mels' files into a FeatureSet.
    Args:
        featureDir: Directory written by featurize
        trackIds: Track ids to load, in order
    """
    specs = []
    missing = []
    for trackId in trackIds:
        path = Path(featureDir) / f"{trackId}.mels"
        if not path.exists():
            missing.append(trackId)
            continue
        specs.append(read_mels(path).values)
    if missing:
        raise TagNoiseError(f"{len(missing)} tracks have no feature file in {featureDir}: {missing[:5]}")
    shapes = {spec.shape for spec in specs}
    if len(shapes) > 1:
        raise ShapeError(f"feature files have differing shapes {sorted(shapes)}; featurize with one --frames value")
    return FeatureSet(tuple(trackIds), np.stack(specs)[:, None].astype(np.float32))

def _adam_step(params, grads, state, config):
    """Adam update of every trainable tensor; returns new tensors."""
    beta1, beta2 = config.betas
    state["t"] += 1
    t = state["t"]
    updated = {}
    for name, grad in grads.items():
        m = state["m"].setdefault(name, np.zeros_like(grad))
        v = state["v"].setdefault(name, np.zeros_like(grad))
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state["m"][name], state["v"][name] = m, v
        mHat = m / (1.0 - beta1 ** t)
        vHat = v / (1.0 - beta2 ** t)
        step = config.learningRate * mHat / (np.sqrt(vHat) + config.epsilon)
        updated[name] = (params.tensors[name] - step).astype(params.dtype)
    return updated

def predict(params, features, batchSize=BATCH_SIZE):
    """
    Eval-mode probabilities for a FeatureSet or array, in batches.
    Args:
        params: ModelParams
        features: FeatureSet or (N, C, H, W) array
        batchSize: Rows per forward pass
    """
    values = features.values if isinstance(features, FeatureSet) else features
    outputs = [forward(params, values[start:start + batchSize], "eval") for start in range(0, len(values), batchSize)]
    return np.concatenate(outputs, axis=0)

def evaluate_loss(params, features, targets, batchSize=BATCH_SIZE):
    """Eval-mode mean loss and macro AUC."""
    probabilities = predict(params, features, batchSize)
    return loss(probabilities, targets), macro_auc(probabilities, targets)

def train(arch, config, trainSet, validSet, labels, initParams=None):
    """
    Train with Adam and early stopping on validation loss.
    Args:
        arch: ArchSpec (n_outputs must equal the vocabulary size)
        config: TrainConfig
        trainSet: FeatureSet of training tracks
        validSet: FeatureSet of validation tracks
        labels: LabelMatrix giving the targets of both sets
        initParams: Starting ModelParams (default: He-uniform draw from config.seed)
    Returns:
        (best-validation ModelParams, list of EpochRecord)
    """
    if arch.nOutputs != len(labels.vocab):
        raise ShapeError(f"architecture has {arch.nOutputs} outputs for {len(labels.vocab)} tags")
    if len(trainSet) == 0 or len(validSet) == 0:
        raise TagNoiseError("training and validation sets must be non-empty")

    trainTargets = labels.targets_for(trainSet.trackIds)
    validTargets = labels.targets_for(validSet.trackIds)
    params = initParams if initParams is not None else init_params(arch, config.seed, labels.vocab.tags, config.dtype)
    params = params.astype(config.dtype)
    trainValues = trainSet.values.astype(config.dtype)
    validValues = validSet.values.astype(config.dtype)

    shuffler = make_rng(config.seed, 1)
    state = {"t": 0, "m": {}, "v": {}}
    trainLog = []
    best = params
    bestLoss = np.inf
    bestEpoch = 0
    waited = 0
    start = time.perf_counter()
    log_event(
        f"Training {arch.nBlocks}-block convnet on {len(trainSet)} tracks "
        f"(valid {len(validSet)}, batch {config.batchSize}, lr {config.learningRate}, seed {config.seed})"
    )

    for epoch in range(1, config.maxEpochs + 1):
        order = shuffler.permutation(len(trainSet))
        batchLosses = []
        batchSizes = []
        for offset in range(0, len(order), config.batchSize):
            rows = order[offset:offset + config.batchSize]
            try:
                value, grads, runningUpdates = loss_and_gradients(params, trainValues[rows], trainTargets[rows])
            except NonFiniteActivationError as e:
                raise TrainingDivergedError(f"training diverged in epoch {epoch}: {e}", params, trainLog)
            if not np.isfinite(value):
                raise TrainingDivergedError(f"training diverged in epoch {epoch}: non-finite loss", params, trainLog)
            updated = _adam_step(params, grads, state, config)
            # a zero learning rate freezes the whole parameter set
            if config.learningRate > 0:
                updated.update(runningUpdates)
            params = params.with_tensors(updated)
            batchLosses.append(value)
            batchSizes.append(len(rows))

        trainLoss = float(np.average(batchLosses, weights=batchSizes))
        try:
            validLoss, validAuc = evaluate_loss(params, validValues, validTargets, config.batchSize)
        except NonFiniteActivationError as e:
            raise TrainingDivergedError(f"validation diverged in epoch {epoch}: {e}", best, trainLog)
        record = EpochRecord(epoch, trainLoss, float(validLoss), validAuc, time.perf_counter() - start)
        trainLog.append(record)
        log_epoch(epoch, record.trainLoss, record.validLoss, record.validAuc, record.wallSeconds)

        if validLoss < bestLoss:
            best, bestLoss, bestEpoch, waited = params, validLoss, epoch, 0
        else:
            waited += 1
            if waited >= config.patience:
                log_event(f"Early stop after epoch {epoch}; best epoch {bestEpoch} (valid_loss {bestLoss:.5f})")
                break

    if bestEpoch == 0:
        log_warning("validation loss never improved; returning the initial parameters")
    meta = dict(best.meta)
    meta.update({"best_epoch": bestEpoch, "epochs_run": len(trainLog), "train_seed": config.seed})
    return replace(best, meta=meta), trainLog

def write_train_log(trainLog, path, seed=None, extra=None, delimiter=","):
    """
    Training log table (epoch, train_loss, valid_loss, valid_auc, wall_seconds).
    Args:
        trainLog: List of EpochRecord
        path: Output path
        seed: Seed recorded in the provenance header
        extra: Additional provenance fields
        delimiter: ',' or tab
    """
    header = ["epoch", "train_loss", "valid_loss", "valid_auc", "wall_seconds"]
    rows = [
        [
            record.epoch,
            f"{record.trainLoss:.8f}",
            f"{record.validLoss:.8f}",
            "" if record.validAuc is None else f"{record.validAuc:.8f}",
            f"{record.wallSeconds:.3f}"
        ]
        for record in trainLog
    ]
    write_table(path, header, rows, seed=seed, extra=extra, delimiter=delimiter)
    log_artifact(path, "training log")
    return path

def read_train_log(path):
    """
    EpochRecords from a file written by write_train_log (comma or tab delimited).
    Args:
        path: Training log path
    """
    lines = list(data_lines(path))
    if not lines:
        return []
    delimiter = "\t" if "\t" in lines[0][1] else ","
    trainLog = []
    for lineNumber, line in lines[1:]:
        fields = line.split(delimiter)
        if len(fields) != 5:
            raise ParseError(f"expected 5 columns, got {len(fields)}", path, lineNumber)
        try:
            trainLog.append(EpochRecord(
                epoch=int(fields[0]),
                trainLoss=float(fields[1]),
                validLoss=float(fields[2]),
                validAuc=float(fields[3]) if fields[3] else None,
                wallSeconds=float(fields[4])
            ))
        except ValueError:
            raise ParseError("non-numeric training log entry", path, lineNumber)
    return trainLog
