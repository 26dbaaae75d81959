"""Channel-wise supervised embedders and trial-vector matrices."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dataset import Dataset, RawTrial, balanced_subject_holdout
from .errors import LabelError, SchemaError, TrainingDiverged
from .nn import (
    Adam,
    Conv1D,
    Dense,
    GlobalAveragePool,
    MaxPool1D,
    Network,
    ReLU,
    SoftmaxCE,
    Softmax,
    load_network,
    save_network,
    spec_from_dict,
    train,
)
from .nn.persist import round_to_stored_precision
from .rng import rng_stream

log = logging.getLogger(__name__)


def default_embedder_layers(M=4):
    """Encoder layers followed by the classification head.

    Returns ``(layers, n_encoder_layers)``; the encoder ends at the
    ``Dense(M)`` whose output is the channel embedding.
    """
    layers = [
        Conv1D(10, 7, 2), ReLU(), MaxPool1D(4),
        Conv1D(16, 5, 2), ReLU(), GlobalAveragePool(),
        Dense(M),
        Dense(2), Softmax(),
    ]
    return layers, 7


@dataclass
class EmbedderHyper:
    M: int = 4
    epochs: int = 200
    batch_size: int = 1000
    optimizer: dict = field(default_factory=lambda: {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8})
    holdout_fraction: float = 0.15
    normalize: bool = True
    layers: list | None = None  # layer dicts; None means the default architecture
    encoder_layers: int | None = None

    def architecture(self):
        if self.layers is None:
            return default_embedder_layers(self.M)
        layers = [spec_from_dict(d) if isinstance(d, dict) else d for d in self.layers]
        if self.encoder_layers is None:
            raise ValueError("custom layers need encoder_layers")
        return layers, self.encoder_layers


def zscore(signals, eps=1e-8):
    """Per-signal standardisation (row-wise)."""
    signals = np.asarray(signals, dtype=np.float64)
    mu = signals.mean(axis=1, keepdims=True)
    sd = signals.std(axis=1, keepdims=True)
    return (signals - mu) / np.maximum(sd, eps)


@dataclass
class ChannelEmbedder:
    channel_index: int
    channel_name: str
    encoder: Network
    head: Network
    holdout_accuracy: float
    normalize: bool = True
    seed: int = 0

    @property
    def M(self):
        return self.encoder.output_shape[0]

    def prepare(self, signals):
        signals = np.asarray(signals, dtype=np.float64)
        return zscore(signals) if self.normalize else signals

    def embed(self, signals):
        """(N, J) signals -> (N, M) embeddings."""
        return self.encoder.predict(self.prepare(signals))

    def predict_proba(self, signals):
        return self.head.predict(self.embed(signals))


@dataclass
class TrialVectorMatrix:
    """N x (C*M) trial vectors; columns ``[j*M, (j+1)*M)`` belong to ``channel_order[j]``."""

    values: np.ndarray
    row_labels: np.ndarray
    row_subjects: np.ndarray
    channel_order: tuple
    M: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.row_labels = np.asarray(self.row_labels, dtype=np.int64)
        self.channel_order = tuple(int(c) for c in self.channel_order)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.channel_order) * self.M:
            raise SchemaError(f"matrix shape {self.values.shape} does not fit {len(self.channel_order)} blocks of {self.M}")
        if len(self.row_labels) != len(self.values) or len(self.row_subjects) != len(self.values):
            raise SchemaError("row metadata does not align with the matrix")

    @property
    def N(self):
        return len(self.values)

    def block(self, channel):
        j = self.channel_order.index(channel)
        return self.values[:, j * self.M : (j + 1) * self.M]

    def to_csv(self, path, channel_names=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            header = ["subject", "label"] + [
                f"ch{c}_{m}" for c in self.channel_order for m in range(self.M)
            ]
            w.writerow(header)
            for row, y, s in zip(self.values, self.row_labels, self.row_subjects):
                w.writerow([s, int(y)] + [repr(float(v)) for v in row])


# --------------------------------------------------------------------------
# training


def _train_one(channel, name, X, y, holdout_mask, hyper, master_seed):
    layers, n_enc = hyper.architecture()
    rng = rng_stream(master_seed, "embedder", channel)
    net = Network(layers, (X.shape[1],), rng=rng)
    opt = Adam.from_config(hyper.optimizer)
    fit_rows = ~holdout_mask
    try:
        train(
            net, X[fit_rows], y[fit_rows],
            epochs=hyper.epochs, batch_size=hyper.batch_size,
            optimizer=opt, rng=rng, objective=SoftmaxCE(), label=f"channel {name}",
        )
    except TrainingDiverged as exc:
        raise TrainingDiverged(exc.epoch, f"channel {channel} ({name})") from None
    # keep exactly what a saved bundle reproduces
    net = round_to_stored_precision(net)
    encoder, head = net.slice(0, n_enc), net.slice(n_enc)
    if holdout_mask.any():
        proba = net.predict(X[holdout_mask])
        acc = float(np.mean((proba[:, 1] > 0.5).astype(int) == y[holdout_mask]))
    else:
        acc = float("nan")
    return ChannelEmbedder(channel, name, encoder, head, acc, hyper.normalize, int(master_seed))


def holdout_subjects(train: Dataset, fraction: float, master_seed: int) -> set:
    if fraction <= 0:
        return set()
    return balanced_subject_holdout(train.subjects, fraction, rng_stream(master_seed, "split", 1))


def train_channel_embedders(train: Dataset, hyper: EmbedderHyper | None = None, master_seed: int = 0,
                            jobs: int = 1, channels=None) -> list:
    """One supervised encoder+classifier per registry channel.

    Embedder ``c`` sees only channel ``c`` and draws all randomness from
    ``(master_seed, "embedder", c)``. A class-balanced set of training
    subjects (``holdout_fraction``) is kept away from every optimizer and
    scores ``holdout_accuracy``.
    """
    hyper = hyper or EmbedderHyper()
    if len(train) == 0:
        raise LabelError("empty training set")
    y = train.labels
    if len(np.unique(y)) < 2:
        raise LabelError("training data contains a single class")
    held = holdout_subjects(train, hyper.holdout_fraction, master_seed)
    holdout_mask = np.array([s in held for s in train.subject_ids], dtype=bool)
    channels = range(train.C) if channels is None else channels

    def work(c):
        X = train.signals(c)
        if hyper.normalize:
            X = zscore(X)
        return _train_one(c, train.channel_names[c], X, y, holdout_mask, hyper, master_seed)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(work, channels))
    return [work(c) for c in channels]


# --------------------------------------------------------------------------
# embedding


def _check_registry(embedders, channel_names):
    if len(embedders) != len(channel_names) or any(
        e.channel_name != n for e, n in zip(embedders, channel_names)
    ):
        raise SchemaError("channel registry does not match the embedders")


def embed_trial(embedders, trial: RawTrial, channel_subset=None) -> np.ndarray:
    """Concatenate the embeddings of ``channel_subset`` (default: all) in that order."""
    _check_registry(embedders, trial.channel_names)
    subset = range(len(embedders)) if channel_subset is None else channel_subset
    blocks = []
    for c in subset:
        if not 0 <= c < len(embedders):
            raise SchemaError(f"channel index {c} out of range")
        blocks.append(embedders[c].embed(trial.samples[c][None, :].astype(np.float64))[0])
    return np.concatenate(blocks) if blocks else np.zeros(0)


def embed_dataset(embedders, dataset: Dataset, channel_subset=None, jobs: int = 1) -> np.ndarray:
    """Row ``i`` equals ``embed_trial(embedders, dataset.trials[i], channel_subset)``."""
    _check_registry(embedders, dataset.channel_names)
    subset = list(range(len(embedders)) if channel_subset is None else channel_subset)
    for c in subset:
        if not 0 <= c < len(embedders):
            raise SchemaError(f"channel index {c} out of range")

    def work(c):
        return embedders[c].embed(dataset.signals(c))

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            blocks = list(pool.map(work, subset))
    else:
        blocks = [work(c) for c in subset]
    if not blocks:
        return np.zeros((len(dataset), 0))
    return np.concatenate(blocks, axis=1)


def build_trial_matrix(embedders, dataset: Dataset, jobs: int = 1) -> TrialVectorMatrix:
    if len(dataset) == 0:
        raise SchemaError("cannot build a trial matrix from an empty dataset")
    values = embed_dataset(embedders, dataset, jobs=jobs)
    return TrialVectorMatrix(
        values, dataset.labels, dataset.subject_ids, tuple(range(len(embedders))), embedders[0].M
    )


def channel_accuracy_ranking(embedders):
    """Rank channels by holdout accuracy (descending, ties by index)."""
    from .selection import ChannelRanking

    scores = [(e.channel_index, e.holdout_accuracy) for e in embedders]
    if any(np.isnan(s) for _, s in scores):
        raise ValueError("holdout accuracies are not populated")
    return ChannelRanking.from_scores(scores, metric="holdout_accuracy")


# --------------------------------------------------------------------------
# persistence

MANIFEST = "manifest.json"


def save_embedders(embedders, directory, extra=None) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for e in embedders:
        fname = f"channel_{e.channel_index:03d}.ernm"
        full = Network(e.encoder.layers + e.head.layers, e.encoder.input_shape, e.encoder.params + e.head.params)
        save_network(full, directory / fname, meta={"encoder_layers": len(e.encoder.layers)})
        entries.append({
            "channel_index": e.channel_index,
            "channel_name": e.channel_name,
            "file": fname,
            "holdout_accuracy": e.holdout_accuracy,
            "normalize": e.normalize,
            "seed": e.seed,
        })
    manifest = {
        "registry": [e.channel_name for e in embedders],
        "M": embedders[0].M if embedders else None,
        "embedders": entries,
        **(extra or {}),
    }
    (directory / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_embedders(directory) -> list:
    directory = Path(directory)
    manifest = json.loads((directory / MANIFEST).read_text())
    out = []
    for entry in manifest["embedders"]:
        net, meta = load_network(directory / entry["file"])
        n_enc = meta["encoder_layers"]
        out.append(ChannelEmbedder(
            entry["channel_index"], entry["channel_name"],
            net.slice(0, n_enc), net.slice(n_enc),
            entry["holdout_accuracy"], entry["normalize"], entry["seed"],
        ))
    return out
