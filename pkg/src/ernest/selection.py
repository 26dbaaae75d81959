"""Channel selection with an ensemble of deep sparse autoencoders.

Each ensemble member holds out ``L`` rows of each class, learns to
reconstruct the remaining rows of the normal class, and records squared
reconstruction errors on its held-out rows. Channels are ranked by how much
worse the other class is reconstructed inside that channel's column block.
"""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TrainingDiverged
from .features import TrialVectorMatrix
from .nn import Adam, Dense, Network, ReLU, SparseMSE, spec_from_dict, train
from .rng import rng_stream

log = logging.getLogger(__name__)

TIE_BREAK = "ascending channel index"


def default_dsae_layers(width):
    """Dense(width->128) ReLU Dense(32) ReLU Dense(128) ReLU Dense(width); sparse layer = 3."""
    return [Dense(128), ReLU(), Dense(32), ReLU(), Dense(128), ReLU(), Dense(width)], 3


@dataclass
class DsaeeConfig:
    B: int = 30
    L: int | None = None  # None: 10% of the minority class
    lam: float = 1e-4
    epochs: int = 300
    batch_size: int = 500
    normal_class: int = 0
    scale: bool = True
    optimizer: dict = field(default_factory=lambda: {"lr": 1e-3, "beta1": 0.9, "beta2": 0.999, "epsilon": 1e-8})
    layers: list | None = None
    sparse_layer: int | None = None

    def architecture(self, width):
        if self.layers is None:
            return default_dsae_layers(width)
        layers = [spec_from_dict(d) if isinstance(d, dict) else d for d in self.layers]
        return layers, self.sparse_layer

    def resolve_L(self, labels) -> int:
        counts = np.bincount(np.asarray(labels), minlength=2)
        L = self.L if self.L is not None else max(1, int(0.1 * counts.min()))
        if self.B < 1:
            raise ConfigError("ensemble size B must be at least 1")
        if L < 1 or L >= counts.min():
            raise ConfigError(f"L={L} must satisfy 1 <= L < {counts.min()} (smallest class count)")
        return L


@dataclass
class REMatrix:
    """(2*B*L) x (C*M) squared reconstruction errors.

    Rows are ordered (component, class, sample); ``row_labels`` are true labels.
    """

    values: np.ndarray
    row_labels: np.ndarray
    channel_order: tuple
    M: int
    B: int = 0
    L: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.row_labels = np.asarray(self.row_labels, dtype=np.int64)
        self.channel_order = tuple(self.channel_order)
        if (self.values < 0).any():
            raise ValueError("reconstruction errors must be non-negative")
        if self.values.shape[1] != len(self.channel_order) * self.M:
            raise ValueError("RE matrix width does not match channel blocks")

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["label"] + [f"ch{c}_{m}" for c in self.channel_order for m in range(self.M)])
            for y, row in zip(self.row_labels, self.values):
                w.writerow([int(y)] + [repr(float(v)) for v in row])


@dataclass
class ChannelRanking:
    """Channels ordered by score, highest first; ties go to the lower index."""

    entries: list  # [(channel_index, score)]
    metric: str = "delta_re"
    tie_break: str = TIE_BREAK
    details: dict = field(default_factory=dict)  # channel -> (re_class0, re_class1)

    @classmethod
    def from_scores(cls, scores, metric="delta_re", details=None):
        entries = sorted(((int(c), float(s)) for c, s in scores), key=lambda e: (-e[1], e[0]))
        return cls(entries, metric, TIE_BREAK, dict(details or {}))

    @property
    def order(self):
        return [c for c, _ in self.entries]

    def scores(self):
        return dict(self.entries)

    def to_csv(self, path, channel_names=None):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["rank", "channel_index", "channel_name", "delta_re", "re_class0", "re_class1"])
            for rank, (c, score) in enumerate(self.entries, start=1):
                name = channel_names[c] if channel_names is not None else str(c)
                re0, re1 = self.details.get(c, ("", ""))
                w.writerow([rank, c, name, repr(score),
                            "" if re0 == "" else repr(float(re0)),
                            "" if re1 == "" else repr(float(re1))])


def read_ranking_csv(path) -> ChannelRanking:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    scores = [(int(r["channel_index"]), float(r["delta_re"])) for r in rows]
    details = {
        int(r["channel_index"]): (float(r["re_class0"]), float(r["re_class1"]))
        for r in rows if r["re_class0"] != ""
    }
    return ChannelRanking.from_scores(scores, details=details)


# --------------------------------------------------------------------------


def _minmax(train_rows):
    lo = train_rows.min(axis=0)
    span = train_rows.max(axis=0) - lo
    return lo, np.where(span > 0, span, 1.0)


def fit_dsae(X, config: DsaeeConfig, rng, label=None):
    """Train one sparse autoencoder on ``X``; returns the network."""
    layers, sparse_layer = config.architecture(X.shape[1])
    net = Network(layers, (X.shape[1],), rng=rng)
    train(
        net, X, None,
        epochs=config.epochs, batch_size=config.batch_size,
        optimizer=Adam.from_config(config.optimizer), rng=rng,
        objective=SparseMSE(config.lam, sparse_layer), label=label,
    )
    return net


def _component(b, T, labels, L, config, master_seed, fit):
    rng = rng_stream(master_seed, "dsae", b)
    normal = config.normal_class
    test_idx = []
    for cls in (0, 1):
        pool = np.flatnonzero(labels == cls)
        test_idx.append(pool[rng.choice(len(pool), size=L, replace=False)])
    test_idx = np.concatenate(test_idx)
    train_mask = labels == normal
    train_mask[test_idx] = False
    train_rows, test_rows = T[train_mask], T[test_idx]
    if config.scale:
        lo, span = _minmax(train_rows)
        train_rows = (train_rows - lo) / span
        test_rows = (test_rows - lo) / span
    try:
        net = fit(train_rows, config, rng, f"dsae component {b}")
    except TrainingDiverged as exc:
        raise TrainingDiverged(exc.epoch, f"dsae component {b}") from None
    recon = net.predict(test_rows)
    return (test_rows - recon) ** 2, labels[test_idx]


def dsaee_run(T: TrialVectorMatrix, config: DsaeeConfig | None = None, master_seed: int = 0,
              jobs: int = 1, fit=fit_dsae) -> REMatrix:
    """Run ``B`` independent components and stack their test-row errors."""
    config = config or DsaeeConfig()
    labels = T.row_labels
    L = config.resolve_L(labels)
    if config.normal_class not in (0, 1):
        raise ConfigError("normal_class must be 0 or 1")

    def work(b):
        return _component(b, T.values, labels, L, config, master_seed, fit)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(work, range(config.B)))
    else:
        parts = [work(b) for b in range(config.B)]
    values = np.concatenate([p[0] for p in parts])
    row_labels = np.concatenate([p[1] for p in parts])
    return REMatrix(values, row_labels, T.channel_order, T.M, config.B, L)


def channel_re_by_class(R: REMatrix):
    """Per channel ``(RE_0, RE_1)``: block-summed error averaged over each class's rows."""
    n, width = R.values.shape
    C = len(R.channel_order)
    per_channel = R.values.reshape(n, C, R.M).sum(axis=2)
    out = []
    means = []
    for cls in (0, 1):
        rows = R.row_labels == cls
        count = rows.sum()
        means.append(per_channel[rows].sum(axis=0) / count if count else np.zeros(C))
    for j in range(C):
        out.append((float(means[0][j]), float(means[1][j])))
    return out


def delta_re(pairs, channel_order=None) -> ChannelRanking:
    """Score each channel by ``RE_1 - RE_0``."""
    channel_order = range(len(pairs)) if channel_order is None else channel_order
    scores = [(c, re1 - re0) for c, (re0, re1) in zip(channel_order, pairs)]
    details = {c: p for c, p in zip(channel_order, pairs)}
    return ChannelRanking.from_scores(scores, "delta_re", details)


def select_top_k(ranking: ChannelRanking, K: int) -> list:
    if not 1 <= K <= len(ranking.entries):
        raise ConfigError(f"K={K} outside 1..{len(ranking.entries)}")
    return ranking.order[:K]


def rank_channels(T: TrialVectorMatrix, config: DsaeeConfig | None = None, master_seed: int = 0, jobs: int = 1):
    """``dsaee_run`` followed by per-class aggregation and ranking."""
    R = dsaee_run(T, config, master_seed, jobs=jobs)
    return delta_re(channel_re_by_class(R), R.channel_order), R
