"""Trial containers, the UCI EEG file reader, subject splits and synthetic data."""

from __future__ import annotations

import gzip
import hashlib
import json
import math
import re
import struct
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import ConfigError, EmptyDataset, FormatError, ParseError, SchemaError, SplitError
from .rng import rng_stream

# non-scalp / reference tracks in the UCI recordings
DEFAULT_BLACKLIST = ("X", "Y", "nd")

_SUBJECT_RE = re.compile(r"^#\s*([A-Za-z]{2}\d[A-Za-z]\d+)(?:\.rd)?\b")


class Stimulus(str, Enum):
    S1_obj = "S1_obj"
    S2_match = "S2_match"
    S2_nomatch = "S2_nomatch"

    @classmethod
    def parse(cls, value) -> Stimulus:
        if isinstance(value, cls):
            return value
        text = str(value).strip().replace(" ", "_")
        for member in cls:
            if member.value.lower() == text.lower():
                return member
        raise ConfigError(f"unknown stimulus condition {value!r}")


def label_from_subject(subject_id: str) -> int:
    """UCI naming: the 4th character is ``a`` (alcoholic) or ``c`` (control)."""
    code = subject_id[3:4].lower()
    if code == "a":
        return 1
    if code == "c":
        return 0
    raise ParseError("label", f"cannot derive class from subject id {subject_id!r}")


@dataclass(frozen=True, eq=False)
class RawTrial:
    subject_id: str
    class_label: int
    trial_index: int
    stimulus_condition: Stimulus
    channel_names: tuple
    samples: np.ndarray  # (C, J) float32

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        if samples.ndim != 2 or samples.shape[0] != len(self.channel_names):
            raise SchemaError(
                f"samples shape {samples.shape} does not match {len(self.channel_names)} channels"
            )
        if len(set(self.channel_names)) != len(self.channel_names):
            raise SchemaError("duplicate channel names")
        if not np.isfinite(samples).all():
            raise SchemaError("non-finite voltage values")
        if self.class_label not in (0, 1):
            raise SchemaError(f"class label must be 0 or 1, got {self.class_label}")

    @property
    def J(self):
        return self.samples.shape[1]


@dataclass(frozen=True, eq=False)
class Dataset:
    trials: tuple
    channel_names: tuple
    J: int

    def __post_init__(self):
        object.__setattr__(self, "trials", tuple(self.trials))
        object.__setattr__(self, "channel_names", tuple(self.channel_names))
        for t in self.trials:
            if t.channel_names != self.channel_names:
                raise SchemaError(f"trial of {t.subject_id} does not follow the channel registry")
            if t.J != self.J:
                raise SchemaError(f"trial of {t.subject_id} has {t.J} samples, expected {self.J}")

    def __len__(self):
        return len(self.trials)

    @property
    def C(self):
        return len(self.channel_names)

    @cached_property
    def labels(self) -> np.ndarray:
        return np.array([t.class_label for t in self.trials], dtype=np.int64)

    @cached_property
    def subject_ids(self) -> np.ndarray:
        return np.array([t.subject_id for t in self.trials], dtype=object)

    @cached_property
    def subjects(self) -> dict:
        """Subject id -> class label, sorted by id."""
        out = {}
        for t in self.trials:
            if out.setdefault(t.subject_id, t.class_label) != t.class_label:
                raise SchemaError(f"subject {t.subject_id} has trials of both classes")
        return dict(sorted(out.items()))

    @cached_property
    def tensor(self) -> np.ndarray:
        """All samples stacked as (N, C, J) float32."""
        if not self.trials:
            return np.zeros((0, self.C, self.J), dtype=np.float32)
        return np.stack([t.samples for t in self.trials])

    def signals(self, channel: int) -> np.ndarray:
        """(N, J) float64 signals of one channel."""
        return self.tensor[:, channel, :].astype(np.float64)

    def select_subjects(self, subject_ids) -> Dataset:
        keep = set(subject_ids)
        return Dataset([t for t in self.trials if t.subject_id in keep], self.channel_names, self.J)

    def summary(self) -> dict:
        labels = self.subjects
        return {
            "subjects": len(labels),
            "alcoholic_subjects": sum(labels.values()),
            "control_subjects": len(labels) - sum(labels.values()),
            "trials": len(self),
            "channels": self.C,
            "samples_per_channel": self.J,
        }


@dataclass(frozen=True)
class SubjectSplit:
    train_subject_ids: frozenset
    test_subject_ids: frozenset


# --------------------------------------------------------------------------
# UCI trial files


def _parse_condition(line: str):
    body = line.lower()
    if "s1 obj" in body:
        return Stimulus.S1_obj
    if "s2 nomatch" in body:
        return Stimulus.S2_nomatch
    if "s2 match" in body:
        return Stimulus.S2_match
    return None


def parse_uci_trial_file(text: str, path=None) -> RawTrial:
    """Parse one trial in the UCI EEG text format.

    Header lines start with ``#``; the first names the recording
    (``co2a0000364.rd``) and one names the stimulus condition. Data lines are
    ``trial channel sample_index voltage``.
    """
    lines = text.splitlines()
    headers = [ln for ln in lines if ln.startswith("#")]
    if not headers:
        raise ParseError("header", "no header lines", path)
    m = _SUBJECT_RE.match(headers[0])
    if not m:
        raise ParseError("header", f"first header does not name a recording: {headers[0]!r}", path)
    subject_id = m.group(1)
    condition = None
    for h in headers[1:]:
        condition = _parse_condition(h)
        if condition is not None:
            break
    if condition is None:
        raise ParseError("header", "no stimulus condition header", path)
    try:
        label = label_from_subject(subject_id)
    except ParseError:
        raise ParseError("label", f"cannot derive class from subject id {subject_id!r}", path) from None

    rows = [ln.split() for ln in lines if ln.strip() and not ln.startswith("#")]
    if not rows:
        raise ParseError("incomplete", "no data lines", path)
    if any(len(r) != 4 for r in rows):
        bad = next(r for r in rows if len(r) != 4)
        raise ParseError("format", f"expected 4 fields, got {bad!r}", path)
    try:
        trial_numbers = {int(r[0]) for r in rows}
        index = np.array([int(r[2]) for r in rows], dtype=np.int64)
        volts = np.array([float(r[3]) for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise ParseError("format", str(exc), path) from None
    if len(trial_numbers) != 1:
        raise ParseError("format", f"several trial numbers in one file: {sorted(trial_numbers)}", path)
    if index.min() < 0:
        raise ParseError("format", "negative sample index", path)
    if not np.isfinite(volts).all():
        raise ParseError("format", "non-finite voltage", path)

    names = list(dict.fromkeys(r[1] for r in rows))
    chan_of = {name: i for i, name in enumerate(names)}
    chan = np.array([chan_of[r[1]] for r in rows], dtype=np.int64)
    n_samples = int(index.max()) + 1
    flat = chan * n_samples + index
    counts = np.bincount(flat, minlength=len(names) * n_samples)
    if (counts > 1).any():
        c, j = divmod(int(np.flatnonzero(counts > 1)[0]), n_samples)
        raise ParseError("duplicate", f"channel {names[c]} sample {j} appears twice", path)
    if (counts == 0).any():
        c, j = divmod(int(np.flatnonzero(counts == 0)[0]), n_samples)
        raise ParseError("incomplete", f"channel {names[c]} sample {j} missing", path)
    samples = np.empty(len(names) * n_samples, dtype=np.float64)
    samples[flat] = volts
    return RawTrial(
        subject_id=subject_id,
        class_label=label,
        trial_index=trial_numbers.pop(),
        stimulus_condition=condition,
        channel_names=tuple(names),
        samples=samples.reshape(len(names), n_samples),
    )


def _read_text(path: Path) -> str:
    if path.suffix == ".gz":
        with gzip.open(path, "rt") as fh:
            return fh.read()
    return path.read_text()


def trial_files(root) -> list:
    """Trial files under ``root``: any regular file whose name contains ``.rd``."""
    root = Path(root)
    return sorted(p for p in root.rglob("*") if p.is_file() and ".rd" in p.name and not p.name.startswith("."))


def _conform(trial: RawTrial, registry: tuple, blacklist: set) -> RawTrial:
    keep = [i for i, n in enumerate(trial.channel_names) if n not in blacklist]
    names = [trial.channel_names[i] for i in keep]
    if set(names) != set(registry) or len(names) != len(registry):
        missing = set(registry) - set(names)
        extra = set(names) - set(registry)
        raise SchemaError(
            f"{trial.subject_id} trial {trial.trial_index}: channel set differs "
            f"(missing {sorted(missing)}, extra {sorted(extra)})"
        )
    pos = {n: keep[i] for i, n in enumerate(names)}
    order = [pos[n] for n in registry]
    return RawTrial(
        trial.subject_id, trial.class_label, trial.trial_index, trial.stimulus_condition,
        registry, trial.samples[order],
    )


def load_dataset(root, condition_filter=None, channel_blacklist=DEFAULT_BLACKLIST) -> Dataset:
    """Read every trial file below ``root`` into one :class:`Dataset`.

    The channel registry is the order of the first file (in sorted path
    order) after removing blacklisted channels; other files are reordered to it.
    """
    condition = None if condition_filter is None else Stimulus.parse(condition_filter)
    blacklist = set(channel_blacklist or ())
    files = trial_files(root)
    if not files:
        raise EmptyDataset(f"no trial files under {root}")
    trials, registry, n_samples = [], None, None
    for path in files:
        trial = parse_uci_trial_file(_read_text(path), path=str(path))
        if condition is not None and trial.stimulus_condition != condition:
            continue
        if registry is None:
            registry = tuple(n for n in trial.channel_names if n not in blacklist)
            n_samples = trial.J
        if trial.J != n_samples:
            raise SchemaError(f"{path}: {trial.J} samples per channel, expected {n_samples}")
        try:
            trials.append(_conform(trial, registry, blacklist))
        except SchemaError as exc:
            raise SchemaError(f"{path}: {exc}") from None
    if not trials:
        raise EmptyDataset(f"no trials left under {root} after filtering")
    return Dataset(trials, registry, n_samples)


# --------------------------------------------------------------------------
# splits


def plan_split(dataset: Dataset, n_test_subjects: int, seed: int) -> SubjectSplit:
    subjects = dataset.subjects
    if n_test_subjects < 0 or n_test_subjects % 2:
        raise SplitError("n_test_subjects must be a non-negative even number")
    per_class = n_test_subjects // 2
    by_class = {y: sorted(s for s, lab in subjects.items() if lab == y) for y in (0, 1)}
    for y, ids in by_class.items():
        if len(ids) < per_class:
            raise SplitError(f"class {y} has {len(ids)} subjects, need {per_class} for the test side")
    rng = rng_stream(seed, "split", 0)
    test = set()
    for y in (0, 1):
        ids = by_class[y]
        test.update(ids[i] for i in rng.permutation(len(ids))[:per_class])
    return SubjectSplit(frozenset(set(subjects) - test), frozenset(test))


def split_by_subject(dataset: Dataset, n_test_subjects: int, seed: int):
    """Subject-disjoint ``(train, test)`` with a class-balanced test side."""
    plan = plan_split(dataset, n_test_subjects, seed)
    return dataset.select_subjects(plan.train_subject_ids), dataset.select_subjects(plan.test_subject_ids)


def balanced_subject_holdout(subjects: dict, fraction: float, rng) -> set:
    """Pick about ``fraction`` of the subjects of each class (at least one each)."""
    held = set()
    for y in (0, 1):
        ids = sorted(s for s, lab in subjects.items() if lab == y)
        k = max(1, int(round(fraction * len(ids))))
        if k >= len(ids):
            raise SplitError(f"class {y} has too few subjects ({len(ids)}) for a holdout")
        held.update(ids[i] for i in rng.permutation(len(ids))[:k])
    return held


# --------------------------------------------------------------------------
# synthetic data


WAVEFORMS = ("evoked", "burst")


@dataclass(frozen=True)
class SyntheticConfig:
    """Planted-channel generator settings.

    Amplitudes are in units of ``noise_sigma``. Informative channels carry an
    evoked deflection (a Gaussian bump centred in the trial, or a 10 Hz
    windowed burst with ``waveform_kind="burst"``) whose amplitude mean
    differs by ``effect_size`` between classes, plus trial-to-trial jitter.
    A coupled pair carries amplitudes ``y*effect/2 + u`` and ``y*effect/2 - u``
    with a shared nuisance ``u ~ N(0, coupling_spread^2)``: the sum carries the
    full gap while each channel alone sees half of it buried in ``u``.
    """

    n_subjects: int = 40
    trials_per_subject: int = 30
    C: int = 16
    J: int = 256
    informative_channels: tuple = (2, 7, 11)
    effect_size: float = 2.0
    coupled_pairs: tuple = ((4, 5),)
    noise_sigma: float = 1.0
    seed: int = 0
    fs: float = 256.0
    burst_hz: float = 10.0
    burst_width_s: float = 0.05
    amplitude_jitter: float = 1.0
    coupling_spread: float = 1.0
    waveform_kind: str = "evoked"

    def __post_init__(self):
        object.__setattr__(self, "informative_channels", tuple(sorted(set(int(c) for c in self.informative_channels))))
        object.__setattr__(self, "coupled_pairs", tuple(tuple(int(c) for c in p) for p in self.coupled_pairs))
        self.validate()

    def validate(self):
        for name in ("n_subjects", "trials_per_subject", "C", "J"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.n_subjects < 2:
            raise ConfigError("need at least one subject per class")
        if self.noise_sigma <= 0:
            raise ConfigError("noise_sigma must be positive")
        if self.effect_size < 0 or self.amplitude_jitter < 0 or self.coupling_spread < 0:
            raise ConfigError("effect_size, amplitude_jitter and coupling_spread must be non-negative")
        informative = set(self.informative_channels)
        if not informative <= set(range(self.C)):
            raise ConfigError("informative channel index out of range")
        seen = set()
        for pair in self.coupled_pairs:
            if len(pair) != 2 or pair[0] == pair[1]:
                raise ConfigError(f"coupled pair {pair} must name two distinct channels")
            for c in pair:
                if not 0 <= c < self.C:
                    raise ConfigError(f"coupled channel {c} out of range")
                if c in informative or c in seen:
                    raise ConfigError(f"coupled channel {c} overlaps another planted channel")
                seen.add(c)
        if self.waveform_kind not in WAVEFORMS:
            raise ConfigError(f"waveform_kind must be one of {WAVEFORMS}")

    @property
    def ground_truth(self) -> frozenset:
        return frozenset(self.informative_channels) | {c for p in self.coupled_pairs for c in p}

    def waveform(self) -> np.ndarray:
        t = np.arange(self.J) / self.fs
        t0 = t[-1] / 2
        bump = np.exp(-((t - t0) ** 2) / (2 * self.burst_width_s**2))
        if self.waveform_kind == "burst":
            return np.cos(2 * np.pi * self.burst_hz * (t - t0)) * bump
        return bump

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["informative_channels"] = list(self.informative_channels)
        d["coupled_pairs"] = [list(p) for p in self.coupled_pairs]
        return d


def synthetic_subject_id(index: int, label: int) -> str:
    return f"sy{index % 10}{'a' if label else 'c'}{index:07d}"


def generate_synthetic(config: SyntheticConfig):
    """Return ``(dataset, ground_truth_channels)``; subjects alternate control/alcoholic."""
    cfg = config
    rng = rng_stream(cfg.seed, "synth", 0)
    sigma = cfg.noise_sigma
    n = cfg.n_subjects * cfg.trials_per_subject
    subj = np.repeat(np.arange(cfg.n_subjects), cfg.trials_per_subject)
    y = subj % 2
    x = rng.standard_normal((n, cfg.C, cfg.J)) * sigma
    amp = np.zeros((n, cfg.C))
    for c in cfg.informative_channels:
        amp[:, c] = sigma * (y * cfg.effect_size + cfg.amplitude_jitter * rng.standard_normal(n))
    for a, b in cfg.coupled_pairs:
        u = sigma * cfg.coupling_spread * rng.standard_normal(n)
        amp[:, a] = sigma * y * cfg.effect_size / 2 + u
        amp[:, b] = sigma * y * cfg.effect_size / 2 - u
    x += amp[:, :, None] * cfg.waveform()[None, None, :]
    x = x.astype(np.float32)

    names = tuple(f"CH{c:02d}" for c in range(cfg.C))
    trials = [
        RawTrial(
            subject_id=synthetic_subject_id(int(subj[i]), int(y[i])),
            class_label=int(y[i]),
            trial_index=int(i % cfg.trials_per_subject),
            stimulus_condition=Stimulus.S1_obj,
            channel_names=names,
            samples=x[i],
        )
        for i in range(n)
    ]
    return Dataset(trials, names, cfg.J), set(cfg.ground_truth)


def matched_filter_accuracy(config: SyntheticConfig, channel: int) -> float:
    """Closed-form Bayes accuracy of classifying one channel on its own.

    Every channel is Gaussian with a class-independent covariance
    ``sigma^2 (I + s^2 w w^T)`` and class mean along ``w``, so the matched
    filter is optimal and the error is ``Phi(-d'/2)``.
    """
    energy = float(np.sum(config.waveform() ** 2))
    if channel in config.informative_channels:
        gap, spread = config.effect_size, config.amplitude_jitter
    elif any(channel in p for p in config.coupled_pairs):
        gap, spread = config.effect_size / 2, config.coupling_spread
    else:
        return 0.5
    d = gap / math.sqrt(spread**2 + 1.0 / energy)
    return 0.5 * (1.0 + math.erf(d / 2 / math.sqrt(2)))


# --------------------------------------------------------------------------
# native cache

CACHE_MAGIC = b"ERNS"
CACHE_VERSION = 1


def dumps_dataset(dataset: Dataset) -> bytes:
    meta = {
        "channel_names": list(dataset.channel_names),
        "J": dataset.J,
        "trials": [
            {
                "subject_id": t.subject_id,
                "class_label": t.class_label,
                "trial_index": t.trial_index,
                "stimulus": t.stimulus_condition.value,
            }
            for t in dataset.trials
        ],
    }
    head = json.dumps(meta, sort_keys=True).encode()
    body = np.ascontiguousarray(dataset.tensor, dtype="<f4").tobytes()
    return CACHE_MAGIC + struct.pack("<HI", CACHE_VERSION, len(head)) + head + body


def loads_dataset(data: bytes) -> Dataset:
    if data[:4] != CACHE_MAGIC:
        raise FormatError("not a dataset cache (bad magic)")
    version, head_len = struct.unpack_from("<HI", data, 4)
    if version != CACHE_VERSION:
        raise FormatError(f"unsupported dataset cache version {version}")
    meta = json.loads(data[10 : 10 + head_len])
    names, J = tuple(meta["channel_names"]), meta["J"]
    n = len(meta["trials"])
    body = data[10 + head_len :]
    if len(body) != n * len(names) * J * 4:
        raise FormatError("dataset cache body has the wrong size")
    tensor = np.frombuffer(body, dtype="<f4").reshape(n, len(names), J).astype(np.float32)
    trials = [
        RawTrial(m["subject_id"], m["class_label"], m["trial_index"], Stimulus(m["stimulus"]), names, tensor[i])
        for i, m in enumerate(meta["trials"])
    ]
    return Dataset(trials, names, J)


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_bytes(dumps_dataset(dataset))


def load_cache(path) -> Dataset:
    return loads_dataset(Path(path).read_bytes())


def fingerprint(dataset: Dataset) -> str:
    """SHA-256 of the cache encoding, computed trial by trial."""
    h = hashlib.sha256()
    h.update(json.dumps([list(dataset.channel_names), dataset.J]).encode())
    for t in dataset.trials:
        h.update(json.dumps([t.subject_id, t.class_label, t.trial_index, t.stimulus_condition.value]).encode())
        h.update(np.ascontiguousarray(t.samples, dtype="<f4").tobytes())
    return h.hexdigest()
