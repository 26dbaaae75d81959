"""Linear classifiers on reduced trial matrices, exact metrics and the K sweep.

Both classifiers are fitted by full-batch gradient descent on a smooth,
L2-regularised objective. Features are standardised internally and the
solution is folded back so ``weights``/``bias`` act on raw columns.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .errors import ConfigError, EmptyDataset, LabelError, MetricError, SchemaError
from .features import TrialVectorMatrix, embed_dataset
from .rng import rng_stream

log = logging.getLogger(__name__)

LR = "LogisticRegression"
SVM = "LinearSVM"
KINDS = (LR, SVM)
_ALIASES = {"lr": LR, "logistic": LR, "logisticregression": LR, "svm": SVM, "linearsvm": SVM}

# reserved for externally produced random-forest numbers
RESERVED_KINDS = ("RandomForest",)


def classifier_kind(name) -> str:
    key = str(name).replace("_", "").replace("-", "").lower()
    try:
        return _ALIASES[key]
    except KeyError:
        raise ConfigError(f"unknown classifier {name!r}; expected one of {KINDS}") from None


# --------------------------------------------------------------------------
# reduced matrices


@dataclass
class ReducedTrialMatrix:
    """P x (K*M) matrix; block ``k`` holds channel ``selected_channels[k]``."""

    values: np.ndarray
    labels: np.ndarray
    subjects: np.ndarray
    selected_channels: tuple
    M: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.subjects = np.asarray(self.subjects)
        self.selected_channels = tuple(int(c) for c in self.selected_channels)
        if self.values.shape != (len(self.labels), len(self.selected_channels) * self.M):
            raise SchemaError(
                f"reduced matrix shape {self.values.shape} does not fit "
                f"{len(self.labels)} rows x {len(self.selected_channels)} blocks of {self.M}"
            )

    @property
    def K(self):
        return len(self.selected_channels)

    def to_csv(self, path_or_buf, channel_names=None):
        own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
        fh = open(path_or_buf, "w", newline="") if own else path_or_buf
        try:
            w = csv.writer(fh)
            names = channel_names or {}
            cols = [
                f"{names[c] if c in names or isinstance(names, (list, tuple)) else 'ch' + str(c)}_{m}"
                for c in self.selected_channels for m in range(self.M)
            ]
            w.writerow(["subject", "y"] + cols)
            for s, y, row in zip(self.subjects, self.labels, self.values):
                w.writerow([s, int(y)] + [repr(float(v)) for v in row])
        finally:
            if own:
                fh.close()


def check_selection(selection, C) -> tuple:
    selection = tuple(int(c) for c in selection)
    if not selection:
        raise ConfigError("empty channel selection")
    if len(set(selection)) != len(selection):
        raise ConfigError("channel selection has repeated channels")
    bad = [c for c in selection if not 0 <= c < C]
    if bad:
        raise ConfigError(f"selected channels {bad} outside 0..{C - 1}")
    return selection


def reduce_new_trials(embedders, selection, new: Dataset, jobs: int = 1) -> ReducedTrialMatrix:
    """Embed only the selected channels of ``new`` and concatenate in selection order."""
    if len(new) == 0:
        raise EmptyDataset("no trials to reduce")
    selection = check_selection(selection, len(embedders))
    values = embed_dataset(embedders, new, channel_subset=selection, jobs=jobs)
    return ReducedTrialMatrix(values, new.labels, new.subject_ids, selection, embedders[0].M)


def reduce_matrix(T: TrialVectorMatrix, selection) -> ReducedTrialMatrix:
    """Column-select an already embedded matrix (same result as re-embedding)."""
    selection = check_selection(selection, len(T.channel_order))
    values = np.hstack([T.block(c) for c in selection])
    return ReducedTrialMatrix(values, T.row_labels, T.row_subjects, selection, T.M)


# --------------------------------------------------------------------------
# classifiers


def objective(kind, theta, X, s, reg):
    """Mean loss + ``|w|^2 / (2 reg n)`` and its gradient.

    ``theta = [w..., b]``, ``s`` in {-1, +1}. The bias is not penalised.
    Logistic loss for LR, squared hinge for the linear SVM.
    """
    n = len(s)
    w, b = theta[:-1], theta[-1]
    m = s * (X @ w + b)
    if kind == LR:
        # log(1 + exp(-m)) and its derivative, computed stably
        loss = np.logaddexp(0.0, -m)
        dm = -np.exp(-np.logaddexp(0.0, m))
    elif kind == SVM:
        slack = np.maximum(0.0, 1.0 - m)
        loss = slack**2
        dm = -2.0 * slack
    else:
        raise ConfigError(f"unknown classifier kind {kind!r}")
    penalty = w @ w / (2.0 * reg * n)
    g = dm * s / n
    grad = np.empty_like(theta)
    grad[:-1] = X.T @ g + w / (reg * n)
    grad[-1] = g.sum()
    return loss.mean() + penalty, grad


def _lipschitz(kind, X, reg):
    n = len(X)
    Xa = np.hstack([X, np.ones((n, 1))])
    top = np.linalg.norm(Xa, 2) ** 2 / n
    curv = 0.25 if kind == LR else 2.0
    return curv * top + 1.0 / (reg * n)


@dataclass
class ClassifierModel:
    kind: str
    weights: np.ndarray
    bias: float
    regularization: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.kind not in KINDS:
            raise ConfigError(f"unknown classifier kind {self.kind!r}")

    def decision_function(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != len(self.weights):
            raise SchemaError(f"expected {len(self.weights)} features, got shape {X.shape}")
        return X @ self.weights + self.bias

    def predict_proba(self, X):
        """Class-1 probability (logistic link; only meaningful for LR)."""
        z = self.decision_function(X)
        return np.exp(-np.logaddexp(0.0, -z))

    def scores(self, X):
        return self.predict_proba(X) if self.kind == LR else self.decision_function(X)

    def predict(self, X):
        # LR: p > 0.5, SVM: margin > 0; both are z > 0, ties go to class 0
        return (self.decision_function(X) > 0).astype(np.int64)


def train_classifier(kind, X, y, reg: float = 1.0, seed: int = 0, tol: float = 1e-8,
                     max_iter: int = 100_000) -> ClassifierModel:
    """Full-batch gradient descent from zero with step ``1/L``, halved on any increase.

    Stops once the objective changes by less than ``tol`` (relative). The run
    is deterministic; ``seed`` is recorded for provenance only.
    """
    kind = classifier_kind(kind)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise SchemaError("X and y do not align")
    if len(np.unique(y)) < 2:
        raise LabelError("classifier training data contains a single class")
    if reg <= 0:
        raise ConfigError("regularization must be positive")
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    Z = (X - mu) / sd
    s = 2.0 * y - 1.0

    theta = np.zeros(Z.shape[1] + 1)
    f, g = objective(kind, theta, Z, s, reg)
    step = 1.0 / _lipschitz(kind, Z, reg)
    it = 0
    converged = False
    halvings = 0
    while it < max_iter:
        it += 1
        cand = theta - step * g
        f_new, g_new = objective(kind, cand, Z, s, reg)
        if f_new > f:
            step *= 0.5
            halvings += 1
            if step < 1e-20:
                break
            continue
        done = f - f_new <= tol * max(1.0, abs(f))
        theta, f, g = cand, f_new, g_new
        if done:
            converged = True
            break

    w = theta[:-1] / sd
    b = theta[-1] - w @ mu
    meta = {"iterations": it, "objective": float(f), "converged": converged,
            "halvings": halvings, "seed": int(seed)}
    return ClassifierModel(kind, w, float(b), float(reg), meta)


# --------------------------------------------------------------------------
# metrics


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC with ties counted as one half, in exact integer arithmetic."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if len(scores) != len(labels):
        raise MetricError("scores and labels differ in length")
    if np.isnan(scores).any():
        raise MetricError("scores contain NaN")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != len(labels):
        raise MetricError("labels must be 0 or 1")
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both classes")
    values, inverse = np.unique(scores, return_inverse=True)
    pos_at = np.bincount(inverse[pos], minlength=len(values)).astype(object)
    neg_at = np.bincount(inverse[~pos], minlength=len(values)).astype(object)
    neg_below = np.concatenate([[0], np.cumsum(neg_at)[:-1]]).astype(object)
    # twice the count of (pos > neg) pairs plus tied pairs, kept as Python ints
    twice = int(sum(2 * p * nb + p * nt for p, nb, nt in zip(pos_at, neg_below, neg_at)))
    return twice / (2 * n_pos * n_neg)


def accuracy(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise MetricError("accuracy of an empty set")
    return float(np.count_nonzero(predictions == labels)) / len(labels)


def error_rate(predictions, labels) -> float:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise MetricError("error rate of an empty set")
    return float(np.count_nonzero(predictions != labels)) / len(labels)


# --------------------------------------------------------------------------
# cross-validation

CV_MODES = ("row", "subject")


def stratified_folds(labels, folds: int, seed: int = 0, subjects=None, mode: str = "row") -> list:
    """Validation index arrays for each fold.

    ``row`` mode deals each class's shuffled rows round-robin over the
    folds. ``subject`` mode does the same with whole subjects (grouped by
    their label), so no subject spans two folds.
    """
    labels = np.asarray(labels, dtype=np.int64)
    if folds < 2:
        raise ConfigError("need at least 2 folds")
    if mode not in CV_MODES:
        raise ConfigError(f"unknown fold mode {mode!r}; expected one of {CV_MODES}")
    rng = rng_stream(seed, "classifier", 0)
    assignment = np.empty(len(labels), dtype=np.int64)
    if mode == "row":
        for cls in (0, 1):
            idx = np.flatnonzero(labels == cls)
            if len(idx) < folds:
                raise ConfigError(f"class {cls} has {len(idx)} rows, fewer than {folds} folds")
            idx = idx[rng.permutation(len(idx))]
            assignment[idx] = np.arange(len(idx)) % folds
    else:
        if subjects is None:
            raise ConfigError("subject folds need subject ids")
        subjects = np.asarray(subjects)
        by_subject = {}
        for s, y in zip(subjects, labels):
            if by_subject.setdefault(s, int(y)) != int(y):
                raise ConfigError(f"subject {s} carries both labels")
        for cls in (0, 1):
            ids = sorted(s for s, y in by_subject.items() if y == cls)
            if len(ids) < folds:
                raise ConfigError(f"class {cls} has {len(ids)} subjects, fewer than {folds} folds")
            ids = [ids[i] for i in rng.permutation(len(ids))]
            fold_of = {s: i % folds for i, s in enumerate(ids)}
            rows = np.flatnonzero(labels == cls)
            assignment[rows] = [fold_of[s] for s in subjects[rows]]
    return [np.flatnonzero(assignment == f) for f in range(folds)]


@dataclass
class CVResult:
    auroc_mean: float
    auroc_std: float
    acc_mean: float
    acc_std: float
    fold_auroc: list
    fold_acc: list

    def summary(self) -> dict:
        return {"auroc_mean": self.auroc_mean, "auroc_std": self.auroc_std,
                "acc_mean": self.acc_mean, "acc_std": self.acc_std}


def cross_validate(X, y, subjects=None, kind=SVM, folds: int = 10, seed: int = 0,
                   reg: float = 1.0, mode: str = "row", fold_index=None) -> CVResult:
    """Fit on ``folds - 1`` parts, score the held-out part; std uses ddof=0."""
    kind = classifier_kind(kind)
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    parts = fold_index if fold_index is not None else stratified_folds(y, folds, seed, subjects, mode)
    aucs, accs = [], []
    for val in parts:
        fit = np.ones(len(y), dtype=bool)
        fit[val] = False
        model = train_classifier(kind, X[fit], y[fit], reg=reg, seed=seed)
        aucs.append(auroc(model.scores(X[val]), y[val]))
        accs.append(accuracy(model.predict(X[val]), y[val]))
    aucs, accs = np.array(aucs), np.array(accs)
    return CVResult(float(aucs.mean()), float(aucs.std()), float(accs.mean()), float(accs.std()),
                    aucs.tolist(), accs.tolist())


# --------------------------------------------------------------------------
# reports


@dataclass
class EvalReport:
    """``arms[arm][classifier][K] -> {auroc_mean, auroc_std, acc_mean, acc_std}``."""

    arms: dict
    folds: int
    seed: int
    cv_mode: str = "row"
    selections: dict = field(default_factory=dict)  # arm -> full ranking order
    subjects: list = field(default_factory=list)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        for arm in self.arms.values():
            for cells in arm.values():
                for cell in cells.values():
                    for k, v in cell.items():
                        if k.endswith("_mean") and not 0.0 <= v <= 1.0:
                            raise MetricError(f"{k}={v} outside [0, 1]")
                        if k.endswith("_std") and v < 0:
                            raise MetricError(f"{k}={v} is negative")

    def cell(self, arm, kind, K) -> dict:
        return self.arms[arm][classifier_kind(kind)][int(K)]

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "seed": self.seed,
            "cv_mode": self.cv_mode,
            "arms": {
                arm: {kind: {str(K): cell for K, cell in sorted(cells.items())}
                      for kind, cells in sorted(kinds.items())}
                for arm, kinds in sorted(self.arms.items())
            },
            "selections": {arm: list(v) for arm, v in sorted(self.selections.items())},
            "subjects": list(self.subjects),
            **({"extra": self.extra} if self.extra else {}),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d) -> EvalReport:
        arms = {
            arm: {kind: {int(K): dict(cell) for K, cell in cells.items()} for kind, cells in kinds.items()}
            for arm, kinds in d["arms"].items()
        }
        return cls(arms, d["folds"], d["seed"], d.get("cv_mode", "row"),
                   d.get("selections", {}), d.get("subjects", []), d.get("extra", {}))

    def csv_header(self) -> list:
        cols = ["arm", "K"]
        for kind in (SVM,) + RESERVED_KINDS + (LR,):
            cols += [f"{kind}_{m}" for m in ("auroc_mean", "auroc_std", "acc_mean", "acc_std")]
        return cols

    def to_csv(self) -> str:
        """One row per (arm, K); one column group per classifier, RF left blank."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        for arm in sorted(self.arms):
            Ks = sorted({K for cells in self.arms[arm].values() for K in cells}, reverse=True)
            for K in Ks:
                row = [arm, K]
                for kind in (SVM,) + RESERVED_KINDS + (LR,):
                    cell = self.arms[arm].get(kind, {}).get(K)
                    for m in ("auroc_mean", "auroc_std", "acc_mean", "acc_std"):
                        row.append("" if cell is None else repr(cell[m]))
                w.writerow(row)
        return buf.getvalue()


def evaluate_rankings(T_test: TrialVectorMatrix, rankings: dict, K_list, kinds=KINDS, folds: int = 10,
                      seed: int = 0, reg: float = 1.0, mode: str = "row", jobs: int = 1) -> EvalReport:
    """Cross-validate each ``(arm, classifier, K)`` cell on the top-K blocks of ``T_test``.

    Every cell shares one fold assignment, so arms are compared on identical rows.
    """
    C = len(T_test.channel_order)
    K_list = sorted({int(K) for K in K_list}, reverse=True)
    for K in K_list:
        if not 1 <= K <= C:
            raise ConfigError(f"K={K} outside 1..{C}")
    kinds = [classifier_kind(k) for k in kinds]
    parts = stratified_folds(T_test.row_labels, folds, seed, T_test.row_subjects, mode)
    cells = [(arm, kind, K) for arm in sorted(rankings) for kind in kinds for K in K_list]

    def work(cell):
        arm, kind, K = cell
        A = reduce_matrix(T_test, list(rankings[arm])[:K])
        return cross_validate(A.values, A.labels, kind=kind, seed=seed, reg=reg, fold_index=parts).summary()

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]
    arms = {}
    for (arm, kind, K), res in zip(cells, results):
        arms.setdefault(arm, {}).setdefault(kind, {})[K] = res
    subjects = sorted({str(s) for s in T_test.row_subjects})
    return EvalReport(arms, folds, int(seed), mode, {a: list(r) for a, r in rankings.items()}, subjects)


@dataclass
class ExperimentConfig:
    K_list: tuple = (61, 30, 20, 15, 10, 5)
    classifiers: tuple = KINDS
    folds: int = 10
    regularization: float = 1.0
    cv_mode: str = "row"
    ablation: bool = True


@dataclass
class ExperimentResult:
    embedders: list
    ranking: object  # ChannelRanking from the DSAE ensemble
    ablation_ranking: object
    re_matrix: object
    report: EvalReport


def run_experiment(train: Dataset, test: Dataset, K_list=None, config: ExperimentConfig | None = None,
                   embedder_hyper=None, dsaee_config=None, master_seed: int = 0, jobs: int = 1):
    """Embedders on ``train`` -> DSAE ranking -> K sweep on ``test`` for both arms."""
    from .features import build_trial_matrix, channel_accuracy_ranking, train_channel_embedders
    from .selection import rank_channels

    config = config or ExperimentConfig()
    K_list = config.K_list if K_list is None else K_list
    overlap = set(train.subjects) & set(test.subjects)
    if overlap:
        raise SchemaError(f"train and test share subjects: {sorted(overlap)[:5]}")
    for K in K_list:
        if not 1 <= int(K) <= train.C:
            raise ConfigError(f"K={K} outside 1..{train.C}")
    if len(test) == 0:
        raise EmptyDataset("empty test group")
    embedders = train_channel_embedders(train, embedder_hyper, master_seed, jobs=jobs)
    T = build_trial_matrix(embedders, train, jobs=jobs)
    ranking, R = rank_channels(T, dsaee_config, master_seed, jobs=jobs)
    rankings = {"dsaee": ranking.order}
    ablation = None
    if config.ablation:
        ablation = channel_accuracy_ranking(embedders)
        rankings["ablation"] = ablation.order
    T_test = build_trial_matrix(embedders, test, jobs=jobs)
    report = evaluate_rankings(T_test, rankings, K_list, config.classifiers, config.folds,
                               master_seed, config.regularization, config.cv_mode, jobs)
    return ExperimentResult(embedders, ranking, ablation, R, report)
