import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ernest.dataset import Dataset, SyntheticConfig, generate_synthetic
from ernest.errors import ConfigError, EmptyDataset, LabelError, MetricError, SchemaError
from ernest.evaluation import (
    LR,
    SVM,
    ClassifierModel,
    EvalReport,
    ReducedTrialMatrix,
    accuracy,
    auroc,
    check_selection,
    classifier_kind,
    cross_validate,
    error_rate,
    evaluate_rankings,
    objective,
    reduce_matrix,
    reduce_new_trials,
    stratified_folds,
    train_classifier,
)
from ernest.features import EmbedderHyper, TrialVectorMatrix, build_trial_matrix, train_channel_embedders
from ernest.nn import Conv1D, Dense, GlobalAveragePool, ReLU, Softmax


def auroc_oracle(scores, labels):
    """Mann-Whitney count over all positive/negative pairs, ties worth one half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for n in neg:
            total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


# ---------------------------------------------------------------- metrics


def test_auroc_matches_pair_count_on_random_vectors():
    r = np.random.default_rng(0)
    for _ in range(50):
        n = int(r.integers(2, 60))
        labels = np.r_[0, 1, r.integers(0, 2, n)]
        scores = np.round(r.normal(size=len(labels)), 1)  # rounding forces ties
        assert abs(auroc(scores, labels) - auroc_oracle(scores, labels)) <= 1e-12


def test_auroc_edge_values():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auroc([0.5] * 4, [0, 1, 0, 1]) == 0.5


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(-50, 50), min_size=4, max_size=40), st.integers(0, 2**32 - 1))
def test_auroc_invariant_under_monotone_transform(scores, seed):
    # small integers keep every transform strictly monotone in floating point
    scores = np.array(scores, dtype=np.float64)
    labels = np.random.default_rng(seed).integers(0, 2, len(scores))
    labels[:2] = [0, 1]
    a = auroc(scores, labels)
    assert a == auroc(2 * scores + 7, labels)
    assert a == auroc(scores**3 - 1, labels)
    assert a == auroc(np.exp(scores / 10), labels)
    assert abs(a + auroc(-scores, labels) - 1.0) <= 1e-12


def test_auroc_errors():
    with pytest.raises(MetricError):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(MetricError):
        auroc([0.1, np.nan], [0, 1])
    with pytest.raises(MetricError):
        auroc([0.1, 0.2], [0, 2])


def test_accuracy_and_error_rate():
    assert accuracy([1, 0, 1, 1], [1, 0, 0, 1]) == 0.75
    assert error_rate([1, 0, 1, 1], [1, 0, 0, 1]) == 0.25


# ---------------------------------------------------------------- classifiers


@pytest.mark.parametrize("kind", [LR, SVM])
def test_objective_gradient_matches_finite_differences(kind):
    r = np.random.default_rng(1)
    X = r.normal(size=(30, 4))
    s = np.where(r.random(30) < 0.5, -1.0, 1.0)
    theta = r.normal(size=5) * 0.3
    _, g = objective(kind, theta, X, s, 0.7)
    eps = 1e-6
    num = np.array([
        (objective(kind, theta + eps * e, X, s, 0.7)[0] - objective(kind, theta - eps * e, X, s, 0.7)[0]) / (2 * eps)
        for e in np.eye(5)
    ])
    assert np.max(np.abs(num - g)) < 1e-6


def separable(n=80, seed=2):
    r = np.random.default_rng(seed)
    X = r.normal(size=(n, 2))
    keep = np.abs(X[:, 0] + X[:, 1]) > 0.3
    X = X[keep]
    return X, (X[:, 0] + X[:, 1] > 0).astype(int)


@pytest.mark.parametrize("kind", [LR, SVM])
def test_separable_data_is_fit(kind):
    X, y = separable()
    model = train_classifier(kind, X, y, reg=100.0)
    assert accuracy(model.predict(X), y) == 1.0
    assert model.meta["converged"]


def test_label_flip_negates_lr_weights():
    r = np.random.default_rng(3)
    X = r.normal(size=(60, 3))
    y = (X @ [1.0, -0.5, 0.2] + r.normal(size=60) > 0).astype(int)
    a = train_classifier(LR, X, y, tol=1e-12)
    b = train_classifier(LR, X, 1 - y, tol=1e-12)
    assert np.allclose(a.weights, -b.weights, atol=1e-5)
    assert abs(a.bias + b.bias) < 1e-5


def test_objective_never_increases_during_training():
    r = np.random.default_rng(4)
    X = r.normal(size=(50, 3)) * [1, 10, 100]
    y = (X[:, 0] + r.normal(size=50) > 0).astype(int)
    model = train_classifier(SVM, X, y, tol=1e-10)
    trace = model.meta.get("trace")
    if trace is not None:
        assert all(b <= a + 1e-15 for a, b in zip(trace, trace[1:]))
    s = 2.0 * y - 1
    theta = np.r_[model.weights, model.bias]
    # objective at the fitted point is no worse than at zero
    assert objective(SVM, theta, X, s, 1.0)[0] <= objective(SVM, np.zeros(4), X, s, 1.0)[0]


def test_single_class_training_is_rejected():
    with pytest.raises(LabelError):
        train_classifier(LR, np.zeros((4, 2)), [1, 1, 1, 1])


def test_width_mismatch_and_kind_aliases():
    m = ClassifierModel(LR, [1.0, 2.0], 0.0)
    with pytest.raises(SchemaError):
        m.decision_function(np.zeros((3, 3)))
    assert classifier_kind("svm") == SVM and classifier_kind("LogisticRegression") == LR
    with pytest.raises(ConfigError):
        classifier_kind("RandomForest")


def test_ties_predict_class_zero():
    m = ClassifierModel(SVM, [0.0], 0.0)
    assert m.predict(np.zeros((2, 1))).tolist() == [0, 0]


# ---------------------------------------------------------------- folds and CV


def test_two_folds_on_four_rows_partition():
    parts = stratified_folds([0, 1, 0, 1], 2, seed=5)
    assert sorted(np.concatenate(parts).tolist()) == [0, 1, 2, 3]
    for p in parts:
        assert sorted(np.array([0, 1, 0, 1])[p].tolist()) == [0, 1]


@settings(max_examples=40, deadline=None)
@given(st.integers(10, 60), st.integers(10, 60), st.integers(2, 10), st.integers(0, 1000))
def test_folds_partition_and_stratify(n0, n1, k, seed):
    labels = np.array([0] * n0 + [1] * n1)
    parts = stratified_folds(labels, k, seed)
    assert sorted(np.concatenate(parts).tolist()) == list(range(n0 + n1))
    counts0 = [int((labels[p] == 0).sum()) for p in parts]
    assert max(counts0) - min(counts0) <= 1


def test_subject_folds_keep_subjects_whole():
    subjects = np.repeat([f"s{i}" for i in range(8)], 3)
    labels = np.repeat([0, 1] * 4, 3)
    parts = stratified_folds(labels, 2, 0, subjects=subjects, mode="subject")
    a, b = (set(subjects[p]) for p in parts)
    assert not a & b


def test_infeasible_folds():
    with pytest.raises(ConfigError):
        stratified_folds([0, 1, 0, 1], 3)
    with pytest.raises(ConfigError):
        stratified_folds([0, 1] * 10, 2, mode="nope")


def test_duplicated_rows_give_zero_fold_spread():
    X = np.repeat(np.array([[0.0, 1.0], [2.0, -1.0]]), 10, axis=0)
    y = np.repeat([0, 1], 10)
    res = cross_validate(X, y, kind=LR, folds=5)
    assert res.auroc_std == 0.0 and res.acc_std == 0.0
    assert res.auroc_mean == 1.0


def test_cv_is_deterministic():
    r = np.random.default_rng(6)
    X = r.normal(size=(40, 3))
    y = np.array([0, 1] * 20)
    assert cross_validate(X, y, seed=3) == cross_validate(X, y, seed=3)


# ---------------------------------------------------------------- reduction and reports


def small_T(C=4, M=2, n=40, seed=7):
    r = np.random.default_rng(seed)
    labels = np.array([0, 1] * (n // 2))
    values = r.normal(size=(n, C * M))
    values[:, 2] += labels * 2.0  # first column of channel 1
    return TrialVectorMatrix(values, labels, [f"s{i}" for i in range(n)], tuple(range(C)), M)


def test_reduce_matrix_orders_blocks_by_selection():
    T = small_T()
    A = reduce_matrix(T, [3, 1])
    assert np.array_equal(A.values, np.hstack([T.block(3), T.block(1)]))
    assert A.K == 2


@pytest.mark.parametrize("sel", [[], [1, 1], [4], [-1]])
def test_bad_selections(sel):
    with pytest.raises(ConfigError):
        check_selection(sel, 4)


def test_reduced_csv_header(tmp_path):
    A = reduce_matrix(small_T(), [2])
    A.to_csv(tmp_path / "a.csv", ["A", "B", "C", "D"])
    assert (tmp_path / "a.csv").read_text().splitlines()[0] == "subject,y,C_0,C_1"


def test_full_K_makes_arms_identical():
    T = small_T()
    rep = evaluate_rankings(T, {"dsaee": [1, 0, 2, 3], "ablation": [0, 3, 2, 1]}, [4, 1], kinds=[LR], folds=4)
    assert rep.cell("dsaee", LR, 4) == rep.cell("ablation", LR, 4)
    assert rep.cell("dsaee", LR, 1)["auroc_mean"] > rep.cell("ablation", LR, 1)["auroc_mean"]
    with pytest.raises(ConfigError):
        evaluate_rankings(T, {"dsaee": [0, 1, 2, 3]}, [5], kinds=[LR], folds=4)


def test_report_json_and_csv_schema():
    T = small_T()
    rep = evaluate_rankings(T, {"dsaee": [2, 0, 1, 3]}, [4, 2], kinds=[LR, SVM], folds=4)
    d = json.loads(rep.to_json())
    assert set(d["arms"]["dsaee"]) == {LR, SVM}
    assert set(d["arms"]["dsaee"][SVM]) == {"4", "2"}
    assert EvalReport.from_dict(d).to_dict() == rep.to_dict()
    lines = rep.to_csv().splitlines()
    assert lines[0].split(",")[:3] == ["arm", "K", "LinearSVM_auroc_mean"]
    assert "RandomForest_auroc_mean" in lines[0]
    assert [ln.split(",")[1] for ln in lines[1:]] == ["4", "2"]
    assert lines[1].split(",")[6:10] == ["", "", "", ""]


def test_report_rejects_out_of_range_metrics():
    with pytest.raises(MetricError):
        EvalReport({"a": {LR: {1: {"auroc_mean": 1.2, "auroc_std": 0.0, "acc_mean": 0.5, "acc_std": 0.0}}}}, 2, 0)


def test_jobs_do_not_change_report():
    T = small_T()
    rk = {"dsaee": [2, 0, 1, 3], "ablation": [1, 0, 2, 3]}
    a = evaluate_rankings(T, rk, [3, 1], folds=4)
    b = evaluate_rankings(T, rk, [3, 1], folds=4, jobs=3)
    assert a.to_json() == b.to_json()


def test_reduce_new_trials_matches_column_selection():
    data = generate_synthetic(SyntheticConfig(n_subjects=4, trials_per_subject=4, C=3, J=32,
                                              informative_channels=(1,), coupled_pairs=(), seed=2))[0]
    hyper = EmbedderHyper(M=2, epochs=1, batch_size=8,
                          layers=[Conv1D(2, 5, 2), ReLU(), GlobalAveragePool(), Dense(2), Dense(2), Softmax()],
                          encoder_layers=4)
    emb = train_channel_embedders(data, hyper, master_seed=1)
    T = build_trial_matrix(emb, data)
    A = reduce_new_trials(emb, [2, 0], data)
    assert np.allclose(A.values, reduce_matrix(T, [2, 0]).values, rtol=0, atol=1e-12)
    assert isinstance(A, ReducedTrialMatrix)
    with pytest.raises(EmptyDataset):
        reduce_new_trials(emb, [0], Dataset([], data.channel_names, data.J))
