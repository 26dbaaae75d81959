import dataclasses

import numpy as np
import pytest

from ernest.dataset import Dataset, RawTrial, Stimulus, SyntheticConfig, generate_synthetic
from ernest.errors import LabelError, SchemaError
from ernest.features import (
    EmbedderHyper,
    TrialVectorMatrix,
    build_trial_matrix,
    channel_accuracy_ranking,
    embed_dataset,
    embed_trial,
    holdout_subjects,
    load_embedders,
    save_embedders,
    train_channel_embedders,
    zscore,
)
from ernest.nn import Conv1D, Dense, GlobalAveragePool, ReLU, Softmax

TINY = dict(
    M=2, epochs=3, batch_size=16, optimizer={"lr": 1e-2},
    layers=[Conv1D(3, 5, 2), ReLU(), GlobalAveragePool(), Dense(2), Dense(2), Softmax()],
    encoder_layers=4,
)


@pytest.fixture(scope="module")
def data():
    cfg = SyntheticConfig(n_subjects=12, trials_per_subject=6, C=4, J=32, informative_channels=(1,),
                          coupled_pairs=((2, 3),), seed=3)
    return generate_synthetic(cfg)[0]


@pytest.fixture(scope="module")
def embedders(data):
    return train_channel_embedders(data, EmbedderHyper(**TINY), master_seed=11)


def test_one_embedder_per_channel(embedders, data):
    assert [e.channel_index for e in embedders] == list(range(data.C))
    assert [e.channel_name for e in embedders] == list(data.channel_names)
    assert all(0.0 <= e.holdout_accuracy <= 1.0 for e in embedders)
    assert all(e.M == 2 for e in embedders)


def test_block_equals_direct_channel_encoding(embedders, data):
    T = build_trial_matrix(embedders, data)
    assert T.values.shape == (len(data), data.C * 2)
    for c, e in enumerate(embedders):
        direct = e.encoder.predict(zscore(data.signals(c)))
        assert np.array_equal(T.block(c), direct)


def test_embed_trial_matches_matrix_rows(embedders, data):
    T = build_trial_matrix(embedders, data)
    for i in (0, 5, len(data) - 1):
        assert np.allclose(embed_trial(embedders, data.trials[i]), T.values[i], rtol=0, atol=1e-12)
    sub = embed_trial(embedders, data.trials[0], channel_subset=[3, 1])
    assert np.allclose(sub, np.concatenate([T.block(3)[0], T.block(1)[0]]), atol=1e-12)


def test_embedder_sees_only_its_channel(data, embedders):
    # scramble channel 0 in every trial: channels 1..3 must train identically
    trials = []
    for t in data.trials:
        s = t.samples.copy()
        s[0] = s[0][::-1] * 3
        trials.append(RawTrial(t.subject_id, t.class_label, t.trial_index, t.stimulus_condition, t.channel_names, s))
    altered = Dataset(trials, data.channel_names, data.J)
    other = train_channel_embedders(altered, EmbedderHyper(**TINY), master_seed=11)
    for a, b in zip(embedders[1:], other[1:]):
        for pa, pb in zip(a.encoder.params + a.head.params, b.encoder.params + b.head.params):
            for k in pa:
                assert np.array_equal(pa[k], pb[k])


def test_retraining_one_channel_leaves_other_blocks_unchanged(data, embedders):
    T = build_trial_matrix(embedders, data)
    swapped = list(embedders)
    swapped[2] = train_channel_embedders(data, EmbedderHyper(**TINY), master_seed=99, channels=[2])[0]
    T2 = build_trial_matrix(swapped, data)
    for c in (0, 1, 3):
        assert np.array_equal(T.block(c), T2.block(c))
    assert not np.array_equal(T.block(2), T2.block(2))


def test_jobs_do_not_change_results(data, embedders):
    par = train_channel_embedders(data, EmbedderHyper(**TINY), master_seed=11, jobs=3)
    a = build_trial_matrix(embedders, data).values
    b = build_trial_matrix(par, data, jobs=2).values
    assert np.array_equal(a, b)
    assert [e.holdout_accuracy for e in embedders] == [e.holdout_accuracy for e in par]


def test_bundle_round_trip(tmp_path, data, embedders):
    save_embedders(embedders, tmp_path / "bundle")
    again = load_embedders(tmp_path / "bundle")
    assert [e.holdout_accuracy for e in again] == [e.holdout_accuracy for e in embedders]
    assert np.array_equal(build_trial_matrix(again, data).values, build_trial_matrix(embedders, data).values)
    assert (tmp_path / "bundle" / "manifest.json").exists()
    assert len(list((tmp_path / "bundle").glob("channel_*.ernm"))) == data.C


def test_holdout_is_balanced_subject_subset(data):
    held = holdout_subjects(data, 0.15, 11)
    labels = [data.subjects[s] for s in held]
    assert labels.count(0) == labels.count(1) >= 1
    assert held <= set(data.subjects)


def test_single_class_training_set_is_rejected(data):
    only = data.select_subjects([s for s, y in data.subjects.items() if y == 0])
    with pytest.raises(LabelError):
        train_channel_embedders(only, EmbedderHyper(**TINY))


def test_registry_mismatch(embedders, data):
    renamed = Dataset(
        [RawTrial(t.subject_id, t.class_label, t.trial_index, t.stimulus_condition, ("a", "b", "c", "d"), t.samples)
         for t in data.trials],
        ("a", "b", "c", "d"), data.J,
    )
    with pytest.raises(SchemaError):
        embed_dataset(embedders, renamed)
    with pytest.raises(SchemaError):
        embed_dataset(embedders, data, channel_subset=[7])


def test_trial_matrix_csv_header(tmp_path, embedders, data):
    T = build_trial_matrix(embedders, data)
    T.to_csv(tmp_path / "t.csv")
    header = (tmp_path / "t.csv").read_text().splitlines()[0].split(",")
    assert header[:4] == ["subject", "label", "ch0_0", "ch0_1"]
    assert len(header) == 2 + data.C * 2


def test_trial_matrix_validates_shape():
    with pytest.raises(SchemaError):
        TrialVectorMatrix(np.zeros((3, 5)), [0, 1, 0], ["a", "b", "c"], (0, 1), 2)


def test_accuracy_ranking_breaks_ties_by_index(embedders):
    fake = [dataclasses.replace(e, holdout_accuracy=acc) for e, acc in zip(embedders, (0.6, 0.7, 0.6, 0.5))]
    assert channel_accuracy_ranking(fake).order == [1, 0, 2, 3]


def test_zscore_rows():
    x = np.random.default_rng(0).normal(3, 5, size=(4, 50))
    z = zscore(x)
    assert np.allclose(z.mean(axis=1), 0) and np.allclose(z.std(axis=1), 1)
    assert np.all(zscore(np.ones((1, 5))) == 0)


def test_normalize_flag_off_feeds_raw_signals(data):
    hyper = EmbedderHyper(**{**TINY, "epochs": 1})
    hyper.normalize = False
    emb = train_channel_embedders(data, hyper, master_seed=1, channels=[0])
    direct = emb[0].encoder.predict(data.signals(0))
    assert np.array_equal(emb[0].embed(data.signals(0)), direct)
