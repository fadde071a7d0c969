import math

import numpy as np
import pytest

from src.config.schema import EnsembleConfig
from src.services.audio_pipeline import AudioClip
from src.services.augment import (
    DROPPED, KEPT, UNFILTERED, AugmentPlan, SynthPool, augment_with_plan, export_pool,
    filter_by_discriminator, import_pool, make_noise, merge, noise_transform, oversample_replicate,
    select_balanced, smote, smote_interpolate, synthesize_pool, train_ensemble, transform_corpus,
)
from src.services.experiments import coverage_table, toy_mixture
from src.services.nn_core import DenseLayerParams
from src.services.records import FeatureSet
from src.services.scgan_engine import init_model, train
from src.utils.errors import DataError, DataKindError, InsufficientPoolError, SilentSignalError

TABLE_TRAIN_COUNTS = (161, 75, 15, 32)


def _counts_set(counts, dim=3, rng=None):
    rng = rng or np.random.default_rng(0)
    y = np.concatenate([np.full(c, k) for k, c in enumerate(counts)])
    return FeatureSet(rng.normal(size=(len(y), dim)), y)


def _pool(counts_per_class, dim=2, kept=True):
    classes = np.concatenate([np.full(c, k) for k, c in enumerate(counts_per_class)])
    verdicts = np.full(len(classes), KEPT if kept else UNFILTERED)
    return SynthPool(np.arange(len(classes) * dim, dtype=float).reshape(-1, dim), classes,
                     np.zeros(len(classes)), verdicts)


def _saturate(model, bias):
    """Replace the discriminator head by a constant-logit layer."""
    head = model.discriminator.dense[-1]
    model.discriminator.dense[-1] = DenseLayerParams(np.zeros_like(head.weight), np.asarray(bias, dtype=float),
                                                     head.activation)
    return model


def test_pool_size_and_determinism(small_config):
    members = [init_model(small_config.replace(hidden_size=h, seed=h), 2) for h in (4, 6, 8, 10)]
    pool = synthesize_pool(members, 100, np.random.default_rng(1))
    assert len(pool) == 1600
    assert np.all(pool.verdicts == UNFILTERED)
    again = synthesize_pool(members, 100, np.random.default_rng(1))
    assert np.array_equal(pool.payloads, again.payloads)
    assert len(synthesize_pool(members, 0, np.random.default_rng(1))) == 0


def test_filter_uses_each_members_discriminator(small_config):
    model = init_model(small_config, 2)
    pool = SynthPool(np.zeros((3, 2)), [1, 2, 3], [0, 0, 0])

    fake_everywhere = _saturate(model, [0, 0, 0, 0, 50])
    assert np.all(filter_by_discriminator(pool, [fake_everywhere]).verdicts == DROPPED)

    says_two = _saturate(init_model(small_config, 2), [0, 0, 50, 0, 0])
    verdicts = filter_by_discriminator(pool, [says_two]).verdicts
    assert list(verdicts) == [DROPPED, KEPT, DROPPED]


def test_filter_is_idempotent(small_config):
    members = [init_model(small_config, 2)]
    pool = synthesize_pool(members, 20, np.random.default_rng(2))
    once = filter_by_discriminator(pool, members)
    twice = filter_by_discriminator(once, members)
    assert np.array_equal(once.verdicts, twice.verdicts)


def test_select_balanced_counts(rng):
    pool = _pool([80, 90, 70, 100])
    subset = select_balanced(pool, 50, rng, 4)
    assert len(subset) == 200
    assert list(subset.class_counts(4)) == [50, 50, 50, 50]
    assert np.all(subset.provenance == 'synthetic')
    assert len(select_balanced(pool, 0, rng, 4)) == 0


def test_select_balanced_names_the_short_class(rng):
    pool = _pool([80, 80, 10, 80])
    with pytest.raises(InsufficientPoolError) as info:
        select_balanced(pool, 50, rng, 4, ('V', 'O', 'T', 'E'))
    assert info.value.class_index == 2
    assert info.value.shortfall == 40
    assert 'T' in str(info.value)


def test_dropped_entries_are_never_selected(rng):
    pool = _pool([10, 10])
    pool.verdicts[:5] = DROPPED
    subset = select_balanced(pool, 5, rng, 2)
    chosen = {tuple(row) for row in subset.X}
    dropped = {tuple(row) for row in pool.payloads[:5]}
    assert not chosen & dropped


def test_merge_counts_and_identity(rng):
    train_set = _counts_set(TABLE_TRAIN_COUNTS, dim=2)
    assert merge(train_set, None) is train_set
    subset = select_balanced(_pool([300] * 4), 250, rng, 4)
    merged = merge(train_set, subset)
    assert list(merged.class_counts(4)) == [411, 325, 265, 282]
    assert np.sum(merged.provenance == 'synthetic') == 1000


def test_smote_interpolate_midpoint():
    assert np.array_equal(smote_interpolate(np.zeros(2), np.array([2.0, 2.0]), 0.5), [1.0, 1.0])


def test_smote_balances_table_counts(rng):
    train_set = _counts_set(TABLE_TRAIN_COUNTS)
    synthetic = smote(train_set, 5, rng=rng)
    assert list(synthetic.class_counts(4)) == [0, 86, 146, 129]
    assert list(merge(train_set, synthetic).class_counts(4)) == [161] * 4


def test_smote_outputs_lie_between_same_class_parents(rng):
    train_set = _counts_set((40, 12), dim=4)
    synthetic = smote(train_set, 5, target_count=1012, rng=rng)
    synthetic = synthetic.subset(np.flatnonzero(synthetic.y == 1))
    parents = train_set.X[train_set.y == 1]
    assert len(synthetic) == 1000
    lo, hi = parents.min(axis=0), parents.max(axis=0)
    assert np.all(synthetic.X >= lo - 1e-12) and np.all(synthetic.X <= hi + 1e-12)
    for x in synthetic.X[:50]:
        # some pair of parents brackets every coordinate with one shared lambda
        found = False
        for i in range(len(parents)):
            d = parents - parents[i]
            with np.errstate(divide='ignore', invalid='ignore'):
                lam = np.nanmedian(np.where(d != 0, (x - parents[i]) / d, np.nan), axis=1)
            candidate = parents[i] + lam[:, None] * d
            if np.any(np.all(np.abs(candidate - x) < 1e-9, axis=1) & (lam >= 0) & (lam <= 1)):
                found = True
                break
        assert found


def test_smote_rejects_small_classes_and_sequences(rng):
    with pytest.raises(DataError):
        smote(_counts_set((20, 4)), 5, rng=rng)
    with pytest.raises(DataKindError):
        smote(FeatureSet(np.zeros((4, 3, 2)), [0, 0, 1, 1]), 1, rng=rng)


def _tone(seconds=1.0, sr=16000):
    t = np.arange(int(seconds * sr)) / sr
    return AudioClip(np.sqrt(2.0) * 0.5 * np.sin(2 * np.pi * 440 * t), sr)


def test_noise_transform_reaches_requested_snr(rng):
    clip = _tone()
    noise = AudioClip(make_noise('white', 3 * len(clip), rng), clip.sample_rate)
    out = noise_transform(clip, noise, 20.0, rng)
    residual = out.samples / out.headroom_gain - clip.samples
    snr = 10 * np.log10(np.mean(clip.samples ** 2) / np.mean(residual ** 2))
    assert snr == pytest.approx(20.0, abs=0.01)


def test_noise_transform_passthrough_and_seeds():
    clip = _tone()
    noise = AudioClip(make_noise('brown', 2 * len(clip), np.random.default_rng(0)), clip.sample_rate)
    assert np.array_equal(noise_transform(clip, noise, math.inf, np.random.default_rng(0)).samples, clip.samples)
    a = noise_transform(clip, noise, 10.0, np.random.default_rng(1))
    b = noise_transform(clip, noise, 10.0, np.random.default_rng(2))
    assert not np.array_equal(a.samples, b.samples)


def test_noise_transform_rejects_silence(rng):
    silent = AudioClip(np.zeros(1600), 16000)
    with pytest.raises(SilentSignalError):
        noise_transform(silent, AudioClip(np.ones(1600), 16000), 10.0, rng)


def test_loud_mix_is_scaled_below_full_scale(rng):
    loud = AudioClip(np.full(1600, 0.99), 16000)
    out = noise_transform(loud, AudioClip(make_noise('white', 3200, rng), 16000), 10.0, rng)
    assert np.max(np.abs(out.samples)) < 1.0
    assert out.headroom_gain < 1.0


def test_transform_corpus_makes_ten_copies(rng):
    copies = transform_corpus([_tone(0.2), _tone(0.3)], rng)
    assert len(copies) == 20
    assert {(kind, snr) for source, kind, snr, _ in copies if source == 0} == {
        (kind, snr) for kind in ('white', 'brown') for snr in (10.0, 13.75, 17.5, 21.25, 25.0)}


def test_oversample_replicate_table_counts(rng):
    train_set = _counts_set(TABLE_TRAIN_COUNTS)
    balanced = oversample_replicate(train_set, 4, rng)
    assert list(balanced.class_counts(4)) == [161] * 4
    assert len(balanced) == 644
    originals = {tuple(row) for row in train_set.X}
    assert all(tuple(row) in originals for row in balanced.X)


def test_oversample_replicate_balanced_is_identity(rng):
    train_set = _counts_set((5, 5, 5))
    assert oversample_replicate(train_set, 3, rng) is train_set
    with pytest.raises(DataError):
        oversample_replicate(_counts_set((5, 5)), 3, rng)


def test_ensemble_members_follow_configured_sizes(small_config, toy):
    train_set, _, _ = toy
    cfg = EnsembleConfig(hidden_sizes=[4, 6, 8, 10], template=small_config.replace(max_iterations=1),
                         seeds=[1, 1, 1, 1])
    members = train_ensemble(cfg, train_set)
    assert [m.config.hidden_size for m in members] == [4, 6, 8, 10]
    assert [m.discriminator.dense[0].out_dim for m in members] == [4, 6, 8, 10]
    z, c = np.zeros((1, 4)), np.eye(4)[:1]
    outputs = [m.generator.forward(np.hstack([z + 0.3, c]))[0] for m in members]
    assert not np.allclose(outputs[0], outputs[1])


def test_singleton_ensemble_matches_mono_training(small_config, toy):
    train_set, _, _ = toy
    template = small_config.replace(hidden_size=6, max_iterations=2)
    [member] = train_ensemble(EnsembleConfig(hidden_sizes=[6], template=template, seeds=[9]), train_set)
    mono, _ = train(template.replace(seed=9), train_set)
    for k, v in mono.generator.named_params().items():
        assert np.array_equal(member.generator.named_params()[k], v)


def test_augment_with_plan_adds_m_per_class(small_config, toy):
    train_set, _, _ = toy
    always_real = _saturate(init_model(small_config.replace(mode='cgan'), 2), [50, 0])
    augmented = augment_with_plan(AugmentPlan(m=5, source='mono', seed=0), [always_real], train_set, 4)
    assert len(augmented) == len(train_set) + 20
    assert list(augmented.subset(np.flatnonzero(augmented.provenance == 'synthetic')).class_counts(4)) == [5] * 4
    assert augment_with_plan(AugmentPlan(m=0), [always_real], train_set, 4) is train_set


def test_augment_with_plan_reports_starved_classes(small_config, toy):
    train_set, _, _ = toy
    # uniform posteriors: every argmax tie resolves to class 0
    undecided = _saturate(init_model(small_config, 2), np.zeros(5))
    with pytest.raises(InsufficientPoolError):
        augment_with_plan(AugmentPlan(m=5, seed=0), [undecided], train_set, 4)


def test_pool_export_round_trip(tmp_path, small_config):
    members = [init_model(small_config, 2)]
    pool = filter_by_discriminator(synthesize_pool(members, 5, np.random.default_rng(3)), members)
    loaded = import_pool(export_pool(pool, tmp_path / 'pool.csv'))
    assert np.array_equal(loaded.payloads, pool.payloads)
    assert np.array_equal(loaded.verdicts, pool.verdicts)

    seq_model = init_model(small_config.replace(data_kind='sequence', sequence_length=3), 2)
    seq_pool = synthesize_pool([seq_model], 2, np.random.default_rng(3))
    seq_loaded = import_pool(export_pool(seq_pool, tmp_path / 'pool.bin'))
    assert np.array_equal(seq_loaded.payloads, seq_pool.payloads)
    assert np.array_equal(seq_loaded.classes, seq_pool.classes)


@pytest.mark.slow
def test_ensemble_covers_at_least_as_many_modes_as_mono(small_config):
    wins = 0
    for seed in range(10):
        train_set, centers, center_classes = toy_mixture(4, modes_per_class=8, per_class=400, sigma=0.2,
                                                         radius=6.0, rng=np.random.default_rng(seed))
        template = small_config.replace(hidden_layers=2, batch_size=64, max_iterations=60, seed=seed)
        members = train_ensemble(EnsembleConfig(hidden_sizes=[16, 24, 32, 40], template=template), train_set)
        # the mono model matches the second ensemble structure
        mono, _ = train(template.replace(hidden_size=24), train_set)
        table = coverage_table({'ensemble': members, 'mono': mono}, centers, center_classes, 0.2,
                               per_class=400, seed=seed).set_index('model')
        wins += int(table.loc['ensemble', 'covered_modes'] >= table.loc['mono', 'covered_modes'])
    assert wins >= 7
