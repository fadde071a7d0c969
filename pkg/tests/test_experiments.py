import math

import numpy as np
import pytest

from src.config.schema import (
    AlternationPolicy, CorpusSpec, EnsembleConfig, FeatureConfig, GruClassifierConfig, RunConfig, ScganConfig,
)
from src.services.audio_pipeline import detect_events, read_manifest, read_wav
from src.services.augment import DROPPED, SynthPool, filter_by_discriminator, synthesize_pool
from src.services.classifiers import gru_posteriors, train_gru_classifier
from src.services.experiments import (
    Corpus, EvalReport, PlotSeries, RunResult, augment_plan, average_structures, compare_alternation,
    compare_baselines, coverage_table, export_plot, export_report, fixed_schedule_steps, gen_synthetic_corpus,
    load_corpus, loss_smoothness, mode_coverage, pca_project, project_pool, projection_series, read_report,
    run_experiment, sweep_augmentation, toy_mixture, uar,
)
from src.services.records import FeatureSet
from src.services.scgan_engine import generate_batch, init_model, train
from src.utils.errors import ConfigError, DataError, DimensionError

NAMES = ('V', 'O', 'T', 'E')


def _lld_corpus(per_class=6, frames=45, dim=3, seed=0):
    """Corpus of random LLD contours whose mean level depends on the class."""
    rng = np.random.default_rng(seed)
    llds, labels, recordings = {}, {}, {}
    for partition in ('train', 'devel', 'test'):
        y = np.repeat(np.arange(4), per_class)
        llds[partition] = [k + 0.3 * rng.normal(size=(frames, dim)) for k in y]
        labels[partition] = y
        recordings[partition] = [f'{partition}_{i:03d}' for i in range(len(y))]
    return Corpus(NAMES, {}, llds, labels, recordings)


def test_uar_examples(rng):
    labels = np.repeat(np.arange(4), [155, 65, 16, 27])
    assert uar(labels, labels, 4) == 1.0
    assert uar(np.zeros_like(labels), labels, 4) == pytest.approx(0.25)
    random = rng.integers(4, size=40_000)
    assert uar(random, rng.integers(4, size=40_000), 4) == pytest.approx(0.25, abs=0.01)


def test_uar_rejects_bad_input():
    with pytest.raises(DataError):
        uar([], [], 4)
    with pytest.raises(DimensionError):
        uar([0, 1], [0, 1, 2], 4)
    with pytest.raises(DataError):
        uar([0], [4], 4)


def test_uar_counts_absent_classes_as_zero():
    assert uar([0, 1], [0, 1], 4) == pytest.approx(0.5)


def test_synthetic_corpus_layout(tmp_path):
    spec = CorpusSpec.scarce(per_class=10, devel_per_class=10, test_per_class=10, seed=3)
    manifest = gen_synthetic_corpus(spec, tmp_path)
    assert len(manifest) == 120
    assert sorted(p.name for p in tmp_path.glob('*.wav')) == sorted(manifest['file'])
    assert len(read_manifest(tmp_path / 'manifest.csv')) == 120
    for name in manifest['file'][manifest['partition'] == 'train']:
        assert len(detect_events(read_wav(tmp_path / name))) == 1


def test_run_experiment_is_deterministic():
    corpus = _lld_corpus()
    cfg = RunConfig(runs=2, seed=5, svm_c=1.0)
    first = run_experiment(cfg, corpus)
    second = run_experiment(cfg, corpus)
    assert np.array_equal(first.values('dev_uar'), second.values('dev_uar'))
    assert np.array_equal(first.values('test_uar'), second.values('test_uar'))
    assert [r.seed for r in first.runs] == [r.seed for r in second.runs]
    assert first.config['seed'] == 5


def test_run_experiment_counts_every_recording():
    corpus = _lld_corpus()
    report = run_experiment(RunConfig(runs=1, seed=1, svm_c=1.0), corpus)
    [result] = report.runs
    assert result.dev_confusion.sum() == len(corpus.labels['devel'])
    assert 0.0 <= result.dev_uar <= 1.0


def test_smote_run_on_functionals():
    report = run_experiment(RunConfig(augmentation='smote', runs=1, seed=2, svm_c=1.0), _lld_corpus())
    assert len(report.runs) == 1


def test_gru_runs_vote_per_recording():
    corpus = _lld_corpus(per_class=3, frames=50)
    cfg = RunConfig(feature_system='llds_gru', runs=1, seed=4,
                    classifier=GruClassifierConfig(hidden_size=4, hidden_layers=1, steps=5))
    [result] = run_experiment(cfg, corpus).runs
    assert result.test_confusion.sum() == len(corpus.labels['test'])


def test_boaw_run():
    cfg = RunConfig(feature_system='boaw_svm', runs=1, seed=3,
                    features=FeatureConfig(codebook_size=8, boaw_assignments=2))
    [result] = run_experiment(cfg, _lld_corpus()).runs
    assert result.dev_confusion.shape == (4, 4)


def test_smote_with_sequences_is_a_config_error():
    with pytest.raises(ConfigError):
        RunConfig(feature_system='llds_gru', augmentation='smote')
    with pytest.raises(ConfigError):
        RunConfig.from_dict({'feature_system': 'llds_gru', 'augmentation': 'smote'})


def test_augment_plan_follows_the_run_config():
    plan = augment_plan(RunConfig(feature_system='boaw_svm', augmentation='scgan_ensemble', m=7), 3)
    assert (plan.m, plan.source, plan.seed, plan.histograms) == (7, 'ensemble', 3, True)
    mono = augment_plan(RunConfig(augmentation='cgan', pool_oversample=2), 0)
    assert (mono.source, mono.oversample, mono.histograms) == ('mono', 2, False)


def test_sweep_rows_and_validation():
    corpus = _lld_corpus()
    cfg = RunConfig(augmentation='scgan_mono', runs=1, seed=6, svm_c=1.0)
    frame = sweep_augmentation(cfg, corpus, [0])
    assert list(frame['m']) == [0]
    assert frame['runs'].iloc[0] == 1
    baseline = run_experiment(cfg.replace(augmentation='none'), corpus)
    # m = 0 adds nothing, so it reproduces the baseline
    assert frame['dev_mean'].iloc[0] == baseline.dev_mean
    for bad in ([], [5, 0], [-1, 2], [3, 3]):
        with pytest.raises(ConfigError):
            sweep_augmentation(cfg, corpus, bad)


def test_baseline_table_rows():
    corpus = _lld_corpus()
    cfg = RunConfig(runs=1, seed=2, svm_c=1.0)
    frame = compare_baselines(cfg, corpus, augmentations=('none', 'smote'))
    assert list(frame['augmentation']) == ['none', 'smote']
    assert frame['dev_mean'].iloc[0] == run_experiment(cfg, corpus).dev_mean
    assert frame[['dev_mean', 'test_mean']].apply(lambda c: c.between(0.0, 1.0)).all().all()


def test_baseline_table_skips_smote_for_sequences():
    corpus = _lld_corpus(per_class=3, frames=50)
    cfg = RunConfig(feature_system='llds_gru', runs=1, seed=4,
                    classifier=GruClassifierConfig(hidden_size=4, hidden_layers=1, steps=5))
    frame = compare_baselines(cfg, corpus, augmentations=('none', 'smote'))
    assert list(frame['augmentation']) == ['none']


def test_structure_table_has_average_row():
    corpus = _lld_corpus()
    cfg = RunConfig(m=0, runs=1, seed=6, svm_c=1.0, ensemble=EnsembleConfig(hidden_sizes=[4, 6]))
    frame = average_structures(cfg, corpus)
    assert list(frame['structure']) == ['net-4', 'net-6', 'average']
    # m = 0 leaves every structure at the baseline
    baseline = run_experiment(cfg, corpus).dev_mean
    assert frame['dev_mean'].tolist() == pytest.approx([baseline] * 3)


def test_loss_smoothness():
    assert loss_smoothness(np.full(300, 0.5)) == (0.0, 0.0)
    final_sd, window_sd = loss_smoothness(np.arange(10.0), final=4, window=50)
    assert final_sd == pytest.approx(np.std([6.0, 7.0, 8.0, 9.0]))
    assert window_sd == pytest.approx(np.std(np.arange(10.0)))
    assert all(math.isnan(v) for v in loss_smoothness([]))


def test_identical_policies_give_identical_statistics(small_config, toy):
    train_set, _, _ = toy
    comparison = compare_alternation(small_config, train_set,
                                     {'a': AlternationPolicy(), 'b': AlternationPolicy()}, final=20, window=5)
    stats = comparison.stats
    a = stats[stats['policy'] == 'a'].drop(columns='policy').reset_index(drop=True)
    b = stats[stats['policy'] == 'b'].drop(columns='policy').reset_index(drop=True)
    assert a.equals(b)
    assert comparison.total_final_sd('a') == pytest.approx(comparison.total_final_sd('b'), nan_ok=True)


def test_default_comparison_runs_both_policies(small_config, toy):
    train_set, _, _ = toy
    config = small_config.replace(max_iterations=2)
    comparison = compare_alternation(config, train_set, final=20, window=5)
    assert set(comparison.traces) == {'fixed', 'dynamic'}
    assert len(comparison.stats) == 4
    budget = fixed_schedule_steps(config, len(train_set))
    assert budget == 2 * 2 * math.ceil(len(train_set) / config.batch_size)
    assert all(len(trace) == budget for trace in comparison.traces.values())


def test_report_round_trip(tmp_path):
    confusion = np.eye(4, dtype=np.int64)
    runs = [RunResult(i, 100 + i, 0.1 * (i + 1), 1.0 / 3.0 + i, confusion, confusion) for i in range(3)]
    report = EvalReport({'runs': 3, 'seed': 9}, runs)
    path = export_report(report, tmp_path / 'report.csv')
    assert (tmp_path / 'report.config.json').exists()

    loaded = read_report(path)
    assert loaded.config == {'runs': 3, 'seed': 9}
    assert np.array_equal(loaded.values('test_uar'), report.values('test_uar'))
    assert [r.seed for r in loaded.runs] == [100, 101, 102]
    assert np.array_equal(loaded.runs[0].dev_confusion, confusion)
    assert abs(loaded.dev_mean - np.mean([0.1, 0.2, 0.3])) < 1e-12


def test_plot_export(tmp_path):
    svg = export_plot([], tmp_path / 'empty.svg', title='nothing').read_text(encoding='utf-8')
    assert 'no data' in svg

    series = [PlotSeries('mono', [0, 100, 250], [0.5, 0.55, 0.6], [0.01, 0.02, 0.0]),
              PlotSeries('ensemble <4>', [0, 100, 250], [0.5, 0.58, 0.62])]
    svg = export_plot(series, tmp_path / 'plot.svg', x_label='m', y_label='UAR').read_text(encoding='utf-8')
    assert svg.count('<polyline') == 2
    assert 'ensemble &lt;4&gt;' in svg
    assert 'no data' not in svg


def test_pca_first_component_is_optimal(rng):
    X = rng.normal(size=(200, 3)) * [5.0, 1.0, 0.2]
    projected, ratio = pca_project(X)
    assert projected.shape == (200, 2)
    assert ratio[0] >= ratio[1]
    centered = X - X.mean(axis=0)
    for _ in range(20):
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        assert np.var(centered @ direction) <= np.var(projected[:, 0]) + 1e-9


def test_mode_coverage(toy):
    _, centers, center_classes = toy
    assert mode_coverage(centers, center_classes, centers, center_classes, 0.2).all()
    only_first = mode_coverage(centers[:1], [0], centers, center_classes, 0.2)
    assert only_first.tolist() == [True, False, False, False]


def test_project_pool_frames_real_and_kept_samples(small_config, toy):
    train_set, _, _ = toy
    members = [init_model(small_config, 2)]
    raw = synthesize_pool(members, 10, np.random.default_rng(2))
    pool = filter_by_discriminator(raw, members)
    frame, ratio = project_pool(pool, train_set, NAMES)
    kept = len(pool.survivors())
    assert len(frame) == len(train_set) + kept
    assert (frame['source'] == 'real').sum() == len(train_set)
    assert set(frame['class']) <= set(NAMES)
    assert ratio[0] >= ratio[1]
    series = projection_series(frame)
    assert sum(len(s.x) for s in series) == len(frame)
    assert all(s.label.split()[0] in ('real', 'synthetic') for s in series)

    unfiltered, _ = project_pool(raw)
    assert len(unfiltered) == len(raw)
    assert set(unfiltered['class']) == {0, 1, 2, 3}


def test_project_pool_needs_two_samples():
    dropped = SynthPool(np.zeros((3, 2)), [0, 1, 2], [0, 0, 0], [DROPPED] * 3)
    with pytest.raises(DataError):
        project_pool(dropped)


def test_projection_plot_has_no_lines(tmp_path, toy):
    train_set, _, _ = toy
    pool = SynthPool(train_set.X[:20] + 0.1, train_set.y[:20], np.zeros(20))
    frame, _ = project_pool(pool, train_set, NAMES)
    svg = export_plot(projection_series(frame), tmp_path / 'projection.svg', connect=False)
    text = svg.read_text(encoding='utf-8')
    assert '<polyline' not in text
    assert text.count('<circle') == len(frame)


def test_coverage_table_counts_modes(small_config, toy):
    _, centers, center_classes = toy
    mono = init_model(small_config, 2)
    pair = [init_model(small_config.replace(seed=4), 2), init_model(small_config.replace(seed=5), 2)]
    frame = coverage_table({'mono': mono, 'pair': pair}, centers, center_classes, 0.2, per_class=20)
    assert list(frame['model']) == ['mono', 'pair']
    assert (frame['modes'] == 4).all()
    assert frame['covered_modes'].between(0, 4).all()
    again = coverage_table({'mono': mono, 'pair': pair}, centers, center_classes, 0.2, per_class=20)
    assert frame.equals(again)


@pytest.mark.slow
def test_synthetic_corpus_is_learnable(tmp_path):
    gen_synthetic_corpus(CorpusSpec.scarce(per_class=15, seed=1), tmp_path)
    corpus = load_corpus(tmp_path / 'manifest.csv', NAMES)
    report = run_experiment(RunConfig(runs=1, seed=0), corpus)
    assert report.test_mean > 0.5


@pytest.mark.slow
def test_dynamic_alternation_gives_smoother_losses():
    wins = 0
    for seed in range(10):
        train_set, _, _ = toy_mixture(4, per_class=200, rng=np.random.default_rng(seed))
        comparison = compare_alternation(ScganConfig(seed=seed), train_set)
        wins += int(comparison.total_final_sd('dynamic') < comparison.total_final_sd('fixed'))
    assert wins >= 7


@pytest.mark.slow
def test_scgan_samples_raise_scarce_corpus_uar(tmp_path):
    gen_synthetic_corpus(CorpusSpec.scarce(per_class=20, seed=3), tmp_path)
    corpus = load_corpus(tmp_path / 'manifest.csv', NAMES)
    cfg = RunConfig(augmentation='scgan_mono', runs=10, seed=0)
    curve = sweep_augmentation(cfg, corpus, [0, 50, 250]).set_index('m')
    baseline = curve.loc[0, 'dev_mean']
    assert curve.loc[50, 'dev_mean'] >= baseline
    assert curve.loc[250, 'dev_mean'] >= baseline + 0.03


def _two_class_sequences(rng, per_class=60, steps=10, dim=2):
    """Rising vs. falling contours with noise."""
    ramp = np.linspace(-1.0, 1.0, steps)[:, None] * np.ones(dim)
    X = np.concatenate([np.repeat(ramp[None], per_class, axis=0), np.repeat(-ramp[None], per_class, axis=0)])
    X = X + 0.15 * rng.normal(size=X.shape)
    return FeatureSet(X, np.repeat([0, 1], per_class))


@pytest.mark.slow
def test_generated_sequences_are_separable_by_a_gru_oracle():
    accuracies = []
    for seed in range(5):
        rng = np.random.default_rng(seed)
        train_set = _two_class_sequences(rng)
        config = ScganConfig(num_classes=2, data_kind='sequence', sequence_length=10, latent_dim=4,
                             hidden_size=16, hidden_layers=1, batch_size=32, max_iterations=60, seed=seed)
        model, _ = train(config, train_set)
        oracle = train_gru_classifier(train_set.X, train_set.y,
                                      GruClassifierConfig(hidden_size=8, hidden_layers=1, steps=150, seed=seed), 2)
        classes = np.repeat([0, 1], 100)
        generated = generate_batch(model, classes, np.random.default_rng(seed + 100))
        assert generated.shape == (200, 10, 2)
        predicted = np.argmax(gru_posteriors(oracle, generated), axis=1)
        accuracies.append(np.mean(predicted == classes))
    assert np.mean(accuracies) > 0.7
