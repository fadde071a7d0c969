#!/usr/bin/env python3
"""
scGAN 데이터 증강 툴킷 명령줄
"""

import argparse
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from .config.schema import AUGMENTATIONS, FEATURE_SYSTEMS, PARTITIONS, CliConfig
from .config.settings import Settings
from .services import audio_pipeline as audio
from .services.augment import (
    export_pool, filter_by_discriminator, import_pool, merge, oversample_replicate,
    renormalize_histograms, select_balanced, synthesize_pool, train_ensemble,
)
from .services.classifiers import save_classifier, train_gru_classifier, train_svm
from .services.experiments import (
    GAN_MODES, FeatureBuilder, PlotSeries, average_structures, compare_alternation, compare_baselines,
    coverage_table, export_plot, export_report, gan_config, gen_synthetic_corpus, load_corpus,
    project_pool, projection_series, read_report, run_experiment, sweep_augmentation, toy_mixture,
)
from .services.scgan_engine import load_model, save_model, train
from .utils.errors import ConfigError, DataError, ScganAugError
from .utils.helpers import ensure_directory, read_json, write_json
from .utils.logger import get_logger, setup_logger

COMMANDS = (
    'gen-corpus', 'segment', 'features', 'codebook', 'train-gan', 'synth', 'augment',
    'train-clf', 'eval', 'sweep', 'compare', 'compare-alternation', 'report',
)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class CliArgumentParser(argparse.ArgumentParser):
    """사용법 오류는 종료 코드 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _parse_m_values(text):
    try:
        return [int(v) for v in text.split(',') if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='JSON configuration file')
    common.add_argument('--out', default=None, help='output directory')
    common.add_argument('--seed', type=int, default=None, help='master seed')
    common.add_argument('--jobs', type=int, default=None, help='concurrent runs / ensemble members')
    common.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING, ...')
    common.add_argument('--manifest', help='corpus manifest CSV')
    common.add_argument('--features', help='feature file (CSV or frame container)')
    common.add_argument('--models', nargs='+', help='scGAN model documents')
    common.add_argument('--pool', help='synthesized pool file')
    common.add_argument('--codebook', help='BoAW codebook CSV')
    common.add_argument('--report', help='report or sweep CSV')
    common.add_argument('--m', type=_parse_m_values, help='samples per class, comma-separated for sweep')
    common.add_argument('--system', choices=FEATURE_SYSTEMS, help='feature system')
    common.add_argument('--augmentation', choices=AUGMENTATIONS, help='augmentation type')
    common.add_argument('--runs', type=int, help='independent runs per experiment')

    parser = CliArgumentParser(prog='scgan-aug', description='scGAN data augmentation toolkit')
    commands = parser.add_subparsers(dest='command', metavar='command', parser_class=CliArgumentParser)
    commands.required = True
    for name in COMMANDS:
        commands.add_parser(name, parents=[common], help=f'{name} step')
    return parser


class ScganAugmentation:
    def __init__(self, args):
        self.args = args
        self.logger = get_logger()
        self.config = None
        self.out = None

    def setup(self):
        """설정 결정 (기본값 < JSON < 플래그) 및 출력 디렉토리 준비"""
        try:
            Settings.validate_settings()
        except ValueError as e:
            raise ConfigError(str(e)) from e

        args = self.args
        document = {}
        if args.config:
            try:
                document = read_json(args.config)
            except FileNotFoundError as e:
                raise ConfigError(f"config file not found: {args.config}") from e
            except ValueError as e:
                raise ConfigError(f"{args.config} is not valid JSON: {e}") from e
        config = CliConfig.from_dict(document)

        for name in ('manifest', 'features', 'models', 'pool', 'codebook', 'report'):
            value = getattr(args, name)
            if value is not None:
                setattr(config, name, value)
        if args.jobs is not None:
            config.jobs = args.jobs
        elif 'jobs' not in document:
            config.jobs = Settings.DEFAULT_JOBS
        if args.m is not None:
            config.m_values = args.m
        if args.seed is not None:
            config.seed = args.seed
        elif config.seed is None:
            config.seed = Settings.DEFAULT_SEED
        config = self._apply_run_flags(config)
        # 덮어쓴 값 재검증
        self.config = CliConfig.from_dict(config.to_dict())

        self.out = ensure_directory(Path(args.out or Settings.OUTPUT_ROOT))
        setup_logger(log_dir=self.out, level=args.log_level)
        write_json(self.config.to_dict(), self.out / Settings.RESOLVED_CONFIG_NAME)
        self.logger.info(f"{args.command}: output directory {self.out}")
        return True

    def _apply_run_flags(self, config):
        args = self.args
        run = config.run
        changes = {}
        if args.system is not None:
            changes['feature_system'] = args.system
        if args.augmentation is not None:
            changes['augmentation'] = args.augmentation
        if args.runs is not None:
            changes['runs'] = args.runs
        if args.m is not None and len(args.m) == 1:
            changes['m'] = args.m[0]

        # 마스터 시드가 모든 난수 단계를 결정
        seed = config.seed
        changes['seed'] = seed
        changes['scgan'] = run.scgan.replace(seed=seed)
        changes['classifier'] = run.classifier.replace(seed=seed)
        config.corpus = config.corpus.replace(seed=seed)
        config.run = run.replace(**changes)
        return config

    def run(self):
        handler = getattr(self, '_cmd_' + self.args.command.replace('-', '_'))
        handler()

    @property
    def class_names(self):
        return tuple(c.name for c in self.config.corpus.classes)

    @property
    def num_classes(self):
        return len(self.config.corpus.classes)

    @property
    def rng(self):
        return np.random.default_rng(self.config.run.seed)

    def _load_corpus(self):
        self.config.require('manifest')
        return load_corpus(self.config.manifest, self.class_names, self.config.jobs)

    def _feature_path(self, name, feature_set):
        return self.out / (f'{name}.bin' if feature_set.data_kind == 'sequence' else f'{name}.csv')

    # --- 하위 명령 ------------------------------------------------------

    def _cmd_gen_corpus(self):
        gen_synthetic_corpus(self.config.corpus, self.out)

    def _cmd_segment(self):
        self.config.require('manifest')
        manifest = audio.read_manifest(self.config.manifest)
        root = Path(self.config.manifest).parent
        events_dir = ensure_directory(self.out / 'events')
        rows, segments = [], []
        for entry in manifest.itertuples(index=False):
            clip = audio.read_wav(root / entry.file)
            found = audio.detect_events(clip)
            if not found:
                self.logger.warning(f"{entry.file}: no events detected")
            for j, segment in enumerate(found):
                name = f'{Path(entry.file).stem}_e{j:02d}.wav'
                audio.write_wav(events_dir / name, audio.extract_event(clip, segment))
                rows.append((name, entry.label, entry.partition))
                segments.append((entry.file, j, segment.start, segment.end))
        audio.write_manifest(rows, events_dir / 'manifest.csv')
        pd.DataFrame(segments, columns=['source', 'event', 'start', 'end']).to_csv(
            self.out / 'segments.csv', index=False)
        self.logger.info(f"Segmentation: {len(rows)} event(s) from {len(manifest)} recording(s)")

    def _cmd_codebook(self):
        corpus = self._load_corpus()
        features = self.config.run.features
        codebook = audio.build_codebook(np.vstack(corpus.llds['train']), features.codebook_size,
                                        features.codebook_method, self.rng)
        audio.save_codebook(codebook, self.out / 'codebook.csv')

    def _cmd_features(self):
        corpus = self._load_corpus()
        run = self.config.run
        builder = FeatureBuilder(run.feature_system, run.features)
        if run.feature_system == 'boaw_svm':
            if self.config.codebook:
                builder.codebook = audio.load_codebook(self.config.codebook)
            else:
                builder.fit(corpus.llds['train'], self.rng)
            audio.save_codebook(builder.codebook, self.out / 'codebook.csv')
        for partition in PARTITIONS:
            feature_set = builder.partition(corpus, partition)
            audio.save_features(feature_set, self._feature_path(partition, feature_set))
            self.logger.info(f"{partition}: {len(feature_set)} example(s), shape {feature_set.payload_shape}")

    def _train_set(self):
        self.config.require('features')
        return audio.load_features(self.config.features)

    def _cmd_train_gan(self):
        run = self.config.run
        train_set = self._train_set()
        K = self.num_classes
        balanced = oversample_replicate(train_set, K, self.rng)
        if run.augmentation == 'scgan_ensemble':
            template = gan_config(run, 'scgan', train_set, run.seed, K, base=run.ensemble.template)
            members = train_ensemble(run.ensemble.replace(template=template), balanced, self.config.jobs)
            for j, member in enumerate(members):
                save_model(member, self.out / f'member_{j}.json')
            return
        mode = GAN_MODES.get(run.augmentation, 'scgan')
        model, trace = train(gan_config(run, mode, train_set, run.seed, K), balanced)
        save_model(model, self.out / 'model.json')
        trace.to_frame().to_csv(self.out / 'trace.csv', index=False, float_format='%.17g')

    def _cmd_synth(self):
        self.config.require('models')
        members = [load_model(path) for path in self.config.models]
        pool = synthesize_pool(members, self.config.per_member_per_class, self.rng, self.num_classes)
        pool = filter_by_discriminator(pool, members)
        export_pool(pool, self.out / ('pool.bin' if pool.data_kind == 'sequence' else 'pool.csv'))
        real = audio.load_features(self.config.features) if self.config.features else None
        try:
            frame, ratio = project_pool(pool, real, self.class_names)
        except DataError as e:
            self.logger.warning(f"Projection skipped: {e}")
            return
        frame.to_csv(self.out / 'projection.csv', index=False, float_format='%.17g')
        export_plot(projection_series(frame), self.out / 'projection.svg', 'Pool projection',
                    f'PC1 ({ratio[0]:.0%})', 'PC2', connect=False)

    def _cmd_augment(self):
        self.config.require('pool')
        run = self.config.run
        train_set = self._train_set()
        pool = import_pool(self.config.pool)
        subset = select_balanced(pool, run.m, self.rng, self.num_classes, self.class_names)
        if run.feature_system == 'boaw_svm':
            subset = renormalize_histograms(subset)
        augmented = merge(train_set, subset)
        audio.save_features(augmented, self._feature_path('train_augmented', augmented))
        self.logger.info(f"Augmented training set: {len(train_set)} real + {len(subset)} synthetic")

    def _cmd_train_clf(self):
        run = self.config.run
        train_set = oversample_replicate(self._train_set(), self.num_classes, self.rng)
        if train_set.data_kind == 'sequence':
            model = train_gru_classifier(train_set.X, train_set.y, run.classifier, self.num_classes)
        else:
            model = train_svm(train_set.X, train_set.y, run.complexity, self.num_classes, tol=run.svm_tol,
                              seed=run.seed, scale_features=run.feature_system != 'boaw_svm')
        save_classifier(model, self.out / 'classifier.json')

    def _cmd_eval(self):
        corpus = self._load_corpus()
        report = run_experiment(self.config.run, corpus, self.config.jobs)
        export_report(report, self.out / 'report.csv')

    def _cmd_sweep(self):
        self.config.require('m_values')
        corpus = self._load_corpus()
        curve = sweep_augmentation(self.config.run, corpus, self.config.m_values, self.config.jobs)
        curve.to_csv(self.out / 'sweep.csv', index=False, float_format='%.17g')
        self._plot_curve(curve, self.out / 'sweep.svg')

    def _cmd_compare(self):
        corpus = self._load_corpus()
        run = self.config.run
        baselines = compare_baselines(run, corpus, jobs=self.config.jobs)
        baselines.to_csv(self.out / 'baselines.csv', index=False, float_format='%.17g')
        structures = average_structures(run, corpus, self.config.jobs)
        structures.to_csv(self.out / 'structures.csv', index=False, float_format='%.17g')

    def _cmd_compare_alternation(self):
        run = self.config.run
        toy = None
        if self.config.features:
            train_set = audio.load_features(self.config.features)
        else:
            train_set, *toy = toy_mixture(self.num_classes, rng=self.rng)
        config = gan_config(run, 'scgan', train_set, run.seed, self.num_classes)
        comparison = compare_alternation(config, train_set)
        comparison.stats.to_csv(self.out / 'alternation.csv', index=False, float_format='%.17g')
        if toy:
            centers, center_classes = toy
            coverage = coverage_table(comparison.models, centers, center_classes, 0.2, seed=run.seed)
            coverage.to_csv(self.out / 'coverage.csv', index=False)
        series = []
        for policy, trace in comparison.traces.items():
            for network in ('generator', 'discriminator'):
                losses = trace.losses(network)
                series.append(PlotSeries(f'{policy} {network}', list(range(len(losses))), list(losses)))
        export_plot(series, self.out / 'alternation.svg', 'Training losses', 'step', 'loss')

    def _cmd_report(self):
        self.config.require('report')
        frame = pd.read_csv(self.config.report, float_precision='round_trip')
        if 'm' in frame.columns:
            self._plot_curve(frame, self.out / 'report.svg')
            return
        report = read_report(self.config.report)
        runs = [r.run for r in report.runs]
        series = [
            PlotSeries('devel', runs, [r.dev_uar for r in report.runs]),
            PlotSeries('test', runs, [r.test_uar for r in report.runs]),
        ]
        export_plot(series, self.out / 'report.svg', 'UAR per run', 'run', 'UAR')
        self.logger.info(f"dev {report.dev_mean:.4f} +/- {report.dev_sd:.4f}, "
                         f"test {report.test_mean:.4f} +/- {report.test_sd:.4f}")

    def _plot_curve(self, curve, path):
        series = [
            PlotSeries('devel', curve['m'].tolist(), curve['dev_mean'].tolist(), curve['dev_sd'].tolist()),
            PlotSeries('test', curve['m'].tolist(), curve['test_mean'].tolist(), curve['test_sd'].tolist()),
        ]
        export_plot(series, path, 'UAR vs. added samples per class', 'm', 'UAR')


def dispatch(argv=None):
    """하위 명령 하나 실행 후 프로세스 종료 코드 반환"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE

    logger = get_logger()
    automation = ScganAugmentation(args)
    try:
        automation.setup()
        automation.run()
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScganAugError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        # 예상하지 못한 실패도 런타임 오류로 보고
        logger.exception(f"{args.command} failed unexpectedly")
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    logger.info(f"{args.command} complete")
    return EXIT_OK


def main():
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
