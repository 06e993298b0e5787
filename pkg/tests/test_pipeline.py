'''Test suite for the run configuration, the end-to-end pipeline and the CLI.

Every pipeline run uses a small synthetic graph and short training so the
whole file finishes in about a minute.

Usage:
    python test_pipeline.py
'''
import contextlib
import filecmp
import io
import logging
import os
import sys
import tempfile
import time

import pandas as pd

# --- Path Setup ---
_project_root_dir = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
if _project_root_dir not in sys.path:
    sys.path.insert(0, _project_root_dir)

try:
    from netdp.cli import main
    from netdp.config import RunConfig, parse_value
    from netdp.errors import ConfigError, IngestError, LabelError, StageError
    from netdp.log import init_logging, kv
    from netdp.pipeline import run_pipeline
except ImportError as e:
    print(f"ERROR: Could not import netdp.pipeline: {e}")
    print(f"Current sys.path: {sys.path}")
    sys.exit(1)

SMALL_RUN = [
    'synth.num_nodes=600', 'synth.num_blocks=2', 'synth.block_default_rates=0.1,0.3',
    'synth.p_in=0.05', 'synth.p_out=0.005',
    'unsup.dim=8', 'unsup.max_epochs=2', 'unsup.batch_size=64', 'unsup.probe_pairs=256',
    'sup.k=8', 'sup.epochs=2', 'sup.batch_size=64', 'sup.fanout=5',
    'mart.num_trees=10', 'mart.max_depth=2', 'mart.min_leaf=5',
]


def expect(exc_type, fn, *args, **kwargs):
    try:
        fn(*args, **kwargs)
    except exc_type as e:
        return e
    raise AssertionError(f"expected {exc_type.__name__}")


def small_config(out_dir: str, *extra: str) -> RunConfig:
    return RunConfig().update(SMALL_RUN + [f"out_dir={out_dir}"] + list(extra))


# --- configuration ---

def test_manifest_round_trip():
    cfg = RunConfig().update(['seed=11', 'unsup.learning_rate=0.0125', 'sup.init_scale=0.3',
                              'synth.block_default_rates=0.01,0.2', 'mart.include_sup_emb=yes'])
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'manifest.txt')
        cfg.write_manifest(path)
        loaded = RunConfig.from_file(path)
    assert loaded == cfg
    assert loaded.unsup.learning_rate == 0.0125
    assert loaded.synth.block_default_rates == (0.01, 0.2)
    assert loaded.sup.init_scale == 0.3 and loaded.unsup.init_scale is None
    assert loaded.mart.include_sup_emb is True


def test_config_file_comments_and_precedence():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'run.cfg')
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write("# a run\nseed=3\n\nunsup.dim=16  # small\n")
        cfg = RunConfig.from_file(path).update(['unsup.dim=32'])
    assert cfg.seed == 3
    assert cfg.unsup.dim == 32


def test_config_errors():
    cfg = RunConfig()
    expect(ConfigError, cfg.set, 'nonsense', '1')
    expect(ConfigError, cfg.set, 'bogus.dim', '1')
    expect(ConfigError, cfg.set, 'unsup', '1')
    expect(ConfigError, cfg.set, 'unsup.nonsense', '1')
    expect(ConfigError, cfg.set, 'unsup.dim', 'eight')
    expect(ConfigError, cfg.set, 'generate', 'maybe')
    expect(ConfigError, cfg.update, ['seed'])
    expect(ConfigError, RunConfig(workers=0).validate)
    expect(ConfigError, RunConfig(generate=False).validate)
    assert parse_value(bool, 'On') is True


def test_resolved_shares_run_wide_settings():
    cfg = RunConfig().update(['seed=5', 'workers=3', 'include_sup_emb=true']).resolved()
    assert cfg.unsup.seed == 5 and cfg.unsup.workers == 3
    assert cfg.sup.seed == 6 and cfg.sup.workers == 3
    assert cfg.synth.seed == 5
    assert cfg.mart.include_sup_emb


def test_logging_helpers():
    assert kv(stage='ingest', loss=0.1234567891, n=3) == 'stage=ingest loss=0.123457 n=3'
    init_logging('warning')
    root = logging.getLogger()
    assert root.level == logging.INFO
    assert all(h.level == logging.WARNING for h in root.handlers)
    expect(ValueError, init_logging, 'chatty')


# --- pipeline ---

def test_run_pipeline_writes_every_artifact():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, 'run')
        report = run_pipeline(small_config(out))
        for name in ('manifest', 'log', 'graph', 'unsup', 'sup_params', 'sup_scores', 'model',
                     'predictions', 'ks_report', 'lift', 'group_degrees', 'synth_edges'):
            assert os.path.exists(report.artifacts[name]), name

        assert list(report.ks.columns[:2]) == ['segment', 'n']
        for col in ('NetDP', 'Bench', 'NetDP+Bench'):
            assert col in report.ks.columns
            overall = report.ks.loc[0, col]
            assert 0.0 <= overall <= 1.0
        assert report.ks.loc[0, 'segment'] == 'overall'
        assert 0.0 <= report.blend_weight <= 1.0
        assert report.lift is not None and len(report.lift.buckets) > 0
        assert report.group_degrees['group'].tolist()[0] == 'active'

        predictions = pd.read_csv(report.artifacts['predictions'])
        assert {'raw_node_id', 'split', 'y', 'NetDP', 'Bench', 'NetDP+Bench', 'group'} <= set(predictions)
        assert predictions['NetDP'].between(0, 1).all()

        assert RunConfig.from_file(report.artifacts['manifest']).unsup.dim == 8
        with open(report.artifacts['log'], encoding='utf-8') as fh:
            log = fh.read()
        assert 'stage=train-unsup event=done' in log


def test_single_worker_runs_are_reproducible():
    with tempfile.TemporaryDirectory() as tmp:
        first = run_pipeline(small_config(os.path.join(tmp, 'a'), 'workers=1'))
        second = run_pipeline(small_config(os.path.join(tmp, 'b'), 'workers=1'))
        for name in ('predictions', 'ks_report', 'lift', 'sup_scores'):
            assert filecmp.cmp(first.artifacts[name], second.artifacts[name], shallow=False), name
        assert first.blend_weight == second.blend_weight


def test_stage_errors_name_the_stage():
    with tempfile.TemporaryDirectory() as tmp:
        err = expect(StageError, run_pipeline, small_config(tmp, 'unsup.dim=0'))
        assert err.stage == 'config'
        assert isinstance(err.__cause__, ConfigError)

        empty = os.path.join(tmp, 'empty.tsv')
        labels = os.path.join(tmp, 'labels.csv')
        open(empty, 'w').close()
        pd.DataFrame({'raw_node_id': ['a'], 'label': [1], 'split': ['train']}).to_csv(labels, index=False)
        err = expect(StageError, run_pipeline,
                     small_config(os.path.join(tmp, 'run'), 'generate=false', f"edges={empty}",
                                  f"labels={labels}"))
        assert err.stage == 'ingest'
        assert isinstance(err.__cause__, IngestError)

        edges = os.path.join(tmp, 'edges.tsv')
        with open(edges, 'w', encoding='utf-8') as fh:
            fh.write("b\tc\nc\tb\n")
        err = expect(StageError, run_pipeline,
                     small_config(os.path.join(tmp, 'run2'), 'generate=false', f"edges={edges}",
                                  f"labels={labels}"))
        assert err.stage == 'ingest'
        assert isinstance(err.__cause__, LabelError)


# --- command line ---

def test_cli_stages_end_to_end():
    with tempfile.TemporaryDirectory() as tmp:
        synth = os.path.join(tmp, 'synth')
        graph = os.path.join(tmp, 'graph')
        emb = os.path.join(tmp, 'unsup.emb')
        sup = os.path.join(tmp, 'sup.csv')
        model = os.path.join(tmp, 'model.bin')
        scores = os.path.join(tmp, 'scores.csv')
        labels = os.path.join(synth, 'labels.csv')
        bench = os.path.join(synth, 'bench.csv')

        steps = [
            ['gen-synth', '--nodes', '600', '--blocks', '2', '--rates', '0.1,0.3', '--p-in', '0.05',
             '--p-out', '0.005', '--out', synth],
            ['ingest', '--edges', os.path.join(synth, 'edges.tsv'), '--out', graph, '--shards', '2'],
            ['train-unsup', '--graph', graph, '--out', emb, '--dim', '8', '--epochs', '2',
             '--batch-size', '64'],
            ['train-sup', '--graph', graph, '--labels', labels, '--out', sup, '--k', '8',
             '--epochs', '2', '--batch-size', '64', '--fanout', '5'],
            ['train-ensemble', '--emb', emb, '--sup', sup, '--labels', labels, '--bench', bench,
             '--out', model, '--num-trees', '10', '--max-depth', '2', '--min-leaf', '5'],
            ['predict', '--model', model, '--emb', emb, '--sup', sup, '--bench', bench, '--out', scores],
            ['evaluate', '--scores', scores, '--labels', labels,
             '--groups', os.path.join(synth, 'groups.csv'), '--per-period',
             '--out', os.path.join(tmp, 'ks.csv')],
            ['lift', '--graph', graph, '--labels', labels, '--out', os.path.join(tmp, 'lift.csv'),
             '--plot', os.path.join(tmp, 'lift.png')],
        ]
        for argv in steps:
            assert main(['--log-level', 'WARNING'] + argv) == 0, argv[0]

        for name in ('group_degrees.csv', 'blocks.csv'):
            assert os.path.exists(os.path.join(synth, name))
        assert os.path.exists(sup + '.params')
        predicted = pd.read_csv(scores)
        assert list(predicted.columns) == ['raw_node_id', 'netdp', 'bench', 'blended']
        ks = pd.read_csv(os.path.join(tmp, 'ks.csv'))
        assert {'netdp', 'bench', 'blended'} <= set(ks.columns)
        assert os.path.getsize(os.path.join(tmp, 'lift.png')) > 0


def test_cli_exit_codes():
    with tempfile.TemporaryDirectory() as tmp:
        empty = os.path.join(tmp, 'empty.tsv')
        open(empty, 'w').close()
        assert main(['--log-level', 'ERROR', 'ingest', '--edges', empty,
                     '--out', os.path.join(tmp, 'graph')]) == 1
        assert main(['--log-level', 'ERROR', 'run', '--out', os.path.join(tmp, 'run'),
                     '--set', 'unsup.dim=0']) == 1
        assert main(['--log-level', 'ERROR', 'run', '--out', os.path.join(tmp, 'run2'),
                     '--set', 'no.such=1']) == 1

        stderr = io.StringIO()
        with contextlib.redirect_stderr(stderr):
            assert main(['--log-level', 'ERROR', 'ingest', '--edges', os.path.join(tmp, 'missing.tsv'),
                         '--out', os.path.join(tmp, 'graph2')]) == 1
        assert 'error stage=ingest: FileNotFoundError' in stderr.getvalue()

        scores = os.path.join(tmp, 'scores.csv')
        labels = os.path.join(tmp, 'labels.csv')
        pd.DataFrame({'raw_node_id': ['a', 'b'], 'netdp': ['high', 'low']}).to_csv(scores, index=False)
        pd.DataFrame({'raw_node_id': ['a', 'b'], 'label': [1, 0], 'split': ['test', 'test'],
                      'period': ['', '']}).to_csv(labels, index=False)
        stderr = io.StringIO()
        with contextlib.redirect_stderr(stderr):
            assert main(['--log-level', 'ERROR', 'evaluate', '--scores', scores, '--labels', labels]) == 1
        assert 'error stage=evaluate: ValueError' in stderr.getvalue()


def test_cli_run_subcommand():
    with tempfile.TemporaryDirectory() as tmp:
        out = os.path.join(tmp, 'run')
        argv = ['--log-level', 'WARNING', 'run', '--out', out, '--seed', '4']
        for pair in SMALL_RUN:
            argv += ['--set', pair]
        assert main(argv) == 0
        manifest = RunConfig.from_file(os.path.join(out, 'manifest.txt'))
        assert manifest.seed == 4 and manifest.sup.seed == 5
        assert os.path.exists(os.path.join(out, 'ks_report.csv'))


def run_all() -> int:
    tests = [(name, fn) for name, fn in globals().items() if name.startswith('test_') and callable(fn)]
    failures = 0
    for name, fn in tests:
        start = time.perf_counter()
        try:
            fn()
            print(f"  PASS {name} ({time.perf_counter() - start:.2f}s)")
        except AssertionError as e:
            failures += 1
            print(f"  FAIL {name}: {e}")
        except Exception as e:
            failures += 1
            print(f"  FAIL {name}: unexpected {type(e).__name__}: {e}")
    print(f"\n--- pipeline: {len(tests) - failures}/{len(tests)} tests passed ---")
    return failures


if __name__ == "__main__":
    sys.exit(1 if run_all() else 0)
