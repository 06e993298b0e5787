'''End-to-end run: generate, ingest, train both embeddings, boost, blend, evaluate.

Every stage runs inside `_stage`, which logs its duration and converts any
failure into a StageError naming the stage. Artifacts already written stay in
the output directory.

Output directory layout:
    manifest.txt        effective configuration (re-runnable with --config)
    run.log             log records of the run
    synth/              generated edges, labels, groups, bench scores, blocks
    graph/              serialized graph store
    unsup.emb(.index)   unsupervised embedding table
    sup.params          supervised parameters
    sup_scores.csv      supervised y_hat of every labeled node
    model.bin           forest + blend weight
    predictions.csv     per labeled node: NetDP, Bench and blended scores
    ks_report.csv       KS overall, per group and per test period
    lift.csv            default-rate lift by default-neighbor count
    group_degrees.csv   mean out-degree per user group
'''
import contextlib
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
import pandas as pd

from .config import RunConfig
from .ensemble import build_features, blend, predict_batch, select_blend_weight, train_mart
from .errors import LabelError, StageError
from .evaluation import (LiftReport, default_rate_lift, group_neighbor_stats, ks_report,
                         read_groups)
from .graph_store import ingest_edge_file
from .log import LOG_FORMAT, DATE_FORMAT, kv
from .param_store import ParamStore
from .sup_embed import LabeledSet, read_scores, represent_all, train_sup, write_scores
from .synth_gen import generate
from .unsup_embed import train_unsup

logger = logging.getLogger(__name__)

NETDP, BENCH, BLENDED = 'NetDP', 'Bench', 'NetDP+Bench'


@dataclass
class PipelineReport:
    '''Results of `run_pipeline`.

    Attributes:
        ks (pd.DataFrame): KS per segment for NetDP, Bench and NetDP+Bench on the test split.
        blend_weight (float | None): Weight of NetDP in the blend; None without bench scores.
        lift (LiftReport | None): Default-rate lift over all labeled nodes.
        group_degrees (pd.DataFrame | None): Mean out-degree per user group.
        artifacts (Dict[str, str]): Paths of the files written.
    '''
    ks: pd.DataFrame
    blend_weight: Optional[float] = None
    lift: Optional[LiftReport] = None
    group_degrees: Optional[pd.DataFrame] = None
    artifacts: Dict[str, str] = field(default_factory=dict)


@contextlib.contextmanager
def _stage(name: str):
    start = time.perf_counter()
    logger.info(kv(stage=name, event='start'))
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logger.error(kv(stage=name, event='failed', error=type(e).__name__))
        raise StageError(name, f"{type(e).__name__}: {e}") from e
    logger.info(kv(stage=name, event='done', seconds=time.perf_counter() - start))


@contextlib.contextmanager
def _run_log(path: str):
    handler = logging.FileHandler(path, mode='w', encoding='utf-8')
    handler.setFormatter(logging.Formatter(LOG_FORMAT, DATE_FORMAT))
    handler.setLevel(logging.INFO)
    root = logging.getLogger()
    previous = root.level
    root.setLevel(min(root.getEffectiveLevel(), logging.INFO))
    root.addHandler(handler)
    try:
        yield
    finally:
        root.removeHandler(handler)
        root.setLevel(previous)
        handler.close()


def run_pipeline(cfg: RunConfig) -> PipelineReport:
    """Runs every stage of the pipeline described by `cfg`.

    Raises:
        StageError: Naming the failed stage; the original error is its __cause__.
    """
    with _stage('config'):
        cfg.validate()
        cfg = cfg.resolved()
        out = cfg.out_dir
        os.makedirs(out, exist_ok=True)
        cfg.write_manifest(os.path.join(out, 'manifest.txt'))
    with _run_log(os.path.join(out, 'run.log')):
        return _run(cfg, out)


def _run(cfg: RunConfig, out: str) -> PipelineReport:
    artifacts = {'manifest': os.path.join(out, 'manifest.txt'), 'log': os.path.join(out, 'run.log')}
    edges, labels_path, groups_path, bench_path = cfg.edges, cfg.labels, cfg.groups, cfg.bench

    if cfg.generate:
        with _stage('gen-synth'):
            paths = generate(cfg.synth).write(os.path.join(out, 'synth'))
            edges, labels_path = paths['edges'], paths['labels']
            groups_path, bench_path = paths['groups'], paths['bench']
            artifacts.update({f"synth_{k}": v for k, v in paths.items()})

    with _stage('ingest'):
        gc = cfg.graph
        g = ingest_edge_file(edges, num_shards=gc.num_shards, alpha=gc.alpha,
                             max_degree=gc.max_degree, max_skip_rate=gc.max_skip_rate,
                             seed=cfg.seed, reverse=gc.reverse, symmetrize=gc.symmetrize)
        artifacts['graph'] = os.path.join(out, 'graph')
        g.save(artifacts['graph'])
        labels = LabeledSet.from_csv(labels_path, g)

    store = ParamStore(num_shards=gc.num_shards)
    with _stage('train-unsup'):
        emb = train_unsup(g, store, cfg.unsup)
        artifacts['unsup'] = os.path.join(out, 'unsup.emb')
        emb.save(artifacts['unsup'], raw_ids=g.raw_ids)

    with _stage('train-sup'):
        warm = emb.vectors if cfg.sup.warm_start else None
        params, sup_scores = train_sup(g, labels, store, cfg.sup, warm_start=warm)
        artifacts['sup_params'] = os.path.join(out, 'sup.params')
        params.save(artifacts['sup_params'])
        artifacts['sup_scores'] = os.path.join(out, 'sup_scores.csv')
        write_scores(artifacts['sup_scores'], sup_scores, g.raw_ids)

    with _stage('build-features'):
        sup_repr = represent_all(params, g) if cfg.mart.include_sup_emb else None
        features = build_features(emb, sup_scores, labels, sup_repr=sup_repr)

    with _stage('train-ensemble'):
        train = features.train()
        forest = train_mart(train, cfg.mart)
        netdp = predict_batch(forest, features.X)

    with _stage('blend'):
        bench = None
        if bench_path is not None:
            bench_series = read_scores(bench_path, g, column='bench')
            bench = bench_series.reindex(features.nodes).to_numpy(dtype=np.float64)
            if not np.isfinite(bench).all():
                raise LabelError(f"{int((~np.isfinite(bench)).sum())} labeled nodes have no bench score")
            is_train = features.split == 'train'
            forest.blend_weight, _ = select_blend_weight(netdp[is_train], bench[is_train],
                                                         features.y[is_train], cfg.mart.blend_step)
        artifacts['model'] = os.path.join(out, 'model.bin')
        forest.save(artifacts['model'])

    with _stage('evaluate'):
        frame = pd.DataFrame({'raw_node_id': [g.raw_ids[v] for v in features.nodes],
                              'split': features.split, 'period': features.period,
                              'y': features.y, NETDP: netdp})
        score_cols = [NETDP]
        if bench is not None:
            frame[BENCH] = bench
            frame[BLENDED] = blend(netdp, bench, forest.blend_weight)
            score_cols += [BENCH, BLENDED]
        groups = read_groups(groups_path, g) if groups_path is not None else None
        if groups is not None:
            frame['group'] = groups.reindex(features.nodes).fillna('').to_numpy()
        artifacts['predictions'] = os.path.join(out, 'predictions.csv')
        frame.to_csv(artifacts['predictions'], index=False, float_format='%.10g')

        test = frame[frame['split'] == 'test']
        report = ks_report(test, score_cols, cfg.eval)
        artifacts['ks_report'] = os.path.join(out, 'ks_report.csv')
        report.to_csv(artifacts['ks_report'], index=False, float_format='%.6f')

    with _stage('lift'):
        lift = default_rate_lift(g, labels, cfg.eval.max_bucket)
        artifacts['lift'] = os.path.join(out, 'lift.csv')
        lift.to_frame().to_csv(artifacts['lift'], index=False, float_format='%.6f')
        degrees = None
        if groups is not None:
            degrees = group_neighbor_stats(g, groups)
            artifacts['group_degrees'] = os.path.join(out, 'group_degrees.csv')
            degrees.to_csv(artifacts['group_degrees'], index=False, float_format='%.6f')

    return PipelineReport(report, forest.blend_weight, lift, degrees, artifacts)


