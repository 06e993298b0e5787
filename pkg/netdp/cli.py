'''Command-line entry point: `netdp <subcommand> ...`.

Subcommands mirror the pipeline stages (gen-synth, ingest, train-unsup,
train-sup, train-ensemble, predict, evaluate, lift) plus `run` for the whole
pipeline. Errors raised by netdp end the process with exit code 1 and a
one-line `error stage=<stage>: <message>` on stderr.
'''
import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

from .config import RunConfig
from .ensemble import (Forest, MartConfig, blend, build_features, predict_batch,
                       select_blend_weight, train_mart)
from .errors import LabelError, NetDPError, StageError
from .evaluation import (EvalConfig, ScoredSet, default_rate_lift, format_report, ks_report,
                         ks_statistic, plot_lift, read_groups)
from .graph_store import (DEFAULT_ALPHA, DEFAULT_MAX_DEGREE, DEFAULT_MAX_SKIP_RATE,
                          PartitionedGraph, ingest_edge_file)
from .log import init_logging, kv
from .param_store import ParamStore
from .pipeline import run_pipeline
from .sup_embed import (LabeledSet, SupConfig, SupervisedParams, read_scores, represent_all,
                        train_sup, write_scores)
from .synth_gen import SynthConfig, generate
from .unsup_embed import EmbeddingTable, RawIdIndex, UnsupConfig, train_unsup

logger = logging.getLogger(__name__)


def _floats(text: str):
    return tuple(float(v) for v in text.split(',') if v.strip())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='netdp', description='Network-based default prediction')
    parser.add_argument('--log-level', default='INFO')
    parser.add_argument('--log-file', default=None)
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('gen-synth', help='generate a synthetic labeled graph')
    d = SynthConfig()
    p.add_argument('--nodes', type=int, default=d.num_nodes)
    p.add_argument('--blocks', type=int, default=d.num_blocks)
    p.add_argument('--p-in', type=float, default=d.p_in)
    p.add_argument('--p-out', type=float, default=d.p_out)
    p.add_argument('--rates', type=_floats, default=d.block_default_rates,
                   help='comma-separated default rate per block')
    p.add_argument('--boost', type=float, default=d.neighbor_boost)
    p.add_argument('--label-fraction', type=float, default=d.label_fraction)
    p.add_argument('--bench-noise', type=float, default=d.bench_noise)
    p.add_argument('--seed', type=int, default=d.seed)
    p.add_argument('--out', required=True)

    p = sub.add_parser('ingest', help='build a sharded graph store from an edge file')
    p.add_argument('--edges', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--shards', type=int, default=1)
    p.add_argument('--alpha', type=float, default=DEFAULT_ALPHA)
    p.add_argument('--max-degree', type=int, default=DEFAULT_MAX_DEGREE)
    p.add_argument('--max-skip-rate', type=float, default=DEFAULT_MAX_SKIP_RATE)
    p.add_argument('--reverse', action='store_true', help='ingest every edge reversed')
    p.add_argument('--symmetrize', action='store_true', help='add the reverse of every edge')
    p.add_argument('--seed', type=int, default=0)

    p = sub.add_parser('train-unsup', help='train the unsupervised embedding')
    d = UnsupConfig()
    p.add_argument('--graph', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--dim', type=int, default=d.dim)
    p.add_argument('--epochs', type=int, default=d.max_epochs)
    p.add_argument('--negatives', type=int, default=d.negatives)
    p.add_argument('--neighbors', type=int, default=d.neighbors_per_step)
    p.add_argument('--lr', type=float, default=d.learning_rate)
    p.add_argument('--batch-size', type=int, default=d.batch_size)
    p.add_argument('--lr-decay', action='store_true')
    p.add_argument('--early-stop', action='store_true')
    p.add_argument('--flipped-neg-loss', action='store_true',
                   help='use -log s(u_i.u_k) for negatives (comparison only)')
    p.add_argument('--workers', type=int, default=d.workers)
    p.add_argument('--seed', type=int, default=d.seed)

    p = sub.add_parser('train-sup', help='train the supervised aggregation model')
    d = SupConfig()
    p.add_argument('--graph', required=True)
    p.add_argument('--labels', required=True)
    p.add_argument('--out', required=True, help='scores CSV')
    p.add_argument('--params', default=None, help='parameter file (default: <out>.params)')
    p.add_argument('--k', type=int, default=d.k)
    p.add_argument('--steps', type=int, default=d.steps)
    p.add_argument('--epochs', type=int, default=d.epochs)
    p.add_argument('--lr', type=float, default=d.learning_rate)
    p.add_argument('--lambda', dest='lam', type=float, default=d.lam)
    p.add_argument('--fanout', type=int, default=d.fanout)
    p.add_argument('--batch-size', type=int, default=d.batch_size)
    p.add_argument('--warm-start', default=None, help='embedding file to copy base vectors from')
    p.add_argument('--zero-init-w2', action='store_true')
    p.add_argument('--workers', type=int, default=d.workers)
    p.add_argument('--seed', type=int, default=d.seed)

    p = sub.add_parser('train-ensemble', help='fit the MART forest and the bench blend weight')
    d = MartConfig()
    p.add_argument('--emb', required=True)
    p.add_argument('--sup', required=True, help='supervised scores CSV')
    p.add_argument('--labels', required=True)
    p.add_argument('--bench', default=None)
    p.add_argument('--out', required=True)
    p.add_argument('--num-trees', type=int, default=d.num_trees)
    p.add_argument('--max-depth', type=int, default=d.max_depth)
    p.add_argument('--shrinkage', type=float, default=d.shrinkage)
    p.add_argument('--min-leaf', type=int, default=d.min_leaf)
    p.add_argument('--include-sup-emb', action='store_true')
    p.add_argument('--graph', default=None, help='graph store, needed with --include-sup-emb')
    p.add_argument('--sup-params', default=None, help='needed with --include-sup-emb')

    p = sub.add_parser('predict', help='score nodes with a trained forest')
    p.add_argument('--model', required=True)
    p.add_argument('--emb', required=True)
    p.add_argument('--sup', required=True)
    p.add_argument('--bench', default=None)
    p.add_argument('--out', required=True)
    p.add_argument('--graph', default=None)
    p.add_argument('--sup-params', default=None)

    p = sub.add_parser('evaluate', help='KS report of one or more score columns')
    p.add_argument('--scores', required=True)
    p.add_argument('--labels', required=True)
    p.add_argument('--groups', default=None)
    p.add_argument('--per-period', action='store_true')
    p.add_argument('--split', choices=('test', 'train', 'all'), default='test')
    p.add_argument('--out', default=None, help='CSV report path')

    p = sub.add_parser('lift', help='default-rate lift by number of default neighbors')
    p.add_argument('--graph', required=True)
    p.add_argument('--labels', required=True)
    p.add_argument('--max-bucket', type=int, default=5)
    p.add_argument('--out', default=None)
    p.add_argument('--plot', default=None, help='PNG path for a bar chart')

    p = sub.add_parser('run', help='run the whole pipeline')
    p.add_argument('--config', default=None, help='key=value config or manifest file')
    p.add_argument('--set', action='append', default=[], metavar='KEY=VALUE')
    p.add_argument('--out', default=None)
    p.add_argument('--seed', type=int, default=None)
    p.add_argument('--workers', type=int, default=None)
    p.add_argument('--edges', default=None)
    p.add_argument('--labels', default=None)
    p.add_argument('--groups', default=None)
    p.add_argument('--bench', default=None)
    p.add_argument('--include-sup-emb', action='store_true')
    return parser


# --- subcommands ---

def cmd_gen_synth(args) -> None:
    cfg = SynthConfig(num_nodes=args.nodes, num_blocks=args.blocks, p_in=args.p_in, p_out=args.p_out,
                      block_default_rates=tuple(args.rates), neighbor_boost=args.boost,
                      label_fraction=args.label_fraction, bench_noise=args.bench_noise,
                      seed=args.seed)
    dataset = generate(cfg)
    dataset.write(args.out)
    degrees = dataset.group_degrees()
    degrees.to_csv(os.path.join(args.out, 'group_degrees.csv'), index=False, float_format='%.6f')
    print(degrees.to_string(index=False))


def cmd_ingest(args) -> None:
    g = ingest_edge_file(args.edges, num_shards=args.shards, alpha=args.alpha,
                         max_degree=args.max_degree, max_skip_rate=args.max_skip_rate,
                         seed=args.seed, reverse=args.reverse, symmetrize=args.symmetrize)
    g.save(args.out)
    print(kv(nodes=g.num_nodes, edges=g.num_edges(), shards=g.num_shards,
             shard_sizes=','.join(map(str, g.shard_sizes()))))


def cmd_train_unsup(args) -> None:
    g = PartitionedGraph.load(args.graph)
    cfg = UnsupConfig(dim=args.dim, neighbors_per_step=args.neighbors, negatives=args.negatives,
                      learning_rate=args.lr, max_epochs=args.epochs, batch_size=args.batch_size,
                      seed=args.seed, workers=args.workers, lr_decay=args.lr_decay,
                      early_stop=args.early_stop, flipped_neg_loss=args.flipped_neg_loss)
    emb = train_unsup(g, ParamStore(num_shards=g.num_shards), cfg)
    emb.save(args.out, raw_ids=g.raw_ids)
    print(kv(nodes=emb.num_nodes, dim=emb.dim, probe_loss=emb.probe_history[-1]))


def cmd_train_sup(args) -> None:
    g = PartitionedGraph.load(args.graph)
    labels = LabeledSet.from_csv(args.labels, g)
    warm = EmbeddingTable.load(args.warm_start).vectors if args.warm_start else None
    cfg = SupConfig(k=args.k, steps=args.steps, epochs=args.epochs, learning_rate=args.lr,
                    lam=args.lam, fanout=args.fanout, batch_size=args.batch_size,
                    zero_init_w2=args.zero_init_w2, warm_start=warm is not None,
                    seed=args.seed, workers=args.workers)
    params, scores = train_sup(g, labels, ParamStore(num_shards=g.num_shards), cfg, warm_start=warm)
    write_scores(args.out, scores, g.raw_ids)
    params.save(args.params or args.out + '.params')
    test = labels.test()
    if len(test) and len(np.unique(test.y)) == 2:
        print(kv(test_ks=ks_statistic(ScoredSet(scores.reindex(test.nodes).to_numpy(), test.y))))


def _sup_repr(args, index: RawIdIndex) -> Optional[np.ndarray]:
    if not args.graph or not args.sup_params:
        raise LabelError("supervised representations need --graph and --sup-params")
    g = PartitionedGraph.load(args.graph)
    if g.raw_ids != index.raw_ids:
        raise LabelError("graph store and embedding index disagree on node ids")
    return represent_all(SupervisedParams.load(args.sup_params), g)


def cmd_train_ensemble(args) -> None:
    emb = EmbeddingTable.load(args.emb)
    index = RawIdIndex.for_embedding(args.emb)
    labels = LabeledSet.from_csv(args.labels, index)
    sup = read_scores(args.sup, index)
    sup_repr = _sup_repr(args, index) if args.include_sup_emb else None
    features = build_features(emb, sup, labels, sup_repr=sup_repr)
    cfg = MartConfig(num_trees=args.num_trees, max_depth=args.max_depth, shrinkage=args.shrinkage,
                     min_leaf=args.min_leaf, include_sup_emb=args.include_sup_emb)
    train = features.train()
    forest = train_mart(train, cfg)
    if args.bench:
        bench = read_scores(args.bench, index, column='bench').reindex(train.nodes).to_numpy()
        if not np.isfinite(bench).all():
            raise LabelError("some training nodes have no bench score")
        forest.blend_weight, ks = select_blend_weight(predict_batch(forest, train.X), bench, train.y,
                                                      cfg.blend_step)
        print(kv(blend_weight=forest.blend_weight, train_ks=ks))
    forest.save(args.out)
    print(kv(trees=len(forest.trees), train_loss=forest.loss_history[-1]))


def cmd_predict(args) -> None:
    forest = Forest.load(args.model)
    emb = EmbeddingTable.load(args.emb)
    index = RawIdIndex.for_embedding(args.emb)
    sup = read_scores(args.sup, index)
    sup = sup[np.isfinite(sup.to_numpy())]
    nodes = sup.index.to_numpy()
    parts = [emb.vectors[nodes], sup.to_numpy()[:, None]]
    if forest.include_sup_emb:
        parts.append(_sup_repr(args, index)[nodes])
    netdp = predict_batch(forest, np.hstack(parts))
    frame = pd.DataFrame({'raw_node_id': [index.raw_ids[v] for v in nodes], 'netdp': netdp})
    if args.bench:
        if forest.blend_weight is None:
            raise LabelError("the model has no blend weight; train it with --bench")
        bench = read_scores(args.bench, index, column='bench').reindex(nodes).to_numpy()
        frame['bench'] = bench
        frame['blended'] = blend(netdp, bench, forest.blend_weight)
    frame.to_csv(args.out, index=False, float_format='%.10g')
    print(kv(rows=len(frame), out=args.out))


def cmd_evaluate(args) -> None:
    scores = pd.read_csv(args.scores, dtype={'raw_node_id': str})
    labels = pd.read_csv(args.labels, dtype={'raw_node_id': str, 'period': str})
    frame = labels.rename(columns={'label': 'y'}).merge(scores, on='raw_node_id', how='inner')
    if args.split != 'all':
        frame = frame[frame['split'] == args.split]
    if args.groups:
        groups = pd.read_csv(args.groups, dtype={'raw_node_id': str, 'group': str})
        frame = frame.merge(groups[['raw_node_id', 'group']], on='raw_node_id', how='left')
        frame['group'] = frame['group'].fillna('')
    if 'period' in frame.columns:
        frame['period'] = frame['period'].fillna('')
    score_cols = [c for c in scores.columns if c != 'raw_node_id']
    if frame.empty:
        raise LabelError("no scored node carries a label in the selected split")
    report = ks_report(frame, score_cols, EvalConfig(per_period=args.per_period))
    print(format_report(report))
    if args.out:
        report.to_csv(args.out, index=False, float_format='%.6f')


def cmd_lift(args) -> None:
    g = PartitionedGraph.load(args.graph)
    labels = LabeledSet.from_csv(args.labels, g)
    report = default_rate_lift(g, labels, args.max_bucket)
    frame = report.to_frame()
    print(frame.to_string(index=False, float_format=lambda v: f"{v:.4f}"))
    if args.out:
        frame.to_csv(args.out, index=False, float_format='%.6f')
    if args.plot:
        plot_lift(report, args.plot)


def cmd_run(args) -> None:
    cfg = RunConfig()
    if args.config:
        cfg = RunConfig.from_file(args.config, cfg)
    flags = []
    for name in ('out', 'seed', 'workers', 'edges', 'labels', 'groups', 'bench'):
        value = getattr(args, name)
        if value is not None:
            flags.append(f"{'out_dir' if name == 'out' else name}={value}")
    if args.edges or args.labels:
        flags.append('generate=false')
    if args.include_sup_emb:
        flags.append('include_sup_emb=true')
    cfg.update(flags + list(args.set))
    report = run_pipeline(cfg)
    print(format_report(report.ks))
    if report.blend_weight is not None:
        print(kv(blend_weight=report.blend_weight))


COMMANDS = {
    'gen-synth': cmd_gen_synth,
    'ingest': cmd_ingest,
    'train-unsup': cmd_train_unsup,
    'train-sup': cmd_train_sup,
    'train-ensemble': cmd_train_ensemble,
    'predict': cmd_predict,
    'evaluate': cmd_evaluate,
    'lift': cmd_lift,
    'run': cmd_run,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    init_logging(args.log_level.upper(), args.log_file)
    try:
        COMMANDS[args.command](args)
    except StageError as e:
        print(f"error {e}", file=sys.stderr)
        return 1
    except NetDPError as e:
        print(f"error stage={args.command}: {e}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as e:
        logger.debug('unexpected failure', exc_info=True)
        print(f"error stage={args.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
