'''KS statistic, default-rate lift and neighbor statistics by user group.'''
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .errors import ConfigError, LabelError
from .graph_store import PartitionedGraph
from .log import kv
from .sup_embed import LabeledSet

logger = logging.getLogger(__name__)

GROUPS = ('active', 'inactive', 'new')


@dataclass
class EvalConfig:
    max_bucket: int = 5
    per_period: bool = False
    per_group: bool = True

    def validate(self) -> None:
        if self.max_bucket < 1:
            raise ConfigError(f"eval.max_bucket must be >= 1, got {self.max_bucket}")


class ScoredSet:
    '''Scores paired with binary labels.

    Attributes:
        scores (np.ndarray): Finite real scores.
        y (np.ndarray): Labels in {0, 1}.
    '''

    def __init__(self, scores, y):
        self.scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        self.y = np.asarray(y).reshape(-1)
        if self.scores.shape != self.y.shape:
            raise ValueError(f"scores and labels differ in length: {self.scores.shape} vs {self.y.shape}")
        if not np.isfinite(self.scores).all():
            raise ValueError("scores must be finite")
        if not np.isin(self.y, (0, 1)).all():
            raise LabelError("labels must be 0 or 1")

    def __len__(self) -> int:
        return len(self.y)

    @property
    def positives(self) -> int:
        return int((self.y == 1).sum())

    @property
    def negatives(self) -> int:
        return int((self.y == 0).sum())


def ks_statistic(s: ScoredSet) -> float:
    """Two-sample KS distance between the score distributions of both classes.

    The ECDFs are right-continuous and compared only at distinct score values,
    so tied scores move both curves at once.

    Raises:
        LabelError: If one class is missing.
    """
    n_pos, n_neg = s.positives, s.negatives
    if n_pos == 0 or n_neg == 0:
        raise LabelError(f"KS needs both classes (positives={n_pos}, negatives={n_neg})")
    order = np.argsort(s.scores, kind='stable')
    scores = s.scores[order]
    pos = np.cumsum(s.y[order] == 1)
    # last index of every run of equal scores
    ends = np.append(np.flatnonzero(scores[1:] != scores[:-1]), len(scores) - 1)
    c_pos = pos[ends]
    c_neg = (ends + 1) - c_pos
    return float(np.max(np.abs(c_pos / n_pos - c_neg / n_neg)))


# --- lift ---

@dataclass
class LiftBucket:
    bucket: int
    label: str
    nodes: int
    defaults: int
    rate: float
    lift_pct: float


@dataclass
class LiftReport:
    '''Default rate by number of labeled-default neighbors.

    The last bucket collects every count >= max_bucket. `lift_pct` is relative
    to the zero bucket, so bucket 0 has lift 0 by construction.
    '''
    buckets: List[LiftBucket]
    max_bucket: int

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([vars(b) for b in self.buckets],
                            columns=['bucket', 'label', 'nodes', 'defaults', 'rate', 'lift_pct'])

    def lifts(self) -> np.ndarray:
        return np.array([b.lift_pct for b in self.buckets])

    def is_monotone(self) -> bool:
        return bool(np.all(np.diff(self.lifts()) > 0))


def _adjacency_matrix(g: PartitionedGraph) -> sp.csr_matrix:
    indptr, indices = g.adjacency()
    return sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(g.num_nodes, g.num_nodes))


def default_neighbor_counts(g: PartitionedGraph, labels: LabeledSet) -> np.ndarray:
    """Number of labeled defaulted out-neighbors of every node."""
    is_default = np.zeros(g.num_nodes)
    is_default[labels.nodes[labels.y == 1]] = 1.0
    return np.rint(_adjacency_matrix(g) @ is_default).astype(np.int64)


def default_rate_lift(g: PartitionedGraph, labels: LabeledSet, max_bucket: int = 5) -> LiftReport:
    """Groups labeled nodes by their count of labeled-default neighbors.

    Buckets are 0, 1, ..., max_bucket - 1 and '>= max_bucket'. Empty buckets
    are left out of the report with a warning.

    Raises:
        LabelError: If there are no labels, or the zero bucket is empty or has
            no defaults (lift is undefined then).
    """
    if len(labels) == 0:
        raise LabelError("lift needs a non-empty labeled set")
    if max_bucket < 1:
        raise ValueError(f"max_bucket must be >= 1, got {max_bucket}")
    counts = default_neighbor_counts(g, labels)[labels.nodes]
    bucket = np.minimum(counts, max_bucket)
    sizes = np.bincount(bucket, minlength=max_bucket + 1)
    defaults = np.bincount(bucket, weights=labels.y.astype(np.float64), minlength=max_bucket + 1)
    if sizes[0] == 0:
        raise LabelError("no labeled node has zero default neighbors; lift is undefined")
    rate0 = defaults[0] / sizes[0]
    if rate0 == 0:
        raise LabelError("default rate of the zero-default-neighbor group is 0; lift is undefined")
    out = []
    for b in range(max_bucket + 1):
        label = f">={b}" if b == max_bucket else str(b)
        if sizes[b] == 0:
            logger.warning(kv(event='empty_lift_bucket', bucket=label))
            continue
        rate = defaults[b] / sizes[b]
        out.append(LiftBucket(b, label, int(sizes[b]), int(defaults[b]), float(rate),
                              float((rate / rate0 - 1.0) * 100.0)))
    return LiftReport(out, max_bucket)


def plot_lift(report: LiftReport, path: str) -> None:
    """Bar chart of lift percentage by bucket."""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    frame = report.to_frame()
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.bar(frame['label'], frame['lift_pct'], color='tab:red')
    ax.set_xlabel('Number of default neighbors')
    ax.set_ylabel('Default-rate lift (%)')
    ax.set_title('Default-rate lift vs zero default neighbors')
    ax.grid(axis='y', linestyle='--', alpha=0.5)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# --- groups ---

def read_groups(path: str, g: PartitionedGraph) -> pd.Series:
    """Reads a `raw_node_id,group` CSV into a Series of group names by dense id."""
    df = pd.read_csv(path, dtype={'raw_node_id': str, 'group': str})
    if not {'raw_node_id', 'group'} <= set(df.columns):
        raise LabelError(f"{path} needs columns raw_node_id,group")
    nodes = g.dense_ids(df['raw_node_id'])
    known = nodes >= 0
    if not known.all():
        logger.warning(kv(event='unknown_group_rows', file=path, rows=int((~known).sum())))
    return pd.Series(df['group'].str.strip().to_numpy()[known],
                     index=pd.Index(nodes[known], name='node'), name='group')


def group_neighbor_stats(g: PartitionedGraph, groups: pd.Series,
                         expected: Sequence[str] = GROUPS) -> pd.DataFrame:
    """Mean out-degree per user group.

    Groups from `expected` with no nodes are omitted with a warning.

    Returns:
        DataFrame with columns group, nodes, mean_degree.
    """
    degrees = pd.Series(g.degree_table[groups.index.to_numpy()], index=groups.index)
    stats = degrees.groupby(groups.to_numpy()).agg(['size', 'mean'])
    for name in expected:
        if name not in stats.index:
            logger.warning(kv(event='empty_group', group=name))
    order = [n for n in expected if n in stats.index] + sorted(set(stats.index) - set(expected))
    stats = stats.loc[order]
    return pd.DataFrame({'group': stats.index, 'nodes': stats['size'].to_numpy(),
                         'mean_degree': stats['mean'].to_numpy()})


# --- reports ---

def _segment_ks(frame: pd.DataFrame, score_cols: Sequence[str], segment: str) -> Dict:
    row = {'segment': segment, 'n': len(frame), 'positives': int(frame['y'].sum())}
    for col in score_cols:
        try:
            row[col] = ks_statistic(ScoredSet(frame[col].to_numpy(), frame['y'].to_numpy()))
        except LabelError:
            logger.warning(kv(event='ks_undefined', segment=segment, score=col))
            row[col] = np.nan
    return row


def ks_report(frame: pd.DataFrame, score_cols: Sequence[str], cfg: Optional[EvalConfig] = None
              ) -> pd.DataFrame:
    """KS of every score column overall, per group and optionally per period.

    Args:
        frame: One row per evaluated node with columns `y`, the score columns,
            and optionally `group` and `period`.
        score_cols: Names of the score columns to compare.
        cfg: Which breakdowns to add.

    Returns:
        DataFrame with columns segment, n, positives and one KS column per score.
    """
    cfg = cfg or EvalConfig()
    rows = [_segment_ks(frame, score_cols, 'overall')]
    if cfg.per_group and 'group' in frame.columns:
        present = list(pd.unique(frame['group']))
        for name in [n for n in GROUPS if n in present] + sorted(set(present) - set(GROUPS)):
            rows.append(_segment_ks(frame[frame['group'] == name], score_cols, f"group={name}"))
    if cfg.per_period and 'period' in frame.columns:
        for period in sorted(p for p in pd.unique(frame['period']) if p):
            rows.append(_segment_ks(frame[frame['period'] == period], score_cols, f"period={period}"))
    report = pd.DataFrame(rows, columns=['segment', 'n', 'positives', *score_cols])
    for _, r in report.iterrows():
        logger.info(kv(stage='evaluate', segment=r['segment'], n=r['n'],
                       **{c: float(r[c]) for c in score_cols}))
    return report


def format_report(report: pd.DataFrame) -> str:
    return report.to_string(index=False, float_format=lambda v: f"{v:.4f}")
