'''Synthetic social graphs with planted credit-risk homophily.

The generator stands in for a proprietary interaction graph. It produces:

    edges.tsv   undirected stochastic-block-model edges, written in both directions
    labels.csv  raw_node_id,label,split,period for a labeled subset of connected nodes
    groups.csv  raw_node_id,group with group in {active, inactive, new}
    bench.csv   raw_node_id,bench, a benchmark score from node-level features
    blocks.csv  raw_node_id,block, the planted community of every node

Edge probability between u and v is p(block_u, block_v) * m_u * m_v where m is
the degree multiplier of the node's activity group. Edges are drawn per block
pair: a Binomial number of distinct candidate pairs at the highest possible
probability, then thinning by the actual probability, so every pair is an
independent Bernoulli draw.

Default labels come in two passes. Pass one draws a base label for every
labeled node from its block rate shifted by an individual risk z_v ~ N(0, 1).
Pass two raises the odds by a factor `neighbor_boost` for every labeled
out-neighbor that defaulted in pass one, by flipping some pass-one
non-defaults. Block intercepts are calibrated so that, without the boost, the
realized block default rates match `block_default_rates`.

The bench score reads the block risk and the individual risk of active and
inactive users, plus Gaussian noise. For new users it is noise only.
'''
import logging
import os
from dataclasses import dataclass
from typing import Tuple

import numpy as np
import pandas as pd
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import brentq
from scipy.special import expit, logit

from .errors import ConfigError
from .evaluation import GROUPS
from .log import kv

logger = logging.getLogger(__name__)

TRAIN_PERIODS = ('2017-03', '2017-04', '2017-05', '2017-06', '2017-07')
TEST_PERIODS = ('2017-08', '2017-09')


@dataclass
class SynthConfig:
    '''Generator parameters; the seed determines every output byte.

    Group-indexed tuples follow the order (active, inactive, new).
    '''
    num_nodes: int = 50000
    num_blocks: int = 4
    p_in: float = 0.002
    p_out: float = 0.0001
    block_default_rates: Tuple[float, ...] = (0.02, 0.04, 0.06, 0.08)
    neighbor_boost: float = 2.0
    group_fractions: Tuple[float, ...] = (0.6, 0.25, 0.15)
    degree_multipliers: Tuple[float, ...] = (1.3, 0.8, 0.8)
    individual_risk: float = 0.75
    bench_noise: float = 1.0
    label_fraction: float = 0.5
    test_fraction: float = 0.3
    seed: int = 7

    def rates(self) -> np.ndarray:
        rates = np.asarray(self.block_default_rates, dtype=np.float64)
        if len(rates) == 1:
            rates = np.repeat(rates, self.num_blocks)
        return rates

    def validate(self) -> None:
        if self.num_nodes < 2:
            raise ConfigError(f"synth.num_nodes must be >= 2, got {self.num_nodes}")
        if not 1 <= self.num_blocks <= self.num_nodes:
            raise ConfigError(f"synth.num_blocks must be in [1, num_nodes], got {self.num_blocks}")
        for name in ('p_in', 'p_out', 'label_fraction', 'test_fraction'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"synth.{name} must be a probability, got {value}")
        rates = self.rates()
        if len(rates) != self.num_blocks:
            raise ConfigError(f"synth.block_default_rates has {len(rates)} entries for "
                              f"{self.num_blocks} blocks")
        if ((rates <= 0) | (rates >= 1)).any():
            raise ConfigError(f"block default rates must lie in (0, 1), got {tuple(rates)}")
        if self.neighbor_boost < 1:
            raise ConfigError(f"synth.neighbor_boost must be >= 1, got {self.neighbor_boost}")
        if len(self.group_fractions) != len(GROUPS) or len(self.degree_multipliers) != len(GROUPS):
            raise ConfigError(f"group fractions and degree multipliers need {len(GROUPS)} entries")
        fractions = np.asarray(self.group_fractions, dtype=np.float64)
        if (fractions <= 0).any() or abs(fractions.sum() - 1.0) > 1e-9:
            raise ConfigError(f"group fractions must be positive and sum to 1, got {self.group_fractions}")
        if self.num_nodes * fractions.min() < 1:
            raise ConfigError("a user group would be empty at this size")
        if any(m <= 0 for m in self.degree_multipliers):
            raise ConfigError(f"degree multipliers must be positive, got {self.degree_multipliers}")
        if self.individual_risk < 0 or self.bench_noise < 0:
            raise ConfigError("individual_risk and bench_noise must be >= 0")
        labeled = self.num_nodes * self.label_fraction
        mean_rate = rates.mean()
        if labeled * mean_rate < 1 or labeled * (1 - mean_rate) < 1:
            raise ConfigError(f"about {labeled * mean_rate:.2f} defaults expected among "
                              f"{labeled:.0f} labeled nodes; one class would be empty")
        if labeled * (1 - self.test_fraction) < 1:
            raise ConfigError("the train split would be empty")


@dataclass
class SyntheticDataset:
    '''Generated graph, labels and side tables, all indexed by node position.'''
    raw_ids: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    block: np.ndarray
    group: np.ndarray
    risk: np.ndarray
    bench: np.ndarray
    labels: pd.DataFrame

    @property
    def num_nodes(self) -> int:
        return len(self.raw_ids)

    def out_degrees(self) -> np.ndarray:
        return np.bincount(self.src, minlength=self.num_nodes)

    def group_degrees(self) -> pd.DataFrame:
        """Mean out-degree per activity group, in the layout of `group_neighbor_stats`."""
        deg = pd.Series(self.out_degrees())
        names = np.asarray(GROUPS, dtype=object)[self.group]
        stats = deg.groupby(names).agg(['size', 'mean'])
        stats = stats.loc[[g for g in GROUPS if g in stats.index]]
        return pd.DataFrame({'group': stats.index, 'nodes': stats['size'].to_numpy(),
                             'mean_degree': stats['mean'].to_numpy()})

    def edge_lines(self):
        for s, d in zip(self.raw_ids[self.src], self.raw_ids[self.dst]):
            yield f"{s}\t{d}"

    def write(self, out_dir: str) -> dict:
        """Writes every table into `out_dir` and returns their paths by name."""
        os.makedirs(out_dir, exist_ok=True)
        paths = {name: os.path.join(out_dir, f"{name}.{ext}") for name, ext in
                 (('edges', 'tsv'), ('labels', 'csv'), ('groups', 'csv'), ('bench', 'csv'),
                  ('blocks', 'csv'))}
        pd.DataFrame({'src': self.raw_ids[self.src], 'dst': self.raw_ids[self.dst]}).to_csv(
            paths['edges'], sep='\t', header=False, index=False)
        self.labels.to_csv(paths['labels'], index=False)
        pd.DataFrame({'raw_node_id': self.raw_ids,
                      'group': np.asarray(GROUPS, dtype=object)[self.group]}).to_csv(
            paths['groups'], index=False)
        pd.DataFrame({'raw_node_id': self.raw_ids, 'bench': self.bench}).to_csv(
            paths['bench'], index=False, float_format='%.10g')
        pd.DataFrame({'raw_node_id': self.raw_ids, 'block': self.block}).to_csv(
            paths['blocks'], index=False)
        logger.info(kv(event='synth_written', dir=out_dir, nodes=self.num_nodes, edges=len(self.src),
                       labeled=len(self.labels)))
        return paths


def block_sizes(num_nodes: int, num_blocks: int) -> np.ndarray:
    sizes = np.full(num_blocks, num_nodes // num_blocks)
    sizes[:num_nodes % num_blocks] += 1
    return sizes


def calibrate_intercepts(rates: np.ndarray, risk_scale: float) -> np.ndarray:
    """Intercepts a_b with E[s(a_b + risk_scale * z)] = rate_b for z ~ N(0, 1)."""
    if risk_scale == 0:
        return logit(rates)
    x, w = hermegauss(80)
    w = w / w.sum()
    return np.array([brentq(lambda a: float(w @ expit(a + risk_scale * x)) - r, -40.0, 40.0)
                     for r in rates])


def unrank_pairs(k: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Maps pair ranks k in [0, n(n-1)/2) to (i, j) with 0 <= j < i, row by row."""
    k = np.asarray(k, dtype=np.int64)
    i = ((1.0 + np.sqrt(1.0 + 8.0 * k)) / 2.0).astype(np.int64)
    # float sqrt can be one off near row boundaries
    i -= i * (i - 1) // 2 > k
    i += (i + 1) * i // 2 <= k
    return i, k - i * (i - 1) // 2


def _sample_block_pair(rng: np.random.Generator, members_a: np.ndarray, members_b: np.ndarray,
                       same: bool, p: float, mult: np.ndarray, max_mult: float
                       ) -> Tuple[np.ndarray, np.ndarray]:
    na, nb = len(members_a), len(members_b)
    pairs = na * (na - 1) // 2 if same else na * nb
    p_max = min(1.0, p * max_mult * max_mult)
    if pairs == 0 or p_max == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty
    # a uniform m-subset of distinct pairs, m ~ Binomial, includes every pair independently with p_max
    ranks = rng.choice(pairs, size=rng.binomial(pairs, p_max), replace=False)
    if same:
        i, j = unrank_pairs(ranks)
        u, v = members_a[i], members_a[j]
    else:
        u, v = members_a[ranks // nb], members_b[ranks % nb]
    accept = rng.random(len(ranks)) < p * mult[u] * mult[v] / p_max
    return u[accept], v[accept]


def generate(cfg: SynthConfig) -> SyntheticDataset:
    """Generates the dataset described in the module docstring.

    Raises:
        ConfigError: If the config would leave a class or a group empty.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.num_nodes
    rates = cfg.rates()

    block = rng.permutation(np.repeat(np.arange(cfg.num_blocks), block_sizes(n, cfg.num_blocks)))
    group = rng.choice(len(GROUPS), size=n, p=np.asarray(cfg.group_fractions))
    mult = np.asarray(cfg.degree_multipliers, dtype=np.float64)[group]
    max_mult = float(max(cfg.degree_multipliers))

    members = [np.flatnonzero(block == b) for b in range(cfg.num_blocks)]
    us, vs = [], []
    for a in range(cfg.num_blocks):
        for b in range(a, cfg.num_blocks):
            p = cfg.p_in if a == b else cfg.p_out
            u, v = _sample_block_pair(rng, members[a], members[b], a == b, p, mult, max_mult)
            us.append(u)
            vs.append(v)
    u = np.concatenate(us)
    v = np.concatenate(vs)
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    key = np.unique(lo * n + hi)
    lo, hi = key // n, key % n
    src = np.concatenate([lo, hi])
    dst = np.concatenate([hi, lo])
    order = np.lexsort((dst, src))
    src, dst = src[order], dst[order]

    risk = rng.standard_normal(n)
    intercept = calibrate_intercepts(rates, cfg.individual_risk)
    base_logit = intercept[block] + cfg.individual_risk * risk
    p_base = expit(base_logit)

    # isolated nodes never reach the edge file, so they cannot carry a label
    connected = np.flatnonzero(np.bincount(src, minlength=n) > 0)
    labeled = np.zeros(n, dtype=bool)
    size = min(int(round(n * cfg.label_fraction)), len(connected))
    labeled[rng.choice(connected, size=size, replace=False)] = True
    y1 = np.zeros(n, dtype=np.int8)
    y1[labeled] = rng.random(labeled.sum()) < p_base[labeled]

    # pass two: odds times boost^D, D = labeled out-neighbors that defaulted in pass one
    d = np.bincount(src, weights=(labeled & (y1 == 1))[dst].astype(np.float64), minlength=n)
    p_final = expit(base_logit + d * np.log(cfg.neighbor_boost))
    flip = (p_final - p_base) / (1.0 - p_base)
    y = y1.copy()
    y[labeled & (y1 == 0) & (rng.random(n) < flip)] = 1

    nodes = np.flatnonzero(labeled)
    is_test = rng.random(len(nodes)) < cfg.test_fraction
    period = np.where(is_test, rng.choice(TEST_PERIODS, size=len(nodes)),
                      rng.choice(TRAIN_PERIODS, size=len(nodes)))
    raw_ids = np.array([f"u{i}" for i in range(n)], dtype=object)
    labels = pd.DataFrame({'raw_node_id': raw_ids[nodes], 'label': y[nodes],
                           'split': np.where(is_test, 'test', 'train'), 'period': period})

    block_risk = intercept[block] - intercept.mean()
    noise = rng.standard_normal(n)
    is_new = group == GROUPS.index('new')
    bench = expit(np.where(is_new, 0.0, block_risk + cfg.individual_risk * risk) + cfg.bench_noise * noise)

    dataset = SyntheticDataset(raw_ids, src, dst, block, group, risk, bench, labels)
    logger.info(kv(event='synth_generated', nodes=n, edges=len(src), labeled=len(nodes),
                   defaults=int(y[nodes].sum()), mean_degree=len(src) / n))
    return dataset
