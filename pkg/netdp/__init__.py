'''netdp: network-based default prediction.

Unsupervised and supervised node embeddings trained against an in-process
sharded parameter store, combined by a boosted forest and evaluated with the
KS statistic on synthetic homophilous graphs.
'''
from .errors import NetDPError
from .graph_store import PartitionedGraph, ingest_edges, ingest_edge_file
from .param_store import ParamStore
from .unsup_embed import EmbeddingTable, UnsupConfig, train_unsup
from .sup_embed import LabeledSet, SupConfig, SupervisedParams, train_sup
from .ensemble import Forest, MartConfig, build_features, train_mart
from .evaluation import ScoredSet, ks_statistic, default_rate_lift
from .synth_gen import SynthConfig, generate
from .config import RunConfig
from .pipeline import run_pipeline

__all__ = [
    'NetDPError',
    'PartitionedGraph', 'ingest_edges', 'ingest_edge_file',
    'ParamStore',
    'EmbeddingTable', 'UnsupConfig', 'train_unsup',
    'LabeledSet', 'SupConfig', 'SupervisedParams', 'train_sup',
    'Forest', 'MartConfig', 'build_features', 'train_mart',
    'ScoredSet', 'ks_statistic', 'default_rate_lift',
    'SynthConfig', 'generate',
    'RunConfig',
    'run_pipeline',
]
