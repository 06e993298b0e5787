from .netdp import (
    PartitionedGraph, ParamStore,
    EmbeddingTable, LabeledSet, SupervisedParams, Forest,
    RunConfig, run_pipeline
)

__all__ = [
    'PartitionedGraph', 'ParamStore',
    'EmbeddingTable', 'LabeledSet', 'SupervisedParams', 'Forest',
    'RunConfig', 'run_pipeline'
]
