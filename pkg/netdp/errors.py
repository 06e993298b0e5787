'''Exception hierarchy shared by every netdp module.

All errors raised on purpose by the package derive from `NetDPError`, and each
one also derives from the builtin exception a caller would naturally catch
(`ValueError`, `KeyError`, ...), so code that only knows the builtins keeps
working.
'''


class NetDPError(Exception):
    '''Base class for errors raised by netdp.'''


class IngestError(NetDPError, ValueError):
    '''Edge input or a serialized store could not be ingested.'''


class NoNeighborsError(NetDPError, LookupError):
    '''A node without out-neighbors was asked for neighbor samples.

    Trainers catch this and skip the node.
    '''

    def __init__(self, node: int):
        super().__init__(f"node {node} has no out-neighbors")
        self.node = node


class NotBuiltError(NetDPError, RuntimeError):
    '''A lookup table was used before it was built.'''


class UnknownKeyError(NetDPError, KeyError):
    '''A parameter-store key is not owned by any shard.'''


class NonFiniteUpdateError(NetDPError, ValueError):
    '''NaN or infinity reached a place where only finite values are allowed.'''


class BarrierTimeoutError(NetDPError, TimeoutError):
    '''Not every worker reached the epoch barrier before the deadline.'''


class TrainingDivergedError(NetDPError, RuntimeError):
    '''A monitored training loss stopped being finite.'''

    def __init__(self, stage: str, epoch: int, last_finite_loss: float | None):
        super().__init__(
            f"{stage} diverged at epoch {epoch} "
            f"(last finite loss: {last_finite_loss}); try a smaller learning rate"
        )
        self.stage = stage
        self.epoch = epoch
        self.last_finite_loss = last_finite_loss


class LabelError(NetDPError, ValueError):
    '''The labeled set violates an input contract.'''


class FeatureBuildError(NetDPError, ValueError):
    '''Too many labeled nodes lacked an embedding or a supervised score.'''


class ConfigError(NetDPError, ValueError):
    '''A configuration value or key is invalid.'''


class StageError(NetDPError, RuntimeError):
    '''A pipeline stage failed; the original exception is chained as __cause__.'''

    def __init__(self, stage: str, message: str):
        super().__init__(f"stage={stage}: {message}")
        self.stage = stage


class FormatError(NetDPError, ValueError):
    '''A binary artifact has the wrong magic, version or length.'''
