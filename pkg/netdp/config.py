'''Run configuration: per-module dataclasses plus a plain key=value file format.

A config file holds one `key=value` per line; `#` starts a comment. Module
settings use section-qualified keys (`unsup.dim=64`, `mart.num_trees=200`),
run-wide settings are unqualified (`seed=7`). Values are coerced to the
field's declared type; empty values mean None for optional fields.

Precedence is defaults < config file < command-line overrides. The effective
configuration is written back as a manifest in the same format, and loading
the manifest reproduces the configuration exactly.
'''
import dataclasses
import typing
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

from .ensemble import MartConfig
from .errors import ConfigError
from .evaluation import EvalConfig
from .graph_store import DEFAULT_ALPHA, DEFAULT_MAX_DEGREE, DEFAULT_MAX_SKIP_RATE
from .sup_embed import SupConfig
from .synth_gen import SynthConfig
from .unsup_embed import UnsupConfig

_TRUE = {'true', '1', 'yes', 'on'}
_FALSE = {'false', '0', 'no', 'off'}


@dataclass
class GraphConfig:
    num_shards: int = 1
    alpha: float = DEFAULT_ALPHA
    max_degree: int = DEFAULT_MAX_DEGREE
    max_skip_rate: float = DEFAULT_MAX_SKIP_RATE
    reverse: bool = False
    symmetrize: bool = False

    def validate(self) -> None:
        if self.num_shards < 1:
            raise ConfigError(f"graph.num_shards must be >= 1, got {self.num_shards}")
        if self.alpha < 0:
            raise ConfigError(f"graph.alpha must be >= 0, got {self.alpha}")
        if self.max_degree < 1:
            raise ConfigError(f"graph.max_degree must be >= 1, got {self.max_degree}")
        if not 0 <= self.max_skip_rate <= 1:
            raise ConfigError(f"graph.max_skip_rate must be in [0, 1], got {self.max_skip_rate}")


SECTIONS = ('graph', 'unsup', 'sup', 'mart', 'synth', 'eval')


@dataclass
class RunConfig:
    '''Every setting of a pipeline run.

    `seed` and `workers` are run-wide: `resolved()` copies them into the
    module configs (the supervised trainer gets seed + 1 so both trainers do
    not replay the same random stream).
    '''
    seed: int = 7
    workers: int = 1
    out_dir: str = 'netdp_run'
    generate: bool = True
    edges: Optional[str] = None
    labels: Optional[str] = None
    groups: Optional[str] = None
    bench: Optional[str] = None
    include_sup_emb: bool = False
    log_level: str = 'INFO'
    graph: GraphConfig = field(default_factory=GraphConfig)
    unsup: UnsupConfig = field(default_factory=UnsupConfig)
    sup: SupConfig = field(default_factory=SupConfig)
    mart: MartConfig = field(default_factory=MartConfig)
    synth: SynthConfig = field(default_factory=lambda: SynthConfig(num_nodes=5000, p_in=0.02,
                                                                     p_out=0.001))
    eval: EvalConfig = field(default_factory=lambda: EvalConfig(per_period=True))

    def validate(self) -> None:
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")
        if not self.generate and (self.edges is None or self.labels is None):
            raise ConfigError("generate=false needs edges and labels paths")
        for name in SECTIONS:
            section = getattr(self, name)
            if name == 'synth' and not self.generate:
                continue
            section.validate()

    def resolved(self) -> 'RunConfig':
        cfg = dataclasses.replace(self)
        cfg.unsup = dataclasses.replace(self.unsup, seed=self.seed, workers=self.workers)
        cfg.sup = dataclasses.replace(self.sup, seed=self.seed + 1, workers=self.workers)
        cfg.synth = dataclasses.replace(self.synth, seed=self.seed)
        cfg.mart = dataclasses.replace(self.mart, include_sup_emb=self.include_sup_emb)
        return cfg

    # --- key=value form ---

    def items(self) -> List[Tuple[str, str]]:
        out = []
        for f in dataclasses.fields(self):
            if f.name in SECTIONS:
                continue
            out.append((f.name, format_value(getattr(self, f.name))))
        for name in SECTIONS:
            section = getattr(self, name)
            for f in dataclasses.fields(section):
                out.append((f"{name}.{f.name}", format_value(getattr(section, f.name))))
        return out

    def to_manifest(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())

    def write_manifest(self, path: str) -> None:
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write("# effective netdp run configuration\n")
            fh.write(self.to_manifest())

    def set(self, key: str, raw: str) -> None:
        """Sets one `key` (possibly section-qualified) from its string form."""
        key = key.strip()
        if '.' in key:
            section_name, name = key.split('.', 1)
            if section_name not in SECTIONS:
                raise ConfigError(f"unknown config section {section_name!r} in {key!r}")
            target = getattr(self, section_name)
        else:
            if key in SECTIONS:
                raise ConfigError(f"{key!r} is a section; use {key}.<field>=value")
            target, name = self, key
        fields = {f.name: f for f in dataclasses.fields(target)}
        if name not in fields:
            raise ConfigError(f"unknown config key {key!r}")
        hints = typing.get_type_hints(type(target))
        setattr(target, name, parse_value(hints[name], raw.strip(), key))

    def update(self, pairs: Iterable[str]) -> 'RunConfig':
        for pair in pairs:
            if '=' not in pair:
                raise ConfigError(f"expected key=value, got {pair!r}")
            key, raw = pair.split('=', 1)
            self.set(key, raw)
        return self

    @classmethod
    def from_file(cls, path: str, base: Optional['RunConfig'] = None) -> 'RunConfig':
        cfg = base if base is not None else cls()
        with open(path, 'r', encoding='utf-8') as fh:
            lines = [line.split('#', 1)[0].strip() for line in fh]
        return cfg.update(line for line in lines if line)

    def as_dict(self) -> Dict[str, str]:
        return dict(self.items())


def format_value(value) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ','.join(format_value(v) for v in value)
    return str(value)


def parse_value(tp, raw: str, key: str = '?'):
    """Coerces `raw` to the annotated type `tp`.

    Raises:
        ConfigError: If the text does not parse as that type.
    """
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if raw == '':
            return None
        inner = [a for a in args if a is not type(None)]
        return parse_value(inner[0], raw, key)
    try:
        if origin is tuple:
            item = args[0]
            return tuple(parse_value(item, part.strip(), key) for part in raw.split(',') if part.strip())
        if tp is bool:
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {raw!r} for {key}") from None
