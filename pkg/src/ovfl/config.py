"""Run configuration: YAML in, validated :class:`RunConfig` out.

Every key is optional; omitted keys take the defaults below. Unknown keys are
rejected. Two keys expand one file into several run cells:

``grid``
    mapping of dotted key -> list of values; the Cartesian product is taken.
``variants``
    list of override mappings (dotted keys allowed), crossed with ``grid``.
"""

from __future__ import annotations

import copy
import itertools
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from .environment import WorldConfig
from .errors import ConfigError
from .protocol import ALGORITHMS, EVAL_MODES, ProtocolConfig
from .quantize import QuantizerSpec

ETA_RULES = ("constant", "inv_sqrt_T")


@dataclass
class ModelConfig:
    extractor_sizes: List[int] = field(default_factory=lambda: [102, 128, 256, 64, 16])
    head_hidden: List[int] = field(default_factory=lambda: [8])


@dataclass
class AnalysisConfig:
    enabled: bool = False
    comparator_budget: int = 100
    trace: bool = False


@dataclass
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    algorithm: str = "ovfl"
    E: int = 1
    eta: float = 1e-4
    eta_rule: str = "constant"
    T: int = 300
    quantizer: QuantizerSpec = field(default_factory=lambda: QuantizerSpec("uniform_scalar", 32))
    v: float = 1.0
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    lc_freeze: int = 50
    trace_dir: Optional[str] = None
    eval_mode: str = "full_precision"
    output_dir: Optional[str] = None
    weight_clip: Optional[float] = None
    record_wall_time: bool = False
    workers: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    grid: Dict[str, List[Any]] = field(default_factory=dict)
    variants: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def effective_eta(self) -> float:
        if self.eta_rule == "inv_sqrt_T":
            return self.eta / math.sqrt(self.T)
        return self.eta

    def protocol(self) -> ProtocolConfig:
        return ProtocolConfig(E=self.E, eta=self.effective_eta, quantizer=self.quantizer,
                              eval_mode=self.eval_mode, weight_clip=self.weight_clip)

    def world_with_mobility(self) -> WorldConfig:
        return replace(self.world, mobility_rate=float(self.v))


_WORLD_KEYS = [f.name for f in fields(WorldConfig) if f.name != "mobility_rate"]
_SECTIONS = {
    "world": _WORLD_KEYS,
    "quantizer": ["kind", "bits_per_component"],
    "model": [f.name for f in fields(ModelConfig)],
    "analysis": [f.name for f in fields(AnalysisConfig)],
}
_TOP = [f.name for f in fields(RunConfig)]


# -- parsing -------------------------------------------------------------------

def _key_lines(text: str) -> Dict[str, int]:
    """Dotted key -> 1-based line number, for error messages."""
    try:
        root = yaml.compose(text)
    except yaml.YAMLError:
        return {}
    out: Dict[str, int] = {}

    def walk(node, prefix):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                if isinstance(k, yaml.ScalarNode):
                    path = f"{prefix}{k.value}"
                    out[path] = k.start_mark.line + 1
                    walk(v, path + ".")

    walk(root, "")
    return out


def _err(msg, key, lines):
    return ConfigError(msg, field=key, line=lines.get(key))


def _int(value, key, lines, lo=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise _err(f"must be an integer, got {value!r}", key, lines)
    if lo is not None and value < lo:
        raise _err(f"must be >= {lo}, got {value}", key, lines)
    return value


def _float(value, key, lines):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise _err(f"must be a number, got {value!r}", key, lines)
    return float(value)


def _choice(value, options, key, lines):
    if value not in options:
        raise _err(f"must be one of {list(options)}, got {value!r}", key, lines)
    return value


def _check_keys(d, allowed, prefix, lines):
    if not isinstance(d, dict):
        raise _err(f"must be a mapping, got {type(d).__name__}", prefix.rstrip(".") or "<root>", lines)
    for k in d:
        if k not in allowed:
            raise _err("unknown key", f"{prefix}{k}", lines)


def _build(raw: Dict[str, Any], lines: Dict[str, int]) -> RunConfig:
    _check_keys(raw, _TOP, "", lines)
    cfg = RunConfig()
    kw: Dict[str, Any] = {}

    world_raw = raw.get("world") or {}
    _check_keys(world_raw, _SECTIONS["world"], "world.", lines)
    try:
        world = WorldConfig(**world_raw)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], field=exc.field, line=lines.get(exc.field or "")) from None
    except TypeError as exc:
        raise _err(str(exc), "world", lines) from None
    kw["world"] = world

    q_raw = raw.get("quantizer") or {}
    _check_keys(q_raw, _SECTIONS["quantizer"], "quantizer.", lines)
    q_kind = q_raw.get("kind", cfg.quantizer.kind)
    q_bits = q_raw.get("bits_per_component", cfg.quantizer.bits_per_component)
    try:
        kw["quantizer"] = QuantizerSpec(q_kind, q_bits)
    except ConfigError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], field=exc.field, line=lines.get(exc.field or "")) from None

    m_raw = raw.get("model") or {}
    _check_keys(m_raw, _SECTIONS["model"], "model.", lines)
    model = ModelConfig(**{k: [_int(x, f"model.{k}", lines, 1) for x in v] for k, v in m_raw.items()})
    if not model.extractor_sizes or len(model.extractor_sizes) < 2:
        raise _err("needs at least input and output sizes", "model.extractor_sizes", lines)
    if model.extractor_sizes[0] != world.feature_dim:
        raise _err(f"input size {model.extractor_sizes[0]} != per-SU feature dim {world.feature_dim}",
                   "model.extractor_sizes", lines)
    kw["model"] = model

    a_raw = raw.get("analysis") or {}
    _check_keys(a_raw, _SECTIONS["analysis"], "analysis.", lines)
    analysis = AnalysisConfig()
    if "enabled" in a_raw:
        analysis.enabled = bool(a_raw["enabled"])
    if "trace" in a_raw:
        analysis.trace = bool(a_raw["trace"])
    if "comparator_budget" in a_raw:
        analysis.comparator_budget = _int(a_raw["comparator_budget"], "analysis.comparator_budget", lines, 1)
    kw["analysis"] = analysis

    if "algorithm" in raw:
        kw["algorithm"] = _choice(raw["algorithm"], ALGORITHMS, "algorithm", lines)
    if "E" in raw:
        kw["E"] = _int(raw["E"], "E", lines, 1)
    if "eta" in raw:
        kw["eta"] = _float(raw["eta"], "eta", lines)
        if kw["eta"] < 0:
            raise _err("must be >= 0", "eta", lines)
    if "eta_rule" in raw:
        kw["eta_rule"] = _choice(raw["eta_rule"], ETA_RULES, "eta_rule", lines)
    if "T" in raw:
        kw["T"] = _int(raw["T"], "T", lines, 1)
    if "v" in raw:
        kw["v"] = _float(raw["v"], "v", lines)
        if kw["v"] < 0:
            raise _err("must be >= 0", "v", lines)
    if "seeds" in raw:
        seeds = raw["seeds"]
        if not isinstance(seeds, list) or not seeds:
            raise _err("must be a non-empty list of integers", "seeds", lines)
        kw["seeds"] = [_int(s, "seeds", lines, 0) for s in seeds]
    if "lc_freeze" in raw:
        kw["lc_freeze"] = _int(raw["lc_freeze"], "lc_freeze", lines, 1)
    if raw.get("trace_dir") is not None:
        kw["trace_dir"] = str(raw["trace_dir"])
    if "eval_mode" in raw:
        kw["eval_mode"] = _choice(raw["eval_mode"], EVAL_MODES, "eval_mode", lines)
    if raw.get("output_dir") is not None:
        kw["output_dir"] = str(raw["output_dir"])
    if raw.get("weight_clip") is not None:
        kw["weight_clip"] = _float(raw["weight_clip"], "weight_clip", lines)
        if kw["weight_clip"] <= 0:
            raise _err("must be positive", "weight_clip", lines)
    if "record_wall_time" in raw:
        kw["record_wall_time"] = bool(raw["record_wall_time"])
    if "workers" in raw:
        kw["workers"] = _int(raw["workers"], "workers", lines, 1)
    if raw.get("grid"):
        grid = raw["grid"]
        if not isinstance(grid, dict):
            raise _err("must map dotted keys to lists", "grid", lines)
        for k, vals in grid.items():
            if not isinstance(vals, list) or not vals:
                raise _err("must be a non-empty list", f"grid.{k}", lines)
            _check_dotted(k, f"grid.{k}", lines)
        kw["grid"] = {str(k): list(v) for k, v in grid.items()}
    if raw.get("variants"):
        variants = raw["variants"]
        if not isinstance(variants, list) or not all(isinstance(v, dict) for v in variants):
            raise _err("must be a list of mappings", "variants", lines)
        for v in variants:
            for k in v:
                _check_dotted(k, "variants", lines)
        kw["variants"] = [dict(v) for v in variants]
    return replace(cfg, **kw)


def _check_dotted(key: str, where: str, lines):
    parts = key.split(".")
    if parts[0] in ("grid", "variants", "seeds"):
        raise _err(f"{key!r} cannot be swept", where, lines)
    if parts[0] not in _TOP:
        raise _err(f"unknown key {key!r}", where, lines)
    if len(parts) == 2 and parts[0] in _SECTIONS and parts[1] in _SECTIONS[parts[0]]:
        return
    if len(parts) == 1 and parts[0] not in _SECTIONS:
        return
    raise _err(f"unknown key {key!r}", where, lines)


def parse_config(text: str) -> RunConfig:
    try:
        raw = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ConfigError(f"YAML parse error: {exc.problem}", line=line) from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"YAML parse error: {exc}") from None
    if raw is None:
        raw = {}
    return _build(raw, _key_lines(text))


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    cfg = parse_config(text)
    if cfg.trace_dir is not None and not Path(cfg.trace_dir).is_absolute():
        cfg.trace_dir = str((path.parent / cfg.trace_dir).resolve())
    return cfg


def to_dict(cfg: RunConfig) -> Dict[str, Any]:
    world = asdict(cfg.world)
    world.pop("mobility_rate")
    world["pu_positions"] = [list(p) for p in world["pu_positions"]]
    world["power_levels"] = list(world["power_levels"])
    return {
        "world": world,
        "algorithm": cfg.algorithm,
        "E": cfg.E,
        "eta": cfg.eta,
        "eta_rule": cfg.eta_rule,
        "T": cfg.T,
        "quantizer": {"kind": cfg.quantizer.kind, "bits_per_component": int(cfg.quantizer.bits_per_component)},
        "v": cfg.v,
        "seeds": list(cfg.seeds),
        "lc_freeze": cfg.lc_freeze,
        "trace_dir": cfg.trace_dir,
        "eval_mode": cfg.eval_mode,
        "output_dir": cfg.output_dir,
        "weight_clip": cfg.weight_clip,
        "record_wall_time": cfg.record_wall_time,
        "workers": cfg.workers,
        "model": asdict(cfg.model),
        "analysis": asdict(cfg.analysis),
        "grid": copy.deepcopy(cfg.grid),
        "variants": copy.deepcopy(cfg.variants),
    }


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def _set_dotted(d: Dict[str, Any], key: str, value):
    parts = key.split(".")
    cur = d
    for p in parts[:-1]:
        if cur.get(p) is None:
            cur[p] = {}
        cur = cur[p]
    cur[parts[-1]] = value


def _tag(overrides: Dict[str, Any]) -> str:
    if not overrides:
        return "base"
    short = {"quantizer.bits_per_component": "b", "quantizer.kind": "q", "world.num_pus": "N",
             "world.num_sus": "K", "algorithm": "alg"}
    parts = []
    for k, v in overrides.items():
        parts.append(f"{short.get(k, k.split('.')[-1])}{v}")
    return "_".join(parts).replace("/", "-").replace(" ", "")


def expand_cells(cfg: RunConfig) -> List[Tuple[str, RunConfig]]:
    """Expand ``grid`` x ``variants`` into ``(tag, single-cell RunConfig)`` pairs."""
    keys = list(cfg.grid)
    combos = [dict(zip(keys, vals)) for vals in itertools.product(*(cfg.grid[k] for k in keys))] or [{}]
    variants = cfg.variants or [{}]
    base = to_dict(cfg)
    base["grid"], base["variants"] = {}, []
    # world.pu_positions must be re-derived when the PU count changes
    cells = []
    for var in variants:
        for combo in combos:
            overrides = {**var, **combo}
            d = copy.deepcopy(base)
            if "world.num_pus" in overrides and "world.pu_positions" not in overrides:
                d["world"]["pu_positions"] = None
            for k, v in overrides.items():
                _set_dotted(d, k, v)
            cell = _build(d, {})
            cell.trace_dir = cfg.trace_dir if "trace_dir" not in overrides else cell.trace_dir
            cells.append((_tag(overrides), cell))
    tags = [t for t, _ in cells]
    if len(set(tags)) != len(tags):
        cells = [(f"{i:02d}_{t}", c) for i, (t, c) in enumerate(cells)]
    return cells
