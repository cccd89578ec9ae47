"""Experiment configuration: TOML sections mapped onto frozen dataclasses.

Example::

    seed = 0
    output_dir = "runs/demo"

    [scene]
    width = 32
    height = 32
    n_frames = 1

    [dataset]
    n_videos = 400
    n_test = 100

    [model]
    kind = "vit"

    [policy]
    name = "oracle"
    budgets = [0.1, 0.2, 0.3]

Unknown keys and ill-typed values raise :class:`ConfigError` naming the key
and the line it was read from.  ``--set section.key=value`` overrides are
parsed as TOML values and applied before validation.
"""

from __future__ import annotations

import re
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .datagen import SceneConfig
from .models import DenseConfig, GRUConfig, ViTConfig
from .policies import POLICY_NAMES
from .sensor import ConfigError, PatchGrid

CLASSIFIER_KINDS = ("vit", "dense")


@dataclass(frozen=True)
class DatasetSection:
    path: str | None = None      # read a written dataset instead of generating one
    n_videos: int = 25
    n_test: int = 5              # the last n_test videos are held out


@dataclass(frozen=True)
class ModelSection:
    kind: str = "vit"
    embed_dim: int = 64
    heads: int = 4
    blocks: int = 4
    mlp_dim: int = 128
    hidden: tuple[int, ...] = (128, 64)
    checkpoint: str | None = None


@dataclass(frozen=True)
class PolicySection:
    name: str = "random"
    budget: float = 0.3
    budgets: tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)
    policies: tuple[str, ...] = ()   # eval-classify; empty means [name]
    threshold: float = 0.5


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 32
    protocol: str = "per-level"      # or "shared": one model trained on full frames


@dataclass(frozen=True)
class SaccadeSection:
    period: int = 4
    budget: float = 0.3
    tau_gt: float = 0.1
    target: str = "attention"
    d_h: int = 64
    epochs: int = 30
    lr: float = 3e-3
    batch_size: int = 8
    checkpoint: str | None = None


@dataclass(frozen=True)
class TrackingSection:
    iou_min: float = 0.3
    max_misses: int = 3
    eval_iou: float = 0.3
    threshold: float = 0.5
    objectness_epochs: int = 200
    objectness_lr: float = 0.05
    frame_stride: int = 5
    policies: tuple[str, ...] = ("learned", "random")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    output_dir: str = "runs"
    scene: SceneConfig = field(default_factory=SceneConfig)
    dataset: DatasetSection = field(default_factory=DatasetSection)
    model: ModelSection = field(default_factory=ModelSection)
    policy: PolicySection = field(default_factory=PolicySection)
    training: TrainingSection = field(default_factory=TrainingSection)
    saccade: SaccadeSection = field(default_factory=SaccadeSection)
    tracking: TrackingSection = field(default_factory=TrackingSection)

    def grid(self) -> PatchGrid:
        p = self.scene.patch_size
        return PatchGrid(p, self.scene.height // p, self.scene.width // p)

    def classifier_config(self) -> ViTConfig | DenseConfig:
        s, m = self.scene, self.model
        grid = self.grid()
        if m.kind == "vit":
            return ViTConfig(patch_size=s.patch_size, channels=s.channels, embed_dim=m.embed_dim,
                             heads=m.heads, blocks=m.blocks, n_patches=grid.n_patches, mlp_dim=m.mlp_dim)
        return DenseConfig(input_dim=s.height * s.width * s.channels, hidden=m.hidden)

    def gru_config(self) -> GRUConfig:
        return GRUConfig(d_in=self.scene.channels + 1, d_h=self.saccade.d_h, n_patches=self.grid().n_patches)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scene"] = self.scene.to_dict()
        return _drop_none(d)


SECTIONS = {
    "scene": SceneConfig, "dataset": DatasetSection, "model": ModelSection, "policy": PolicySection,
    "training": TrainingSection, "saccade": SaccadeSection, "tracking": TrackingSection,
}
TOP_LEVEL = ("seed", "output_dir")


def _drop_none(d):
    if isinstance(d, dict):
        return {k: _drop_none(v) for k, v in d.items() if v is not None}
    if isinstance(d, (list, tuple)):
        return [_drop_none(v) for v in d]
    return d


@dataclass(frozen=True)
class _Source:
    text: str
    overridden: frozenset = frozenset()   # dotted keys set on the command line


def _locate(src: _Source, section: str | None, key: str) -> str:
    """``"line N"`` of ``key`` inside ``[section]`` (or the top level), when it can be found."""
    if (f"{section}.{key}" if section else key) in src.overridden:
        return "from --set override"
    current = None
    for n, line in enumerate(src.text.splitlines(), 1):
        stripped = line.strip()
        m = re.match(r"\[\s*([\w.-]+)\s*\]", stripped)
        if m:
            current = m.group(1)
            continue
        if current == section and re.match(rf"{re.escape(key)}\s*=", stripped):
            return f"line {n}"
    return "default value" if key else f"section [{section}]"


def _coerce(value: Any, default: Any, annotation: str, where: str) -> Any:
    """Check ``value`` against the field's default/annotation and normalise lists to tuples."""
    want = annotation.replace(" ", "")
    if isinstance(value, bool):
        if "bool" in want:
            return value
        raise ConfigError(f"{where}: expected {annotation}, got a boolean")
    if "tuple" in want:
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        inner = want[want.index("[") + 1:want.index(",")] if "[" in want else "Any"
        out = []
        for item in value:
            if inner == "int" and not isinstance(item, int):
                raise ConfigError(f"{where}: list items must be integers")
            if inner == "float" and not isinstance(item, (int, float)):
                raise ConfigError(f"{where}: list items must be numbers")
            if inner == "str" and not isinstance(item, str):
                raise ConfigError(f"{where}: list items must be strings")
            out.append(float(item) if inner == "float" else item)
        return tuple(out)
    if want.startswith("int"):
        if not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if want.startswith("float"):
        if not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if want.startswith("str"):
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    return value


def _build(cls, table: dict, section: str, src: _Source):
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in table.items():
        where = f"[{section}] {key} ({_locate(src, section, key)})"
        if key not in known:
            raise ConfigError(f"unknown key {where}; expected one of {', '.join(sorted(known))}")
        f = known[key]
        ann = f.type if isinstance(f.type, str) else getattr(f.type, "__name__", str(f.type))
        kwargs[key] = _coerce(value, f.default, ann, where)
    try:
        return cls(**kwargs)
    except (ConfigError, ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}] ({_locate(src, section, '')}): {exc}") from exc


def apply_override(data: dict, assignment: str) -> None:
    """Apply ``section.key=value`` (value in TOML syntax; bare words are strings)."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, raw = (s.strip() for s in assignment.split("=", 1))
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw
    parts = path.split(".")
    node = data
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {path!r}: {p!r} is not a section")
    node[parts[-1]] = value


def parse_config(text: str, overrides=(), source: str = "<config>") -> ExperimentConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for o in overrides:
        apply_override(data, o)
    src = _Source(text, frozenset(o.split("=", 1)[0].strip() for o in overrides))
    for key, value in data.items():
        if key not in SECTIONS and key not in TOP_LEVEL:
            raise ConfigError(f"{source}: unknown key {key!r} ({_locate(src, None, key)})")
        if key in SECTIONS and not isinstance(value, dict):
            raise ConfigError(f"{source}: {key!r} must be a [section] ({_locate(src, None, key)})")
    if "seed" not in data:
        raise ConfigError(f"{source}: missing required top-level key 'seed'")
    seed = data["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"{source}: seed ({_locate(src, None, 'seed')}) must be a non-negative integer")
    output_dir = data.get("output_dir", "runs")
    if not isinstance(output_dir, str):
        raise ConfigError(f"{source}: output_dir ({_locate(src, None, 'output_dir')}) must be a string")
    sections = {name: _build(cls, data.get(name, {}), name, src) for name, cls in SECTIONS.items()}
    if "seed" not in data.get("scene", {}):
        sections["scene"] = SceneConfig(**{**sections["scene"].to_dict(), "seed": seed})
    cfg = ExperimentConfig(seed=seed, output_dir=output_dir, **sections)
    _validate(cfg, src, source)
    return cfg


def _validate(cfg: ExperimentConfig, src: _Source, source: str) -> None:
    def fail(section, key, msg):
        raise ConfigError(f"{source}: [{section}] {key} ({_locate(src, section, key)}): {msg}")

    if cfg.model.kind not in CLASSIFIER_KINDS:
        fail("model", "kind", f"expected one of {CLASSIFIER_KINDS}, got {cfg.model.kind!r}")
    names = (cfg.policy.name,) + cfg.policy.policies + cfg.tracking.policies
    for p in names:
        if p not in POLICY_NAMES and p != "oracle":
            fail("policy", "name", f"unknown policy {p!r}")
    if list(cfg.policy.budgets) != sorted(cfg.policy.budgets) or not cfg.policy.budgets:
        fail("policy", "budgets", "must be a non-empty ascending list")
    checks = [("policy", "budgets", b) for b in cfg.policy.budgets]
    checks += [("policy", "budget", cfg.policy.budget), ("saccade", "budget", cfg.saccade.budget)]
    for section, key, b in checks:
        if not 0 < b <= 1:
            fail(section, key, f"budget fractions must lie in (0, 1], got {b}")
    if cfg.training.protocol not in ("per-level", "shared"):
        fail("training", "protocol", "expected 'per-level' or 'shared'")
    if cfg.saccade.target not in ("attention", "foreground"):
        fail("saccade", "target", "expected 'attention' or 'foreground'")
    if cfg.saccade.period < 2:
        fail("saccade", "period", "must be at least 2")
    for section, obj, key in (("training", cfg.training, "epochs"), ("saccade", cfg.saccade, "epochs"),
                              ("training", cfg.training, "batch_size"), ("saccade", cfg.saccade, "batch_size")):
        if getattr(obj, key) < 1:
            fail(section, key, "must be at least 1")
    if cfg.dataset.path is None and not 0 <= cfg.dataset.n_test < cfg.dataset.n_videos:
        fail("dataset", "n_test", "must be smaller than n_videos")
    if cfg.model.kind == "vit" and cfg.model.embed_dim % cfg.model.heads:
        fail("model", "heads", "must divide embed_dim")


def load_config(path, overrides=()) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, overrides, source=str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    """TOML rendering of a config (round-trips through :func:`parse_config`)."""
    d = cfg.to_dict()
    lines = [f"seed = {d.pop('seed')}", f"output_dir = {_toml(d.pop('output_dir'))}"]
    for name in SECTIONS:
        lines.append(f"\n[{name}]")
        for k, v in d[name].items():
            lines.append(f"{k} = {_toml(v)}")
    return "\n".join(lines) + "\n"


def _toml(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml(x) for x in v) + "]"
    return repr(v)
