"""Run configuration: one YAML document with nested sections, strict keys."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .dataio import SynthSpec
from .errors import ConfigError, ConfitError
from .supcon import SupConConfig
from .trainer import GridSearchSpec, TrainConfig

SECTIONS = {
    "seed", "data", "synth", "model", "train", "supcon", "grid", "probe", "diagnose", "compare",
}
DATA_KEYS = {"train", "validation"}
SYNTH_KEYS = {"class_count", "clips_per_class", "frame_count", "feature_dim", "class_separation",
              "shared_noise_dims"}
MODEL_KEYS = {"encoder_hidden", "embed_dim", "proj_dim", "proj_hidden"}
TRAIN_KEYS = {"epochs", "learning_rate", "batch_classes", "per_class", "eval_every"}
SUPCON_KEYS = {f.name for f in fields(SupConConfig)}
GRID_KEYS = {f.name for f in fields(GridSearchSpec)}
PROBE_KEYS = {"encoder"}
DIAGNOSE_KEYS = {"encoder", "probe", "dataset", "group_size", "n_groups"}
COMPARE_KEYS = {"seeds"}


def _section(doc, name, allowed):
    sec = doc.get(name)
    if sec is None:
        return None
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    unknown = set(sec) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    return dict(sec)


@dataclass
class RunConfig:
    seed: int = 0
    data: dict | None = None
    synth: dict | None = None
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    supcon: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    probe: dict | None = None
    diagnose: dict | None = None
    compare: dict | None = None
    base_dir: Path = field(default=Path("."), compare=False)

    def require(self, name):
        sec = getattr(self, name)
        if not sec:
            raise ConfigError(f"missing config section {name!r}")
        return sec

    def path(self, section, key) -> Path:
        sec = self.require(section)
        if key not in sec:
            raise ConfigError(f"section {section!r} must declare {key!r}")
        p = Path(sec[key])
        return p if p.is_absolute() else self.base_dir / p

    def synth_spec(self, seed=None) -> SynthSpec:
        sec = self.require("synth")
        missing = SYNTH_KEYS - {"shared_noise_dims"} - set(sec)
        if missing:
            raise ConfigError(f"synth section lacks {sorted(missing)}")
        return SynthSpec(seed=self.seed if seed is None else seed, **sec)

    def supcon_config(self) -> SupConConfig:
        return SupConConfig(**self.supcon)

    def train_config(self, seed=None) -> TrainConfig:
        kw = dict(self.train)
        kw.update(self.model)
        if "encoder_hidden" in kw:
            kw["encoder_hidden"] = tuple(int(h) for h in kw["encoder_hidden"])
        return TrainConfig(supcon=self.supcon_config(), seed=self.seed if seed is None else seed, **kw)

    def grid_spec(self) -> GridSearchSpec:
        kw = dict(self.grid)
        for key in ("learning_rates", "batch_sizes"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return GridSearchSpec(**kw)

    def with_seed(self, seed) -> RunConfig:
        return replace(self, seed=int(seed))

    def to_dict(self):
        doc = asdict(self)
        doc.pop("base_dir")
        return {k: v for k, v in doc.items() if v not in (None, {})}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()


def parse_run_config(doc, base_dir=".") -> RunConfig:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a mapping")
    unknown = set(doc) - SECTIONS
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or seed < 0 or seed >= 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    cfg = RunConfig(
        seed=seed,
        data=_section(doc, "data", DATA_KEYS),
        synth=_section(doc, "synth", SYNTH_KEYS),
        model=_section(doc, "model", MODEL_KEYS) or {},
        train=_section(doc, "train", TRAIN_KEYS) or {},
        supcon=_section(doc, "supcon", SUPCON_KEYS) or {},
        grid=_section(doc, "grid", GRID_KEYS) or {},
        probe=_section(doc, "probe", PROBE_KEYS),
        diagnose=_section(doc, "diagnose", DIAGNOSE_KEYS),
        compare=_section(doc, "compare", COMPARE_KEYS),
        base_dir=Path(base_dir),
    )
    # build every typed view once so bad values fail at load time
    try:
        cfg.train_config()
        cfg.grid_spec()
        if cfg.synth:
            cfg.synth_spec().validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    except ConfitError:
        raise
    return cfg


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}".replace("\n", " ")) from None
    return parse_run_config(doc, path.parent)
