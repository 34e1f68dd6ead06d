"""Experiment configuration: INI-style text with [section] headers.

A config names either a dataset ([data] cube/labels paths) or a [synthetic]
scene, plus the split, network, fusion, classifier, and run sections. Every
key has a default; emit_text writes the canonical echo that re-parses to an
equal config.
"""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field

from .annc import AnncConfig
from .discriminant import DiscConfig
from .errors import ConfigError
from .ingest import SyntheticSceneConfig


@dataclass
class ExperimentConfig:
    cube_path: str | None = None
    labels_path: str | None = None
    synthetic: SyntheticSceneConfig | None = None
    per_class: int = 50
    virtual_per_class: int = 2000
    annc: AnncConfig = field(default_factory=AnncConfig)
    disc: DiscConfig = field(default_factory=DiscConfig)
    fusion_size: int = 19
    fusion_threshold: float = 0.01
    classifier: str = "center"  # "center" or "knn:<k>"
    seeds: tuple[int, ...] = (1, 2, 3, 4, 5)
    out_dir: str = "runs/out"

    @property
    def knn_k(self) -> int:
        return int(self.classifier.split(":")[1]) if self.classifier.startswith("knn") else 0

    def validate(self) -> None:
        if (self.synthetic is None) == (self.cube_path is None):
            raise ConfigError("config needs exactly one of [data] paths or a [synthetic] scene")
        if self.cube_path is not None:
            for path in (self.cube_path, self.labels_path):
                if path is None:
                    raise ConfigError("[data] needs both cube and labels paths")
                if not os.path.exists(path):
                    raise ConfigError(f"referenced file does not exist: {path}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.per_class < 1:
            raise ConfigError("per_class must be positive")
        if self.fusion_size < 1 or self.fusion_size % 2 == 0:
            raise ConfigError(f"fusion size must be odd, got {self.fusion_size}")
        if not 0.0 <= self.fusion_threshold <= 1.0:
            raise ConfigError(f"fusion threshold must lie in [0, 1], got {self.fusion_threshold}")
        if self.classifier != "center":
            parts = self.classifier.split(":")
            if len(parts) != 2 or parts[0] != "knn" or not parts[1].isdigit() or int(parts[1]) < 1:
                raise ConfigError(f"classifier must be 'center' or 'knn:<k>', got {self.classifier!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.replace(",", " ").split())


def parse_config_text(text: str) -> ExperimentConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc
    cfg = ExperimentConfig()

    try:
        if parser.has_section("data"):
            cfg.cube_path = parser.get("data", "cube", fallback=None)
            cfg.labels_path = parser.get("data", "labels", fallback=None)
        if parser.has_section("synthetic"):
            s = parser["synthetic"]
            cfg.synthetic = SyntheticSceneConfig(
                height=s.getint("height", 64),
                width=s.getint("width", 64),
                bands=s.getint("bands", 32),
                n_classes=s.getint("classes", 5),
                regions=s.getint("regions", 5),
                noise_std=s.getfloat("noise_std", 1.0),
                smoothness=s.getint("smoothness", 8),
                seed=s.getint("seed", 7),
            )
        if parser.has_section("split"):
            cfg.per_class = parser.getint("split", "per_class", fallback=cfg.per_class)
        if parser.has_section("annc"):
            a = parser["annc"]
            d = AnncConfig()
            cfg.annc = AnncConfig(
                hidden=_ints(a.get("hidden", "256,128,64")),
                center_weight=a.getfloat("center_weight", d.center_weight),
                batch_size=a.getint("batch", d.batch_size),
                lr=a.getfloat("lr", d.lr),
                lr_decay=a.getfloat("decay", d.lr_decay),
                decay_steps=a.getint("decay_steps", d.decay_steps),
                steps=a.getint("steps", d.steps),
            )
            cfg.virtual_per_class = a.getint("virtual_per_class", cfg.virtual_per_class)
        if parser.has_section("disc"):
            ds = parser["disc"]
            d = DiscConfig()
            kernels = ds.get("kernels", fallback=None)
            cfg.disc = DiscConfig(
                channels=_ints(ds.get("channels", "16,32,32,64,64,128,128")),
                dense_units=ds.getint("dense", d.dense_units),
                kernels=_ints(kernels) if kernels else None,
                batch_size=ds.getint("batch", d.batch_size),
                lr=ds.getfloat("lr", d.lr),
                lr_decay=ds.getfloat("decay", d.lr_decay),
                decay_epochs=ds.getint("decay_epochs", d.decay_epochs),
                epochs=ds.getint("epochs", d.epochs),
            )
        if parser.has_section("fusion"):
            cfg.fusion_size = parser.getint("fusion", "size", fallback=cfg.fusion_size)
            cfg.fusion_threshold = parser.getfloat("fusion", "threshold",
                                                   fallback=cfg.fusion_threshold)
        if parser.has_section("classify"):
            cfg.classifier = parser.get("classify", "method", fallback=cfg.classifier)
        if parser.has_section("run"):
            seeds = parser.get("run", "seeds", fallback=None)
            if seeds:
                cfg.seeds = _ints(seeds)
            cfg.out_dir = parser.get("run", "out", fallback=cfg.out_dir)
    except ValueError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc

    cfg.validate()
    return cfg


def parse_config(path: str) -> ExperimentConfig:
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def emit_text(cfg: ExperimentConfig) -> str:
    """Canonical config echo; parse_config_text(emit_text(c)) == c."""
    lines = []
    if cfg.synthetic is not None:
        s = cfg.synthetic
        lines += ["[synthetic]",
                  f"height = {s.height}", f"width = {s.width}", f"bands = {s.bands}",
                  f"classes = {s.n_classes}", f"regions = {s.regions}",
                  f"noise_std = {s.noise_std!r}", f"smoothness = {s.smoothness}",
                  f"seed = {s.seed}", ""]
    else:
        lines += ["[data]", f"cube = {cfg.cube_path}", f"labels = {cfg.labels_path}", ""]
    lines += ["[split]", f"per_class = {cfg.per_class}", ""]
    a = cfg.annc
    lines += ["[annc]",
              "hidden = " + ",".join(str(v) for v in a.hidden),
              f"center_weight = {a.center_weight!r}",
              f"batch = {a.batch_size}", f"lr = {a.lr!r}", f"decay = {a.lr_decay!r}",
              f"decay_steps = {a.decay_steps}", f"steps = {a.steps}",
              f"virtual_per_class = {cfg.virtual_per_class}", ""]
    d = cfg.disc
    lines += ["[disc]",
              "channels = " + ",".join(str(v) for v in d.channels),
              f"dense = {d.dense_units}"]
    if d.kernels is not None:
        lines += ["kernels = " + ",".join(str(v) for v in d.kernels)]
    lines += [f"batch = {d.batch_size}", f"lr = {d.lr!r}", f"decay = {d.lr_decay!r}",
              f"decay_epochs = {d.decay_epochs}", f"epochs = {d.epochs}", ""]
    lines += ["[fusion]", f"size = {cfg.fusion_size}",
              f"threshold = {cfg.fusion_threshold!r}", ""]
    lines += ["[classify]", f"method = {cfg.classifier}", ""]
    lines += ["[run]", "seeds = " + ",".join(str(s) for s in cfg.seeds),
              f"out = {cfg.out_dir}", ""]
    return "\n".join(lines)
