"""Flat ``section.key = value`` run configuration.

Values are typed after their defaults.  A file named by ``--config`` (or by
the ``DMOT_CONFIG`` environment variable) is read first, then ``--set
key=value`` overrides are applied on top.
"""
from __future__ import annotations

import os
from dataclasses import dataclass, field

from .features import FeatureConfig
from .imaging import InvalidArgument
from .pipeline import PipelineConfig
from .tracker import TrackerConfig

ENV_VAR = "DMOT_CONFIG"

DEFAULTS = {
    "run.seed": 0,
    "run.mode": "full",
    "run.threads": 1,
    "pipeline.tau_s": 0.2,
    "pipeline.tau_a": 0.6,
    "pipeline.tau_o": 0.5,
    "pipeline.tau_d": 1.0,
    "pipeline.overlap_window": 10,
    "pipeline.tracklet_len": 8,
    "pipeline.gallery_size": 100,
    "pipeline.frame_rate": 30.0,
    "pipeline.k_factor": 0.3,
    "pipeline.init_factor": 0.2,
    "pipeline.term_factor": 2.0,
    "tracker.search_scale": 2.0,
    "tracker.scale_step": 0.02,
    "tracker.scale_penalty": 0.9,
    "tracker.memory_size": 30,
    "tracker.learning_rate": 0.0125,
    "tracker.upsample": 1,
    "tracker.cost_sensitive": True,
    "filter.w_min": 1e-3,
    "filter.eta": 10.0,
    "filter.cg_init_iter": 100,
    "filter.cg_update_iter": 5,
    "filter.cg_tol": 1e-5,
    "features.hog_cell": 4,
    "features.cn_cell": 4,
    "features.hog_bins": 9,
    "features.soft_cells": True,
    "features.cn_table": "prototype",
    "train.lr": 1e-3,
    "train.batch": 16,
    "train.san_steps": 900,
    "train.tan_steps": 400,
    "train.tan_pool": 1024,
}


def _convert(key, text, default):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError:
        raise InvalidArgument(f"{key}: cannot read {text!r} as {type(default).__name__}") from None
    return text


def parse_kv(text, source="<text>") -> dict:
    """``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise InvalidArgument(f"{source}:{lineno}: expected 'key = value'")
        out[key.strip()] = value.strip()
    return out


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: dict(DEFAULTS))
    source: str | None = None

    def __getitem__(self, key):
        return self.values[key]

    def set(self, key, text):
        if key not in DEFAULTS:
            raise InvalidArgument(f"unknown config key {key!r}")
        self.values[key] = _convert(key, str(text), DEFAULTS[key])

    def dump(self) -> str:
        lines = [f"# resolved from {self.source or 'defaults'}"]
        lines += [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in sorted(self.values.items())]
        return "\n".join(lines) + "\n"

    def pipeline(self, frame_rate=None, mode=None) -> PipelineConfig:
        v = self.values
        return PipelineConfig(
            tau_s=v["pipeline.tau_s"], tau_a=v["pipeline.tau_a"], tau_o=v["pipeline.tau_o"],
            tau_d=v["pipeline.tau_d"], overlap_window=v["pipeline.overlap_window"],
            tracklet_len=v["pipeline.tracklet_len"], gallery_size=v["pipeline.gallery_size"],
            frame_rate=frame_rate if frame_rate is not None else v["pipeline.frame_rate"],
            k_factor=v["pipeline.k_factor"], init_factor=v["pipeline.init_factor"],
            term_factor=v["pipeline.term_factor"], mode=mode or v["run.mode"], threads=v["run.threads"])

    def tracker(self) -> TrackerConfig:
        from .features import ColorNameTable, prototype_color_table

        v = self.values
        table_src = v["features.cn_table"]
        if table_src == "prototype":
            table = prototype_color_table()
        elif table_src in ("", "none"):
            table = None
        else:
            table = ColorNameTable.load(table_src)
        feats = FeatureConfig(hog_cell=v["features.hog_cell"], cn_cell=v["features.cn_cell"],
                              nbins=v["features.hog_bins"], soft_cells=v["features.soft_cells"], table=table)
        step = v["tracker.scale_step"]
        return TrackerConfig(
            search_scale=v["tracker.search_scale"], scales=(1.0 - step, 1.0, 1.0 + step),
            scale_penalty=v["tracker.scale_penalty"], memory_size=v["tracker.memory_size"],
            learning_rate=v["tracker.learning_rate"], w_min=v["filter.w_min"], eta=v["filter.eta"],
            cg_init_iter=v["filter.cg_init_iter"], cg_update_iter=v["filter.cg_update_iter"],
            cg_tol=v["filter.cg_tol"], cost_sensitive=v["tracker.cost_sensitive"],
            upsample=v["tracker.upsample"], features=feats)


def load_config(path=None, overrides=()) -> RunConfig:
    """Defaults, then the config file (explicit path or ``$DMOT_CONFIG``), then overrides."""
    cfg = RunConfig()
    path = path or os.environ.get(ENV_VAR) or None
    if path:
        if not os.path.isfile(path):
            raise InvalidArgument(f"config file {path} not found")
        with open(path) as fh:
            for k, val in parse_kv(fh.read(), path).items():
                cfg.set(k, val)
        cfg.source = path
    for item in overrides:
        key, sep, val = item.partition("=")
        if not sep:
            raise InvalidArgument(f"override {item!r} is not key=value")
        cfg.set(key.strip(), val.strip())
    return cfg
