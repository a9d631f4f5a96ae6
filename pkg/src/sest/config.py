"""Flat ``key = value`` configuration with a typed key registry.

Keys are dotted (``sim.c_pos``, ``model.bins``, ``train.lr``). Unknown keys
and values that fail type conversion are rejected.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping

from ._atomic import atomic_write
from .errors import ConfigError
from .esim import SimConfig
from .losses import LossWeights
from .model import BIN_MENU, ModelConfig, StageConfig, _toy_stages
from .training import TrainConfig

NUCF_BIN_MS = 100.0
DHF1K_BIN_MS = 100.0 / 3.0


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(v) for v in s.split(",") if v.strip())


def _choice(*options: str) -> Callable[[str], str]:
    def parse(s: str) -> str:
        v = s.strip()
        if v not in options:
            raise ValueError(f"expected one of {options}, got {v!r}")
        return v

    return parse


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(i) for i in v)
    return repr(v) if isinstance(v, float) else str(v)


_st = _toy_stages()
_sim = SimConfig()
_model = ModelConfig()
_train = TrainConfig()
_loss = LossWeights()

# key -> (parser, default)
REGISTRY: dict[str, tuple[Callable[[str], Any], Any]] = {
    "sim.c_pos": (float, _sim.c_pos),
    "sim.c_neg": (float, _sim.c_neg),
    "sim.refractory_us": (int, _sim.refractory),
    "sim.log_eps": (float, _sim.log_eps),
    "sim.fps": (float, 1000.0 / NUCF_BIN_MS),
    "voxel.bin_ms": (float, NUCF_BIN_MS),
    "voxel.origin_us": (int, 0),
    "model.height": (int, _model.height),
    "model.width": (int, _model.width),
    "model.bins": (int, _model.bins),
    "model.fusion_depth": (int, _model.fusion_depth),
    "model.channels": (_ints, tuple(s.channels for s in _st)),
    "model.depths": (_ints, tuple(s.depth for s in _st)),
    "model.heads": (_ints, tuple(s.heads for s in _st)),
    "model.window": (int, _st[0].window),
    "model.mlp_ratio": (int, _model.mlp_ratio),
    "model.blur_sigma": (float, _model.blur_sigma),
    "model.blur_radius": (int, _model.blur_radius),
    "model.center_bias": (_bool, _model.center_bias),
    "model.decoder": (_choice("conv3d", "conv2d"), _model.decoder),
    "model.leaky_slope": (float, _model.leaky_slope),
    "model.bn_momentum": (float, _model.bn_momentum),
    "train.lr": (float, _train.lr),
    "train.batch_size": (int, _train.batch_size),
    "train.max_epochs": (int, _train.max_epochs),
    "train.early_stop_patience": (int, _train.early_stop_patience),
    "train.plateau_patience": (int, _train.plateau_patience),
    "train.plateau_factor": (float, _train.plateau_factor),
    "train.seed": (int, _train.seed),
    "train.weight_decay": (float, _train.weight_decay),
    "train.beta1": (float, _train.beta1),
    "train.beta2": (float, _train.beta2),
    "train.adam_eps": (float, _train.adam_eps),
    "train.min_delta": (float, _train.min_delta),
    "loss.alpha1": (float, _loss.alpha1),
    "loss.alpha2": (float, _loss.alpha2),
    "loss.eps": (float, _loss.eps),
    "gradcheck.h": (float, 1e-5),
    "gradcheck.tol": (float, 1e-4),
    "gradcheck.per_param": (int, 2),
    "synth.samples": (int, 4),
    "synth.frames_per_bin": (int, 4),
}


@dataclass
class Config:
    values: dict[str, Any]

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def section(self, prefix: str) -> dict[str, Any]:
        p = prefix.rstrip(".") + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    @property
    def bin_us(self) -> int:
        return int(round(self.values["voxel.bin_ms"] * 1000.0))

    def dumps(self, prefixes: Iterable[str] = ()) -> str:
        prefixes = tuple(p.rstrip(".") + "." for p in prefixes)
        lines = [
            f"{k} = {_fmt(v)}"
            for k, v in self.values.items()
            if not prefixes or k.startswith(prefixes)
        ]
        return "\n".join(lines) + "\n"

    def save(self, path, prefixes: Iterable[str] = ()) -> None:
        atomic_write(path, self.dumps(prefixes))


def defaults() -> Config:
    return Config({k: v for k, (_, v) in REGISTRY.items()})


def _set(values: dict[str, Any], key: str, raw: str, where: str) -> None:
    if key not in REGISTRY:
        raise ConfigError(f"{where}: unknown key {key!r}")
    parse = REGISTRY[key][0]
    try:
        values[key] = parse(raw.strip())
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def parse(text: str, base: Config | None = None, source: str = "<config>") -> Config:
    values = dict((base or defaults()).values)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        _set(values, key.strip(), val, f"{source}:{lineno}")
    return Config(values)


def load(path: str | os.PathLike | None, overrides: Mapping[str, str] | None = None) -> Config:
    cfg = defaults()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            cfg = parse(fh.read(), cfg, os.fspath(path))
    if overrides:
        values = dict(cfg.values)
        for k, v in overrides.items():
            _set(values, k, str(v), "override")
        cfg = Config(values)
    return cfg


def sim_config(cfg: Config) -> SimConfig:
    s = cfg.section("sim")
    return SimConfig(s["c_pos"], s["c_neg"], s["refractory_us"], s["log_eps"])


def model_config(cfg: Config) -> ModelConfig:
    m = cfg.section("model")
    chans, depths, heads = m["channels"], m["depths"], m["heads"]
    if not len(chans) == len(depths) == len(heads) == 4:
        raise ConfigError("model.channels, model.depths and model.heads need 4 entries each")
    downs = (4, 2, 2, 2)
    stages = tuple(StageConfig(d, c, ds, m["window"], h) for d, c, ds, h in zip(depths, chans, downs, heads))
    return ModelConfig(
        height=m["height"],
        width=m["width"],
        bins=m["bins"],
        fusion_depth=m["fusion_depth"],
        stages=stages,
        mlp_ratio=m["mlp_ratio"],
        blur_sigma=m["blur_sigma"],
        blur_radius=m["blur_radius"],
        center_bias=m["center_bias"],
        decoder=m["decoder"],
        leaky_slope=m["leaky_slope"],
        bn_momentum=m["bn_momentum"],
    )


def train_config(cfg: Config) -> TrainConfig:
    return TrainConfig(**cfg.section("train"))


def loss_weights(cfg: Config) -> LossWeights:
    return LossWeights(**cfg.section("loss"))


__all__ = [
    "BIN_MENU",
    "Config",
    "DHF1K_BIN_MS",
    "NUCF_BIN_MS",
    "REGISTRY",
    "defaults",
    "load",
    "loss_weights",
    "model_config",
    "parse",
    "sim_config",
    "train_config",
]
