"""Plain-text ``key = value`` run configuration.

Lines starting with ``#`` or ``;`` are comments. List values are comma
separated. Unknown keys are rejected.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields
from pathlib import Path

from .learners import ForestParams
from .pipeline import AGGREGATIONS, PipelineConfig
from .saab import KeepPolicy


class ConfigError(ValueError):
    pass


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


@dataclass
class RunConfig:
    num_layers: int = 4
    points_per_layer: tuple[int, ...] = ()
    k_encoder: tuple[int, ...] = (32,)
    k_decoder: tuple[int, ...] = (8,)
    encoder_energy: float = 0.999
    encoder_max_dims: tuple[int, ...] = (16, 32, 48, 64)
    decoder_energy: float = 0.999
    decoder_max_dims: tuple[int, ...] = (48, 32, 24)
    aggregations: tuple[str, ...] = AGGREGATIONS
    normalize: str = "sphere"
    fit_max_clouds: int = 0  # 0: fit on every cloud of the split
    seed: int = 0
    lsq_ridge: float = 1e-6
    rf_trees: int = 100
    rf_max_features: int = 0  # 0: ceil(sqrt(D))
    rf_min_leaf: int = 1
    seg_rf_trees: int = 30
    seg_points_per_shape: int = 0  # 0: train on every point
    train_fraction: float = 1.0

    @classmethod
    def parse(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(comment_prefixes=("#", ";"), inline_comment_prefixes=("#",))
        parser.optionxform = str
        try:
            parser.read_string("[run]\n" + text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        known = {f.name: f for f in fields(cls)}
        values = {}
        for key, raw in parser["run"].items():
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            default = known[key].default
            try:
                if isinstance(default, tuple):
                    values[key] = tuple(v.strip() for v in raw.split(",")) if key == "aggregations" else _ints(raw)
                else:
                    values[key] = type(default)(raw.strip())
            except ValueError:
                raise ConfigError(f"invalid value for {key}: {raw!r}") from None
        cfg = cls(**values)
        cfg.pipeline()  # validate early
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.parse(Path(path).read_text())

    def items(self) -> list[tuple[str, str]]:
        out = []
        for f in fields(self):
            value = getattr(self, f.name)
            out.append((f.name, ",".join(map(str, value)) if isinstance(value, tuple) else str(value)))
        return out

    def dumps(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.items())

    def pipeline(self) -> PipelineConfig:
        L = self.num_layers

        def per(values, n, name):
            if len(values) == 1:
                return values * n
            if len(values) < n:
                raise ConfigError(f"{name} needs 1 or {n} values, got {len(values)}")
            return values[:n]

        try:
            return PipelineConfig(
                num_layers=L,
                points_per_layer=self.points_per_layer,
                k_encoder=per(self.k_encoder, L, "k_encoder"),
                k_decoder=per(self.k_decoder, L - 1, "k_decoder") if L > 1 else (),
                encoder_keep=tuple(
                    KeepPolicy(energy=self.encoder_energy, max_dim=m)
                    for m in per(self.encoder_max_dims, L, "encoder_max_dims")
                ),
                decoder_keep=tuple(
                    KeepPolicy(energy=self.decoder_energy, max_dim=m)
                    for m in per(self.decoder_max_dims, L - 1, "decoder_max_dims")
                )
                if L > 1
                else (),
                aggregations=self.aggregations,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def forest_params(self, trees: int | None = None) -> ForestParams:
        return ForestParams(
            n_trees=trees or self.rf_trees,
            max_features=self.rf_max_features or None,
            min_leaf=self.rf_min_leaf,
        )
