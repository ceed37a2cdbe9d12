"""Flat key-value run configuration.

A config file is a JSON object whose keys are dotted names such as
``attack.lambda1`` or ``maxot.steps``.  Unknown keys are rejected; every
command writes the fully resolved mapping next to its outputs as
``config.resolved.json`` so a run can be repeated from that file alone.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .attack import AttackConfig
from .classifier import TrainConfig
from .maxot import MaxOTConfig
from .mesh import ShapeSpec
from .metrics import Defense
from .transforms import TransformSpace

DEFAULT_TEMPLATES = [
    {"name": "sphere", "kind": "icosphere", "params": {"radius_range": [0.8, 1.2]}, "jitter": 0.02},
    {"name": "box", "kind": "box", "params": {}, "jitter": 0.02},
    {"name": "torus", "kind": "torus", "params": {"minor_radius_range": [0.25, 0.45]}, "jitter": 0.02},
    {"name": "cylinder", "kind": "capped-cylinder", "params": {"height_range": [1.0, 2.0]}, "jitter": 0.02},
]

PI = float(np.pi)

DEFAULTS: dict = {
    "seed": 0,
    "out": "out",
    "jobs": 1,
    # gen-data
    "data.templates": DEFAULT_TEMPLATES,
    "data.per_class": 50,
    "data.split": 0.8,
    "data.dir": None,
    # train
    "train.epochs": 30,
    "train.batch_size": 16,
    "train.learning_rate": 1e-3,
    "train.points": 1024,
    "model.path": None,
    "train.num_classes": None,
    # attack
    "attack.mode": "plain",
    "attack.iterations": 250,
    "attack.lr": 0.01,
    "attack.beta1": 0.9,
    "attack.beta2": 0.999,
    "attack.eps": 1e-8,
    "attack.lambda1": 1.0,
    "attack.lambda2": 0.2,
    "attack.lambda3": 0.8,
    "attack.beta_init": 1500.0,
    "attack.search_steps": 10,
    "attack.beta_min": 1.0,
    "attack.beta_max": 1e6,
    "attack.points": 1024,
    "attack.success_resamples": 8,
    "attack.success_transforms": 16,
    "attack.success_threshold": 0.5,
    "attack.check_every": 25,
    "attack.eot_draws": 5,
    "attack.area": "barycentric",
    "attack.edge_delta": False,
    "attack.target_policy": None,
    "attack.targets": None,
    "attack.instances": None,
    "attack.split": "test",
    "attack.correct_only": True,
    # transformation box
    "transform.rot_min": [-PI, -PI, -PI],
    "transform.rot_max": [PI, PI, PI],
    "transform.scale_log_max": 0.0,
    "transform.trans_max": 0.0,
    "transform.cutout": 0.0,
    # inner maximisation
    "maxot.transforms": 5,
    "maxot.steps": 20,
    "maxot.step_size": 0.05,
    "maxot.candidates": 1024,
    "maxot.initial": None,
    "maxot.research_period": 1,
    "maxot.reset_threshold": 0.0,
    "maxot.length_scale": None,
    # eval
    "eval.results": None,
    "eval.compare": None,
    "eval.resamples": 8,
    "eval.threshold": 0.5,
    "eval.transforms": False,
    "eval.defenses": ["srs", "sor"],
    "defense.srs_keep": 512,
    "defense.sor_k": 2,
    "defense.sor_alpha": 1.1,
    # curvature
    "curvature.area": "barycentric",
}


class ConfigError(ValueError):
    pass


class RunConfig(dict):
    """Resolved configuration: defaults overlaid by a file and then by overrides."""

    @classmethod
    def load(cls, path=None, overrides: dict | None = None) -> "RunConfig":
        cfg = cls(DEFAULTS)
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise ConfigError(f"config file not found: {path}")
            try:
                doc = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc})") from None
            if not isinstance(doc, dict):
                raise ConfigError(f"{path}: expected a JSON object of key-value pairs")
            cfg.update_checked(doc)
        cfg.update_checked(overrides or {})
        return cfg

    def update_checked(self, values: dict):
        unknown = sorted(set(values) - set(DEFAULTS))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        self.update(values)

    def snapshot(self, out_dir) -> Path:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / "config.resolved.json"
        path.write_text(json.dumps(dict(sorted(self.items())), indent=2) + "\n")
        return path

    # -- typed views ------------------------------------------------------

    def _get(self, key, kind):
        value = self[key]
        try:
            return kind(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected {kind.__name__}, got {value!r}") from None

    def templates(self) -> tuple[list[ShapeSpec], list[str]]:
        specs, names = [], []
        for i, t in enumerate(self["data.templates"]):
            if not isinstance(t, dict) or "kind" not in t:
                raise ConfigError(f"data.templates[{i}]: needs a 'kind'")
            params = {k: tuple(v) if isinstance(v, list) else v for k, v in t.get("params", {}).items()}
            specs.append(ShapeSpec(t["kind"], params, float(t.get("jitter", 0.0))))
            names.append(t.get("name", t["kind"]))
        return specs, names

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self._get("train.epochs", int), batch_size=self._get("train.batch_size", int),
                           learning_rate=self._get("train.learning_rate", float), seed=self._get("seed", int),
                           points=self._get("train.points", int))

    def space(self) -> TransformSpace:
        return TransformSpace.from_config(self["transform.rot_min"], self["transform.rot_max"],
                                          self._get("transform.scale_log_max", float),
                                          self._get("transform.trans_max", float),
                                          self._get("transform.cutout", float))

    def maxot_config(self) -> MaxOTConfig:
        ls = self["maxot.length_scale"]
        n0 = self["maxot.initial"]
        return MaxOTConfig(n_transforms=self._get("maxot.transforms", int), steps=self._get("maxot.steps", int),
                           step_size=self._get("maxot.step_size", float),
                           n_candidates=self._get("maxot.candidates", int),
                           n_initial=None if n0 is None else int(n0),
                           research_period=self._get("maxot.research_period", int),
                           reset_threshold=self._get("maxot.reset_threshold", float),
                           length_scale=None if ls is None else float(ls))

    def attack_config(self) -> AttackConfig:
        g = self._get
        return AttackConfig(
            iterations=g("attack.iterations", int), lr=g("attack.lr", float), beta1=g("attack.beta1", float),
            beta2=g("attack.beta2", float), eps=g("attack.eps", float), lambda1=g("attack.lambda1", float),
            lambda2=g("attack.lambda2", float), lambda3=g("attack.lambda3", float),
            beta_init=g("attack.beta_init", float), search_steps=g("attack.search_steps", int),
            beta_min=g("attack.beta_min", float), beta_max=g("attack.beta_max", float), mode=self["attack.mode"],
            n_points=g("attack.points", int), success_resamples=g("attack.success_resamples", int),
            success_transforms=g("attack.success_transforms", int),
            success_threshold=g("attack.success_threshold", float), check_every=g("attack.check_every", int),
            eot_draws=g("attack.eot_draws", int), area=self["attack.area"],
            edge_delta=bool(self["attack.edge_delta"]), maxot=self.maxot_config(), space=self.space(),
            seed=g("seed", int))

    def defenses(self) -> list[Defense]:
        out = []
        for name in self["eval.defenses"] or []:
            if name == "srs":
                out.append(Defense("srs", keep=self._get("defense.srs_keep", int)))
            elif name == "sor":
                out.append(Defense("sor", k=self._get("defense.sor_k", int),
                                   alpha=self._get("defense.sor_alpha", float)))
            else:
                raise ConfigError(f"eval.defenses: unknown defense {name!r}")
        return out
