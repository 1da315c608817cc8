"""
Experiment configuration: one YAML file, validated up front.

Top-level keys: ``seed`` (required), ``model``, ``data``, ``training``,
``evaluation``, ``fusion``, ``bench``, ``gradcheck``.  See
``configs/default.yaml`` for a fully commented example.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .bayes import AlphaPolicy
from .data import DatasetSchema
from .fusion import COMPOSED, LATENT, FusionWeights
from .models import CategoricalField, FeatureSchema, ModelConfig, ModelKind
from .nn import MlpSpec
from .synth import GeneratorConfig
from .train import TrainConfig


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        self.key = key
        super().__init__(f"config key {key!r}: {message}")


_SECTIONS = {"seed", "model", "data", "training", "evaluation", "fusion", "bench", "gradcheck"}
_MODEL_KEYS = {"kind", "n_shared_experts", "n_task_experts", "expert_widths", "tower_widths",
               "hidden_state_widths", "hidden_state_input", "embedding_dim", "alpha",
               "prior_bias_init"}
_DATA_KEYS = {"generator", "train_file", "sidecar_file", "schema"}
_TRAIN_KEYS = {"epochs", "batch_size", "optimizer", "learning_rate", "task_weights"}
_EVAL_KEYS = {"split_salt", "eval_fraction", "tasks", "latent_metrics"}
_FUSION_KEYS = {"task_weights", "gamma", "mode", "k", "set_size"}
_BENCH_KEYS = {"seeds", "models"}
_GRADCHECK_KEYS = {"n_seeds", "batch_size", "tolerance"}
_GEN_KEYS = set(GeneratorConfig.__dataclass_fields__) - {"seed"}


@dataclass
class EvalSettings:
    split_salt: int = 17
    eval_fraction: float = 0.1
    tasks: tuple[str, ...] = ()
    latent_metrics: bool = True


@dataclass
class FusionSettings:
    weights: FusionWeights
    k: int = 10
    set_size: int = 50


@dataclass
class ExperimentConfig:
    seed: int
    tasks: tuple[str, ...]
    model: dict[str, Any]
    generator: GeneratorConfig | None
    schema: DatasetSchema
    train_file: Path | None
    sidecar_file: Path | None
    training: TrainConfig
    evaluation: EvalSettings
    fusion: FusionSettings
    bench_seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    bench_models: tuple[str, ...] = ("MMOE", "CGC", "DLEN")
    gradcheck: dict[str, Any] = field(default_factory=dict)
    sha256: str = ""
    source: Path | None = None

    def model_config(self, base_rates: dict[str, float] | None = None, kind: str | None = None,
                     **overrides) -> ModelConfig:
        m = dict(self.model)
        m.update(overrides)
        dim = int(m.get("embedding_dim", 8))
        fs = FeatureSchema(tuple(CategoricalField(n, v, dim) for n, v in self.schema.categorical),
                           self.schema.numeric)
        alpha = m.get("alpha") or {}
        if alpha.get("mode", "rate_scaled") == "fixed":
            policy = AlphaPolicy.fixed(alpha.get("alphas", {}))
        else:
            policy = AlphaPolicy.rate_scaled(float(alpha.get("multiplier", 0.5)), base_rates or {})
        return ModelConfig(
            kind=ModelKind(kind or m.get("kind", "DLEN")),
            task_names=self.tasks,
            schema=fs,
            n_shared_experts=int(m.get("n_shared_experts", 5)),
            n_task_experts=int(m.get("n_task_experts", 2)),
            expert_spec=MlpSpec(tuple(m.get("expert_widths", (256, 128, 64)))),
            tower_spec=MlpSpec(tuple(m.get("tower_widths", (32,)))),
            hidden_state_spec=MlpSpec(tuple(m.get("hidden_state_widths", (256, 128, 64)))),
            alpha_policy=policy,
            hidden_state_input=m.get("hidden_state_input", "experts"),
            task_priors=dict(base_rates) if base_rates and m.get("prior_bias_init", True) else None,
        )


def _mapping(raw, key: str) -> dict:
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(key, "expected a mapping")
    return raw


def _check_keys(section: dict, allowed: set, prefix: str) -> None:
    for k in section:
        if k not in allowed:
            raise ConfigError(f"{prefix}.{k}" if prefix else k, "unknown key")


def _typed(section: dict, key: str, kind, prefix: str, default=None):
    if key not in section:
        return default
    v = section[key]
    try:
        if kind is bool:
            if not isinstance(v, bool):
                raise TypeError
            return v
        if kind is int and (isinstance(v, bool) or float(v) != int(v)):
            raise TypeError
        return kind(v)
    except (TypeError, ValueError):
        raise ConfigError(f"{prefix}.{key}", f"expected {kind.__name__}, got {v!r}") from None


def _widths(section: dict, key: str, prefix: str):
    if key not in section:
        return
    v = section[key]
    if not isinstance(v, list) or not v or not all(isinstance(w, int) and w > 0 for w in v):
        raise ConfigError(f"{prefix}.{key}", "expected a non-empty list of positive integers")


def parse(raw: dict, base_dir: Path | None = None, sha256: str = "") -> ExperimentConfig:
    raw = _mapping(raw, "<root>")
    _check_keys(raw, _SECTIONS, "")
    if "seed" not in raw:
        raise ConfigError("seed", "required (no randomness is taken from the environment)")
    seed = _typed(raw, "seed", int, "")
    base_dir = base_dir or Path(".")

    model = _mapping(raw.get("model"), "model")
    _check_keys(model, _MODEL_KEYS, "model")
    kind = model.get("kind", "DLEN")
    if kind not in {k.value for k in ModelKind}:
        raise ConfigError("model.kind", f"must be one of MMOE, CGC, DLEN; got {kind!r}")
    for k in ("expert_widths", "tower_widths", "hidden_state_widths"):
        _widths(model, k, "model")
    for k in ("n_shared_experts", "n_task_experts", "embedding_dim"):
        v = _typed(model, k, int, "model")
        if v is not None and v < 0:
            raise ConfigError(f"model.{k}", "must be non-negative")
    _typed(model, "prior_bias_init", bool, "model")
    alpha = _mapping(model.get("alpha"), "model.alpha")
    _check_keys(alpha, {"mode", "multiplier", "alphas"}, "model.alpha")
    if alpha.get("mode", "rate_scaled") not in ("rate_scaled", "fixed"):
        raise ConfigError("model.alpha.mode", "must be 'rate_scaled' or 'fixed'")
    mult = _typed(alpha, "multiplier", float, "model.alpha")
    if mult is not None and not 0.1 <= mult <= 0.5:
        raise ConfigError("model.alpha.multiplier", "must lie in [0.1, 0.5]")
    if model.get("hidden_state_input", "experts") not in ("experts", "embedding"):
        raise ConfigError("model.hidden_state_input", "must be 'experts' or 'embedding'")

    data = _mapping(raw.get("data"), "data")
    _check_keys(data, _DATA_KEYS, "data")
    generator = None
    if "generator" in data:
        gen = _mapping(data["generator"], "data.generator")
        _check_keys(gen, _GEN_KEYS, "data.generator")
        try:
            generator = GeneratorConfig(**gen, seed=seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError("data.generator", str(exc)) from None
    if "schema" in data:
        sch = _mapping(data["schema"], "data.schema")
        _check_keys(sch, {"tasks", "categorical", "numeric"}, "data.schema")
        cats = _mapping(sch.get("categorical"), "data.schema.categorical")
        try:
            schema = DatasetSchema(tuple(sch.get("tasks", ())),
                                   tuple((str(k), int(v)) for k, v in cats.items()),
                                   tuple(sch.get("numeric", ())))
        except (TypeError, ValueError) as exc:
            raise ConfigError("data.schema", str(exc)) from None
    elif generator is not None:
        schema = generator.dataset_schema()
    else:
        raise ConfigError("data", "need either data.generator or data.schema")
    if not schema.tasks:
        raise ConfigError("data.schema.tasks", "at least one task required")
    resolve = lambda p: (base_dir / p) if p is not None else None  # noqa: E731
    train_file = resolve(data.get("train_file"))
    sidecar_file = resolve(data.get("sidecar_file"))

    tr = _mapping(raw.get("training"), "training")
    _check_keys(tr, _TRAIN_KEYS, "training")
    training = TrainConfig(
        epochs=_typed(tr, "epochs", int, "training", 5),
        batch_size=_typed(tr, "batch_size", int, "training", 512),
        optimizer=str(tr.get("optimizer", "adam")).lower(),
        learning_rate=_typed(tr, "learning_rate", float, "training", 3e-3),
        seed=seed,
        task_weights=_mapping(tr.get("task_weights"), "training.task_weights") or None,
    )
    if training.optimizer not in ("adam", "sgd"):
        raise ConfigError("training.optimizer", "must be 'adam' or 'sgd'")
    if training.epochs < 0 or training.batch_size < 1 or training.learning_rate <= 0:
        raise ConfigError("training", "epochs >= 0, batch_size >= 1, learning_rate > 0 required")

    ev = _mapping(raw.get("evaluation"), "evaluation")
    _check_keys(ev, _EVAL_KEYS, "evaluation")
    evaluation = EvalSettings(
        split_salt=_typed(ev, "split_salt", int, "evaluation", 17),
        eval_fraction=_typed(ev, "eval_fraction", float, "evaluation", 0.1),
        tasks=tuple(ev.get("tasks", schema.tasks)),
        latent_metrics=_typed(ev, "latent_metrics", bool, "evaluation", True),
    )

    fu = _mapping(raw.get("fusion"), "fusion")
    _check_keys(fu, _FUSION_KEYS, "fusion")
    tw = _mapping(fu.get("task_weights"), "fusion.task_weights") or {t: 1.0 for t in schema.tasks}
    try:
        weights = FusionWeights({str(k): float(v) for k, v in tw.items()},
                                gamma=_typed(fu, "gamma", float, "fusion", 1.0),
                                mode=fu.get("mode", LATENT))
    except ValueError as exc:
        raise ConfigError("fusion", str(exc)) from None
    fusion = FusionSettings(weights, _typed(fu, "k", int, "fusion", 10),
                            _typed(fu, "set_size", int, "fusion", 50))
    if not 0 <= fusion.k <= fusion.set_size:
        raise ConfigError("fusion.k", "must satisfy 0 <= k <= set_size")

    be = _mapping(raw.get("bench"), "bench")
    _check_keys(be, _BENCH_KEYS, "bench")
    seeds = tuple(int(s) for s in be.get("seeds", (0, 1, 2, 3, 4)))
    models = tuple(be.get("models", ("MMOE", "CGC", "DLEN")))
    for m in models:
        if m not in {k.value for k in ModelKind}:
            raise ConfigError("bench.models", f"unknown model {m!r}")

    gc = _mapping(raw.get("gradcheck"), "gradcheck")
    _check_keys(gc, _GRADCHECK_KEYS, "gradcheck")
    if _typed(gc, "batch_size", int, "gradcheck", 16) > 32:
        raise ConfigError("gradcheck.batch_size", "must be <= 32")

    tasks = schema.tasks
    for name, names in (("evaluation.tasks", evaluation.tasks),
                        ("fusion.task_weights", tuple(weights.task_weights)),
                        ("training.task_weights", tuple(training.task_weights or ()))):
        for t in names:
            if t not in tasks:
                raise ConfigError(name, f"task {t!r} is not in the dataset tasks {list(tasks)}")
    if "alphas" in alpha:
        for t in alpha["alphas"]:
            if t not in tasks:
                raise ConfigError("model.alpha.alphas", f"task {t!r} is not a dataset task")
        if alpha.get("mode") == "fixed" and set(alpha["alphas"]) != set(tasks):
            raise ConfigError("model.alpha.alphas", "fixed mode needs an alpha for every task")

    return ExperimentConfig(seed, tasks, model, generator, schema, train_file, sidecar_file,
                            training, evaluation, fusion, seeds, models, gc, sha256)


def load(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_bytes()
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    cfg = parse(raw, base_dir=path.parent, sha256=hashlib.sha256(text).hexdigest())
    cfg.source = path
    return cfg
