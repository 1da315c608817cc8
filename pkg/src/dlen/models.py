"""
MMOE, CGC (single-level PLE) and DLEN on top of :mod:`dlen.nn`.

All three share one parameter-naming scheme so that identical seeds give
identical values for identically named parameters across architectures:

    embed.<field>                       embedding tables
    expert.shared.<e>.<layer>.{W,b}     shared experts
    expert.<task>.<e>.<layer>.{W,b}     task-specific experts (CGC)
    gate.<task>.{W,b}                   per-task softmax gates
    gate.latent.{W,b}                   DLEN hidden-state gate
    latent.<layer>.{W,b}, latent.head   DLEN hidden-state network
    tower.<task>.<layer>.{W,b}          tower trunk
    tower.<task>.head                   P(t) (MMOE/CGC) or P(t|UP) (DLEN)
    tower.<task>.head_not_up            P(t|not UP) before alpha scaling (DLEN)

Each parameter is initialised from its own random stream keyed by
``(seed, name)``.
"""

from __future__ import annotations

import enum
import zlib
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from . import nn
from .bayes import AlphaPolicy, DecomposedPrediction, alpha_for_task
from .nn import MlpSpec, Parameter, Tensor


class ModelKind(str, enum.Enum):
    MMOE = "MMOE"
    CGC = "CGC"
    DLEN = "DLEN"


class CategoricalField(NamedTuple):
    name: str
    vocab_size: int
    embedding_dim: int


@dataclass(frozen=True)
class FeatureSchema:
    categorical: tuple[CategoricalField, ...] = ()
    numeric: tuple[str, ...] = ()

    def __post_init__(self):
        cats = tuple(CategoricalField(*c) for c in self.categorical)
        object.__setattr__(self, "categorical", cats)
        object.__setattr__(self, "numeric", tuple(self.numeric))
        names = [c.name for c in cats] + list(self.numeric)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate feature names in {names}")
        for c in cats:
            if c.vocab_size < 1 or c.embedding_dim < 1:
                raise ValueError(f"field {c.name!r}: vocab_size and embedding_dim must be >= 1")

    @property
    def input_dim(self) -> int:
        return sum(c.embedding_dim for c in self.categorical) + len(self.numeric)


class OutOfVocabularyError(ValueError):
    def __init__(self, field: str, value: int, vocab_size: int):
        self.field, self.value = field, value
        super().__init__(f"field {field!r}: id {value} outside vocabulary of size {vocab_size}")


def embed(cat_ids: np.ndarray, numeric: np.ndarray, schema: FeatureSchema,
          tables: dict[str, Tensor]) -> Tensor:
    """Concatenate embedding rows then raw numeric values, in declaration order.

    ``cat_ids`` has shape (batch, n_categorical) and ``numeric`` (batch,
    n_numeric); a 1-d row is treated as a batch of one.
    """
    cat_ids = np.atleast_2d(np.asarray(cat_ids, dtype=np.int64))
    numeric = np.asarray(numeric, dtype=np.float32)
    if numeric.ndim == 1:
        numeric = numeric.reshape(1, -1) if numeric.size else np.zeros((cat_ids.shape[0], 0), np.float32)
    blocks = []
    for j, f in enumerate(schema.categorical):
        ids = cat_ids[:, j]
        bad = (ids < 0) | (ids >= f.vocab_size)
        if bad.any():
            raise OutOfVocabularyError(f.name, int(ids[bad][0]), f.vocab_size)
        blocks.append(nn.take_rows(tables[f"embed.{f.name}"], ids))
    if schema.numeric:
        if numeric.shape[1] != len(schema.numeric):
            raise nn.ShapeError("embed numeric", numeric.shape, (numeric.shape[0], len(schema.numeric)))
        dtype = blocks[0].dtype if blocks else np.float32
        blocks.append(Tensor(numeric.astype(dtype, copy=False)))
    if not blocks:
        raise ValueError("feature schema is empty")
    return blocks[0] if len(blocks) == 1 else nn.concat(blocks, axis=1)


@dataclass
class ModelConfig:
    kind: ModelKind
    task_names: tuple[str, ...]
    schema: FeatureSchema
    n_shared_experts: int = 5
    n_task_experts: int = 2
    expert_spec: MlpSpec = field(default_factory=MlpSpec)
    tower_spec: MlpSpec = field(default_factory=lambda: MlpSpec((32,)))
    hidden_state_spec: MlpSpec | None = None
    alpha_policy: AlphaPolicy | None = None
    hidden_state_input: str = "experts"
    embedding_init_std: float = 0.1
    # task -> training positive rate; output-head biases start at its log-odds
    task_priors: Mapping[str, float] | None = None

    def __post_init__(self):
        self.kind = ModelKind(self.kind)
        self.task_names = tuple(self.task_names)
        if not self.task_names:
            raise ValueError("need at least one task")
        if len(set(self.task_names)) != len(self.task_names):
            raise ValueError(f"duplicate task names {self.task_names}")
        if self.n_shared_experts < (1 if self.kind != ModelKind.CGC else 0):
            raise ValueError("n_shared_experts must be >= 1")
        if self.kind == ModelKind.CGC and self.n_shared_experts + self.n_task_experts < 1:
            raise ValueError("CGC needs at least one expert per gate")
        if self.kind == ModelKind.DLEN:
            if self.hidden_state_spec is None:
                self.hidden_state_spec = MlpSpec()
            if self.alpha_policy is None:
                raise ValueError("DLEN requires an alpha_policy")
            if self.hidden_state_input not in ("experts", "embedding"):
                raise ValueError(f"hidden_state_input must be 'experts' or 'embedding'")

    @property
    def n_tasks(self) -> int:
        return len(self.task_names)


def _stream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


def _layer_shapes(prefix: str, in_w: int, spec: MlpSpec):
    prev = in_w
    for i, w in enumerate(spec.layer_widths):
        yield f"{prefix}.{i}", prev, w
        prev = w


class MultiTaskModel:
    """Parameters plus wiring for one of the three architectures."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.params: dict[str, Parameter] = {}
        self.alphas: dict[str, float] = {}
        self._build()

    # -- construction --------------------------------------------------
    def _hidden(self, prefix: str, fan_in: int, fan_out: int):
        rng = _stream(self.seed, prefix + ".W")
        w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        self._add(prefix + ".W", w)
        self._add(prefix + ".b", np.zeros(fan_out))

    def _head(self, prefix: str, fan_in: int, fan_out: int = 1):
        rng = _stream(self.seed, prefix + ".W")
        self._add(prefix + ".W", rng.normal(0.0, 0.01, size=(fan_in, fan_out)))
        self._add(prefix + ".b", np.zeros(fan_out))

    def _add(self, name: str, value: np.ndarray):
        if name in self.params:
            raise ValueError(f"duplicate parameter {name}")
        self.params[name] = Parameter(np.asarray(value, dtype=np.float32), name)

    def _mlp(self, prefix: str, in_w: int, spec: MlpSpec):
        for name, i, o in _layer_shapes(prefix, in_w, spec):
            self._hidden(name, i, o)

    def _build(self):
        cfg = self.config
        for f in cfg.schema.categorical:
            rng = _stream(self.seed, f"embed.{f.name}")
            self._add(f"embed.{f.name}",
                      rng.normal(0.0, cfg.embedding_init_std, size=(f.vocab_size, f.embedding_dim)))
        d_in = cfg.schema.input_dim
        for e in range(cfg.n_shared_experts):
            self._mlp(f"expert.shared.{e}", d_in, cfg.expert_spec)
        if cfg.kind == ModelKind.CGC:
            for t in cfg.task_names:
                for e in range(cfg.n_task_experts):
                    self._mlp(f"expert.{t}.{e}", d_in, cfg.expert_spec)
        n_gate = self.gate_width
        width = cfg.expert_spec.out_width
        for t in cfg.task_names:
            self._head(f"gate.{t}", d_in, n_gate)
            self._mlp(f"tower.{t}", width, cfg.tower_spec)
            self._head(f"tower.{t}.head", cfg.tower_spec.out_width)
            if cfg.kind == ModelKind.DLEN:
                self._head(f"tower.{t}.head_not_up", cfg.tower_spec.out_width)
        if cfg.kind == ModelKind.DLEN:
            self.alphas = {t: alpha_for_task(cfg.alpha_policy, t) for t in cfg.task_names}
        if cfg.task_priors:
            self._set_prior_biases(cfg.task_priors)
        if cfg.kind == ModelKind.DLEN:
            if cfg.hidden_state_input == "experts":
                self._head("gate.latent", d_in, cfg.n_shared_experts)
                latent_in = width
            else:
                latent_in = d_in
            self._mlp("latent", latent_in, cfg.hidden_state_spec)
            self._head("latent.head", cfg.hidden_state_spec.out_width)

    def _set_prior_biases(self, priors: Mapping[str, float]):
        # Start every task's scored probability at its base rate.  Without
        # this a DLEN begins with composed P(t) near 0.25 and the quickest
        # loss reduction is saturating p_up at 0, from which it never returns.
        for t in self.config.task_names:
            if t not in priors:
                continue
            r = float(priors[t])
            if self.kind == ModelKind.DLEN:
                # at init p_up = 0.5 and the not-UP head sits at alpha / 2
                r = 2.0 * r - 0.5 * self.alphas[t]
            r = min(max(r, 1e-4), 1 - 1e-4)
            self.params[f"tower.{t}.head.b"].data[:] = np.log(r / (1 - r))

    # -- introspection -------------------------------------------------
    @property
    def gate_width(self) -> int:
        cfg = self.config
        if cfg.kind == ModelKind.CGC:
            return cfg.n_shared_experts + cfg.n_task_experts
        return cfg.n_shared_experts

    @property
    def kind(self) -> ModelKind:
        return self.config.kind

    @property
    def dtype(self):
        return next(iter(self.params.values())).dtype

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)} unexpected={sorted(extra)}")
        for k, p in self.params.items():
            if tuple(state[k].shape) != p.shape:
                raise ValueError(f"parameter {k}: shape {tuple(state[k].shape)} != {p.shape}")
            p.data = np.array(state[k], dtype=p.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- forward -------------------------------------------------------
    def embed(self, cat_ids, numeric) -> Tensor:
        return embed(cat_ids, numeric, self.config.schema, self.params)

    def forward(self, cat_ids, numeric):
        """Embed raw features and run the configured architecture."""
        x = self.embed(cat_ids, numeric)
        return forward(x, self)

    __call__ = forward


def _affine(x: Tensor, params: dict, prefix: str) -> Tensor:
    return nn.affine(x, params[prefix + ".W"], params[prefix + ".b"])


def _experts(x: Tensor, model: MultiTaskModel, group: str, n: int) -> list[Tensor]:
    n_layers = len(model.config.expert_spec.layer_widths)
    return [nn.mlp_forward(x, model.params, f"expert.{group}.{e}", n_layers) for e in range(n)]


def _gate_mix(x: Tensor, model: MultiTaskModel, gate: str, experts: Sequence[Tensor]) -> Tensor:
    weights = nn.softmax(_affine(x, model.params, f"gate.{gate}"))
    return nn.weighted_mix(weights, experts)


def _tower_trunk(mix: Tensor, model: MultiTaskModel, task: str) -> Tensor:
    return nn.mlp_forward(mix, model.params, f"tower.{task}", len(model.config.tower_spec.layer_widths))


def gated_towers(x: Tensor, model: MultiTaskModel) -> dict[str, Tensor]:
    cfg = model.config
    shared = _experts(x, model, "shared", cfg.n_shared_experts)
    out = {}
    for t in cfg.task_names:
        experts = shared
        if cfg.kind == ModelKind.CGC and cfg.n_task_experts:
            experts = shared + _experts(x, model, t, cfg.n_task_experts)
        trunk = _tower_trunk(_gate_mix(x, model, t, experts), model, t)
        out[t] = nn.sigmoid(_affine(trunk, model.params, f"tower.{t}.head")).reshape(-1)
    return out


def mmoe_forward(x: Tensor, model: MultiTaskModel) -> dict[str, Tensor]:
    if model.kind != ModelKind.MMOE:
        raise TypeError(f"mmoe_forward on a {model.kind.value} model")
    return gated_towers(x, model)


def cgc_forward(x: Tensor, model: MultiTaskModel) -> dict[str, Tensor]:
    if model.kind != ModelKind.CGC:
        raise TypeError(f"cgc_forward on a {model.kind.value} model")
    return gated_towers(x, model)


def dlen_forward(x: Tensor, model: MultiTaskModel) -> DecomposedPrediction:
    """Shared latent head plus a two-headed tower per task, mixed by total probability."""
    if model.kind != ModelKind.DLEN:
        raise TypeError(f"dlen_forward on a {model.kind.value} model")
    cfg, params = model.config, model.params
    shared = _experts(x, model, "shared", cfg.n_shared_experts)
    if cfg.hidden_state_input == "experts":
        latent_in = _gate_mix(x, model, "latent", shared)
    else:
        latent_in = x
    h = nn.mlp_forward(latent_in, params, "latent", len(cfg.hidden_state_spec.layer_widths))
    p_up = nn.sigmoid(_affine(h, params, "latent.head")).reshape(-1)
    p_given_up, p_given_not_up = {}, {}
    for t in cfg.task_names:
        trunk = _tower_trunk(_gate_mix(x, model, t, shared), model, t)
        p_given_up[t] = nn.sigmoid(_affine(trunk, params, f"tower.{t}.head")).reshape(-1)
        capped = nn.sigmoid(_affine(trunk, params, f"tower.{t}.head_not_up")).reshape(-1)
        p_given_not_up[t] = capped * model.alphas[t]
    return DecomposedPrediction.from_heads(p_up, p_given_up, p_given_not_up)


def forward(x: Tensor, model: MultiTaskModel):
    if model.kind == ModelKind.DLEN:
        return dlen_forward(x, model)
    return gated_towers(x, model)


def task_probabilities(output) -> dict:
    """The per-task probability each architecture is scored on."""
    if isinstance(output, DecomposedPrediction):
        return output.composed
    return output


def expected_parameter_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count for a configuration."""
    d_in = cfg.schema.input_dim
    emb = sum(c.vocab_size * c.embedding_dim for c in cfg.schema.categorical)
    expert = cfg.expert_spec.n_params(d_in)
    width = cfg.expert_spec.out_width
    n_experts = cfg.n_shared_experts
    gate_w = cfg.n_shared_experts
    if cfg.kind == ModelKind.CGC:
        n_experts += cfg.n_tasks * cfg.n_task_experts
        gate_w += cfg.n_task_experts
    heads = 2 if cfg.kind == ModelKind.DLEN else 1
    tower = cfg.tower_spec.n_params(width) + heads * (cfg.tower_spec.out_width + 1)
    total = emb + n_experts * expert + cfg.n_tasks * ((d_in + 1) * gate_w + tower)
    if cfg.kind == ModelKind.DLEN:
        if cfg.hidden_state_input == "experts":
            total += (d_in + 1) * cfg.n_shared_experts
            total += cfg.hidden_state_spec.n_params(width)
        else:
            total += cfg.hidden_state_spec.n_params(d_in)
        total += cfg.hidden_state_spec.out_width + 1
    return total


def build_model(config: ModelConfig, seed: int = 0) -> MultiTaskModel:
    return MultiTaskModel(config, seed=seed)
