# dadgraph/engine/config.py
from __future__ import annotations
import copy
import json
from pathlib import Path
from typing import Annotated, Any, Dict, Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, NonNegativeInt, PositiveFloat, PositiveInt, ValidationError, model_validator

from .discourse_graph import GraphKind, GraphMode
from .errors import ConfigError

DEFAULTS_PATH = Path(__file__).resolve().parent.parent / "config.yaml"


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class BagOfWordsConfig(_Strict):
    kind: Literal["bag_of_words"] = "bag_of_words"
    embed_dim: PositiveInt = 32


class PrecomputedConfig(_Strict):
    kind: Literal["precomputed"] = "precomputed"
    path: str


UtteranceConfig = Annotated[Union[BagOfWordsConfig, PrecomputedConfig], Field(discriminator="kind")]


class EncoderConfig(_Strict):
    utterance: UtteranceConfig = BagOfWordsConfig()
    gru_hidden: PositiveInt = 32
    rgcn_hidden: PositiveInt = 32
    activation: Literal["relu", "sigmoid", "tanh"] = "relu"
    layer2_per_relation: bool = False


class MrcConfig(_Strict):
    word_dim: PositiveInt = 32
    tau: float = 0.0
    max_answer_len: PositiveInt = 30
    na_vector: Literal["sentinel", "mean"] = "sentinel"


class GraphConfig(_Strict):
    mode: Literal["gold", "links", "full"] = "gold"
    window: Optional[PositiveInt] = None
    links_relations: Literal["speaker", "speaker_temporal"] = "speaker"

    def to_mode(self) -> GraphMode:
        return GraphMode(GraphKind(self.mode), window=self.window, links_relations=self.links_relations)


class DataConfig(_Strict):
    train: Optional[str] = None
    dev: Optional[str] = None
    test: Optional[str] = None


class TrainConfig(_Strict):
    seed: int = 13
    epochs: NonNegativeInt = 30
    learning_rate: PositiveFloat = 1e-3
    lr_decay: Annotated[float, Field(gt=0, le=1)] = 1.0
    optimizer: Literal["sgd", "adam"] = "adam"
    eval_every: PositiveInt = 1
    target_em: Optional[float] = None
    patience: Optional[PositiveInt] = None
    progress: bool = True
    workers: PositiveInt = 1
    run_dir: Optional[str] = "runs"
    graph: GraphConfig = GraphConfig()
    encoder: EncoderConfig = EncoderConfig()
    mrc: MrcConfig = MrcConfig()
    data: DataConfig = DataConfig()

    @model_validator(mode="after")
    def _dimensions_line_up(self) -> "TrainConfig":
        # e = h . w needs dim(h) == dim(w); c = f * q needs dim(q) == dim(h)
        if self.encoder.rgcn_hidden != self.mrc.word_dim:
            raise ValueError(f"encoder.rgcn_hidden ({self.encoder.rgcn_hidden}) must equal "
                             f"mrc.word_dim ({self.mrc.word_dim})")
        utt = self.encoder.utterance
        if isinstance(utt, BagOfWordsConfig) and utt.embed_dim != self.encoder.rgcn_hidden:
            raise ValueError(f"encoder.utterance.embed_dim ({utt.embed_dim}) must equal "
                             f"encoder.rgcn_hidden ({self.encoder.rgcn_hidden}) so questions can be fused")
        return self

    def to_json(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    def with_updates(self, **updates: Any) -> "TrainConfig":
        """Deep-merge nested dict updates and re-validate."""
        return parse_config(_deep_merge(self.to_json(), updates))


def _deep_merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and "kind" not in v:
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_config(raw: Dict[str, Any]) -> TrainConfig:
    try:
        return TrainConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise ConfigError(f"invalid config at {where}: {first['msg']}") from e


def default_config_dict() -> Dict[str, Any]:
    return yaml.safe_load(DEFAULTS_PATH.read_text(encoding="utf-8")) or {}


def load_config(path: Optional[str | Path] = None, overrides: Optional[Dict[str, Any]] = None) -> TrainConfig:
    """Packaged defaults <- user file (YAML or JSON) <- overrides."""
    raw = default_config_dict()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"{p}: cannot parse config: {e}") from e
        if not isinstance(user, dict):
            raise ConfigError(f"{p}: config must be a mapping")
        raw = _deep_merge(raw, user)
    if overrides:
        raw = _deep_merge(raw, overrides)
    return parse_config(raw)


def dump_config(cfg: TrainConfig) -> str:
    return json.dumps(cfg.to_json(), indent=2, sort_keys=True)
