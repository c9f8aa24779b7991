"""Flat ``key=value`` configuration files.

Blank lines and lines starting with ``#`` are ignored. Keys map onto the
model, loss, training and synthetic-data settings; unknown keys are errors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .change import ChangeConfig
from .data.synthetic import SyntheticSceneConfig
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .errors import ConfigurationError
from .losses import LossConfig
from .model import ModelConfig
from .train import TrainConfig

# model defaults used by the toy training runs
TOY_MODEL = ModelConfig(
    encoder=EncoderConfig(stem_channels=16, blocks_per_stage=1),
    decoder=DecoderConfig(fusion_width=32, head_width=16),
    dtype="float32",
)


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"line {lineno}: empty key")
        if key in out:
            raise ConfigurationError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def format_kv(values: dict[str, object]) -> str:
    return "".join(f"{k}={_fmt(v)}\n" for k, v in values.items())


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


def _parse_bool(v: str) -> bool:
    low = v.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigurationError(f"not a boolean: {v!r}")


def _coerce(template, value: str):
    try:
        if isinstance(template, bool):
            return _parse_bool(value)
        if isinstance(template, int):
            return int(value)
        if isinstance(template, float):
            return float(value)
        if isinstance(template, tuple):
            parts = [p for p in value.split(",") if p.strip()]
            kind = type(template[0]) if template else float
            return tuple(kind(p) for p in parts)
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {value!r}: {exc}") from exc
    return value


def _update(obj, prefix: str, kv: dict[str, str], used: set[str]):
    changes = {}
    for f in fields(obj):
        key = f"{prefix}{f.name}"
        if key in kv:
            changes[f.name] = _coerce(getattr(obj, f.name), kv[key])
            used.add(key)
    return replace(obj, **changes) if changes else obj


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = TOY_MODEL
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: SyntheticSceneConfig = field(default_factory=SyntheticSceneConfig)


def run_config_from_kv(kv: dict[str, str], base: RunConfig | None = None) -> RunConfig:
    """Keys: ``encoder.*``, ``change.*``, ``decoder.*``, ``model.*``, ``loss.*``, ``train.*``, ``data.*``.

    ``loss.lambda`` accepts the four loss weights as one comma list.
    """
    base = base or RunConfig()
    used: set[str] = set()
    m = base.model
    m = replace(
        m,
        encoder=_update(m.encoder, "encoder.", kv, used),
        change=_update(m.change, "change.", kv, used),
        decoder=_update(m.decoder, "decoder.", kv, used),
    )
    m = _update(m, "model.", kv, used)
    loss = base.loss
    if "loss.lambda" in kv:
        loss = LossConfig.from_lambdas(kv["loss.lambda"].split(","), m.decoder.num_2d_classes)
        used.add("loss.lambda")
    loss = _update(loss, "loss.", kv, used)
    train = _update(base.train, "train.", kv, used)
    data = _update(base.data, "data.", kv, used)
    unknown = sorted(set(kv) - used)
    if unknown:
        raise ConfigurationError(f"unknown configuration keys: {unknown}")
    return RunConfig(m, loss, train, data)


def load_run_config(path, base: RunConfig | None = None) -> RunConfig:
    return run_config_from_kv(parse_kv(Path(path).read_text()), base)


def model_config_to_dict(cfg: ModelConfig) -> dict[str, str]:
    out = {}
    for prefix, obj in (("encoder.", cfg.encoder), ("change.", cfg.change), ("decoder.", cfg.decoder)):
        for f in fields(obj):
            out[prefix + f.name] = _fmt(getattr(obj, f.name))
    for name in ("use_edp", "dtype", "seed", "eval_norm"):
        out["model." + name] = _fmt(getattr(cfg, name))
    return out


def model_config_from_dict(d: dict[str, str]) -> ModelConfig:
    kv = {k: v for k, v in d.items() if k.split(".", 1)[0] in ("encoder", "change", "decoder", "model")}
    return run_config_from_kv(kv, RunConfig(model=ModelConfig())).model
