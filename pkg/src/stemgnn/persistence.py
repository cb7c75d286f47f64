"""Plain-text run configs and decimal checkpoints.

Checkpoint layout::

    #config n_nodes=4 window=8 ...
    block1.graph_kernel.theta 3 4 4 4
    <values, whitespace separated, 17 significant digits>
    ...
    #checksum <sum of all values> <FNV-1a 64 of every preceding byte>

The sum is printed with 17 significant digits and recomputed on load from
the parsed values; the FNV hash guards the bytes themselves.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, IntegrityError
from .model import AblationFlags, ModelConfig, NetworkParams, init_params
from .params import rebuild
from .training import EpochLog, TrainConfig, TrainState

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1
VALUES_PER_LINE = 8


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK
    return h


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _sum_text(values: list[float]) -> str:
    try:
        return _fmt(math.fsum(values))
    except OverflowError:  # finite values whose exact sum exceeds the float range
        return "overflow"


# --------------------------------------------------------------------------
# run config


@dataclass
class RunConfig:
    dataset: str = ""
    adjacency: str = ""            # empty: learn the graph
    out_dir: str = "runs"
    eval_horizons: tuple[int, ...] = (1,)
    train: TrainConfig = field(default_factory=TrainConfig)

    def to_text(self) -> str:
        lines = ["# stemgnn run config"]
        for key, value in self.items():
            lines.append(f"{key} = {encode_value(value)}")
        return "\n".join(lines) + "\n"

    def items(self) -> list[tuple[str, object]]:
        out = [("dataset", self.dataset), ("adjacency", self.adjacency),
               ("out_dir", self.out_dir), ("eval_horizons", self.eval_horizons)]
        for f in dataclasses.fields(TrainConfig):
            if f.name == "ablation":
                continue
            out.append((f.name, getattr(self.train, f.name)))
        for f in dataclasses.fields(AblationFlags):
            out.append((f.name, getattr(self.train.ablation, f.name)))
        return out

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        raw: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"config line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            raw[key] = value
        return cls.from_mapping(raw)

    @classmethod
    def from_mapping(cls, raw: dict[str, str]) -> "RunConfig":
        top = {f.name: f for f in dataclasses.fields(cls) if f.name != "train"}
        tc = {f.name: f for f in dataclasses.fields(TrainConfig) if f.name != "ablation"}
        ab = {f.name: f for f in dataclasses.fields(AblationFlags)}
        hints = {**typing.get_type_hints(cls), **typing.get_type_hints(TrainConfig),
                 **typing.get_type_hints(AblationFlags)}
        kw, tkw, akw = {}, {}, {}
        for key, value in raw.items():
            if key in top:
                kw[key] = _decode(value, hints[key], key)
            elif key in tc:
                tkw[key] = _decode(value, hints[key], key)
            elif key in ab:
                akw[key] = _decode(value, hints[key], key)
            else:
                raise ConfigurationError(f"unknown config key {key!r}")
        return cls(**kw, train=TrainConfig(**tkw, ablation=AblationFlags(**akw)))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.from_text(Path(path).read_text())


def encode_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(encode_value(v) for v in value)
    if "#" in str(value) or "\n" in str(value):
        raise ConfigurationError(f"config values cannot contain '#' or newlines: {value!r}")
    return str(value)


def _decode(text: str, hint, key: str):
    try:
        if hint is bool:
            if text.lower() not in ("true", "false"):
                raise ValueError(text)
            return text.lower() == "true"
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
        if hint is str:
            return text
        if typing.get_origin(hint) is tuple:
            args = typing.get_args(hint)
            parts = [p.strip() for p in text.split(",") if p.strip()]
            return tuple(_decode(p, args[0], key) for p in parts)
    except ValueError:
        raise ConfigurationError(f"config key {key!r}: bad value {text!r}") from None
    raise ConfigurationError(f"config key {key!r}: unsupported type {hint}")


# --------------------------------------------------------------------------
# checkpoints


def _model_config_line(cfg: ModelConfig) -> str:
    parts = [f"{f.name}={encode_value(getattr(cfg, f.name))}" for f in dataclasses.fields(cfg)]
    return "#config " + " ".join(parts)


def _parse_model_config(line: str) -> ModelConfig:
    hints = typing.get_type_hints(ModelConfig)
    kw = {}
    for part in line.split()[1:]:
        key, _, value = part.partition("=")
        if key not in hints:
            raise IntegrityError(f"unknown model config key {key!r} in checkpoint")
        kw[key] = _decode(value, hints[key], key)
    return ModelConfig(**kw)


def write_arrays(path: str | Path, arrays: dict[str, np.ndarray], header: str = "") -> None:
    lines = [header] if header else []
    total = []
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        if any(c.isspace() for c in name) or not name:
            raise ValueError(f"bad array name {name!r}")
        lines.append(" ".join([name, str(arr.ndim), *map(str, arr.shape)]))
        flat = arr.reshape(-1)
        for i in range(0, flat.size, VALUES_PER_LINE):
            lines.append(" ".join(_fmt(v) for v in flat[i:i + VALUES_PER_LINE]))
        total.extend(flat.tolist())
    body = ("\n".join(lines) + "\n").encode()
    checksum = f"#checksum {_sum_text(total)} {fnv1a64(body):016x}\n"
    Path(path).write_bytes(body + checksum.encode())


def read_arrays(path: str | Path) -> tuple[dict[str, np.ndarray], list[str]]:
    """Arrays in file order plus the leading comment lines; verifies the checksum."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise IntegrityError(f"cannot read checkpoint {path}: {exc}") from exc
    cut = raw.rstrip(b"\n").rfind(b"\n") + 1
    body, last = raw[:cut], raw[cut:].decode(errors="replace").split()
    if len(last) != 3 or last[0] != "#checksum":
        raise IntegrityError(f"{path}: missing checksum line (truncated file?)")
    if f"{fnv1a64(body):016x}" != last[2]:
        raise IntegrityError(f"{path}: checksum mismatch")

    comments, arrays, total = [], {}, []
    tokens: list[str] = []
    for line in body.decode().splitlines():
        if line.startswith("#"):
            comments.append(line)
        elif line.strip():
            tokens.extend(line.split())
    pos = 0
    try:
        while pos < len(tokens):
            name, ndim = tokens[pos], int(tokens[pos + 1])
            shape = tuple(int(t) for t in tokens[pos + 2:pos + 2 + ndim])
            pos += 2 + ndim
            size = int(np.prod(shape, dtype=np.int64))
            values = [float(t) for t in tokens[pos:pos + size]]
            if len(values) != size:
                raise IntegrityError(f"{path}: {name} is short of values")
            pos += size
            arrays[name] = np.array(values, dtype=np.float64).reshape(shape)
            total.extend(values)
    except (ValueError, IndexError) as exc:
        raise IntegrityError(f"{path}: malformed checkpoint ({exc})") from None
    if _sum_text(total) != last[1]:
        raise IntegrityError(f"{path}: value sum does not match checksum")
    return arrays, comments


def save_checkpoint(params: NetworkParams, path: str | Path) -> None:
    arrays = {k: t.data for k, t in params.named().items()}
    write_arrays(path, arrays, _model_config_line(params.config))


def _config_from_comments(comments: list[str], path) -> ModelConfig:
    for line in comments:
        if line.startswith("#config "):
            return _parse_model_config(line)
    raise IntegrityError(f"{path}: no model config line")


def _params_from(arrays: dict[str, np.ndarray], cfg: ModelConfig, prefix: str, path) -> NetworkParams:
    template = init_params(cfg, 0)
    expected = {k: t.shape for k, t in template.named().items()}
    values = {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
    unknown = sorted(set(values) - set(expected))
    if unknown:
        raise IntegrityError(f"{path}: unknown parameter {prefix}{unknown[0]}")
    missing = sorted(set(expected) - set(values))
    if missing:
        raise IntegrityError(f"{path}: missing parameter {prefix}{missing[0]}")
    for k, shape in expected.items():
        if values[k].shape != shape:
            raise IntegrityError(f"{path}: {prefix}{k} has shape {values[k].shape}, "
                                 f"config expects {shape}")
    return rebuild(template, values)


def load_checkpoint(path: str | Path, config: ModelConfig | None = None) -> NetworkParams:
    """Parameters from ``path``; ``config`` overrides the one stored in the file."""
    arrays, comments = read_arrays(path)
    cfg = config or _config_from_comments(comments, path)
    return _params_from(arrays, cfg, "", path)


# --------------------------------------------------------------------------
# resumable training state

_STATE_PREFIXES = ("last.", "best.", "opt.", "meta.", "log.")


def save_train_state(state: TrainState, path: str | Path) -> None:
    arrays: dict[str, np.ndarray] = {}
    for k, t in state.params.named().items():
        arrays["last." + k] = t.data
    for k, t in state.best_params.named().items():
        arrays["best." + k] = t.data
    for k, v in state.opt_state.items():
        arrays["opt." + k] = v
    arrays["meta.next_epoch"] = np.array(float(state.next_epoch))
    arrays["meta.best_score"] = np.array(state.best_score)
    arrays["meta.best_epoch"] = np.array(float(state.best_epoch))
    for f in dataclasses.fields(EpochLog):
        arrays["log." + f.name] = np.array([getattr(e, f.name) for e in state.log], dtype=float)
    write_arrays(path, arrays, _model_config_line(state.params.config))


def load_train_state(path: str | Path) -> TrainState:
    arrays, comments = read_arrays(path)
    cfg = _config_from_comments(comments, path)
    stray = [k for k in arrays if not k.startswith(_STATE_PREFIXES)]
    if stray:
        raise IntegrityError(f"{path}: unknown entry {stray[0]}")
    params = _params_from({k: v for k, v in arrays.items() if k.startswith("last.")}, cfg, "last.", path)
    best = _params_from({k: v for k, v in arrays.items() if k.startswith("best.")}, cfg, "best.", path)
    opt = {k[4:]: v for k, v in arrays.items() if k.startswith("opt.")}
    try:
        cols = {f.name: arrays["log." + f.name] for f in dataclasses.fields(EpochLog)}
        next_epoch = int(arrays["meta.next_epoch"])
        best_score = float(arrays["meta.best_score"])
        best_epoch = int(arrays["meta.best_epoch"])
    except KeyError as exc:
        raise IntegrityError(f"{path}: missing entry {exc}") from None
    log = [EpochLog(int(cols["epoch"][i]), *(float(cols[f][i]) for f in
                                               ("lr", "train_loss", "val_mae", "seconds")))
           for i in range(len(cols["epoch"]))]
    return TrainState(params, opt, next_epoch, best, best_score, best_epoch, log)
