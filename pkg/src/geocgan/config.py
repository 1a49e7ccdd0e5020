"""Configuration files and run manifests."""
import datetime as _dt
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .training import TrainConfig

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

SEED_ENV = "GGEN_SEED"


def load_config(path, overrides=None):
    """Read a TOML config (sections flattened) and apply ``overrides`` then ``GGEN_SEED``."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}", field="config") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}", field="config") from exc
    return config_from_mapping(data, overrides)


def config_from_mapping(data, overrides=None):
    cfg = TrainConfig.from_dict(data)
    changes = {k: v for k, v in (overrides or {}).items() if v is not None}
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            changes["seed"] = int(env)
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env!r}", field="seed") from exc
    return cfg.replace(**changes) if changes else cfg


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return repr(v)


def dump_config(cfg):
    """Serialise to TOML; ``weights`` becomes its own table."""
    data = cfg.to_dict()
    weights = data.pop("weights")
    lines = [f"{k} = {_toml_value(v)}" for k, v in data.items() if v is not None]
    lines.append("")
    lines.append("[weights]")
    lines += [f"{k} = {_toml_value(v)}" for k, v in weights.items()]
    return "\n".join(lines) + "\n"


def code_hash():
    """SHA-256 over the package's source files, in sorted path order."""
    root = Path(__file__).resolve().parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        if p.suffix in (".py", ".pyx") and "__pycache__" not in p.parts:
            h.update(str(p.relative_to(root)).encode())
            h.update(p.read_bytes())
    return h.hexdigest()


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


@dataclass
class RunManifest:
    config: dict
    seed: int
    code_hash: str
    started: str = field(default_factory=_now)
    finished: str = None
    status: str = "running"
    outputs: dict = field(default_factory=lambda: {"checkpoint": "model.ckpt", "metrics": "metrics.csv",
                                                   "manifest": "manifest.json"})

    @classmethod
    def for_config(cls, cfg):
        return cls(cfg.to_dict(), cfg.seed, code_hash())

    def train_config(self):
        return TrainConfig.from_dict(self.config)

    def write(self, path):
        with open(path, "w") as fh:
            json.dump(self.__dict__, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def read(cls, path):
        try:
            with open(path) as fh:
                data = json.load(fh)
            return cls(**data)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"unreadable manifest {path}: {exc}", field="manifest") from exc
