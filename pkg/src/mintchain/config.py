"""INI files for keys, node settings and simulator scenarios.

Secrets live only in key files, never on the command line.  Endpoints can
be overridden from the environment:

* ``MINTCHAIN_LISTEN`` replaces a node's listen endpoint;
* ``MINTCHAIN_BANK`` replaces the bank endpoint a client talks to;
* ``MINTCHAIN_MINTETTE_<ID>`` replaces one mintette's endpoint in a bank
  config (``<ID>`` upper-cased).
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional

from .crypto import KeyPair
from .net.behaviours import Behaviour
from .net.sim import SimConfig


class ConfigError(ValueError):
    """A config or key file is missing, malformed or inconsistent."""


def _parser() -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep ids and hex keys as written
    return cp


def _read(path: Path) -> configparser.ConfigParser:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"{path}: no such file")
    cp = _parser()
    try:
        cp.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cp


def write_key(path: Path, kp: KeyPair) -> Path:
    cp = _parser()
    cp["key"] = {"scheme": kp.scheme, "secret": kp.sk.hex(), "public": kp.pk.hex()}
    path = Path(path)
    with open(os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600), "w") as fh:
        cp.write(fh)
    return path


def read_key(path: Path) -> KeyPair:
    cp = _read(path)
    try:
        sec = cp["key"]
        kp = KeyPair(bytes.fromhex(sec["secret"]), bytes.fromhex(sec["public"]))
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"{path}: not a key file ({exc})") from exc
    if kp.scheme != sec.get("scheme", kp.scheme):
        raise ConfigError(f"{path}: scheme does not match key bytes")
    return kp


def read_public_key(text: str) -> bytes:
    """A hex public key, or a key file whose public half is used."""
    if Path(text).is_file():
        return read_key(Path(text)).pk
    try:
        return bytes.fromhex(text)
    except ValueError as exc:
        raise ConfigError(f"{text!r} is neither a key file nor a hex public key") from exc


@dataclass
class NodeConfig:
    role: str
    listen: str
    key: Path
    mintette_id: str = ""
    # bank only: mintette id -> endpoint, in shard-map order
    mintettes: dict[str, str] = field(default_factory=dict)
    shard_size: int = 3
    period_seconds: float = 10.0
    periods: int = 0
    epoch_entries: int = 1000
    epoch_seconds: float = 1.0
    archive_dir: Path = Path("archive")
    allocations: list[tuple[bytes, int]] = field(default_factory=list)
    reserve: int = 1_000_000

    def validate(self) -> None:
        if self.role not in ("bank", "mintette"):
            raise ConfigError(f"role must be bank or mintette, got {self.role!r}")
        if not self.key.is_file():
            raise ConfigError(f"key file {self.key} does not exist")
        if self.period_seconds <= self.epoch_seconds:
            raise ConfigError("period length must exceed the epoch interval")
        if self.role == "mintette" and not self.mintette_id:
            raise ConfigError("a mintette config needs an id")
        if self.role == "bank" and len(self.mintettes) < self.shard_size:
            raise ConfigError(f"bank needs at least {self.shard_size} mintettes")


def load_node_config(path: Path, env: Optional[Mapping[str, str]] = None) -> NodeConfig:
    env = os.environ if env is None else env
    path = Path(path)
    cp = _read(path)
    if "node" not in cp:
        raise ConfigError(f"{path}: missing [node] section")
    node = cp["node"]
    base = path.parent

    try:
        cfg = NodeConfig(
            role=node.get("role", ""),
            listen=env.get("MINTCHAIN_LISTEN", node.get("listen", "127.0.0.1:0")),
            key=base / node.get("key", ""),
            mintette_id=node.get("id", ""),
            shard_size=node.getint("shard_size", 3),
            period_seconds=node.getfloat("period_seconds", 10.0),
            periods=node.getint("periods", 0),
            epoch_entries=node.getint("epoch_entries", 1000),
            epoch_seconds=node.getfloat("epoch_seconds", 1.0),
            archive_dir=base / node.get("archive_dir", "archive"),
            reserve=node.getint("reserve", 1_000_000),
        )
        if "mintettes" in cp:
            for mid, ep in cp["mintettes"].items():
                cfg.mintettes[mid] = env.get(f"MINTCHAIN_MINTETTE_{mid.upper()}", ep)
        if "allocations" in cp:
            # one line per address; several coins as "pk = 100, 50"
            for pk, vs in cp["allocations"].items():
                for v in vs.split(","):
                    cfg.allocations.append((bytes.fromhex(pk), int(v)))
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    cfg.validate()
    return cfg


_SIM_FIELDS = {f.name: f for f in dataclasses.fields(SimConfig)}


def load_sim_config(path: Path) -> SimConfig:
    """``[scenario]`` holds SimConfig fields; ``[behaviours]`` maps index to behaviour."""
    cp = _read(path)
    values: dict = {}
    if "scenario" in cp:
        for k, raw in cp["scenario"].items():
            if k not in _SIM_FIELDS or k == "behaviours":
                raise ConfigError(f"{path}: unknown scenario key {k!r}")
            values[k] = _coerce(k, raw, path)
    if "behaviours" in cp:
        try:
            values["behaviours"] = {int(i): Behaviour(b) for i, b in cp["behaviours"].items()}
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    cfg = SimConfig(**values)
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return cfg


def _coerce(key: str, raw: str, path: Path):
    kind = str(_SIM_FIELDS[key].type)
    text = raw.strip()
    try:
        if kind.startswith("Optional") and text.lower() == "none":
            return None
        if "bool" in kind:
            if text.lower() not in ("true", "false", "yes", "no", "1", "0"):
                raise ValueError(f"not a boolean: {raw!r}")
            return text.lower() in ("true", "yes", "1")
        if "int" in kind:
            return int(text)
        if "float" in kind:
            return float(text)
        return text
    except ValueError as exc:
        raise ConfigError(f"{path}: {key}: {exc}") from exc
