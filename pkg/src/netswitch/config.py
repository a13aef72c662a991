"""Run configuration files.

Flat ``key = value`` text with ``#`` comments and ``[section]`` headers.
Keys before the first header land in ``[run]``. Relative paths resolve
against the config file's directory; ``bundled:NAME`` points at a file
shipped in ``netswitch/data``.
"""

from __future__ import annotations

import configparser
from dataclasses import fields, replace
from importlib import resources
from pathlib import Path

from .cost import CostSpec
from .errors import FormatError
from .nac import NacConfig, StoppingConfig
from .offline import OpeConfig

SECTIONS = ("run", "mdp", "policy", "cost", "data", "ope", "nac", "stopping", "search")


class RunConfig:
    """Parsed configuration: a dict of sections plus the base directory for paths."""

    def __init__(self, sections: dict[str, dict[str, str]] | None = None,
                 base_dir: Path | None = None):
        self.sections = {name: dict(sections.get(name, {})) if sections else {} for name in SECTIONS}
        if sections:
            unknown = set(sections) - set(SECTIONS)
            if unknown:
                raise FormatError(f"unknown config sections: {sorted(unknown)}")
        self.base_dir = base_dir or Path.cwd()

    @classmethod
    def parse(cls, text: str, base_dir: Path | None = None) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#",),
                                       inline_comment_prefixes=("#",), default_section="__none__")
        cp.optionxform = str
        try:
            cp.read_string("[run]\n" + text)
        except configparser.Error as exc:
            raise FormatError(f"bad config: {exc}") from exc
        return cls({s: dict(cp[s]) for s in cp.sections()}, base_dir)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        return cls.parse(path.read_text(), path.parent)

    def get(self, section: str, key: str, default=None):
        return self.sections[section].get(key, default)

    def set(self, section: str, key: str, value) -> None:
        if value is not None:
            self.sections[section][key] = str(value)

    def path(self, section: str, key: str) -> str | None:
        value = self.get(section, key)
        if value is None:
            return None
        return str(resolve_path(value, self.base_dir))

    # typed views ------------------------------------------------------------

    def seed(self, default: int = 0) -> int:
        return _int(self.get("run", "seed", default), "seed")

    def cost_spec(self, n_states: int) -> CostSpec:
        block = self.sections["cost"]
        if not block:
            return CostSpec.zero()
        return CostSpec.from_config(block, n_states)

    def ope(self, seed: int | None = None) -> OpeConfig:
        cfg = _dataclass_from(OpeConfig, self.sections["ope"], "ope")
        if seed is not None:
            cfg = replace(cfg, seed=seed)
        return cfg

    def stopping(self) -> StoppingConfig:
        return _dataclass_from(StoppingConfig, self.sections["stopping"], "stopping")

    def nac(self, seed: int | None = None) -> NacConfig:
        block = self.sections["nac"]
        kw = _typed_kwargs(NacConfig, block, "nac", skip=("ope", "stopping"))
        try:
            return NacConfig(ope=self.ope(seed), stopping=self.stopping(), **kw)
        except (TypeError, ValueError) as exc:
            raise FormatError(f"[nac]: {exc}") from exc


def resolve_path(value: str, base_dir: Path) -> Path:
    if value.startswith("bundled:"):
        return Path(str(resources.files("netswitch").joinpath("data", value[len("bundled:"):])))
    p = Path(value)
    return p if p.is_absolute() else base_dir / p


def _int(value, name: str) -> int:
    try:
        return int(value)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{name} must be an integer, got {value!r}") from exc


def _convert(value: str, kind, name: str):
    try:
        if kind is bool or kind == "bool":
            low = value.strip().lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(value)
            return low in ("true", "1", "yes")
        if kind is int or kind == "int":
            return int(value)
        return float(value)
    except ValueError as exc:
        raise FormatError(f"bad value for {name}: {value!r}") from exc


def _typed_kwargs(cls, block: dict[str, str], section: str, skip=()) -> dict:
    known = {f.name: f.type for f in fields(cls) if f.name not in skip}
    out = {}
    for key, value in block.items():
        if key not in known:
            raise FormatError(f"unknown key [{section}] {key}")
        out[key] = _convert(value, known[key], f"[{section}] {key}")
    return out


def _dataclass_from(cls, block: dict[str, str], section: str):
    try:
        return cls(**_typed_kwargs(cls, block, section))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"[{section}]: {exc}") from exc
