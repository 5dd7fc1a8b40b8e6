"""
Run configuration: environment defaults, key=value config files and the
RunConfig gathered for one CLI invocation.
"""

import argparse
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from dotenv import load_dotenv

from src.errors import ParameterError, ParseError

logger = logging.getLogger(__name__)

ENV_CALKIT = "RESOKIT_CALKIT"
ENV_LOG_LEVEL = "RESOKIT_LOG_LEVEL"
DEFAULT_ATTENUATION_DB = 70.0
DEFAULT_LOG_LEVEL = "INFO"
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


@dataclass
class Environment:
    calkit: Optional[str] = None
    log_level: str = DEFAULT_LOG_LEVEL


def load_environment() -> Environment:
    """Read .env (if any) and the RESOKIT_* variables."""
    load_dotenv()
    return Environment(
        calkit=os.getenv(ENV_CALKIT) or None,
        log_level=(os.getenv(ENV_LOG_LEVEL) or DEFAULT_LOG_LEVEL).upper(),
    )


def parse_config_text(text: str) -> Dict[str, str]:
    """key = value lines; '#' starts a comment; keys use '-' or '_'."""
    values: Dict[str, str] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"expected key=value, got '{raw.strip()}'", line_no)
        values[key.strip().replace("-", "_").lower()] = value.strip()
    return values


def read_config_file(path: str) -> Dict[str, str]:
    p = Path(path)
    if not p.exists():
        raise ParameterError(f"config file {path} not found")
    return parse_config_text(p.read_text())


def _coerce(key: str, raw: str, current):
    try:
        if isinstance(current, bool):
            lowered = raw.lower()
            if lowered in _TRUE:
                return True
            if lowered in _FALSE:
                return False
            raise ValueError(raw)
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
        if isinstance(current, list):
            return [item.strip() for item in raw.split(",") if item.strip()]
        if current is None:
            try:
                return float(raw)
            except ValueError:
                return raw
    except ValueError:
        raise ParameterError(f"config value for '{key}' is not valid: '{raw}'")
    return raw


def apply_config_values(namespace: argparse.Namespace, values: Dict[str, str]) -> argparse.Namespace:
    """Overwrite parsed flags with config-file values of the same name."""
    for key, raw in values.items():
        if not hasattr(namespace, key):
            raise ParameterError(f"unknown config key '{key}' for '{namespace.command}'")
        setattr(namespace, key, _coerce(key, raw, getattr(namespace, key)))
    return namespace


@dataclass
class RunConfig:
    """Everything one subcommand needs, after flags, config file and environment are merged."""
    command: str
    inputs: List[str] = field(default_factory=list)
    output: Optional[str] = None
    kit: Optional[str] = None
    preset: Optional[str] = None
    circuit: Dict[str, float] = field(default_factory=dict)
    points: int = 2001
    linewidths: float = 20.0
    mode: str = "reflection"
    correction: Optional[str] = None
    z0: float = 50.0
    zr: float = 50.0
    attenuation_db: float = DEFAULT_ATTENUATION_DB
    f0: Optional[float] = None
    temperature: float = 0.015
    beta: Optional[float] = 1.0
    conditioning_floor: Optional[float] = None
    terms: Optional[str] = None
    report: Optional[str] = None
    html: Optional[str] = None

    def __post_init__(self):
        if self.points < 20:
            raise ParameterError("points must be >= 20")
        if self.linewidths <= 0:
            raise ParameterError("linewidths must be > 0")
        if self.z0 <= 0 or self.zr <= 0:
            raise ParameterError("Z0 and Zr must be > 0")
        if self.temperature <= 0:
            raise ParameterError("temperature must be > 0")
        if self.beta is not None and self.beta <= 0:
            raise ParameterError("beta must be > 0")
        if self.mode not in ("hanger", "reflection"):
            raise ParameterError(f"mode must be 'hanger' or 'reflection', got '{self.mode}'")

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace, env: Environment) -> "RunConfig":
        circuit = {}
        for name in ("isolation_db", "l3_deg", "l4_deg", "z1", "z2", "r_res", "l_res", "c_res",
                     "c_couple", "wirebond_l1", "wirebond_l2"):
            value = getattr(ns, name, None)
            if value is not None:
                circuit[name] = float(value)
        inputs = getattr(ns, "inputs", None) or []
        if isinstance(inputs, str):
            inputs = [inputs]
        beta = getattr(ns, "beta", 1.0)
        if getattr(ns, "free_beta", False):
            beta = None
        return cls(
            command=ns.command,
            inputs=list(inputs),
            output=getattr(ns, "output", None),
            kit=getattr(ns, "kit", None) or env.calkit,
            preset=getattr(ns, "preset", None),
            circuit=circuit,
            points=int(getattr(ns, "points", 2001)),
            linewidths=float(getattr(ns, "linewidths", 20.0)),
            mode=getattr(ns, "mode", None) or "reflection",
            correction=getattr(ns, "correction", None),
            z0=float(getattr(ns, "z0", 50.0)),
            zr=float(getattr(ns, "zr", 50.0)),
            attenuation_db=float(getattr(ns, "attenuation_db", DEFAULT_ATTENUATION_DB)),
            f0=getattr(ns, "f0", None),
            temperature=float(getattr(ns, "temperature", 0.015)),
            beta=beta,
            conditioning_floor=getattr(ns, "conditioning_floor", None),
            terms=getattr(ns, "terms", None),
            report=getattr(ns, "report", None),
            html=getattr(ns, "html", None),
        )
