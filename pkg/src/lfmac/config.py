"""Experiment configuration: JSON schema, semantic checks and parsed form."""

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import jsonschema
import numpy as np

from .channel import ChannelModel, SystemDims, correlation_from_eigenvalues
from .cov_codebook import MIN_DRAWS_PER_CELL, complex_from_json
from .waterfill import PowerBudget

__all__ = ["ConfigError", "SCHEMES", "ExperimentConfig", "load_config", "parse_config",
           "config_hash", "snr_to_power"]

SCHEMES = ("covariance", "eigenbeam", "grassmann", "random_bf", "statistical_bf",
           "full_csi", "no_feedback", "tdma", "region2u")
CODEBOOK_SCHEMES = ("covariance", "eigenbeam", "grassmann", "random_bf")
BEAMFORMING_SCHEMES = ("eigenbeam", "grassmann", "random_bf", "statistical_bf")


class ConfigError(ValueError):
    """Invalid experiment configuration; the message starts with the field path."""


_complex_matrix = {
    "type": "object",
    "required": ["re", "im"],
    "properties": {"re": {"type": "array"}, "im": {"type": "array"}},
}

SCHEMA = {
    "type": "object",
    "required": ["name", "dims", "channel", "snr_grid_db", "schemes", "budget", "eval_draws", "seed"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string", "minLength": 1},
        "description": {"type": "string"},
        "acceptance": {"type": "boolean"},
        "dims": {
            "type": "object",
            "required": ["K", "Mt", "Mr"],
            "additionalProperties": False,
            "properties": {k: {"type": "integer", "minimum": 1} for k in ("K", "Mt", "Mr")},
        },
        "channel": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["iid", "kronecker"]},
                "tx_eigenvalues": {"type": "array", "items": {"type": "number", "minimum": 0}},
                "tx_correlation": {"type": "array", "items": _complex_matrix},
            },
        },
        "snr_grid_db": {"type": "array", "minItems": 1, "items": {"type": "number"}},
        "bits_list": {"type": "array", "items": {"type": "integer", "minimum": 0, "maximum": 10}},
        "schemes": {"type": "array", "minItems": 1, "uniqueItems": True,
                    "items": {"enum": list(SCHEMES)}},
        "budget": {
            "type": "object",
            "required": ["kind"],
            "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["sum", "individual"]},
                "fractions": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}},
            },
        },
        "training_size": {"type": "integer", "minimum": 1},
        "eval_draws": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "codebook_realizations": {"type": "integer", "minimum": 1},
        "lloyd": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "restarts": {"type": "integer", "minimum": 1},
                "max_rounds": {"type": "integer", "minimum": 1},
                "tol_bits": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "grassmann": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "training_size": {"type": "integer", "minimum": 1},
                "rounds": {"type": "integer", "minimum": 1},
                "snapshot": {"enum": ["max", "last"]},
                "rotate": {"type": "boolean"},
            },
        },
        "region": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"n_directions": {"type": "integer", "minimum": 2}},
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dir": {"type": "string"},
                "csv": {"type": "string"},
                "json": {"type": "string"},
            },
        },
    },
}


def snr_to_power(snr_db: float) -> float:
    """Total transmit power for a given SNR with unit noise variance."""
    return float(10.0 ** (snr_db / 10.0))


@dataclass
class ExperimentConfig:
    name: str
    dims: SystemDims
    channel: ChannelModel
    snr_grid_db: List[float]
    bits_list: List[int]
    schemes: List[str]
    budget_kind: str
    fractions: Optional[List[float]]
    training_size: int
    eval_draws: int
    seed: int
    codebook_realizations: int = 1
    restarts: int = 4
    max_rounds: int = 50
    tol_bits: float = 1e-4
    grassmann_training_size: int = 10000
    grassmann_rounds: int = 60
    grassmann_snapshot: str = "max"
    grassmann_rotate: bool = False
    region_directions: int = 33
    output_dir: Optional[str] = None
    csv_name: Optional[str] = None
    json_name: Optional[str] = None
    raw: dict = field(default_factory=dict, repr=False)

    def budget(self, snr_db: float) -> PowerBudget:
        P = snr_to_power(snr_db)
        if self.budget_kind == "sum":
            return PowerBudget.sum(P)
        return PowerBudget.individual([f * P for f in self.fractions])


def _path(parts) -> str:
    out = ""
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out or "<root>"


def config_hash(raw: dict) -> str:
    return hashlib.sha256(json.dumps(raw, sort_keys=True).encode()).hexdigest()


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config dict and build an :class:`ExperimentConfig`."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise ConfigError(f"{_path(e.absolute_path)}: {e.message}")

    d = raw["dims"]
    try:
        dims = SystemDims(d["K"], d["Mt"], d["Mr"])
    except ValueError as exc:
        raise ConfigError(f"dims: {exc}") from None

    snr = [float(x) for x in raw["snr_grid_db"]]
    for i in range(1, len(snr)):
        if not snr[i] > snr[i - 1]:
            raise ConfigError(f"snr_grid_db[{i}]: grid must be strictly increasing")

    schemes = list(raw["schemes"])
    bits = list(raw.get("bits_list", []))
    if len(set(bits)) != len(bits):
        raise ConfigError("bits_list: duplicate entries")
    if any(s in CODEBOOK_SCHEMES + ("region2u",) for s in schemes) and not bits:
        raise ConfigError("bits_list: codebook schemes need at least one B value")
    if "grassmann" in schemes and 0 in bits:
        raise ConfigError("bits_list: grassmann needs B >= 1")

    ch = raw["channel"]
    corr = None
    if ch["kind"] == "kronecker":
        if ("tx_eigenvalues" in ch) == ("tx_correlation" in ch):
            raise ConfigError("channel: kronecker needs exactly one of tx_eigenvalues, tx_correlation")
        if "tx_eigenvalues" in ch:
            if len(ch["tx_eigenvalues"]) != dims.Mt:
                raise ConfigError(f"channel.tx_eigenvalues: need {dims.Mt} values")
            if sum(ch["tx_eigenvalues"]) <= 0:
                raise ConfigError("channel.tx_eigenvalues: must not all be zero")
            corr = correlation_from_eigenvalues(ch["tx_eigenvalues"], dims.K)
        else:
            try:
                corr = np.array([complex_from_json(m) for m in ch["tx_correlation"]])
            except (ValueError, TypeError) as exc:
                raise ConfigError(f"channel.tx_correlation: {exc}") from None
    elif "tx_eigenvalues" in ch or "tx_correlation" in ch:
        raise ConfigError("channel: correlation given for an iid channel")
    try:
        model = ChannelModel(dims, corr)
    except ValueError as exc:
        raise ConfigError(f"channel.tx_correlation: {exc}") from None

    b = raw["budget"]
    fractions = None
    if b["kind"] == "individual":
        fractions = b.get("fractions")
        if fractions is None or len(fractions) != dims.K:
            raise ConfigError(f"budget.fractions: need {dims.K} positive values")
        if any(s in BEAMFORMING_SCHEMES for s in schemes):
            raise ConfigError("budget.kind: beamforming schemes require a sum budget")
    elif "fractions" in b:
        raise ConfigError("budget.fractions: only valid for an individual budget")
    if "region2u" in schemes:
        if dims.K != 2:
            raise ConfigError("dims.K: region2u needs exactly 2 users")
        if b["kind"] != "individual":
            raise ConfigError("budget.kind: region2u needs an individual budget")

    needs_training = any(s in ("covariance", "eigenbeam", "region2u") for s in schemes)
    training_size = raw.get("training_size", 0)
    if needs_training:
        need = MIN_DRAWS_PER_CELL * 2 ** max(bits)
        if training_size < need:
            raise ConfigError(f"training_size: {training_size} draws is below the minimum "
                              f"{need} for B = {max(bits)}")
    if raw.get("acceptance") and raw["eval_draws"] < 1000:
        raise ConfigError("eval_draws: acceptance runs need at least 1000 draws")

    lloyd = raw.get("lloyd", {})
    gr = raw.get("grassmann", {})
    out = raw.get("output", {})
    return ExperimentConfig(
        name=raw["name"], dims=dims, channel=model, snr_grid_db=snr, bits_list=bits,
        schemes=schemes, budget_kind=b["kind"], fractions=fractions,
        training_size=training_size, eval_draws=raw["eval_draws"], seed=raw["seed"],
        codebook_realizations=raw.get("codebook_realizations", 1),
        restarts=lloyd.get("restarts", 4), max_rounds=lloyd.get("max_rounds", 50),
        tol_bits=lloyd.get("tol_bits", 1e-4),
        grassmann_training_size=gr.get("training_size", 10000),
        grassmann_rounds=gr.get("rounds", 60), grassmann_snapshot=gr.get("snapshot", "max"),
        grassmann_rotate=gr.get("rotate", model.kind == "kronecker"),
        region_directions=raw.get("region", {}).get("n_directions", 33),
        output_dir=out.get("dir"), csv_name=out.get("csv"), json_name=out.get("json"),
        raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"<file>: {path} does not exist") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<file>: not valid JSON ({exc})") from None
    return parse_config(raw)
