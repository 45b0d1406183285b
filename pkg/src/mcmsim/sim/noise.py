"""Noise model parameters with provenance, and their YAML serialization."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import yaml

SCHEMA = "mcmsim.noise/1"
PROVENANCE_TAGS = frozenset({"PAPER", "CALIBRATED", "ASSUMED", "DESIGN", "USER"})


@dataclass(frozen=True)
class NoiseModel:
    # MCM imaging of measured atoms (MZ/SZ)
    p_mcm_loss_bright: float = 0.005
    p_distinguish: float = 0.003
    p_flip_1to0: float = 0.003
    p_flip_0to1: float = 0.0006
    p_background_loss_per_image: float = 0.0002
    # side effects on register atoms, per MCM cycle
    p_register_loss_per_mcm: float = 0.0106
    p_register_dephase_per_mcm: float = 0.00245
    # gates
    p_cz_pauli: float = 0.0
    p_cz_loss: float = 0.0
    p_1q_pauli: float = 0.0
    p_partner_z_on_lost: float = 0.5
    # regular (terminal) register imaging
    p_readout_loss_regular: float = 0.0006
    p_distinguish_regular: float = 0.0003
    # logistics
    p_move_fail: float = 0.004
    # timing-based idle channels
    idle_dephase_rate: float = 0.006
    register_contrast_decay_rate: float = 0.029
    vacuum_lifetime_s: float = 30.0
    mcm_cycle_duration_s: float = 0.025
    # replenishment coherence cost (normalized Ramsey contrast)
    replenish_site_contrast: float = 0.981
    replenish_array_contrast: float = 0.956

    provenance: dict = dataclasses.field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        for f in fields(self):
            if f.name == "provenance":
                continue
            v = getattr(self, f.name)
            if f.name.startswith("p_") or f.name.endswith("_contrast"):
                if not 0.0 <= v <= 1.0:
                    raise ValueError(f"{f.name}={v} outside [0, 1]")
            elif v < 0:
                raise ValueError(f"{f.name}={v} must be nonnegative")

    # construction -----------------------------------------------------------
    @classmethod
    def default(cls) -> "NoiseModel":
        text = resources.files("mcmsim.data").joinpath("noise_defaults.yaml").read_text()
        return cls.from_yaml(text)

    @classmethod
    def noiseless(cls) -> "NoiseModel":
        zero = {f.name: 0.0 for f in fields(cls) if f.name.startswith("p_")}
        zero["p_partner_z_on_lost"] = 0.5
        return cls(
            **zero,
            idle_dephase_rate=0.0,
            register_contrast_decay_rate=0.0,
            vacuum_lifetime_s=math.inf,
            replenish_site_contrast=1.0,
            replenish_array_contrast=1.0,
        )

    def replace(self, **changes) -> "NoiseModel":
        prov = dict(self.provenance)
        for k in changes:
            prov.setdefault(k, {})
            prov[k] = {**prov[k], "provenance": "USER"}
        return dataclasses.replace(self, provenance=prov, **changes)

    def scaled(self, factor: float) -> "NoiseModel":
        """Multiply every error/loss probability by ``factor`` (clipped to 0.5)."""
        keep = {"p_partner_z_on_lost"}
        changes = {
            f.name: min(0.5, getattr(self, f.name) * factor)
            for f in fields(self)
            if f.name.startswith("p_") and f.name not in keep
        }
        return dataclasses.replace(self, **changes)

    # derived channel probabilities ---------------------------------------------
    @property
    def p_register_loss_dark_per_mcm(self) -> float:
        if math.isinf(self.vacuum_lifetime_s):
            return 0.0
        return -math.expm1(-self.mcm_cycle_duration_s / self.vacuum_lifetime_s)

    @property
    def p_register_dephase_dark_per_mcm(self) -> float:
        return -math.expm1(-self.register_contrast_decay_rate * self.mcm_cycle_duration_s) / 2

    def mcm_loss_probability(self, bright_images: int) -> float:
        return 1 - (1 - self.p_mcm_loss_bright) ** bright_images * (1 - self.p_background_loss_per_image) ** 2

    @property
    def p_reservoir_loss_per_mcm(self) -> float:
        """SZ atoms sit in |0>: dark in the first image, bright in the second."""
        return self.mcm_loss_probability(1)

    @property
    def p_readout_flip_mcm(self) -> float:
        """Bit-averaged flip probability; misclassified presence shows up as loss instead."""
        return (self.p_flip_1to0 + self.p_flip_0to1) / 2

    @property
    def p_readout_flip_regular(self) -> float:
        return (self.p_flip_1to0 + self.p_flip_0to1) / 2

    # serialization --------------------------------------------------------------
    def to_dict(self) -> dict:
        params = {}
        for f in fields(self):
            if f.name == "provenance":
                continue
            entry = {"value": getattr(self, f.name)}
            entry.update(self.provenance.get(f.name, {}))
            params[f.name] = entry
        return {"schema": SCHEMA, "parameters": params}

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, data: dict) -> "NoiseModel":
        if data.get("schema", SCHEMA) != SCHEMA:
            raise ValueError(f"unsupported noise schema {data.get('schema')!r}")
        params = data.get("parameters", data)
        known = {f.name for f in fields(cls)} - {"provenance"}
        values, prov = {}, {}
        for name, entry in params.items():
            if name == "schema":
                continue
            if name not in known:
                raise ValueError(f"unknown noise parameter {name!r}")
            if isinstance(entry, dict):
                values[name] = float(entry["value"])
                meta = {k: v for k, v in entry.items() if k != "value"}
                tag = meta.get("provenance")
                if tag is not None and tag not in PROVENANCE_TAGS:
                    raise ValueError(f"{name}: unknown provenance tag {tag!r}")
                if tag == "CALIBRATED" and not meta.get("calibration_target"):
                    raise ValueError(f"{name}: CALIBRATED values must state a calibration_target")
                prov[name] = meta
            else:
                values[name] = float(entry)
        return cls(**values, provenance=prov)

    @classmethod
    def from_yaml(cls, text: str) -> "NoiseModel":
        return cls.from_dict(yaml.safe_load(text))

    @classmethod
    def load(cls, path: str | Path) -> "NoiseModel":
        return cls.from_yaml(Path(path).read_text())


def xor_prob(p: float, q: float) -> float:
    """Probability that exactly one of two independent flips happens."""
    return p * (1 - q) + q * (1 - p)
