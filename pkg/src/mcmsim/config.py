"""Experiment configuration files: schema validation, noise resolution and hashing."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .sim.calibrate import distillation_noise
from .sim.noise import NoiseModel

SCHEMA = "mcmsim.experiment/1"
KINDS = ("repcode", "distill", "gerb", "ramsey_mcm", "replenish", "leakage_map")
ENGINES = ("frames", "tableau")
NOISE_PRESETS = ("default", "noiseless", "distillation")

# allowed spec keys and defaults per kind
SPEC_DEFAULTS = {
    "repcode": {"distance": 3, "cycles": 3, "phase_sensitive": False, "seed": 0, "use_loss": True},
    "distill": {"encoded": True, "bases": ["XX", "YY", "ZZ"], "max_retries": 20, "antiferro_variant": False},
    "gerb": {"blocks": [0, 5, 10, 20, 40], "pair_count": 1},
    "ramsey_mcm": {"cycles": [0, 10, 20, 30, 40], "include_light": True},
    "replenish": {"lz_yield": 0.5, "sz_vacancies": 32},
    "leakage_map": {
        "register_mhz": [-200.0, 200.0, 5],
        "imaging_mhz": [-150.0, 50.0, 41],
        "duration_s": 7e-3,
        "register_scale": 1.0,
        "levels": None,
    },
}
TOP_KEYS = {"schema", "kind", "spec", "noise", "shots", "seed", "output", "engine", "threads"}
NOISE_KEYS = {"preset", "path", "overrides"}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending key path."""


@dataclass
class ExperimentConfig:
    kind: str
    spec: dict = field(default_factory=dict)
    noise: dict = field(default_factory=lambda: {"preset": "default", "path": None, "overrides": {}})
    shots: int = 1000
    seed: int = 0
    output: str = "out"
    engine: str = "frames"
    threads: int = 1
    base_dir: Path = field(default=Path("."), compare=False, repr=False)

    def to_dict(self) -> dict:
        return {
            "schema": SCHEMA,
            "kind": self.kind,
            "spec": dict(self.spec),
            "noise": dict(self.noise),
            "shots": self.shots,
            "seed": self.seed,
            "output": self.output,
            "engine": self.engine,
        }

    @property
    def config_hash(self) -> str:
        """Hash of the normalized config; thread count and output path do not enter."""
        d = self.to_dict()
        d.pop("output")
        text = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def to_yaml(self) -> str:
        return yaml.safe_dump({"config_hash": self.config_hash, **self.to_dict()}, sort_keys=False)

    def noise_model(self) -> NoiseModel:
        n = self.noise
        if n.get("path"):
            p = Path(n["path"])
            base = NoiseModel.load(p if p.is_absolute() else self.base_dir / p)
        elif n["preset"] == "noiseless":
            base = NoiseModel.noiseless()
        else:
            base = NoiseModel.default()
        if n.get("overrides"):
            base = base.replace(**n["overrides"])
        if n["preset"] == "distillation":
            base = distillation_noise(base)
        return base


def _require(cond, path, msg):
    if not cond:
        raise ConfigError(f"{path}: {msg}")


def _check_keys(data: dict, allowed, path: str):
    for k in data:
        if k not in allowed:
            hint = ", ".join(sorted(allowed))
            raise ConfigError(f"{path}.{k}: unknown key (allowed: {hint})" if path else f"{k}: unknown key (allowed: {hint})")


def _int(v, path, lo=None):
    _require(isinstance(v, int) and not isinstance(v, bool), path, f"expected an integer, got {v!r}")
    if lo is not None:
        _require(v >= lo, path, f"must be >= {lo}")
    return v


def _bool(v, path):
    _require(isinstance(v, bool), path, f"expected true/false, got {v!r}")
    return v


def _number(v, path):
    _require(isinstance(v, (int, float)) and not isinstance(v, bool), path, f"expected a number, got {v!r}")
    return float(v)


def _int_list(v, path):
    _require(isinstance(v, list) and len(v) >= 3, path, "expected a list of at least 3 integers")
    return [_int(x, f"{path}[{i}]", 0) for i, x in enumerate(v)]


def _grid(v, path):
    _require(isinstance(v, list) and len(v) == 3, path, "expected [start, stop, num]")
    return [_number(v[0], f"{path}[0]"), _number(v[1], f"{path}[1]"), _int(v[2], f"{path}[2]", 1)]


def _validate_spec(kind: str, spec: dict) -> dict:
    _require(isinstance(spec, dict), "spec", "expected a mapping")
    _check_keys(spec, SPEC_DEFAULTS[kind], "spec")
    out = {**SPEC_DEFAULTS[kind], **spec}
    if kind == "repcode":
        d = _int(out["distance"], "spec.distance")
        _require(d >= 3 and d % 2 == 1, "spec.distance", "must be odd and >= 3")
        _int(out["cycles"], "spec.cycles", 1)
        _bool(out["phase_sensitive"], "spec.phase_sensitive")
        _int(out["seed"], "spec.seed", 0)
        _bool(out["use_loss"], "spec.use_loss")
    elif kind == "distill":
        _bool(out["encoded"], "spec.encoded")
        _bool(out["antiferro_variant"], "spec.antiferro_variant")
        _int(out["max_retries"], "spec.max_retries", 1)
        bases = out["bases"]
        _require(isinstance(bases, list) and bases, "spec.bases", "expected a non-empty list")
        for i, b in enumerate(bases):
            _require(b in ("XX", "YY", "ZZ"), f"spec.bases[{i}]", f"expected XX, YY or ZZ, got {b!r}")
    elif kind == "gerb":
        _int_list(out["blocks"], "spec.blocks")
        _int(out["pair_count"], "spec.pair_count", 1)
    elif kind == "ramsey_mcm":
        _int_list(out["cycles"], "spec.cycles")
        _bool(out["include_light"], "spec.include_light")
    elif kind == "replenish":
        y = _number(out["lz_yield"], "spec.lz_yield")
        _require(0 <= y <= 1, "spec.lz_yield", "must be in [0, 1]")
        v = _int(out["sz_vacancies"], "spec.sz_vacancies", 0)
        _require(v <= 32, "spec.sz_vacancies", "must be <= 32")
    elif kind == "leakage_map":
        out["register_mhz"] = _grid(out["register_mhz"], "spec.register_mhz")
        out["imaging_mhz"] = _grid(out["imaging_mhz"], "spec.imaging_mhz")
        _require(_number(out["duration_s"], "spec.duration_s") > 0, "spec.duration_s", "must be > 0")
        _number(out["register_scale"], "spec.register_scale")
        _require(out["levels"] is None or isinstance(out["levels"], str), "spec.levels", "expected a path")
    return out


def _validate_noise(noise) -> dict:
    if noise is None:
        noise = "default"
    if isinstance(noise, str):
        _require(noise in NOISE_PRESETS, "noise", f"expected one of {NOISE_PRESETS} or a mapping, got {noise!r}")
        return {"preset": noise, "path": None, "overrides": {}}
    _require(isinstance(noise, dict), "noise", "expected a preset name or a mapping")
    _check_keys(noise, NOISE_KEYS, "noise")
    preset = noise.get("preset", "default")
    _require(preset in NOISE_PRESETS, "noise.preset", f"expected one of {NOISE_PRESETS}, got {preset!r}")
    path = noise.get("path")
    _require(path is None or isinstance(path, str), "noise.path", "expected a file path")
    _require(not (path and preset == "noiseless"), "noise.path", "cannot be combined with the noiseless preset")
    overrides = noise.get("overrides") or {}
    _require(isinstance(overrides, dict), "noise.overrides", "expected a mapping")
    fields = set(NoiseModel.default().to_dict()["parameters"])
    for k, v in overrides.items():
        _require(k in fields, f"noise.overrides.{k}", "unknown noise parameter")
        _number(v, f"noise.overrides.{k}")
    return {"preset": preset, "path": path, "overrides": dict(overrides)}


def parse_config(data, base_dir: Path | str = ".") -> ExperimentConfig:
    _require(isinstance(data, dict), "<root>", "expected a mapping")
    _check_keys(data, TOP_KEYS, "")
    _require(data.get("schema", SCHEMA) == SCHEMA, "schema", f"expected {SCHEMA!r}, got {data.get('schema')!r}")
    _require("kind" in data, "kind", "missing")
    kind = data["kind"]
    _require(kind in KINDS, "kind", f"expected one of {KINDS}, got {kind!r}")
    engine = data.get("engine", "frames")
    _require(engine in ENGINES, "engine", f"expected one of {ENGINES}, got {engine!r}")
    _require(engine == "frames" or kind == "repcode", "engine", "the tableau engine is only wired for repcode runs")
    output = data.get("output", "out")
    _require(isinstance(output, str), "output", "expected a directory path")
    cfg = ExperimentConfig(
        kind=kind,
        spec=_validate_spec(kind, data.get("spec") or {}),
        noise=_validate_noise(data.get("noise")),
        shots=_int(data.get("shots", 1000), "shots", 1),
        seed=_int(data.get("seed", 0), "seed", 0),
        output=output,
        engine=engine,
        threads=_int(data.get("threads", 1), "threads", 1),
        base_dir=Path(base_dir),
    )
    if cfg.noise["path"]:
        p = Path(cfg.noise["path"])
        _require((p if p.is_absolute() else cfg.base_dir / p).exists(), "noise.path", f"file not found: {p}")
    try:
        cfg.noise_model()
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"noise: {exc}") from exc
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from exc
    return parse_config(data, path.parent)
