"""Run configuration: plain-text key=value files with sections, strict
schemas, canonical hashing and run manifests.

The canonical serialization sorts sections and keys, so the configuration
hash is stable across platforms and key order; reruns of a subcommand with
the same (config, seed) are expected to reproduce identical output
checksums, which the manifest records.
"""

from __future__ import annotations

import configparser
import datetime
import hashlib
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .solver import SolverConfig
from .structure import Scaling, StructureSpec

__all__ = ["ConfigError", "RunConfig", "parse_config", "RunManifest"]

VERSION = "0.1.0"


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _floats(text: str) -> tuple[float, ...]:
    return tuple(float(x) for x in text.split(",") if x.strip())


# schema: section -> key -> (parser, default-as-text)
SCHEMA: dict[str, dict[str, tuple]] = {
    "structure": {
        "d": (int, "3"),
        "alpha": (str, "auto"),        # exact rational like -51/20, or auto
        "kappa": (str, "1/100"),
        "gamma_cut": (str, "2"),
        "max_levels": (int, "8"),
        "basis_cut": (str, "auto"),
        "feeder_cut": (str, "auto"),
    },
    "kernels": {
        "d": (int, "2"),
        "points_per_unit": (int, "256"),
        "n_levels": (int, "8"),
        "heat_points_per_unit": (int, "64"),
        "heat_time_points": (int, "128"),
        "heat_n_levels": (int, "3"),
        "moment_order": (int, "2"),
        "nu": (float, "1.0"),
        "k_max": (int, "2"),
    },
    "solver": {
        "nu": (float, "1.0"),
        "N": (int, "64"),
        "dt": (float, "1e-4"),
        "T": (float, "1.0"),
        "eta": (float, "-0.4"),
        "dealias": (str, "2/3"),
        "r_max": (float, "1e6"),
        "wick": (_bool, "false"),
        "linear_only": (_bool, "false"),
        "seed": (int, "0"),
    },
    "experiment": {
        "n_paths": (int, "1000"),
        "t": (float, "0.5"),
        "t0": (float, "0.0"),          # 0 = automatic window
        "eps": (float, "0.02"),
        "fd_paths": (int, "0"),        # 0 = n_paths // 4
        "distances": (_floats, "0.1,0.05,0.025"),
        "widths": (_floats, "3.0,1.5,0.75"),
        "dtype": (str, "complex128"),
        "batch": (int, "16"),
        "monitor_every": (int, "8"),
        "noise_mode": (str, "per-path"),
        "u0": (str, "rough"),
        "noise": (str, "white"),
        "burn_in": (int, "2000"),
        "stokes_paths": (int, "50"),
        "stokes_steps": (int, "10000"),
        "stokes_dt": (float, "0.01"),
        "stokes_nu": (float, "1.0"),
        "snapshots": (_floats, ""),
    },
    "output": {
        "dir": (str, ""),
    },
}


@dataclass
class RunConfig:
    """Validated configuration values for one run."""

    values: dict = field(default_factory=dict)

    def get(self, section: str, key: str):
        return self.values[section][key]

    def to_ini(self) -> str:
        """Serialize as a config file that reparses to the same hash."""
        lines = []
        for section in sorted(self.values):
            lines.append(f"[{section}]")
            for key in sorted(self.values[section]):
                val = self.values[section][key]
                if isinstance(val, tuple):
                    val = ",".join(str(v) for v in val)
                lines.append(f"{key} = {val}")
            lines.append("")
        return "\n".join(lines)

    def canonical_text(self) -> str:
        lines = []
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                lines.append(f"{section}.{key} = {self.values[section][key]!r}")
        return "\n".join(lines) + "\n"

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:16]

    # ---- typed views -----------------------------------------------------

    def structure_spec(self) -> StructureSpec:
        s = self.values["structure"]
        d = s["d"]
        alpha = s["alpha"]
        if alpha == "auto":
            alpha = {3: Fraction(-51, 20), 2: Fraction(-201, 100)}.get(d)
            if alpha is None:
                raise ConfigError(f"no default alpha for d={d}")
        else:
            alpha = Fraction(alpha)
        try:
            return StructureSpec(Scaling(2, d), alpha,
                                 kappa=Fraction(s["kappa"]),
                                 gamma_cut=Fraction(s["gamma_cut"]),
                                 max_levels=s["max_levels"])
        except ValueError as exc:
            raise ConfigError(f"structure: {exc}") from exc

    def structure_cuts(self):
        s = self.values["structure"]
        basis = None if s["basis_cut"] == "auto" else Fraction(s["basis_cut"])
        feeder = None if s["feeder_cut"] == "auto" else Fraction(s["feeder_cut"])
        return basis, feeder

    def solver_config(self, **overrides) -> SolverConfig:
        s = dict(self.values["solver"])
        s.update(overrides)
        try:
            return SolverConfig(nu=s["nu"], N=s["N"], dt=s["dt"], T=s["T"],
                                eta=s["eta"], dealias=s["dealias"],
                                r_max=s["r_max"], wick_enabled=s["wick"],
                                linear_only=s["linear_only"], seed=s["seed"])
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from exc

    def np_dtype(self):
        import numpy as np

        name = self.values["experiment"]["dtype"]
        if name not in ("complex128", "complex64"):
            raise ConfigError(f"experiment.dtype must be complex128 or complex64, got {name}")
        return np.complex128 if name == "complex128" else np.complex64


def parse_config(path: str | Path | None = None,
                 overrides: dict | None = None) -> RunConfig:
    """Load and validate a configuration.

    ``path`` may be None (all defaults).  ``overrides`` is a mapping
    {"section.key": "text value"} applied after the file.  Unknown sections
    or keys are rejected with the offending name.
    """
    values = {sec: {k: parser(default) for k, (parser, default) in keys.items()}
              for sec, keys in SCHEMA.items()}
    raw: dict[str, dict[str, str]] = {}
    if path is not None:
        cp = configparser.ConfigParser()
        cp.optionxform = str  # keys are case-sensitive (N vs n)
        read = cp.read(str(path))
        if not read:
            raise ConfigError(f"config file not found: {path}")
        for sec in cp.sections():
            raw[sec] = dict(cp.items(sec))
    for dotted, text in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override key must be section.key, got {dotted!r}")
        sec, key = dotted.split(".", 1)
        raw.setdefault(sec, {})[key] = text
    for sec, kv in raw.items():
        if sec not in SCHEMA:
            raise ConfigError(f"unknown config section [{sec}]; "
                              f"known: {sorted(SCHEMA)}")
        for key, text in kv.items():
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in section [{sec}]; "
                                  f"known: {sorted(SCHEMA[sec])}")
            parser = SCHEMA[sec][key][0]
            try:
                values[sec][key] = parser(text)
            except ConfigError:
                raise
            except Exception as exc:
                raise ConfigError(
                    f"[{sec}] {key} = {text!r}: {exc}") from exc
    cfg = RunConfig(values=values)
    # eager validation of the typed views so bad values fail at parse time
    cfg.structure_spec()
    cfg.solver_config()
    cfg.np_dtype()
    return cfg


@dataclass
class RunManifest:
    """Record of one run: configuration hash, versions, outputs, checksums."""

    command: str
    config_hash: str
    seed: int
    version: str = VERSION
    started: str = ""
    finished: str = ""
    outputs: list = field(default_factory=list)

    def start(self) -> "RunManifest":
        self.started = datetime.datetime.now(datetime.timezone.utc).isoformat()
        return self

    def add_output(self, path) -> None:
        from .gridio import sha256_file

        p = Path(path)
        self.outputs.append({"name": p.name, "sha256": sha256_file(p),
                             "bytes": p.stat().st_size})

    def write(self, path) -> Path:
        self.finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
        p = Path(path)
        p.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")
        return p
