"""Run configuration: plain key = value text with units in the key names.

Lines starting with ``#`` are comments. Unknown keys are rejected so typos
do not silently fall back to defaults.
"""
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ArtifactIOError, ConfigurationError
from .fem import MaterialConfig, PressureProgram, default_program, lattice_modulus
from .geometry import UNIT_CELL_MM, build_design

DEFAULT_RESOLUTION_CELLS = 5


def _parse_bool(v):
    s = v.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _parse_floats(v):
    return tuple(float(x) for x in v.replace(",", " ").split())


def _parse_resolution(v):
    vals = _parse_floats(v)
    if len(vals) not in (1, 3):
        raise ValueError("expected one value or three per-axis values")
    return vals[0] if len(vals) == 1 else vals


# key -> (attribute, parser)
_KEYS = {
    "scale": ("scale", float),
    "chamber_count": ("chamber_count", int),
    "fingers": ("fingers", int),
    "resolution_mm": ("resolution_mm", _parse_resolution),
    "membrane_band_mm": ("membrane_band_mm", float),
    "e_lat_kpa": ("e_lat_kpa", float),
    "e_mem_kpa": ("e_mem_kpa", float),
    "e_sens_kpa": ("e_sens_kpa", float),
    "poisson_ratio": ("poisson_ratio", float),
    "pressure_csv": ("pressure_csv", str),
    "k_steps": ("k", int),
    "j_samples": ("j", int),
    "workers": ("workers", int),
    "output_dir": ("output_dir", str),
    "sweep_scales": ("sweep_scales", _parse_floats),
    "sweep_gripper": ("sweep_gripper", _parse_bool),
    "random_free": ("random_free", _parse_bool),
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on. ``None`` means "derive from the design"."""

    scale: float = 1.0
    chamber_count: int = 6
    fingers: int = 1
    resolution_mm: object = None
    membrane_band_mm: float = None
    e_lat_kpa: float = None
    e_mem_kpa: float = 1000.0
    e_sens_kpa: float = 3000.0
    poisson_ratio: float = 0.45
    pressure_csv: str = None
    k: int = 50
    j: int = 100
    workers: int = None
    output_dir: str = "musense_out"
    sweep_scales: tuple = (0.75, 1.0, 1.5)
    sweep_gripper: bool = True
    random_free: bool = True
    base_dir: str = field(default=".", compare=False)

    # derived views -------------------------------------------------------
    def design(self):
        return build_design(self.scale, self.chamber_count, self.fingers)

    def resolution(self):
        if self.resolution_mm is None:
            return self.scale * UNIT_CELL_MM / DEFAULT_RESOLUTION_CELLS
        return self.resolution_mm

    def material(self):
        e_lat = lattice_modulus(self.scale) if self.e_lat_kpa is None else self.e_lat_kpa
        return MaterialConfig(E_lat=e_lat, E_mem=self.e_mem_kpa, E_sens=self.e_sens_kpa,
                              nu=self.poisson_ratio)

    def program(self):
        if self.pressure_csv is None:
            return default_program()
        path = self.pressure_csv
        if not os.path.isabs(path):
            path = os.path.join(self.base_dir, path)
        try:
            return PressureProgram.from_csv(path)
        except OSError as exc:
            raise ArtifactIOError(f"cannot read pressure CSV {path}: {exc.strerror or exc}") from exc

    def worker_count(self):
        return self.workers if self.workers else (os.cpu_count() or 1)

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw)

    def validate(self):
        """Check every field against its owner's preconditions; no meshing or solving."""
        self.design()
        res = np.broadcast_to(np.asarray(self.resolution(), dtype=float), (3,))
        if not np.all(res > 0):
            raise ConfigurationError(f"resolution_mm: must be positive, got {self.resolution_mm!r}")
        if self.membrane_band_mm is not None and not self.membrane_band_mm > 0:
            raise ConfigurationError(f"membrane_band_mm: must be positive, got {self.membrane_band_mm!r}")
        self.material()
        self.program()
        if self.k < 2:
            raise ConfigurationError(f"k_steps: needs at least 2, got {self.k}")
        if self.j < 2:
            raise ConfigurationError(f"j_samples: needs at least 2, got {self.j}")
        if self.workers is not None and self.workers < 1:
            raise ConfigurationError(f"workers: must be at least 1, got {self.workers}")
        if not self.sweep_scales or any(not s > 0 for s in self.sweep_scales):
            raise ConfigurationError(f"sweep_scales: need positive values, got {self.sweep_scales!r}")
        if not self.random_free:
            raise ConfigurationError("random_free: no stochastic components exist, must be true")
        return self

    def fingerprint(self):
        """Hash of everything that affects the numbers (not workers or paths)."""
        prog = self.program()
        res = np.broadcast_to(np.asarray(self.resolution(), dtype=float), (3,))
        payload = {
            "design": asdict(self.design()),
            "resolution_mm": [float(v) for v in res],
            "membrane_band_mm": self.membrane_band_mm,
            "material": asdict(self.material()),
            "program": [[float(t), float(p)] for t, p in zip(prog.times, prog.pressures)],
            "k": self.k,
            "j": self.j,
        }
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def parse_config(text, base_dir="."):
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in _KEYS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        attr, parse = _KEYS[key]
        if val.lower() in ("", "auto", "none"):
            continue
        try:
            values[attr] = parse(val)
        except ValueError as exc:
            raise ConfigurationError(f"{key}: cannot parse {val!r} ({exc})") from None
    return RunConfig(base_dir=base_dir, **values)


def load_config(path):
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text, base_dir=os.path.dirname(os.path.abspath(path)))


def format_config(cfg, exclude=()):
    """Inverse of parse_config for the fields that were set, minus ``exclude`` keys."""
    inv = {attr: key for key, (attr, _) in _KEYS.items()}
    lines = []
    for attr, key in inv.items():
        v = getattr(cfg, attr)
        if v is None or key in exclude:
            continue
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, tuple):
            v = ", ".join(f"{x:g}" for x in v)
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"

