"""Flat key=value run configuration with typo-safe keys and seeded
determinism.

Every key has a default; unknown keys raise. One master seed fans out to
per-stage seeds via sha256(master:stage), so a single --seed reproduces
the whole run. LCZ_THREADS caps internal worker count (0 = auto); the
current implementation is sequential, so the cap is honored trivially.
"""

from __future__ import annotations

import hashlib
import os

from .autogeolabel import LabelRules
from .errors import ParseError, UsageError
from .rasterizer import GridSpec
from .regressor import RegConfig
from .synthcity import SceneParams, TemperatureLaw
from .vae import KldSchedule, VaeConfig

DEFAULTS = {
    "seed": 0,
    "grid.width": 16,
    "grid.height": 16,
    "grid.cell_size": 1.0,
    "vae.latent_dim": 32,
    "vae.hidden": 256,
    "vae.arch": "mlp",
    "vae.epochs": 40,
    "vae.lr": 1e-3,
    "vae.batch_size": 32,
    "vae.ramp_epochs": 50,
    "vae.lambda_max": 1e-5,
    "reg.hidden1": 128,
    "reg.hidden2": 32,
    "reg.activation": "relu",
    "reg.epochs": 400,
    "reg.lr": 1e-3,
    "reg.batch_size": 32,
    "reg.holdout_fraction": 0.2,
    "perturb.mode": "closed_form",
    "perturb.dt_sweep": "0,1,3,5,10,-1,-3,-5,-10",
    "perturb.g_floor": 1e-8,
    "perturb.zeta": 0.0,       # 0 = automatic step scale in iterative mode
    "perturb.steps": 100,
    "perturb.n_scenes": 30,    # held-out scenes to perturb
    "labels.veg_zstd_min": 0.5,
    "labels.veg_multiret_min": 0.3,
    "labels.bld_height_min": 3.0,
    "labels.bld_zstd_max": 0.4,
    "synth.n_scenes": 500,
    "synth.tree_density": 0.05,
    "synth.building_density": 0.008,
    "synth.points_per_m2": 8.0,
    "synth.t_base": 295.0,
    "synth.k_veg": 8.0,
    "synth.noise_sigma": 0.5,
    "analysis.alpha": 0.05,
}


def stage_seed(master: int, stage: str) -> int:
    digest = hashlib.sha256(f"{master}:{stage}".encode()).digest()
    return int.from_bytes(digest[:8], "big")


def worker_count() -> int:
    """Worker cap from LCZ_THREADS (0 or unset = auto)."""
    raw = os.environ.get("LCZ_THREADS", "0")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"LCZ_THREADS must be an integer, got {raw!r}") from None
    return n if n > 0 else os.cpu_count() or 1


def _coerce(key: str, text: str):
    default = DEFAULTS[key]
    try:
        if isinstance(default, bool):
            return text.lower() in ("1", "true", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise UsageError(f"bad value {text!r} for key {key!r}") from None


class RunConfig:
    def __init__(self, values=None):
        self.values = dict(DEFAULTS)
        for key, val in (values or {}).items():
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            self.values[key] = val

    @classmethod
    def from_file(cls, path=None, overrides=None) -> "RunConfig":
        values = {}
        if path is not None:
            with open(path) as fh:
                for lineno, line in enumerate(fh, start=1):
                    stripped = line.strip()
                    if not stripped or stripped.startswith("#"):
                        continue
                    if "=" not in stripped:
                        raise ParseError(f"expected key=value, got {stripped!r}", line=lineno)
                    key, _, text = stripped.partition("=")
                    key = key.strip()
                    if key not in DEFAULTS:
                        raise UsageError(f"unknown config key {key!r} (line {lineno})")
                    values[key] = _coerce(key, text.strip())
        for key, text in (overrides or {}).items():
            if key not in DEFAULTS:
                raise UsageError(f"unknown config key {key!r}")
            values[key] = _coerce(key, text) if isinstance(text, str) else text
        return cls(values)

    def __getitem__(self, key):
        if key not in self.values:
            raise UsageError(f"unknown config key {key!r}")
        return self.values[key]

    def resolved_text(self) -> str:
        return "".join(f"{k}={self.values[k]}\n" for k in sorted(self.values))

    # typed views -----------------------------------------------------

    def grid_spec(self) -> GridSpec:
        return GridSpec(0.0, 0.0, self["grid.cell_size"],
                        self["grid.width"], self["grid.height"])

    def vae_config(self) -> VaeConfig:
        return VaeConfig(
            latent_dim=self["vae.latent_dim"], hidden=self["vae.hidden"],
            arch=self["vae.arch"], epochs=self["vae.epochs"], lr=self["vae.lr"],
            batch_size=self["vae.batch_size"],
            schedule=KldSchedule(self["vae.ramp_epochs"], self["vae.lambda_max"]),
            seed=stage_seed(self["seed"], "vae"),
        )

    def reg_config(self) -> RegConfig:
        return RegConfig(
            hidden=(self["reg.hidden1"], self["reg.hidden2"]),
            activation=self["reg.activation"], epochs=self["reg.epochs"],
            lr=self["reg.lr"], batch_size=self["reg.batch_size"],
            holdout_fraction=self["reg.holdout_fraction"],
            seed=stage_seed(self["seed"], "reg"),
        )

    def label_rules(self) -> LabelRules:
        return LabelRules(
            veg_zstd_min=self["labels.veg_zstd_min"],
            veg_multiret_min=self["labels.veg_multiret_min"],
            bld_height_min=self["labels.bld_height_min"],
            bld_zstd_max=self["labels.bld_zstd_max"],
        )

    def scene_params(self) -> SceneParams:
        return SceneParams(
            grid=self.grid_spec(),
            tree_density=self["synth.tree_density"],
            building_density=self["synth.building_density"],
            points_per_m2=self["synth.points_per_m2"],
            seed=stage_seed(self["seed"], "synth"),
        )

    def temperature_law(self) -> TemperatureLaw:
        return TemperatureLaw(
            t_base=self["synth.t_base"], k_veg=self["synth.k_veg"],
            noise_sigma=self["synth.noise_sigma"],
            seed=stage_seed(self["seed"], "law"),
        )

    def dt_sweep(self) -> list:
        raw = self["perturb.dt_sweep"]
        try:
            return [float(tok) for tok in str(raw).split(",") if tok.strip() != ""]
        except ValueError:
            raise UsageError(f"bad perturb.dt_sweep {raw!r}") from None
