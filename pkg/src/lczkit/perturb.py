"""Stage 3: push a requested temperature variation into latent space and
decode the counterfactual scene.

The closed form takes the unique gradient-parallel step
delta_c = (delta_t / ||g||^2) * g, which satisfies delta_c . g = delta_t
and has minimal norm among all steps doing so. The iterative mode walks
c along the recomputed gradient until the predicted change reaches the
request. Note this is NOT a function inverse of the regressor.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import regressor as reg
from . import vae as vae_mod
from .errors import DataError, DegenerateGradientError, NumericError, UsageError

DEFAULT_G_FLOOR = 1e-8


@dataclass
class Perturbation:
    delta_t: float
    mode: str = "closed_form"      # "closed_form" | "iterative"
    zeta: float | None = None      # iterative step scale; default 0.1*|dt|/||g0||
    steps: int = 100
    g_floor: float = DEFAULT_G_FLOOR

    def __post_init__(self):
        if not np.isfinite(self.delta_t):
            raise UsageError("delta_t must be finite")
        if self.mode not in ("closed_form", "iterative"):
            raise UsageError(f"unknown perturbation mode {self.mode!r}")
        if self.mode == "iterative" and self.steps < 1:
            raise UsageError("iterative mode needs steps >= 1")
        if self.g_floor <= 0:
            raise UsageError("g_floor must be > 0")


@dataclass
class CounterfactualScene:
    original: np.ndarray          # normalized input stack (C, H, W)
    reconstruction: np.ndarray    # D(E(s)) at delta_t = 0
    counterfactual: np.ndarray    # D(c + delta_c)
    delta_c: np.ndarray
    achieved_dt: float            # R(c + delta_c) - R(c), reported honestly
    requested_dt: float
    scene_id: str = ""


@dataclass
class BatchResult:
    scenes: list                  # CounterfactualScene, scene-major order
    failures: list = field(default_factory=list)  # (scene_id, delta_t, message)


def delta_c(g, delta_t, g_floor=DEFAULT_G_FLOOR) -> np.ndarray:
    """Gradient-parallel latent step: (delta_t / ||g||^2) * g."""
    g = np.asarray(g, dtype=float)
    norm = float(np.linalg.norm(g))
    if norm < g_floor:
        raise DegenerateGradientError(
            f"gradient norm {norm:.3e} below floor {g_floor:.3e}; regressor is locally insensitive"
        )
    return (float(delta_t) / (norm * norm)) * g


def perturb_scene(vae, regressor, s, perturbation: Perturbation) -> CounterfactualScene:
    """Encode s, step the latent code for the requested delta_t, decode."""
    s_arr = s.channels if hasattr(s, "channels") else np.asarray(s, dtype=float)
    code = vae_mod.encode_mean(vae, s_arr)
    t0 = reg.predict(regressor, code)
    reconstruction = vae_mod.decode(vae, code)

    if perturbation.mode == "closed_form":
        g = reg.grad_wrt_code(regressor, code)
        step = delta_c(g, perturbation.delta_t, perturbation.g_floor)
        new_code = code + step
    else:
        new_code = code.copy()
        dt = perturbation.delta_t
        if dt != 0.0:
            g0 = reg.grad_wrt_code(regressor, new_code)
            norm0 = float(np.linalg.norm(g0))
            if norm0 < perturbation.g_floor:
                raise DegenerateGradientError(
                    f"gradient norm {norm0:.3e} below floor {perturbation.g_floor:.3e}"
                )
            zeta = perturbation.zeta if perturbation.zeta is not None else 0.1 * abs(dt) / norm0
            zeta = float(np.copysign(zeta, dt))
            for _ in range(perturbation.steps):
                g = reg.grad_wrt_code(regressor, new_code)
                if float(np.linalg.norm(g)) < perturbation.g_floor:
                    break  # flat region; stop with what we achieved
                new_code = new_code + zeta * g
                if abs(reg.predict(regressor, new_code) - t0) >= abs(dt):
                    break
        step = new_code - code

    counterfactual = vae_mod.decode(vae, new_code)
    if not np.all(np.isfinite(counterfactual)):
        raise NumericError("decoded counterfactual is non-finite")
    achieved = reg.predict(regressor, new_code) - t0
    return CounterfactualScene(
        original=np.asarray(s_arr, dtype=float).copy(),
        reconstruction=reconstruction,
        counterfactual=counterfactual,
        delta_c=step,
        achieved_dt=float(achieved),
        requested_dt=float(perturbation.delta_t),
    )


def batch_perturb(vae, regressor, scenes, delta_ts, mode="closed_form",
                  g_floor=DEFAULT_G_FLOOR, zeta=None, steps=100) -> BatchResult:
    """All scenes x all delta_t values; per-scene failures are collected,
    not fatal, unless every scene fails."""
    scenes = list(scenes)
    if not scenes:
        raise UsageError("batch_perturb: empty scene list")
    results, failures = [], []
    failed_scenes = set()
    for i, scene in enumerate(scenes):
        scene_id, stack = scene if isinstance(scene, tuple) else (f"scene_{i}", scene)
        for dt in delta_ts:
            pert = Perturbation(dt, mode=mode, g_floor=g_floor, zeta=zeta, steps=steps)
            try:
                cf = perturb_scene(vae, regressor, stack, pert)
            except DegenerateGradientError as exc:
                failures.append((scene_id, float(dt), str(exc)))
                failed_scenes.add(scene_id)
                continue
            cf.scene_id = scene_id
            results.append(cf)
    if list(delta_ts) and len(failed_scenes) == len(scenes) and not results:
        raise DataError("batch_perturb: every scene failed with a degenerate gradient")
    return BatchResult(results, failures)
