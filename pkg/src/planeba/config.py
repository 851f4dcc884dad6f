"""Run configuration: declared key=value settings with CLI overrides.

Defaults follow the reference indoor setup (damping 0.01, 20 iterations,
Huber threshold 0.02 m^2, 1 m root voxels at depth 4, 10-keyframe window).
Unknown keys are rejected so typos fail loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .solver import LmConfig
from .voxel_map import VoxelMapConfig


@dataclass
class RunConfig:
    # robust kernel
    robust_kernel: str = "huber"       # huber | none
    robust_delta: float = 0.02         # m^2 (0.1 suits outdoor scale)
    robust_clamp: str = "auto"         # auto | always
    # Levenberg-Marquardt
    lm_lambda_init: float = 0.01
    lm_max_iter: int = 20
    lm_cost_tol: float = 1e-8
    lm_step_tol: float = 1e-10
    lm_freeze_lambda: bool = False
    lm_gauss_newton: bool = False
    gauge_fixed_frame: int = 0
    # voxel map
    map_r_max: float = 1.0             # 2.0 suits outdoor scale
    map_d_max: int = 4
    map_n_min: int = 10
    map_planarity_lam3: float = 0.0025
    map_planarity_ratio: float = 0.1
    window_size: int = 10
    # keyframe gating (off for static-scan inputs)
    keyframe_gating: bool = False
    keyframe_th_time: float = 0.25     # s
    keyframe_th_pos: float = 0.1       # m
    keyframe_th_deg: float = 0.05      # degrees
    # evaluation
    eval_align: str = "se3"            # se3 | translation | none
    eval_assoc_tol: float = 0.02       # s
    eval_voxel: float = 0.1            # m
    seed: int = 0

    def lm_config(self) -> LmConfig:
        return LmConfig(
            lambda_init=self.lm_lambda_init,
            max_iter=self.lm_max_iter,
            cost_tol=self.lm_cost_tol,
            step_tol=self.lm_step_tol,
            freeze_lambda=self.lm_freeze_lambda,
            gauge_frame=self.gauge_fixed_frame,
            gauss_newton=self.lm_gauss_newton,
            clamp=self.robust_clamp,
        )

    def voxel_config(self) -> VoxelMapConfig:
        return VoxelMapConfig(
            r_max=self.map_r_max,
            d_max=self.map_d_max,
            n_min=self.map_n_min,
            planarity_lam3=self.map_planarity_lam3,
            planarity_ratio=self.map_planarity_ratio,
        )


# "section.key" names as they appear in config files and --set flags
_KEY_TO_FIELD = {
    "robust.kernel": "robust_kernel",
    "robust.delta": "robust_delta",
    "robust.clamp": "robust_clamp",
    "lm.lambda_init": "lm_lambda_init",
    "lm.max_iter": "lm_max_iter",
    "lm.cost_tol": "lm_cost_tol",
    "lm.step_tol": "lm_step_tol",
    "lm.freeze_lambda": "lm_freeze_lambda",
    "lm.gauss_newton": "lm_gauss_newton",
    "gauge.fixed_frame": "gauge_fixed_frame",
    "map.r_max": "map_r_max",
    "map.d_max": "map_d_max",
    "map.n_min": "map_n_min",
    "map.planarity_lam3": "map_planarity_lam3",
    "map.planarity_ratio": "map_planarity_ratio",
    "window.size": "window_size",
    "keyframe.gating": "keyframe_gating",
    "keyframe.th_time": "keyframe_th_time",
    "keyframe.th_pos": "keyframe_th_pos",
    "keyframe.th_deg": "keyframe_th_deg",
    "eval.align": "eval_align",
    "eval.assoc_tol": "eval_assoc_tol",
    "eval.voxel": "eval_voxel",
    "seed": "seed",
}

_CHOICES = {
    "robust_kernel": ("huber", "none"),
    "robust_clamp": ("auto", "always"),
    "eval_align": ("se3", "translation", "none"),
}


def _parse_value(field_type, raw: str):
    raw = raw.strip()
    if field_type is bool:
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"expected a boolean, got {raw!r}")
    if field_type is int:
        return int(raw)
    if field_type is float:
        return float(raw)
    return raw


def apply_setting(cfg: RunConfig, key: str, raw: str) -> RunConfig:
    key = key.strip()
    if key not in _KEY_TO_FIELD:
        raise ValueError(f"unknown config key {key!r}")
    name = _KEY_TO_FIELD[key]
    value = _parse_value(type(getattr(cfg, name)), raw)
    if name in _CHOICES and value not in _CHOICES[name]:
        raise ValueError(f"{key} must be one of {_CHOICES[name]}, got {value!r}")
    return replace(cfg, **{name: value})


def parse_config_text(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected key = value")
        key, raw = line.split("=", 1)
        try:
            cfg = apply_setting(cfg, key, raw)
        except ValueError as exc:
            raise ValueError(f"config line {lineno}: {exc}") from exc
    return cfg


def load_config(path, base: RunConfig | None = None) -> RunConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), base)


def config_text(cfg: RunConfig) -> str:
    lines = [f"{key} = {getattr(cfg, name)}" for key, name in _KEY_TO_FIELD.items()]
    return "\n".join(lines) + "\n"
