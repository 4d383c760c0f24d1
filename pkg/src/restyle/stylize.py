"""Dual-path zero-shot style transfer.

Both images are DDIM-inverted, then denoised in lockstep: at every step
the style path is run with Q/K/V capture at the injection layers, and the
content path is run with those captures spliced into its attention via
the configured fusion mode.  Style paths are pure reconstructions.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .attention import (
    RegionControl,
    naive_style_cross,
    rearranged_attention,
    self_attention,
    simple_addition,
    style_mass,
)
from .denoiser import (
    DenoiserModel,
    predict_noise,
    predict_noise_with_capture,
    predict_noise_with_injection,
)
from .diffusion import NoiseSchedule, Trajectory, _ddim_update, ddim_invert

MODES = ("none", "naive_cross", "simple_addition", "rearranged")


@dataclass
class InjectionConfig:
    mode: str = "rearranged"
    lambda_style: float = 1.2        # style logit scale inside the softmax
    lambda_mix: float = 0.5          # external mix for simple_addition
    layers: tuple = (4, 5)           # decoder high-res attention by default
    window: tuple = (5, 30)          # half-open denoising-step window
    steps: int = 30
    control: RegionControl | None = None   # mask given at pixel resolution
    content_source: str = "running"        # "running" | "trajectory"
    record_style_mass: bool = True

    def validate(self, model: DenoiserModel):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        start, end = self.window
        if not 0 <= start < end <= self.steps:
            raise ValueError(f"window {self.window} not within [0, {self.steps})")
        valid = {info.index for info in model.registry}
        if not set(self.layers) <= valid:
            raise ValueError(f"layers {self.layers} not in registry {sorted(valid)}")
        if self.lambda_style < 0:
            raise ValueError("lambda_style must be >= 0")
        if self.content_source not in ("running", "trajectory"):
            raise ValueError(f"unknown content_source {self.content_source!r}")


@dataclass
class StyleTransferResult:
    image: np.ndarray
    diagnostics: dict      # (step, layer) -> {"style_mass": per-query array}
    config: InjectionConfig
    seconds: float = 0.0


def _layer_control(control: RegionControl, res: int, n_style_keys: int) -> RegionControl:
    """Reduce a pixel-resolution control spec to one attention layer."""
    if control.mode == "linear_gradient":
        return replace(control, query_spatial=(res, res))
    mask = np.asarray(control.mask, dtype=bool)
    h, w = mask.shape
    if h % res != 0 or w % res != 0:
        raise ValueError(f"pixel mask {mask.shape} not reducible to {res}x{res}")
    small = mask[::h // res, ::w // res]      # nearest neighbor: top-left sample
    per_query = small.ravel()
    return RegionControl(mode="hard", mask=np.tile(per_query[:, None], (1, n_style_keys)))


def _fusion_closure(config: InjectionConfig, style_caps, content_cap, res, record, step):
    """Build the per-layer attention override for one content-path layer."""

    def make(layer):
        def closure(q, k, v):
            scale = 1.0 / math.sqrt(q.shape[1])
            if config.content_source == "trajectory":
                kc, vc = content_cap[layer][1].values, content_cap[layer][2].values
            else:
                kc, vc = k, v
            style_kvs = [(caps[layer][1].values, caps[layer][2].values) for caps in style_caps]
            if config.mode == "naive_cross":
                ks, vs = style_kvs[0]
                out = naive_style_cross(q, ks, vs, scale)
                if config.record_style_mass:
                    record[(step, layer)] = {"style_mass": np.ones(q.shape[0])}
                return out
            if config.mode == "simple_addition":
                ks, vs = style_kvs[0]
                out = simple_addition(q, ks, vs, kc, vc, scale, config.lambda_mix)
                if config.record_style_mass:
                    record[(step, layer)] = {"style_mass": np.full(q.shape[0], config.lambda_mix)}
                return out
            control = None
            if config.control is not None:
                n_style = sum(ks.shape[0] for ks, _ in style_kvs)
                control = _layer_control(config.control, res[layer], n_style)
            out, weights = rearranged_attention(
                q, kc, vc, style_kvs, scale,
                lambda_style=config.lambda_style,
                control=control,
                normalize_multi=True,
            )
            if config.record_style_mass:
                record[(step, layer)] = {"style_mass": style_mass(weights)}
            return out

        return closure

    return {layer: make(layer) for layer in config.layers}


def dual_path_transfer(content, styles, model: DenoiserModel, schedule: NoiseSchedule,
                       config: InjectionConfig, content_traj: Trajectory | None = None,
                       style_trajs: list[Trajectory] | None = None) -> StyleTransferResult:
    """Stylize `content` with `styles`; precomputed inversion trajectories
    may be passed to amortize sweeps over configs."""
    if isinstance(styles, np.ndarray) and styles.ndim == 3:
        styles = [styles]
    if config.mode != "none" and not styles:
        raise ValueError("need at least one style image")
    if config.steps != schedule.T:
        raise ValueError(f"config.steps={config.steps} != schedule.T={schedule.T}")
    config.validate(model)
    t0 = time.time()

    denoiser = model.as_denoiser()
    traj_c = content_traj or ddim_invert(content, schedule, denoiser)
    x_c = traj_c.latents[schedule.T]

    if config.mode == "none":
        # plain reconstruction of the content inversion; no style paths
        diag = {}
        for step, k in enumerate(range(schedule.T, 0, -1)):
            eps = predict_noise(model, x_c, int(schedule.grid_t[k]))
            x_c = _ddim_update(x_c, eps, schedule.alpha_bar[k], schedule.alpha_bar[k - 1])
        return StyleTransferResult(x_c, diag, config, time.time() - t0)

    if style_trajs is None:
        style_trajs = [ddim_invert(s, schedule, denoiser) for s in styles]
    xs = [traj.latents[schedule.T] for traj in style_trajs]
    res = {info.index: info.resolution for info in model.registry}
    layers = tuple(config.layers)
    start, end = config.window
    diag = {}

    for step, k in enumerate(range(schedule.T, 0, -1)):
        t_grid = int(schedule.grid_t[k])
        ab_from, ab_to = schedule.alpha_bar[k], schedule.alpha_bar[k - 1]
        in_window = start <= step < end

        style_caps = []
        for i in range(len(xs)):
            if in_window:
                eps_s, caps = predict_noise_with_capture(model, xs[i], t_grid, layers)
                style_caps.append(caps)
            else:
                eps_s = predict_noise(model, xs[i], t_grid)
            xs[i] = _ddim_update(xs[i], eps_s, ab_from, ab_to)

        if in_window:
            content_cap = None
            if config.content_source == "trajectory":
                _, content_cap = predict_noise_with_capture(
                    model, traj_c.latents[k], t_grid, layers)
            overrides = _fusion_closure(config, style_caps, content_cap, res, diag, step)
            try:
                eps_c = predict_noise_with_injection(model, x_c, t_grid, overrides)
            except Exception as e:
                raise RuntimeError(f"injection failed at step {step} (t_grid={t_grid}): {e}") from e
        else:
            eps_c = predict_noise(model, x_c, t_grid)
        x_c = _ddim_update(x_c, eps_c, ab_from, ab_to)

    return StyleTransferResult(x_c, diag, config, time.time() - t0)


def regional_transfer(content, style, model, schedule, config: InjectionConfig) -> StyleTransferResult:
    if config.control is None:
        raise ValueError("regional_transfer requires config.control")
    return dual_path_transfer(content, [style], model, schedule, config)


def ablation_sweep(content, style, model, schedule, grid: dict, score_fn) -> list[dict]:
    """Run every cell of a config grid; failures are recorded, not raised.

    `grid` maps InjectionConfig field names (plus "start"/"end" for the
    window halves) to value lists; `score_fn(result) -> dict` computes the
    per-cell metrics.
    """
    import itertools

    if not grid:
        raise ValueError("empty grid")
    keys = sorted(grid)
    denoiser = model.as_denoiser()
    content_traj = ddim_invert(content, schedule, denoiser)
    style_traj = [ddim_invert(style, schedule, denoiser)]
    rows = []
    for combo in itertools.product(*(grid[k] for k in keys)):
        cell = dict(zip(keys, combo))
        cfg = InjectionConfig(steps=schedule.T, window=(5, schedule.T))
        start, end = cfg.window
        for key, val in cell.items():
            if key == "start":
                start = val
            elif key == "end":
                end = val
            else:
                cfg = replace(cfg, **{key: val})
        cfg = replace(cfg, window=(start, end))
        row = dict(cell)
        try:
            result = dual_path_transfer(content, [style], model, schedule, cfg,
                                        content_traj=content_traj, style_trajs=style_traj)
            row.update(score_fn(result))
            row["error"] = ""
        except Exception as e:
            row["error"] = str(e)
        rows.append(row)
    return rows
