"""Noise schedule, forward process, and deterministic DDIM stepping.

Everything runs in numpy float64 over (3, H, W) arrays.  A denoiser is
any callable `eps(x, t_grid)` where t_grid indexes the 1000-step training
grid; the toy U-Net and the analytic Gaussian oracle both fit this shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TRAIN_GRID = 1000
BETA_START = 1e-4
BETA_END = 0.02

_betas = np.linspace(BETA_START, BETA_END, TRAIN_GRID)
# index n = alpha-bar after n noising steps; index 0 = clean (exactly 1)
GRID_ALPHA_BAR = np.concatenate([[1.0], np.cumprod(1.0 - _betas)])


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    grid_t: np.ndarray     # (T+1,) timesteps on the 1000-grid, grid_t[0] = 0
    alpha_bar: np.ndarray  # (T+1,) cumulative signal rate, alpha_bar[0] = 1


@dataclass
class Trajectory:
    latents: list          # T+1 arrays, index aligned with schedule steps
    schedule: NoiseSchedule
    provenance: str        # "inversion" | "sampling"


def make_linear_schedule(T: int) -> NoiseSchedule:
    """Uniform-stride DDIM subsample of the linear-beta 1000-step grid."""
    if T < 2:
        raise ValueError(f"schedule needs T >= 2, got {T}")
    stride = TRAIN_GRID // T
    grid_t = np.arange(T + 1) * stride
    return NoiseSchedule(T=T, grid_t=grid_t, alpha_bar=GRID_ALPHA_BAR[grid_t])


def forward_diffuse(x0, t, schedule: NoiseSchedule, z) -> np.ndarray:
    if not 0 <= t <= schedule.T:
        raise ValueError(f"t={t} outside [0, {schedule.T}]")
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * np.asarray(x0) + np.sqrt(1.0 - ab) * np.asarray(z)


def _ddim_update(x, eps, ab_from, ab_to):
    x0_hat = (x - np.sqrt(1.0 - ab_from) * eps) / np.sqrt(ab_from)
    return np.sqrt(ab_to) * x0_hat + np.sqrt(1.0 - ab_to) * eps


def ddim_step(x_t, eps_pred, t, t_prev, schedule: NoiseSchedule) -> np.ndarray:
    """One deterministic denoising step (eta = 0)."""
    if not t > t_prev >= 0:
        raise ValueError(f"need t > t_prev >= 0, got t={t}, t_prev={t_prev}")
    return _ddim_update(x_t, eps_pred, schedule.alpha_bar[t], schedule.alpha_bar[t_prev])


def ddim_invert(x0, schedule: NoiseSchedule, denoiser, refine_steps: int = 2) -> Trajectory:
    """Reverse-time DDIM: clean image -> noise latent trajectory.

    eps is evaluated at the target timestep of each hop, so an inversion
    hop k -> k+1 and the sampling hop k+1 -> k query the denoiser at the
    same grid timestep.  `refine_steps` fixed-point iterations re-evaluate
    eps at the hop's endpoint, making each hop an approximate implicit
    inverse of the corresponding sampling step (still deterministic).
    """
    x = np.asarray(x0, dtype=np.float64)
    latents = [x]
    for k in range(schedule.T):
        t = int(schedule.grid_t[k + 1])
        ab_from, ab_to = schedule.alpha_bar[k], schedule.alpha_bar[k + 1]
        eps = denoiser(x, t)
        x_next = _ddim_update(x, eps, ab_from, ab_to)
        for _ in range(refine_steps):
            eps = denoiser(x_next, t)
            x_next = _ddim_update(x, eps, ab_from, ab_to)
        x = x_next
        latents.append(x)
    return Trajectory(latents=latents, schedule=schedule, provenance="inversion")


def ddim_sample(x_T, schedule: NoiseSchedule, denoiser, hook=None) -> np.ndarray:
    """T deterministic steps from x_T down to x_0.

    When `hook` is given, the denoiser is called with a per-step layer
    hook: denoiser(x, t_grid, hook=h) where h(layer, q, k, v) may replace
    the attention output at registered layers.  The step index (0-based,
    step 0 = the t=T step) is bound into h.
    """
    x = np.asarray(x_T, dtype=np.float64)
    for step, k in enumerate(range(schedule.T, 0, -1)):
        t_grid = int(schedule.grid_t[k])
        try:
            if hook is None:
                eps = denoiser(x, t_grid)
            else:
                eps = denoiser(x, t_grid, hook=_bind_step(hook, step))
        except Exception as e:
            raise RuntimeError(f"denoiser failed at step {step} (t_grid={t_grid}): {e}") from e
        x = _ddim_update(x, eps, schedule.alpha_bar[k], schedule.alpha_bar[k - 1])
    return x


def _bind_step(hook, step):
    def bound(layer, q, k, v):
        return hook(step, layer, q, k, v)
    return bound


def analytic_gaussian_denoiser(mu, sigma: float):
    """Exact eps predictor for data drawn from N(mu, sigma^2 I).

    Uses the closed-form Gaussian posterior mean
    E[x0|xt] = (sqrt(ab) sigma^2 xt + (1-ab) mu) / (ab sigma^2 + 1 - ab).
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    mu = np.asarray(mu, dtype=np.float64)
    s2 = float(sigma) ** 2

    def eps(x, t_grid):
        ab = GRID_ALPHA_BAR[t_grid]
        if ab == 1.0:
            raise ValueError("analytic denoiser undefined at alpha_bar = 1")
        post_mean = (np.sqrt(ab) * s2 * x + (1.0 - ab) * mu) / (ab * s2 + 1.0 - ab)
        return (x - np.sqrt(ab) * post_mean) / np.sqrt(1.0 - ab)

    return eps
