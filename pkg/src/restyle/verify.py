"""Self-contained invariant suite: algebraic identities, limit laws, and
oracle equivalences that need no trained model.  The CLI `verify` command
and the acceptance tests both run these checks.
"""

from __future__ import annotations

import numpy as np

from .attention import (
    RegionControl,
    addition_as_rearranged,
    rearranged_attention,
    scaled_logits,
    self_attention,
    simple_addition,
)
from .denoiser import build_toy_unet, predict_noise, predict_noise_with_capture, \
    predict_noise_with_injection
from .diffusion import (
    analytic_gaussian_denoiser,
    ddim_invert,
    ddim_sample,
    forward_diffuse,
    make_linear_schedule,
)
from .numerics import SeededRng, softmax_rows


def _random_instance(rng, n_max=16, d_max=8, logit_span=5.0):
    n_q = int(rng.integers(1, n_max + 1))
    n_k = int(rng.integers(1, n_max + 1))
    d = int(rng.integers(1, d_max + 1))
    scale = 1.0 / np.sqrt(d)
    # draw q/k so the scaled logits stay within +-logit_span
    lim = np.sqrt(logit_span / scale / d)
    q = (rng.uniform((n_q, d)) * 2 - 1) * lim
    k_s = (rng.uniform((n_k, d)) * 2 - 1) * lim
    k_c = (rng.uniform((n_k, d)) * 2 - 1) * lim
    v_s = rng.normal((n_k, d))
    v_c = rng.normal((n_k, d))
    return q, k_s, v_s, k_c, v_c, scale


def check_addition_identity(seed=0, n_cases=100):
    """addition_as_rearranged == simple_addition(lambda=0.5), <= 1e-9."""
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(n_cases):
        q, k_s, v_s, k_c, v_c, scale = _random_instance(rng)
        a = addition_as_rearranged(q, k_s, v_s, k_c, v_c, scale)
        b = simple_addition(q, k_s, v_s, k_c, v_c, scale, 0.5)
        worst = max(worst, float(np.abs(a - b).max()))
    return worst <= 1e-9, f"max deviation {worst:.2e} (tol 1e-9)"


def check_limit_self_attention(seed=1, n_cases=100):
    """Style logits at -LARGE: rearranged reduces to self-attention."""
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(n_cases):
        q, k_s, v_s, k_c, v_c, scale = _random_instance(rng)
        control = RegionControl(mode="hard", mask=np.zeros((q.shape[0], k_s.shape[0]), dtype=bool))
        out, _ = rearranged_attention(q, k_c, v_c, [(k_s, v_s)], scale,
                                      lambda_style=1.2, control=control)
        ref = self_attention(q, k_c, v_c, scale)
        worst = max(worst, float(np.abs(out - ref).max()))
    return worst <= 1e-9, f"max deviation {worst:.2e} (tol 1e-9)"


def check_limit_argmax(seed=2, n_cases=100, tau=100.0):
    """At temperature tau=100 with a unique row max, rearranged converges
    to the V row of the argmax column (ties broken by lowest index)."""
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(n_cases):
        q, k_s, v_s, k_c, v_c, scale = _random_instance(rng)
        out, _ = rearranged_attention(q * tau, k_c, v_c, [(k_s, v_s)], scale, lambda_style=1.0)
        logits = np.concatenate(
            [(q * tau) @ k_s.T * scale, (q * tau) @ k_c.T * scale], axis=1)
        values = np.concatenate([v_s, v_c], axis=0)
        # argmax oracle; skip rows whose top-two gap is too small for tau to resolve
        order = np.sort(logits, axis=1)
        gap = order[:, -1] - order[:, -2] if logits.shape[1] > 1 else np.full(len(logits), np.inf)
        keep = gap > 30.0
        if not keep.any():
            continue
        oracle = values[np.argmax(logits, axis=1)]
        worst = max(worst, float(np.abs(out[keep] - oracle[keep]).max()))
    return worst <= 1e-6, f"max deviation {worst:.2e} (tol 1e-6)"


def check_row_stochastic(seed=3, n_cases=40):
    """Weight rows sum to 1 for every lambda and mask configuration."""
    rng = SeededRng(seed)
    worst = 0.0
    for _ in range(n_cases):
        q, k_s, v_s, k_c, v_c, scale = _random_instance(rng)
        n_q, n_k = q.shape[0], k_s.shape[0]
        half = np.zeros((n_q, n_k), dtype=bool)
        half[:, : max(1, n_k // 2)] = True
        masks = [None,
                 RegionControl(mode="hard", mask=half),
                 RegionControl(mode="hard", mask=np.ones((n_q, n_k), dtype=bool)),
                 RegionControl(mode="hard", mask=np.zeros((n_q, n_k), dtype=bool))]
        for lam in (0.0, 1.2, 2.0):
            for control in masks:
                _, w = rearranged_attention(q, k_c, v_c, [(k_s, v_s)], scale,
                                            lambda_style=lam, control=control)
                worst = max(worst, float(np.abs(w.matrix.sum(axis=1) - 1).max()))
    return worst <= 1e-9, f"max |row sum - 1| = {worst:.2e} (tol 1e-9)"


def check_adaptive_mass(seed=4):
    """Shifting style logits down drains rearranged style mass toward 0
    while simple_addition's rewritten mass stays pinned at lambda."""
    rng = SeededRng(seed)
    n, d = 12, 6
    scale = 1.0 / np.sqrt(d)
    q = rng.normal((n, d))
    k_s = rng.normal((n, d))
    k_c = rng.normal((n, d))
    v_s = rng.normal((n, d))
    v_c = rng.normal((n, d))
    masses = []
    fixed_ok = True
    for c in (0.0, 2.0, 4.0, 8.0):
        z_s = scaled_logits(q, k_s, scale) - c
        z_c = scaled_logits(q, k_c, scale)
        w = softmax_rows(np.concatenate([z_s, z_c], axis=1))
        masses.append(float(w[:, :n].sum(axis=1).mean()))
        # simple_addition rewritten as one softmax: its style mass is pinned at lambda
        corr = np.log(np.exp(z_c).sum(axis=1)) - np.log(np.exp(z_s).sum(axis=1))
        w2 = softmax_rows(np.concatenate([z_s + corr[:, None], z_c], axis=1))
        lam_mass = w2[:, :n].sum(axis=1)
        fixed_ok &= bool(np.abs(lam_mass - 0.5).max() <= 1e-9)
    decreasing = all(masses[i] > masses[i + 1] for i in range(len(masses) - 1))
    ok = decreasing and masses[-1] < 0.01 and fixed_ok
    return ok, (f"rearranged mass {['%.4f' % m for m in masses]}, "
                f"fixed mass stays 0.5: {fixed_ok}")


def check_ddim_round_trip(seed=5, T=100, n=20):
    """sample(invert(x)) with the analytic Gaussian denoiser, rel L2 <= 1e-2."""
    rng = SeededRng(seed)
    schedule = make_linear_schedule(T)
    worst = 0.0
    for i in range(n):
        sigma = 0.1 if i % 2 == 0 else 0.5
        mu = rng.normal((3, 8, 8)) * 0.3
        x0 = mu + sigma * rng.normal((3, 8, 8))
        den = analytic_gaussian_denoiser(mu, sigma)
        traj = ddim_invert(x0, schedule, den)
        back = ddim_sample(traj.latents[T], schedule, den)
        rel = float(np.linalg.norm(back - x0) / np.linalg.norm(x0))
        worst = max(worst, rel)
    return worst <= 1e-2, f"max relative L2 {worst:.2e} (tol 1e-2)"


def check_forward_moments(seed=6, n=10_000):
    """Marginal moments of the forward process, 3-standard-error band."""
    rng = SeededRng(seed)
    schedule = make_linear_schedule(1000)
    x0 = 0.5
    detail = []
    ok = True
    for t in (250, 500, 750):
        ab = schedule.alpha_bar[t]
        z = rng.normal((n,))
        xt = forward_diffuse(np.full(n, x0), t, schedule, z)
        mean_se = np.sqrt((1 - ab) / n)
        var_se = (1 - ab) * np.sqrt(2.0 / (n - 1))
        mean_err = abs(xt.mean() - np.sqrt(ab) * x0)
        var_err = abs(xt.var(ddof=1) - (1 - ab))
        ok &= mean_err <= 3 * mean_se and var_err <= 3 * var_se
        detail.append(f"t={t}: dmean={mean_err:.1e}({3*mean_se:.1e}) dvar={var_err:.1e}({3*var_se:.1e})")
    return ok, "; ".join(detail)


def check_capture_injection(seed=7, model=None):
    """Capture is passive and pass-through injection matches plain forward."""
    if model is None:
        model = build_toy_unet(seed)
    rng = SeededRng(seed)
    x = rng.normal((3, 32, 32))
    t = 500
    plain = predict_noise(model, x, t)
    with_cap, caps = predict_noise_with_capture(model, x, t, [0, 1, 2, 3, 4, 5])
    passive = bool(np.array_equal(plain, with_cap))

    def passthrough(q, k, v):
        return self_attention(q, k, v, 1.0 / np.sqrt(q.shape[1]))

    injected = predict_noise_with_injection(model, x, t, {i: passthrough for i in range(6)})
    dev = float(np.abs(injected - plain).max())
    ok = passive and dev <= 1e-5
    return ok, f"capture bit-identical: {passive}; pass-through max dev {dev:.2e} (tol 1e-5)"


ALL_CHECKS = [
    ("addition-identity", check_addition_identity),
    ("limit-self-attention", check_limit_self_attention),
    ("limit-argmax", check_limit_argmax),
    ("row-stochastic", check_row_stochastic),
    ("adaptive-style-mass", check_adaptive_mass),
    ("ddim-round-trip", check_ddim_round_trip),
    ("forward-moments", check_forward_moments),
    ("capture-injection", check_capture_injection),
]


def run_all(verbose=True):
    results = []
    for name, fn in ALL_CHECKS:
        ok, detail = fn()
        results.append((name, ok, detail))
        if verbose:
            print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    return results
