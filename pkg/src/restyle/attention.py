"""Attention fusion variants for the dual-path stylizer.

Every variant here is a pure function of (query, key, value) blocks in
double precision.  The content block is never masked or rescaled, so
each softmax row always has at least one live column.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import NEG_LARGE, SENTINEL_CUTOFF, logsumexp_rows, softmax_rows

# floor for the linear-gradient region mode: a ramp from NEG_LARGE itself
# would be indistinguishable from a hard mask, so interpolate down to an
# offset that already zeroes any realistic logit in double precision while
# leaving a visible spatial transition.  The span start is still forced to
# NEG_LARGE exactly.
GRADIENT_FLOOR = -60.0


@dataclass(frozen=True)
class FeatureMap:
    """Dense token features plus the spatial grid they came from."""

    values: np.ndarray          # (tokens, channels)
    spatial: tuple[int, int]    # (h, w) with h*w == tokens

    def __post_init__(self):
        h, w = self.spatial
        if h * w != self.values.shape[0]:
            raise ValueError(f"spatial {self.spatial} does not cover {self.values.shape[0]} tokens")

    @property
    def tokens(self) -> int:
        return self.values.shape[0]

    @property
    def channels(self) -> int:
        return self.values.shape[1]


@dataclass
class AttentionWeights:
    """Row-stochastic weight matrix with labeled column blocks."""

    matrix: np.ndarray                       # (n_q, total_keys)
    blocks: list[tuple[str, slice]]          # label in {"content", "style_i"}

    def block(self, label: str) -> np.ndarray:
        for lab, sl in self.blocks:
            if lab == label:
                return self.matrix[:, sl]
        raise KeyError(label)


@dataclass
class RegionControl:
    """Spatial confinement of the style logits.

    hard mode: entries of the style logit block outside `mask` are set to
    NEG_LARGE.  linear_gradient mode: every style column of query token i
    is offset by a ramp over the query grid, from NEG_LARGE at the span
    start to 0 at the span end along `axis`.
    """

    mode: str = "hard"                        # "hard" | "linear_gradient"
    mask: np.ndarray | None = None            # (n_q, n_style_keys) bool, hard mode
    axis: str = "x"                           # linear mode: "x" (cols) or "y" (rows)
    span: tuple[float, float] = (0.0, 1.0)    # normalized coords along axis
    query_spatial: tuple[int, int] | None = None  # (h, w), linear mode

    def query_offsets(self) -> np.ndarray:
        """Per-query additive offset for linear_gradient mode."""
        if self.query_spatial is None:
            raise ValueError("linear_gradient mode needs query_spatial")
        h, w = self.query_spatial
        if self.axis == "x":
            coord = (np.arange(w) + 0.5) / w
            grid = np.tile(coord, (h, 1))
        elif self.axis == "y":
            coord = (np.arange(h) + 0.5) / h
            grid = np.tile(coord[:, None], (1, w))
        else:
            raise ValueError(f"unknown axis {self.axis!r}")
        lo, hi = self.span
        frac = np.clip((grid - lo) / (hi - lo), 0.0, 1.0).ravel()
        offsets = GRADIENT_FLOOR * (1.0 - frac)
        offsets[frac == 0.0] = NEG_LARGE
        return offsets


def apply_region_control(style_logits: np.ndarray, control: RegionControl) -> np.ndarray:
    logits = np.array(style_logits, dtype=np.float64)
    if control.mode == "hard":
        if control.mask is None:
            raise ValueError("hard mode needs a mask")
        if control.mask.shape != logits.shape:
            raise ValueError(f"mask shape {control.mask.shape} != logits shape {logits.shape}")
        logits[~control.mask] = NEG_LARGE
    elif control.mode == "linear_gradient":
        offsets = control.query_offsets()
        if offsets.shape[0] != logits.shape[0]:
            raise ValueError("query_spatial does not match query count")
        logits = logits + offsets[:, None]
        logits[logits <= SENTINEL_CUTOFF] = NEG_LARGE
    else:
        raise ValueError(f"unknown control mode {control.mode!r}")
    return logits


def scaled_logits(q: np.ndarray, k: np.ndarray, dim_scale: float) -> np.ndarray:
    if q.shape[1] != k.shape[1]:
        raise ValueError(f"channel mismatch: q {q.shape}, k {k.shape}")
    return (np.asarray(q, dtype=np.float64) @ np.asarray(k, dtype=np.float64).T) * dim_scale


def self_attention(q, k, v, dim_scale) -> np.ndarray:
    """Softmax(q kᵀ · dim_scale) v."""
    if k.shape[0] != v.shape[0]:
        raise ValueError(f"key/value token mismatch: {k.shape} vs {v.shape}")
    return softmax_rows(scaled_logits(q, k, dim_scale)) @ np.asarray(v, dtype=np.float64)


def naive_style_cross(q_c, k_s, v_s, dim_scale) -> np.ndarray:
    """Content queries over foreign style keys/values; no content term."""
    return self_attention(q_c, k_s, v_s, dim_scale)


def simple_addition(q_c, k_s, v_s, k_c, v_c, dim_scale, lambda_mix: float) -> np.ndarray:
    """lambda·cross + (1−lambda)·self, each softmax normalized separately."""
    if not 0.0 <= lambda_mix <= 1.0:
        raise ValueError(f"lambda_mix must be in [0,1], got {lambda_mix}")
    cross = naive_style_cross(q_c, k_s, v_s, dim_scale)
    self_ = self_attention(q_c, k_c, v_c, dim_scale)
    return lambda_mix * cross + (1.0 - lambda_mix) * self_


def rearranged_attention(
    q_c,
    k_c,
    v_c,
    style_kvs,
    dim_scale,
    lambda_style: float = 1.2,
    control: RegionControl | None = None,
    normalize_multi: bool = False,
) -> tuple[np.ndarray, AttentionWeights]:
    """One softmax over [λ·style logit blocks..., content logits].

    `style_kvs` is a list of (K_s, V_s) pairs.  λ scales every style
    block; the control mapping is applied after λ (the mask must dominate
    regardless of λ).  With `normalize_multi`, each of the N style blocks
    is offset by −ln(N) so that duplicated identical styles leave the
    output unchanged.
    """
    if lambda_style < 0:
        raise ValueError(f"lambda_style must be >= 0, got {lambda_style}")
    if not style_kvs:
        if control is not None:
            raise ValueError("region control requires at least one style block")
        out = self_attention(q_c, k_c, v_c, dim_scale)
        w = softmax_rows(scaled_logits(q_c, k_c, dim_scale))
        return out, AttentionWeights(w, [("content", slice(0, k_c.shape[0]))])

    style_blocks = [lambda_style * scaled_logits(q_c, k, dim_scale) for k, _ in style_kvs]
    if normalize_multi and len(style_blocks) > 1:
        style_blocks = [b - np.log(len(style_blocks)) for b in style_blocks]
    style_logits = np.concatenate(style_blocks, axis=1)
    if control is not None:
        style_logits = apply_region_control(style_logits, control)
    content_logits = scaled_logits(q_c, k_c, dim_scale)

    full = np.concatenate([style_logits, content_logits], axis=1)
    weights = softmax_rows(full)

    values = np.concatenate(
        [np.asarray(v, dtype=np.float64) for _, v in style_kvs]
        + [np.asarray(v_c, dtype=np.float64)],
        axis=0,
    )
    blocks = []
    off = 0
    for i, (k, _) in enumerate(style_kvs):
        label = "style" if len(style_kvs) == 1 else f"style_{i}"
        blocks.append((label, slice(off, off + k.shape[0])))
        off += k.shape[0]
    blocks.append(("content", slice(off, off + k_c.shape[0])))
    return weights @ values, AttentionWeights(weights, blocks)


def correction_term_C(q_c, k_s, k_c, dim_scale) -> np.ndarray:
    """Per-query log-ratio of content vs style partition sums.

    Adding this to the style logit block inside one softmax reproduces the
    externally mixed 50/50 sum of cross- and self-attention.
    """
    z_s = scaled_logits(q_c, k_s, dim_scale)
    z_c = scaled_logits(q_c, k_c, dim_scale)
    return logsumexp_rows(z_c) - logsumexp_rows(z_s)


def addition_as_rearranged(q_c, k_s, v_s, k_c, v_c, dim_scale) -> np.ndarray:
    """Concatenated-softmax form of simple_addition at lambda_mix = 0.5."""
    z_s = scaled_logits(q_c, k_s, dim_scale)
    z_c = scaled_logits(q_c, k_c, dim_scale)
    c = correction_term_C(q_c, k_s, k_c, dim_scale)
    full = np.concatenate([z_s + c[:, None], z_c], axis=1)
    values = np.concatenate(
        [np.asarray(v_s, dtype=np.float64), np.asarray(v_c, dtype=np.float64)], axis=0
    )
    return softmax_rows(full) @ values


def style_mass(weights: AttentionWeights) -> np.ndarray:
    """Per-query attention mass landing on style columns."""
    mass = np.zeros(weights.matrix.shape[0])
    for label, sl in weights.blocks:
        if label != "content":
            mass += weights.matrix[:, sl].sum(axis=1)
    return mass
