"""Diagnostics and quantitative metrics for stylization runs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from scipy.ndimage import sobel

from .attention import FeatureMap
from .numerics import cosine_similarity_rows, softmax_rows
from .denoiser import DenoiserModel


@dataclass
class MetricReport:
    content_preservation: float   # edge-map correlation, [-1, 1]
    style_affinity: float         # color + Gram affinity, [0, 1]
    style_mass_means: dict        # layer -> mean style mass over steps

    def as_dict(self):
        return {
            "content_preservation": self.content_preservation,
            "style_affinity": self.style_affinity,
            "style_mass_means": {str(k): v for k, v in self.style_mass_means.items()},
        }


def similarity_heatmap(cross_out: FeatureMap, self_out: FeatureMap, png_path=None) -> np.ndarray:
    """Per-token cosine similarity between two attention outputs, as (h, w)."""
    if cross_out.values.shape != self_out.values.shape or cross_out.spatial != self_out.spatial:
        raise ValueError("feature maps must share token count and channels")
    sims = cosine_similarity_rows(cross_out.values, self_out.values)
    heat = sims.reshape(cross_out.spatial)
    if png_path is not None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(4, 4))
        im = ax.imshow(heat, cmap="viridis", vmin=-1, vmax=1)
        fig.colorbar(im)
        fig.savefig(png_path, dpi=120)
        plt.close(fig)
    return heat


def logit_histogram(q_c, k_s, dim_scale, bins=50):
    """Histogram the style logits and their naive-softmax weights.

    Returns a dict with the logit and weight histograms plus a split of
    the weight mass by logit sign (the counter-intuitive cases are the
    negative-logit entries that still receive large weights).
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    logits = (np.asarray(q_c, dtype=np.float64) @ np.asarray(k_s, dtype=np.float64).T) * dim_scale
    weights = softmax_rows(logits)
    neg = logits < 0
    logit_hist, logit_edges = np.histogram(logits, bins=bins)
    weight_hist, weight_edges = np.histogram(weights, bins=bins)
    return {
        "logits": logits,
        "weights": weights,
        "logit_hist": (logit_hist, logit_edges),
        "weight_hist": (weight_hist, weight_edges),
        "negative_logit_weight": float(weights[neg].sum()),
        "positive_logit_weight": float(weights[~neg].sum()),
    }


def _edge_map(img: np.ndarray) -> np.ndarray:
    gray = np.asarray(img, dtype=np.float64).mean(axis=0)
    gy = sobel(gray, axis=0)
    gx = sobel(gray, axis=1)
    return np.hypot(gx, gy)


def edge_energy(img: np.ndarray) -> float:
    return float(_edge_map(img).mean())


def content_preservation_score(output, content) -> float:
    """Pearson correlation of Sobel gradient-magnitude maps."""
    if np.shape(output) != np.shape(content):
        raise ValueError("shape mismatch")
    a = _edge_map(output).ravel()
    b = _edge_map(content).ravel()
    if a.std() == 0 or b.std() == 0:
        raise ValueError("constant image: edge correlation undefined")
    return float(np.corrcoef(a, b)[0, 1])


def _color_histograms(img, bins=8):
    hists = []
    for c in range(3):
        h, _ = np.histogram(img[c], bins=bins, range=(-1.0, 1.0))
        h = h.astype(np.float64)
        hists.append(h / h.sum())
    return hists


def _chi2(h1, h2):
    # normalized chi-square between probability vectors, in [0, 1]
    return 0.5 * float(((h1 - h2) ** 2 / (h1 + h2 + 1e-12)).sum())


def _gram(model: DenoiserModel, img) -> np.ndarray:
    """Channel Gram matrix of the first encoder conv activations."""
    x = torch.from_numpy(np.asarray(img, dtype=np.float32))[None]
    with torch.no_grad():
        feats = model.net.conv_in(x)[0].numpy().astype(np.float64)
    flat = feats.reshape(feats.shape[0], -1)
    return flat @ flat.T / flat.shape[1]


def style_affinity_score(output, style, model: DenoiserModel) -> float:
    """0.5 * color-histogram affinity + 0.5 * Gram-feature affinity."""
    if np.shape(output) != np.shape(style):
        raise ValueError("shape mismatch")
    chi = np.mean([_chi2(a, b) for a, b in
                   zip(_color_histograms(output), _color_histograms(style))])
    g_out = _gram(model, output)
    g_sty = _gram(model, style)
    denom = np.linalg.norm(g_out) + np.linalg.norm(g_sty)
    gram_dist = np.linalg.norm(g_out - g_sty) / denom if denom > 0 else 0.0
    return float(0.5 * (1.0 - chi) + 0.5 * (1.0 - gram_dist))


def metric_report(output, content, style, model, diagnostics=None) -> MetricReport:
    mass = {}
    if diagnostics:
        per_layer = {}
        for (step, layer), rec in diagnostics.items():
            per_layer.setdefault(layer, []).append(float(np.mean(rec["style_mass"])))
        mass = {layer: float(np.mean(v)) for layer, v in per_layer.items()}
    return MetricReport(
        content_preservation=content_preservation_score(output, content),
        style_affinity=style_affinity_score(output, style, model),
        style_mass_means=mass,
    )
