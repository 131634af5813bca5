"""Stochastic graph augmentations: edge dropping, Gaussian noise, feature masking.

All randomness comes from externally derived streams so that runs are
reproducible and each (sample, epoch, view) combination draws independently.
Application order is fixed: ED -> GN -> FM.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .featio import ConfigError
from .graphbuild import GraphView


@dataclass
class AugmentSpec:
    ed_enabled: bool = False
    gn_enabled: bool = False
    fm_enabled: bool = False
    ed_prob: float = 0.5
    gn_sigma: float = 0.1
    fm_prob: float = 0.5

    def validate(self):
        for p in (self.ed_prob, self.fm_prob):
            if not 0 <= p <= 1:
                raise ConfigError("augmentation probabilities must be in [0, 1]")
        if not (np.isfinite(self.gn_sigma) and self.gn_sigma >= 0):
            raise ConfigError("gn_sigma must be finite and non-negative")


# Ablation grid: every enable/disable combination of (ED, GN, FM).
GRID = [
    ("SIGNL-1", False, False, False),
    ("SIGNL-2", False, False, True),
    ("SIGNL-3", False, True, False),
    ("SIGNL-4", False, True, True),
    ("SIGNL-5", True, False, False),
    ("SIGNL-6", True, False, True),
    ("SIGNL-7", True, True, False),
    ("SIGNL-8", True, True, True),
]


def grid_spec(base: AugmentSpec, ed, gn, fm):
    return replace(base, ed_enabled=ed, gn_enabled=gn, fm_enabled=fm)


@dataclass
class AugmentDraws:
    edge_keep: np.ndarray | None    # bool per edge
    noise: np.ndarray | None        # N x D additive noise
    mask: np.ndarray | None         # N x D multiplicative 0/1 mask


def derive_rng(global_seed, sample_key, epoch, view_tag):
    digest = hashlib.sha256(f"{global_seed}|{sample_key}|{epoch}|{view_tag}".encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


def sample_draws(spec: AugmentSpec, rng, n_edges, feat_shape) -> AugmentDraws:
    """Draw all augmentation randomness in fixed ED -> GN -> FM order."""
    edge_keep = noise = mask = None
    if spec.ed_enabled:
        edge_keep = rng.random(n_edges) >= spec.ed_prob
    if spec.gn_enabled:
        noise = (spec.gn_sigma * rng.standard_normal(feat_shape)).astype(np.float32)
    if spec.fm_enabled:
        mask = (rng.random(feat_shape) >= spec.fm_prob).astype(np.float32)
    return AugmentDraws(edge_keep, noise, mask)


def apply_draws(g: GraphView, draws: AugmentDraws) -> GraphView:
    edges = g.edges
    if draws.edge_keep is not None:
        edges = [e for e, keep in zip(edges, draws.edge_keep) if keep]
    x = g.x
    if draws.noise is not None:
        x = x + draws.noise
    if draws.mask is not None:
        x = x * draws.mask
    return GraphView(g.kind, x.astype(np.float32), edges, g.clip_id, g.segment_id)


def edge_drop(g: GraphView, p, rng) -> GraphView:
    if not 0 <= p <= 1:
        raise ConfigError("edge drop probability must be in [0, 1]")
    keep = rng.random(len(g.edges)) >= p
    return GraphView(g.kind, g.x, [e for e, k in zip(g.edges, keep) if k],
                     g.clip_id, g.segment_id)


def gaussian_noise(g: GraphView, sigma, rng) -> GraphView:
    if not (np.isfinite(sigma) and sigma >= 0):
        raise ConfigError("sigma must be finite and non-negative")
    if sigma == 0:
        return GraphView(g.kind, g.x.copy(), list(g.edges), g.clip_id, g.segment_id)
    noise = (sigma * rng.standard_normal(g.x.shape)).astype(np.float32)
    return GraphView(g.kind, g.x + noise, list(g.edges), g.clip_id, g.segment_id)


def feature_mask(g: GraphView, p, rng) -> GraphView:
    if not 0 <= p <= 1:
        raise ConfigError("feature mask probability must be in [0, 1]")
    mask = (rng.random(g.x.shape) >= p).astype(np.float32)
    return GraphView(g.kind, g.x * mask, list(g.edges), g.clip_id, g.segment_id)


def apply(spec: AugmentSpec, g: GraphView, sample_key, global_seed=0, epoch=0,
          view_tag=None) -> GraphView:
    """Apply the enabled augmentations in ED -> GN -> FM order, reproducibly."""
    spec.validate()
    tag = view_tag if view_tag is not None else f"{g.kind}:{g.segment_id}"
    rng = derive_rng(global_seed, sample_key, epoch, tag)
    draws = sample_draws(spec, rng, len(g.edges), g.x.shape)
    return apply_draws(g, draws)
