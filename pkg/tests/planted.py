"""A deterministic scorer with two equal-height maxima in the z rotation angle."""

from __future__ import annotations

import numpy as np
from scipy.signal import argrelmax

from meshadv.maxot import MaxOTConfig, ascend, maxot_search
from meshadv.transforms import TransformSpace, sample_params

CENTRES = (-1.5, 1.5)
WIDTHS = (0.4, 0.6)
SPACE = TransformSpace.rotations(np.pi, axes="z")
CONFIG = MaxOTConfig(n_transforms=2, steps=20, step_size=0.3)


def f(theta):
    theta = np.asarray(theta, dtype=np.float64)
    return sum(np.exp(-(theta - c) ** 2 / (2 * w * w)) for c, w in zip(CENTRES, WIDTHS))


def df(theta):
    return sum(-(theta - c) / (w * w) * np.exp(-(theta - c) ** 2 / (2 * w * w)) for c, w in zip(CENTRES, WIDTHS))


def scorer(coords):
    g = np.zeros(7)
    g[2] = df(coords[2])
    return float(f(coords[2])), g


def true_maxima() -> np.ndarray:
    grid = np.linspace(-np.pi, np.pi, 2_000_001)
    return grid[argrelmax(f(grid))[0]]


def trial(seed: int, cfg: MaxOTConfig = CONFIG, tol: float = 0.05) -> tuple[bool, bool]:
    """(recovered both maxima, max over returned set >= random-init ascent max).

    The random baseline gets ``S + ceil(n_initial / K)`` uniform restarts of
    ``K`` steps each, i.e. at least the same number of scorer evaluations.
    """
    peaks = true_maxima()
    res = maxot_search(scorer, SPACE, cfg, seed)
    z = res.transforms[:, 2]
    both = all(np.min(np.abs(z - p)) < tol for p in peaks)
    rng = np.random.default_rng(10_000 + seed)
    restarts = cfg.n_transforms + -(-cfg.initial_count // cfg.steps)
    rand = [ascend(sample_params(SPACE, rng), scorer, cfg.steps, cfg.step_size, SPACE).final[2]
            for _ in range(restarts)]
    beats = float(np.max(f(z))) >= float(np.max(f(np.array(rand)))) - 1e-9
    return both, beats
