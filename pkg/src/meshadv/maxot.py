"""Worst-case transformation search: GP surrogate, expected improvement, gradient ascent.

:func:`maxot_search` runs the restart loop.  An initial stratified design of
``n_initial`` evaluations seeds the surrogate.  Each restart then refits the GP,
starts at the expected-improvement maximiser and takes ``K`` projected
gradient-ascent steps.  The ``K`` evaluated iterates go back into the
observation set.  :func:`maxot_objective` and :func:`eot_objective` turn a set
of transformations into the loss that the outer mesh attack minimises.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.stats import norm

from . import autodiff as ad
from .classifier import Model, forward
from .sampling import SampleSpec, realize
from .transforms import N_COORDS, TransformParams, TransformSpace, apply_coords, project, sample_params

JITTER_LADDER = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class SurrogateError(RuntimeError):
    """The kernel matrix stayed singular after the full jitter ladder."""


@dataclass
class GPState:
    """Zero-mean GP with an RBF kernel, conditioned on normalised inputs."""

    inputs: np.ndarray
    values: np.ndarray
    length_scale: float
    signal_var: float
    noise_var: float
    chol: np.ndarray | None = None
    alpha: np.ndarray | None = None
    jitter: float = 0.0

    @property
    def n_obs(self) -> int:
        return len(self.values)

    def kernel(self, a, b) -> np.ndarray:
        d2 = np.sum(a * a, 1)[:, None] + np.sum(b * b, 1)[None, :] - 2.0 * a @ b.T
        return self.signal_var * np.exp(-0.5 * np.maximum(d2, 0.0) / self.length_scale ** 2)


def default_length_scale(n_points: int, dim: int) -> float:
    """Per-axis stratum width of an ``n_points`` stratified design in ``dim`` unit dimensions.

    Features narrower than this cannot be resolved by the design anyway, and
    longer scales make the posterior overconfident, which drives EI to zero
    everywhere.
    """
    return float(max(n_points, 1) ** (-1.0 / max(dim, 1)))


def gp_fit(inputs, values, length_scale: float | None = None, signal_var: float | None = None,
           noise_var: float = 1e-6) -> GPState:
    """Condition the GP on observations; hyperparameters default to data heuristics.

    The Cholesky factor of ``K + noise_var * I`` gets extra diagonal jitter
    (1e-10 up to 1e-6) only when the plain factorisation fails.
    """
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64).reshape(-1)
    if x.ndim == 1:
        x = x[:, None]
    if len(y) == 0:
        return GPState(x.reshape(0, x.shape[1] if x.ndim == 2 else 1), y,
                       length_scale or 0.5, signal_var or 1.0, noise_var)
    if len(x) != len(y):
        raise ValueError("inputs and values disagree in length")
    ell = length_scale if length_scale is not None else default_length_scale(len(x), x.shape[1])
    sf2 = signal_var if signal_var is not None else max(float(np.var(y)), 1e-6)
    gp = GPState(x, y, ell, sf2, noise_var)
    k = gp.kernel(x, x)
    n = len(y)
    for jitter in JITTER_LADDER:
        try:
            c, lower = cho_factor(k + (noise_var + jitter) * np.eye(n), lower=True)
        except LinAlgError:
            continue
        gp.chol = np.tril(c)
        gp.alpha = cho_solve((c, lower), y)
        gp.jitter = jitter
        return gp
    raise SurrogateError("kernel matrix is singular even with 1e-6 jitter")


def gp_predict(gp: GPState, t) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and variance at normalised points ``t`` (variance clamped at 0)."""
    t = np.atleast_2d(np.asarray(t, dtype=np.float64))
    if gp.n_obs == 0:
        return np.zeros(len(t)), np.full(len(t), gp.signal_var)
    ks = gp.kernel(t, gp.inputs)
    mean = ks @ gp.alpha
    w = solve_triangular(gp.chol, ks.T, lower=True)
    var = gp.signal_var - np.sum(w * w, axis=0)
    return mean, np.maximum(var, 0.0)


def expected_improvement(mean, variance, best) -> np.ndarray:
    """EI for maximisation: ``(mu - best) Phi(z) + sigma phi(z)``, ``max(mu - best, 0)`` at sigma 0."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    gain = mean - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, gain / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(sigma > 0, gain * norm.cdf(z) + sigma * norm.pdf(z), np.maximum(gain, 0.0))
    return np.maximum(ei, 0.0)


def stratified_design(space: TransformSpace, n: int, rng) -> np.ndarray:
    """Latin-hypercube draw of ``n`` points over the active coordinates."""
    rng = np.random.default_rng(rng)
    d = int(space.active.sum())
    unit = np.empty((n, d))
    for j in range(d):
        unit[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return space.denormalize(unit)


def propose_init(gp: GPState, space: TransformSpace, n_candidates: int, rng,
                 local_scale: float = 0.05) -> TransformParams:
    """Argmax of EI over uniform candidates plus a few around the best observation.

    ``n_candidates // 16`` of the candidates are Gaussian perturbations of the
    best observed input; ties resolve to the lowest candidate index.
    """
    rng = np.random.default_rng(rng)
    d = int(space.active.sum())
    n_local = n_candidates // 16 if gp.n_obs else 0
    cand = rng.random((n_candidates - n_local, d))
    if n_local:
        best = gp.inputs[np.argmax(gp.values)]
        local = np.clip(best + local_scale * rng.standard_normal((n_local, d)), 0.0, 1.0)
        cand = np.vstack([cand, local])
    mean, var = gp_predict(gp, cand)
    best_val = float(np.max(gp.values)) if gp.n_obs else 0.0
    ei = expected_improvement(mean, var, best_val)
    return TransformParams.from_coords(space.denormalize(cand[np.argmax(ei)])[0], space.cutout)


@dataclass
class Trajectory:
    """``points[k]`` for k < K were evaluated (``losses[k]``); ``points[K]`` is the final iterate."""

    points: np.ndarray
    losses: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]


def ascend(t0, loss_and_grad: Callable, steps: int, step_size: float,
           space: TransformSpace) -> Trajectory:
    """``steps`` projected gradient-ascent updates on the active coordinates."""
    if steps < 1:
        raise ValueError("need at least one ascent step")
    t = project(np.asarray(t0.coords if isinstance(t0, TransformParams) else t0, dtype=np.float64), space)
    points, losses = [t.copy()], []
    for _ in range(steps):
        loss, grad = loss_and_grad(t)
        grad = np.asarray(grad, dtype=np.float64)
        if not np.all(np.isfinite(grad)) or not np.isfinite(loss):
            raise FloatingPointError("non-finite loss or gradient during transformation ascent")
        losses.append(float(loss))
        t = project(t + step_size * grad * space.active, space)
        points.append(t.copy())
    return Trajectory(np.array(points), np.array(losses))


@dataclass
class MaxOTConfig:
    n_transforms: int = 5
    steps: int = 20
    step_size: float = 0.05
    n_candidates: int = 1024
    n_initial: int | None = None
    research_period: int = 1
    reset_threshold: float = 0.0
    length_scale: float | None = None

    def __post_init__(self):
        if self.n_transforms < 1 or self.steps < 1:
            raise ValueError("n_transforms (S) and steps (K) must be >= 1")
        if self.step_size < 0:
            raise ValueError("step size must be non-negative")
        if self.research_period < 1:
            raise ValueError("research_period must be >= 1")

    @property
    def initial_count(self) -> int:
        return self.steps if self.n_initial is None else self.n_initial


@dataclass
class ObservationLog:
    """Every scorer evaluation; restart 0 is the initial design."""

    restart: list = field(default_factory=list)
    step: list = field(default_factory=list)
    coords: list = field(default_factory=list)
    loss: list = field(default_factory=list)

    def add(self, restart, step, coords, loss):
        self.restart.append(int(restart))
        self.step.append(int(step))
        self.coords.append(np.asarray(coords, dtype=np.float64).copy())
        self.loss.append(float(loss))

    def __len__(self):
        return len(self.loss)

    def best(self) -> float:
        return max(self.loss) if self.loss else float("-inf")

    def to_csv(self, header: bool = True, prefix: str = "") -> str:
        rows = [prefix + "restart,step,theta_x,theta_y,theta_z,loss"] if header else []
        for r, s, c, l in zip(self.restart, self.step, self.coords, self.loss):
            rows.append(f"{prefix}{r},{s},{c[0]:.10g},{c[1]:.10g},{c[2]:.10g},{l:.10g}")
        return "\n".join(rows) + "\n"


@dataclass
class SearchResult:
    transforms: np.ndarray
    log: ObservationLog
    proposals: np.ndarray


def _batch_values(scorer, coords: np.ndarray) -> np.ndarray:
    if hasattr(scorer, "values"):
        return np.asarray(scorer.values(coords), dtype=np.float64)
    return np.array([scorer(c)[0] for c in coords])


def maxot_search(scorer, space: TransformSpace, cfg: MaxOTConfig = MaxOTConfig(), rng=None,
                 log: ObservationLog | None = None) -> SearchResult:
    """Find ``cfg.n_transforms`` locally worst-case transformations.

    ``scorer(coords) -> (loss, d loss / d coords)``; an optional
    ``scorer.values(batch)`` evaluates many coordinates at once.  Passing a
    previous ``log`` reuses its observations instead of a fresh design.
    """
    rng = np.random.default_rng(rng)
    if log is None or len(log) == 0:
        log = ObservationLog()
        design = stratified_design(space, cfg.initial_count, rng)
        for i, (c, v) in enumerate(zip(design, _batch_values(scorer, design))):
            log.add(0, i, c, v)
    ell = cfg.length_scale
    if ell is None:
        ell = default_length_scale(cfg.initial_count, int(space.active.sum()))
    found, proposals = [], []
    for s in range(1, cfg.n_transforms + 1):
        gp = gp_fit(space.normalize(np.array(log.coords)), np.array(log.loss), ell)
        start = propose_init(gp, space, cfg.n_candidates, rng).coords
        proposals.append(start)
        traj = ascend(start, scorer, cfg.steps, cfg.step_size, space)
        for k in range(cfg.steps):
            log.add(s, k, traj.points[k], traj.losses[k])
        found.append(traj.final)
    return SearchResult(np.array(found), log, np.array(proposals))


# --------------------------------------------------------------------------
# mesh objectives


def _transformed_batch(points: ad.Node, coords: np.ndarray) -> ad.Node:
    return ad.stack([apply_coords(c, points) for c in np.atleast_2d(coords)])


def maxot_objective(vertices, transforms, model: Model, target: int, spec: SampleSpec):
    """Mean cross-entropy towards ``target`` over the given transformations."""
    transforms = np.atleast_2d(np.asarray(transforms, dtype=np.float64))
    if len(transforms) == 0:
        raise ValueError("transform set is empty")
    differentiable = isinstance(vertices, ad.Node)
    v = vertices if differentiable else ad.Node(np.asarray(vertices, dtype=np.float64))
    points = realize(spec, v)
    logits = forward(model, _transformed_batch(points, transforms))
    loss = ad.softmax_cross_entropy(logits, np.full(len(transforms), target))
    return loss if differentiable else float(loss.value)


def eot_objective(vertices, space: TransformSpace, m: int, model: Model, target: int,
                  spec: SampleSpec, rng):
    """Monte-Carlo estimate of the expected transformed cross-entropy over ``m`` draws."""
    if m < 1:
        raise ValueError("EOT needs at least one draw")
    return maxot_objective(vertices, sample_params(space, rng, size=m), model, target, spec)


class TransformScorer:
    """Cross-entropy of a fixed cloud as a function of transformation coordinates."""

    def __init__(self, points: np.ndarray, model: Model, target: int, batch: int = 32):
        self.points = np.asarray(points, dtype=np.float64)
        self.model = model
        self.target = int(target)
        self.batch = batch
        self.calls = 0

    def __call__(self, coords) -> tuple[float, np.ndarray]:
        self.calls += 1
        tape = ad.Tape()
        c = tape.variable(np.asarray(coords, dtype=np.float64).reshape(N_COORDS))
        logits = forward(self.model, apply_coords(c, self.points))
        loss = ad.softmax_cross_entropy(logits, self.target)
        return float(loss.value), tape.backward(loss)[c]

    def values(self, coords: np.ndarray) -> np.ndarray:
        coords = np.atleast_2d(coords)
        out = []
        for i in range(0, len(coords), self.batch):
            chunk = coords[i:i + self.batch]
            clouds = np.stack([apply_coords(c, self.points) for c in chunk])
            logits = forward(self.model, clouds)
            z = logits - logits.max(axis=1, keepdims=True)
            out.append(np.log(np.exp(z).sum(axis=1)) - z[:, self.target])
        self.calls += len(coords)
        return np.concatenate(out)
