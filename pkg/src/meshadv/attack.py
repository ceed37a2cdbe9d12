"""Targeted mesh attack with curvature regularisation and a binary search over beta.

Each outer iteration draws a fresh surface sample, evaluates

    L_f(sample(V), target) + beta * R(V, V_orig)

and takes one Adam step on the vertex positions.  ``L_f`` is the plain
cross-entropy, the EOT average over random transformations, or the mean over
the worst-case set found by :func:`meshadv.maxot.maxot_search`.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import autodiff as ad
from .classifier import Model, forward
from .geometry import DegenerateTriangleError, curvature_terms, r_gauss, total_regularizer
from .maxot import MaxOTConfig, ObservationLog, TransformScorer, eot_objective, maxot_objective, maxot_search
from .mesh import Mesh, MeshError, require_closed_manifold
from .metrics import chamfer
from .optim import AdamState, adam_step
from .sampling import as_seed_sequence, draw_samples, realize
from .transforms import TransformSpace, apply_coords, sample_params

logger = logging.getLogger(__name__)

LOSS_MODES = ("plain", "eot", "maxot")

__all__ = ["AttackConfig", "AttackResult", "MeshAttack", "adam_step", "attack_once", "run_attack", "run_batch"]


class AttackError(RuntimeError):
    """Attack aborted (degenerate geometry or non-finite loss)."""


@dataclass
class AttackConfig:
    iterations: int = 250
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda1: float = 1.0
    lambda2: float = 0.2
    lambda3: float = 0.8
    beta_init: float = 1500.0
    search_steps: int = 10
    beta_min: float = 1.0
    beta_max: float = 1e6
    mode: str = "plain"
    n_points: int = 1024
    success_resamples: int = 8
    success_transforms: int = 16
    success_threshold: float = 0.5
    check_every: int = 25
    eot_draws: int = 5
    resample: bool = True
    area: str = "barycentric"
    edge_delta: bool = False
    maxot: MaxOTConfig = field(default_factory=MaxOTConfig)
    space: TransformSpace = field(default_factory=TransformSpace.rotations)
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1 or self.lr <= 0:
            raise ValueError("iterations and learning rate must be positive")
        if self.mode not in LOSS_MODES:
            raise ValueError(f"loss mode must be one of {LOSS_MODES}, got {self.mode!r}")
        if not self.beta_min <= self.beta_init <= self.beta_max:
            raise ValueError("beta bounds must bracket beta_init")
        if self.search_steps < 1:
            raise ValueError("need at least one binary-search step")
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise ValueError("regulariser weights must be non-negative")

    def describe(self) -> dict:
        out = {f.name: getattr(self, f.name) for f in fields(self) if f.name not in ("maxot", "space")}
        out["maxot"] = asdict(self.maxot)
        out["space"] = self.space.describe()
        return out


@dataclass
class AttackResult:
    vertices: np.ndarray
    faces: np.ndarray
    target: int
    success: bool
    target_rate: float
    transform_rate: float | None
    beta: float
    d_c: float
    d_g: float
    wall_clock: float
    trace: list = field(default_factory=list)
    beta_trace: list = field(default_factory=list)
    iteration: int = 0
    observations: list = field(default_factory=list)

    def mesh(self, label=None) -> Mesh:
        return Mesh(self.vertices, self.faces, label)

    def trace_csv(self) -> str:
        rows = ["iteration,total,attack_loss,regularizer,beta"]
        rows += [f"{r['iteration']},{r['total']:.10g},{r['attack_loss']:.10g},{r['regularizer']:.10g},{r['beta']:.10g}"
                 for r in self.trace]
        return "\n".join(rows) + "\n"

    def summary(self) -> dict:
        return {"target": self.target, "success": bool(self.success), "target_rate": self.target_rate,
                "transform_rate": self.transform_rate, "beta": self.beta, "d_c": self.d_c, "d_g": self.d_g,
                "wall_clock": self.wall_clock, "beta_trace": list(self.beta_trace),
                "success_iteration": self.iteration}


# --------------------------------------------------------------------------
# success checks


def _predict_batch(model: Model, clouds: np.ndarray) -> np.ndarray:
    return np.argmax(forward(model, clouds), axis=-1)


def target_rates(vertices: np.ndarray, mesh: Mesh, model: Model, target: int, cfg: AttackConfig,
                 seed, transforms: bool) -> tuple[float, float | None]:
    """Fraction of held-out resamples (and randomly transformed resamples) hitting ``target``."""
    root = as_seed_sequence(seed)
    samp_seq, tr_seq, tr_samp_seq = root.spawn(3)
    adv = mesh.with_vertices(vertices)
    clouds = np.stack([realize(draw_samples(adv, cfg.n_points, s), vertices)
                       for s in samp_seq.spawn(cfg.success_resamples)])
    rate = float(np.mean(_predict_batch(model, clouds) == target))
    if not transforms:
        return rate, None
    coords = sample_params(cfg.space, tr_seq, size=cfg.success_transforms)
    moved = np.stack([apply_coords(c, realize(draw_samples(adv, cfg.n_points, s), vertices))
                      for c, s in zip(coords, tr_samp_seq.spawn(cfg.success_transforms))])
    return rate, float(np.mean(_predict_batch(model, moved) == target))


def _is_success(rate, trate, cfg: AttackConfig) -> bool:
    ok = rate >= cfg.success_threshold
    if trate is not None:
        ok = ok and trate >= cfg.success_threshold
    return bool(ok)


# --------------------------------------------------------------------------


def _attack_loss(v: ad.Node, spec, model, target, cfg: AttackConfig, state: dict, it: int, seqs):
    if cfg.mode == "plain":
        return ad.softmax_cross_entropy(forward(model, realize(spec, v)), target)
    if cfg.mode == "eot":
        return eot_objective(v, cfg.space, cfg.eot_draws, model, target, spec, seqs["eot"].spawn(1)[0])
    # maxot: re-search the worst-case set every research_period iterations
    mc = cfg.maxot
    if state.get("transforms") is None or it % mc.research_period == 0:
        points = realize(spec, v.value)
        scorer = TransformScorer(points, model, target)
        log = None
        anchor = state.get("anchor")
        if mc.reset_threshold > 0 and anchor is not None and np.abs(v.value - anchor).max() <= mc.reset_threshold:
            log = state.get("log")
        else:
            state["anchor"] = v.value.copy()
        found = maxot_search(scorer, cfg.space, mc, seqs["search"].spawn(1)[0], log)
        state["transforms"] = found.transforms
        state["log"] = found.log
        state.setdefault("logs", []).append((it, found.log))
    return maxot_objective(v, state["transforms"], model, target, spec)


def attack_once(mesh: Mesh, target: int, model: Model, beta: float, cfg: AttackConfig = AttackConfig(),
                rng=None, topology=None) -> AttackResult:
    """Run ``cfg.iterations`` Adam steps at a fixed ``beta``.

    Success is judged on held-out resamples every ``cfg.check_every``
    iterations and at the end; the successful iterate with the smallest
    regulariser value is returned, or the final iterate if none succeeded.
    """
    start = time.perf_counter()
    if not 0 <= target < model.num_classes:
        raise ValueError(f"target {target} out of range for {model.num_classes} classes")
    topology = require_closed_manifold(mesh, topology)
    root = as_seed_sequence(cfg.seed if rng is None else rng)
    s_sample, s_check, s_eot, s_search, s_metric = root.spawn(5)
    seqs = {"eot": s_eot, "search": s_search}
    transforms = cfg.mode != "plain"
    try:
        orig_k = curvature_terms(ad.Node(mesh.vertices), topology, cfg.area)[0].value
    except DegenerateTriangleError as exc:
        raise AttackError(f"original mesh: {exc}") from exc
    check_seed = s_check.spawn(1)[0]

    def check(vertices):
        return target_rates(vertices, mesh, model, target, cfg, check_seed, transforms)

    def finish(vertices, success, rate, trate, trace, it, state):
        d_g = r_gauss(vertices, mesh, topology, cfg.area, orig_k)
        spec = draw_samples(mesh, cfg.n_points, s_metric)
        d_c = chamfer(realize(spec, vertices), realize(spec, mesh.vertices))
        obs = [(i, log) for i, log in state.get("logs", [])]
        return AttackResult(np.array(vertices), mesh.faces.copy(), target, success, rate, trate, beta,
                            d_c, d_g, time.perf_counter() - start, trace, [beta], it, obs)

    rate, trate = check(mesh.vertices)
    if _is_success(rate, trate, cfg):
        return finish(mesh.vertices, True, rate, trate, [], 0, {})

    vertices = mesh.vertices.copy()
    adam = None
    spec = draw_samples(mesh, cfg.n_points, s_sample.spawn(1)[0])
    trace, state = [], {}
    best = None
    for it in range(cfg.iterations):
        if cfg.resample and it > 0:
            spec = draw_samples(mesh.with_vertices(vertices), cfg.n_points, s_sample.spawn(1)[0])
        tape = ad.Tape()
        v = tape.variable(vertices)
        try:
            lf = _attack_loss(v, spec, model, target, cfg, state, it, seqs)
            reg = total_regularizer(v, mesh, topology, cfg.lambda1, cfg.lambda2, cfg.lambda3, cfg.area,
                                    cfg.edge_delta, orig_k)
        except DegenerateTriangleError as exc:
            raise AttackError(f"iteration {it}: {exc}") from exc
        total = lf + beta * reg
        if not np.isfinite(total.value):
            raise AttackError(f"iteration {it}: non-finite objective")
        grad = tape.backward(total)[v]
        trace.append({"iteration": it, "total": float(total.value), "attack_loss": float(lf.value),
                      "regularizer": float(reg.value), "beta": beta})
        vertices, adam = adam_step(vertices, grad, adam, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
        done = it + 1
        if done % cfg.check_every == 0 or done == cfg.iterations:
            rate, trate = check(vertices)
            if _is_success(rate, trate, cfg):
                reg_now = total_regularizer(vertices, mesh, topology, cfg.lambda1, cfg.lambda2, cfg.lambda3,
                                            cfg.area, cfg.edge_delta, orig_k)
                if best is None or reg_now < best[0]:
                    best = (reg_now, vertices.copy(), rate, trate, done)
    if best is not None:
        _, vbest, rate, trate, it_best = best
        return finish(vbest, True, rate, trate, trace, it_best, state)
    return finish(vertices, False, rate, trate, trace, cfg.iterations, state)


def run_attack(mesh: Mesh, target: int, model: Model, cfg: AttackConfig = AttackConfig(), rng=None) -> AttackResult:
    """Binary search on beta around :func:`attack_once`.

    Success moves beta to the midpoint of (beta, upper) to ask for a more
    natural mesh; failure moves it to the midpoint of (lower, beta).  The
    successful result with the largest beta wins; without any success the
    failing run with the highest target rate is returned.
    """
    topology = require_closed_manifold(mesh)
    root = as_seed_sequence(cfg.seed if rng is None else rng)
    lower, upper, beta = cfg.beta_min, cfg.beta_max, cfg.beta_init
    betas, best_ok, best_fail = [], None, None
    for seq in root.spawn(cfg.search_steps):
        betas.append(beta)
        res = attack_once(mesh, target, model, beta, cfg, seq, topology)
        logger.debug("beta %.4g success %s rate %.2f", beta, res.success, res.target_rate)
        if res.success:
            if best_ok is None or res.beta > best_ok.beta:
                best_ok = res
            if res.iteration == 0:
                break
            lower = beta
            beta = 0.5 * (beta + upper)
        else:
            if best_fail is None or res.target_rate > best_fail.target_rate:
                best_fail = res
            upper = beta
            beta = 0.5 * (lower + beta)
    out = best_ok if best_ok is not None else best_fail
    out = replace(out, beta_trace=betas)
    return out


# --------------------------------------------------------------------------
# batches


def _run_one(args):
    mesh, target, model, cfg, seed = args
    return run_attack(mesh, target, model, cfg, seed)


def run_batch(meshes, targets, model: Model, cfg: AttackConfig = AttackConfig(), jobs: int = 1,
              seeds=None) -> list[AttackResult]:
    """Attack many meshes; ``jobs > 1`` spreads instances over worker processes."""
    meshes = list(meshes)
    if seeds is None:
        seeds = [s for s in np.random.SeedSequence(cfg.seed).spawn(len(meshes))]
    work = [(m, int(t), model, cfg, s) for m, t, s in zip(meshes, targets, seeds)]
    if jobs <= 1:
        return [_run_one(w) for w in work]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, work))


def next_class_targets(labels, num_classes: int, offset: int = 1) -> np.ndarray:
    """The cyclic "next class" target policy."""
    return (np.asarray(labels, dtype=np.int64) + offset) % num_classes


class MeshAttack(TransformerMixin, BaseEstimator):
    """Estimator-style front end: ``fit_transform(meshes, targets)`` returns adversarial meshes.

    Constructor arguments mirror :class:`AttackConfig`; ``results_`` keeps
    the full :class:`AttackResult` per mesh after ``transform``.
    """

    def __init__(self, model: Model | None = None, mode: str = "plain", iterations: int = 250,
                 lr: float = 0.01, lambda1: float = 1.0, lambda2: float = 0.2, lambda3: float = 0.8,
                 beta_init: float = 1500.0, search_steps: int = 10, n_points: int = 1024,
                 random_state: int = 0, n_jobs: int = 1):
        self.model = model
        self.mode = mode
        self.iterations = iterations
        self.lr = lr
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.lambda3 = lambda3
        self.beta_init = beta_init
        self.search_steps = search_steps
        self.n_points = n_points
        self.random_state = random_state
        self.n_jobs = n_jobs

    def _config(self) -> AttackConfig:
        return AttackConfig(iterations=self.iterations, lr=self.lr, lambda1=self.lambda1,
                            lambda2=self.lambda2, lambda3=self.lambda3, beta_init=self.beta_init,
                            beta_min=min(1.0, self.beta_init), beta_max=max(1e6, self.beta_init),
                            search_steps=self.search_steps,
                            mode=self.mode, n_points=self.n_points, seed=self.random_state)

    def fit(self, X=None, y=None):
        if self.model is None:
            raise ValueError("MeshAttack needs a victim model")
        self.config_ = self._config()
        return self

    def transform(self, X, y=None):
        if y is None:
            raise ValueError("targeted attack: pass target labels as y")
        meshes = list(X)
        for m in meshes:
            if not isinstance(m, Mesh):
                raise MeshError("MeshAttack expects Mesh inputs")
        cfg = getattr(self, "config_", None) or self._config()
        self.results_ = run_batch(meshes, y, self.model, cfg, self.n_jobs)
        return [r.mesh(m.label) for r, m in zip(self.results_, meshes)]
