"""A small PointNet-style classifier: shared per-point MLP, max-pool, MLP head."""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from ._validation import check_clouds, check_labels, is_mesh_collection
from .mesh import Mesh
from .optim import Adam
from .sampling import as_seed_sequence, sample_points

logger = logging.getLogger(__name__)

MAGIC = b"ISOF"
FORMAT_VERSION = 1
POINT_WIDTHS = (3, 64, 128, 256)
HEAD_WIDTHS = (256, 128)
PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4", "w5", "b5")


class ModelFormatError(ValueError):
    """Unreadable or inconsistent model file."""


@dataclass
class Model:
    params: dict
    num_classes: int
    version: int = FORMAT_VERSION

    def __post_init__(self):
        shapes = expected_shapes(self.num_classes)
        for name in PARAM_ORDER:
            if name not in self.params:
                raise ModelFormatError(f"missing parameter {name}")
            if self.params[name].shape != shapes[name]:
                raise ModelFormatError(f"{name} has shape {self.params[name].shape}, expected {shapes[name]}")
            if not np.all(np.isfinite(self.params[name])):
                raise ModelFormatError(f"{name} holds non-finite values")

    def copy(self) -> "Model":
        return Model({k: v.copy() for k, v in self.params.items()}, self.num_classes, self.version)


def expected_shapes(num_classes: int) -> dict:
    widths = list(POINT_WIDTHS) + [HEAD_WIDTHS[1], num_classes]
    shapes = {}
    for i in range(5):
        shapes[f"w{i + 1}"] = (widths[i], widths[i + 1])
        shapes[f"b{i + 1}"] = (widths[i + 1],)
    return shapes


def init_model(num_classes: int, seed=0) -> Model:
    """He-normal weights, zero biases."""
    if num_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in expected_shapes(num_classes).items():
        if name.startswith("w"):
            params[name] = rng.normal(0.0, np.sqrt(2.0 / shape[0]), size=shape)
        else:
            params[name] = np.zeros(shape)
    return Model(params, num_classes)


def normalize_cloud(cloud):
    """Centre on the centroid and scale to unit max-norm (per cloud)."""
    centred = cloud - ad.mean(cloud, axis=-2, keepdims=True)
    radius = ad.max(ad.norm(centred, axis=-1), axis=-1)
    return centred / ad.reshape(radius, radius.shape + (1, 1))


def forward(model: Model, cloud, params: dict | None = None, normalize: bool = True):
    """Logits for one cloud (n, 3) or a batch (B, n, 3).

    Returns a Node whenever ``cloud`` or ``params`` carry a tape, else an array.
    """
    p = model.params if params is None else params
    differentiable = isinstance(cloud, ad.Node) or any(isinstance(v, ad.Node) for v in p.values())
    x = cloud if isinstance(cloud, ad.Node) else ad.Node(np.asarray(cloud, dtype=np.float64))
    if x.shape[-2] < 1:
        raise ValueError("cannot classify an empty point cloud")
    if normalize:
        x = normalize_cloud(x)
    h = ad.relu(x @ p["w1"] + p["b1"])
    h = ad.relu(h @ p["w2"] + p["b2"])
    h = ad.relu(h @ p["w3"] + p["b3"])
    g = ad.max(h, axis=-2)
    if g.ndim == 1:
        g = ad.reshape(g, (1, -1))
        squeeze = True
    else:
        squeeze = False
    g = ad.relu(g @ p["w4"] + p["b4"])
    logits = g @ p["w5"] + p["b5"]
    if squeeze:
        logits = ad.reshape(logits, (-1,))
    return logits if differentiable else logits.value


def cross_entropy(logits, label):
    """Log-sum-exp-stable ``-log softmax(logits)[label]`` (batch mean for 2-D logits)."""
    differentiable = isinstance(logits, ad.Node)
    out = ad.softmax_cross_entropy(logits, label)
    return out if differentiable else float(out.value)


def predict(model: Model, clouds) -> np.ndarray:
    clouds = np.asarray(clouds, dtype=np.float64)
    return np.argmax(forward(model, clouds), axis=-1)


# --------------------------------------------------------------------------
# training


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    seed: int = 0
    points: int = 1024

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.points < 1:
            raise ValueError("epochs, batch size and points must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be non-negative")


@dataclass
class TrainHistory:
    epoch: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_acc: list = field(default_factory=list)

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,test_acc"]
        rows += [f"{e},{l:.10g},{a:.10g}" for e, l, a in zip(self.epoch, self.train_loss, self.test_acc)]
        return "\n".join(rows) + "\n"


def _clouds_for(meshes, n_points, seed):
    seeds = as_seed_sequence(seed).spawn(len(meshes))
    return np.stack([sample_points(m, n_points, s) for m, s in zip(meshes, seeds)])


def accuracy(model: Model, clouds: np.ndarray, labels: np.ndarray, batch: int = 32) -> float:
    preds = np.concatenate([predict(model, clouds[i:i + batch]) for i in range(0, len(clouds), batch)])
    return float(np.mean(preds == labels))


def loss_and_grads(model: Model, clouds: np.ndarray, labels: np.ndarray):
    tape = ad.Tape()
    nodes = {k: tape.variable(v) for k, v in model.params.items()}
    loss = ad.softmax_cross_entropy(forward(model, clouds, nodes), labels)
    grads = tape.backward(loss)
    return float(loss.value), {k: grads[n] for k, n in nodes.items()}


def train(train_set, test_set, cfg: TrainConfig = TrainConfig(), num_classes: int | None = None,
          model: Model | None = None):
    """Fit a classifier on labelled meshes; clouds are redrawn every epoch.

    Returns ``(model, history)``.
    """
    labels = np.array([m.label for m in train_set], dtype=np.int64)
    test_labels = np.array([m.label for m in test_set], dtype=np.int64)
    n_found = int(max(labels.max(), test_labels.max() if len(test_labels) else 0)) + 1
    if num_classes is None:
        num_classes = n_found
    if n_found > num_classes:
        raise ValueError(f"dataset has {n_found} classes but the model expects {num_classes}")
    if len(np.unique(labels)) < 2:
        raise ValueError("training needs at least 2 classes")
    root = np.random.SeedSequence(cfg.seed)
    init_seq, test_seq, epoch_seq = root.spawn(3)
    if model is None:
        model = init_model(num_classes, init_seq)
    elif model.num_classes != num_classes:
        raise ValueError("model class count does not match the dataset")
    test_clouds = _clouds_for(test_set, cfg.points, test_seq) if len(test_set) else None
    opt = Adam(lr=cfg.learning_rate)
    history = TrainHistory()
    for epoch, seq in enumerate(epoch_seq.spawn(cfg.epochs), start=1):
        sample_seq, order_seq = seq.spawn(2)
        clouds = _clouds_for(train_set, cfg.points, sample_seq)
        order = np.random.default_rng(order_seq).permutation(len(train_set))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, clouds[idx], labels[idx])
            model = Model(opt.step(model.params, grads), num_classes)
            losses.append(loss * len(idx))
        mean_loss = float(np.sum(losses) / len(order))
        acc = accuracy(model, test_clouds, test_labels) if test_clouds is not None else float("nan")
        history.epoch.append(epoch)
        history.train_loss.append(mean_loss)
        history.test_acc.append(acc)
        logger.info("epoch %d loss %.4f test_acc %.3f", epoch, mean_loss, acc)
    return model, history


# --------------------------------------------------------------------------
# persistence


def save_model(model: Model, path) -> None:
    """Binary format: b"ISOF", version, class count, then each array as
    (ndim, dims..., little-endian float64 data), all integers uint32 LE."""
    chunks = [MAGIC, struct.pack("<III", model.version, model.num_classes, len(PARAM_ORDER))]
    for name in PARAM_ORDER:
        arr = np.ascontiguousarray(model.params[name], dtype="<f8")
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_model(path) -> Model:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ModelFormatError("bad magic; not a model file")
    pos = 4

    def read(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise ModelFormatError("corrupt model file: truncated")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    version, num_classes, count = read("<III")
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {version}")
    if count != len(PARAM_ORDER):
        raise ModelFormatError("corrupt model file: unexpected parameter count")
    params = {}
    for name in PARAM_ORDER:
        (ndim,) = read("<I")
        if ndim > 2:
            raise ModelFormatError("corrupt model file: bad rank")
        shape = read(f"<{ndim}I")
        n = int(np.prod(shape))
        raw = read(f"<{n * 8}s")[0]
        params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise ModelFormatError("corrupt model file: trailing bytes")
    return Model(params, num_classes, version)


# --------------------------------------------------------------------------


class PointNetClassifier(ClassifierMixin, BaseEstimator):
    """Scikit-learn wrapper around :func:`train` and :func:`forward`.

    ``X`` is either a list of labelled-or-not :class:`Mesh` objects (clouds
    are sampled on the fly) or an array of clouds shaped (N, n, 3).
    """

    def __init__(self, epochs: int = 30, batch_size: int = 16, learning_rate: float = 1e-3,
                 n_points: int = 1024, random_state: int = 0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.n_points = n_points
        self.random_state = random_state

    def _clouds(self, X, seed):
        if is_mesh_collection(X):
            return _clouds_for(X, self.n_points, seed)
        return check_clouds(X)

    def fit(self, X, y=None):
        cfg = TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.random_state, self.n_points)
        if is_mesh_collection(X):
            meshes = list(X)
            if y is not None:
                y = check_labels(y)
                meshes = [Mesh(m.vertices, m.faces, int(lab)) for m, lab in zip(meshes, y)]
        else:
            clouds = check_clouds(X)
            y = check_labels(y)
            meshes = None
        if meshes is not None:
            self.model_, self.history_ = train(meshes, [], cfg)
        else:
            self.model_, self.history_ = _train_on_clouds(clouds, y, cfg)
        self.classes_ = np.arange(self.model_.num_classes)
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        clouds = self._clouds(X, self.random_state)
        return np.concatenate([forward(self.model_, clouds[i:i + 32]) for i in range(0, len(clouds), 32)])

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]


def _train_on_clouds(clouds, labels, cfg: TrainConfig):
    num_classes = int(labels.max()) + 1
    if len(np.unique(labels)) < 2:
        raise ValueError("training needs at least 2 classes")
    root = np.random.SeedSequence(cfg.seed)
    init_seq, order_seq = root.spawn(2)
    model = init_model(num_classes, init_seq)
    opt = Adam(lr=cfg.learning_rate)
    history = TrainHistory()
    rng = np.random.default_rng(order_seq)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(clouds))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = loss_and_grads(model, clouds[idx], labels[idx])
            model = Model(opt.step(model.params, grads), num_classes)
            losses.append(loss * len(idx))
        history.epoch.append(epoch)
        history.train_loss.append(float(np.sum(losses) / len(order)))
        history.test_acc.append(float("nan"))
    return model, history
