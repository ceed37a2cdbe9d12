import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshadv import autodiff as ad
from meshadv.classifier import (
    MAGIC,
    Model,
    ModelFormatError,
    PointNetClassifier,
    TrainConfig,
    expected_shapes,
    forward,
    init_model,
    load_model,
    predict,
    save_model,
    train,
)
from meshadv.mesh import ShapeSpec, box, generate, icosphere
from meshadv.sampling import sample_points


@pytest.fixture(scope="module")
def model():
    return init_model(3, seed=1)


def test_expected_shapes():
    s = expected_shapes(5)
    assert s["w1"] == (3, 64) and s["w3"] == (128, 256) and s["w5"] == (128, 5) and s["b5"] == (5,)


def test_forward_single_and_batch_agree(model):
    clouds = np.random.default_rng(0).normal(size=(4, 50, 3))
    batch = forward(model, clouds)
    assert batch.shape == (4, 3)
    for i in range(4):
        assert np.allclose(forward(model, clouds[i]), batch[i])


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_permutation_translation_scale_invariance(seed):
    rng = np.random.default_rng(seed)
    m = init_model(3, seed=2)
    cloud = rng.normal(size=(40, 3))
    base = forward(m, cloud)
    moved = 2.5 * cloud[rng.permutation(40)] + rng.normal(size=3)
    assert np.allclose(forward(m, moved), base, atol=1e-9)


def test_cross_entropy_gradient_wrt_points(model):
    cloud = np.random.default_rng(3).normal(size=(30, 3))
    err = ad.finite_diff_check(lambda p: ad.softmax_cross_entropy(forward(model, p), 1), cloud)
    assert err < 1e-5


def test_empty_cloud_rejected(model):
    with pytest.raises(ValueError):
        forward(model, np.zeros((0, 3)))


def test_model_file_roundtrip(tmp_path, model):
    path = tmp_path / "m.bin"
    save_model(model, path)
    data = path.read_bytes()
    assert data[:4] == MAGIC
    assert struct.unpack_from("<I", data, 4)[0] == 1
    back = load_model(path)
    assert back.num_classes == 3
    for k, v in model.params.items():
        assert np.array_equal(back.params[k], v)


@pytest.mark.parametrize("damage", ["truncate", "magic", "version", "trailing"])
def test_corrupt_model_files(tmp_path, model, damage):
    path = tmp_path / "m.bin"
    save_model(model, path)
    data = bytearray(path.read_bytes())
    if damage == "truncate":
        data = data[:-9]
    elif damage == "magic":
        data[:4] = b"NOPE"
    elif damage == "version":
        data[4:8] = struct.pack("<I", 9)
    else:
        data += b"\0"
    path.write_bytes(bytes(data))
    with pytest.raises(ModelFormatError):
        load_model(path)


def test_model_validates_shapes(model):
    params = dict(model.params)
    params["w2"] = np.zeros((64, 3))
    with pytest.raises(ModelFormatError):
        Model(params, 3)


def tiny_sets():
    meshes = []
    for i in range(6):
        s = generate(ShapeSpec("icosphere", {"subdivisions": 1}, 0.02, seed=i))
        s.label = 0
        b = generate(ShapeSpec("box", {"grid": 2}, 0.02, seed=i))
        b.label = 1
        meshes += [s, b]
    return meshes[:10], meshes[10:]


def test_training_is_deterministic_and_learns():
    tr, te = tiny_sets()
    cfg = TrainConfig(epochs=3, batch_size=4, learning_rate=1e-3, seed=7, points=128)
    m1, h1 = train(tr, te, cfg)
    m2, h2 = train(tr, te, cfg)
    for k in m1.params:
        assert np.array_equal(m1.params[k], m2.params[k])
    assert h1.to_csv() == h2.to_csv()
    assert h1.to_csv().splitlines()[0] == "epoch,train_loss,test_acc"
    assert h1.train_loss[-1] < h1.train_loss[0]


def test_training_class_count_mismatch():
    tr, te = tiny_sets()
    with pytest.raises(ValueError):
        train(tr, te, TrainConfig(epochs=1, points=32), num_classes=1)
    with pytest.raises(ValueError):
        train(tr, te, TrainConfig(epochs=1, points=32), model=init_model(3))


def test_estimator_api():
    tr, _ = tiny_sets()
    clf = PointNetClassifier(epochs=4, batch_size=4, n_points=128, random_state=0).fit(tr)
    assert set(clf.predict(tr)) <= {0, 1}
    proba = clf.predict_proba(tr)
    assert np.allclose(proba.sum(axis=1), 1.0)
    clouds = np.stack([sample_points(m, 64, i) for i, m in enumerate(tr)])
    labels = np.array([m.label for m in tr])
    clf2 = PointNetClassifier(epochs=2, batch_size=4, random_state=0).fit(clouds, labels)
    assert clf2.predict(clouds).shape == (10,)
    assert clf2.get_params()["epochs"] == 2
    with pytest.raises(ValueError):
        PointNetClassifier().fit(np.zeros((2, 5, 2)), [0, 1])


def test_predict_helper(model):
    clouds = np.stack([sample_points(box(), 64, 0), sample_points(icosphere(), 64, 0)])
    assert predict(model, clouds).shape == (2,)
