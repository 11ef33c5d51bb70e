import math
from pathlib import Path

import numpy as np
import pytest

import wwcnn

ROOT = Path(__file__).resolve().parents[2]
SPEC = ROOT / "configs" / "mini.net"


@pytest.fixture(scope="module")
def spec():
    return wwcnn.load_spec(SPEC)


@pytest.fixture(scope="module")
def data():
    cfg = wwcnn.GenConfig()
    cfg.instances = 4
    cfg.backgrounds = 1
    cfg.n_az = 2
    return wwcnn.split_by_instance(wwcnn.generate(cfg), 0.75, cfg.seed)


def test_generate_shapes(data):
    train, test = data
    assert len(train) + len(test) == 10 * 8 * 2 * 4
    assert train.images.shape == (len(train), 32, 32, 1)
    assert train.images.dtype == np.float32
    assert 0.0 <= train.images.min() and train.images.max() <= 1.0
    assert set(np.unique(train.category)) == set(range(10))
    assert not set(zip(train.category, train.instance)) & set(zip(test.category, test.instance))


def test_dataset_roundtrip(tmp_path, data):
    path = tmp_path / "d.wwds"
    wwcnn.write_dataset(path, data[1])
    assert wwcnn.read_dataset(path) == data[1]


def test_conv_kernel_matches_window_sum():
    x = np.ones((1, 1, 3, 3))
    k = np.ones((1, 1, 2, 2))
    out = wwcnn.kernels.conv2d(x, k, np.zeros(1))
    np.testing.assert_array_equal(out, np.full((1, 1, 2, 2), 4.0))


def test_softmax_uniform_logits():
    loss, probs = wwcnn.kernels.softmax_cross_entropy(np.zeros((2, 4)), [0, 3])
    assert loss == pytest.approx(math.log(4))
    np.testing.assert_allclose(probs, 0.25)


def test_entropy_identities():
    assert wwcnn.entropy_bits(np.eye(10)[3]) == 0.0
    assert abs(wwcnn.entropy_bits(np.ones(10)) - math.log2(10)) < 1e-10


def test_train_prune_transplant(spec, data, tmp_path):
    train, test = data
    model = wwcnn.Model.create(spec, wwcnn.Arch.INJECT_MULTI, seed=3)
    cfg = wwcnn.TrainConfig.defaults_for(wwcnn.Arch.INJECT_MULTI)
    cfg.epochs = 1
    cfg.lr = 0.01
    seen = []
    logs = model.train(train, test, cfg, on_epoch=seen.append)
    assert len(logs) == 1 and seen == logs
    assert math.isfinite(logs[0]["train_loss"])
    assert set(model.partitions().values()) == {"shared", "category_head", "pose_head", "pose_branch"}

    pruned = model.prune()
    assert pruned.arch == wwcnn.Arch.BASE
    np.testing.assert_array_equal(model.predict(test), pruned.predict(test))
    assert model.accuracy(test) == pruned.accuracy(test)

    back, report = model.transplant_to(wwcnn.Arch.BASE, seed=3)
    assert not report.fresh
    assert back.accuracy(test) == model.accuracy(test)

    path = tmp_path / "m.wwck"
    model.save(path)
    again = wwcnn.Model.load(path)
    assert again.epoch == 1
    for name, value in model.parameters().items():
        np.testing.assert_array_equal(value, again.parameters()[name])


def test_probe_and_decoupleness(spec, data):
    train, test = data
    model = wwcnn.Model.create(spec, wwcnn.Arch.INJECT_MULTI, seed=1)
    r = model.gradient_probe(train, batches=2, batch_size=16)
    assert r.shared_count > 0 and r.pose_count > 0
    assert r.total_pose > 0.0
    gamma = model.decoupleness("fc7", test)
    assert -1.0 <= gamma <= 1.0
    coords, spectrum = wwcnn.project_2d(model.responses("pool2", test))
    assert coords.shape == (len(test), 2)
    assert spectrum[0] >= spectrum[1]


def test_errors(spec):
    with pytest.raises(wwcnn.ParseError):
        wwcnn.parse_spec("input 32 32\nlayer x bogus\n")
    with pytest.raises(ValueError):
        wwcnn.parse_arch("vgg")
