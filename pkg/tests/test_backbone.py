import numpy as np
import pytest

from cfdpad import tensor as T
from cfdpad.backbone import (
    ModelConfig,
    classifier_forward,
    embedding_forward,
    forward,
    generator_forward,
    init_model,
    model_from_arrays,
    spoof_score,
)
from cfdpad.gradcheck import finite_diff_check
from cfdpad.tensor import Tensor


def test_init_is_deterministic_and_seed_sensitive():
    cfg = ModelConfig()
    a, b, c = init_model(cfg, 7), init_model(cfg, 7), init_model(cfg, 8)
    assert all(a.params[k].data.tobytes() == b.params[k].data.tobytes() for k in a.params)
    assert any(not np.array_equal(a.params[k].data, c.params[k].data) for k in a.params if k.endswith(".w"))
    assert all(np.all(v.data == 0) for k, v in a.params.items() if k.endswith(".b"))


def test_init_weight_scale_tracks_fan_in():
    model = init_model(ModelConfig(), 0)
    checked = 0
    for name, p in model.params.items():
        if name.endswith(".w") and p.data.size >= 256:
            target = np.sqrt(2.0 / np.prod(p.shape[1:]))
            assert abs(p.data.std() / target - 1) < 0.3, name
            checked += 1
    assert checked >= 3


def test_parameter_groups_are_disjoint():
    model = init_model(ModelConfig(), 0)
    names = [set(g) for g in (model.theta_g, model.theta_e, model.theta_c)]
    assert not (names[0] & names[1] or names[0] & names[2] or names[1] & names[2])
    assert set().union(*names) == set(model.params)


def test_config_validation():
    with pytest.raises(ValueError, match="fixed at 2"):
        ModelConfig(n_classes=3)
    with pytest.raises(ValueError, match="last generator stage"):
        ModelConfig(feature_channels=8)


def test_default_shapes():
    model = init_model(ModelConfig(), 1)
    x = np.random.default_rng(0).random((3, 1, 32, 32))
    f = generator_forward(model, x)
    assert f.shape == (3, 16, 8, 8) == (3,) + ModelConfig().feature_shape()
    e = embedding_forward(model, f)
    assert e.shape == (3, 32)
    assert classifier_forward(model, e).shape == (3, 2)


def test_reference_scale_structure():
    cfg = ModelConfig.reference_scale()
    assert cfg.feature_shape() == (160, 7, 7)
    model = init_model(cfg, 0)
    f = generator_forward(model, np.zeros((1, 3, 224, 224)))
    assert f.shape == (1, 160, 7, 7)


def test_generator_rejects_bad_input(small_model):
    with pytest.raises(ValueError, match="does not match"):
        generator_forward(small_model, np.zeros((1, 2, 8, 8)))
    with pytest.raises(ValueError, match="channels"):
        embedding_forward(small_model, np.zeros((1, 3, 4, 4)))
    with pytest.raises(ValueError, match="embed_dim"):
        classifier_forward(small_model, np.zeros((1, 4)))


def test_identical_images_give_identical_features(small_model, rng):
    img = rng.random((1, 1, 8, 8))
    f = generator_forward(small_model, np.concatenate([img, img])).data
    assert np.array_equal(f[0], f[1])


def test_zero_input_gives_bias_constant(small_model):
    for p in small_model.theta_g.values():
        if p.data.ndim == 1:
            p.data = np.linspace(0.1, 0.4, p.data.size)
    f = generator_forward(small_model, np.zeros((2, 1, 8, 8))).data
    assert np.array_equal(f[0], f[1])
    # with zero input the first stage is its (positive) bias everywhere
    first = T.relu(T.conv2d(Tensor(np.zeros((1, 1, 8, 8))), small_model.params["g.conv0.w"], small_model.params["g.conv0.b"], 2, 1))
    assert np.allclose(first.data[0, :, 0, 0], small_model.params["g.conv0.b"].data)


def test_zero_features_give_bias_embedding(small_model):
    small_model.params["e.fc.b"].data = np.arange(5.0)
    e = embedding_forward(small_model, np.zeros((2, 4, 4, 4))).data
    assert np.array_equal(e, np.tile(np.arange(5.0), (2, 1)))


def test_embedding_batch_equivariance(small_model, rng):
    f = rng.random((4, 4, 4, 4))
    perm = [2, 0, 3, 1]
    e = embedding_forward(small_model, f).data
    assert np.array_equal(embedding_forward(small_model, f[perm]).data, e[perm])


def test_classifier_bias_only_and_distinct_logits(small_model, rng):
    small_model.params["c.fc.w"].data = np.zeros((2, 5))
    small_model.params["c.fc.b"].data = np.array([0.3, -0.2])
    o = classifier_forward(small_model, rng.standard_normal((3, 5))).data
    assert np.all(o == np.array([0.3, -0.2]))
    small_model.params["c.fc.w"].data = rng.standard_normal((2, 5))
    o = classifier_forward(small_model, rng.standard_normal((2, 5))).data
    assert not np.array_equal(o[0], o[1])


def test_composite_softmax_rows_sum_to_one(small_model, rng):
    r = T.softmax(forward(small_model, rng.random((5, 1, 8, 8)))).data
    assert np.all(np.abs(r.sum(axis=1) - 1) < 1e-12)


def test_spoof_score_properties(small_model, rng):
    x = rng.random((4, 1, 8, 8))
    s = spoof_score(small_model, x)
    live = T.softmax(forward(small_model, x)).data[:, 0]
    assert np.all(np.abs(s + live - 1) < 1e-12)
    assert np.array_equal(spoof_score(small_model, x), s)
    assert np.all((s >= 0) & (s <= 1))


def test_composite_gradcheck_on_sampled_parameters(small_model, rng):
    x = rng.random((3, 1, 8, 8))
    names = list(small_model.params)
    points = [small_model.params[n].data.copy() for n in names]
    weights = rng.standard_normal((3, 2))

    def f(*params):
        m = model_from_arrays(small_model.config, {n: p.data for n, p in zip(names, params)})
        m.params = dict(zip(names, params))
        return (T.softmax(forward(m, x)) * weights).sum()

    coords = []
    for a, p in enumerate(points):
        for i in rng.choice(p.size, size=min(p.size, 8), replace=False):
            coords.append((a, int(i)))
    assert len(coords) >= 50
    assert finite_diff_check(f, *points, coords=coords) < 1e-4


def test_model_from_arrays_validates(small_model):
    arrays = small_model.arrays()
    arrays.pop("c.fc.b")
    with pytest.raises(ValueError, match="missing"):
        model_from_arrays(small_model.config, arrays)
