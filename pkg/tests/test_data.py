import math
import os
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfdpad import checkpoint
from cfdpad.data import (
    AugmentConfig,
    Dataset,
    SynthConfig,
    augment_batch,
    balanced_batches,
    cutout,
    cutout_at,
    flip_rotate,
    load_dataset,
    read_pgm,
    rotate,
    save_dataset,
    stream,
    synth_components,
    synth_generate,
    write_pgm,
)

TINY = SynthConfig(n_train_live=12, n_train_per_material=6, n_test_live=8, n_test_per_material=8)


def test_synth_is_deterministic_and_seeded():
    a_train, a_test = synth_generate(TINY)
    b_train, b_test = synth_generate(TINY)
    assert a_train.images.tobytes() == b_train.images.tobytes()
    assert a_test.images.tobytes() == b_test.images.tobytes()
    c_train, _ = synth_generate(SynthConfig(**{**TINY.__dict__, "seed": 1}))
    assert not np.array_equal(a_train.images, c_train.images)


def test_synth_splits_and_ranges():
    train, test = synth_generate(TINY)
    assert train.images.shape[1:] == (1, 32, 32)
    assert train.images.min() >= 0 and train.images.max() <= 1
    assert train.materials == {1, 2, 3} and test.materials == {4}
    assert not train.materials & test.materials
    assert len(set(train.ids.tolist()) | set(test.ids.tolist())) == len(train) + len(test)
    assert Counter(train.attack.tolist()) == {0: 12, 1: 6, 2: 6, 3: 6}


def test_synth_rejects_too_few_materials():
    with pytest.raises(ValueError, match="n_materials"):
        SynthConfig(n_materials=1)
    with pytest.raises(ValueError, match="n_held_out"):
        SynthConfig(n_materials=3, n_held_out=3)


def test_distractor_free_images_differ_only_by_distractor_term():
    plain = SynthConfig(distractor_strength=0.0)
    for attack, sid in ((0, 5), (2, 17)):
        with_d = synth_components(SynthConfig(), attack, sid)
        without = synth_components(plain, attack, sid)
        assert np.all(without["distractor"] == 0)
        for part in ("ridge", "material", "noise"):
            assert np.array_equal(with_d[part], without[part])
        assert np.any(with_d["distractor"] != 0)


def test_distractors_are_label_independent():
    # the distractor stream depends only on (seed, sample id), never on the class
    cfg = SynthConfig()
    assert np.array_equal(synth_components(cfg, 0, 9)["distractor"], synth_components(cfg, 3, 9)["distractor"])


def test_live_has_no_material_texture():
    parts = synth_components(SynthConfig(), 0, 3)
    assert np.all(parts["material"] == 0)


def test_cutout_geometry():
    img = np.ones((1, 32, 32))
    cfg = AugmentConfig()
    s = cfg.cutout_side(32, 32)
    assert s == math.floor(96 / 224 * 32) == 13
    assert AugmentConfig().cutout_side(224, 224) == 96
    assert (cutout_at(img, [(16, 16)], s) == 0).sum() == s * s
    assert (cutout_at(img, [(0, 0)], s) == 0).sum() == math.ceil(s / 2) ** 2
    # side 4 at the bottom-right pixel spans rows/cols 29..32, of which 29..31 exist
    assert (cutout_at(img, [(31, 31)], 4) == 0).sum() == 9
    assert AugmentConfig(cutout_side_ratio=0.01).cutout_side(32, 32) == 1


def test_cutout_corner_count_oracle():
    for side in range(1, 12):
        zeroed = (cutout_at(np.ones((9, 9)), [(0, 0)], side) == 0).sum()
        assert zeroed == min(9, math.ceil(side / 2)) ** 2


def test_cutout_zero_count_is_identity(rng):
    img = rng.random((1, 8, 8))
    assert np.array_equal(cutout(img, AugmentConfig(cutout_count=0), rng), img)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_cutout_only_zeroes_pixels(seed):
    rng = np.random.default_rng(seed)
    img = rng.random((1, 16, 16)) + 0.01
    out = cutout(img, AugmentConfig(cutout_count=3), rng)
    changed = out != img
    assert np.all(out[changed] == 0)


def test_flips_and_zero_rotation(rng):
    img = rng.random((1, 5, 7))
    cfg = AugmentConfig(cutout_count=0, hflip_prob=1.0, vflip_prob=0.0, rotation_degrees=0.0)
    once = flip_rotate(img, cfg, rng)
    assert np.array_equal(once, img[..., ::-1])
    assert np.array_equal(flip_rotate(once, cfg, rng), img)
    assert np.max(np.abs(rotate(img, 0.0) - img)) < 1e-12


def test_rotation_90_matches_index_permutation():
    pattern = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]])
    # counterclockwise quarter turn: the top row becomes the left column read bottom-up
    expected = np.array([[3.0, 6.0, 9.0], [2.0, 5.0, 8.0], [1.0, 4.0, 7.0]])
    assert np.max(np.abs(rotate(pattern, 90.0) - expected)) < 1e-12
    assert np.array_equal(rotate(pattern, 90.0, nearest=True), expected)


def test_augment_batch_range_and_determinism():
    imgs = np.random.default_rng(0).random((4, 1, 16, 16))
    a = augment_batch(imgs, AugmentConfig(), stream(3, 2, 0, 0))
    b = augment_batch(imgs, AugmentConfig(), stream(3, 2, 0, 0))
    assert a.shape == imgs.shape and np.array_equal(a, b)
    assert a.min() >= 0 and a.max() <= 1


def test_balanced_batches_two_classes():
    attack = np.array([0] * 5 + [1] * 3)
    for batch in balanced_batches(attack, 4, np.random.default_rng(0)):
        counts = Counter(attack[batch].tolist())
        assert len(counts) == 2 and max(counts.values()) >= 2


def test_balanced_batches_coverage_and_proportions():
    attack = np.array([0] * 50 + [1] * 20 + [2] * 20 + [3] * 13)
    rng = np.random.default_rng(1)
    seen = set()
    batches = []
    while len(batches) < 100:
        epoch = list(balanced_batches(attack, 10, rng))
        epoch_ids = {int(i) for b in epoch for i in b}
        assert epoch_ids == set(range(len(attack)))
        seen |= epoch_ids
        batches.extend(epoch)
    for batch in batches[:100]:
        counts = Counter(attack[batch].tolist())
        assert len(batch) == 10
        assert all(abs(counts[c] - 10 / 4) <= 1 for c in range(4))
        assert sum(v >= 2 for v in counts.values()) >= 1


def test_balanced_batches_is_deterministic():
    attack = np.array([0] * 7 + [1] * 4 + [2] * 4)
    a = [b.tolist() for b in balanced_batches(attack, 6, stream(0, 3, 0))]
    b = [b.tolist() for b in balanced_batches(attack, 6, stream(0, 3, 0))]
    assert a == b


def test_balanced_batches_rejects_impossible():
    with pytest.raises(ValueError):
        list(balanced_batches(np.array([0, 1, 2]), 4, np.random.default_rng(0)))
    with pytest.raises(ValueError):
        list(balanced_batches(np.zeros(5, int), 4, np.random.default_rng(0)))
    with pytest.raises(ValueError, match="two samples"):
        list(balanced_batches(np.array([0, 1]), 4, np.random.default_rng(0)))


def test_dataset_round_trip_and_truncation(tmp_path):
    train, _ = synth_generate(TINY)
    path = tmp_path / "train.ds"
    save_dataset(train, path)
    back = load_dataset(path)
    assert back.images.tobytes() == train.images.tobytes()
    assert np.array_equal(back.attack, train.attack) and np.array_equal(back.ids, train.ids)
    raw = path.read_bytes()
    (tmp_path / "cut.ds").write_bytes(raw[:-5])
    with pytest.raises(checkpoint.ContainerError, match="truncated"):
        load_dataset(tmp_path / "cut.ds")


def test_pgm_scaling_and_directory(tmp_path):
    raw = b"P5\n# comment\n2 1\n255\n" + bytes([128, 255])
    (tmp_path / "7.pgm").write_bytes(raw)
    v = read_pgm(tmp_path / "7.pgm")
    assert abs(v[0, 0] - 128 / 255) < 1e-12 and v[0, 1] == 1.0
    write_pgm(tmp_path / "8.pgm", np.array([[0.0, 0.5]]))
    (tmp_path / "labels.csv").write_text("id,attack\n7,0\n8,2\n")
    ds = load_dataset(tmp_path)
    assert ds.ids.tolist() == [7, 8] and ds.attack.tolist() == [0, 2]
    assert ds.images.shape == (2, 1, 1, 2)


def test_pgm_errors(tmp_path):
    (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(ValueError, match="binary PGM"):
        read_pgm(tmp_path / "bad.pgm")
    (tmp_path / "short.pgm").write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(ValueError, match="pixel bytes"):
        read_pgm(tmp_path / "short.pgm")
    os.mkdir(tmp_path / "d")
    (tmp_path / "d" / "labels.csv").write_text("id,attack\n1,x\n")
    with pytest.raises(ValueError, match="line 2"):
        load_dataset(tmp_path / "d")


def test_dataset_validation():
    with pytest.raises(ValueError, match="inconsistent"):
        Dataset(np.zeros((2, 1, 4, 4)), np.zeros(3), np.arange(2))
    ds = Dataset(np.zeros((2, 1, 4, 4)), [0, 1], [10, 11])
    assert ds.index_of(11) == 1
    with pytest.raises(KeyError):
        ds.index_of(12)
