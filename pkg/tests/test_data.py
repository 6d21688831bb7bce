"""Unit tests for the synthetic corpus, batching and IDX ingestion."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from disentda.data import (
    Dataset,
    ShiftSpec,
    SynthSpec,
    apply_shift,
    class_pattern_cells,
    class_template,
    load_idx,
    make_batches,
    read_idx,
    synth_two_domain,
    write_idx,
)
from disentda.util import ConfigError

import oracles


def _quiet_spec(**kw) -> SynthSpec:
    """A spec with every stochastic nuisance turned off."""
    base = dict(
        n_classes=2,
        per_class=3,
        jitter_std=0.0,
        distractors=0,
        polarity_flip=0.0,
        shift=ShiftSpec(noise_std=0.0, intensity_invert=True),
    )
    base.update(kw)
    return SynthSpec(**base)


def _cell_pixels(cell: int, size: int = 16) -> tuple[slice, slice]:
    block = size // 4
    r, c = divmod(int(cell), 4)
    return slice(r * block, (r + 1) * block), slice(c * block, (c + 1) * block)


# ---------------------------------------------------------------------------
# spec validation


def test_spec_validation_errors():
    SynthSpec().validate()
    for bad in (
        {"n_classes": 1},
        {"per_class": 0},
        {"eval_per_class": 0},
        {"image_size": 15},
        {"channels": 0},
        {"background": 1.2},
        {"jitter_std": -0.1},
        {"distractors": 11},
        {"polarity_flip": 1.5},
    ):
        with pytest.raises(ConfigError):
            SynthSpec(**bad).validate()


def test_spec_rejects_out_of_range_mirrored_foreground():
    with pytest.raises(ConfigError):
        SynthSpec(background=0.2, foreground=0.9).validate()  # mirror = -0.5


def test_shift_spec_validation():
    with pytest.raises(ConfigError):
        ShiftSpec(noise_std=-0.2).validate()
    with pytest.raises(ConfigError):
        ShiftSpec(translation=-1).validate()


# ---------------------------------------------------------------------------
# dataset container


def test_dataset_seals_target_labels():
    imgs = np.zeros((3, 1, 4, 4))
    ds = Dataset(images=imgs, domain_tag="target", heldout_labels=[2, 0, 1])
    assert ds.labels is None
    np.testing.assert_array_equal(ds.sealed_labels(), [2, 0, 1])
    with pytest.raises(ValueError):
        Dataset(images=imgs, domain_tag="target", labels=[0, 1, 2])


def test_dataset_validation():
    imgs = np.zeros((3, 1, 4, 4))
    with pytest.raises(ValueError):
        Dataset(images=np.zeros((3, 4, 4)), domain_tag="source", labels=[0, 1, 2])
    with pytest.raises(ValueError):
        Dataset(images=imgs - 1.0, domain_tag="source", labels=[0, 1, 2])
    with pytest.raises(ValueError):
        Dataset(images=imgs, domain_tag="source")  # sources carry labels
    with pytest.raises(ValueError):
        Dataset(images=imgs, domain_tag="elsewhere", labels=[0, 1, 2])
    with pytest.raises(ValueError):
        Dataset(images=imgs, domain_tag="source", labels=[0, 1, 2], indices=[0, 0, 2])
    ds = Dataset(images=imgs, domain_tag="target")
    with pytest.raises(ValueError):
        ds.sealed_labels()


# ---------------------------------------------------------------------------
# glyphs


def test_templates_are_deterministic_and_distinct():
    a = class_template(0, 16, 1, 0.5, 0.9)
    b = class_template(0, 16, 1, 0.5, 0.9)
    c = class_template(1, 16, 1, 0.5, 0.9)
    np.testing.assert_array_equal(a, b)
    assert np.abs(a - c).max() > 0


def test_template_paints_half_bright_half_dark():
    tpl = class_template(3, 16, 1, 0.5, 0.9)
    cells = class_pattern_cells(3, 16, 1)
    assert len(cells) == 6
    for cell in cells[:3]:
        rs, cs = _cell_pixels(cell)
        np.testing.assert_allclose(tpl[0, rs, cs], 0.9)
    for cell in cells[3:]:
        rs, cs = _cell_pixels(cell)
        np.testing.assert_allclose(tpl[0, rs, cs], 0.1)
    off = np.setdiff1d(np.arange(16), cells)
    for cell in off:
        rs, cs = _cell_pixels(cell)
        np.testing.assert_allclose(tpl[0, rs, cs], 0.5)


# ---------------------------------------------------------------------------
# the two-domain corpus


def test_corpus_shapes_labels_and_range():
    spec = SynthSpec(n_classes=4, per_class=5)
    src, tgt = synth_two_domain(spec, seed=0)
    assert src.images.shape == tgt.images.shape == (20, 1, 16, 16)
    assert src.images.min() >= 0.0 and src.images.max() <= 1.0
    assert tgt.images.min() >= 0.0 and tgt.images.max() <= 1.0
    np.testing.assert_array_equal(np.bincount(src.labels), [5, 5, 5, 5])
    assert tgt.labels is None
    np.testing.assert_array_equal(np.sort(np.unique(tgt.sealed_labels())), np.arange(4))


def test_corpus_is_deterministic_per_seed_and_split():
    spec = SynthSpec(n_classes=3, per_class=4)
    s0a, t0a = synth_two_domain(spec, seed=5, split=0)
    s0b, t0b = synth_two_domain(spec, seed=5, split=0)
    s1, _ = synth_two_domain(spec, seed=5, split=1)
    s_other, _ = synth_two_domain(spec, seed=6, split=0)
    np.testing.assert_array_equal(s0a.images, s0b.images)
    np.testing.assert_array_equal(t0a.images, t0b.images)
    assert np.abs(s0a.images - s1.images).max() > 0
    assert np.abs(s0a.images - s_other.images).max() > 0


def test_eval_per_class_sizes_only_the_heldout_split():
    spec = SynthSpec(n_classes=3, per_class=8, eval_per_class=2)
    src_train, _ = synth_two_domain(spec, seed=0, split=0)
    src_eval, tgt_eval = synth_two_domain(spec, seed=0, split=1)
    assert len(src_train) == 24
    assert len(src_eval) == len(tgt_eval) == 6


def test_inversion_shift_mirrors_the_source_stack():
    src, tgt = synth_two_domain(_quiet_spec(), seed=3)
    np.testing.assert_allclose(tgt.images, 1.0 - src.images, atol=1e-15)


def test_open_set_disjoint_uses_fresh_label_range():
    spec = _quiet_spec(n_classes=4, open_set_disjoint=True)
    src, tgt = synth_two_domain(spec, seed=1)
    assert set(np.unique(src.labels)) == {0, 1, 2, 3}
    assert set(np.unique(tgt.sealed_labels())) == {4, 5, 6, 7}


def test_polarity_flip_repaints_at_the_opposite_deviation():
    spec = _quiet_spec(polarity_flip=1.0)  # every pattern cell flips
    src, _ = synth_two_domain(spec, seed=2)
    cells = class_pattern_cells(0, 16, 1)
    img = src.images[0]
    for cell in cells[:3]:  # bright cells now dark
        rs, cs = _cell_pixels(cell)
        np.testing.assert_allclose(img[0, rs, cs], 0.1)
    for cell in cells[3:]:
        rs, cs = _cell_pixels(cell)
        np.testing.assert_allclose(img[0, rs, cs], 0.9)


def test_distractors_paint_spare_cells_at_pattern_magnitude():
    spec = _quiet_spec(distractors=3, per_class=20)
    src, _ = synth_two_domain(spec, seed=4)
    cells = set(class_pattern_cells(0, 16, 1).tolist())
    spare = [c for c in range(16) if c not in cells]
    img = src.images[0]
    touched = []
    for cell in spare:
        rs, cs = _cell_pixels(cell)
        v = img[0, rs, cs]
        if not np.allclose(v, 0.5):
            touched.append(cell)
            assert np.allclose(v, 0.9) or np.allclose(v, 0.1)
    assert len(touched) == 3


def test_clipped_noise_statistics_match_censored_moments():
    spec = SynthSpec(
        n_classes=2,
        per_class=800,
        jitter_std=0.0,
        distractors=0,
        polarity_flip=0.0,
        shift=ShiftSpec(noise_std=0.2, intensity_invert=True),
    )
    _, tgt = synth_two_domain(spec, seed=7)
    bright = class_pattern_cells(0, 16, 1)[0]  # inverted to 0.1, censored at 0
    rs, cs = _cell_pixels(bright)
    truth = tgt.sealed_labels()
    samples = tgt.images[truth == 0][:, 0, rs, cs].ravel()
    mean, var = oracles.clipped_normal_moments(0.1, 0.2, 0.0, 1.0)
    assert samples.mean() == pytest.approx(mean, abs=0.01)
    assert samples.var() == pytest.approx(var, rel=0.1)


def test_apply_shift_translation_and_permutation():
    rng = np.random.default_rng(0)
    imgs = rng.uniform(0.2, 0.8, size=(2, 3, 8, 8))
    rolled = apply_shift(
        imgs, ShiftSpec(noise_std=0.0, intensity_invert=False, translation=2), rng
    )
    assert rolled.shape == imgs.shape
    np.testing.assert_allclose(
        np.sort(rolled.ravel()), np.sort(imgs.ravel()), atol=1e-15
    )  # rolling permutes pixels
    permuted = apply_shift(
        imgs, ShiftSpec(noise_std=0.0, intensity_invert=False, channel_permute=True),
        np.random.default_rng(1),
    )
    np.testing.assert_allclose(
        np.sort(permuted.reshape(2, -1)), np.sort(imgs.reshape(2, -1)), atol=1e-15
    )


# ---------------------------------------------------------------------------
# batching


def _toy_datasets(ns=12, nt=12, n_classes=3):
    rng = np.random.default_rng(0)
    src = Dataset(
        images=rng.uniform(size=(ns, 1, 4, 4)),
        domain_tag="source",
        labels=rng.integers(0, n_classes, size=ns),
    )
    tgt = Dataset(images=rng.uniform(size=(nt, 1, 4, 4)), domain_tag="target")
    return src, tgt


def test_batches_have_paired_shape_and_count():
    src, tgt = _toy_datasets(ns=12, nt=12)
    batches = make_batches(src, tgt, batch_size=5, seed=0, epoch=0)
    assert len(batches) == 2  # floor(12 / 5)
    for b in batches:
        assert b.x_S.shape == (5, 1, 4, 4)
        assert b.x_T.shape == (5, 1, 4, 4)
        assert b.y_S.shape == (5,)
        assert b.target_indices.shape == (5,)


def test_shorter_stream_wraps_to_match_the_longer():
    src, tgt = _toy_datasets(ns=6, nt=12)
    batches = make_batches(src, tgt, batch_size=4, seed=1, epoch=0)
    assert len(batches) == 3
    seen_t = np.concatenate([b.target_indices for b in batches])
    np.testing.assert_array_equal(np.sort(seen_t), np.arange(12))
    # each source row appears exactly twice across the wrapped epoch
    seen_s_imgs = np.concatenate([b.x_S.data for b in batches])
    _, counts = np.unique(seen_s_imgs.reshape(12, -1), axis=0, return_counts=True)
    np.testing.assert_array_equal(counts, np.full(6, 2))


def test_batches_deterministic_in_seed_and_epoch():
    src, tgt = _toy_datasets()
    a = make_batches(src, tgt, 4, seed=3, epoch=2)
    b = make_batches(src, tgt, 4, seed=3, epoch=2)
    c = make_batches(src, tgt, 4, seed=3, epoch=3)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.target_indices, y.target_indices)
        np.testing.assert_array_equal(x.y_S, y.y_S)
    assert any(
        not np.array_equal(x.target_indices, y.target_indices) for x, y in zip(a, c)
    )


def test_batching_validation():
    src, tgt = _toy_datasets(ns=4, nt=4)
    with pytest.raises(ConfigError):
        make_batches(src, tgt, batch_size=0, seed=0, epoch=0)
    with pytest.raises(ConfigError):
        make_batches(src, tgt, batch_size=5, seed=0, epoch=0)
    empty = Dataset(images=np.zeros((0, 1, 4, 4)), domain_tag="target")
    with pytest.raises(ConfigError):
        make_batches(src, empty, batch_size=2, seed=0, epoch=0)


# ---------------------------------------------------------------------------
# IDX files


def test_idx_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(7, 5, 4), dtype=np.uint8)
    labels = rng.integers(0, 10, size=7).astype(np.uint8)
    write_idx(tmp_path / "imgs.idx", images)
    write_idx(tmp_path / "labels.idx", labels)
    np.testing.assert_array_equal(read_idx(tmp_path / "imgs.idx"), images)
    np.testing.assert_array_equal(read_idx(tmp_path / "labels.idx"), labels)


def test_idx_writer_validation(tmp_path):
    with pytest.raises(ValueError):
        write_idx(tmp_path / "x.idx", np.zeros((2, 2), dtype=np.float64))
    with pytest.raises(ValueError):
        write_idx(tmp_path / "x.idx", np.zeros((2, 2), dtype=np.uint8))


def test_idx_reader_rejects_malformed_files(tmp_path):
    good = tmp_path / "good.idx"
    write_idx(good, np.arange(24, dtype=np.uint8).reshape(2, 3, 4))
    raw = good.read_bytes()

    bad_magic = tmp_path / "magic.idx"
    bad_magic.write_bytes(b"\x01" + raw[1:])
    with pytest.raises(ValueError):
        read_idx(bad_magic)

    bad_dtype = tmp_path / "dtype.idx"
    bad_dtype.write_bytes(raw[:2] + b"\x0d" + raw[3:])
    with pytest.raises(ValueError):
        read_idx(bad_dtype)

    truncated = tmp_path / "short.idx"
    truncated.write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        read_idx(truncated)

    trailing = tmp_path / "long.idx"
    trailing.write_bytes(raw + b"\x00")
    with pytest.raises(ValueError):
        read_idx(trailing)


def test_load_idx_builds_datasets(tmp_path):
    rng = np.random.default_rng(1)
    images = rng.integers(0, 256, size=(6, 4, 4), dtype=np.uint8)
    labels = np.array([0, 1, 2, 0, 1, 2], dtype=np.uint8)
    write_idx(tmp_path / "imgs.idx", images)
    write_idx(tmp_path / "labels.idx", labels)

    src = load_idx(tmp_path / "imgs.idx", tmp_path / "labels.idx", "source")
    assert src.images.shape == (6, 1, 4, 4)
    assert src.images.max() <= 1.0
    np.testing.assert_array_equal(src.labels, labels)

    tgt = load_idx(tmp_path / "imgs.idx", tmp_path / "labels.idx", "target")
    assert tgt.labels is None
    np.testing.assert_array_equal(tgt.sealed_labels(), labels)

    with pytest.raises(ValueError):
        load_idx(tmp_path / "imgs.idx", None, "source")

    short = np.array([0, 1], dtype=np.uint8)
    write_idx(tmp_path / "short.idx", short)
    with pytest.raises(ValueError):
        load_idx(tmp_path / "imgs.idx", tmp_path / "short.idx", "source")
