import hashlib

import numpy as np
import pytest

from gapfinder import dataset_forge as df
from gapfinder.rng import XorShift64Star


@pytest.fixture(scope="module")
def small_biased():
    return df.generate_dataset(40, "biased", 32, 7)


@pytest.fixture(scope="module")
def small_balanced():
    return df.generate_dataset(40, "balanced", 32, 7)


def body_means(ds, i):
    px = ds.images[i][ds.masks[i]]
    return px[:, 0].mean(), px[:, 2].mean()


def test_deterministic(small_biased):
    again = df.generate_dataset(40, "biased", 32, 7)
    assert again.images.tobytes() == small_biased.images.tobytes()
    assert again.masks.tobytes() == small_biased.masks.tobytes()
    assert np.array_equal(again.labels, small_biased.labels)


def test_frozen_digest():
    # pins the generator, the glyph geometry and the quantization
    ds = df.generate_dataset(8, "biased", 32, 7)
    digest = hashlib.sha256(ds.images.tobytes() + ds.masks.tobytes()).hexdigest()
    assert digest == "15b7e21dbb01dc5bf30deb5c710a6797a799c51525bef136a4ef27f34a7700dd"
    assert [int(m.sum()) for m in ds.masks] == [166, 132, 160, 100, 169, 108, 213, 108]


def test_seed_changes_output(small_biased):
    other = df.generate_dataset(40, "biased", 32, 8)
    assert other.images.tobytes() != small_biased.images.tobytes()


def test_smaller_set_is_prefix(small_biased):
    ds = df.generate_dataset(10, "biased", 32, 7)
    assert ds.images.tobytes() == small_biased.images[:10].tobytes()


def test_biased_color_audit():
    ds = df.generate_dataset(200, "biased", 32, 11)
    for i in range(len(ds)):
        r, b = body_means(ds, i)
        assert (r > b) if ds.labels[i] == 0 else (b > r), i


def test_balanced_red_fraction_frozen():
    ds = df.generate_dataset(2000, "balanced", 32, 7)
    red = sum(body_means(ds, i)[0] > body_means(ds, i)[1] for i in range(0, 2000, 2))
    assert red == 495
    assert 0.4 <= red / 1000 <= 0.6


def test_balanced_mixes_colors_in_both_classes(small_balanced):
    for label in (0, 1):
        idx = np.flatnonzero(small_balanced.labels == label)
        colors = {df.fill_is_red(small_balanced, int(i)) for i in idx}
        assert colors == {True, False}


def test_fill_color_bands(small_biased):
    for i in range(len(small_biased)):
        px = small_biased.images[i][small_biased.masks[i]]
        assert np.all(px == px[0])  # flat fill
        strong = px[0, 0] if small_biased.labels[i] == 0 else px[0, 2]
        weak = px[0, 1:] if small_biased.labels[i] == 0 else px[0, :2]
        assert 0.7 - 1 / 510 <= strong <= 1.0
        assert np.all(weak <= 0.2 + 1 / 510)


def test_class_balance_exact(small_biased):
    assert np.count_nonzero(small_biased.labels == 0) == np.count_nonzero(small_biased.labels == 1) == 20


def test_pixels_are_eighth_bit_multiples(small_balanced):
    im = small_balanced.images.astype(np.float64)
    assert im.min() >= 0 and im.max() <= 1
    assert np.abs(im * 255 - np.round(im * 255)).max() < 1e-4


def test_background_range(small_biased):
    for i in range(len(small_biased)):
        corner = small_biased.images[i][0, 0]
        assert corner[0] == corner[1] == corner[2]
        assert 0.6 - 1 / 510 <= corner[0] <= 0.9 + 1 / 510


@pytest.mark.parametrize("kwargs,match", [
    (dict(n=7), "even"),
    (dict(n=0), "even"),
    (dict(mode="striped"), "mode"),
    (dict(input_side=16), "at least 32"),
    (dict(seed=-1), "seed"),
])
def test_rejections(kwargs, match):
    args = dict(n=4, mode="biased", input_side=32, seed=1)
    args.update(kwargs)
    with pytest.raises(ValueError, match=match):
        df.generate_dataset(**args)


def test_render_glyph_is_pure():
    a = df.render_glyph(0, 40, XorShift64Star.for_stream(3, 5), "balanced")
    b = df.render_glyph(0, 40, XorShift64Star.for_stream(3, 5), "balanced")
    assert a[0].tobytes() == b[0].tobytes() and np.array_equal(a[1], b[1]) and a[2] == b[2]


# ---------------------------------------------------------------- glyph_mask


def test_mask_is_partial(small_biased):
    side = small_biased.side
    for i in range(len(small_biased)):
        count = int(df.glyph_mask(i, small_biased).sum())
        assert 0 < count < side * side


def test_mask_coordinate_diff_oracle(small_biased):
    for i in range(len(small_biased)):
        img = small_biased.images[i]
        mask = df.glyph_mask(i, small_biased)
        painted = img.copy()
        painted[mask] = 0.5
        changed = np.any(painted != img, axis=-1)
        # 0.5 is never a legal fill, so every body pixel changes
        assert np.array_equal(changed, mask)


def test_mask_deterministic(small_biased):
    again = df.generate_dataset(40, "biased", 32, 7)
    for i in (0, 1, 17):
        assert np.array_equal(df.glyph_mask(i, small_biased), df.glyph_mask(i, again))


def test_mask_returns_copy(small_biased):
    m = df.glyph_mask(0, small_biased)
    m[:] = False
    assert small_biased.masks[0].any()


@pytest.mark.parametrize("index", [-1, 40])
def test_mask_index_out_of_range(small_biased, index):
    with pytest.raises(IndexError, match="out of range"):
        df.glyph_mask(index, small_biased)


# ---------------------------------------------------------------- disk


def test_write_read_round_trip(tmp_path):
    ds = df.generate_dataset(6, "balanced", 32, 2)
    df.write_dataset(ds, tmp_path)
    text = (tmp_path / "labels.csv").read_bytes()
    assert text.startswith(b"filename,label\nimg_00000.ppm,0\nimg_00001.ppm,1\n")
    assert b"\r" not in text
    assert (tmp_path / "img_00003.mask.pgm").exists()
    back = df.read_dataset(tmp_path)
    assert back.images.tobytes() == ds.images.tobytes()
    assert np.array_equal(back.masks, ds.masks)
    assert np.array_equal(back.labels, ds.labels)
    assert (back.mode, back.seed) == ("balanced", 2)


def test_read_missing_labels(tmp_path):
    with pytest.raises(FileNotFoundError):
        df.read_dataset(tmp_path)
