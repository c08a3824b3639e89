import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gapfinder import pnm
from gapfinder.invariance_spec import (
    ChangeSpec, MaskError, MaskSizeError, SpecError, apply_constraints, check_mask_size, load_mask,
    parse_change_spec,
)


def write_spec(tmp_path, name="spec.json", mask="m.pgm", mask_pixels=None, **overrides):
    if mask_pixels is not None:
        pnm.write_pgm(tmp_path / (mask if isinstance(mask, str) else "m.pgm"), mask_pixels)
    body = dict(mask=mask, channels=["R"], step_epsilon=0.007, target_class=1, max_iterations=15,
                stop_target_prob=0.995, plateau_window=5, plateau_delta=0.001,
                description="Repainting the vehicle body leaves it a vehicle.")
    body.update(overrides)
    body = {k: v for k, v in body.items() if v is not ...}
    path = tmp_path / name
    path.write_text(json.dumps(body), encoding="utf-8")
    return path


def make_spec(mask, channels=("R",), **kw):
    kw = dict(dict(step_epsilon=0.01, target_class=1, max_iterations=15), **kw)
    return ChangeSpec(mask=np.asarray(mask, bool), channels=channels, **kw)


# ---------------------------------------------------------------- masks


def test_all_255_mask(tmp_path):
    pnm.write_pgm(tmp_path / "m.pgm", np.full((5, 7), 255, np.uint8))
    assert load_mask(tmp_path / "m.pgm").all()


def test_all_0_mask(tmp_path):
    pnm.write_pgm(tmp_path / "m.pgm", np.zeros((5, 7), np.uint8))
    assert not load_mask(tmp_path / "m.pgm").any()


@pytest.mark.parametrize("h,w", [(1, 1), (3, 3), (4, 6), (7, 5), (32, 32)])
def test_checkerboard_count(tmp_path, h, w):
    board = ((np.add.outer(np.arange(h), np.arange(w)) % 2) == 0) * 255
    pnm.write_pgm(tmp_path / "m.pgm", board.astype(np.uint8))
    assert int(load_mask(tmp_path / "m.pgm").sum()) == math.ceil(h * w / 2)


def test_threshold_at_128(tmp_path):
    pnm.write_pgm(tmp_path / "m.pgm", np.array([[0, 127, 128, 255]], np.uint8))
    assert load_mask(tmp_path / "m.pgm").tolist() == [[False, False, True, True]]


def test_mask_rejects_ppm(tmp_path):
    pnm.write_ppm(tmp_path / "m.ppm", np.zeros((2, 2, 3)))
    with pytest.raises(MaskError, match="P5"):
        load_mask(tmp_path / "m.ppm")


def test_mask_rejects_16_bit(tmp_path):
    (tmp_path / "m.pgm").write_bytes(b"P5\n2 1\n65535\n" + bytes(4))
    with pytest.raises(MaskError, match="16-bit"):
        load_mask(tmp_path / "m.pgm")


def test_mask_size_mismatch_at_use():
    spec = make_spec(np.ones((4, 4)))
    check_mask_size(spec, 4, 4)
    with pytest.raises(MaskSizeError, match="4x4 but the image is 5x4"):
        check_mask_size(spec, 4, 5)


# ---------------------------------------------------------------- parsing


def test_prototype_configuration(tmp_path):
    path = write_spec(tmp_path, mask_pixels=np.full((8, 8), 255, np.uint8))
    spec = parse_change_spec(path)
    assert spec.channels == ("R",)
    assert spec.step_epsilon == 0.007
    assert spec.max_iterations == 15
    assert spec.stop_target_prob == 0.995
    assert spec.target_class == 1
    assert spec.shape == (8, 8) and spec.mask.all()
    assert spec.description.startswith("Repainting")


def test_optional_stopping_defaults(tmp_path):
    path = write_spec(tmp_path, mask_pixels=np.zeros((2, 2), np.uint8),
                      stop_target_prob=..., plateau_window=..., plateau_delta=...)
    spec = parse_change_spec(path)
    assert (spec.stop_target_prob, spec.plateau_window, spec.plateau_delta) == (0.995, 5, 0.001)


def test_mask_path_relative_to_spec(tmp_path, monkeypatch):
    sub = tmp_path / "cfg"
    sub.mkdir()
    path = write_spec(sub, mask_pixels=np.full((3, 3), 200, np.uint8))
    monkeypatch.chdir(tmp_path)
    assert parse_change_spec("cfg/spec.json").mask.all()


@pytest.mark.parametrize(
    "overrides,key",
    [
        (dict(channels=[]), "channels"),
        (dict(channels=["R", "R"]), "channels"),
        (dict(channels=["Y"]), "channels"),
        (dict(channels="R"), "channels"),
        (dict(step_epsilon=1.5), "step_epsilon"),
        (dict(step_epsilon=0), "step_epsilon"),
        (dict(step_epsilon="0.1"), "step_epsilon"),
        (dict(target_class=-1), "target_class"),
        (dict(target_class=1.0), "target_class"),
        (dict(target_class=True), "target_class"),
        (dict(max_iterations=0), "max_iterations"),
        (dict(stop_target_prob=0.5), "stop_target_prob"),
        (dict(plateau_window=0), "plateau_window"),
        (dict(plateau_delta=-0.1), "plateau_delta"),
        (dict(description=3), "description"),
        (dict(mask=...), "mask"),
        (dict(description=...), "description"),
        (dict(colour="red"), "colour"),
    ],
)
def test_rejections_name_the_key(tmp_path, overrides, key):
    path = write_spec(tmp_path, mask_pixels=np.zeros((2, 2), np.uint8), **overrides)
    with pytest.raises(SpecError) as info:
        parse_change_spec(path)
    assert info.value.key == key
    assert key in str(info.value)


def test_invalid_json(tmp_path):
    (tmp_path / "s.json").write_text("{mask:", encoding="utf-8")
    with pytest.raises(SpecError, match="not valid JSON"):
        parse_change_spec(tmp_path / "s.json")


def test_missing_mask_file(tmp_path):
    with pytest.raises(OSError):
        parse_change_spec(write_spec(tmp_path, mask="nowhere.pgm"))


def test_spec_is_immutable():
    spec = make_spec(np.ones((2, 2)))
    with pytest.raises(Exception):
        spec.step_epsilon = 0.5
    with pytest.raises(ValueError):
        spec.mask[0, 0] = False


# ---------------------------------------------------------------- projection


def test_identity_constraint(rng):
    d = rng.standard_normal((3, 6, 5)).astype(np.float32)
    spec = make_spec(np.ones((6, 5)), channels=("R", "G", "B"))
    assert apply_constraints(d, spec).tobytes() == d.tobytes()


def test_all_false_mask_zeroes(rng):
    d = rng.standard_normal((3, 6, 5)).astype(np.float32)
    out = apply_constraints(d, make_spec(np.zeros((6, 5)), channels=("R", "G", "B")))
    assert np.array_equal(out, np.zeros_like(d))


def test_half_mask_red_set_oracle(rng):
    h, w = 6, 8
    mask = np.zeros((h, w), bool)
    mask[:, : w // 2] = True
    d = rng.uniform(0.1, 1.0, (3, h, w)).astype(np.float32)  # no zeros in the input
    out = apply_constraints(d, make_spec(mask))
    got = {tuple(c) for c in np.argwhere(out != 0)}
    want = {(0, y, x) for y in range(h) for x in range(w) if mask[y, x]}
    assert got == want


def test_dimension_mismatch():
    with pytest.raises(MaskSizeError):
        apply_constraints(np.zeros((3, 4, 5)), make_spec(np.ones((5, 4))))


channel_sets = st.sets(st.sampled_from("RGB"), min_size=1).map(lambda s: tuple(sorted(s)))


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), channels=channel_sets, a=st.floats(-4, 4))
def test_projection_properties(seed, channels, a):
    g = np.random.default_rng(seed)
    h, w = g.integers(1, 9, 2)
    spec = make_spec(g.random((h, w)) < 0.5, channels=channels)
    d1 = g.standard_normal((3, h, w)).astype(np.float32)
    d2 = g.standard_normal((3, h, w)).astype(np.float32)
    once = apply_constraints(d1, spec)
    assert apply_constraints(once, spec).tobytes() == once.tobytes()
    lhs = apply_constraints(np.float32(a) * d1 + d2, spec)
    rhs = np.float32(a) * once + apply_constraints(d2, spec)
    assert np.abs(lhs - rhs).max(initial=0) <= 1e-6 * max(1.0, abs(a)) * 4
    outside = ~spec.allowed()
    assert np.all(once[outside] == 0.0)
    assert not np.signbit(once[outside]).any()
