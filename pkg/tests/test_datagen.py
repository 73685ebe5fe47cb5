import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regibench.datagen import (
    DEFAULT_RANGES,
    FAMILIES,
    GenSpec,
    draw_transform,
    expand_families,
    generate_dataset,
    generate_pair,
    load_pair,
    pair_seed,
    read_manifest,
    resize_to,
    synth_test_image,
)
from regibench.errors import InvalidParameterError
from regibench.geometry import read_field, warp
from regibench.imagecore import write_png

seeds = st.integers(0, 2**64 - 1)


def test_default_ranges_table():
    assert DEFAULT_RANGES["translation"] == {"tx": (-5.0, 5.0), "ty": (-5.0, 5.0)}
    assert DEFAULT_RANGES["shearing"] == {"shx": (0.0, 0.15), "shy": (0.0, 0.15)}
    assert DEFAULT_RANGES["scaling"] == {"sx": (0.9, 1.0), "sy": (0.9, 1.0)}
    assert DEFAULT_RANGES["rotation"] == {"q": (-5.0, 5.0)}
    assert DEFAULT_RANGES["pixelwise"] == {"p": (-5.0, 5.0)}


def test_genspec_validation():
    with pytest.raises(InvalidParameterError):
        GenSpec("warp")
    with pytest.raises(InvalidParameterError):
        GenSpec("translation", ranges={"q": (0, 1)})
    with pytest.raises(InvalidParameterError):
        GenSpec("translation", ranges={"tx": (1, 0)})
    with pytest.raises(InvalidParameterError):
        GenSpec("translation", seed=-1)


def test_scaling_draw_diagonal_in_range():
    gen = GenSpec("scaling", seed=5, output_size=64)
    d = draw_transform(gen, gen.rng())
    assert 0.9 <= d.transform.m[0, 0] <= 1.0
    assert 0.9 <= d.transform.m[1, 1] <= 1.0


def test_degenerate_translation_range_is_identity():
    gen = GenSpec("translation", seed=1, ranges={"tx": (0, 0), "ty": (0, 0)})
    d = draw_transform(gen, gen.rng())
    np.testing.assert_array_equal(d.transform.m, np.eye(3))


@settings(max_examples=40)
@given(st.sampled_from(FAMILIES), seeds)
def test_draws_inside_ranges_and_deterministic(family, seed):
    gen = GenSpec(family, seed=seed, output_size=32)
    a = draw_transform(gen, gen.rng())
    b = draw_transform(gen, gen.rng())
    assert a.params == b.params
    if family == "pixelwise":
        vals = np.array([a.params["px"], a.params["py"]])
        assert vals.shape == (2, 8, 8)
        assert vals.min() >= -5 and vals.max() <= 5
    else:
        for name, (lo, hi) in DEFAULT_RANGES[family].items():
            assert lo <= a.params[name] <= hi


def test_translation_pair_is_brute_force_shift(textured):
    img = resize_to(textured, 40)
    gen = GenSpec("translation", seed=3, output_size=40, ranges={"tx": (3, 3), "ty": (-2, -2)})
    pair = generate_pair(img, gen)
    np.testing.assert_array_equal(pair.gt_field.dx, 3.0)
    np.testing.assert_array_equal(pair.gt_field.dy, -2.0)
    expected = np.zeros_like(img)
    for y in range(40):
        for x in range(40):
            sx, sy = x + 3, y - 2
            if 0 <= sx < 40 and 0 <= sy < 40:
                expected[y, x] = img[sy, sx]
    np.testing.assert_array_equal(pair.fixed, expected)


def test_zero_pixelwise_draw_keeps_image(textured):
    img = resize_to(textured, 32)
    pair = generate_pair(img, GenSpec("pixelwise", seed=9, output_size=32, ranges={"p": (0, 0)}))
    assert np.array_equal(pair.fixed, img)


def test_zero_rotation_field_is_zero(textured):
    img = resize_to(textured, 32)
    pair = generate_pair(img, GenSpec("rotation", seed=2, output_size=32, ranges={"q": (0, 0)}))
    assert not pair.gt_field.dx.any() and not pair.gt_field.dy.any()


def test_generate_pair_requires_resized_input(textured):
    with pytest.raises(InvalidParameterError):
        generate_pair(textured, GenSpec("translation", output_size=64))


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(FAMILIES), seeds)
def test_fixed_is_warp_of_moving(family, seed):
    img = synth_test_image(4, 32)
    pair = generate_pair(img, GenSpec(family, seed=seed, output_size=32))
    assert pair.gt_field.shape == (32, 32)
    assert np.array_equal(pair.fixed, warp(img, pair.gt_field, fill="zero"))


def test_resize_examples(textured):
    assert np.array_equal(resize_to(textured, 256), textured)
    const = np.full((13, 7), 42.0)
    np.testing.assert_allclose(resize_to(const, 20), 42.0)
    checker = np.array([[0.0, 255.0], [255.0, 0.0]])
    out = resize_to(checker, 4)
    assert (out[0, 0], out[0, -1], out[-1, 0], out[-1, -1]) == (0.0, 255.0, 255.0, 0.0)
    # hand bilinear: x = 1/3 of the way between 0 and 255
    assert out[0, 1] == pytest.approx(85.0)
    with pytest.raises(InvalidParameterError):
        resize_to(checker, 1)


def test_synth_image_contract():
    a = synth_test_image(1, 64)
    assert a.shape == (64, 64, 3)
    assert np.array_equal(a, synth_test_image(1, 64))
    b = synth_test_image(2, 64)
    assert np.mean(np.any(a != b, axis=2)) >= 0.01
    assert a.min() >= 0 and a.max() <= 255


def test_pair_seed_differs_by_index():
    assert pair_seed(0, 0) != pair_seed(0, 1)
    assert pair_seed(0, 5) == pair_seed(0, 5)
    assert 0 <= pair_seed(123, 4) < 2**64


def test_expand_families():
    assert expand_families(["rigidset"]) == ["translation", "rotation", "scaling", "shearing"]
    assert expand_families(["nonrigidset"]) == ["pixelwise"]
    with pytest.raises(InvalidParameterError):
        expand_families(["warp"])


@pytest.fixture
def input_dir(tmp_path):
    d = tmp_path / "inputs"
    d.mkdir()
    for i in range(2):
        write_png(d / f"img{i}.png", synth_test_image(i, 48))
    return d


def test_generate_dataset_determinism(input_dir, tmp_path):
    m1 = generate_dataset(input_dir, ["translation"], tmp_path / "a", {"translation": 2}, 7, 32)
    m2 = generate_dataset(input_dir, ["translation"], tmp_path / "b", {"translation": 2}, 7, 32)
    rows1, rows2 = read_manifest(m1), read_manifest(m2)
    assert len(rows1) == 2
    assert rows1 == rows2
    for r in rows1:
        assert (tmp_path / "a" / r["field_path"]).read_bytes() == (tmp_path / "b" / r["field_path"]).read_bytes()
        assert (tmp_path / "a" / r["fixed_path"]).read_bytes() == (tmp_path / "b" / r["fixed_path"]).read_bytes()


def test_generate_dataset_sets(input_dir, tmp_path):
    rows = read_manifest(generate_dataset(input_dir, ["rigidset"], tmp_path / "r", 1, 0, 32))
    assert sorted(r["family"] for r in rows) == sorted(["translation", "rotation", "scaling", "shearing"])
    rows = read_manifest(generate_dataset(input_dir, ["nonrigidset"], tmp_path / "n", 3, 0, 32))
    assert [r["family"] for r in rows] == ["pixelwise"] * 3


def test_manifest_roundtrip_bit_exact(input_dir, tmp_path):
    out = tmp_path / "ds"
    rows = read_manifest(generate_dataset(input_dir, ["pixelwise", "rotation"], out, 2, 11, 32))
    for r in rows:
        pair = load_pair(r, out)
        gen = GenSpec(r["family"], seed=int(r["seed"]), output_size=32)
        fresh = generate_pair(pair.moving, gen)
        assert pair.gt_field.equals(fresh.gt_field)
        assert pair.gt_field.equals(read_field(out / r["field_path"]))
        assert pair.draw == json.loads(r["params_json"])


def test_generate_dataset_missing_or_empty_dir(tmp_path):
    with pytest.raises(OSError, match="nope"):
        generate_dataset(tmp_path / "nope", ["translation"], tmp_path / "o", 1)
    (tmp_path / "empty").mkdir()
    with pytest.raises(OSError, match="empty"):
        generate_dataset(tmp_path / "empty", ["translation"], tmp_path / "o", 1)
