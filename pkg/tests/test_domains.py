import numpy as np
import pytest

from ossa.domains import (
    DomainSpec,
    DomainSpecError,
    StyleSpec,
    apply_fog,
    fog_levels,
    generate_dataset,
    load_dataset,
    save_dataset,
)


@pytest.fixture(scope="module")
def small_spec():
    return DomainSpec(n_classes=4, image_size=16, samples_per_class=5, seed=3)


def test_fog_zero_without_blur_is_identity():
    img = np.random.default_rng(0).random((3, 8, 8))
    np.testing.assert_array_equal(apply_fog(img, 0.0, blur_sigma=0.0), img)


def test_fog_zero_with_blur_only_blurs():
    img = np.zeros((3, 9, 9))
    img[:, 4, 4] = 1.0
    out = apply_fog(img, 0.0, blur_sigma=0.7)
    assert out[0, 4, 4] < 1.0 and out[0, 4, 5] > 0.0
    assert out.sum() == pytest.approx(img.sum(), rel=1e-6)


def test_full_fog_is_fog_color():
    img = np.random.default_rng(1).random((3, 8, 8))
    out = apply_fog(img, 1.0, (0.2, 0.5, 0.9))
    np.testing.assert_allclose(out, np.broadcast_to(np.array([0.2, 0.5, 0.9])[:, None, None], img.shape))


def test_half_fog_blend_value():
    img = np.full((3, 4, 4), 0.2)
    out = apply_fog(img, 0.5, (0.8, 0.8, 0.8), blur_sigma=0.0)
    np.testing.assert_allclose(out, 0.5)
    # a constant image is unchanged by the blur
    np.testing.assert_allclose(apply_fog(img, 0.5, (0.8, 0.8, 0.8)), 0.5)


@pytest.mark.parametrize("t", [-0.1, 1.5])
def test_fog_range_checked(t):
    with pytest.raises(DomainSpecError):
        apply_fog(np.zeros((3, 4, 4)), t)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"fog_intensity": 1.2},
        {"contrast": 0.0},
        {"fog_color": (1.5, 0.0, 0.0)},
        {"color_shift": (0.1, 0.2)},
        {"fog_jitter": -0.1},
    ],
)
def test_style_validation(kwargs):
    with pytest.raises(DomainSpecError):
        StyleSpec(**kwargs)


def test_spec_validation():
    with pytest.raises(DomainSpecError):
        DomainSpec(n_classes=1)
    with pytest.raises(DomainSpecError):
        DomainSpec(samples_per_class=0)


def test_determinism(small_spec):
    a, b = generate_dataset(small_spec), generate_dataset(small_spec)
    assert a.images.tobytes() == b.images.tobytes()
    np.testing.assert_array_equal(a.labels, b.labels)


def test_balanced_labels(small_spec):
    ds = generate_dataset(small_spec)
    assert ds.images.shape == (20, 3, 16, 16)
    np.testing.assert_array_equal(np.bincount(ds.labels), [5, 5, 5, 5])
    assert ds.images.min() >= 0.0 and ds.images.max() <= 1.0


def test_style_changes_pixels_not_content(small_spec):
    clean = generate_dataset(small_spec)
    foggy = generate_dataset(small_spec.with_style(fog_intensity=0.6))
    shifted = generate_dataset(small_spec.with_style(contrast=0.5, color_shift=(0.1, 0.0, -0.1)))
    np.testing.assert_array_equal(clean.labels, foggy.labels)
    np.testing.assert_array_equal(clean.labels, shifted.labels)
    assert not np.allclose(clean.images, foggy.images)
    # pixel alignment: fog is (blurred) blend of the very same clean image
    expected = np.stack([apply_fog(im, 0.6) for im in clean.images])
    np.testing.assert_allclose(foggy.images, expected, atol=1 / 255 + 1e-6)


def test_identity_style_is_canonical_clean(small_spec):
    explicit = small_spec.with_style(fog_intensity=0.0, contrast=1.0, color_shift=(0, 0, 0))
    assert generate_dataset(explicit).images.tobytes() == generate_dataset(small_spec).images.tobytes()


def test_fog_reduces_contrast(small_spec):
    clean = generate_dataset(small_spec).images
    foggy = generate_dataset(small_spec.with_style(fog_intensity=0.6)).images
    assert foggy.std(axis=(2, 3)).mean() < 0.5 * clean.std(axis=(2, 3)).mean()


def test_png_round_trip(tmp_path, small_spec):
    ds = generate_dataset(small_spec)
    save_dataset(ds, tmp_path / "d", small_spec)
    assert (tmp_path / "d" / "images" / "00000.png").exists()
    back = load_dataset(tmp_path / "d")
    np.testing.assert_array_equal(back.images, ds.images)
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert back.ids == ds.ids


def test_unlabeled_manifest(tmp_path, small_spec):
    import json

    ds = generate_dataset(small_spec)
    save_dataset(ds, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    for e in manifest["images"]:
        e["label"] = None
    (tmp_path / "manifest.json").write_text(json.dumps(manifest))
    assert load_dataset(tmp_path).labels is None


def test_bad_manifest(tmp_path):
    with pytest.raises(DomainSpecError):
        load_dataset(tmp_path)
    (tmp_path / "manifest.json").write_text('{"schema_version": 99, "images": []}')
    with pytest.raises(DomainSpecError):
        load_dataset(tmp_path)


def test_fog_jitter_varies_per_image_but_keeps_content(small_spec):
    spec = small_spec.with_style(fog_intensity=0.5, fog_jitter=0.2)
    t = fog_levels(spec)
    assert t.min() >= 0.3 and t.max() <= 0.7 and t.std() > 0
    clean = generate_dataset(small_spec)
    foggy = generate_dataset(spec)
    np.testing.assert_array_equal(clean.labels, foggy.labels)
    expected = np.stack([apply_fog(im, ti) for im, ti in zip(clean.images, t)])
    np.testing.assert_allclose(foggy.images, expected, atol=1 / 255 + 1e-6)


def test_zero_jitter_is_constant_fog(small_spec):
    spec = small_spec.with_style(fog_intensity=0.4)
    np.testing.assert_array_equal(fog_levels(spec), 0.4)
    assert not small_spec.with_style(fog_jitter=0.1).style.is_identity
