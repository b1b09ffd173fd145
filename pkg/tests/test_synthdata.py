import numpy as np
import pytest
from scipy import ndimage

from dflab import synthdata as sd
from dflab.errors import InvalidArgumentError
from dflab.seeding import derive_seed


def test_build_class_specs_deterministic_and_distinct():
    a = sd.build_class_specs(10, seed=7)
    b = sd.build_class_specs(10, seed=7)
    assert len(a) == 10
    assert a == b
    assert len({(s.family, s.params) for s in a}) == 10


def test_build_class_specs_two_classes_differ():
    a, b = sd.build_class_specs(2, seed=0)
    assert (a.family, a.params) != (b.family, b.params)


def test_build_class_specs_rejects_single_class():
    with pytest.raises(InvalidArgumentError):
        sd.build_class_specs(1, seed=0)


def test_render_deterministic():
    spec = sd.build_class_specs(4, seed=3)[2]
    for modality in sd.MODALITIES:
        x = sd.render_sample(spec, modality, instance_seed=99)
        y = sd.render_sample(spec, modality, instance_seed=99)
        np.testing.assert_array_equal(x.pixels, y.pixels)


def test_render_pixel_range_and_shape():
    spec = sd.build_class_specs(4, seed=3)[0]
    s = sd.render_sample(spec, "photo", instance_seed=5)
    assert s.pixels.shape == (32, 32, 1)
    assert s.pixels.min() >= 0.0 and s.pixels.max() <= 1.0


def test_sketch_is_mostly_white_with_connected_contour():
    for spec in sd.build_class_specs(10, seed=7):
        for i in range(5):
            s = sd.render_sample(spec, "sketch", derive_seed(1, spec.class_id, i))
            img = s.pixels[..., 0]
            assert (img > 0.9).mean() >= 0.90
            _, n_components = ndimage.label(img < 0.5, structure=np.ones((3, 3)))
            assert n_components == 1


def test_photo_foreground_in_fill_band_with_noisy_background():
    for spec in sd.build_class_specs(10, seed=7):
        seed = derive_seed(2, spec.class_id, 0)
        img = sd.render_sample(spec, "photo", seed).pixels[..., 0]
        rng_geom = np.random.default_rng(derive_seed(seed, "geom"))
        mask = sd._fill_mask(sd._instance_geometry(spec, rng_geom, 32), 32)
        lo, hi = spec.fill_band
        assert lo <= img[mask].mean() <= hi
        background = img[~mask]
        assert background.std() > 0.01  # noise, not flat


def test_modality_mean_intensity_gap():
    for spec in sd.build_class_specs(10, seed=7):
        seed = derive_seed(3, spec.class_id, 0)
        photo = sd.render_sample(spec, "photo", seed).pixels
        sketch = sd.render_sample(spec, "sketch", seed).pixels
        assert sketch.mean() - photo.mean() >= 0.2


def test_distinct_classes_render_differently():
    a, b = sd.build_class_specs(2, seed=1)
    xa = sd.render_sample(a, "photo", 7).pixels
    xb = sd.render_sample(b, "photo", 7).pixels
    assert not np.array_equal(xa, xb)


def test_generate_dataset_instance_pairing():
    ds = sd.generate_dataset(10, 10, "instance_level", seed=1)
    assert len(ds.photos) == 100 and len(ds.sketches) == 100
    for p, s in zip(ds.photos, ds.sketches):
        assert p.class_id == s.class_id
        assert p.instance_id == s.instance_id
        assert p.modality == "photo" and s.modality == "sketch"


def test_generate_dataset_class_level_balance():
    ds = sd.generate_dataset(10, 10, "class_level", seed=1)
    photo_hist = np.bincount(sd.labels_array(ds.photos), minlength=10)
    sketch_hist = np.bincount(sd.labels_array(ds.sketches), minlength=10)
    np.testing.assert_array_equal(photo_hist, sketch_hist)
    assert (photo_hist == 10).all()
    # index pairing still class-aligned, instance order shuffled
    assert all(p.class_id == s.class_id for p, s in zip(ds.photos, ds.sketches))
    assert any(p.instance_id != s.instance_id for p, s in zip(ds.photos, ds.sketches))


def test_generate_dataset_deterministic():
    a = sd.generate_dataset(4, 5, "instance_level", seed=9)
    b = sd.generate_dataset(4, 5, "instance_level", seed=9)
    np.testing.assert_array_equal(sd.pixels_array(a.photos), sd.pixels_array(b.photos))
    np.testing.assert_array_equal(sd.pixels_array(a.sketches), sd.pixels_array(b.sketches))


def test_spec_seed_shares_specs_across_variants():
    a = sd.generate_dataset(4, 5, "instance_level", seed=1, spec_seed=42)
    b = sd.generate_dataset(4, 5, "instance_level", seed=2, spec_seed=42)
    assert a.specs == b.specs
    assert not np.array_equal(sd.pixels_array(a.photos), sd.pixels_array(b.photos))


def test_split_stratified_and_disjoint():
    ds = sd.generate_dataset(10, 10, "instance_level", seed=1)
    train, test = sd.split(ds, 0.2, seed=4)
    assert len(train.photos) == 80 and len(test.photos) == 20
    assert len(train.sketches) == 80 and len(test.sketches) == 20
    for c in range(10):
        assert sum(1 for s in train.photos if s.class_id == c) == 8
        assert sum(1 for s in test.photos if s.class_id == c) == 2
    train_ids = {s.instance_id for s in train.photos} | {s.instance_id for s in train.sketches}
    test_ids = {s.instance_id for s in test.photos} | {s.instance_id for s in test.sketches}
    assert not train_ids & test_ids


def test_split_deterministic_and_validates_fraction():
    ds = sd.generate_dataset(4, 10, "instance_level", seed=1)
    a = sd.split(ds, 0.2, seed=3)
    b = sd.split(ds, 0.2, seed=3)
    assert [s.instance_id for s in a[1].photos] == [s.instance_id for s in b[1].photos]
    for bad in (0.0, 1.0, -0.5, 2.0):
        with pytest.raises(InvalidArgumentError):
            sd.split(ds, bad, seed=3)


def test_dataset_roundtrip(tmp_path):
    ds = sd.generate_dataset(4, 5, "instance_level", seed=2)
    sd.save_dataset(ds, str(tmp_path / "data"))
    back = sd.load_dataset(str(tmp_path / "data"))
    assert back.num_classes == 4 and back.pairing_mode == "instance_level"
    assert back.specs == ds.specs
    np.testing.assert_array_equal(sd.pixels_array(back.photos), sd.pixels_array(ds.photos))
    assert [s.instance_id for s in back.sketches] == [s.instance_id for s in ds.sketches]
    assert (tmp_path / "data" / "photos_preview.png").exists()
