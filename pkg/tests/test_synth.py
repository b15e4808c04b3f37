import numpy as np
import pytest

from dualcloak import ToyIdentityGenerator
from dualcloak.manifold import decode, encode
from dualcloak.synth import brightness_attribute, make_dataset, render_identity, _identity_params


class TestDataset:
    def test_structure(self):
        ds = make_dataset(3, 4, 32, seed=5)
        assert len(ds.images) == 12
        assert list(ds.identities) == [0] * 4 + [1] * 4 + [2] * 4
        assert len(ds.annotations) == 12
        for img, ann in zip(ds.images, ds.annotations):
            assert img.shape == (32, 32, 3)
            assert img.min() >= 0.0 and img.max() <= 1.0
            assert ann.shape == (32, 32)
            assert set(np.unique(ann)) <= {0, 1, 4, 5, 11, 17}
            assert (ann == 17).any()  # every face renders hair

    def test_deterministic(self):
        a = make_dataset(2, 2, 32, seed=9)
        b = make_dataset(2, 2, 32, seed=9)
        for x, y in zip(a.images, b.images):
            np.testing.assert_array_equal(x, y)
        for x, y in zip(a.annotations, b.annotations):
            np.testing.assert_array_equal(x, y)

    def test_sample_offset_changes_samples_not_layout(self):
        a = make_dataset(2, 2, 32, seed=9)
        b = make_dataset(2, 2, 32, seed=9, sample_offset=1000)
        assert list(a.identities) == list(b.identities)
        assert any((x != y).any() for x, y in zip(a.images, b.images))

    def test_same_identity_shares_hair_color(self):
        # Hair carries the identity: two samples of one identity agree on
        # mean hair color far better than samples of different identities.
        ds = make_dataset(2, 2, 32, seed=13)
        means = []
        for img, ann in zip(ds.images, ds.annotations):
            means.append(img[ann == 17].mean(axis=0))
        same = np.linalg.norm(means[0] - means[1])
        cross = np.linalg.norm(means[0] - means[2])
        assert same < cross


class TestRender:
    def test_seeded_render_deterministic(self):
        rng1 = np.random.default_rng(3)
        params = _identity_params(rng1)
        img_a, ann_a = render_identity(params, np.random.default_rng(7))
        img_b, ann_b = render_identity(params, np.random.default_rng(7))
        np.testing.assert_array_equal(img_a, img_b)
        np.testing.assert_array_equal(ann_a, ann_b)

    def test_custom_size(self):
        params = _identity_params(np.random.default_rng(4))
        img, ann = render_identity(params, np.random.default_rng(8), size=48)
        assert img.shape == (48, 48, 3)
        assert ann.shape == (48, 48)


class TestBrightnessAttribute:
    def test_direction_brightens_identity_latents(self):
        gen = ToyIdentityGenerator((32, 32, 3))
        ds = make_dataset(3, 4, 32, seed=21)
        attr = brightness_attribute(gen, ds.images)
        assert attr.strength > 0
        assert np.linalg.norm(attr.direction) == pytest.approx(1.0, abs=1e-9)

        img = ds.images[0]
        z = encode(gen, img)
        edited = decode(gen, z + attr.offset(1.0))
        assert edited.mean() > img.mean()
