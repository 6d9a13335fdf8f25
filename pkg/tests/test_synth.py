import numpy as np
import pytest
from hypothesis import given, strategies as st

from owl.data import FeatureStore
from owl.synth import (KINDS, BlobSpec, Perturbation, assign_sources, blob_centers, class_label, gen_blobs,
                       perturb, rotation_matrix, schedule_manifest)


def store(n=12, dim=5, seed=0):
    rng = np.random.default_rng(seed)
    return FeatureStore([f"s{i}" for i in range(n)], rng.normal(size=(n, dim)))


@pytest.mark.parametrize("fractions", [(0.6, 0.2, 0.2), (1.0, 0.0, 0.0), (0.5, 0.5, 0.0)])
def test_counts_match_blob_spec(fractions):
    spec = BlobSpec(4, 3, (10, 11, 25, 7), 5.0, fractions, seed=2)
    manifest, features, _ = gen_blobs(spec)
    assert len(features) == len(manifest) == sum(spec.counts())
    for k, n in enumerate(spec.counts()):
        recs = [r for r in manifest if r.label == class_label(k)]
        assert len(recs) == n
        by_split = {s: sum(r.split == s for r in recs) for s in ("train", "validation", "test")}
        assert by_split["validation"] == int(np.floor(fractions[1] * n + 1e-9))
        assert by_split["test"] == int(np.floor(fractions[2] * n + 1e-9))


def test_deterministic():
    spec = BlobSpec(5, 4, 20, 6.0, seed=7)
    a, b = gen_blobs(spec), gen_blobs(spec)
    assert a[0] == b[0] and a[1] == b[1] and np.array_equal(a[2], b[2])
    assert gen_blobs(BlobSpec(5, 4, 20, 6.0, seed=8))[1] != a[1]


def test_single_class_near_center():
    manifest, features, centers = gen_blobs(BlobSpec(1, 3, 10, 1.0))
    assert np.linalg.norm(features.matrix - centers[0], axis=1).max() < 6 * np.sqrt(3)


def test_nearest_center_is_perfect_at_separation_10():
    manifest, features, centers = gen_blobs(BlobSpec(3, 8, 50, 10.0, seed=1))
    truth = [r.label for r in manifest]
    d = np.linalg.norm(features.matrix[:, None, :] - centers[None], axis=2)
    assert [class_label(k) for k in d.argmin(axis=1)] == truth


def test_centers_respect_separation():
    c = blob_centers(12, 3, 4.0, seed=3)
    d = np.linalg.norm(c[:, None] - c[None], axis=2)
    assert d[np.triu_indices(12, 1)].min() >= 4.0


def test_placement_gives_up():
    # the box grows with the class count, so only the retry cap can run out
    with pytest.raises(ValueError, match="could not place 200 centers"):
        blob_centers(200, 2, 10.0, seed=0, max_tries=3)


@pytest.mark.parametrize("kw", [dict(classes=0), dict(separation=0.0), dict(separation=float("inf")),
                                dict(split_fractions=(0.5, 0.2, 0.2)), dict(per_class=0),
                                dict(per_class=(3, 3))])
def test_spec_validation(kw):
    base = dict(classes=3, dim=2, per_class=5, separation=2.0)
    base.update(kw)
    with pytest.raises(ValueError):
        BlobSpec(**base)


def test_assign_sources_carryover():
    manifest, _, _ = gen_blobs(BlobSpec(4, 2, 40, 5.0))
    src = {class_label(0): 0, class_label(1): 0, class_label(2): 1, class_label(3): 2}
    out = assign_sources(manifest, src, carryover=0.25, seed=1)
    for lab, first in src.items():
        sources = [r.source for r in out if r.label == lab]
        assert min(sources) == first
        if first < 2:
            assert sum(s > first for s in sources) == sum(round(0.25 * n) for n in (24, 8, 8))
    assert assign_sources(manifest, src) == assign_sources(manifest, src, 0.0, 5)


def test_schedule_manifest_shape():
    m = schedule_manifest(3, [2, 1])
    assert len(m.labels) == 6
    assert {r.source for r in m if r.label == class_label(5)} == {2}


def test_identity_and_zero_noise_are_exact():
    s = store()
    assert perturb(s, Perturbation()) == s
    assert perturb(s, Perturbation("gaussian_noise", 0.0, seed=4)) == s
    assert perturb(s, Perturbation("orthogonal_rotation", 0.0)).matrix == pytest.approx(s.matrix, abs=1e-12)


@given(kind=st.sampled_from(KINDS), mag=st.floats(0, 5), seed=st.integers(0, 2**32))
def test_perturb_keeps_ids_and_dim(kind, mag, seed):
    s = store()
    out = perturb(s, Perturbation(kind, mag, seed))
    assert out.ids == s.ids and out.dim == s.dim


@given(mag=st.floats(0, 3), seed=st.integers(0, 1000), dim=st.integers(1, 9))
def test_rotation_is_isometry(mag, seed, dim):
    s = store(dim=dim, seed=seed)
    out = perturb(s, Perturbation("orthogonal_rotation", mag, seed))
    assert np.abs(np.linalg.norm(out.matrix, axis=1) - np.linalg.norm(s.matrix, axis=1)).max() < 1e-9


def test_rotation_composition_is_not_linear_in_seed():
    # same seed composes additively, different seeds do not commute into one rotation
    a = rotation_matrix(5, 0.4, seed=1)
    assert np.allclose(a @ a, rotation_matrix(5, 0.8, seed=1), atol=1e-9)
    b = rotation_matrix(5, 0.4, seed=2)
    assert not np.allclose(a @ b, b @ a, atol=1e-6)
    assert not np.allclose(a @ b, rotation_matrix(5, 0.8, seed=1), atol=1e-6)


def test_noise_statistics_and_reproducibility():
    s = FeatureStore([f"s{i}" for i in range(4000)], np.zeros((4000, 3)))
    p = Perturbation("gaussian_noise", 2.0, seed=5)
    out = perturb(s, p)
    assert out == perturb(s, p)
    assert out.matrix.std() == pytest.approx(2.0, rel=0.03)
    assert abs(out.matrix.mean()) < 0.05


def test_scale_and_flip():
    s = store()
    assert np.array_equal(perturb(s, Perturbation("uniform_scale", 0.5)).matrix, s.matrix * 1.5)
    flipped = perturb(s, Perturbation("coordinate_flip_sign", 0.4, seed=3)).matrix
    signs = np.sign(flipped / s.matrix)
    assert (signs == signs[0]).all() and (signs[0] == -1).sum() == 2


def test_parse():
    assert Perturbation.parse("gaussian_noise:6") == Perturbation("gaussian_noise", 6.0)
    assert Perturbation.parse("identity").name() == "identity"
    with pytest.raises(ValueError):
        Perturbation.parse("blur:1")
    with pytest.raises(ValueError):
        Perturbation("uniform_scale", -1.0)
