"""Synthetic corpus tests: family coverage, determinism, labels, packing."""

import numpy as np
import pytest

from urbanforms.raster import read_image_pack
from urbanforms.synth import (
    FAMILIES,
    make_synthetic_corpus,
    read_labels,
    synth_image,
    write_corpus,
    write_labels,
)

# -- single images ---------------------------------------------------------------


def test_images_are_binary_and_non_empty():
    for family in FAMILIES:
        img = synth_image(family, seed=(0, 7))
        assert img.shape == (64, 64)
        assert img.dtype == np.uint8
        assert set(np.unique(img)) <= {0, 1}
        assert 0.0 < img.mean() < 0.8


def test_same_seed_same_bytes():
    a = synth_image("radial", seed=(3, 11))
    b = synth_image("radial", seed=(3, 11))
    assert a.tobytes() == b.tobytes()


def test_different_seed_differs():
    a = synth_image("organic", seed=(0, 1))
    b = synth_image("organic", seed=(0, 2))
    assert a.tobytes() != b.tobytes()


def test_unknown_family_rejected():
    with pytest.raises(ValueError, match="unknown family"):
        synth_image("suburban", seed=0)


def test_custom_size():
    img = synth_image("grid", seed=(0, 0), size=96)
    assert img.shape == (96, 96)


def test_families_have_distinct_density_bands():
    # the archetypes are ordered dense grid > radial web > organic curl > rural
    means = {}
    for family in FAMILIES:
        masses = [synth_image(family, seed=(1, i)).mean() for i in range(20)]
        means[family] = np.mean(masses)
    assert means["grid"] > means["radial"] > means["organic"] > means["sparse"]


# -- corpus ----------------------------------------------------------------------


def test_minimum_corpus_is_one_image_per_family():
    images, manifest, labels = make_synthetic_corpus(4, seed=0)
    assert [labels[img.place_id] for img in images] == list(FAMILIES)


def test_family_distribution_uniform_within_one():
    _, _, labels = make_synthetic_corpus(10, seed=0)
    counts = [sum(1 for f in labels.values() if f == fam) for fam in FAMILIES]
    assert max(counts) - min(counts) <= 1
    assert sum(counts) == 10


def test_too_small_corpus_rejected():
    with pytest.raises(ValueError, match="at least one image per family"):
        make_synthetic_corpus(3, seed=0)


def test_corpus_is_deterministic():
    first, manifest_a, labels_a = make_synthetic_corpus(12, seed=5)
    second, manifest_b, labels_b = make_synthetic_corpus(12, seed=5)
    assert labels_a == labels_b
    assert manifest_a.places == manifest_b.places
    for a, b in zip(first, second):
        assert a.place_id == b.place_id
        assert a.pixels.tobytes() == b.pixels.tobytes()


def test_corpus_seed_changes_images_but_not_ids():
    first, _, _ = make_synthetic_corpus(8, seed=0)
    second, _, _ = make_synthetic_corpus(8, seed=1)
    assert [a.place_id for a in first] == [b.place_id for b in second]
    assert any(a.pixels.tobytes() != b.pixels.tobytes() for a, b in zip(first, second))


def test_manifest_and_labels_agree():
    images, manifest, labels = make_synthetic_corpus(20, seed=2)
    ids = [img.place_id for img in images]
    assert sorted(ids) == [p.place_id for p in manifest.places]
    assert set(labels) == set(ids)
    assert set(labels.values()) == set(FAMILIES)
    assert manifest.source_digest == "synthetic"
    for record in manifest.places:
        assert record.name.startswith(labels[record.place_id])
        assert record.place_class == "town"


def test_places_get_distinct_lattice_coordinates():
    _, manifest, _ = make_synthetic_corpus(100, seed=0)
    coords = {(p.lat, p.lon) for p in manifest.places}
    assert len(coords) == 100


# -- files -----------------------------------------------------------------------


def test_labels_round_trip(tmp_path):
    _, _, labels = make_synthetic_corpus(8, seed=3)
    path = tmp_path / "labels.json"
    write_labels(path, labels)
    assert read_labels(path) == labels


def test_labels_bytes_deterministic(tmp_path):
    _, _, labels = make_synthetic_corpus(8, seed=3)
    write_labels(tmp_path / "a.json", labels)
    write_labels(tmp_path / "b.json", dict(reversed(labels.items())))
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.json").read_bytes().endswith(b"\n")


def test_write_corpus_packs_images(tmp_path):
    images, _, _ = make_synthetic_corpus(8, seed=4)
    pack, index = tmp_path / "images.msim", tmp_path / "images.index.json"
    write_corpus(images, pack, index)
    stacked, ids = read_image_pack(pack, index)
    assert ids == [img.place_id for img in images]
    assert np.array_equal(stacked, np.stack([img.pixels for img in images]))
