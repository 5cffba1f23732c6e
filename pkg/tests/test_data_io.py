import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from vasis_lab.data_io import (
    DatasetError, SyntheticSpec, generate_dataset, load_dataset, load_label_map, motif_offsets,
    motif_patch, palette_segment, save_dataset, save_image_grid, save_label_map, sidecar_path,
    stack_dataset, to_display,
)


def test_zero_amplitude_renders_base_colour():
    spec = SyntheticSpec(num_classes=3, family="blobs", count=6, resolution=32)
    for labels, image in generate_dataset(spec):
        for c in np.unique(labels):
            assert np.array_equal(image[:, labels == c].T, np.tile(np.float32(spec.colors[c]), ((labels == c).sum(), 1)))


@pytest.mark.parametrize("family,n", [("stripes", 3), ("blobs", 4), ("sky_road", 2), ("motif_grid", 3)])
def test_same_seed_same_dataset(family, n):
    spec = SyntheticSpec(num_classes=n, family=family, count=5, resolution=32, amplitudes=(0.2,) * n)
    a, b = generate_dataset(spec), generate_dataset(spec)
    assert all(np.array_equal(x[0], y[0]) and np.array_equal(x[1], y[1]) for x, y in zip(a, b))


def test_sky_road_rule():
    spec = SyntheticSpec(count=20, resolution=64)
    heights = set()
    for labels, _ in generate_dataset(spec):
        assert set(np.unique(labels)) == {0, 1}
        rows = labels[:, 0]
        boundary = int(np.argmax(rows == 1))
        assert np.all(labels[:boundary] == 0) and np.all(labels[boundary:] == 1)
        assert 16 <= boundary <= 48
        heights.add(boundary)
    assert len(heights) > 1


def test_colour_collision_rejected():
    with pytest.raises(DatasetError, match="collide"):
        SyntheticSpec(num_classes=2, colors=((0, 0, 0), (0, 0, 0)))


def test_missing_class_rejected():
    with pytest.raises(DatasetError, match="never appear"):
        generate_dataset(SyntheticSpec(num_classes=5, family="motif_grid", count=1, resolution=32))


def test_rendered_std_matches_uniform_amplitude():
    a = 0.3
    spec = SyntheticSpec(count=16, amplitudes=(0.0, a))
    labels, images = stack_dataset(generate_dataset(spec))
    road = images.transpose(1, 0, 2, 3)[:, labels == 1]
    # uniform on [-a, a] has std a / sqrt(3); 3 * ~32k samples per channel
    assert np.allclose(road.std(axis=1), a / np.sqrt(3), rtol=0.02)
    sky = images.transpose(1, 0, 2, 3)[:, labels == 0]
    assert np.ptp(sky, axis=1).max() == 0


def test_motif_patch_and_offsets():
    p = motif_patch()
    assert p.shape == (16, 16) and p.sum() == 64 and p[4:12, 4:12].all()
    assert motif_offsets(64) == [(8, 8), (8, 40), (40, 8), (40, 40)]


def test_label_map_round_trip(tmp_path):
    labels = np.random.default_rng(0).integers(0, 6, (13, 17))
    path = tmp_path / "m.png"
    save_label_map(labels, path)
    assert np.array_equal(load_label_map(path), labels)
    assert sidecar_path(path).name == "m.palette.txt"


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 256), st.integers(0, 2**31))
def test_label_map_round_trip_any_class_count(tmp_path_factory, n, seed):
    labels = np.random.default_rng(seed).integers(0, n, (5, 7))
    labels.flat[0] = n - 1
    path = tmp_path_factory.mktemp("lm") / "x.png"
    colors = [(i / 256, 0.0, 0.0) for i in range(n)]
    save_label_map(labels, path, colors)
    back, names, cols = load_label_map(path, with_palette=True)
    assert np.array_equal(back, labels) and len(names) == n


def test_label_map_errors(tmp_path):
    path = tmp_path / "m.png"
    save_label_map(np.zeros((2, 2), dtype=int), path)
    sidecar_path(path).unlink()
    with pytest.raises(DatasetError, match="m.palette.txt"):
        load_label_map(path)
    with pytest.raises(DatasetError, match="8-bit"):
        save_label_map(np.full((2, 2), 256), tmp_path / "big.png")
    with pytest.raises(DatasetError, match="no such"):
        load_label_map(tmp_path / "absent.png")
    save_label_map(np.zeros((2, 2), dtype=int), path)
    sidecar_path(path).write_text("zero sky a b c\n")
    with pytest.raises(DatasetError, match="malformed"):
        load_label_map(path)


def test_image_grid_layout(tmp_path):
    imgs = np.linspace(-1, 1, 6)[:, None, None, None] * np.ones((6, 3, 4, 5))
    grid = save_image_grid(imgs, tmp_path / "g.png", columns=3)
    assert grid.shape == (8, 15, 3)
    assert Image.open(tmp_path / "g.png").size == (15, 8)
    assert grid[0, 0, 0] == 0 and grid[4, 10, 0] == 255


def test_image_grid_single_image(tmp_path):
    img = np.random.default_rng(1).uniform(-1, 1, (1, 3, 4, 4))
    grid = save_image_grid(img, tmp_path / "one.png", columns=4)
    assert np.array_equal(grid, to_display(img[0]).transpose(1, 2, 0))


def test_display_endpoints():
    assert to_display(np.array([-1.0, 1.0])).tolist() == [0, 255]


def test_dataset_directory(tmp_path):
    spec = SyntheticSpec(num_classes=3, family="stripes", count=4, resolution=16, amplitudes=(0.1, 0, 0.2))
    root = save_dataset(tmp_path / "ds", spec)
    assert (root / "manifest.json").exists()
    assert sorted(p.name for p in (root / "labels").glob("*.png")) == [f"{i:05d}.png" for i in range(4)]
    with pytest.raises(FileExistsError):
        save_dataset(root, spec)
    save_dataset(root, spec, force=True)
    loaded_spec, samples = load_dataset(root)
    assert loaded_spec == spec
    for (l1, i1), (l2, i2) in zip(samples, generate_dataset(spec)):
        assert np.array_equal(l1, l2) and np.array_equal(i1, i2)


def test_palette_segment_exact_on_clean_renders():
    spec = SyntheticSpec(num_classes=4, family="blobs", count=4, resolution=32)
    labels, images = stack_dataset(generate_dataset(spec))
    assert np.array_equal(palette_segment(images, spec.colors), labels)
