import os

import numpy as np
import pytest
from PIL import Image

from gancoloc.data import (
    CIFAR10_CLASSES,
    DATASET_ALIASES,
    SUBCATEGORY_WNIDS,
    TINY_IMAGENET_GROUPS,
    build_cifar_category,
    build_dataset,
    build_synthetic_square_dataset,
    build_tiny_imagenet_group,
    get_spec,
    load_dataset_dir,
    load_image_dir,
    read_manifest,
    save_dataset,
    synthetic_squares,
    to_float,
    to_uint8,
)
from gancoloc.exceptions import DataError
from gancoloc.localization import Box


def test_uint8_round_trip():
    px = np.arange(256, dtype=np.uint8)
    x = to_float(px)
    assert x.min() == -1.0 and x.max() == 1.0
    np.testing.assert_array_equal(to_uint8(x), px)


def test_synthetic_squares_boxes_and_determinism():
    a = synthetic_squares(50, 32, 12, np.random.default_rng(3))
    b = synthetic_squares(50, 32, 12, np.random.default_rng(3))
    np.testing.assert_array_equal(a.images, b.images)
    assert a.boxes == b.boxes
    for img, box in zip(a.images, a.boxes):
        assert box.area == 144 and box.is_valid(32, 32)
        inside = img[box.y_min:box.y_max, box.x_min:box.x_max]
        assert inside.min() >= 0.6
        outside = img.copy()
        outside[box.y_min:box.y_max, box.x_min:box.x_max] = -1
        assert outside.max() <= -0.6
    assert a.images.min() >= -1 and a.images.max() <= 1


def test_synthetic_square_size_validated():
    with pytest.raises(DataError):
        synthetic_squares(1, 32, 32, np.random.default_rng(0))


def test_synthetic_dataset_splits():
    ds = build_synthetic_square_dataset(20, 32, 12, 0, n_test=5)
    assert len(ds.train) == 20 and len(ds.test) == 5
    assert not set(ds.train.ids) & set(ds.test.ids)
    assert ds.training_images(include_test=True).shape == (25, 32, 32, 3)


def _write_cifar(root, counts_train, counts_test):
    base = os.path.join(root, "cifar-10-batches-bin")
    os.makedirs(base)
    rng = np.random.default_rng(0)

    def batch(labels):
        rec = np.zeros((len(labels), 3073), np.uint8)
        rec[:, 0] = labels
        rec[:, 1:] = rng.integers(0, 256, size=(len(labels), 3072))
        return rec

    per_file = [np.repeat(np.arange(10), c) for c in counts_train]
    for i, labels in enumerate(per_file, 1):
        batch(labels).tofile(os.path.join(base, f"data_batch_{i}.bin"))
    batch(np.repeat(np.arange(10), counts_test)).tofile(os.path.join(base, "test_batch.bin"))


def test_cifar_category(tmp_path):
    _write_cifar(str(tmp_path), [1000] * 5, 1000)
    ds = build_cifar_category("bird", str(tmp_path))
    assert ds.train.images.shape == (5000, 32, 32, 3)
    assert ds.test.images.shape == (1000, 32, 32, 3)
    assert ds.train.boxes is None
    with pytest.raises(DataError):
        build_cifar_category("plane9", str(tmp_path))
    assert "bird" in CIFAR10_CLASSES


def test_cifar_count_mismatch(tmp_path):
    _write_cifar(str(tmp_path), [10] * 5, 10)
    with pytest.raises(DataError, match="expected 5000"):
        build_cifar_category("cat", str(tmp_path))
    assert len(build_cifar_category("cat", str(tmp_path), strict=False).train) == 50


def test_missing_root():
    with pytest.raises(DataError):
        build_dataset("Cat", "/nonexistent/path")


def test_group_counts():
    counts = {k: (v.train_count, v.test_count) for k, v in TINY_IMAGENET_GROUPS.items()}
    assert counts == {"Artiodactyla": (2500, 250), "Bottle": (1000, 100), "Bird": (1500, 150),
                      "Cat": (2000, 200), "Dog": (3000, 300), "Vehicle": (4000, 400)}
    for spec in TINY_IMAGENET_GROUPS.values():
        assert spec.train_count == 500 * len(spec.subcategory_names)
        assert spec.test_count == 50 * len(spec.subcategory_names)
        assert all(n in SUBCATEGORY_WNIDS for n in spec.subcategory_names)
    assert get_spec("Four-legs animals") is TINY_IMAGENET_GROUPS[DATASET_ALIASES["Four-legs animals"]]
    with pytest.raises(DataError):
        get_spec("Fish")


def _fake_tiny(root, spec, per_train=500, per_val=50, bad_line=False):
    wnids = [SUBCATEGORY_WNIDS[n] for n in spec.subcategory_names]
    with open(os.path.join(root, "wnids.txt"), "w") as fh:
        fh.write("\n".join(wnids + ["n99999999"]) + "\n")
    img = Image.fromarray(np.full((64, 64, 3), 128, np.uint8))
    for w in wnids:
        d = os.path.join(root, "train", w, "images")
        os.makedirs(d)
        lines = []
        for i in range(per_train):
            name = f"{w}_{i}.JPEG"
            img.save(os.path.join(d, name), format="PNG")
            lines.append(f"{name}\t1\t2\t30\t40")
        with open(os.path.join(root, "train", w, f"{w}_boxes.txt"), "w") as fh:
            fh.write("\n".join(lines) + "\n")
    vdir = os.path.join(root, "val", "images")
    os.makedirs(vdir)
    ann = []
    for w in wnids + ["n99999999"]:
        for i in range(per_val):
            name = f"val_{w}_{i}.JPEG"
            img.save(os.path.join(vdir, name), format="PNG")
            ann.append(f"{name}\t{w}\t0\t0\t63\t63")
    if bad_line:
        ann[3] = ann[3].replace("\t63\t63", "\tx\t63")
    with open(os.path.join(root, "val", "val_annotations.txt"), "w") as fh:
        fh.write("\n".join(ann) + "\n")


def test_tiny_imagenet_group(tmp_path):
    spec = TINY_IMAGENET_GROUPS["Bottle"]
    _fake_tiny(str(tmp_path), spec)
    ds = build_tiny_imagenet_group(spec, str(tmp_path))
    assert len(ds.train) == 1000 and len(ds.test) == 100
    assert ds.test.boxes[0] == Box(0, 0, 64, 64)
    assert ds.train.boxes[0] == Box(1, 2, 31, 41)
    assert not set(ds.train.ids) & set(ds.test.ids)


def test_tiny_imagenet_count_mismatch(tmp_path):
    spec = TINY_IMAGENET_GROUPS["Bottle"]
    _fake_tiny(str(tmp_path), spec, per_train=3, per_val=2)
    with pytest.raises(DataError, match="expected 1000 / 100"):
        build_tiny_imagenet_group(spec, str(tmp_path))


def test_tiny_imagenet_malformed_line(tmp_path):
    spec = TINY_IMAGENET_GROUPS["Bottle"]
    _fake_tiny(str(tmp_path), spec, per_train=1, per_val=2, bad_line=True)
    with pytest.raises(DataError, match=r"val_annotations.txt:4"):
        build_tiny_imagenet_group(spec, str(tmp_path))


def test_manifest_round_trip(tmp_path):
    ds = build_synthetic_square_dataset(6, 32, 12, 1, n_test=3)
    path = save_dataset(ds, str(tmp_path))
    entries = read_manifest(path)
    assert [e.split for e in entries] == ["train"] * 6 + ["test"] * 3
    back = load_dataset_dir(str(tmp_path))
    assert back.train.boxes == ds.train.boxes and back.test.ids == ds.test.ids
    np.testing.assert_allclose(back.train.images, ds.train.images, atol=1 / 127.5)
    assert len(load_image_dir(str(tmp_path))) == 9
    via_name = build_dataset("manifest", str(tmp_path), size=32)
    assert len(via_name.test) == 3


def test_manifest_errors(tmp_path):
    p = tmp_path / "manifest.tsv"
    p.write_text("image_id\tpath\tbox\tsplit\na\tx.png\t1,2,3\ttest\n")
    with pytest.raises(DataError, match="manifest.tsv:2"):
        read_manifest(str(p))
    p.write_text("a\tx.png\t\ttest\na\ty.png\t\ttest\n")
    with pytest.raises(DataError, match="duplicate"):
        read_manifest(str(p))


def test_image_dir_without_manifest(tmp_path):
    Image.fromarray(np.zeros((32, 32, 3), np.uint8)).save(tmp_path / "b.png")
    Image.fromarray(np.zeros((32, 32, 3), np.uint8)).save(tmp_path / "a.png")
    s = load_image_dir(str(tmp_path), 32)
    assert s.ids == ["a", "b"] and s.boxes is None
    with pytest.raises(DataError):
        load_image_dir(str(tmp_path), 64)
