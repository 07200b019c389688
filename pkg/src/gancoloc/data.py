"""Co-localization datasets.

Images are held as float32 NHWC arrays in [-1, 1] (8-bit values mapped by
``v / 127.5 - 1``).  Boxes are half-open :class:`~gancoloc.localization.Box`
tuples.  On disk a dataset is a directory of 8-bit PNG files plus a
tab-separated ``manifest.tsv`` with columns ``image_id``, ``path``, ``box``
(``x_min,y_min,x_max,y_max`` or empty) and ``split``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from .exceptions import DataError
from .localization import Box

CIFAR10_CLASSES = ("airplane", "automobile", "bird", "cat", "deer",
                   "dog", "frog", "horse", "ship", "truck")
CIFAR_TRAIN_PER_CLASS = 5000
CIFAR_TEST_PER_CLASS = 1000
TINY_TRAIN_PER_CLASS = 500
TINY_VAL_PER_CLASS = 50
MANIFEST = "manifest.tsv"


def to_float(pixels: np.ndarray) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)


def to_uint8(images: np.ndarray) -> np.ndarray:
    return np.rint((np.clip(images, -1.0, 1.0) + 1.0) * 127.5).astype(np.uint8)


@dataclass
class ImageSet:
    """Images with ids and optional ground-truth boxes (one per image)."""

    images: np.ndarray
    ids: List[str]
    boxes: Optional[List[Optional[Box]]] = None

    def __post_init__(self):
        if len(self.ids) != len(self.images):
            raise DataError("image and id counts differ")
        if self.boxes is not None and len(self.boxes) != len(self.images):
            raise DataError("image and box counts differ")

    def __len__(self):
        return len(self.images)

    @property
    def has_boxes(self) -> bool:
        return self.boxes is not None and all(b is not None for b in self.boxes)

    def subset(self, index) -> "ImageSet":
        index = np.asarray(index)
        boxes = None if self.boxes is None else [self.boxes[i] for i in index]
        return ImageSet(self.images[index], [self.ids[i] for i in index], boxes)


@dataclass
class Dataset:
    name: str
    train: ImageSet
    test: ImageSet
    input_size: int
    meta: Dict[str, str] = field(default_factory=dict)

    def training_images(self, include_test: bool = False) -> np.ndarray:
        if include_test:
            return np.concatenate([self.train.images, self.test.images])
        return self.train.images


@dataclass(frozen=True)
class DatasetSpec:
    name: str
    subcategory_names: Tuple[str, ...]
    train_count: int
    test_count: int
    input_size: int = 64
    has_boxes: bool = True


# Subcategory names are kept verbatim, spelling included.
TINY_IMAGENET_GROUPS = {
    "Artiodactyla": DatasetSpec("Artiodactyla", ("bison", "ox", "bighorn", "gazelle", "arabian camel"), 2500, 250),
    "Bottle": DatasetSpec("Bottle", ("pop bottle", "beer bottle"), 1000, 100),
    "Bird": DatasetSpec("Bird", ("albatross", "black stork", "goose"), 1500, 150),
    "Cat": DatasetSpec("Cat", ("tabby", "persian cat", "egyptian cat", "cougar"), 2000, 200),
    "Dog": DatasetSpec("Dog", ("standard poodle", "yorkshire", "golden retriever",
                               "labrador retriever", "german shephered", "chihuahua"), 3000, 300),
    "Vehicle": DatasetSpec("Vehicle", ("convertible", "school bus", "trolleybus", "sports car",
                                       "police van", "moving van", "limousine", "beach wagon"), 4000, 400),
}
DATASET_ALIASES = {"Four-legs animals": "Artiodactyla", "four-legs": "Artiodactyla"}

# WordNet ids of the subcategories in the Tiny ImageNet class list
SUBCATEGORY_WNIDS = {
    "bison": "n02410509", "ox": "n02403003", "bighorn": "n02415577",
    "gazelle": "n02423022", "arabian camel": "n02437312",
    "pop bottle": "n03983396", "beer bottle": "n02823428",
    "albatross": "n02058221", "black stork": "n02002724", "goose": "n01855672",
    "tabby": "n02123045", "persian cat": "n02123394", "egyptian cat": "n02124075",
    "cougar": "n02125311",
    "standard poodle": "n02113799", "yorkshire": "n02094433", "golden retriever": "n02099601",
    "labrador retriever": "n02099712", "german shephered": "n02106662", "chihuahua": "n02085620",
    "convertible": "n03100240", "school bus": "n04146614", "trolleybus": "n04487081",
    "sports car": "n04285008", "police van": "n03977966", "moving van": "n03796401",
    "limousine": "n03670208", "beach wagon": "n02814533",
}


def get_spec(name: str) -> DatasetSpec:
    key = DATASET_ALIASES.get(name, name)
    for spec_name, spec in TINY_IMAGENET_GROUPS.items():
        if spec_name.lower() == key.lower():
            return spec
    raise DataError(f"unknown dataset {name!r}; known: {', '.join(TINY_IMAGENET_GROUPS)}")


# --- CIFAR-10 -------------------------------------------------------------

_CIFAR_RECORD = 1 + 32 * 32 * 3


def _read_cifar_bin(path: str) -> Tuple[np.ndarray, np.ndarray]:
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if raw.size == 0 or raw.size % _CIFAR_RECORD:
        raise DataError(f"{path}: size {raw.size} is not a whole number of CIFAR-10 records")
    rec = raw.reshape(-1, _CIFAR_RECORD)
    labels = rec[:, 0]
    if labels.max() >= len(CIFAR10_CLASSES):
        raise DataError(f"{path}: label out of range")
    pixels = rec[:, 1:].reshape(-1, 3, 32, 32).transpose(0, 2, 3, 1)
    return labels, pixels


def _cifar_dir(root: str) -> str:
    for cand in (os.path.join(root, "cifar-10-batches-bin"), root):
        if os.path.isfile(os.path.join(cand, "test_batch.bin")):
            return cand
    raise DataError(f"no CIFAR-10 binary batches under {root!r}")


def build_cifar_category(category: str, root: str, strict: bool = True) -> Dataset:
    """One CIFAR-10 class: 5,000 train / 1,000 test 32x32 images, no boxes."""
    if category not in CIFAR10_CLASSES:
        raise DataError(f"unknown CIFAR-10 category {category!r}")
    base = _cifar_dir(root)
    label = CIFAR10_CLASSES.index(category)
    splits = {}
    for split, files, expected in (
        ("train", [f"data_batch_{i}.bin" for i in range(1, 6)], CIFAR_TRAIN_PER_CLASS),
        ("test", ["test_batch.bin"], CIFAR_TEST_PER_CLASS),
    ):
        chunks = []
        for fname in files:
            path = os.path.join(base, fname)
            if not os.path.isfile(path):
                raise DataError(f"missing CIFAR-10 archive {path}")
            labels, pixels = _read_cifar_bin(path)
            chunks.append(pixels[labels == label])
        pixels = np.concatenate(chunks)
        if strict and len(pixels) != expected:
            raise DataError(f"{category}/{split}: found {len(pixels)} images, expected {expected}")
        ids = [f"cifar10-{category}-{split}-{i:05d}" for i in range(len(pixels))]
        splits[split] = ImageSet(to_float(pixels), ids, None)
    return Dataset(f"cifar10:{category}", splits["train"], splits["test"], 32)


# --- Tiny ImageNet --------------------------------------------------------

def _load_rgb(path: str, size: Optional[int] = None) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"))
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    if size is not None and arr.shape[:2] != (size, size):
        raise DataError(f"{path}: expected {size}x{size}, got {arr.shape[1]}x{arr.shape[0]}")
    return arr


def _parse_box_fields(fields_: Sequence[str], path: str, lineno: int, size: int) -> Box:
    try:
        x0, y0, x1, y1 = (int(v) for v in fields_)
    except ValueError:
        raise DataError(f"{path}:{lineno}: malformed box {' '.join(fields_)!r}") from None
    # annotations use inclusive max corners
    box = Box.from_inclusive(x0, y0, min(x1, size - 1), min(y1, size - 1))
    if not box.is_valid(size, size):
        raise DataError(f"{path}:{lineno}: invalid box {box}")
    return box


def _resolve_wnids(root: str, names: Sequence[str]) -> Dict[str, str]:
    wnids_path = os.path.join(root, "wnids.txt")
    if not os.path.isfile(wnids_path):
        raise DataError(f"missing {wnids_path}")
    with open(wnids_path, encoding="utf-8") as fh:
        available = {line.strip() for line in fh if line.strip()}
    words = {}
    words_path = os.path.join(root, "words.txt")
    if os.path.isfile(words_path):
        with open(words_path, encoding="utf-8") as fh:
            for line in fh:
                if "\t" in line:
                    wnid, text = line.rstrip("\n").split("\t", 1)
                    if wnid in available:
                        words[wnid] = [s.strip().lower() for s in text.split(",")]
    out = {}
    for name in names:
        wnid = SUBCATEGORY_WNIDS.get(name)
        if wnid not in available:
            matches = [w for w, syn in words.items() if name.lower() in syn]
            if len(matches) != 1:
                raise DataError(f"cannot map subcategory {name!r} to a Tiny ImageNet class")
            wnid = matches[0]
        out[name] = wnid
    return out


def build_tiny_imagenet_group(spec: DatasetSpec, root: str) -> Dataset:
    """Union of a group's subcategories; test images come from ``val`` with boxes."""
    if not os.path.isdir(root):
        raise DataError(f"dataset root {root!r} does not exist")
    wnids = _resolve_wnids(root, spec.subcategory_names)
    size = spec.input_size
    train_px, train_ids, train_boxes = [], [], []
    for name in spec.subcategory_names:
        wnid = wnids[name]
        cls_dir = os.path.join(root, "train", wnid)
        box_path = os.path.join(cls_dir, f"{wnid}_boxes.txt")
        boxes = {}
        if os.path.isfile(box_path):
            with open(box_path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    parts = line.split()
                    if not parts:
                        continue
                    if len(parts) != 5:
                        raise DataError(f"{box_path}:{lineno}: expected 5 fields, got {len(parts)}")
                    boxes[parts[0]] = _parse_box_fields(parts[1:], box_path, lineno, size)
        img_dir = os.path.join(cls_dir, "images")
        if not os.path.isdir(img_dir):
            raise DataError(f"missing directory {img_dir}")
        for fname in sorted(os.listdir(img_dir)):
            train_px.append(_load_rgb(os.path.join(img_dir, fname), size))
            train_ids.append(os.path.splitext(fname)[0])
            train_boxes.append(boxes.get(fname))

    wanted = {w: n for n, w in wnids.items()}
    ann_path = os.path.join(root, "val", "val_annotations.txt")
    if not os.path.isfile(ann_path):
        raise DataError(f"missing {ann_path}")
    test_px, test_ids, test_boxes = [], [], []
    with open(ann_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 6:
                raise DataError(f"{ann_path}:{lineno}: expected 6 fields, got {len(parts)}")
            if parts[1] not in wanted:
                continue
            box = _parse_box_fields(parts[2:], ann_path, lineno, size)
            test_px.append(_load_rgb(os.path.join(root, "val", "images", parts[0]), size))
            test_ids.append(os.path.splitext(parts[0])[0])
            test_boxes.append(box)

    if len(train_px) != spec.train_count or len(test_px) != spec.test_count:
        raise DataError(f"{spec.name}: found {len(train_px)} train / {len(test_px)} test images, "
                        f"expected {spec.train_count} / {spec.test_count}")
    train = ImageSet(to_float(np.stack(train_px)), train_ids, train_boxes)
    test = ImageSet(to_float(np.stack(test_px)), test_ids, test_boxes)
    return Dataset(spec.name, train, test, size)


# --- synthetic ------------------------------------------------------------

def synthetic_squares(n: int, size: int, square: int, rng: np.random.Generator,
                      prefix: str = "sq") -> ImageSet:
    """Dark noise background with one bright square per image."""
    if not 0 < square < size:
        raise DataError(f"square side must lie in (0, {size}), got {square}")
    images = rng.uniform(-1.0, -0.6, size=(n, size, size, 3)).astype(np.float32)
    patches = rng.uniform(0.6, 1.0, size=(n, square, square, 3)).astype(np.float32)
    corners = rng.integers(0, size - square + 1, size=(n, 2))
    boxes = []
    for i, (y, x) in enumerate(corners):
        images[i, y:y + square, x:x + square] = patches[i]
        boxes.append(Box(int(x), int(y), int(x) + square, int(y) + square))
    return ImageSet(images, [f"{prefix}{i:05d}" for i in range(n)], boxes)


def build_synthetic_square_dataset(n: int, size: int, square: int, rng=None,
                                   n_test: int = 0) -> Dataset:
    """``n`` training (and ``n_test`` test) bright-square images with exact boxes."""
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    train = synthetic_squares(n, size, square, rng, "train")
    test = synthetic_squares(n_test, size, square, rng, "test")
    return Dataset("synthetic", train, test, size)


# --- manifests ------------------------------------------------------------

def _format_box(box: Optional[Box]) -> str:
    return "" if box is None else ",".join(str(int(v)) for v in box)


def parse_box(text: str) -> Optional[Box]:
    text = text.strip()
    if not text:
        return None
    parts = text.split(",")
    if len(parts) != 4:
        raise ValueError(f"malformed box {text!r}")
    return Box(*(int(p) for p in parts))


def save_dataset(dataset: Dataset, directory: str) -> str:
    """Write PNG files and ``manifest.tsv``; returns the manifest path."""
    os.makedirs(os.path.join(directory, "images"), exist_ok=True)
    lines = ["image_id\tpath\tbox\tsplit"]
    for split, part in (("train", dataset.train), ("test", dataset.test)):
        pixels = to_uint8(part.images)
        for k, image_id in enumerate(part.ids):
            rel = os.path.join("images", f"{image_id}.png")
            Image.fromarray(pixels[k]).save(os.path.join(directory, rel), format="PNG")
            box = part.boxes[k] if part.boxes is not None else None
            lines.append(f"{image_id}\t{rel}\t{_format_box(box)}\t{split}")
    path = os.path.join(directory, MANIFEST)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


@dataclass
class ManifestEntry:
    image_id: str
    path: str
    box: Optional[Box]
    split: str


def read_manifest(path: str) -> List[ManifestEntry]:
    if not os.path.isfile(path):
        raise DataError(f"manifest {path!r} not found")
    base = os.path.dirname(os.path.abspath(path))
    entries = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line or (lineno == 1 and line.startswith("image_id\t")):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields")
            try:
                box = parse_box(parts[2])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
            file_path = parts[1] if os.path.isabs(parts[1]) else os.path.join(base, parts[1])
            entries.append(ManifestEntry(parts[0], file_path, box, parts[3]))
    ids = [e.image_id for e in entries]
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate image ids")
    return entries


def load_manifest_split(entries: Sequence[ManifestEntry], split: Optional[str] = None,
                        size: Optional[int] = None) -> ImageSet:
    chosen = [e for e in entries if split is None or e.split == split]
    if not chosen:
        return ImageSet(np.zeros((0, size or 0, size or 0, 3), np.float32), [], [])
    pixels = np.stack([_load_rgb(e.path, size) for e in chosen])
    return ImageSet(to_float(pixels), [e.image_id for e in chosen], [e.box for e in chosen])


def load_dataset_dir(directory: str, size: Optional[int] = None) -> Dataset:
    entries = read_manifest(os.path.join(directory, MANIFEST))
    train = load_manifest_split(entries, "train", size)
    test = load_manifest_split(entries, "test", size)
    in_size = train.images.shape[1] if len(train) else test.images.shape[1]
    return Dataset(os.path.basename(os.path.normpath(directory)), train, test, in_size)


def load_image_dir(directory: str, size: Optional[int] = None) -> ImageSet:
    """Images listed by ``manifest.tsv`` if present, else every PNG/JPEG file sorted by name."""
    manifest = os.path.join(directory, MANIFEST)
    if os.path.isfile(manifest):
        return load_manifest_split(read_manifest(manifest), None, size)
    if not os.path.isdir(directory):
        raise DataError(f"image directory {directory!r} does not exist")
    names = sorted(f for f in os.listdir(directory)
                   if f.lower().endswith((".png", ".jpg", ".jpeg")))
    if not names:
        raise DataError(f"no images in {directory!r}")
    pixels = np.stack([_load_rgb(os.path.join(directory, f), size) for f in names])
    return ImageSet(to_float(pixels), [os.path.splitext(f)[0] for f in names], None)


def build_dataset(name: str, root: str = "", *, size: int = 32, synthetic_train: int = 1000,
                  synthetic_test: int = 100, synthetic_square: int = 12, seed: int = 0) -> Dataset:
    """Resolve a dataset name: ``synthetic``, ``manifest``, ``cifar10:<class>`` or a Tiny ImageNet group."""
    if name == "synthetic":
        if root and os.path.isfile(os.path.join(root, MANIFEST)):
            return load_dataset_dir(root, size)
        return build_synthetic_square_dataset(synthetic_train, size, synthetic_square,
                                              np.random.default_rng(seed), n_test=synthetic_test)
    if not root or not os.path.isdir(root):
        raise DataError(f"dataset root {root!r} does not exist")
    if name == "manifest":
        return load_dataset_dir(root, size)
    if name.startswith("cifar10:"):
        return build_cifar_category(name.split(":", 1)[1], root)
    return build_tiny_imagenet_group(get_spec(name), root)
