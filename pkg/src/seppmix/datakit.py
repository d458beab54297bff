"""Datasets: image-folder ingestion, a synthetic generator, base/novel splits.

On disk a dataset is ``root/<class_name>/<image files>`` plus a JSON split
manifest ``{name, image_size, train: [...], val: [...], test: [...]}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import IngestionError, InputDomainError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
SPLITS = ("train", "val", "test")

# class counts of the standard splits (train, val, test)
MINIIMAGENET_SPLIT = (64, 16, 20)
CUB_SPLIT = (100, 50, 50)


@dataclass
class LabeledDataset:
    """Images ``(N, 3, H, W)`` in ``[0, 1]`` with integer labels into ``class_names``."""

    images: np.ndarray
    labels: np.ndarray
    class_names: List[str]
    instance_ids: List[str]
    role: str = "base"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.images) != len(self.labels) or len(self.labels) != len(self.instance_ids):
            raise InputDomainError("images, labels and instance ids differ in length")
        if len(set(self.instance_ids)) != len(self.instance_ids):
            raise InputDomainError("instance ids are not unique")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_size(self) -> int:
        return int(self.images.shape[-1])

    def indices_by_class(self) -> List[np.ndarray]:
        return [np.flatnonzero(self.labels == k) for k in range(self.num_classes)]

    def select_classes(self, classes: Sequence[int], role: str) -> "LabeledDataset":
        """Sub-dataset holding ``classes``, relabelled ``0..len(classes)-1`` in that order."""
        classes = list(classes)
        remap = {c: i for i, c in enumerate(classes)}
        idx = np.flatnonzero(np.isin(self.labels, classes))
        return LabeledDataset(
            images=self.images[idx],
            labels=np.array([remap[c] for c in self.labels[idx]], dtype=np.int64),
            class_names=[self.class_names[c] for c in classes],
            instance_ids=[self.instance_ids[i] for i in idx],
            role=role,
        )

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[indices], self.labels[indices], list(self.class_names),
                              [self.instance_ids[i] for i in indices], self.role)


@dataclass
class SplitManifest:
    name: str
    image_size: int
    train: List[str]
    val: List[str] = field(default_factory=list)
    test: List[str] = field(default_factory=list)

    def __post_init__(self):
        lists = {s: getattr(self, s) for s in SPLITS}
        for s, names in lists.items():
            if not names:
                raise IngestionError(f"manifest {self.name!r}: split {s!r} is empty")
            if len(set(names)) != len(names):
                raise IngestionError(f"manifest {self.name!r}: split {s!r} repeats a class")
        for i, a in enumerate(SPLITS):
            for b in SPLITS[i + 1:]:
                shared = set(lists[a]) & set(lists[b])
                if shared:
                    raise IngestionError(
                        f"manifest {self.name!r}: {a} and {b} share {sorted(shared)[:3]}")
        if self.image_size < 1:
            raise IngestionError(f"manifest {self.name!r}: bad image size {self.image_size}")

    @classmethod
    def load(cls, path) -> "SplitManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise IngestionError(f"cannot read manifest {path}: {exc}") from exc
        try:
            return cls(name=data["name"], image_size=int(data["image_size"]),
                       train=list(data["train"]), val=list(data["val"]),
                       test=list(data["test"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise IngestionError(f"malformed manifest {path}: {exc}") from exc

    def to_dict(self) -> Dict:
        return {"name": self.name, "image_size": self.image_size,
                "train": self.train, "val": self.val, "test": self.test}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _decode(path: Path, size: int) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im = im.convert("RGB").resize((size, size), Image.BILINEAR)
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc
    return arr.transpose(2, 0, 1)


def load_image_folder(root, manifest: SplitManifest, split: str) -> LabeledDataset:
    """Load one manifest split from ``root/<class>/<file>``.

    Images are converted to RGB, resized bilinearly to the manifest size and
    scaled to ``[0, 1]``. Files are read in lexicographic order.
    """
    if split not in SPLITS:
        raise InputDomainError(f"unknown split {split!r}")
    root = Path(root)
    images, labels, ids = [], [], []
    for k, name in enumerate(getattr(manifest, split)):
        class_dir = root / name
        if not class_dir.is_dir():
            raise IngestionError(f"missing class directory for class {name!r}: {class_dir}")
        files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        for f in files:
            images.append(_decode(f, manifest.image_size))
            labels.append(k)
            ids.append(f"{name}/{f.name}")
    if not images:
        raise IngestionError(f"split {split!r} under {root} holds no images")
    role = "base" if split == "train" else "novel"
    return LabeledDataset(np.stack(images), np.array(labels), list(getattr(manifest, split)),
                          ids, role)


def write_image_folder(dataset: LabeledDataset, root) -> None:
    """Write ``dataset`` as PNG files under ``root/<class_name>/``."""
    root = Path(root)
    counters: Dict[int, int] = {}
    for img, label in zip(dataset.images, dataset.labels):
        k = int(label)
        d = root / dataset.class_names[k]
        d.mkdir(parents=True, exist_ok=True)
        i = counters.get(k, 0)
        counters[k] = i + 1
        arr = np.clip(np.rint(img.transpose(1, 2, 0) * 255), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(d / f"{i:05d}.png")


# Eight saturated colours and a 3x3 grid of blob centres; together with four
# background grating frequencies they give 288 distinct class definitions.
_PALETTE = np.array([
    [0.9, 0.1, 0.1], [0.1, 0.8, 0.1], [0.1, 0.2, 0.9], [0.9, 0.9, 0.1],
    [0.9, 0.1, 0.9], [0.1, 0.9, 0.9], [0.95, 0.55, 0.05], [0.5, 0.1, 0.7],
])
_CENTRES = [(r, c) for r in (0.28, 0.5, 0.72) for c in (0.28, 0.5, 0.72)]
_FREQUENCIES = (1.0, 2.0, 3.0, 5.0)


def make_synthetic(num_classes: int, per_class: int, image_size: int, seed: int) -> LabeledDataset:
    """Deterministic blob-on-grating images.

    A class is a (blob centre, blob colour, background frequency) triple. Each
    image jitters the blob position, radius and colour, draws a random grating
    phase and adds pixel noise.
    """
    n_defs = len(_PALETTE) * len(_CENTRES) * len(_FREQUENCIES)
    if num_classes < 2 or per_class < 2:
        raise InputDomainError("need at least 2 classes and 2 images per class")
    if num_classes > n_defs:
        raise InputDomainError(f"at most {n_defs} synthetic classes are available")
    if image_size < 8:
        raise InputDomainError("image_size must be at least 8")
    rng = np.random.Generator(np.random.PCG64(seed))
    defs = rng.choice(n_defs, size=num_classes, replace=False)

    s = image_size
    yy, xx = np.meshgrid(np.arange(s) + 0.5, np.arange(s) + 0.5, indexing="ij")
    images = np.empty((num_classes * per_class, 3, s, s), dtype=np.float32)
    labels = np.repeat(np.arange(num_classes), per_class)
    ids = []
    for k, d in enumerate(defs):
        colour_i, rest = divmod(int(d), len(_CENTRES) * len(_FREQUENCIES))
        centre_i, freq_i = divmod(rest, len(_FREQUENCIES))
        colour, (cy, cx), freq = _PALETTE[colour_i], _CENTRES[centre_i], _FREQUENCIES[freq_i]
        for i in range(per_class):
            phase = rng.uniform(0, 2 * np.pi)
            tint = rng.uniform(0.35, 0.6)
            grating = tint + 0.15 * np.sin(2 * np.pi * freq * xx / s + phase)
            jy, jx = rng.normal(0.0, 0.06, size=2)
            radius = s * rng.uniform(0.14, 0.2)
            col = np.clip(colour + rng.normal(0.0, 0.06, size=3), 0.0, 1.0)
            dist = np.hypot(yy - (cy + jy) * s, xx - (cx + jx) * s)
            alpha = np.clip(radius - dist + 0.5, 0.0, 1.0)
            img = (1 - alpha) * grating + alpha * col[:, None, None]
            img = img + rng.normal(0.0, 0.04, size=img.shape)
            images[k * per_class + i] = np.clip(img, 0.0, 1.0)
            ids.append(f"syn{seed}/class_{k:03d}/{i:05d}")
    names = [f"class_{k:03d}" for k in range(num_classes)]
    return LabeledDataset(images, labels, names, ids, role="all")


def split_base_novel(dataset: LabeledDataset, base_fraction: float = 2 / 3):
    """Partition classes into (base, novel) by class order."""
    n = dataset.num_classes
    n_base = int(round(n * base_fraction))
    if n_base < 2 or n - n_base < 2:
        raise InputDomainError(
            f"{n} classes at base_fraction={base_fraction} leave fewer than 2 on a side")
    return (dataset.select_classes(range(n_base), "base"),
            dataset.select_classes(range(n_base, n), "novel"))
