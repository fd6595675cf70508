# app/services/datasets.py
# Image datasets: directory loading, synthetic generation and directory export.
#
# Layout on disk: <root>/<class_name>/*.png|*.pgm, class 0 = "negative", class 1 = "positive".
# Other directory names load only with an explicit positive_class.

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image, UnidentifiedImageError

from app.core.exceptions import DatasetError

logger = logging.getLogger("sslb.datasets")

CLASS_NAMES = ("negative", "positive")
IMAGE_SUFFIXES = {".png", ".pgm"}


@dataclass
class ImageDataset:
    images: np.ndarray               # [n, 3, s, s] float64 in [0, 1]
    labels: np.ndarray               # [n] int, 0 or 1
    ids: List[str]
    source: str = ""
    skipped: int = 0

    def __post_init__(self):
        if len(self.images) != len(self.labels) or len(self.images) != len(self.ids):
            raise DatasetError(
                f"{len(self.images)} images, {len(self.labels)} labels and {len(self.ids)} ids do not line up"
            )

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def image_size(self) -> int:
        return int(self.images.shape[-1]) if len(self.images) else 0

    def class_counts(self, num_classes: int = 2) -> Tuple[int, ...]:
        return tuple(int(c) for c in np.bincount(self.labels, minlength=num_classes))

    def subset(self, indices: Sequence[int]) -> "ImageDataset":
        idx = np.asarray(indices, dtype=int)
        return ImageDataset(
            images=self.images[idx],
            labels=self.labels[idx],
            ids=[self.ids[i] for i in idx],
            source=self.source,
        )

    def of_class(self, label: int) -> "ImageDataset":
        return self.subset(np.flatnonzero(self.labels == label))


@dataclass
class LabeledSet:
    images: np.ndarray
    targets: np.ndarray              # [n, C] one-hot or soft rows
    ids: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.images)

    @property
    def classes(self) -> np.ndarray:
        return np.argmax(self.targets, axis=1)

    def class_counts(self) -> Tuple[int, ...]:
        return tuple(int(c) for c in np.bincount(self.classes, minlength=self.targets.shape[1]))


def one_hot(labels: np.ndarray, num_classes: int = 2) -> np.ndarray:
    return np.eye(num_classes)[np.asarray(labels, dtype=int)]


def labeled_set(dataset: ImageDataset, num_classes: int = 2) -> LabeledSet:
    return LabeledSet(images=dataset.images, targets=one_hot(dataset.labels, num_classes), ids=list(dataset.ids))


# -- Loading ------------------------------------------------------------------

def _class_dirs(root: Path, positive_class: Optional[str] = None) -> List[Path]:
    """[negative dir, positive dir]; other names need the positive one spelled out."""
    subdirs = sorted(d.name for d in root.iterdir() if d.is_dir())
    if positive_class is None:
        named = [root / name for name in CLASS_NAMES]
        if all(d.is_dir() for d in named):
            return named
        raise DatasetError(
            f"{root} must contain {'/'.join(CLASS_NAMES)} class directories, found {subdirs}; "
            "pass positive_class to map other names"
        )
    if len(subdirs) != 2 or positive_class not in subdirs:
        raise DatasetError(
            f"positive class {positive_class!r} must be one of exactly two class directories in {root}, found {subdirs}"
        )
    negative = next(name for name in subdirs if name != positive_class)
    return [root / negative, root / positive_class]


def decode_image(path: Path, target_size: int) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB")  # 8-bit grayscale is replicated into three identical channels
        if rgb.size != (target_size, target_size):
            rgb = rgb.resize((target_size, target_size), Image.Resampling.BILINEAR)
        arr = np.asarray(rgb, dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)


def load_image_directory(path: Path, target_size: int, positive_class: Optional[str] = None) -> ImageDataset:
    root = Path(path)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")

    images: List[np.ndarray] = []
    labels: List[int] = []
    ids: List[str] = []
    skipped = 0
    for label, class_dir in enumerate(_class_dirs(root, positive_class)):
        loaded = 0
        for file in sorted(class_dir.iterdir()):
            if file.suffix.lower() not in IMAGE_SUFFIXES:
                continue
            try:
                images.append(decode_image(file, target_size))
            except (OSError, UnidentifiedImageError, ValueError) as exc:
                skipped += 1
                logger.warning("Skipping unreadable image %s: %s", file, exc)
                continue
            labels.append(label)
            ids.append(f"{class_dir.name}/{file.name}")
            loaded += 1
        if loaded == 0:
            raise DatasetError(f"class directory {class_dir} has no readable images")

    dataset = ImageDataset(
        images=np.stack(images),
        labels=np.asarray(labels, dtype=int),
        ids=ids,
        source=str(root),
        skipped=skipped,
    )
    logger.info(
        "Loaded %s images from %s at %sx%s (counts=%s, skipped=%s)",
        len(dataset), root, target_size, target_size, dataset.class_counts(), skipped,
    )
    return dataset


# -- Synthetic data -----------------------------------------------------------
# Each class is a fixed template over a mid-grey background plus i.i.d. pixel noise.
# The class means sit SEPARATION noise units apart (noise taken at difficulty 1), so a
# nearest-centroid classifier fit on 100 per class at 32x32 scores about 0.70 at difficulty 1
# and about 0.95 at 0.5, reaching 1.0 as difficulty goes to 0.

BACKGROUND = 0.5
NOISE_AT_FULL_DIFFICULTY = 0.1
SEPARATION = 2.31


def _blob(size: int, cy: float, cx: float, sigma: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]
    return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma ** 2))


def synthetic_templates(size: int) -> np.ndarray:
    """[2, size, size] class means: one centred blob vs two blobs left and right of centre."""
    centre = (size - 1) / 2.0
    sigma = size / 8.0
    offset = size / 5.0
    single = _blob(size, centre, centre, sigma)
    pair = _blob(size, centre, centre - offset, sigma) + _blob(size, centre, centre + offset, sigma)
    amplitude = SEPARATION * NOISE_AT_FULL_DIFFICULTY / np.linalg.norm(pair - single)
    return BACKGROUND + amplitude * np.stack([single, pair])


def generate_synthetic(seed: int, n_per_class: int, size: int = 32, difficulty: float = 0.5) -> ImageDataset:
    """Class 0: one centred blob. Class 1: two blobs offset left/right of centre.

    difficulty in (0, 1] scales the pixel noise linearly; the templates do not change.
    """
    if n_per_class < 1:
        raise DatasetError(f"n_per_class must be >= 1, got {n_per_class}")
    if not 0.0 < difficulty <= 1.0:
        raise DatasetError(f"difficulty must lie in (0, 1], got {difficulty}")
    if size < 2:
        raise DatasetError(f"size must be >= 2, got {size}")

    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], n_per_class)
    noise = rng.normal(0.0, NOISE_AT_FULL_DIFFICULTY * difficulty, size=(len(labels), size, size))
    canvas = np.clip(synthetic_templates(size)[labels] + noise, 0.0, 1.0)
    images = np.repeat(canvas[:, None], 3, axis=1)

    ids = [f"{CLASS_NAMES[label]}/{i:05d}" for i, label in enumerate(labels)]
    return ImageDataset(images=images, labels=labels.astype(int), ids=ids, source=f"synthetic:seed={seed}")


def write_image_directory(dataset: ImageDataset, root: Path) -> List[Path]:
    """Export as 8-bit grayscale PNGs in the <root>/<class_name>/ layout."""
    root = Path(root)
    written: List[Path] = []
    for name in CLASS_NAMES:
        (root / name).mkdir(parents=True, exist_ok=True)
    for image, label, obs_id in zip(dataset.images, dataset.labels, dataset.ids):
        pixels = np.round(np.clip(image[0], 0.0, 1.0) * 255.0).astype(np.uint8)
        target = root / CLASS_NAMES[int(label)] / f"{Path(obs_id).name}.png"
        Image.fromarray(pixels).save(target)
        written.append(target)
    logger.info("Wrote %s images to %s (counts=%s)", len(written), root, dataset.class_counts())
    return written


def nearest_centroid_accuracy(train: ImageDataset, test: ImageDataset) -> float:
    """Accuracy of a nearest-class-mean classifier; measures how separable generated data is."""
    flat_train = train.images.reshape(len(train), -1)
    centroids = np.stack([flat_train[train.labels == c].mean(axis=0) for c in (0, 1)])
    flat_test = test.images.reshape(len(test), -1)
    distances = (centroids ** 2).sum(axis=1)[None, :] - 2.0 * flat_test @ centroids.T
    return float((distances.argmin(axis=1) == test.labels).mean())
