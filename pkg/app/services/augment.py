# app/services/augment.py
# Flip/right-angle-rotation transforms. Every transform is a pixel permutation: no
# interpolation, no crops.

from typing import List

import numpy as np

from app.core.exceptions import ConfigError, DimensionError
from app.schemas.augment import TransformSpec

ROTATIONS = (0, 90, 180, 270)
IDENTITY = TransformSpec()


def sample_transform(rng: np.random.Generator) -> TransformSpec:
    flip = bool(rng.random() < 0.5)
    rotation = ROTATIONS[int(rng.integers(len(ROTATIONS)))]
    return TransformSpec(horizontal_flip=flip, rotation=rotation)


def apply_transform(spec: TransformSpec, x: np.ndarray) -> np.ndarray:
    """Apply to an image [..., h, w]; leading axes (channels, batch) are carried along."""
    x = np.asarray(x)
    if x.ndim < 2 or x.shape[-1] != x.shape[-2]:
        raise DimensionError(f"apply_transform needs square spatial dims, got {x.shape}")
    out = x
    if spec.horizontal_flip:
        out = np.flip(out, axis=-1)
    if spec.rotation:
        out = np.rot90(out, k=spec.rotation // 90, axes=(-2, -1))
    return np.ascontiguousarray(out)


def invert_transform(spec: TransformSpec) -> TransformSpec:
    # flip-then-rotate is its own inverse (reflections conjugate rotations to their inverses)
    if spec.horizontal_flip:
        return spec
    return TransformSpec(horizontal_flip=False, rotation=(360 - spec.rotation) % 360)


def k_augmentations(x: np.ndarray, K: int, rng: np.random.Generator) -> List[np.ndarray]:
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    return [apply_transform(sample_transform(rng), x) for _ in range(K)]


def augment_batch(images: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One independently sampled transform per image of a [batch, ch, s, s] array."""
    if len(images) == 0:
        return np.array(images, copy=True)
    return np.stack([apply_transform(sample_transform(rng), img) for img in images])
