"""Mixing kernels: patch masks, pixel blending, label combination and the
baseline mixers (mixup, cutmix, patchmix) next to SePPMix itself.

Every function here is pure given its inputs and the ``numpy.random.Generator``
passed in. The generator used throughout the package is PCG64 seeded with a
64-bit integer (see :func:`make_rng`), so a seed reproduces the same draws on
every platform numpy supports.

Images are ``(C, H, W)`` float arrays with values in ``[0, 1]``. Pixel masks
are boolean ``(H, W)`` arrays where ``True`` selects the first source.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .cam import check_semantic_map, semantic_proportion
from .errors import InputDomainError

MIXERS = ("none", "mixup", "cutmix", "patchmix", "seppmix")

Sample = Tuple[np.ndarray, int]
Box = Tuple[int, int, int, int]


def make_rng(seed: int) -> np.random.Generator:
    """Return the package's seeded random stream (PCG64)."""
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class Provenance:
    kind: str
    class_a: int
    class_b: int
    rho_a: float
    rho_b: float
    mask: Optional[np.ndarray] = None  # patch grid cells, True = from a
    box: Optional[Box] = None  # (top, left, bottom, right) pasted from b
    lam: Optional[float] = None
    source_a: Optional[int] = None
    source_b: Optional[int] = None


@dataclass(frozen=True)
class MixedSample:
    image: np.ndarray
    label: np.ndarray
    provenance: Provenance


def _check_image(x: np.ndarray, name: str = "image") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 3:
        raise InputDomainError(f"{name} must be (C, H, W), got shape {x.shape}")
    if not np.all(np.isfinite(x)) or x.min() < 0.0 or x.max() > 1.0:
        raise InputDomainError(f"{name} values must be finite and within [0, 1]")
    return x


def _check_pair(x_a, x_b):
    x_a = _check_image(x_a, "x_a")
    x_b = _check_image(x_b, "x_b")
    if x_a.shape != x_b.shape:
        raise InputDomainError(f"source shapes differ: {x_a.shape} vs {x_b.shape}")
    return x_a, x_b


def one_hot(class_id: int, num_classes: int) -> np.ndarray:
    if num_classes < 1 or not 0 <= class_id < num_classes:
        raise InputDomainError(f"class id {class_id} outside [0, {num_classes})")
    y = np.zeros(num_classes, dtype=np.float64)
    y[class_id] = 1.0
    return y


def sample_patch_mask(grid_n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a ``grid_n x grid_n`` mask, each cell i.i.d. Bernoulli(0.5)."""
    if grid_n < 1:
        raise InputDomainError(f"grid_n must be >= 1, got {grid_n}")
    return rng.random((grid_n, grid_n)) < 0.5


def complement(mask: np.ndarray) -> np.ndarray:
    return ~np.asarray(mask, dtype=bool)


def upsample_mask(mask: np.ndarray, height: int, width: int) -> np.ndarray:
    """Expand a patch grid to pixels.

    Pixel ``(i, j)`` takes cell ``(i * n // height, j * n // width)``, so when
    the image does not divide evenly the leading patches get the extra rows.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2 or mask.shape[0] != mask.shape[1]:
        raise InputDomainError(f"mask must be square, got shape {mask.shape}")
    n = mask.shape[0]
    if height < n or width < n:
        raise InputDomainError(f"image {height}x{width} is smaller than the {n}x{n} grid")
    rows = np.arange(height) * n // height
    cols = np.arange(width) * n // width
    return mask[rows[:, None], cols[None, :]]


def mix_images(x_a: np.ndarray, x_b: np.ndarray, pixel_mask: np.ndarray) -> np.ndarray:
    """``M * x_a + (1 - M) * x_b`` for a binary pixel mask, computed exactly."""
    x_a, x_b = _check_pair(x_a, x_b)
    pixel_mask = np.asarray(pixel_mask)
    if pixel_mask.shape != x_a.shape[1:]:
        raise InputDomainError(
            f"mask shape {pixel_mask.shape} does not match image {x_a.shape[1:]}")
    if pixel_mask.dtype != bool:
        if not np.all((pixel_mask == 0) | (pixel_mask == 1)):
            raise InputDomainError("pixel mask must be binary")
        pixel_mask = pixel_mask.astype(bool)
    return np.where(pixel_mask[None], x_a, x_b)


def combine_labels(y_a: np.ndarray, y_b: np.ndarray, rho_a: float, rho_b: float) -> np.ndarray:
    """``rho_a * y_a + rho_b * y_b``. Deliberately not renormalized."""
    for name, rho in (("rho_a", rho_a), ("rho_b", rho_b)):
        if not 0.0 <= rho <= 1.0:
            raise InputDomainError(f"{name}={rho} outside [0, 1]")
    y_a = np.asarray(y_a, dtype=np.float64)
    y_b = np.asarray(y_b, dtype=np.float64)
    if y_a.shape != y_b.shape:
        raise InputDomainError("label vectors differ in length")
    return rho_a * y_a + rho_b * y_b


def _label(class_a, class_b, rho_a, rho_b, num_classes):
    return combine_labels(one_hot(class_a, num_classes), one_hot(class_b, num_classes),
                          rho_a, rho_b)


def seppmix_with_mask(sample_a: Sample, sample_b: Sample, s_a: np.ndarray, s_b: np.ndarray,
                      mask: np.ndarray, *, num_classes: int) -> MixedSample:
    """SePPMix for a given patch mask; :func:`seppmix` draws the mask."""
    (x_a, y_a), (x_b, y_b) = sample_a, sample_b
    x_a, x_b = _check_pair(x_a, x_b)
    hw = x_a.shape[1:]
    s_a = check_semantic_map(s_a)
    s_b = check_semantic_map(s_b)
    if s_a.shape != hw or s_b.shape != hw:
        raise InputDomainError(f"semantic maps must be {hw}, got {s_a.shape} and {s_b.shape}")
    pixel_mask = upsample_mask(mask, *hw)
    rho_a = semantic_proportion(pixel_mask, s_a)
    rho_b = semantic_proportion(~pixel_mask, s_b)
    return MixedSample(
        image=mix_images(x_a, x_b, pixel_mask),
        label=_label(y_a, y_b, rho_a, rho_b, num_classes),
        provenance=Provenance("seppmix", int(y_a), int(y_b), rho_a, rho_b,
                              mask=np.asarray(mask, dtype=bool)),
    )


def seppmix(sample_a: Sample, sample_b: Sample, s_a: np.ndarray, s_b: np.ndarray,
            grid_n: int, rng: np.random.Generator, *, num_classes: int) -> MixedSample:
    """Patch-grid mix whose label weights are the semantic mass each source keeps.

    ``rho_a`` is the mass of ``s_a`` under the patches taken from ``x_a`` and
    ``rho_b`` the mass of ``s_b`` under the remaining patches. The two need
    not sum to one.
    """
    return seppmix_with_mask(sample_a, sample_b, s_a, s_b, sample_patch_mask(grid_n, rng),
                             num_classes=num_classes)


def patchmix_with_mask(sample_a: Sample, sample_b: Sample, mask: np.ndarray, *,
                       num_classes: int) -> MixedSample:
    (x_a, y_a), (x_b, y_b) = sample_a, sample_b
    x_a, x_b = _check_pair(x_a, x_b)
    h, w = x_a.shape[1:]
    pixel_mask = upsample_mask(mask, h, w)
    rho_a = int(pixel_mask.sum()) / (h * w)
    rho_b = 1.0 - rho_a
    return MixedSample(
        image=mix_images(x_a, x_b, pixel_mask),
        label=_label(y_a, y_b, rho_a, rho_b, num_classes),
        provenance=Provenance("patchmix", int(y_a), int(y_b), rho_a, rho_b,
                              mask=np.asarray(mask, dtype=bool)),
    )


def patchmix(sample_a: Sample, sample_b: Sample, grid_n: int, rng: np.random.Generator, *,
             num_classes: int) -> MixedSample:
    """Same image as SePPMix, label weights proportional to pixel area."""
    return patchmix_with_mask(sample_a, sample_b, sample_patch_mask(grid_n, rng),
                              num_classes=num_classes)


def sample_mixup_lambda(rng: np.random.Generator, alpha: float = 1.0) -> float:
    return float(rng.beta(alpha, alpha))


def mixup(sample_a: Sample, sample_b: Sample, lam: float, *, num_classes: int) -> MixedSample:
    if not 0.0 <= lam <= 1.0:
        raise InputDomainError(f"lambda={lam} outside [0, 1]")
    (x_a, y_a), (x_b, y_b) = sample_a, sample_b
    x_a, x_b = _check_pair(x_a, x_b)
    rho_b = 1.0 - lam
    image = lam * x_a + rho_b * x_b
    # guard against the last-ulp overshoot of a convex combination
    np.clip(image, 0.0, 1.0, out=image)
    return MixedSample(
        image=image,
        label=_label(y_a, y_b, lam, rho_b, num_classes),
        provenance=Provenance("mixup", int(y_a), int(y_b), lam, rho_b, lam=lam),
    )


def sample_cutmix_box(height: int, width: int, lam: float, rng: np.random.Generator) -> Box:
    """Box of nominal area ``(1 - lam) * H * W`` around a uniform centre, clipped."""
    cut = np.sqrt(1.0 - lam)
    cut_h, cut_w = int(height * cut), int(width * cut)
    cy = int(rng.integers(height))
    cx = int(rng.integers(width))
    top, left = cy - cut_h // 2, cx - cut_w // 2
    bottom, right = top + cut_h, left + cut_w
    return (int(np.clip(top, 0, height)), int(np.clip(left, 0, width)),
            int(np.clip(bottom, 0, height)), int(np.clip(right, 0, width)))


def box_mask(height: int, width: int, box: Box) -> np.ndarray:
    """Pixel mask that is False inside ``box`` (pasted from b) and True elsewhere."""
    top, left, bottom, right = box
    if not (0 <= top <= bottom <= height and 0 <= left <= right <= width):
        raise InputDomainError(f"box {box} does not fit a {height}x{width} image")
    mask = np.ones((height, width), dtype=bool)
    mask[top:bottom, left:right] = False
    return mask


def cutmix_with_box(sample_a: Sample, sample_b: Sample, box: Box, *,
                    num_classes: int) -> MixedSample:
    (x_a, y_a), (x_b, y_b) = sample_a, sample_b
    x_a, x_b = _check_pair(x_a, x_b)
    h, w = x_a.shape[1:]
    pixel_mask = box_mask(h, w, box)
    top, left, bottom, right = box
    rho_b = (bottom - top) * (right - left) / (h * w)
    rho_a = 1.0 - rho_b
    return MixedSample(
        image=mix_images(x_a, x_b, pixel_mask),
        label=_label(y_a, y_b, rho_a, rho_b, num_classes),
        provenance=Provenance("cutmix", int(y_a), int(y_b), rho_a, rho_b, box=tuple(box)),
    )


def cutmix(sample_a: Sample, sample_b: Sample, rng: np.random.Generator, *,
           num_classes: int, alpha: float = 1.0) -> MixedSample:
    """Paste a random box of ``x_b`` into ``x_a``; weights follow the clipped box area."""
    h, w = np.shape(sample_a[0])[1:]
    lam = sample_mixup_lambda(rng, alpha)
    return cutmix_with_box(sample_a, sample_b, sample_cutmix_box(h, w, lam, rng),
                           num_classes=num_classes)


def mix_pair(kind: str, sample_a: Sample, sample_b: Sample, rng: np.random.Generator, *,
             num_classes: int, grid_n: int = 2, semantic_maps=None,
             beta_alpha: float = 1.0) -> MixedSample:
    """Apply the mixer named ``kind``; ``semantic_maps`` is ``(s_a, s_b)`` for seppmix."""
    if kind == "seppmix":
        if semantic_maps is None:
            raise InputDomainError("seppmix needs semantic maps")
        s_a, s_b = semantic_maps
        return seppmix(sample_a, sample_b, s_a, s_b, grid_n, rng, num_classes=num_classes)
    if kind == "patchmix":
        return patchmix(sample_a, sample_b, grid_n, rng, num_classes=num_classes)
    if kind == "mixup":
        return mixup(sample_a, sample_b, sample_mixup_lambda(rng, beta_alpha),
                     num_classes=num_classes)
    if kind == "cutmix":
        return cutmix(sample_a, sample_b, rng, num_classes=num_classes, alpha=beta_alpha)
    raise InputDomainError(f"mix_pair does not handle mixer {kind!r}")


@dataclass
class MixedBatch:
    """A batch of mixed images with two-term targets ``rho_a*e[a] + rho_b*e[b]``."""

    images: np.ndarray
    class_a: np.ndarray
    class_b: np.ndarray
    rho_a: np.ndarray
    rho_b: np.ndarray
    partner: np.ndarray
    samples: list = field(default_factory=list)

    def dense_labels(self, num_classes: int) -> np.ndarray:
        out = np.zeros((len(self.class_a), num_classes))
        rows = np.arange(len(self.class_a))
        np.add.at(out, (rows, self.class_a), self.rho_a)
        np.add.at(out, (rows, self.class_b), self.rho_b)
        return out


def mix_batch(images: np.ndarray, labels: Sequence[int], kind: str, rng: np.random.Generator, *,
              num_classes: int, grid_n: int = 2, semantic_maps: Optional[np.ndarray] = None,
              beta_alpha: float = 1.0, mix_probability: float = 1.0) -> MixedBatch:
    """Mix every item with a partner drawn by in-batch random permutation.

    Args:
        images: ``(B, C, H, W)`` batch.
        labels: class ids, length B.
        kind: one of :data:`MIXERS`.
        semantic_maps: ``(B, H, W)`` maps, required for ``seppmix``.
        mix_probability: chance that the batch is mixed at all.
    """
    if kind not in MIXERS:
        raise InputDomainError(f"unknown mixer {kind!r}; expected one of {MIXERS}")
    images = np.asarray(images)
    labels = np.asarray(labels, dtype=np.int64)
    b = len(labels)
    identity = MixedBatch(images.copy(), labels.copy(), labels.copy(),
                          np.ones(b), np.zeros(b), np.arange(b))
    if kind == "none" or b == 0:
        return identity
    if mix_probability < 1.0 and rng.random() >= mix_probability:
        return identity
    if kind == "seppmix":
        if semantic_maps is None:
            raise InputDomainError("seppmix needs semantic maps")
        semantic_maps = np.asarray(semantic_maps)

    perm = rng.permutation(b)
    out = np.empty_like(images)
    samples = []
    for i, j in enumerate(perm):
        maps = (semantic_maps[i], semantic_maps[j]) if kind == "seppmix" else None
        s = mix_pair(kind, (images[i], int(labels[i])), (images[j], int(labels[j])), rng,
                     num_classes=num_classes, grid_n=grid_n, semantic_maps=maps,
                     beta_alpha=beta_alpha)
        out[i] = s.image
        samples.append(s)
    prov = [s.provenance for s in samples]
    return MixedBatch(
        images=out,
        class_a=labels.copy(),
        class_b=labels[perm],
        rho_a=np.array([p.rho_a for p in prov]),
        rho_b=np.array([p.rho_b for p in prov]),
        partner=perm,
        samples=samples,
    )
