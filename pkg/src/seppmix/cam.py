"""Class activation maps and the semantic maps derived from them.

A CAM is the classifier row of the image's label applied across the final
feature maps, bilinearly upsampled (corner aligned) to image size. The bias
is not used. A semantic map is a CAM shifted to be non-negative and scaled to
unit mass.
"""

from __future__ import annotations

import numpy as np

from .errors import InputDomainError

SUM_TOLERANCE = 1e-6
DEGENERATE_MASS = 1e-12


def _interp_axis(n_in: int, n_out: int):
    if n_out == 1 or n_in == 1:
        src = np.zeros(n_out)
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, src - i0


def bilinear_upsample(maps: np.ndarray, out_height: int, out_width: int) -> np.ndarray:
    """Corner-aligned bilinear resize over the last two axes.

    Written as ``v0 + t * (v1 - v0)`` so that constant fields come out exact.
    """
    maps = np.asarray(maps, dtype=np.float64)
    h, w = maps.shape[-2:]
    if out_height < h or out_width < w:
        raise InputDomainError(f"cannot upsample {h}x{w} to {out_height}x{out_width}")
    r0, r1, rt = _interp_axis(h, out_height)
    top, bottom = maps[..., r0, :], maps[..., r1, :]
    rows = top + rt[:, None] * (bottom - top)
    c0, c1, ct = _interp_axis(w, out_width)
    left, right = rows[..., c0], rows[..., c1]
    return left + ct * (right - left)


def compute_cams(features: np.ndarray, weights: np.ndarray, class_ids, out_height: int,
                 out_width: int) -> np.ndarray:
    """Batched CAMs.

    Args:
        features: ``(B, c, h_f, w_f)`` final feature maps.
        weights: ``(num_classes, c)`` classifier weights, bias excluded.
        class_ids: label of each image; its weight row is used.

    Returns:
        ``(B, out_height, out_width)`` raw maps, possibly negative.
    """
    features = np.asarray(features, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    class_ids = np.asarray(class_ids, dtype=np.int64).reshape(-1)
    if features.ndim != 4:
        raise InputDomainError(f"features must be (B, c, h, w), got {features.shape}")
    if weights.ndim != 2 or weights.shape[1] != features.shape[1]:
        raise InputDomainError(
            f"weights {weights.shape} do not match {features.shape[1]} feature maps")
    if len(class_ids) != features.shape[0]:
        raise InputDomainError("one class id per feature stack is required")
    if np.any(class_ids < 0) or np.any(class_ids >= weights.shape[0]):
        raise InputDomainError("class id out of range")
    raw = np.einsum("bc,bchw->bhw", weights[class_ids], features)
    return bilinear_upsample(raw, out_height, out_width)


def compute_cam(features: np.ndarray, weights: np.ndarray, class_id: int, out_height: int,
                out_width: int) -> np.ndarray:
    """CAM of one ``(c, h_f, w_f)`` feature stack for ``class_id``."""
    features = np.asarray(features)
    if features.ndim != 3:
        raise InputDomainError(f"features must be (c, h, w), got {features.shape}")
    return compute_cams(features[None], weights, [class_id], out_height, out_width)[0]


def normalize_to_semantic_map(raw: np.ndarray) -> np.ndarray:
    """Shift a raw map to be non-negative and scale it to unit mass.

    Falls back to the uniform map when there is no mass left after the shift.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.size == 0:
        raise InputDomainError(f"expected a non-empty 2-D map, got shape {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise InputDomainError("map contains non-finite values")
    lo = raw.min()
    shifted = raw - lo if lo < 0 else raw
    total = shifted.sum()
    if not np.isfinite(total) or total <= DEGENERATE_MASS:
        return np.full(raw.shape, 1.0 / raw.size)
    return shifted / total


def check_semantic_map(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    if s.ndim != 2:
        raise InputDomainError(f"semantic map must be 2-D, got shape {s.shape}")
    if not np.all(np.isfinite(s)) or s.min() < 0:
        raise InputDomainError("semantic map must be finite and non-negative")
    if abs(s.sum() - 1.0) > SUM_TOLERANCE:
        raise InputDomainError(f"semantic map sums to {s.sum()}, not 1")
    return s


def semantic_proportion(pixel_mask: np.ndarray, s: np.ndarray) -> float:
    """Mass of ``s`` under ``pixel_mask``, in ``[0, 1]``.

    The full mask returns exactly 1 and the empty mask exactly 0, so degenerate
    mixes reproduce their source label bit for bit.
    """
    pixel_mask = np.asarray(pixel_mask)
    s = np.asarray(s, dtype=np.float64)
    if pixel_mask.shape != s.shape:
        raise InputDomainError(f"mask {pixel_mask.shape} and map {s.shape} differ")
    if pixel_mask.dtype != bool:
        if not np.all((pixel_mask == 0) | (pixel_mask == 1)):
            raise InputDomainError("pixel mask must be binary")
        pixel_mask = pixel_mask.astype(bool)
    if pixel_mask.all():
        return 1.0
    if not pixel_mask.any():
        return 0.0
    return float(np.clip(s[pixel_mask].sum(), 0.0, 1.0))
