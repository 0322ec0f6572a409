"""Paste a rendered head back into the source portrait.

The rendered region is feathered into the original frame with a blurred
mask, and any crack left between the head and the torso is painted with the
average neck color. Blending is a per-pixel convex combination, so pixels
the (blurred) mask does not reach are returned bit for bit.
"""

import numpy as np


def gaussian_kernel(sigma):
    """Normalized 1D Gaussian taps with radius ceil(3 * sigma)."""
    if sigma <= 0:
        return np.array([1.0])
    r = int(np.ceil(3.0 * sigma))
    x = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_blur(image, sigma):
    """Separable Gaussian blur with clamp-to-edge padding.

    Works on (H, W) or (H, W, C) float arrays; sigma <= 0 is the identity.
    """
    image = np.asarray(image, dtype=np.float64)
    k = gaussian_kernel(sigma)
    if k.size == 1:
        return image.copy()
    r = k.size // 2
    out = image
    for axis in (0, 1):
        pad = [(0, 0)] * out.ndim
        pad[axis] = (r, r)
        padded = np.pad(out, pad, mode="edge")
        n = out.shape[axis]
        acc = np.zeros_like(out)
        for i, w in enumerate(k):
            sl = [slice(None)] * out.ndim
            sl[axis] = slice(i, i + n)
            acc += w * padded[tuple(sl)]
        out = acc
    return out


def blend_face(rendered, original, mask, sigma=2.0):
    """Feathered composite of the rendered head over the original frame.

    ``mask`` is the head coverage in [0, 1]; it is blurred with
    ``gaussian_blur`` and used as the per-pixel blend weight. Wherever the
    blurred mask is exactly zero the original pixels pass through
    unchanged, and every output pixel lies between the two inputs.
    """
    rendered = np.asarray(rendered, dtype=np.float64)
    original = np.asarray(original, dtype=np.float64)
    m = np.clip(gaussian_blur(np.asarray(mask, dtype=np.float64), sigma), 0.0, 1.0)
    if rendered.ndim == 3 and m.ndim == 2:
        m = m[:, :, None]
    return m * rendered + (1.0 - m) * original


def mean_neck_color(image, neck_mask):
    """Weighted average color over the neck region; (C,) for (H, W, C) input.

    Mask weights may be fractional; an all-zero mask is rejected.
    """
    image = np.asarray(image, dtype=np.float64)
    w = np.asarray(neck_mask, dtype=np.float64)
    total = w.sum()
    if total <= 0:
        raise ValueError("neck mask is empty")
    if image.ndim == 3:
        w = w[:, :, None]
    return (image * w).sum(axis=(0, 1)) / total


def fill_neck_gap(frame, gap_mask, color):
    """Paint the head/torso crack with a fill color.

    ``gap_mask`` weights in [0, 1] blend the constant ``color`` over the
    frame; weight-1 pixels become exactly the fill color, weight-0 pixels
    are untouched bit for bit.
    """
    frame = np.asarray(frame, dtype=np.float64)
    g = np.asarray(gap_mask, dtype=np.float64)
    if frame.ndim == 3 and g.ndim == 2:
        g = g[:, :, None]
    return g * np.asarray(color, dtype=np.float64) + (1.0 - g) * frame


def default_blur_sigma(height, base=5.0):
    """Feathering width: 5 px at 512-tall frames, scaled with resolution."""
    return base * height / 512.0


def composite_portrait(rendered, original, face_mask, neck_mask, gap_mask=None,
                       sigma=None):
    """Blend the rendered head in, then fill the neck seam.

    Without an explicit ``gap_mask`` the seam is taken as neck pixels the
    face mask does not cover.
    """
    original = np.asarray(original, dtype=np.float64)
    if sigma is None:
        sigma = default_blur_sigma(original.shape[0])
    out = blend_face(rendered, original, face_mask, sigma=sigma)
    if gap_mask is None:
        gap_mask = ((np.asarray(neck_mask) > 0) & ~(np.asarray(face_mask) > 0)).astype(np.float64)
    if np.asarray(gap_mask).any():
        out = fill_neck_gap(out, gap_mask, mean_neck_color(original, neck_mask))
    return out
