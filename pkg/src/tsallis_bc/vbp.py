"""Attention-map extraction from cached network features.

The base procedure seeds a mask with the channel-averaged deepest conv
feature, then walks toward the input: upsample the mask through an all-ones
transposed convolution matching each layer's geometry, multiply elementwise
with the next-shallower channel-averaged feature, and finally min-max
normalize to [0, 1].

Two optional modifications:
  * normalize_features: every operand entering an element product (feature
    maps, dense activation vectors, and the upsampled/backpropagated masks
    themselves) is min-max scaled over all its components first, so large
    activations cannot drown out the rest and every intermediate mask stays
    in [0, 1]. The upsampled masks must be rescaled too: an all-ones
    deconvolution sums overlapping contributions above 1.
  * include_fcn: the seed mask is built by walking the dense stack from the
    last hidden activation down through binary "sparse connection" matrices
    that keep only the largest-magnitude fraction of each weight matrix; the
    resulting vector weights the deepest conv feature's channels.

All functions are pure over immutable caches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .net import ForwardCache, PolicyNetwork


@dataclass(frozen=True)
class VbpConfig:
    normalize_features: bool = False
    include_fcn: bool = False
    top_fraction: float = 0.10

    def __post_init__(self):
        if not 0.0 < self.top_fraction <= 1.0:
            raise ValueError(f"top_fraction must be in (0, 1], got {self.top_fraction}")


@dataclass
class AttentionMap:
    """H x W mask in [0, 1] locating the region of interest."""

    values: np.ndarray


def channel_mean(feature: np.ndarray) -> np.ndarray:
    """Arithmetic mean over the channel axis of a (C, H, W) feature."""
    feature = np.asarray(feature)
    if feature.ndim != 3 or feature.shape[0] < 1:
        raise ValueError(f"expected (C, H, W) with C >= 1, got {feature.shape}")
    return feature.mean(axis=0)


def minmax01(a: np.ndarray) -> np.ndarray:
    """Min-max scale all components to [0, 1]; a constant array maps to zeros."""
    a = np.asarray(a, dtype=np.float64)
    lo = a.min()
    hi = a.max()
    if hi == lo:
        return np.zeros_like(a)
    return (a - lo) / (hi - lo)


def deconv_ones(mask: np.ndarray, kernel: int, stride: int, padding: int,
                out_hw: tuple[int, int]) -> np.ndarray:
    """Transposed convolution with an all-ones kernel and zero bias.

    Each output pixel accumulates the sum of mask pixels whose forward
    receptive field covers it. out_hw must be a spatial size that the
    forward convolution (kernel, stride, padding) maps onto mask's shape.
    """
    mask = np.asarray(mask, dtype=np.float64)
    h_in, w_in = mask.shape
    oh, ow = out_hw
    if ((oh + 2 * padding - kernel) // stride + 1 != h_in
            or (ow + 2 * padding - kernel) // stride + 1 != w_in):
        raise ValueError(f"deconv geometry mismatch: mask {mask.shape}, "
                         f"target {out_hw}, k={kernel} s={stride} p={padding}")
    out = np.zeros((oh, ow), dtype=np.float64)
    rows_base = np.arange(h_in) * stride - padding
    cols_base = np.arange(w_in) * stride - padding
    for ky in range(kernel):
        rows = rows_base + ky
        rsel = (rows >= 0) & (rows < oh)
        if not rsel.any():
            continue
        for kx in range(kernel):
            cols = cols_base + kx
            csel = (cols >= 0) & (cols < ow)
            if not csel.any():
                continue
            out[np.ix_(rows[rsel], cols[csel])] += mask[np.ix_(rsel.nonzero()[0], csel.nonzero()[0])]
    return out


def _identity(a: np.ndarray) -> np.ndarray:
    return np.asarray(a, dtype=np.float64)


def _walk_conv_stack(feats: list[np.ndarray], geoms: list[tuple[int, int, int]],
                     input_hw: tuple[int, int], seed: np.ndarray, norm) -> np.ndarray:
    m = np.asarray(seed, dtype=np.float64)
    for layer in reversed(range(1, len(feats))):
        target = feats[layer - 1].shape[1:]
        up = deconv_ones(m, *geoms[layer], target)
        m = norm(up) * norm(channel_mean(feats[layer - 1]))
    return deconv_ones(m, *geoms[0], input_hw)


def vbp_original(cache: ForwardCache, sample: int = 0) -> AttentionMap:
    """The unmodified five-step extraction from cached conv features."""
    if not cache.conv_feats:
        raise ValueError("cache holds no conv features")
    feats = [np.asarray(f[sample], dtype=np.float64) for f in cache.conv_feats]
    seed = channel_mean(feats[-1])
    raw = _walk_conv_stack(feats, cache.conv_geoms, cache.input_hw, seed, _identity)
    return AttentionMap(values=minmax01(raw))


def sparse_connection_matrix(weight: np.ndarray, top_fraction: float) -> np.ndarray:
    """Binary matrix keeping the ceil(fraction * size) largest-|w| entries.

    Ties break by flat index (row-major, ascending), so the result is
    reproducible and row-permutation equivariant.
    """
    weight = np.asarray(weight)
    if weight.ndim != 2 or weight.size == 0:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {weight.shape}")
    if not 0.0 < top_fraction <= 1.0:
        raise ValueError(f"top_fraction must be in (0, 1], got {top_fraction}")
    k = math.ceil(top_fraction * weight.size)
    order = np.argsort(-np.abs(weight).ravel(), kind="stable")
    out = np.zeros(weight.size, dtype=np.float64)
    out[order[:k]] = 1.0
    return out.reshape(weight.shape)


def _fcn_seed(cache: ForwardCache, net: PolicyNetwork, cfg: VbpConfig,
              sample: int, norm) -> np.ndarray:
    """Backpropagate dense activations into per-channel weights on the last conv feature."""
    if not cache.dense_feats:
        raise ValueError("cache holds no dense features (forward ran without them?)")
    last_conv = np.asarray(cache.conv_feats[-1][sample], dtype=np.float64)
    c, h, w = last_conv.shape
    if h * w != 1:
        raise ValueError("dense backpropagation requires a 1x1-spatial conv output")
    conv_vec = last_conv.reshape(c)
    dense_acts = [np.asarray(f[sample], dtype=np.float64) for f in cache.dense_feats]
    inputs = [conv_vec] + dense_acts[:-1]  # input activation of each dense layer
    v = norm(dense_acts[-1])
    for layer in reversed(range(len(dense_acts))):
        s = sparse_connection_matrix(net.params[f"dense{layer}.W"], cfg.top_fraction)
        v = norm(s.T @ v) * norm(inputs[layer])
    return v  # length C, non-negative


def vbp_modified(cache: ForwardCache, net: PolicyNetwork, cfg: VbpConfig,
                 sample: int = 0) -> AttentionMap:
    """Extraction with optional feature normalization and dense-stack seeding.

    With both flags off this is bit-identical to vbp_original.
    """
    if not cache.conv_feats:
        raise ValueError("cache holds no conv features")
    feats = [np.asarray(f[sample], dtype=np.float64) for f in cache.conv_feats]
    norm = minmax01 if cfg.normalize_features else _identity

    if cfg.include_fcn:
        weights = _fcn_seed(cache, net, cfg, sample, norm)
        total = weights.sum()
        if total > 0:
            seed = np.tensordot(weights, norm(feats[-1]), axes=(0, 0)) / total
        else:
            seed = np.zeros(feats[-1].shape[1:], dtype=np.float64)
    else:
        seed = channel_mean(feats[-1])

    raw = _walk_conv_stack(feats, cache.conv_geoms, cache.input_hw, seed, norm)
    return AttentionMap(values=minmax01(raw))


def quantize(values: np.ndarray) -> np.ndarray:
    """Map [0, 1] floats to uint8 bytes: q(v) = round(255 v)."""
    return np.clip(np.round(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)


def heat_rgb(values: np.ndarray) -> np.ndarray:
    """Blue (low) to yellow (high) heat coloring; returns (3, H, W) floats."""
    v = np.asarray(values, dtype=np.float64)
    return np.stack([v, v, 1.0 - v])


def write_pgm(values: np.ndarray, path) -> None:
    b = quantize(values)
    h, w = b.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(b.tobytes())


def write_ppm(rgb: np.ndarray, path) -> None:
    b = quantize(rgb)  # (3, H, W)
    _, h, w = b.shape
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(b.transpose(1, 2, 0).tobytes())


def _read_pnm(path, magic: bytes):
    with open(path, "rb") as f:
        data = f.read()
    fields = data.split(maxsplit=4)
    if fields[0] != magic:
        raise ValueError(f"expected {magic.decode()} file")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise ValueError("only 8-bit PNM supported")
    return np.frombuffer(fields[4], dtype=np.uint8), h, w


def read_pgm(path) -> np.ndarray:
    raster, h, w = _read_pnm(path, b"P5")
    return raster[:h * w].reshape(h, w)


def read_ppm(path) -> np.ndarray:
    raster, h, w = _read_pnm(path, b"P6")
    return raster[:h * w * 3].reshape(h, w, 3).transpose(2, 0, 1)


def export_map(amap: AttentionMap, path, overlay_image: np.ndarray | None = None) -> None:
    """Write the map as an 8-bit P5 graymap, or blend it over an image as P6.

    The overlay renders the map as a blue-to-yellow heat layer at 50%
    opacity over the (3, H, W) input image.
    """
    values = np.asarray(amap.values, dtype=np.float64)
    if overlay_image is None:
        write_pgm(values, path)
        return
    img = np.asarray(overlay_image, dtype=np.float64)
    if img.shape != (3, *values.shape):
        raise ValueError(f"overlay image shape {img.shape} does not match map {values.shape}")
    write_ppm(0.5 * img + 0.5 * heat_rgb(values), path)
