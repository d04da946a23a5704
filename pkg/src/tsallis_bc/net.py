"""Minimal differentiable policy network on numpy.

Fixed layer set: strided convolutions (im2col), instance norm, layer norm,
ReLU, dense layers, and two linear heads emitting the mean and raw-variance
vectors of a diagonal Gaussian over actions. Backprop is hand-rolled and
supports per-sample loss weights: sample i's head gradient is scaled by
weight[i] before accumulation, which is exactly how the deformed loss
gradient relates to the plain NLL gradient.

The default ("desk") architecture takes 32x32x3 images through five convs
down to a 1x1x128 feature vector, then three dense layers and the heads; the
"paper" profile does the same from 96x96. The conv layer that collapses the
spatial extent to 1x1 skips instance norm: normalizing a single spatial
element is identically zero and would erase the features.

Weight files ("TBCW") carry a canonical-JSON architecture descriptor plus
float32 little-endian parameter blobs in declaration order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

NORM_EPS = 1e-5

WEIGHT_MAGIC = b"TBCW"
WEIGHT_VERSION = 1


class NonFiniteError(RuntimeError):
    """A forward activation or gradient went NaN/Inf; aborts the run."""


@dataclass(frozen=True)
class ConvSpec:
    in_ch: int
    out_ch: int
    kernel: int
    stride: int
    padding: int
    norm: bool = True


@dataclass(frozen=True)
class NetConfig:
    input_hw: tuple[int, int]
    in_channels: int
    conv: tuple[ConvSpec, ...]
    dense: tuple[int, ...]
    action_dim: int = 2
    dtype: str = "float32"

    def conv_output_hw(self) -> list[tuple[int, int]]:
        """Spatial size after each conv layer; validates the schedule."""
        h, w = self.input_hw
        out = []
        c = self.in_channels
        for i, spec in enumerate(self.conv):
            if spec.in_ch != c:
                raise ValueError(f"conv{i}: in_ch {spec.in_ch} != incoming channels {c}")
            h = (h + 2 * spec.padding - spec.kernel) // spec.stride + 1
            w = (w + 2 * spec.padding - spec.kernel) // spec.stride + 1
            if h < 1 or w < 1:
                raise ValueError(f"conv{i} collapses spatial size below 1: {(h, w)}")
            out.append((h, w))
            c = spec.out_ch
        return out

    def feature_dim(self) -> int:
        h, w = self.conv_output_hw()[-1]
        return self.conv[-1].out_ch * h * w

    def descriptor(self) -> dict:
        return {
            "input_hw": list(self.input_hw),
            "in_channels": self.in_channels,
            "conv": [
                [s.in_ch, s.out_ch, s.kernel, s.stride, s.padding, int(s.norm)]
                for s in self.conv
            ],
            "dense": list(self.dense),
            "action_dim": self.action_dim,
            "dtype": self.dtype,
        }

    @staticmethod
    def from_descriptor(d: dict) -> "NetConfig":
        return NetConfig(
            input_hw=tuple(d["input_hw"]),
            in_channels=int(d["in_channels"]),
            conv=tuple(ConvSpec(c[0], c[1], c[2], c[3], c[4], bool(c[5])) for c in d["conv"]),
            dense=tuple(int(x) for x in d["dense"]),
            action_dim=int(d["action_dim"]),
            dtype=str(d["dtype"]),
        )


def desk_config(dtype: str = "float32") -> NetConfig:
    """32x32 input, five convs to 1x1x128, dense widths 128/128/64."""
    return NetConfig(
        input_hw=(32, 32),
        in_channels=3,
        conv=(
            ConvSpec(3, 16, 3, 2, 1),
            ConvSpec(16, 32, 3, 2, 1),
            ConvSpec(32, 64, 3, 2, 1),
            ConvSpec(64, 128, 3, 2, 1),
            ConvSpec(128, 128, 2, 2, 0, norm=False),
        ),
        dense=(128, 128, 64),
        action_dim=2,
        dtype=dtype,
    )


def paper_config(dtype: str = "float32") -> NetConfig:
    """96x96 input, five convs to 1x1x128, dense widths 128/128/64."""
    return NetConfig(
        input_hw=(96, 96),
        in_channels=3,
        conv=(
            ConvSpec(3, 16, 3, 2, 1),
            ConvSpec(16, 32, 3, 2, 1),
            ConvSpec(32, 64, 3, 2, 1),
            ConvSpec(64, 128, 3, 2, 1),
            ConvSpec(128, 128, 6, 6, 0, norm=False),
        ),
        dense=(128, 128, 64),
        action_dim=2,
        dtype=dtype,
    )


@dataclass
class ForwardCache:
    """Post-activation features retained for attention-map extraction."""

    conv_feats: list[np.ndarray]          # each (B, C, h, w), post-ReLU
    dense_feats: list[np.ndarray]         # each (B, D), post-ReLU
    conv_geoms: list[tuple[int, int, int]]  # (kernel, stride, padding) per conv
    input_hw: tuple[int, int]

    @property
    def batch_size(self) -> int:
        return self.conv_feats[0].shape[0]


def _im2col(x: np.ndarray, k: int, s: int, p: int) -> tuple[np.ndarray, tuple[int, int]]:
    n, c, h, w = x.shape
    oh = (h + 2 * p - k) // s + 1
    ow = (w + 2 * p - k) // s + 1
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p > 0 else x
    cols = np.empty((n, c, k, k, oh, ow), dtype=x.dtype)
    for ky in range(k):
        for kx in range(k):
            cols[:, :, ky, kx] = xp[:, :, ky:ky + s * (oh - 1) + 1:s, kx:kx + s * (ow - 1) + 1:s]
    return cols.reshape(n, c * k * k, oh * ow), (oh, ow)


def _col2im(dcols: np.ndarray, x_shape: tuple, k: int, s: int, p: int,
            ohw: tuple[int, int]) -> np.ndarray:
    n, c, h, w = x_shape
    oh, ow = ohw
    dxp = np.zeros((n, c, h + 2 * p, w + 2 * p), dtype=dcols.dtype)
    dc = dcols.reshape(n, c, k, k, oh, ow)
    for ky in range(k):
        for kx in range(k):
            dxp[:, :, ky:ky + s * (oh - 1) + 1:s, kx:kx + s * (ow - 1) + 1:s] += dc[:, :, ky, kx]
    return dxp[:, :, p:p + h, p:p + w] if p > 0 else dxp


def _check_finite(name: str, arr: np.ndarray):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"non-finite values in {name}")


class PolicyNetwork:
    """Conv stack + dense stack + (mean, raw-variance) heads.

    Parameters live in `self.params`, an ordered name -> array mapping; the
    declaration order is the serialization order. A network instance with its
    optimizer state is single-writer; forward-only use is reentrant.
    """

    def __init__(self, config: NetConfig, seed: int = 0):
        self.config = config
        self.dtype = np.dtype(config.dtype)
        self.conv_hw = config.conv_output_hw()
        self.params: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)

        def uniform(shape, fan_in):
            bound = 1.0 / np.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(self.dtype)

        for i, spec in enumerate(config.conv):
            fan_in = spec.in_ch * spec.kernel * spec.kernel
            self.params[f"conv{i}.W"] = uniform((spec.out_ch, spec.in_ch, spec.kernel, spec.kernel), fan_in)
            self.params[f"conv{i}.b"] = uniform((spec.out_ch,), fan_in)
            if spec.norm:
                self.params[f"conv{i}.gamma"] = np.ones(spec.out_ch, dtype=self.dtype)
                self.params[f"conv{i}.beta"] = np.zeros(spec.out_ch, dtype=self.dtype)
        in_dim = config.feature_dim()
        for i, width in enumerate(config.dense):
            self.params[f"dense{i}.W"] = uniform((width, in_dim), in_dim)
            self.params[f"dense{i}.b"] = uniform((width,), in_dim)
            self.params[f"dense{i}.gamma"] = np.ones(width, dtype=self.dtype)
            self.params[f"dense{i}.beta"] = np.zeros(width, dtype=self.dtype)
            in_dim = width
        for head in ("head_mean", "head_var"):
            self.params[f"{head}.W"] = uniform((config.action_dim, in_dim), in_dim)
            self.params[f"{head}.b"] = uniform((config.action_dim,), in_dim)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def _validate_input(self, images: np.ndarray) -> np.ndarray:
        images = np.asarray(images)
        expect = (self.config.in_channels, *self.config.input_hw)
        if images.ndim != 4 or images.shape[1:] != expect:
            raise ValueError(f"expected images (B, {expect[0]}, {expect[1]}, {expect[2]}), got {images.shape}")
        _check_finite("input images", images)
        return images.astype(self.dtype, copy=False)

    def forward(self, images: np.ndarray, want_cache: bool = False):
        """Run the network; returns (mean, raw_var) arrays of shape (B, A).

        With want_cache, also returns a ForwardCache of post-activation
        features (else None). Use `predict` for the Gaussian view.
        """
        mean, raw_var, _, cache = self._forward(self._validate_input(images),
                                                want_tape=False, want_cache=want_cache)
        return mean, raw_var, cache

    def predict(self, images: np.ndarray, want_cache: bool = False):
        """Forward pass returning a float64 DiagonalGaussian batch (+ cache)."""
        from .policy import DiagonalGaussian, variance_from_raw

        mean, raw_var, cache = self.forward(images, want_cache=want_cache)
        g = DiagonalGaussian(mean.astype(np.float64), variance_from_raw(raw_var.astype(np.float64)))
        return (g, cache) if want_cache else g

    def forward_train(self, images: np.ndarray):
        """Forward with gradient bookkeeping; returns (mean, raw_var, tape)."""
        mean, raw_var, tape, _ = self._forward(self._validate_input(images),
                                               want_tape=True, want_cache=False)
        return mean, raw_var, tape

    def _forward(self, h: np.ndarray, want_tape: bool, want_cache: bool):
        cfg = self.config
        tape: dict = {"conv": [], "dense": []} if want_tape else None
        conv_feats = [] if want_cache else None
        dense_feats = [] if want_cache else None

        for i, spec in enumerate(cfg.conv):
            w = self.params[f"conv{i}.W"]
            b = self.params[f"conv{i}.b"]
            x_shape = h.shape
            cols, ohw = _im2col(h, spec.kernel, spec.stride, spec.padding)
            y = np.matmul(w.reshape(spec.out_ch, -1), cols)
            y = y.reshape(h.shape[0], spec.out_ch, *ohw) + b[None, :, None, None]
            entry = {"cols": cols, "x_shape": x_shape, "ohw": ohw} if want_tape else None
            if spec.norm:
                mu = y.mean(axis=(2, 3), keepdims=True)
                var = y.var(axis=(2, 3), keepdims=True)
                inv = 1.0 / np.sqrt(var + np.asarray(NORM_EPS, dtype=y.dtype))
                xhat = (y - mu) * inv
                gamma = self.params[f"conv{i}.gamma"]
                z = gamma[None, :, None, None] * xhat + self.params[f"conv{i}.beta"][None, :, None, None]
                if want_tape:
                    entry["xhat"], entry["inv"] = xhat, inv
            else:
                z = y
            h = np.maximum(z, 0)
            if want_tape:
                entry["z"] = z
                tape["conv"].append(entry)
                _check_finite(f"conv{i} activations", h)
            if want_cache:
                conv_feats.append(h)

        h = h.reshape(h.shape[0], -1)
        for i in range(len(cfg.dense)):
            w = self.params[f"dense{i}.W"]
            b = self.params[f"dense{i}.b"]
            y = h @ w.T + b
            mu = y.mean(axis=1, keepdims=True)
            var = y.var(axis=1, keepdims=True)
            inv = 1.0 / np.sqrt(var + np.asarray(NORM_EPS, dtype=y.dtype))
            xhat = (y - mu) * inv
            z = xhat * self.params[f"dense{i}.gamma"] + self.params[f"dense{i}.beta"]
            out = np.maximum(z, 0)
            if want_tape:
                tape["dense"].append({"x": h, "xhat": xhat, "inv": inv, "z": z})
                _check_finite(f"dense{i} activations", out)
            if want_cache:
                dense_feats.append(out)
            h = out

        if want_tape:
            tape["head_in"] = h
        mean = h @ self.params["head_mean.W"].T + self.params["head_mean.b"]
        raw_var = h @ self.params["head_var.W"].T + self.params["head_var.b"]
        _check_finite("head outputs", mean)
        _check_finite("head outputs", raw_var)

        cache = None
        if want_cache:
            cache = ForwardCache(
                conv_feats=conv_feats,
                dense_feats=dense_feats,
                conv_geoms=[(s.kernel, s.stride, s.padding) for s in cfg.conv],
                input_hw=cfg.input_hw,
            )
        return mean, raw_var, tape, cache

    def backward(self, tape: dict, d_mean: np.ndarray, d_raw_var: np.ndarray,
                 per_sample_weight: np.ndarray) -> dict[str, np.ndarray]:
        """Backpropagate head cotangents, scaling sample i by weight[i].

        d_mean / d_raw_var are the loss gradients at the two heads, per
        sample, already carrying any batch-mean factor. Returns a gradient
        array per parameter, in declaration order.
        """
        cfg = self.config
        w_col = np.asarray(per_sample_weight, dtype=self.dtype).reshape(-1, 1)
        if w_col.shape[0] != d_mean.shape[0]:
            raise ValueError("per-sample weight length != batch size")
        d_mean = d_mean.astype(self.dtype, copy=False) * w_col
        d_raw = d_raw_var.astype(self.dtype, copy=False) * w_col
        grads: dict[str, np.ndarray] = {}

        h = tape["head_in"]
        grads["head_mean.W"] = d_mean.T @ h
        grads["head_mean.b"] = d_mean.sum(axis=0)
        grads["head_var.W"] = d_raw.T @ h
        grads["head_var.b"] = d_raw.sum(axis=0)
        dh = d_mean @ self.params["head_mean.W"] + d_raw @ self.params["head_var.W"]

        for i in reversed(range(len(cfg.dense))):
            t = tape["dense"][i]
            dz = dh * (t["z"] > 0)
            gamma = self.params[f"dense{i}.gamma"]
            grads[f"dense{i}.gamma"] = (dz * t["xhat"]).sum(axis=0)
            grads[f"dense{i}.beta"] = dz.sum(axis=0)
            dxhat = dz * gamma
            dy = t["inv"] * (dxhat - dxhat.mean(axis=1, keepdims=True)
                             - t["xhat"] * (dxhat * t["xhat"]).mean(axis=1, keepdims=True))
            grads[f"dense{i}.W"] = dy.T @ t["x"]
            grads[f"dense{i}.b"] = dy.sum(axis=0)
            dh = dy @ self.params[f"dense{i}.W"]

        last_hw = self.conv_hw[-1]
        dh = dh.reshape(dh.shape[0], cfg.conv[-1].out_ch, *last_hw)
        for i in reversed(range(len(cfg.conv))):
            spec = cfg.conv[i]
            t = tape["conv"][i]
            dz = dh * (t["z"] > 0)
            if spec.norm:
                grads[f"conv{i}.gamma"] = (dz * t["xhat"]).sum(axis=(0, 2, 3))
                grads[f"conv{i}.beta"] = dz.sum(axis=(0, 2, 3))
                dxhat = dz * self.params[f"conv{i}.gamma"][None, :, None, None]
                dy = t["inv"] * (dxhat - dxhat.mean(axis=(2, 3), keepdims=True)
                                 - t["xhat"] * (dxhat * t["xhat"]).mean(axis=(2, 3), keepdims=True))
            else:
                dy = dz
            n = dy.shape[0]
            dym = dy.reshape(n, spec.out_ch, -1)
            w_mat = self.params[f"conv{i}.W"].reshape(spec.out_ch, -1)
            grads[f"conv{i}.W"] = np.matmul(dym, t["cols"].transpose(0, 2, 1)).sum(axis=0).reshape(
                spec.out_ch, spec.in_ch, spec.kernel, spec.kernel)
            grads[f"conv{i}.b"] = dy.sum(axis=(0, 2, 3))
            dcols = np.matmul(w_mat.T, dym)
            dx = _col2im(dcols, t["x_shape"], spec.kernel, spec.stride, spec.padding, t["ohw"])
            dh = dx

        for name in self.params:
            _check_finite(f"gradient {name}", grads[name])
        return {name: grads[name] for name in self.params}


@dataclass
class AdamState:
    """Standard Adam with bias correction; moments match parameter shapes."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        if not self.m:
            for name, p in params.items():
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape mismatch for {name}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState) -> AdamState:
    """Apply one Adam update in place; returns the advanced state."""
    state.step(params, grads)
    return state


def save_weights(net: PolicyNetwork, path) -> None:
    """TBCW container: magic, u32 version, descriptor, float32 LE blobs."""
    desc = json.dumps(net.config.descriptor(), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(WEIGHT_MAGIC)
        f.write(struct.pack("<I", WEIGHT_VERSION))
        f.write(struct.pack("<I", len(desc)))
        f.write(desc)
        for name in net.params:
            f.write(np.ascontiguousarray(net.params[name], dtype="<f4").tobytes())


def load_weights(path, expect: NetConfig | None = None) -> PolicyNetwork:
    """Read a TBCW file back into a PolicyNetwork.

    Rejects bad magic, unknown versions, truncated blobs, and (when `expect`
    is given) any architecture mismatch.
    """
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != WEIGHT_MAGIC:
        raise ValueError("not a TBCW weight file")
    version, = struct.unpack_from("<I", data, 4)
    if version != WEIGHT_VERSION:
        raise ValueError(f"unsupported TBCW version {version}")
    desc_len, = struct.unpack_from("<I", data, 8)
    desc = json.loads(data[12:12 + desc_len].decode())
    config = NetConfig.from_descriptor(desc)
    if expect is not None and config.descriptor() != expect.descriptor():
        raise ValueError("weight file architecture does not match the expected configuration")
    net = PolicyNetwork(config, seed=0)
    off = 12 + desc_len
    for name, p in net.params.items():
        nbytes = p.size * 4
        if off + nbytes > len(data):
            raise ValueError(f"truncated weight file at {name}")
        blob = np.frombuffer(data, dtype="<f4", count=p.size, offset=off)
        net.params[name] = blob.reshape(p.shape).astype(net.dtype)
        off += nbytes
    if off != len(data):
        raise ValueError("trailing bytes in weight file")
    return net
