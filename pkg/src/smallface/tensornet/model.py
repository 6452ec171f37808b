"""The single-level detector: fused two-stage backbone + shared dilated head.

Topology (input N x 3 x H x W, H and W multiples of 16):

    conv3x3 -> pool -> conv3x3 -> pool -> conv3x3 -> pool -> conv3x3   stride 8  (feat_a)
    feat_a -> pool -> conv3x3                                          stride 16 (feat_b)
    1x1 reduce on both, 2x bilinear upsample of the deep branch,
    channel concat, 3x3 mix conv                                       detection feature
    1x1 reduce, then ONE shared 3x3 kernel applied at dilation rates
    (sizes[k] / sizes[0]), and shared 1x1 cls / reg kernels per branch

Branch k predicts only anchors of size sizes[k]; all branches read the same
3x3 and 1x1 weight storage, so the parameter count does not depend on the
number of branches.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops


@dataclass
class Tensor:
    """A parameter array with its gradient buffer and LR multiplier."""

    value: np.ndarray
    grad: np.ndarray = None
    lr_mult: float = 1.0

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    @property
    def shape(self):
        return self.value.shape


@dataclass(frozen=True)
class ModelConfig:
    backbone_widths: tuple[int, int] = (16, 32)
    reduce_width: int = 32
    det_width: int = 64
    head_width: int = 32
    anchor_sizes: tuple[int, ...] = (16, 32, 64)
    in_channels: int = 3

    @property
    def dilations(self) -> tuple[int, ...]:
        base = self.anchor_sizes[0]
        return tuple(s // base for s in self.anchor_sizes)

    @property
    def stride(self) -> int:
        return 8


@dataclass
class DetectorOutput:
    cls_map: np.ndarray  # (K*2, Hf, Wf)
    reg_map: np.ndarray  # (K*4, Hf, Wf)
    cls: np.ndarray      # (A, 2), anchor order (k, i, j) with k slowest
    reg: np.ndarray      # (A, 4)
    cache: object = field(repr=False, default=None)


def _maps_to_anchors(maps: list[np.ndarray], channels: int) -> np.ndarray:
    # each map: (1, channels, Hf, Wf) -> (Hf*Wf, channels); branches stacked
    per_branch = [m[0].transpose(1, 2, 0).reshape(-1, channels) for m in maps]
    return np.concatenate(per_branch, axis=0)


def _anchors_to_maps(darr: np.ndarray, channels: int, k: int, hf: int, wf: int):
    cells = hf * wf
    out = []
    for b in range(k):
        chunk = darr[b * cells:(b + 1) * cells]  # (cells, channels)
        out.append(chunk.reshape(1, hf, wf, channels).transpose(0, 3, 1, 2))
    return out


class DetectorModel:
    def __init__(self, cfg: ModelConfig = ModelConfig(), seed: int = 0,
                 dtype=np.float32, init: str = "gaussian", init_std: float = 0.01):
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {}
        self._build(seed, init, init_std)

    # -- construction -------------------------------------------------------

    def _add_conv(self, name, out_ch, in_ch, k, rng, init, init_std, lr_mult=1.0):
        fan_in = in_ch * k * k
        std = np.sqrt(2.0 / fan_in) if init == "he" else init_std
        w = rng.normal(0.0, std, size=(out_ch, in_ch, k, k)).astype(self.dtype)
        b = np.zeros(out_ch, dtype=self.dtype)
        self.params[f"{name}.w"] = Tensor(w, lr_mult=lr_mult)
        self.params[f"{name}.b"] = Tensor(b, lr_mult=lr_mult)

    def _build(self, seed, init, init_std):
        c1, c2 = self.cfg.backbone_widths
        cr, cd, ch = self.cfg.reduce_width, self.cfg.det_width, self.cfg.head_width
        rng = np.random.default_rng([int(seed), 0])
        add = lambda name, o, i, k: self._add_conv(name, o, i, k, rng, init, init_std)
        add("backbone.conv1", c1, self.cfg.in_channels, 3)
        add("backbone.conv2", c1, c1, 3)
        add("backbone.conv3", c1, c1, 3)
        add("backbone.conv4", c1, c1, 3)
        add("backbone.conv5", c2, c1, 3)
        add("fuse.lat_a", cr, c1, 1)
        add("fuse.lat_b", cr, c2, 1)
        add("fuse.mix", cd, 2 * cr, 3)
        add("head.reduce", ch, cd, 1)
        add("head.dilated", ch, ch, 3)
        add("head.cls", 2, ch, 1)
        add("head.reg", 4, ch, 1)

    def zero_grads(self):
        for p in self.params.values():
            p.grad.fill(0.0)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            src = arrays[name]
            if src.shape != p.value.shape:
                raise ValueError(f"{name}: shape {src.shape} != {p.value.shape}")
            p.value = src.astype(self.dtype)

    # -- forward / backward -------------------------------------------------

    def _p(self, name):
        return self.params[f"{name}.w"].value, self.params[f"{name}.b"].value

    def forward(self, x: np.ndarray, want_cache: bool = False) -> DetectorOutput:
        """Run the detector on one image tensor (1, 3, H, W), H, W % 16 == 0."""
        if x.ndim != 4 or x.shape[0] != 1:
            raise ValueError(f"expected a single-image NCHW tensor, got {x.shape}")
        if x.shape[2] % 16 or x.shape[3] % 16:
            raise ValueError(f"spatial dims must be multiples of 16, got {x.shape}")
        x = x.astype(self.dtype, copy=False)
        caches = {}

        def conv(tag, t, pad, dilation=1, cache_key=None):
            w, b = self._p(tag)
            out, c = ops.conv2d_forward(t, w, b, stride=1, pad=pad, dilation=dilation)
            out, r = ops.relu_forward(out)
            caches[cache_key or tag] = (c, r)
            return out

        def conv_linear(tag, t, cache_key):
            w, b = self._p(tag)
            out, c = ops.conv2d_forward(t, w, b, stride=1, pad=0)
            caches[cache_key] = c
            return out

        t = conv("backbone.conv1", x, pad=1)
        t, caches["pool1"] = ops.maxpool2x2_forward(t)
        t = conv("backbone.conv2", t, pad=1)
        t, caches["pool2"] = ops.maxpool2x2_forward(t)
        t = conv("backbone.conv3", t, pad=1)
        t, caches["pool3"] = ops.maxpool2x2_forward(t)
        feat_a = conv("backbone.conv4", t, pad=1)
        t, caches["pool4"] = ops.maxpool2x2_forward(feat_a)
        feat_b = conv("backbone.conv5", t, pad=1)

        lat_a = conv("fuse.lat_a", feat_a, pad=0)
        lat_b = conv("fuse.lat_b", feat_b, pad=0)
        up_b, caches["up"] = ops.bilinear_upsample_x2_forward(lat_b)
        cat, caches["cat"] = ops.concat_channels_forward([lat_a, up_b])
        det = conv("fuse.mix", cat, pad=1)
        hr = conv("head.reduce", det, pad=0)

        hf, wf = hr.shape[2], hr.shape[3]
        cls_maps, reg_maps = [], []
        for k, dil in enumerate(self.cfg.dilations):
            bk = conv("head.dilated", hr, pad=dil, dilation=dil, cache_key=f"branch{k}")
            cls_maps.append(conv_linear("head.cls", bk, f"cls{k}"))
            reg_maps.append(conv_linear("head.reg", bk, f"reg{k}"))

        cls = _maps_to_anchors(cls_maps, 2)
        reg = _maps_to_anchors(reg_maps, 4)
        out = DetectorOutput(
            cls_map=np.concatenate([m[0] for m in cls_maps], axis=0),
            reg_map=np.concatenate([m[0] for m in reg_maps], axis=0),
            cls=cls,
            reg=reg,
            cache=(caches, (hf, wf)) if want_cache else None,
        )
        return out

    def backward(self, dcls: np.ndarray, dreg: np.ndarray, cache) -> None:
        """Accumulate parameter gradients from per-anchor output gradients."""
        caches, (hf, wf) = cache
        k = len(self.cfg.dilations)

        def conv_back(tag, dt, cache_key=None):
            c, r = caches[cache_key or tag]
            dt = ops.relu_backward(dt, r)
            dx, dw, db = ops.conv2d_backward(dt, c)
            self.params[f"{tag}.w"].grad += dw
            self.params[f"{tag}.b"].grad += db
            return dx

        def conv_linear_back(tag, dt, cache_key):
            dx, dw, db = ops.conv2d_backward(dt, caches[cache_key])
            self.params[f"{tag}.w"].grad += dw
            self.params[f"{tag}.b"].grad += db
            return dx

        dcls_maps = _anchors_to_maps(np.ascontiguousarray(dcls), 2, k, hf, wf)
        dreg_maps = _anchors_to_maps(np.ascontiguousarray(dreg), 4, k, hf, wf)

        dhr = None
        for b in range(k):
            dbk = conv_linear_back("head.cls", dcls_maps[b].astype(self.dtype), f"cls{b}")
            dbk += conv_linear_back("head.reg", dreg_maps[b].astype(self.dtype), f"reg{b}")
            d = conv_back("head.dilated", dbk, cache_key=f"branch{b}")
            dhr = d if dhr is None else dhr + d

        ddet = conv_back("head.reduce", dhr)
        dcat = conv_back("fuse.mix", ddet)
        dlat_a, dup_b = ops.concat_channels_backward(dcat, caches["cat"])
        dlat_b = ops.bilinear_upsample_x2_backward(dup_b, caches["up"])
        dfeat_a = conv_back("fuse.lat_a", dlat_a)
        dfeat_b = conv_back("fuse.lat_b", dlat_b)

        dt = conv_back("backbone.conv5", dfeat_b)
        dt = ops.maxpool2x2_backward(dt, caches["pool4"])
        dfeat_a += dt
        dt = conv_back("backbone.conv4", dfeat_a)
        dt = ops.maxpool2x2_backward(dt, caches["pool3"])
        dt = conv_back("backbone.conv3", dt)
        dt = ops.maxpool2x2_backward(dt, caches["pool2"])
        dt = conv_back("backbone.conv2", dt)
        dt = ops.maxpool2x2_backward(dt, caches["pool1"])
        self._dx = conv_back("backbone.conv1", dt)  # kept for gradient checks

    def last_input_grad(self) -> np.ndarray:
        return self._dx
