"""The flow-computation and flow-interpolation U-Nets and their checkpoints.

Both networks share one encoder-decoder layout:

* encoder hierarchy ``k``: conv, leaky ReLU, conv, leaky ReLU, then a 2x2
  average pool (except after the last hierarchy);
* decoder hierarchy: bilinear 2x upsample, concatenate the encoder output of
  matching resolution, conv, leaky ReLU, conv, leaky ReLU;
* a final linear 3x3 conv to the output channels.

With ``cross_link`` on, the decoder also receives the encoder outputs of a
second network (the flow-computation net) at every resolution.
"""

from __future__ import annotations

import io as _io
import struct
from collections import OrderedDict
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Node
from .layers import ConvLayer, avg_pool2, bilinear_upsample2, conv2d, leaky_relu

BASE_WIDTHS = (32, 64, 128, 256, 512, 512)
KERNEL_SCHEDULE = (7, 5, 3, 3, 3, 3)
FLOW_IN, FLOW_OUT = 6, 4
INTERP_IN, INTERP_OUT = 20, 5

CHECKPOINT_MAGIC = b"FSNT"
CHECKPOINT_VERSION = 1


def scaled_widths(width_factor: float = 1.0, base=BASE_WIDTHS) -> tuple[int, ...]:
    return tuple(max(1, int(round(w * width_factor))) for w in base)


@dataclass(frozen=True)
class UNetConfig:
    in_channels: int
    out_channels: int
    widths: tuple[int, ...] = BASE_WIDTHS
    kernels: tuple[int, ...] = KERNEL_SCHEDULE
    slope: float = 0.1
    cross_link: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "kernels", tuple(int(k) for k in self.kernels))
        if len(self.widths) < 1 or len(self.widths) != len(self.kernels):
            raise ContractError("widths and kernels need one entry per encoder hierarchy")
        if any(w < 1 for w in self.widths):
            raise ContractError("channel widths must be positive")
        if any(k not in (3, 5, 7) for k in self.kernels):
            raise ContractError(f"kernel sizes must be 3, 5 or 7, got {self.kernels}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ContractError("channel counts must be positive")

    @property
    def encoder_levels(self) -> int:
        return len(self.widths)

    @property
    def decoder_levels(self) -> int:
        return len(self.widths) - 1

    @property
    def multiple(self) -> int:
        """Input extents must be divisible by this."""
        return 2 ** (self.encoder_levels - 1)

    def to_text(self) -> str:
        lines = [
            f"in_channels={self.in_channels}",
            f"out_channels={self.out_channels}",
            "widths=" + ",".join(map(str, self.widths)),
            "kernels=" + ",".join(map(str, self.kernels)),
            f"slope={self.slope!r}",
            f"cross_link={int(self.cross_link)}",
        ]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "UNetConfig":
        kv = dict(line.split("=", 1) for line in text.splitlines() if line.strip())
        known = {f.name for f in fields(cls)}
        unknown = set(kv) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(
            in_channels=int(kv["in_channels"]),
            out_channels=int(kv["out_channels"]),
            widths=tuple(int(v) for v in kv["widths"].split(",")),
            kernels=tuple(int(v) for v in kv["kernels"].split(",")),
            slope=float(kv["slope"]),
            cross_link=bool(int(kv["cross_link"])),
        )


def flow_computation_config(width_factor: float = 1.0) -> UNetConfig:
    return UNetConfig(FLOW_IN, FLOW_OUT, scaled_widths(width_factor))


def flow_interpolation_config(width_factor: float = 1.0, cross_link: bool = True) -> UNetConfig:
    return UNetConfig(INTERP_IN, INTERP_OUT, scaled_widths(width_factor), cross_link=cross_link)


def layer_shapes(cfg: UNetConfig) -> "OrderedDict[str, tuple[int, int, int]]":
    """``name -> (in_channels, out_channels, kernel)`` for every conv, in order."""
    shapes: OrderedDict[str, tuple[int, int, int]] = OrderedDict()
    cin = cfg.in_channels
    for k, (w, ks) in enumerate(zip(cfg.widths, cfg.kernels)):
        shapes[f"enc{k}.conv0"] = (cin, w, ks)
        shapes[f"enc{k}.conv1"] = (w, w, ks)
        cin = w
    mult = 2 if cfg.cross_link else 1
    prev = cfg.widths[-1] * mult
    for j in range(cfg.decoder_levels):
        level = cfg.encoder_levels - 2 - j
        w = cfg.widths[level]
        shapes[f"dec{j}.conv0"] = (prev + w * mult, w, 3)
        shapes[f"dec{j}.conv1"] = (w, w, 3)
        prev = w
    shapes["out"] = (prev, cfg.out_channels, 3)
    return shapes


def param_shapes(cfg: UNetConfig) -> "OrderedDict[str, tuple[int, ...]]":
    out: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    for name, (cin, cout, k) in layer_shapes(cfg).items():
        out[f"{name}.weight"] = (cout, cin, k, k)
        out[f"{name}.bias"] = (cout,)
    return out


def parameter_count(cfg: UNetConfig) -> int:
    """Closed form: sum over convs of ``in * out * k^2 + out``.

    Encoder hierarchy k contributes ``(c_{k-1} + w_k) w_k K_k^2 + 2 w_k``
    (``c_{-1}`` being the input channels).  With ``m = 2`` when cross-linked
    (else 1), decoder hierarchy at level ``l`` contributes
    ``9 (p + m w_l) w_l + 9 w_l^2 + 2 w_l`` where ``p`` is the width coming up
    from below (``m w_last`` for the first one), and the output conv adds
    ``9 w_0 out + out``.
    """
    w, ks, m = cfg.widths, cfg.kernels, (2 if cfg.cross_link else 1)
    total = 0
    cin = cfg.in_channels
    for wk, kk in zip(w, ks):
        total += (cin + wk) * wk * kk * kk + 2 * wk
        cin = wk
    prev = m * w[-1]
    for level in range(len(w) - 2, -1, -1):
        wl = w[level]
        total += 9 * (prev + m * wl) * wl + 9 * wl * wl + 2 * wl
        prev = wl
    total += 9 * w[0] * cfg.out_channels + cfg.out_channels
    return total


@dataclass
class ModelParams:
    """Named learnable tensors of one U-Net."""

    config: UNetConfig
    tensors: "OrderedDict[str, Node]" = field(default_factory=OrderedDict)

    def __getitem__(self, name: str) -> Node:
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def __len__(self):
        return len(self.tensors)

    def nodes(self) -> list[Node]:
        return list(self.tensors.values())

    def size(self) -> int:
        return sum(n.value.size for n in self.tensors.values())

    def conv(self, name: str) -> ConvLayer:
        return ConvLayer(self.tensors[f"{name}.weight"], self.tensors[f"{name}.bias"])

    def zero_grad(self):
        for n in self.tensors.values():
            n.zero_grad()

    def astype(self, dtype) -> "ModelParams":
        """Copy with every tensor cast (used for 64-bit gradient checks)."""
        return ModelParams(self.config, OrderedDict(
            (k, Node(v.value.astype(dtype), requires_grad=True, name=k)) for k, v in self.tensors.items()))

    def copy(self) -> "ModelParams":
        return self.astype(next(iter(self.tensors.values())).dtype)


def build_unet(cfg: UNetConfig, rng: np.random.Generator, dtype=np.float32) -> ModelParams:
    """Gaussian init with variance ``2 / fan_in`` per conv; zero biases."""
    tensors: OrderedDict[str, Node] = OrderedDict()
    for name, (cin, cout, k) in layer_shapes(cfg).items():
        std = np.sqrt(2.0 / (cin * k * k))
        w = rng.normal(0.0, std, size=(cout, cin, k, k)).astype(dtype)
        tensors[f"{name}.weight"] = Node(w, requires_grad=True, name=f"{name}.weight")
        tensors[f"{name}.bias"] = Node(np.zeros(cout, dtype=dtype), requires_grad=True, name=f"{name}.bias")
    return ModelParams(cfg, tensors)


def build_flow_computation_net(cfg: UNetConfig | None = None, rng=None) -> ModelParams:
    cfg = cfg or flow_computation_config()
    return build_unet(cfg, rng if rng is not None else np.random.default_rng(0))


def build_flow_interpolation_net(cfg: UNetConfig | None = None, rng=None) -> ModelParams:
    cfg = cfg or flow_interpolation_config()
    return build_unet(cfg, rng if rng is not None else np.random.default_rng(1))


def check_extents(cfg: UNetConfig, h: int, w: int) -> None:
    m = cfg.multiple
    if h % m or w % m:
        raise ContractError(f"input extents {h}x{w} must be multiples of {m}")


def unet_forward(params: ModelParams, x: Node, cross: list[Node] | None = None) -> tuple[Node, list[Node]]:
    """Run one U-Net; returns the output and the per-hierarchy encoder outputs."""
    cfg = params.config
    if x.shape[1] != cfg.in_channels:
        raise ContractError(f"network expects {cfg.in_channels} input channels, got {x.shape[1]}")
    check_extents(cfg, x.shape[2], x.shape[3])
    if cfg.cross_link and (cross is None or len(cross) != cfg.encoder_levels):
        raise ContractError("cross-linked network needs the other encoder's outputs")

    skips: list[Node] = []
    h = x
    for k in range(cfg.encoder_levels):
        if k:
            h = avg_pool2(h)
        h = leaky_relu(conv2d(h, params.conv(f"enc{k}.conv0")), cfg.slope)
        h = leaky_relu(conv2d(h, params.conv(f"enc{k}.conv1")), cfg.slope)
        skips.append(h)

    def skip(level):
        return ad.concat([skips[level], cross[level]]) if cfg.cross_link else skips[level]

    h = skip(cfg.encoder_levels - 1)
    for j in range(cfg.decoder_levels):
        level = cfg.encoder_levels - 2 - j
        h = ad.concat([bilinear_upsample2(h), skip(level)])
        h = leaky_relu(conv2d(h, params.conv(f"dec{j}.conv0")), cfg.slope)
        h = leaky_relu(conv2d(h, params.conv(f"dec{j}.conv1")), cfg.slope)
    return conv2d(h, params.conv("out")), skips


def normalize_image(img) -> Node:
    """Map [0, 255] to [-1, 1]."""
    return ad.add(ad.scale(ad.as_node(img), 1.0 / 127.5), -1.0)


def run_flow_computation(params: ModelParams, i0, i1, return_features: bool = False):
    """Predict ``(F_0->1, F_1->0)`` from two ``(B, 3, H, W)`` frames in [0, 255]."""
    x = ad.concat([normalize_image(i0), normalize_image(i1)])
    out, feats = unet_forward(params, x)
    f01, f10 = ad.channels(out, 0, 2), ad.channels(out, 2, 4)
    if return_features:
        return f01, f10, feats
    return f01, f10


def run_flow_interpolation(params: ModelParams, i0, i1, f01, f10, ft0_hat, ft1_hat, g0, g1,
                           flow_features: list[Node] | None = None):
    """Predict ``(dF_t->0, dF_t->1, visibility_logit)``.

    Images (including the warped ``g0``, ``g1``) are in [0, 255] and get
    normalized here; flows enter in pixels.
    """
    parts = [normalize_image(i0), normalize_image(i1), ad.as_node(f01), ad.as_node(f10),
             ad.as_node(ft0_hat), ad.as_node(ft1_hat), normalize_image(g0), normalize_image(g1)]
    x = ad.concat(parts)
    out, _ = unet_forward(params, x, cross=flow_features)
    return ad.channels(out, 0, 2), ad.channels(out, 2, 4), ad.channels(out, 4, 5)


# -- checkpoints ------------------------------------------------------------

def _write_net(fh, name: str, params: ModelParams) -> None:
    raw_name = name.encode("utf-8")
    cfg_text = params.config.to_text().encode("utf-8")
    fh.write(struct.pack("<I", len(raw_name)) + raw_name)
    fh.write(struct.pack("<I", len(cfg_text)) + cfg_text)
    fh.write(struct.pack("<I", len(params)))
    for tname, node in params:
        ad.write_tensor(fh, tname, node.value)


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise OSError("truncated checkpoint file")
    return data


def _read_net(fh, expected: UNetConfig | None) -> tuple[str, ModelParams]:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    name = _read_exact(fh, n).decode("utf-8")
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    cfg = UNetConfig.from_text(_read_exact(fh, n).decode("utf-8"))
    (count,) = struct.unpack("<I", _read_exact(fh, 4))
    want = param_shapes(expected or cfg)
    tensors: OrderedDict[str, Node] = OrderedDict()
    for _ in range(count):
        tname, value = ad.read_tensor(fh)
        if tname not in want:
            raise ValueError(f"checkpoint tensor {tname!r} not part of the expected network")
        if value.shape != want[tname]:
            raise ValueError(f"checkpoint tensor {tname!r} has shape {value.shape}, expected {want[tname]}")
        tensors[tname] = Node(value, requires_grad=True, name=tname)
    missing = [k for k in want if k not in tensors]
    if missing:
        raise ValueError(f"checkpoint is missing tensor {missing[0]!r}")
    return name, ModelParams(expected or cfg, tensors)


def save_checkpoint(nets: Mapping[str, ModelParams], path) -> None:
    buf = _io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(nets)))
    for name, params in nets.items():
        _write_net(buf, name, params)
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def load_checkpoint(path, expected: Mapping[str, UNetConfig] | None = None) -> "OrderedDict[str, ModelParams]":
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        version, count = struct.unpack("<II", _read_exact(fh, 8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        nets: OrderedDict[str, ModelParams] = OrderedDict()
        for i in range(count):
            # peek the name so the expected config can be looked up
            pos = fh.tell()
            (n,) = struct.unpack("<I", _read_exact(fh, 4))
            name = _read_exact(fh, n).decode("utf-8")
            fh.seek(pos)
            name, params = _read_net(fh, (expected or {}).get(name))
            nets[name] = params
        if fh.read(1):
            raise ValueError(f"{path}: trailing bytes after checkpoint")
    return nets


def save_params(params: ModelParams, path) -> None:
    save_checkpoint({"net": params}, path)


def load_params(path, expected: UNetConfig | None = None) -> ModelParams:
    nets = load_checkpoint(path, None if expected is None else {"net": expected})
    if len(nets) != 1:
        raise ValueError(f"{path}: expected a single network, found {len(nets)}")
    return next(iter(nets.values()))
