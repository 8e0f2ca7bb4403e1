"""Training samples: synthetic scenes with analytic motion, clip folders, augmentation.

A :class:`SyntheticScene` is a smooth procedural background plus textured
rectangles and disks, each translating at a constant velocity (pixels per
unit time).  Since every layer is a continuous function of position,
``frame(t)`` can be rendered exactly for any ``t`` and the true flows,
intermediate flows and visibility follow in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io as fio
from .autodiff import ContractError


@dataclass(frozen=True)
class Texture:
    """Sum of 2-D sinusoids per colour channel, values within [0, 255]."""

    base: tuple[float, float, float]
    freqs: np.ndarray      # (K, 2) cycles per pixel
    phases: np.ndarray     # (K,)
    amps: np.ndarray       # (K, 3)

    @classmethod
    def random(cls, rng: np.random.Generator, n_waves: int = 12, fmin: float = 1 / 40,
               fmax: float = 1 / 8, contrast: float = 100.0) -> "Texture":
        base = tuple(rng.uniform(100, 155, size=3))
        radius = rng.uniform(fmin, fmax, size=n_waves)
        angle = rng.uniform(0, 2 * np.pi, size=n_waves)
        freqs = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        phases = rng.uniform(0, 2 * np.pi, size=n_waves)
        amps = rng.uniform(-1, 1, size=(n_waves, 3))
        amps *= contrast / np.maximum(np.abs(amps).sum(axis=0, keepdims=True), 1e-9)
        return cls(base, freqs, phases, amps)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Colour at positions ``x, y`` (any matching shape); returns ``(3, *shape)``."""
        arg = 2 * np.pi * (x[..., None] * self.freqs[:, 0] + y[..., None] * self.freqs[:, 1]) + self.phases
        waves = np.sin(arg) @ self.amps  # (..., 3)
        out = np.moveaxis(waves, -1, 0) + np.asarray(self.base).reshape((3,) + (1,) * x.ndim)
        return np.clip(out, 0, 255)


@dataclass(frozen=True)
class SceneObject:
    kind: str                      # "rect" or "disk"
    center: tuple[float, float]    # position at t = 0
    size: tuple[float, float]      # half extents (rect) or (radius, radius)
    velocity: tuple[float, float]
    texture: Texture

    def covers(self, x: np.ndarray, y: np.ndarray, t: float) -> np.ndarray:
        cx = self.center[0] + self.velocity[0] * t
        cy = self.center[1] + self.velocity[1] * t
        if self.kind == "rect":
            return (np.abs(x - cx) <= self.size[0]) & (np.abs(y - cy) <= self.size[1])
        return (x - cx) ** 2 + (y - cy) ** 2 <= self.size[0] ** 2


@dataclass(frozen=True)
class SyntheticScene:
    height: int
    width: int
    background: Texture
    bg_velocity: tuple[float, float] = (0.0, 0.0)
    objects: tuple[SceneObject, ...] = ()

    def _grid(self):
        y, x = np.mgrid[0:self.height, 0:self.width].astype(np.float64)
        return x, y

    def _layers(self):
        return [(None, self.bg_velocity)] + [(o, o.velocity) for o in self.objects]

    def owner(self, t: float, x=None, y=None) -> np.ndarray:
        """Index of the visible layer per pixel (0 = background, k = objects[k-1])."""
        if x is None:
            x, y = self._grid()
        idx = np.zeros(x.shape, dtype=np.int64)
        for k, obj in enumerate(self.objects, start=1):
            idx[obj.covers(x, y, t)] = k
        return idx

    def frame(self, t: float) -> np.ndarray:
        """Render the ``(3, H, W)`` float32 frame at time ``t``."""
        x, y = self._grid()
        vx, vy = self.bg_velocity
        img = self.background(x - vx * t, y - vy * t)
        for obj in self.objects:
            m = obj.covers(x, y, t)
            tex = obj.texture(x - obj.velocity[0] * t, y - obj.velocity[1] * t)
            img = np.where(m[None], tex, img)
        return img.astype(np.float32)

    def frames(self, n: int) -> list[np.ndarray]:
        """``n`` frames evenly spaced over [0, 1], endpoints included."""
        return [self.frame(i / (n - 1)) for i in range(n)]

    def _velocity_map(self, t: float) -> np.ndarray:
        vel = np.array([v for _, v in self._layers()], dtype=np.float64)  # (L, 2)
        return vel[self.owner(t)].transpose(2, 0, 1)

    def flow_01(self) -> np.ndarray:
        return self._velocity_map(0.0).astype(np.float32)

    def flow_10(self) -> np.ndarray:
        return (-self._velocity_map(1.0)).astype(np.float32)

    def intermediate_flows(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        """True ``(F_t->0, F_t->1)``."""
        v = self._velocity_map(t)
        return (-t * v).astype(np.float32), ((1 - t) * v).astype(np.float32)

    def visibility(self, t: float) -> np.ndarray:
        """Oracle ``V_t<-0`` of shape ``(1, H, W)``.

        1 where the pixel at ``t`` is visible only in frame 0, 0 where only in
        frame 1, 0.5 where in both (or neither).
        """
        x, y = self._grid()
        own = self.owner(t, x, y)
        vel = np.array([v for _, v in self._layers()], dtype=np.float64)
        vx, vy = vel[own, 0], vel[own, 1]
        vis0 = self.owner(0.0, x - t * vx, y - t * vy) == own
        vis1 = self.owner(1.0, x + (1 - t) * vx, y + (1 - t) * vy) == own
        v0 = np.full(own.shape, 0.5)
        v0[vis0 & ~vis1] = 1.0
        v0[~vis0 & vis1] = 0.0
        return v0[None].astype(np.float32)

    def occlusion_mask(self) -> np.ndarray:
        """Background pixels covered by an object at exactly one endpoint."""
        return (self.owner(0.0) > 0) != (self.owner(1.0) > 0)


def random_velocity(rng: np.random.Generator, max_speed: float) -> tuple[float, float]:
    r = max_speed * np.sqrt(rng.uniform())
    a = rng.uniform(0, 2 * np.pi)
    return float(r * np.cos(a)), float(r * np.sin(a))


def random_scene(rng: np.random.Generator, height: int = 64, width: int = 64, max_speed: float = 3.0,
                 n_objects: int = 0, object_speed: float | None = None) -> SyntheticScene:
    objects = []
    for _ in range(n_objects):
        kind = "rect" if rng.uniform() < 0.5 else "disk"
        half = rng.uniform(0.1, 0.25) * min(height, width)
        size = (half, rng.uniform(0.6, 1.0) * half) if kind == "rect" else (half, half)
        center = (rng.uniform(0.25, 0.75) * width, rng.uniform(0.25, 0.75) * height)
        vel = random_velocity(rng, object_speed if object_speed is not None else max_speed)
        objects.append(SceneObject(kind, center, size, vel, Texture.random(rng)))
    return SyntheticScene(height, width, Texture.random(rng), random_velocity(rng, max_speed), tuple(objects))


def translating_square_scene(size: int = 64, square: int = 20, square_velocity=(8.0, -8.0),
                             bg_velocity=(-8.0, 0.0), seed: int = 0) -> SyntheticScene:
    """A textured square sliding over a moving textured background."""
    rng = np.random.default_rng(seed)
    bg = Texture.random(rng)
    tex = Texture.random(rng)
    half = square / 2
    obj = SceneObject("rect", (size / 2 - square_velocity[0] / 2, size / 2 - square_velocity[1] / 2),
                      (half, half), tuple(map(float, square_velocity)), tex)
    return SyntheticScene(size, size, bg, tuple(map(float, bg_velocity)), (obj,))


# -- clips on disk ----------------------------------------------------------

IMAGE_SUFFIXES = (".png",)


def load_clip_dir(path) -> list[np.ndarray]:
    """Frames of one clip: the sorted image files of a directory."""
    files = sorted(p for p in Path(path).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    return [fio.read_image(p) for p in files]


def split_clip(frames: Sequence[np.ndarray], length: int = 12) -> list[list[np.ndarray]]:
    """Cut a long sequence into non-overlapping clips of ``length`` frames."""
    return [list(frames[i:i + length]) for i in range(0, len(frames) - length + 1, length)]


def load_clip_tree(root, length: int = 12) -> list[list[np.ndarray]]:
    """Each subdirectory of ``root`` is a video; returns its ``length``-frame clips."""
    clips = []
    for d in sorted(p for p in Path(root).iterdir() if p.is_dir()):
        clips.extend(split_clip(load_clip_dir(d), length))
    return clips


# -- samples ----------------------------------------------------------------

@dataclass(frozen=True)
class Augmentation:
    crop_size: int | None = None       # square crop; None keeps the full frame
    resize_shorter: int | None = None  # resize so the shorter side has this length
    flip: bool = True
    reverse: bool = True


@dataclass
class TrainingSample:
    i0: np.ndarray
    i1: np.ndarray
    targets: list[np.ndarray]
    ts: list[float]
    f01: np.ndarray | None = None
    f10: np.ndarray | None = None
    flipped: bool = False
    reversed: bool = False


def sample_times(n: int) -> list[float]:
    return [i / (n + 1) for i in range(1, n + 1)]


def _resize_flow(flow: np.ndarray, new_w: int, new_h: int) -> np.ndarray:
    h, w = flow.shape[-2:]
    out = fio.resize_bilinear(flow, new_w, new_h)
    out[0] *= new_w / w
    out[1] *= new_h / h
    return out


def make_training_sample(clip: Sequence[np.ndarray], rng: np.random.Generator, n_inter: int,
                         aug: Augmentation = Augmentation(), flows=None) -> TrainingSample:
    """Pick ``n_inter + 2`` consecutive frames and augment them consistently.

    ``flows``, if given, is the true ``(F_0->1, F_1->0)`` between the first
    and last frame of ``clip`` (only meaningful when ``clip`` has exactly
    ``n_inter + 2`` frames); it is transformed alongside the frames.
    """
    need = n_inter + 2
    if n_inter < 1 or len(clip) < need:
        raise ContractError(f"clip has {len(clip)} frames, need at least {need} for {n_inter} targets")
    frames = list(clip)
    f01, f10 = (None, None) if flows is None else (flows[0], flows[1])

    rev = bool(aug.reverse and rng.uniform() < 0.5)
    if rev:
        frames = fio.reverse_sequence(frames)
        f01, f10 = f10, f01
    start = int(rng.integers(0, len(frames) - need + 1))
    frames = frames[start:start + need]

    if aug.resize_shorter:
        h, w = frames[0].shape[-2:]
        nw, nh = fio.shorter_side_size(w, h, aug.resize_shorter)
        frames = [fio.resize_bilinear(f, nw, nh) for f in frames]
        if f01 is not None:
            f01, f10 = _resize_flow(f01, nw, nh), _resize_flow(f10, nw, nh)
    if aug.crop_size:
        h, w = frames[0].shape[-2:]
        c = aug.crop_size
        if c > h or c > w:
            raise ContractError(f"crop {c} larger than frame {w}x{h}")
        x0 = int(rng.integers(0, w - c + 1))
        y0 = int(rng.integers(0, h - c + 1))
        frames = [fio.crop(f, x0, y0, c, c) for f in frames]
        if f01 is not None:
            f01, f10 = fio.crop(f01, x0, y0, c, c), fio.crop(f10, x0, y0, c, c)
    flip = bool(aug.flip and rng.uniform() < 0.5)
    if flip:
        frames = [fio.hflip(f) for f in frames]
        if f01 is not None:
            f01, f10 = fio.hflip(f01), fio.hflip(f10)
    return TrainingSample(frames[0], frames[-1], frames[1:-1], sample_times(n_inter), f01, f10, flip, rev)


@dataclass
class SyntheticDataset:
    """Deterministic collection of synthetic clips rendered with ``n_frames`` frames."""

    n_clips: int
    n_frames: int
    size: int = 64
    max_speed: float = 3.0
    n_objects: int = 0
    seed: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def scene(self, i: int) -> SyntheticScene:
        rng = np.random.default_rng([self.seed, i])
        return random_scene(rng, self.size, self.size, self.max_speed, self.n_objects)

    def __len__(self):
        return self.n_clips

    def __getitem__(self, i: int) -> list[np.ndarray]:
        if i not in self._cache:
            self._cache[i] = self.scene(i).frames(self.n_frames)
        return self._cache[i]

    def with_seed(self, seed: int) -> "SyntheticDataset":
        return replace(self, seed=seed, _cache={})
