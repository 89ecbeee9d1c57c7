"""Synthetic video datasets and the binary dataset container.

Two generators:

* bouncing balls in the unit square with specular wall reflection and
  equal-mass elastic collisions, rendered as anti-aliased discs;
* moving 8x8 digit glyphs that bounce off walls, pass through each other
  (pixelwise max) and are binarized at a threshold.

Datasets are stored as ``Dataset`` objects holding an (N, L, px*px) float32
array; ``save_dataset``/``load_dataset`` use the "RBMD" layout below.
"""
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._numeric import derive_rng
from .errors import FormatError

__all__ = [
    "BallWorldConfig",
    "SpriteWorldConfig",
    "Dataset",
    "RawLayout",
    "GLYPHS",
    "reflect_into",
    "step_balls",
    "render_balls",
    "render_sprites",
    "simulate_ball_trajectory",
    "simulate_balls",
    "simulate_sprites",
    "save_dataset",
    "load_dataset",
    "import_raw_tensor",
    "PackingError",
]


class PackingError(RuntimeError):
    pass


@dataclass(frozen=True)
class BallWorldConfig:
    n_balls: int = 1
    radius: float = 0.12
    speed: float = 0.05
    frame_px: int = 32
    steps: int = 100
    n_sequences: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.n_balls < 1:
            raise ValueError("n_balls must be >= 1")
        if not 0 < self.radius < 0.5:
            raise ValueError("radius must lie in (0, 0.5)")
        if not 0 < self.speed < 1 - 2 * self.radius:
            raise ValueError("speed must be positive and smaller than the free span 1 - 2*radius")
        for name in ("frame_px", "steps", "n_sequences"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class SpriteWorldConfig:
    n_sprites: int = 2
    glyphs: tuple = tuple(range(10))
    frame_px: int = 32
    steps: int = 20
    n_sequences: int = 100
    speed: float = 0.04
    seed: int = 0
    binarize_threshold: float = 0.1

    def __post_init__(self):
        if self.n_sprites < 1:
            raise ValueError("n_sprites must be >= 1")
        if not 0 < self.binarize_threshold < 1:
            raise ValueError("binarize_threshold must lie in (0, 1)")
        if self.frame_px <= 8:
            raise ValueError("frame_px must exceed the 8 pixel glyph size")
        if not self.glyphs or any(g not in range(10) for g in self.glyphs):
            raise ValueError("glyphs must be a nonempty selection of digits 0-9")
        if not 0 < self.speed < 1 - 8 / self.frame_px:
            raise ValueError("speed must be positive and smaller than the free span")
        for name in ("steps", "n_sequences"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(eq=False)
class Dataset:
    """Sequences of square frames; ``data`` is (n_sequences, steps, frame_px**2) float32."""

    data: np.ndarray
    frame_px: int

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"dataset array must be 3-D, got shape {self.data.shape}")
        if self.data.shape[2] != self.frame_px**2:
            raise ValueError(f"frames have {self.data.shape[2]} pixels, expected {self.frame_px}^2")

    @property
    def n_sequences(self):
        return self.data.shape[0]

    @property
    def steps(self):
        return self.data.shape[1]

    def __len__(self):
        return self.n_sequences

    def __getitem__(self, i):
        return self.data[i]

    def __eq__(self, other):
        return (
            isinstance(other, Dataset)
            and self.frame_px == other.frame_px
            and self.data.shape == other.data.shape
            and self.data.tobytes() == other.data.tobytes()
        )


# -- balls --------------------------------------------------------------------


def reflect_into(x, lo, hi):
    """Fold unbounded coordinates into [lo, hi] by repeated specular reflection."""
    span = hi - lo
    y = np.mod(np.asarray(x, dtype=np.float64) - lo, 2 * span)
    return lo + np.where(y > span, 2 * span - y, y)


def step_balls(pos, vel, radius, passes=4):
    """Advance one time step in place: move, reflect off walls, then resolve contacts."""
    pos += vel
    lo, hi = radius, 1.0 - radius
    for axis in range(2):
        x = pos[:, axis]
        low = x < lo
        high = x > hi
        x[low] = 2 * lo - x[low]
        x[high] = 2 * hi - x[high]
        vel[low | high, axis] *= -1
    n = len(pos)
    for _ in range(passes):
        changed = False
        for i in range(n):
            for j in range(i + 1, n):
                d = pos[j] - pos[i]
                dist = np.hypot(d[0], d[1])
                if dist >= 2 * radius or dist == 0.0:
                    continue
                normal = d / dist
                closing = np.dot(vel[i] - vel[j], normal)
                if closing <= 0:
                    continue
                # equal masses: swap the velocity components along the centre line
                vel[i] -= closing * normal
                vel[j] += closing * normal
                changed = True
        if not changed:
            break


def _place_balls(cfg, rng):
    for _ in range(1000):
        pos = rng.uniform(cfg.radius, 1 - cfg.radius, size=(cfg.n_balls, 2))
        diff = pos[:, None, :] - pos[None, :, :]
        dist = np.hypot(diff[..., 0], diff[..., 1]) + 2 * np.eye(cfg.n_balls)
        if np.all(dist >= 2 * cfg.radius):
            return pos
    raise PackingError(f"could not place {cfg.n_balls} non-overlapping balls of radius {cfg.radius}")


def simulate_ball_trajectory(pos, vel, radius, steps):
    """Positions and velocities at steps 0..steps-1 (both arrays of shape (steps, n_balls, 2))."""
    pos = np.array(pos, dtype=np.float64)
    vel = np.array(vel, dtype=np.float64)
    ps, vs = [pos.copy()], [vel.copy()]
    for _ in range(steps - 1):
        step_balls(pos, vel, radius)
        ps.append(pos.copy())
        vs.append(vel.copy())
    return np.array(ps), np.array(vs)


def _pixel_centres(px):
    c = (np.arange(px) + 0.5) / px
    return np.meshgrid(c, c, indexing="ij")  # (row -> y, col -> x)


def render_balls(pos, radius, px):
    """Discs of intensity 1 with a linear one-pixel rim; overlapping balls combine by max."""
    yy, xx = _pixel_centres(px)
    frame = np.zeros((px, px))
    r_px = radius * px
    for x, y in pos:
        d = np.hypot(xx - x, yy - y) * px
        frame = np.maximum(frame, np.clip(r_px + 0.5 - d, 0.0, 1.0))
    return frame.reshape(-1)


def _one_ball_sequence(cfg, index):
    rng = derive_rng(cfg.seed, index)
    pos = _place_balls(cfg, rng)
    angle = rng.uniform(0, 2 * np.pi, size=cfg.n_balls)
    vel = cfg.speed * np.stack([np.cos(angle), np.sin(angle)], axis=1)
    ps, _ = simulate_ball_trajectory(pos, vel, cfg.radius, cfg.steps)
    return np.stack([render_balls(p, cfg.radius, cfg.frame_px) for p in ps])


def _generate(fn, cfg, threads):
    idx = range(cfg.n_sequences)
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            seqs = list(ex.map(lambda i: fn(cfg, i), idx))
    else:
        seqs = [fn(cfg, i) for i in idx]
    return Dataset(np.stack(seqs), cfg.frame_px)


def simulate_balls(cfg, threads=1):
    """Bouncing-ball videos; sequence ``i`` depends only on ``(cfg, i)``."""
    return _generate(_one_ball_sequence, cfg, threads)


# -- sprites ------------------------------------------------------------------

_GLYPH_ROWS = {
    0: ["..####..", ".##..##.", ".##.###.", ".###.##.", ".##..##.", ".##..##.", "..####..", "........"],
    1: ["...##...", "..###...", "...##...", "...##...", "...##...", "...##...", ".######.", "........"],
    2: ["..####..", ".##..##.", ".....##.", "....##..", "...##...", "..##....", ".######.", "........"],
    3: ["..####..", ".##..##.", ".....##.", "...###..", ".....##.", ".##..##.", "..####..", "........"],
    4: ["....##..", "...###..", "..####..", ".##.##..", ".######.", "....##..", "....##..", "........"],
    5: [".######.", ".##.....", ".#####..", ".....##.", ".....##.", ".##..##.", "..####..", "........"],
    6: ["..####..", ".##.....", ".#####..", ".##..##.", ".##..##.", ".##..##.", "..####..", "........"],
    7: [".######.", ".....##.", "....##..", "...##...", "..##....", "..##....", "..##....", "........"],
    8: ["..####..", ".##..##.", ".##..##.", "..####..", ".##..##.", ".##..##.", "..####..", "........"],
    9: ["..####..", ".##..##.", ".##..##.", "..#####.", ".....##.", "....##..", "..###...", "........"],
}
GLYPHS = {d: np.array([[ch == "#" for ch in row] for row in rows], dtype=np.float64) for d, rows in _GLYPH_ROWS.items()}


def _blit(frame, glyph, top, left):
    """Max-composite ``glyph`` at a sub-pixel offset using bilinear weights."""
    px = frame.shape[0]
    r0, c0 = int(np.floor(top)), int(np.floor(left))
    fr, fc = top - r0, left - c0
    g = np.zeros((9, 9))
    g[:8, :8] += (1 - fr) * (1 - fc) * glyph
    g[1:, :8] += fr * (1 - fc) * glyph
    g[:8, 1:] += (1 - fr) * fc * glyph
    g[1:, 1:] += fr * fc * glyph
    r1, c1 = min(r0 + 9, px), min(c0 + 9, px)
    region = frame[r0:r1, c0:c1]
    np.maximum(region, g[: r1 - r0, : c1 - c0], out=region)


def render_sprites(positions, glyphs, px):
    """Unthresholded frame: glyph ``k`` with its top-left corner at ``positions[k]`` (world units, (y, x))."""
    frame = np.zeros((px, px))
    for (y, x), glyph in zip(positions, glyphs):
        _blit(frame, glyph, y * px, x * px)
    return frame.reshape(-1)


def _one_sprite_sequence(cfg, index):
    rng = derive_rng(cfg.seed, index)
    hi = 1.0 - 8.0 / cfg.frame_px
    digits = rng.choice(np.array(cfg.glyphs), size=cfg.n_sprites)
    glyphs = [GLYPHS[int(d)] for d in digits]
    pos0 = rng.uniform(0, hi, size=(cfg.n_sprites, 2))
    angle = rng.uniform(0, 2 * np.pi, size=cfg.n_sprites)
    vel = cfg.speed * np.stack([np.sin(angle), np.cos(angle)], axis=1)
    t = np.arange(cfg.steps)[:, None, None]
    path = reflect_into(pos0[None] + t * vel[None], 0.0, hi)
    frames = np.stack([render_sprites(p, glyphs, cfg.frame_px) for p in path])
    return (frames >= cfg.binarize_threshold).astype(np.float64)


def simulate_sprites(cfg, threads=1):
    """Moving-digit videos, binarized at ``cfg.binarize_threshold``."""
    return _generate(_one_sprite_sequence, cfg, threads)


# -- storage ------------------------------------------------------------------
#
# "RBMD" | u32 n_sequences | u32 steps | u32 frame_px | f32 pixels (sequence, step, row, col)
# little-endian; total size 16 + 4 * n * steps * frame_px**2 bytes.

_DATASET_HEADER = struct.Struct("<4sIII")


def save_dataset(ds, path):
    if ds.n_sequences == 0 or ds.steps == 0:
        raise ValueError("refusing to save an empty dataset")
    with open(path, "wb") as f:
        f.write(_DATASET_HEADER.pack(b"RBMD", ds.n_sequences, ds.steps, ds.frame_px))
        f.write(np.ascontiguousarray(ds.data, dtype="<f4").tobytes())


def load_dataset(path):
    raw = Path(path).read_bytes()
    if len(raw) < _DATASET_HEADER.size:
        raise FormatError(f"truncated header: {len(raw)} of {_DATASET_HEADER.size} bytes", len(raw))
    magic, n, steps, px = _DATASET_HEADER.unpack_from(raw)
    if magic != b"RBMD":
        raise FormatError(f"bad magic {magic!r}, expected b'RBMD'", 0)
    expected = 4 * n * steps * px * px
    actual = len(raw) - _DATASET_HEADER.size
    if actual != expected:
        raise FormatError(f"payload is {actual} bytes, header implies {expected}", _DATASET_HEADER.size + min(actual, expected))
    data = np.frombuffer(raw, dtype="<f4", offset=_DATASET_HEADER.size).reshape(n, steps, px * px)
    return Dataset(data.astype(np.float32), px)


@dataclass(frozen=True)
class RawLayout:
    """How to read an external tensor of frames.

    ``dims`` lists the four sizes in file order; ``order`` is ``"tshw"``
    (time, sequence, height, width) or ``"sthw"``; ``elem`` is ``"u8"``
    (scaled by 1/255) or ``"f32"`` (little-endian, used as is).
    """

    dims: tuple
    order: str = "tshw"
    elem: str = "u8"
    binarize: float = None

    def __post_init__(self):
        if len(self.dims) != 4 or any(int(d) < 1 for d in self.dims):
            raise ValueError("dims must be four positive sizes")
        if self.order not in ("tshw", "sthw"):
            raise ValueError("order must be 'tshw' or 'sthw'")
        if self.elem not in ("u8", "f32"):
            raise ValueError("elem must be 'u8' or 'f32'")
        if self.dims[2] != self.dims[3]:
            raise ValueError("only square frames are supported")
        if self.binarize is not None and not 0 < self.binarize < 1:
            raise ValueError("binarize threshold must lie in (0, 1)")


def import_raw_tensor(path, layout):
    """Read a headerless tensor (or a ``.npy`` file) laid out as described by ``layout``."""
    dtype = np.dtype("u1") if layout.elem == "u8" else np.dtype("<f4")
    dims = tuple(int(d) for d in layout.dims)
    with open(path, "rb") as f:
        head = f.read(6)
        f.seek(0)
        if head == b"\x93NUMPY":
            arr = np.load(f, allow_pickle=False)
            if arr.shape != dims or arr.dtype.newbyteorder("<") != dtype.newbyteorder("<"):
                raise FormatError(f"npy array {arr.shape} {arr.dtype} does not match layout {dims} {layout.elem}")
        else:
            raw = f.read()
            expected = int(np.prod(dims)) * dtype.itemsize
            if len(raw) != expected:
                raise FormatError(f"payload is {len(raw)} bytes, layout {dims} x {layout.elem} needs {expected}", min(len(raw), expected))
            arr = np.frombuffer(raw, dtype=dtype).reshape(dims)
    if layout.order == "tshw":
        arr = np.swapaxes(arr, 0, 1)
    n, steps, px, _ = arr.shape
    data = arr.astype(np.float32)
    if layout.elem == "u8":
        data /= np.float32(255.0)
    data = np.clip(data, 0.0, 1.0)
    if layout.binarize is not None:
        data = (data >= layout.binarize).astype(np.float32)
    return Dataset(data.reshape(n, steps, px * px), px)
