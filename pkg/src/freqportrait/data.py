"""Frames, masks, audio-feature windows, file formats and the synthetic video generator."""

import enum
import math
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, ContractError, DatasetError, FormatError, InvalidInputError

CONTEXT = 16
HALF_CONTEXT = 8
FEATURE_STEPS = 2
FEATURE_DIM = 1024
AUDIO_GRID = 32

FRAME_PATTERN = "frame_{:06d}.png"
_FRAME_RE = re.compile(r"^frame_(\d+)\.png$")
FRK_MAGIC = b"FRK1"


@dataclass(frozen=True)
class HeadBox:
    """Pixel rectangle; ``bottom`` and ``right`` are exclusive."""

    top: int
    left: int
    bottom: int
    right: int

    def validate(self, height, width):
        if not (0 <= self.top < self.bottom <= height and 0 <= self.left < self.right <= width):
            raise ContractError(f"head box {self} outside a {height}x{width} image or empty")

    @classmethod
    def full(cls, height, width):
        return cls(0, 0, height, width)

    @classmethod
    def parse(cls, text):
        parts = text.split()
        if len(parts) != 4:
            raise ValueError(f"expected 't l b r', got {text!r}")
        return cls(*(int(p) for p in parts))

    def as_tuple(self):
        return (self.top, self.left, self.bottom, self.right)


@dataclass(frozen=True)
class Frame:
    pixels: np.ndarray  # float32 [3, H, W] in [0, 1]
    index: int = 0
    head_box: HeadBox = None

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[0] != 3:
            raise ContractError(f"frame pixels must be [3, H, W], got {px.shape}")
        if not np.isfinite(px).all() or px.min() < 0.0 or px.max() > 1.0:
            raise InvalidInputError("frame pixels must be finite and within [0, 1]")
        if self.head_box is None:
            object.__setattr__(self, "head_box", HeadBox.full(px.shape[1], px.shape[2]))
        self.head_box.validate(px.shape[1], px.shape[2])

    @property
    def size(self):
        return self.pixels.shape[1], self.pixels.shape[2]


class MaskKind(enum.Enum):
    LOWER_HALF = "lower_half"
    FULL_HEAD = "full_head"


@dataclass(frozen=True)
class MaskSpec:
    kind: MaskKind

    def region(self, box):
        """Row/column slices zeroed by this mask inside ``box``."""
        if self.kind is MaskKind.FULL_HEAD:
            return slice(box.top, box.bottom), slice(box.left, box.right)
        mid = (box.top + box.bottom) // 2
        if box.bottom - mid <= 1:
            raise ContractError(f"head box {box} leaves <= 1 row in its lower half")
        return slice(mid, box.bottom), slice(box.left, box.right)


LOWER_HALF = MaskSpec(MaskKind.LOWER_HALF)
FULL_HEAD = MaskSpec(MaskKind.FULL_HEAD)


def apply_mask(frame, spec):
    """Copy of ``frame`` with the mask region set to exactly zero."""
    rows, cols = spec.region(frame.head_box)
    px = frame.pixels.copy()
    px[:, rows, cols] = 0.0
    return Frame(px, frame.index, frame.head_box)


def mask_array(shape, box, spec):
    """Boolean [H, W] array that is True where ``spec`` zeroes pixels."""
    m = np.zeros(shape, dtype=bool)
    rows, cols = spec.region(box)
    m[rows, cols] = True
    return m


@dataclass(frozen=True)
class AudioFeatureWindow:
    raw: np.ndarray  # [16, 2, 1024]
    reshaped: np.ndarray = field(repr=False, default=None)  # [32, 32, 32]

    def __post_init__(self):
        if self.raw.shape != (CONTEXT, FEATURE_STEPS, FEATURE_DIM):
            raise ContractError(f"audio window must be [16, 2, 1024], got {self.raw.shape}")
        if self.reshaped is None:
            object.__setattr__(self, "reshaped", self.raw.reshape(AUDIO_GRID, AUDIO_GRID, AUDIO_GRID))


def window_indices(n_frames, j):
    """Feature rows used for frame ``j``: j-8 .. j+7, clamped to [0, n_frames-1]."""
    if not 0 <= j < n_frames:
        raise ContractError(f"frame index {j} outside [0, {n_frames})")
    idx = np.arange(j - HALF_CONTEXT, j + CONTEXT - HALF_CONTEXT)
    return np.clip(idx, 0, n_frames - 1)


def window_audio(features, frame_index):
    features = np.asarray(features)
    if features.ndim != 3 or features.shape[1:] != (FEATURE_STEPS, FEATURE_DIM) or len(features) < 1:
        raise ContractError(f"features must be [T, 2, 1024] with T >= 1, got {features.shape}")
    raw = np.ascontiguousarray(features[window_indices(len(features), frame_index)], dtype=np.float32)
    return AudioFeatureWindow(raw)


@dataclass(frozen=True)
class Sample:
    reference: Frame
    masked: Frame
    mask: MaskSpec
    audio: AudioFeatureWindow
    target: Frame


def sample_training_pair(video, features, rng):
    """Draw one training sample.

    The target frame is uniform over the video, the reference is uniform and
    re-drawn until it differs from the target, and the mask kind is a fair coin.
    """
    n = len(video)
    if n < 2:
        raise DatasetError(f"need at least 2 frames to sample a pair, got {n}")
    target_idx = int(rng.integers(n))
    ref_idx = int(rng.integers(n))
    while ref_idx == target_idx:
        ref_idx = int(rng.integers(n))
    spec = LOWER_HALF if rng.random() < 0.5 else FULL_HEAD
    target = video[target_idx]
    return Sample(
        reference=video[ref_idx],
        masked=apply_mask(target, spec),
        mask=spec,
        audio=window_audio(features, target_idx),
        target=target,
    )


# --- synthetic talking video -------------------------------------------------

SUPPORTED_SIZES = (32, 64, 128)
ENCODED_DIMS = 64


def mouth_aperture(t):
    """Mouth opening in [0.05, 0.95] at (possibly fractional) frame time ``t``.

    ``m(t) = 0.5 + 0.3 sin(2 pi t / 16) + 0.15 sin(2 pi t / 7 + 0.5)``
    """
    t = np.asarray(t, dtype=np.float64)
    return 0.5 + 0.3 * np.sin(2 * np.pi * t / 16.0) + 0.15 * np.sin(2 * np.pi * t / 7.0 + 0.5)


@dataclass(frozen=True)
class SynthConfig:
    frames: int = 64
    size: int = 64

    def validate(self):
        if self.frames < CONTEXT:
            raise ConfigError(f"synthetic video needs >= {CONTEXT} frames, got {self.frames}")
        if self.size not in SUPPORTED_SIZES:
            raise ConfigError(f"synthetic size must be one of {SUPPORTED_SIZES}, got {self.size}")


@dataclass
class SyntheticVideo:
    """Generator output; unpacks as ``frames, features, head_boxes``."""

    frames: list
    features: np.ndarray
    head_boxes: list
    aperture: np.ndarray

    def __iter__(self):
        return iter((self.frames, self.features, self.head_boxes))


def _texture(rng, size, n_waves, max_freq):
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.zeros((size, size))
    for _ in range(n_waves):
        fy, fx = rng.uniform(-max_freq, max_freq, size=2)
        phase = rng.uniform(0, 2 * np.pi)
        out += np.cos(2 * np.pi * (fy * yy + fx * xx) + phase)
    return out / n_waves


def _ellipse(size, cy, cx, ry, rx, edge=1.0):
    """Soft ellipse coverage in [0, 1] with an edge about ``edge`` pixels wide."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    r = np.sqrt(((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2)
    return np.clip((1.0 - r) * min(ry, rx) / edge + 0.5, 0.0, 1.0)


def render_portrait(size, identity, aperture):
    """One frame of the synthetic portrait as float64 [3, H, W]."""
    s = size
    img = identity["background"].copy()
    head = _ellipse(s, 0.52 * s, 0.5 * s, 0.34 * s, 0.25 * s)
    img = img * (1 - head) + identity["skin"] * head
    for ex in (0.41, 0.59):
        eye = _ellipse(s, 0.42 * s, ex * s, 0.035 * s, 0.05 * s)
        img = img * (1 - eye) + identity["eye"][:, None, None] * eye
    mouth_ry = 0.01 * s + 0.07 * s * float(aperture)
    mouth = _ellipse(s, 0.69 * s, 0.5 * s, mouth_ry, 0.1 * s)
    img = img * (1 - mouth) + identity["mouth"][:, None, None] * mouth
    return img


def synthetic_head_box(size):
    s = size
    return HeadBox(int(round(0.16 * s)), int(round(0.23 * s)), int(round(0.88 * s)), int(round(0.77 * s)))


def make_identity(size, rng):
    bg_tex = _texture(rng, size, 6, 6.0)
    bg_color = rng.uniform(0.2, 0.8, size=3)
    background = np.clip(bg_color[:, None, None] + 0.15 * bg_tex[None], 0, 1)
    skin_color = rng.uniform(0.45, 0.85, size=3)
    skin_tex = _texture(rng, size, 4, 3.0)
    skin = np.clip(skin_color[:, None, None] + 0.08 * skin_tex[None], 0, 1)
    return {
        "background": background,
        "skin": skin,
        "eye": rng.uniform(0.0, 0.2, size=3),
        "mouth": np.array([0.45, 0.05, 0.08]) * rng.uniform(0.8, 1.0),
    }


def synthetic_features(n_frames, rng):
    """Features whose first 64 dims carry ``2 m(t) - 1`` (feature step s at t + s/2)."""
    feats = rng.normal(0.0, 0.5, size=(n_frames, FEATURE_STEPS, FEATURE_DIM))
    t = np.arange(n_frames)[:, None] + np.arange(FEATURE_STEPS)[None, :] / FEATURE_STEPS
    signal = 2.0 * mouth_aperture(t) - 1.0
    feats[:, :, :ENCODED_DIMS] = signal[:, :, None] + rng.normal(0.0, 0.01, size=(n_frames, FEATURE_STEPS, ENCODED_DIMS))
    return feats.astype(np.float32)


def generate_synthetic_dataset(config, seed):
    """Render a deterministic talking portrait and matching audio features.

    The background and head are static; only the mouth height changes,
    following :func:`mouth_aperture`. Frames are quantized to 8 bits so a
    PNG round trip is exact.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    identity = make_identity(config.size, rng)
    box = synthetic_head_box(config.size)
    aperture = mouth_aperture(np.arange(config.frames))
    frames = []
    for t in range(config.frames):
        img = render_portrait(config.size, identity, aperture[t])
        px = (np.round(np.clip(img, 0, 1) * 255) / 255).astype(np.float32)
        frames.append(Frame(px, t, box))
    features = synthetic_features(config.frames, rng)
    return SyntheticVideo(frames, features, [box] * config.frames, aperture)


# --- file formats --------------------------------------------------------------

def save_features(path, array):
    """Write ``array`` as an FRK1 record (float32 little-endian, row-major)."""
    path = Path(path)
    with open(path, "wb") as fh:
        write_frk_array(fh, array)


def write_frk_array(fh, array):
    arr = np.ascontiguousarray(array, dtype="<f4")
    fh.write(FRK_MAGIC)
    fh.write(struct.pack("<I", arr.ndim))
    fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    fh.write(arr.tobytes(order="C"))


def read_frk_array(fh, path):
    magic = fh.read(4)
    if magic != FRK_MAGIC:
        raise FormatError(path, f"bad magic {magic!r}")
    head = fh.read(4)
    if len(head) != 4:
        raise FormatError(path, "truncated header")
    (rank,) = struct.unpack("<I", head)
    if rank > 16:
        raise FormatError(path, f"implausible rank {rank}")
    dims_raw = fh.read(4 * rank)
    if len(dims_raw) != 4 * rank:
        raise FormatError(path, "truncated dims")
    dims = struct.unpack(f"<{rank}I", dims_raw)
    count = math.prod(dims)
    payload = fh.read(4 * count)
    if len(payload) != 4 * count:
        raise FormatError(path, f"truncated payload: expected {4 * count} bytes, got {len(payload)}")
    return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)


def load_features(path):
    path = Path(path)
    with open(path, "rb") as fh:
        arr = read_frk_array(fh, path)
        if fh.read(1):
            raise FormatError(path, "trailing bytes after payload")
    if arr.ndim != 3 or arr.shape[1:] != (FEATURE_STEPS, FEATURE_DIM):
        raise FormatError(path, f"features must be [T, 2, 1024], got {arr.shape}")
    return arr


def read_png(path):
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return (arr.transpose(2, 0, 1).astype(np.float32) / 255.0)


def write_png(path, pixels):
    arr = np.round(np.clip(pixels, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
    Image.fromarray(np.ascontiguousarray(arr), mode="RGB").save(path)


def save_frames(dir_path, frames):
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    for i, fr in enumerate(frames):
        write_png(d / FRAME_PATTERN.format(i), fr.pixels)


def load_frames(dir_path, head_boxes=None):
    d = Path(dir_path)
    if not d.is_dir():
        raise FormatError(d, "not a directory")
    found = {}
    for p in d.iterdir():
        m = _FRAME_RE.match(p.name)
        if m:
            found[int(m.group(1))] = p
    if not found:
        raise FormatError(d, "no frame_%06d.png files")
    indices = sorted(found)
    if head_boxes is not None and len(head_boxes) < len(indices):
        raise FormatError(d, f"{len(head_boxes)} head boxes for {len(indices)} frames")
    if indices != list(range(len(indices))):
        missing = sorted(set(range(indices[-1] + 1)) - set(indices))
        raise FormatError(found[indices[-1]], f"non-contiguous frame indices, missing {missing[:5]}")
    frames = []
    for i in indices:
        px = read_png(found[i])
        box = head_boxes[i] if head_boxes is not None else None
        try:
            frames.append(Frame(px, i, box))
        except ContractError as exc:
            raise FormatError(found[i], str(exc)) from exc
    shapes = {f.pixels.shape for f in frames}
    if len(shapes) != 1:
        raise FormatError(d, f"mixed frame sizes {sorted(shapes)}")
    return frames


def save_head_boxes(path, boxes):
    with open(path, "w") as fh:
        for i, b in enumerate(boxes):
            fh.write(f"{i} {b.top} {b.left} {b.bottom} {b.right}\n")


def load_head_boxes(path):
    path = Path(path)
    boxes = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(path, f"line {lineno}: expected 5 integers")
        try:
            idx, *rect = (int(p) for p in parts)
        except ValueError:
            raise FormatError(path, f"line {lineno}: non-integer value") from None
        boxes[idx] = HeadBox(*rect)
    if sorted(boxes) != list(range(len(boxes))):
        raise FormatError(path, "head box indices are not contiguous from 0")
    return [boxes[i] for i in range(len(boxes))]


# Dataset directory layout written by `synthgen` and read by `train`.
FRAMES_DIR = "frames"
FEATURES_FILE = "features.frk"
BOXES_FILE = "boxes.txt"


def save_dataset(dir_path, frames, features, head_boxes):
    d = Path(dir_path)
    d.mkdir(parents=True, exist_ok=True)
    save_frames(d / FRAMES_DIR, frames)
    save_features(d / FEATURES_FILE, features)
    save_head_boxes(d / BOXES_FILE, head_boxes)


def load_dataset(dir_path):
    """Read a dataset directory; returns ``(frames, features)``."""
    d = Path(dir_path)
    boxes = load_head_boxes(d / BOXES_FILE) if (d / BOXES_FILE).exists() else None
    frames = load_frames(d / FRAMES_DIR, boxes)
    if boxes is not None and len(boxes) != len(frames):
        raise FormatError(d / BOXES_FILE, f"{len(boxes)} boxes for {len(frames)} frames")
    features = load_features(d / FEATURES_FILE)
    if len(features) != len(frames):
        raise FormatError(d / FEATURES_FILE, f"{len(features)} feature rows for {len(frames)} frames")
    return frames, features
