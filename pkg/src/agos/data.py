"""Image and tensor file formats, dataset manifests, splitting and synthetic scenes."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mil import WeakInstanceLabels

AGT_MAGIC = b"AGT1"
_AGT_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
IMAGE_SUFFIXES = (".pgm", ".ppm", ".agt")


class FormatError(ValueError):
    pass


# ------------------------------------------------------------------- AGT1

def encode_agt(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype == np.float32:
        code = 0
    elif arr.dtype == np.float64:
        code = 1
    else:
        raise FormatError(f"AGT1 stores float32/float64, got {arr.dtype}")
    if arr.ndim > 255:
        raise FormatError("rank too large")
    head = AGT_MAGIC + struct.pack("<BB", code, arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_AGT_CODES[code]).tobytes()


def decode_agt(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    """Decode one AGT1 record starting at ``offset``; returns (array, end offset)."""
    if buf[offset : offset + 4] != AGT_MAGIC:
        raise FormatError("bad AGT1 magic")
    if len(buf) < offset + 6:
        raise FormatError("truncated AGT1 header")
    code, rank = struct.unpack_from("<BB", buf, offset + 4)
    if code not in _AGT_CODES:
        raise FormatError(f"unknown AGT1 dtype code {code}")
    pos = offset + 6
    if len(buf) < pos + 4 * rank:
        raise FormatError("truncated AGT1 header")
    shape = struct.unpack_from(f"<{rank}I", buf, pos)
    pos += 4 * rank
    dt = _AGT_CODES[code]
    nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
    if len(buf) < pos + nbytes:
        raise FormatError("truncated AGT1 payload")
    arr = np.frombuffer(buf, dtype=dt, count=nbytes // dt.itemsize, offset=pos).reshape(shape)
    return arr.astype(dt.newbyteorder("="), copy=True), pos + nbytes


def save_agt(path, arr) -> None:
    Path(path).write_bytes(encode_agt(arr))


def load_agt(path) -> np.ndarray:
    return decode_agt(Path(path).read_bytes())[0]


# ---------------------------------------------------------------- PGM/PPM

def _header_tokens(buf: bytes, count: int) -> tuple[list[bytes], int]:
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(buf) and buf[pos : pos + 1].isspace():
            pos += 1
        if pos >= len(buf):
            raise FormatError("truncated PNM header")
        if buf[pos : pos + 1] == b"#":
            while pos < len(buf) and buf[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(buf) and not buf[pos : pos + 1].isspace() and buf[pos : pos + 1] != b"#":
            pos += 1
        tokens.append(buf[start:pos])
    # exactly one whitespace byte separates the header from the raster
    if pos >= len(buf) or not buf[pos : pos + 1].isspace():
        raise FormatError("missing whitespace after PNM header")
    return tokens, pos + 1


def read_pnm(path_or_bytes) -> tuple[np.ndarray, int]:
    """Binary P5/P6 -> (H x W x {1,3} integer array, maxval)."""
    buf = path_or_bytes if isinstance(path_or_bytes, (bytes, bytearray)) else Path(path_or_bytes).read_bytes()
    magic = bytes(buf[:2])
    if magic == b"P5":
        channels = 1
    elif magic == b"P6":
        channels = 3
    else:
        raise FormatError(f"unsupported PNM magic {magic!r}")
    (_, w, h, maxval), pos = _header_tokens(buf, 4)
    width, height, maxval = int(w), int(h), int(maxval)
    if maxval <= 0 or maxval > 65535:
        raise FormatError(f"invalid maxval {maxval}")
    dt = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
    count = width * height * channels
    if len(buf) - pos < count * dt.itemsize:
        raise FormatError("truncated PNM payload")
    arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos).reshape(height, width, channels)
    return arr.astype(np.uint16 if maxval > 255 else np.uint8), maxval


def write_pnm(path, arr, maxval: int = 255) -> None:
    """Write an H x W (x 1|3) integer array as binary PGM or PPM."""
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = arr[..., None]
    h, w, c = arr.shape
    if c not in (1, 3):
        raise FormatError("PNM needs 1 or 3 channels")
    if not 0 < maxval <= 65535:
        raise FormatError(f"invalid maxval {maxval}")
    if arr.min(initial=0) < 0 or arr.max(initial=0) > maxval:
        raise FormatError("pixel values exceed maxval")
    dt = ">u2" if maxval > 255 else "u1"
    head = f"{'P5' if c == 1 else 'P6'}\n{w} {h}\n{maxval}\n".encode("ascii")
    Path(path).write_bytes(head + np.ascontiguousarray(arr, dtype=dt).tobytes())


def load_image(path) -> np.ndarray:
    """Load PGM/PPM/AGT1 as an H x W x C float64 array; PNM values are scaled to [0, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == AGT_MAGIC:
        arr = decode_agt(raw)[0]
        if arr.ndim == 2:
            arr = arr[..., None]
        elif arr.ndim == 4 and arr.shape[0] == 1:
            arr = arr[0]
        if arr.ndim != 3:
            raise FormatError(f"AGT1 image must be H x W x C, got shape {arr.shape}")
        return arr.astype(np.float64)
    arr, maxval = read_pnm(raw)
    return arr.astype(np.float64) / maxval


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------- manifests

@dataclass
class DatasetManifest:
    classes: list[str]
    samples: list[tuple[str, int]]
    image_size: tuple[int, int]
    channels: int
    cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def image(self, i: int) -> np.ndarray:
        path = self.samples[i][0]
        if path not in self.cache:
            self.cache[path] = load_image(path)
        return self.cache[path]

    def labels(self) -> np.ndarray:
        return np.array([c for _, c in self.samples], dtype=np.int64)

    def arrays(self, dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
        if not self.samples:
            return np.zeros((0, *self.image_size, self.channels), dtype=dtype), np.zeros(0, dtype=np.int64)
        x = np.stack([self.image(i) for i in range(len(self))]).astype(dtype)
        return x, self.labels()

    def subset(self, indices) -> "DatasetManifest":
        samples = [self.samples[i] for i in indices]
        cache = {p: self.cache[p] for p, _ in samples if p in self.cache}
        return DatasetManifest(list(self.classes), samples, self.image_size, self.channels, cache)


def scan_dataset(root) -> DatasetManifest:
    """``root/<class>/<sample>.{pgm,ppm,agt}``; classes in lexicographic order."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} not found")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise ValueError(f"no class directories under {root}")
    samples = []
    for ci, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        samples.extend((str(p), ci) for p in files)
    if not samples:
        raise ValueError(f"no images under {root}")
    manifest = DatasetManifest(classes, samples, (0, 0), 0)
    first = manifest.image(0)
    manifest.image_size = first.shape[:2]
    manifest.channels = first.shape[2]
    for i in range(len(manifest)):
        if manifest.image(i).shape != first.shape:
            raise FormatError(f"{manifest.samples[i][0]} has shape {manifest.image(i).shape}, expected {first.shape}")
    return manifest


def split_dataset(manifest: DatasetManifest, train_ratio: float, seed: int) -> tuple[DatasetManifest, DatasetManifest]:
    """Stratified split; each class sends ceil(ratio * n_c) samples to train."""
    if not 0 < train_ratio < 1:
        raise ValueError("train ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    labels = manifest.labels()
    train_idx, test_idx = [], []
    for c in range(manifest.num_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            raise ValueError(f"class {manifest.classes[c]!r} has no samples")
        idx = idx[rng.permutation(idx.size)]
        k = math.ceil(round(train_ratio * idx.size, 9))
        train_idx.extend(idx[:k].tolist())
        test_idx.extend(idx[k:].tolist())
    return manifest.subset(sorted(train_idx)), manifest.subset(sorted(test_idx))


# ------------------------------------------------------------ synthetic data

SHAPES = ("square", "ring", "cross", "triangle", "frame", "diagonal", "disc", "stripes")


@dataclass(frozen=True)
class SyntheticSceneSpec:
    num_classes: int = 3
    image_size: tuple[int, int] = (64, 64)
    object_size_range: tuple[int, int] = (10, 26)
    distractor_count_range: tuple[int, int] = (2, 6)
    noise_std: float = 0.05
    samples_per_class: int = 200
    channels: int = 3
    objects_range: tuple[int, int] = (1, 2)
    grid: int = 4  # instance cell size in pixels (= backbone downsample factor)

    def __post_init__(self):
        for lo, hi in (self.object_size_range, self.distractor_count_range, self.objects_range):
            if lo > hi:
                raise ValueError("range minimum exceeds maximum")
        if self.objects_range[0] < 1:
            raise ValueError("every scene needs at least one class object")
        if self.object_size_range[0] < 3:
            raise ValueError("objects must be at least 3 pixels")
        if self.object_size_range[1] > min(self.image_size):
            raise ValueError("object larger than image")
        if not 1 <= self.num_classes <= len(SHAPES):
            raise ValueError(f"num_classes must be in 1..{len(SHAPES)}")
        if self.channels not in (1, 3):
            raise ValueError("channels must be 1 or 3")
        h, w = self.image_size
        if h % self.grid or w % self.grid:
            raise ValueError("image size must be divisible by the instance grid")

    @classmethod
    def from_train(cls, config) -> "SyntheticSceneSpec":
        return cls(
            num_classes=config.classes,
            image_size=(config.image_size, config.image_size),
            object_size_range=(config.object_size_min, config.object_size_max),
            distractor_count_range=(config.distractors_min, config.distractors_max),
            noise_std=config.noise_std,
            samples_per_class=config.samples_per_class,
            channels=config.image_channels,
            grid=config.downsample,
        )


def shape_mask(kind: str, size: int) -> np.ndarray:
    """Boolean size x size raster of a class-defining shape."""
    yy, xx = np.mgrid[0:size, 0:size]
    c = (size - 1) / 2.0
    r = np.hypot(yy - c, xx - c)
    t = max(1, size // 6)
    if kind == "square":
        return np.ones((size, size), bool)
    if kind == "ring":
        return (r <= c + 0.5) & (r >= c + 0.5 - t)
    if kind == "cross":
        return (np.abs(yy - c) < t / 2 + 0.5) | (np.abs(xx - c) < t / 2 + 0.5)
    if kind == "triangle":
        return np.abs(xx - c) <= yy / 2.0
    if kind == "frame":
        return (yy < t) | (xx < t) | (yy >= size - t) | (xx >= size - t)
    if kind == "diagonal":
        return (np.abs(yy - xx) < t) | (np.abs(yy + xx - (size - 1)) < t)
    if kind == "disc":
        return r <= c + 0.5
    if kind == "stripes":
        return (yy // t) % 2 == 0
    raise ValueError(f"unknown shape {kind!r}")


def _paint(img: np.ndarray, mask: np.ndarray, y: int, x: int, color: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    region = img[y : y + h, x : x + w]
    region[mask] = color
    full = np.zeros(img.shape[:2], bool)
    full[y : y + h, x : x + w] = mask
    return full


def synth_generate(spec: SyntheticSceneSpec, seed: int, root=None):
    """Generate a labelled scene dataset plus per-sample weak instance labels.

    Each image holds one or more objects of its class shape (sizes drawn from
    ``object_size_range``) and distractors drawn identically for every class.
    Weak labels mark instance-grid cells overlapping a class object. With
    ``root`` set, images are also written as ``root/<class>/<i>.ppm`` (or
    ``.pgm``); otherwise samples live only in the manifest cache.
    """
    rng = np.random.default_rng(seed)
    h, w = spec.image_size
    g = spec.grid
    classes = [f"{k:02d}_{SHAPES[k]}" for k in range(spec.num_classes)]
    samples, cache, weak = [], {}, []
    suffix = ".ppm" if spec.channels == 3 else ".pgm"
    for k in range(spec.num_classes):
        for i in range(spec.samples_per_class):
            img = np.clip(0.2 + spec.noise_std * rng.standard_normal((h, w, spec.channels)), 0.0, 1.0)
            obj_mask = np.zeros((h, w), bool)
            for _ in range(rng.integers(spec.distractor_count_range[0], spec.distractor_count_range[1] + 1)):
                dh, dw = (int(v) for v in rng.integers(1, 4, size=2))
                if rng.random() < 0.5:
                    dw = int(rng.integers(4, 9))
                y, x = int(rng.integers(0, h - dh + 1)), int(rng.integers(0, w - dw + 1))
                _paint(img, np.ones((dh, dw), bool), y, x, _color(rng, spec.channels))
            for _ in range(rng.integers(spec.objects_range[0], spec.objects_range[1] + 1)):
                size = int(rng.integers(spec.object_size_range[0], spec.object_size_range[1] + 1))
                y, x = int(rng.integers(0, h - size + 1)), int(rng.integers(0, w - size + 1))
                obj_mask |= _paint(img, shape_mask(SHAPES[k], size), y, x, _color(rng, spec.channels))
            img = to_uint8(img).astype(np.float64) / 255.0
            cells = obj_mask.reshape(h // g, g, w // g, g).any(axis=(1, 3))
            weak.append(WeakInstanceLabels(cells.astype(np.int64).ravel().tolist(), k, grid=cells.shape))
            if root is not None:
                path = Path(root) / classes[k] / f"{i:05d}{suffix}"
                path.parent.mkdir(parents=True, exist_ok=True)
                write_pnm(path, to_uint8(img))
                path = str(path)
            else:
                path = f"synth://{classes[k]}/{i:05d}"
            cache[path] = img
            samples.append((path, k))
    manifest = DatasetManifest(classes, samples, (h, w), spec.channels, cache)
    return manifest, weak


def _color(rng: np.random.Generator, channels: int) -> np.ndarray:
    level = rng.uniform(0.65, 1.0)
    if channels == 1:
        return np.array([level])
    tint = rng.uniform(0.6, 1.0, size=3)
    return level * tint / tint.max()


def save_weak_labels(path, weak: list[WeakInstanceLabels]) -> None:
    grids = np.stack([np.asarray(wl.labels, dtype=np.float32).reshape(wl.grid) for wl in weak])
    save_agt(path, grids[..., None])


# ------------------------------------------------------------------ heatmaps

def heatmap_image(inst_map: np.ndarray, class_index: int) -> np.ndarray:
    """H x W x C instance scores -> H x W uint8, min-max scaled to [0, 255].

    ``class_index = -1`` averages the class channels. Constant maps become 0.
    """
    m = np.asarray(inst_map, dtype=np.float64)
    if m.ndim == 4:
        if m.shape[0] != 1:
            raise ValueError("pass one sample's instance map")
        m = m[0]
    c = m.shape[2]
    if class_index == -1:
        plane = m.mean(axis=2)
    elif 0 <= class_index < c:
        plane = m[..., class_index]
    else:
        raise ValueError(f"class index {class_index} out of range for {c} classes")
    lo, hi = plane.min(), plane.max()
    if hi - lo <= 0:
        return np.zeros(plane.shape, np.uint8)
    return np.rint((plane - lo) / (hi - lo) * 255.0).astype(np.uint8)


def export_heatmap(inst, class_index: int, path) -> np.ndarray:
    m = inst.map.data if hasattr(inst, "map") else inst
    img = heatmap_image(m, class_index)
    try:
        write_pnm(path, img)
    except OSError as exc:
        raise OSError(f"cannot write heatmap to {path}: {exc}") from exc
    return img
