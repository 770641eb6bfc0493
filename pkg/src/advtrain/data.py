"""Datasets, on-disk formats and persistence helpers.

On-disk formats are little-endian and versioned:

* tensor file: ``b"ADVTTNSR"``, u32 version, u8 dtype code, 3 pad bytes,
  u32 ndim, ``ndim`` u64 dims, raw payload.
* checkpoint: ``b"ADVTCKPT"``, u32 version, u64 header length, UTF-8 JSON
  header (model spec, per-layer shape table, dtype, rng, provenance), then
  every weight and bias as float64 in layer order. Flattening of conv
  activations into the first fully connected layer is channel-major (C, H, W).
* dataset directory: ``manifest.json`` plus ``<split>_images.tensor`` and
  ``<split>_labels.tensor`` per split.
"""
from __future__ import annotations

import contextlib
import fcntl
import hashlib
import io
import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .network import WeightedModel, param_shapes, spec_from_dict
from .seeding import stream


class DataError(ValueError):
    """Malformed or inconsistent input data."""


class CheckpointError(DataError):
    pass


@dataclass
class LabeledDataset:
    images: np.ndarray  # (N, C, H, W), values in [0, 255]
    labels: np.ndarray  # (N,) int64
    split: str = "train"
    name: str = "dataset"
    class_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise DataError(f"images must be (N, C, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if self.class_names and len(self.labels) and self.labels.max() >= len(self.class_names):
            raise DataError(f"label {self.labels.max()} >= class count {len(self.class_names)}")
        if len(self.labels) and self.labels.min() < 0:
            raise DataError("negative label")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names) if self.class_names else int(self.labels.max()) + 1

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images.shape[1:])

    def subset(self, idx) -> "LabeledDataset":
        return LabeledDataset(self.images[idx], self.labels[idx], self.split, self.name, list(self.class_names))


# --- grayscale and CIFAR-10 -------------------------------------------------------

BT601 = (0.299, 0.587, 0.114)


def grayscale(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma over the channel axis (-3); ``(..., 3, H, W) -> (..., 1, H, W)``."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.shape[-3] != 3:
        raise DataError(f"expected 3 colour channels on axis -3, got shape {rgb.shape}")
    r, g, b = rgb[..., 0, :, :], rgb[..., 1, :, :], rgb[..., 2, :, :]
    y = BT601[0] * r + BT601[1] * g + BT601[2] * b
    return np.clip(y, 0.0, 255.0)[..., None, :, :]


CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_CLASSES = ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"]


def parse_cifar10(raw: bytes, gray: bool = True) -> tuple[np.ndarray, np.ndarray]:
    if len(raw) % CIFAR_RECORD:
        raise DataError(
            f"truncated CIFAR-10 data: {len(raw)} bytes is not a multiple of {CIFAR_RECORD}"
        )
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    if len(labels) and labels.max() >= 10:
        raise DataError(f"CIFAR-10 label {labels.max()} out of range")
    images = rec[:, 1:].reshape(-1, 3, 32, 32).astype(np.float64)
    return (grayscale(images) if gray else images), labels


def load_cifar10(path, split: str | None = None, gray: bool = True) -> LabeledDataset:
    """Load a CIFAR-10 binary batch file, or a directory of them.

    For a directory, ``split="train"`` reads ``data_batch_1..5.bin`` and
    ``split="test"`` reads ``test_batch.bin``.
    """
    path = Path(path)
    if path.is_dir():
        if split not in ("train", "test"):
            raise DataError("loading a CIFAR-10 directory needs split='train' or 'test'")
        names = [f"data_batch_{i}.bin" for i in range(1, 6)] if split == "train" else ["test_batch.bin"]
        files = [path / n for n in names]
        missing = [str(f) for f in files if not f.exists()]
        if missing:
            raise DataError(f"missing CIFAR-10 files: {missing}")
    elif path.exists():
        files = [path]
    else:
        raise DataError(f"no such file or directory: {path}")
    parts = [parse_cifar10(f.read_bytes(), gray) for f in files]
    images = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    return LabeledDataset(images, labels, split or "train", "cifar10", list(CIFAR_CLASSES))


# --- synthetic shapes -------------------------------------------------------------

SHAPES = ["circle", "square", "triangle", "cross"]
_SUPERSAMPLE = 4


def _coverage(kind: str, size: int, cy: float, cx: float, r: float, theta: float) -> np.ndarray:
    """Fraction of each pixel covered by the shape, by supersampling."""
    s = _SUPERSAMPLE
    t = (np.arange(size * s) + 0.5) / s - 0.5
    yy, xx = np.meshgrid(t - cy, t - cx, indexing="ij")
    c, sn = math.cos(theta), math.sin(theta)
    u, v = c * xx + sn * yy, -sn * xx + c * yy
    if kind == "circle":
        inside = u * u + v * v <= r * r
    elif kind == "square":
        h = 0.8 * r
        inside = (np.abs(u) <= h) & (np.abs(v) <= h)
    elif kind == "triangle":
        # equilateral, circumradius r, apex up in the shape frame
        inside = (v <= r / 2) & (math.sqrt(3) * u - v <= r) & (-math.sqrt(3) * u - v <= r)
    elif kind == "cross":
        arm = 0.3 * r
        inside = ((np.abs(u) <= arm) & (np.abs(v) <= r)) | ((np.abs(v) <= arm) & (np.abs(u) <= r))
    else:
        raise ValueError(f"unknown shape {kind!r}")
    return inside.reshape(size, s, size, s).mean(axis=(1, 3))


def render_shape(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    """One ``(size, size)`` image: a filled shape over a noisy, shaded background."""
    r = rng.uniform(0.3, 0.42) * size
    cy, cx = (size - 1) / 2 + rng.uniform(-0.1, 0.1, size=2) * size
    theta = rng.uniform(0, 2 * math.pi)
    bg = rng.uniform(50, 205)
    contrast = rng.uniform(90, 150) * (1 if rng.random() < 0.5 else -1)
    fg = np.clip(bg + contrast, 0, 255)
    gy, gx = rng.normal(0, 0.5, size=2)
    yy, xx = np.mgrid[0:size, 0:size] - (size - 1) / 2
    cov = _coverage(kind, size, cy, cx, r, theta)
    img = bg + gy * yy + gx * xx
    img = img * (1 - cov) + fg * cov
    img = img + rng.normal(0, 4.0, size=(size, size))
    return np.clip(img, 0, 255)


def synth_shapes(
    classes: int = 4, count: int = 2000, size: int = 32, seed: int = 0, split: str = "train"
) -> LabeledDataset:
    """Deterministic shape-recognition set; labels cycle so classes are balanced exactly
    when ``count`` is a multiple of ``classes`` (otherwise they differ by at most one)."""
    if not 1 <= classes <= len(SHAPES):
        raise ValueError(f"classes must be in [1, {len(SHAPES)}], got {classes}")
    rng = stream(seed, "synth_shapes", split)
    labels = np.arange(count) % classes
    labels = labels[rng.permutation(count)]
    images = np.stack([render_shape(SHAPES[l], size, rng) for l in labels])[:, None]
    return LabeledDataset(images, labels, split, f"synth_shapes-{classes}", SHAPES[:classes])


def synth_videos(
    stills: LabeledDataset, frames: int, seed: int = 0, max_shift: int = 2, noise_std: float = 4.0
) -> list["VideoRecord"]:
    """Turn each still into a short 'video' of randomly shifted, re-noised copies."""
    rng = stream(seed, "synth_videos", stills.split)
    videos = []
    for i, (img, label) in enumerate(zip(stills.images, stills.labels)):
        fr = []
        for _ in range(frames):
            dy, dx = rng.integers(-max_shift, max_shift + 1, size=2)
            shifted = np.roll(img, (int(dy), int(dx)), axis=(-2, -1))
            fr.append(np.clip(shifted + rng.normal(0, noise_std, size=img.shape), 0, 255))
        videos.append(VideoRecord(f"{stills.split}-{i:05d}", int(label), np.stack(fr)))
    return videos


@dataclass
class VideoRecord:
    video_id: str
    label: int
    frames: np.ndarray  # (F, C, H, W)


# --- tensor files -----------------------------------------------------------------

_TENSOR_MAGIC = b"ADVTTNSR"
_TENSOR_VERSION = 1
_DTYPES = {0: "<f8", 1: "<f4", 2: "<i8", 3: "u1"}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


@contextlib.contextmanager
def _locked_writer(path: Path):
    """Exclusive lock on ``path.lock`` while writing to a temp file renamed into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lock_path = path.with_name(path.name + ".lock")
    with open(lock_path, "w") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        tmp = path.with_name(path.name + ".tmp")
        try:
            with open(tmp, "wb") as f:
                yield f
            os.replace(tmp, path)
        finally:
            if tmp.exists():
                tmp.unlink()
            fcntl.flock(lock, fcntl.LOCK_UN)
    with contextlib.suppress(FileNotFoundError):
        lock_path.unlink()


def tensor_bytes(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    dt = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
    if np.dtype(dt) not in _DTYPE_CODES:
        raise DataError(f"unsupported tensor dtype {arr.dtype}")
    code = _DTYPE_CODES[np.dtype(dt)]
    head = _TENSOR_MAGIC + struct.pack("<IB3xI", _TENSOR_VERSION, code, arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()


def parse_tensor(raw: bytes) -> np.ndarray:
    if raw[:8] != _TENSOR_MAGIC:
        raise DataError("not a tensor file (bad magic)")
    version, code, ndim = struct.unpack_from("<IB3xI", raw, 8)
    if version != _TENSOR_VERSION:
        raise DataError(f"unsupported tensor file version {version}")
    if code not in _DTYPES:
        raise DataError(f"unknown dtype code {code}")
    off = 20
    dims = struct.unpack_from(f"<{ndim}Q", raw, off)
    off += 8 * ndim
    dt = np.dtype(_DTYPES[code])
    expected = int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(raw) - off != expected:
        raise DataError(f"tensor payload is {len(raw) - off} bytes, header implies {expected}")
    return np.frombuffer(raw, dtype=dt, offset=off).reshape(dims).astype(dt.newbyteorder("="))


def write_tensor(path, arr: np.ndarray) -> None:
    with _locked_writer(Path(path)) as f:
        f.write(tensor_bytes(arr))


def read_tensor(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such tensor file: {path}")
    return parse_tensor(path.read_bytes())


# --- dataset directories ----------------------------------------------------------


def save_dataset(root, splits: dict[str, LabeledDataset], **extra) -> dict:
    """Write splits and a manifest; ``extra`` (e.g. ``degrade``, ``seed``) goes into the manifest."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    first = next(iter(splits.values()))
    manifest = {
        "name": first.name,
        "image_shape": list(first.image_shape),
        "class_names": list(first.class_names),
        "source_format": extra.pop("source_format", "tensor"),
        "splits": {},
    }
    manifest.update(extra)
    for name, ds in splits.items():
        write_tensor(root / f"{name}_images.tensor", ds.images)
        write_tensor(root / f"{name}_labels.tensor", ds.labels)
        manifest["splits"][name] = {
            "count": len(ds),
            "images": f"{name}_images.tensor",
            "labels": f"{name}_labels.tensor",
        }
    write_json(root / "manifest.json", manifest)
    return manifest


def read_manifest(root) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DataError(f"no dataset manifest at {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"unreadable manifest {path}: {e}") from e


def load_dataset(root, split: str = "train") -> LabeledDataset:
    root = Path(root)
    manifest = read_manifest(root)
    if split not in manifest.get("splits", {}):
        raise DataError(f"dataset {root} has no split {split!r}")
    entry = manifest["splits"][split]
    images = read_tensor(root / entry["images"]).astype(np.float64)
    labels = read_tensor(root / entry["labels"]).astype(np.int64)
    if len(images) != entry["count"] or len(labels) != entry["count"]:
        raise DataError(
            f"split {split!r}: manifest says {entry['count']} records, found "
            f"{len(images)} images and {len(labels)} labels"
        )
    return LabeledDataset(images, labels, split, manifest.get("name", root.name), manifest.get("class_names", []))


# --- video directories ------------------------------------------------------------


def save_videos(root, videos: list[VideoRecord], class_names=(), **extra) -> dict:
    """One subdirectory of frame tensors per video, listed in order in the manifest."""
    root = Path(root)
    entries = []
    for v in videos:
        names = []
        for j, frame in enumerate(v.frames):
            rel = f"{v.video_id}/frame_{j:05d}.tensor"
            write_tensor(root / rel, frame)
            names.append(rel)
        entries.append({"id": v.video_id, "label": int(v.label), "frames": names})
    manifest = {"type": "videos", "class_names": list(class_names), "videos": entries, **extra}
    write_json(root / "manifest.json", manifest)
    return manifest


def load_videos(root) -> list[VideoRecord]:
    root = Path(root)
    manifest = read_manifest(root)
    if manifest.get("type") != "videos":
        raise DataError(f"{root} is not a video directory")
    out = []
    for e in manifest["videos"]:
        frames = np.stack([read_tensor(root / f) for f in e["frames"]]).astype(np.float64)
        out.append(VideoRecord(e["id"], int(e["label"]), frames))
    return out


# --- checkpoints ------------------------------------------------------------------

_CKPT_MAGIC = b"ADVTCKPT"
_CKPT_VERSION = 1


def checkpoint_bytes(model: WeightedModel) -> bytes:
    shapes = [[list(w.shape), list(b.shape)] for w, b in model.params]
    header = {
        "spec": model.spec.to_dict(),
        "shapes": shapes,
        "dtype": str(model.dtype),
        "rng": {"seed": model.seed},
        "provenance": model.provenance,
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for pair in model.params for a in pair
    )
    return _CKPT_MAGIC + struct.pack("<IQ", _CKPT_VERSION, len(hb)) + hb + payload


def parse_checkpoint(raw: bytes) -> WeightedModel:
    if raw[:8] != _CKPT_MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    if len(raw) < 20:
        raise CheckpointError("truncated checkpoint header")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from e
    spec = spec_from_dict(header["spec"])
    expected = [[list(w), list(b)] for w, b in param_shapes(spec.layers, spec.input_shape)]
    if header["shapes"] != expected:
        raise CheckpointError("shape table does not match the model spec")
    dtype = np.dtype(header["dtype"])
    off = 20 + hlen
    n_values = sum(int(np.prod(s)) for pair in expected for s in pair)
    if len(raw) - off != 8 * n_values:
        raise CheckpointError(f"payload is {len(raw) - off} bytes, shape table implies {8 * n_values}")
    flat = np.frombuffer(raw, dtype="<f8", offset=off)
    params, pos = [], 0
    for pair in expected:
        arrs = []
        for s in pair:
            n = int(np.prod(s))
            arrs.append(flat[pos:pos + n].reshape(s).astype(dtype))
            pos += n
        params.append(arrs)
    return WeightedModel(spec, params, header["rng"].get("seed"), header.get("provenance", {}))


def model_hash(model: WeightedModel) -> str:
    return hashlib.sha256(checkpoint_bytes(model)).hexdigest()


def save_checkpoint(path, model: WeightedModel) -> str:
    """Write ``model`` and return the sha256 of the file contents."""
    raw = checkpoint_bytes(model)
    with _locked_writer(Path(path)) as f:
        f.write(raw)
    return hashlib.sha256(raw).hexdigest()


def load_checkpoint(path) -> WeightedModel:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"no such checkpoint: {path}")
    return parse_checkpoint(path.read_bytes())


# --- metrics, json, images --------------------------------------------------------


class MetricsLog:
    """Append-only JSON-lines log; each record is written with one ``write`` under a lock."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)

    def __call__(self, record: dict) -> None:
        self.append(record)

    def append(self, record: dict) -> None:
        line = (json.dumps(record, sort_keys=True) + "\n").encode("utf-8")
        fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
        try:
            fcntl.flock(fd, fcntl.LOCK_EX)
            os.write(fd, line)
        finally:
            fcntl.flock(fd, fcntl.LOCK_UN)
            os.close(fd)


def read_metrics(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def write_json(path, obj) -> None:
    with _locked_writer(Path(path)) as f:
        f.write((json.dumps(obj, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Round to nearest (halves away from zero) and clamp to 8 bits."""
    return np.clip(np.floor(np.asarray(img, dtype=np.float64) + 0.5), 0, 255).astype(np.uint8)


def save_image(path, img: np.ndarray) -> None:
    """Write a ``(H, W)``, ``(1, H, W)`` or ``(3, H, W)`` image as PNG or PGM/PPM (by suffix)."""
    from PIL import Image

    a = np.asarray(img)
    if a.ndim == 3:
        a = a[0] if a.shape[0] == 1 else a.transpose(1, 2, 0)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    fmt = {".png": "PNG", ".pgm": "PPM", ".ppm": "PPM"}.get(path.suffix.lower())
    if fmt is None:
        raise DataError(f"unsupported image format {path.suffix!r} (use .png, .pgm or .ppm)")
    Image.fromarray(to_uint8(a)).save(buf, format=fmt)
    with _locked_writer(path) as f:
        f.write(buf.getvalue())
