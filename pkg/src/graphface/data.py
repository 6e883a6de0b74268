"""Dataset ingestion, crops, image conversion and the tensor container format.

The container is a little-endian binary file of named arrays:

    magic   4 bytes  b"MFGT"
    version u32      currently 1
    count   u32      number of entries
    entry   name_len u16, name utf-8, dtype u8 (0=float32, 1=float64,
            2=uint8), rank u8, dims u32 * rank, payload row-major bytes

Loads reproduce names, shapes, dtypes and bytes exactly. Writes go to a
temp file in the target directory and are renamed into place.
"""
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .degrade import bicubic_resize

MAGIC = b"MFGT"
CONTAINER_VERSION = 1
DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1, np.dtype(np.uint8): 2}
CODE_DTYPES = {0: np.float32, 1: np.float64, 2: np.uint8}

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".bmp")

# CelebA standard split sizes; subsampled sets keep these proportions.
SPLIT_SIZES = {"train": 162770, "val": 19867, "test": 19962}
SPLIT_TOTAL = sum(SPLIT_SIZES.values())

ALIGN_SIZE = 144
CROP_SIZE = 128


class ContainerError(ValueError):
    pass


# ---------------------------------------------------------------------------
# images

def list_images(folder):
    folder = Path(folder)
    names = [p for p in folder.iterdir()
             if p.is_file() and p.suffix.lower() in IMAGE_EXTENSIONS]
    return sorted(names, key=lambda p: p.name.encode("utf-8"))


def load_image(path):
    """Decode to (H, W, 3) uint8 RGB."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)


def save_image(path, arr):
    """Write (H, W, 3) RGB or (H, W) grayscale uint8 as an image file."""
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(arr).save(path)


def to_network(img):
    """(H, W, 3) uint8 -> (3, H, W) float32 in [-1, 1] (x/127.5 - 1)."""
    arr = np.asarray(img, dtype=np.float32) / 127.5 - 1.0
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def from_network(chw):
    """(3, H, W) float in [-1, 1] -> (H, W, 3) uint8."""
    arr = (np.asarray(chw, dtype=np.float64).transpose(1, 2, 0) + 1.0) * 127.5
    return np.clip(np.round(arr), 0, 255).astype(np.uint8)


def load_aligned(path, target=ALIGN_SIZE):
    """Decode and bicubic-resize to target x target if needed."""
    img = load_image(path)
    if img.shape[0] != target or img.shape[1] != target:
        img = np.moveaxis(bicubic_resize(np.moveaxis(img, 2, 0), target, target), 0, 2)
    return img


def random_crop_128(img144, rng):
    """Uniform 128x128 crop of a 144x144 image; offsets in [0, 16]^2."""
    arr = np.asarray(img144)
    if arr.shape[0] != ALIGN_SIZE or arr.shape[1] != ALIGN_SIZE:
        raise ValueError(f"expected {ALIGN_SIZE}x{ALIGN_SIZE} input, got {arr.shape[:2]}")
    r = int(rng.integers(0, ALIGN_SIZE - CROP_SIZE + 1))
    c = int(rng.integers(0, ALIGN_SIZE - CROP_SIZE + 1))
    return arr[r:r + CROP_SIZE, c:c + CROP_SIZE]


# ---------------------------------------------------------------------------
# manifests

@dataclass
class DatasetManifest:
    root: str
    entries: list = field(default_factory=list)  # (relative path, split)
    aligned: bool = True

    def files(self, split=None):
        if split is None:
            return [Path(self.root) / rel for rel, _ in self.entries]
        return [Path(self.root) / rel for rel, sp in self.entries if sp == split]

    def counts(self):
        out = {"train": 0, "val": 0, "test": 0}
        for _, sp in self.entries:
            out[sp] += 1
        return out

    def save(self, path):
        text = "".join(f"{rel}\t{sp}\n" for rel, sp in self.entries)
        _atomic_write(path, text.encode("utf-8"))

    @classmethod
    def load(cls, path, root):
        entries = []
        with open(path, "r", encoding="utf-8") as fh:
            for ln in fh:
                ln = ln.rstrip("\n")
                if not ln:
                    continue
                rel, sp = ln.split("\t")
                if sp not in SPLIT_SIZES:
                    raise ValueError(f"manifest {path}: unknown split {sp!r}")
                entries.append((rel, sp))
        return cls(root=str(root), entries=entries)


def split_counts(n):
    """Proportional CelebA-style split: floor for train, nearest for val, rest test."""
    train = int(np.floor(n * SPLIT_SIZES["train"] / SPLIT_TOTAL))
    val = int(round(n * SPLIT_SIZES["val"] / SPLIT_TOTAL))
    val = min(val, n - train)
    return train, val, n - train - val


def ingest_folder(path, target=ALIGN_SIZE):
    """Validate a folder of pre-aligned face images and assign splits.

    Files are ordered by bytewise filename sort; undecodable files are
    skipped with a warning count. Images are resized to target x target on
    load (see load_aligned), not rewritten on disk.
    """
    path = Path(path)
    names = list_images(path)
    good, skipped = [], []
    for p in names:
        try:
            with Image.open(p) as im:
                im.verify()
            good.append(p.name)
        except Exception:
            skipped.append(p.name)
    if skipped:
        print(f"warning: skipped {len(skipped)} undecodable file(s): {', '.join(skipped)}")
    if not good:
        print(f"notice: no usable images found in {path}")
    n_train, n_val, _ = split_counts(len(good))
    entries = []
    for i, name in enumerate(good):
        split = "train" if i < n_train else ("val" if i < n_train + n_val else "test")
        entries.append((name, split))
    return DatasetManifest(root=str(path), entries=entries, aligned=True)


# ---------------------------------------------------------------------------
# tensor container

def save_container(path, tensors):
    """Write a name -> ndarray mapping; names must be unique and non-empty."""
    items = list(tensors.items())
    seen = set()
    for name, _ in items:
        if not name:
            raise ContainerError("empty tensor name")
        if name in seen:
            raise ContainerError(f"duplicate tensor name {name!r}")
        seen.add(name)
    chunks = [MAGIC, struct.pack("<II", CONTAINER_VERSION, len(items))]
    for name, arr in items:
        arr = np.asarray(arr)
        if arr.dtype not in DTYPE_CODES:
            raise ContainerError(f"tensor {name!r} has unsupported dtype {arr.dtype}")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ContainerError(f"tensor name too long: {name[:32]!r}...")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<BB", DTYPE_CODES[arr.dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        chunks.append(np.ascontiguousarray(le).tobytes())
    _atomic_write(path, b"".join(chunks))


def load_container(path):
    """Read a container back into an ordered name -> ndarray dict."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ContainerError(f"{path}: bad magic {data[:4]!r}, expected {MAGIC!r}")
    off = 4
    version, count = _unpack(data, off, "<II", path)
    off += 8
    if version != CONTAINER_VERSION:
        raise ContainerError(f"{path}: unsupported version {version}")
    out = {}
    for _ in range(count):
        (name_len,) = _unpack(data, off, "<H", path)
        off += 2
        if off + name_len > len(data):
            raise ContainerError(f"{path}: truncated name field")
        name = data[off:off + name_len].decode("utf-8")
        off += name_len
        dtype_code, rank = _unpack(data, off, "<BB", path)
        off += 2
        if dtype_code not in CODE_DTYPES:
            raise ContainerError(f"{path}: tensor {name!r} has unknown dtype code {dtype_code}")
        dims = _unpack(data, off, f"<{rank}I", path)
        off += 4 * rank
        dtype = np.dtype(CODE_DTYPES[dtype_code])
        nbytes = dtype.itemsize * int(np.prod(dims, dtype=np.int64)) if rank else dtype.itemsize
        if off + nbytes > len(data):
            raise ContainerError(f"{path}: truncated payload for tensor {name!r}")
        arr = np.frombuffer(data[off:off + nbytes], dtype=dtype.newbyteorder("<"))
        off += nbytes
        if name in out:
            raise ContainerError(f"{path}: duplicate tensor name {name!r}")
        out[name] = arr.astype(dtype, copy=True).reshape(dims)
    if off != len(data):
        raise ContainerError(f"{path}: {len(data) - off} trailing byte(s) after last tensor")
    return out


def container_entry_size(name, arr):
    """Documented byte cost of one entry (used by the size audit)."""
    arr = np.asarray(arr)
    return 2 + len(name.encode("utf-8")) + 2 + 4 * arr.ndim + arr.nbytes


def _unpack(data, off, fmt, path):
    size = struct.calcsize(fmt)
    if off + size > len(data):
        raise ContainerError(f"{path}: truncated header")
    return struct.unpack_from(fmt, data, off)


def _atomic_write(path, payload):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(payload)
    os.replace(tmp, path)
