"""On-disk formats: the TDS dataset container and NPY/NPZ import/export.

TDS layout (little-endian):

    magic "CLRT" | u32 version=1 | u8 dtype code (1=float32, 2=uint8, 3=int32)
    | u32 ndim | u32 dims[ndim] | payload (row-major)
    | u32 label-count | int32 labels[]
    | u16 name-count | (u16 len, UTF-8 bytes) per name
    | u16 meta-count | (u16 len key, key, u16 len value, value) per pair
    | u64 checksum = FNV-1a(64) over all preceding bytes

NPZ import accepts ZIP archives (stored or deflated) of NPY v1.0 members;
headers are parsed by hand so unsupported versions, Fortran order, and
unexpected dtypes are rejected with precise errors.
"""

from __future__ import annotations

import ast
import io
import struct
import zipfile

import numpy as np

from .data import DatasetContainer

__all__ = [
    "FormatError",
    "write_tds",
    "read_tds",
    "import_npz",
    "export_npz",
    "write_npy",
    "read_npy",
    "export_labels_csv",
    "fnv1a64",
]

_MAGIC = b"CLRT"
_VERSION = 1
_DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.uint8): 2, np.dtype(np.int32): 3}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


class FormatError(ValueError):
    """Malformed or unsupported on-disk data; message names the offset."""


def fnv1a64(data: bytes) -> int:
    h = _FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise FormatError(f"string too long for u16 length prefix ({len(raw)} bytes)")
    return struct.pack("<H", len(raw)) + raw


def write_tds(c: DatasetContainer, path) -> None:
    if c.images.dtype not in _DTYPE_CODES:
        raise FormatError(f"unsupported image dtype {c.images.dtype}")
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<IB", _VERSION, _DTYPE_CODES[c.images.dtype]))
    buf.write(struct.pack("<I", c.images.ndim))
    buf.write(struct.pack(f"<{c.images.ndim}I", *c.images.shape))
    buf.write(np.ascontiguousarray(c.images).tobytes())
    labels = np.asarray(c.labels, dtype="<i4")
    buf.write(struct.pack("<I", labels.size))
    buf.write(labels.tobytes())
    buf.write(struct.pack("<H", len(c.class_names)))
    for name in c.class_names:
        buf.write(_pack_str(name))
    buf.write(struct.pack("<H", len(c.meta)))
    for key in sorted(c.meta):
        buf.write(_pack_str(key))
        buf.write(_pack_str(c.meta[key]))
    payload = buf.getvalue()
    with open(path, "wb") as f:
        f.write(payload)
        f.write(struct.pack("<Q", fnv1a64(payload)))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated payload reading {what} at offset {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what: str) -> str:
        (n,) = self.unpack("<H", f"{what} length")
        return self.take(n, what).decode("utf-8")


def read_tds(path) -> DatasetContainer:
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 8:
        raise FormatError("file shorter than checksum footer at offset 0")
    if raw[:4] != _MAGIC:
        raise FormatError("bad magic at offset 0")
    body, (stored,) = raw[:-8], struct.unpack("<Q", raw[-8:])
    actual = fnv1a64(body)
    if stored != actual:
        raise FormatError(f"checksum mismatch at offset {len(body)}: stored {stored:#x}, computed {actual:#x}")
    r = _Reader(body)
    if r.take(4, "magic") != _MAGIC:
        raise FormatError("bad magic at offset 0")
    version, code = r.unpack("<IB", "version/dtype")
    if version != _VERSION:
        raise FormatError(f"unsupported version {version} at offset 4")
    if code not in _CODE_DTYPES:
        raise FormatError(f"unknown dtype code {code} at offset 8")
    dtype = _CODE_DTYPES[code]
    (ndim,) = r.unpack("<I", "ndim")
    dims = r.unpack(f"<{ndim}I", "dims")
    count = int(np.prod(dims)) if dims else 1
    payload = r.take(count * dtype.itemsize, "tensor payload")
    images = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype).reshape(dims)
    (n_labels,) = r.unpack("<I", "label count")
    labels = np.frombuffer(r.take(4 * n_labels, "labels"), dtype="<i4").astype(np.int32)
    (n_names,) = r.unpack("<H", "name count")
    names = [r.string("class name") for _ in range(n_names)]
    (n_meta,) = r.unpack("<H", "meta count")
    meta = {}
    for _ in range(n_meta):
        key = r.string("meta key")
        meta[key] = r.string("meta value")
    if r.pos != len(body):
        raise FormatError(f"trailing bytes at offset {r.pos}")
    return DatasetContainer(images=images, labels=labels, class_names=names, meta=meta)


# -- NPY / NPZ ---------------------------------------------------------------

_NPY_MAGIC = b"\x93NUMPY"
_SUPPORTED_DESCRS = {"|u1", "<u1", "<i1", "|i1", "<i2", "<i4", "<i8", "<u2", "<u4", "<u8", "<f4", "<f8"}


def read_npy(raw: bytes, member: str = "<buffer>") -> np.ndarray:
    if raw[:6] != _NPY_MAGIC:
        raise FormatError(f"{member}: bad NPY magic at offset 0")
    major, minor = raw[6], raw[7]
    if (major, minor) != (1, 0):
        raise FormatError(f"{member}: unsupported NPY version {major}.{minor} at offset 6")
    (hlen,) = struct.unpack("<H", raw[8:10])
    header = raw[10:10 + hlen].decode("latin1")
    try:
        meta = ast.literal_eval(header)
    except (SyntaxError, ValueError) as exc:
        raise FormatError(f"{member}: unparseable NPY header at offset 10: {exc}") from exc
    descr, fortran, shape = meta["descr"], meta["fortran_order"], tuple(meta["shape"])
    if fortran:
        raise FormatError(f"{member}: fortran_order arrays are not supported")
    if descr not in _SUPPORTED_DESCRS:
        raise FormatError(f"{member}: unsupported dtype {descr!r}")
    dtype = np.dtype(descr)
    count = int(np.prod(shape)) if shape else 1
    start = 10 + hlen
    body = raw[start:start + count * dtype.itemsize]
    if len(body) != count * dtype.itemsize:
        raise FormatError(f"{member}: truncated payload at offset {start}")
    return np.frombuffer(body, dtype=dtype).reshape(shape).copy()


def write_npy(arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr)
    descr = arr.dtype.newbyteorder("<" if arr.dtype.itemsize > 1 else "|").str
    header = f"{{'descr': {descr!r}, 'fortran_order': False, 'shape': {arr.shape}, }}"
    pad = 64 - (10 + len(header) + 1) % 64
    header = header + " " * pad + "\n"
    return _NPY_MAGIC + bytes([1, 0]) + struct.pack("<H", len(header)) + header.encode("latin1") + arr.astype(arr.dtype.newbyteorder("<" if arr.dtype.itemsize > 1 else "|")).tobytes()


def _to_nchw(images: np.ndarray, member: str) -> np.ndarray:
    if images.ndim == 3:  # grayscale [N,H,W]
        return images[:, None, :, :]
    if images.ndim == 4:
        if images.shape[-1] in (1, 3):      # channel-last
            return np.transpose(images, (0, 3, 1, 2)).copy()
        if images.shape[1] in (1, 3):       # already channel-first
            return images
    raise FormatError(f"{member}: cannot interpret image shape {images.shape}")


def import_npz(path, images_key: str = "train_images", labels_key: str = "train_labels",
               class_names: list[str] | None = None) -> DatasetContainer:
    """Load one (images, labels) pair from a ZIP of NPY v1.0 members."""
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"not a ZIP archive: {exc}") from exc
    with zf:
        members = {n.removesuffix(".npy"): n for n in zf.namelist()}
        for key in (images_key, labels_key):
            if key not in members:
                raise KeyError(f"archive has no member {key!r}; available: {sorted(members)}")
        images = read_npy(zf.read(members[images_key]), images_key)
        labels = read_npy(zf.read(members[labels_key]), labels_key)
    if images.dtype != np.uint8:
        raise FormatError(f"{images_key}: expected uint8 images, got {images.dtype}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise FormatError(f"{labels_key}: expected integer labels, got {labels.dtype}")
    labels = labels.reshape(-1).astype(np.int32)
    images = _to_nchw(images, images_key)
    if images.shape[0] != labels.size:
        raise FormatError(f"images N={images.shape[0]} but labels N={labels.size}")
    k = int(labels.max()) + 1 if labels.size else 0
    names = class_names if class_names is not None else [f"class_{i}" for i in range(k)]
    return DatasetContainer(images=images, labels=labels, class_names=names,
                            meta={"source": str(path), "images_key": images_key})


def export_npz(path, arrays: dict[str, np.ndarray]) -> None:
    """Write arrays as stored NPY v1.0 members of a ZIP archive."""
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        for name, arr in arrays.items():
            zf.writestr(f"{name}.npy", write_npy(arr))


def export_labels_csv(c: DatasetContainer, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("index,label,class_name\n")
        for i, lab in enumerate(c.labels):
            f.write(f"{i},{int(lab)},{c.class_names[int(lab)]}\n")
