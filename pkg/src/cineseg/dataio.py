"""PGM images, dataset manifests, synthetic phantoms and checkpoints."""

import csv
import json
import math
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, IntegrityError, ParseError
from .images import DEFAULT_SPACING, Grayscale2D, MaskImage
from .network import Network, NetworkConfig
from .seeding import mix_seed

SPLITS = ("train", "val", "test")
MANIFEST_HEADER = ("patient_id", "split", "image", "mask")

CHECKPOINT_MAGIC = b"CSEG"
CHECKPOINT_VERSION = 1

_WS = b" \t\r\n\v\f"


# -- PGM -----------------------------------------------------------------------


def _header_token(data, pos):
    n = len(data)
    while pos < n:
        if data[pos] in _WS:
            pos += 1
        elif data[pos:pos + 1] == b"#":
            while pos < n and data[pos] not in b"\r\n":
                pos += 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in _WS and data[pos:pos + 1] != b"#":
        pos += 1
    if start == pos:
        raise ParseError("unexpected end of PGM header", start)
    tok = data[start:pos]
    if not tok.isdigit():
        raise ParseError(f"expected a decimal number in PGM header, got {tok!r}", start)
    return int(tok), pos


def parse_pgm(data, spacing_mm=DEFAULT_SPACING):
    """Decode binary (P5) PGM bytes into a Grayscale2D scaled to [0, 1]."""
    if len(data) < 2:
        raise ParseError("file too short for a PGM magic number", 0)
    magic = data[:2]
    if magic == b"P2":
        raise ParseError("ASCII PGM (P2) is not supported; convert to binary P5", 0)
    if magic != b"P5":
        raise ParseError(f"not a binary PGM: magic {magic!r}", 0)
    width, pos = _header_token(data, 2)
    height, pos = _header_token(data, pos)
    maxval, pos = _header_token(data, pos)
    if width < 1 or height < 1:
        raise ParseError(f"invalid PGM size {width}x{height}", pos)
    if not 1 <= maxval <= 65535:
        raise ParseError(f"PGM maxval {maxval} outside 1..65535", pos)
    if pos >= len(data) or data[pos] not in _WS:
        raise ParseError("missing whitespace after PGM maxval", pos)
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    need = width * height * np.dtype(dtype).itemsize
    have = len(data) - pos
    if have < need:
        raise ParseError(f"truncated PGM payload: need {need} bytes, found {have}", len(data))
    raw = np.frombuffer(data, dtype=dtype, count=width * height, offset=pos).reshape(height, width)
    if raw.max(initial=0) > maxval:
        raise ParseError(f"pixel value exceeds maxval {maxval}", pos)
    return Grayscale2D(raw.astype(np.float64) / maxval, spacing_mm)


def load_pgm(path, spacing_mm=DEFAULT_SPACING):
    return parse_pgm(Path(path).read_bytes(), spacing_mm)


def encode_pgm(pixels, maxval=65535):
    px = np.asarray(pixels, dtype=np.float64)
    if px.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {px.shape}")
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval must lie in 1..65535, got {maxval}")
    q = np.rint(np.clip(px, 0.0, 1.0) * maxval)
    body = q.astype(">u2" if maxval > 255 else "u1").tobytes()
    h, w = px.shape
    return f"P5\n{w} {h}\n{maxval}\n".encode("ascii") + body


def save_pgm(image, path, maxval=65535):
    px = image.pixels if isinstance(image, Grayscale2D) else image
    Path(path).write_bytes(encode_pgm(px, maxval))


def save_mask(mask, path):
    px = mask.pixels if isinstance(mask, MaskImage) else np.asarray(mask)
    Path(path).write_bytes(encode_pgm(px.astype(np.float64), 255))


def load_mask(path):
    return MaskImage((load_pgm(path).pixels >= 0.5).astype(np.uint8))


# -- manifests -----------------------------------------------------------------


@dataclass
class ManifestEntry:
    patient_id: str
    split: str
    image: Path
    mask: Path


@dataclass
class DatasetManifest:
    entries: list
    root: Path = field(default_factory=Path)

    def patients(self, split=None):
        return sorted({e.patient_id for e in self.entries if split is None or e.split == split})

    def select(self, split):
        return [e for e in self.entries if e.split == split]


def load_manifest(path, check_paths=True):
    """Read ``patient_id,split,image,mask`` CSV; paths are relative to the file."""
    path = Path(path)
    root = path.parent
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"manifest {path} is not UTF-8", exc.start) from exc
    rows = list(csv.reader(text.splitlines()))
    if not rows or tuple(c.strip() for c in rows[0]) != MANIFEST_HEADER:
        raise ConfigError(f"manifest header must be {','.join(MANIFEST_HEADER)}", field="manifest", line=1)
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise ConfigError(f"expected 4 columns, got {len(row)}", field="manifest", line=lineno)
        pid, split, img, msk = (c.strip() for c in row)
        if split and split not in SPLITS:
            raise ConfigError(f"split must be one of {SPLITS} or empty, got {split!r}", field="manifest", line=lineno)
        e = ManifestEntry(pid, split, root / img, root / msk)
        if check_paths:
            for p in (e.image, e.mask):
                if not p.is_file():
                    raise FileNotFoundError(f"manifest line {lineno}: {p} does not exist")
        entries.append(e)
    return DatasetManifest(entries, root)


def write_manifest(manifest, path):
    path = Path(path)
    base = path.parent.resolve()

    def rel(p):
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return p.as_posix()

    with path.open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(MANIFEST_HEADER)
        for e in manifest.entries:
            wr.writerow([e.patient_id, e.split, rel(e.image), rel(e.mask)])


def _split_counts(n, ratios):
    raw = [n * r for r in ratios]
    counts = [math.floor(x + 1e-9) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:n - sum(counts)]:
        counts[i] += 1
    for i, r in enumerate(ratios):
        if r > 0 and counts[i] == 0:
            donor = max(range(len(counts)), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1
    return counts


def split_by_patient(manifest, ratios=(1 / 3, 1 / 3, 1 / 3), seed=0):
    """Assign whole patients to train/val/test in the given proportions."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must be three non-negative values summing to 1, got {ratios}", field="ratios")
    patients = manifest.patients()
    nonzero = sum(r > 0 for r in ratios)
    if len(patients) < nonzero:
        raise ConfigError(f"{len(patients)} patient(s) cannot fill {nonzero} non-empty splits", field="ratios")
    order = np.random.default_rng(seed).permutation(len(patients))
    counts = _split_counts(len(patients), ratios)
    assign = {}
    start = 0
    for split, cnt in zip(SPLITS, counts):
        for idx in order[start:start + cnt]:
            assign[patients[idx]] = split
        start += cnt
    return DatasetManifest([replace(e, split=assign[e.patient_id]) for e in manifest.entries], manifest.root)


def load_split(manifest, split, spacing_mm=DEFAULT_SPACING):
    return [(load_pgm(e.image, spacing_mm), load_mask(e.mask)) for e in manifest.select(split)]


# -- synthetic phantoms --------------------------------------------------------


@dataclass
class PhantomParams:
    """Ranges (fractions of min(h, w) unless noted) the generator samples from."""

    radius: tuple = (0.18, 0.26)
    wall: tuple = (0.08, 0.14)
    center_jitter: float = 0.15
    background: tuple = (0.05, 0.15)
    blood: tuple = (0.45, 0.55)
    myocardium: tuple = (0.80, 0.90)
    noise: tuple = (0.02, 0.05)  # absolute intensity std
    spacing_mm: tuple = DEFAULT_SPACING


@dataclass
class PhantomGeometry:
    center: tuple
    radius: float
    wall: float
    noise: float


def gen_phantom(count, h, w, seed, params=None, return_geometry=False):
    """Short-axis LV stand-ins: mid-gray blood pool ringed by bright myocardium.

    The mask is the blood-pool disk: pixel centres within ``radius`` of the
    centre. Sample ``i`` is drawn from ``mix_seed(seed, i)``.
    """
    if h < 32 or w < 32:
        raise ConfigError(f"phantoms need h, w >= 32, got {h}x{w}", field="phantom_size")
    params = params or PhantomParams()
    rr, cc = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    side = min(h, w)
    out, geoms = [], []
    for i in range(count):
        rng = np.random.default_rng(mix_seed(seed, i))
        cy = (h - 1) / 2 + rng.uniform(-params.center_jitter, params.center_jitter) * h
        cx = (w - 1) / 2 + rng.uniform(-params.center_jitter, params.center_jitter) * w
        radius = rng.uniform(*params.radius) * side
        wall = rng.uniform(*params.wall) * side
        bg = rng.uniform(*params.background)
        blood = rng.uniform(*params.blood)
        myo = rng.uniform(*params.myocardium)
        sigma = rng.uniform(*params.noise)
        d = np.sqrt((rr - cy) ** 2 + (cc - cx) ** 2)
        inside = d <= radius
        img = np.where(inside, blood, np.where(d <= radius + wall, myo, bg))
        img = np.clip(img + rng.normal(0.0, sigma, size=(h, w)), 0.0, 1.0)
        out.append((Grayscale2D(img, params.spacing_mm), MaskImage(inside.astype(np.uint8))))
        geoms.append(PhantomGeometry((cy, cx), radius, wall, sigma))
    return (out, geoms) if return_geometry else out


# -- checkpoints ---------------------------------------------------------------


def _named_arrays(net):
    blobs = [(name, p.data) for name, p in net.named_parameters()]
    blobs += [(name, getattr(owner, attr)) for name, owner, attr in net.named_buffers()]
    return blobs


def encode_checkpoint(net, meta=None):
    header = json.dumps({"network": net.config.to_dict(), "meta": meta or {}}, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
    blobs = _named_arrays(net)
    parts.append(struct.pack("<I", len(blobs)))
    for name, arr in blobs:
        nb = name.encode("utf-8")
        arr = np.asarray(arr, dtype=np.float64)
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def save_checkpoint(net, path, meta=None):
    Path(path).write_bytes(encode_checkpoint(net, meta))


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise IntegrityError(f"checkpoint truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_checkpoint(data, config=None):
    """Rebuild a network from checkpoint bytes; returns (network, meta).

    If ``config`` is given it must match the stored architecture field by
    field, else ConfigError names the first differing field.
    """
    if len(data) < 16 or data[:4] != CHECKPOINT_MAGIC:
        raise IntegrityError("not a checkpoint (bad magic or too short)")
    body, trailer = data[:-4], data[-4:]
    if zlib.crc32(body) != struct.unpack("<I", trailer)[0]:
        raise IntegrityError("checkpoint CRC32 mismatch (file truncated or corrupted)")
    rd = _Reader(body)
    rd.take(4)
    version, hlen = rd.unpack("<II")
    if version != CHECKPOINT_VERSION:
        raise IntegrityError(f"unsupported checkpoint version {version}")
    try:
        header = json.loads(rd.take(hlen).decode("utf-8"))
        stored = NetworkConfig.from_dict(header["network"])
    except (ValueError, KeyError, TypeError) as exc:
        raise IntegrityError(f"bad checkpoint header: {exc}") from exc
    if config is not None:
        for key, val in config.to_dict().items():
            if stored.to_dict()[key] != val:
                raise ConfigError(f"checkpoint has {stored.to_dict()[key]!r}, config asks for {val!r}", field=key)
    net = Network(stored)
    targets = {name: ("param", p) for name, p in net.named_parameters()}
    targets.update({name: ("buffer", (owner, attr)) for name, owner, attr in net.named_buffers()})
    (count,) = rd.unpack("<I")
    seen = set()
    for _ in range(count):
        (nlen,) = rd.unpack("<H")
        name = rd.take(nlen).decode("utf-8")
        (ndim,) = rd.unpack("<B")
        shape = rd.unpack(f"<{ndim}I")
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(rd.take(8 * size), dtype="<f8").astype(np.float64).reshape(shape)
        if name not in targets:
            raise IntegrityError(f"checkpoint blob {name!r} does not belong to this architecture")
        kind, tgt = targets[name]
        if kind == "param":
            if tgt.shape != arr.shape:
                raise IntegrityError(f"blob {name!r} has shape {arr.shape}, expected {tgt.shape}")
            tgt.data = arr
        else:
            owner, attr = tgt
            setattr(owner, attr, arr)
        seen.add(name)
    missing = set(targets) - seen
    if missing:
        raise IntegrityError(f"checkpoint lacks {sorted(missing)[:3]}")
    if rd.pos != len(body):
        raise IntegrityError("trailing bytes after checkpoint blobs")
    return net, header.get("meta", {})


def load_checkpoint(path, config=None, with_meta=False):
    net, meta = decode_checkpoint(Path(path).read_bytes(), config)
    return (net, meta) if with_meta else net
