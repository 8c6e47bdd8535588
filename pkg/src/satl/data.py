"""Datasets: synthetic two-domain generation, directory ingestion, splits,
deterministic batching, and the binary pack format.

Synthetic images mimic the structure of a fundus photograph at desk scale:
a bright elliptical disc containing a brighter inner cup on a dark field.
The label is 1 exactly when the vertical cup/disc diameter ratio exceeds a
threshold, so labels are noise-free functions of the generated geometry.
Domain shift is purely photometric (tint, contrast, brightness, blur,
noise): it changes the marginal pixel distribution while leaving the
label-given-geometry relationship untouched.
"""

import csv
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .engine.prng import Prng
from .engine.tensor import Tensor
from .errors import ContractError, GeometryError, IngestionError

PACK_MAGIC = b"SATD"
_UNLABELED = 255
_BASE_TINT = np.array([1.0, 0.62, 0.40], dtype=np.float64)  # fundus-like cast
_MAX_PLACEMENT_TRIES = 100


@dataclass
class LabeledImage:
    pixels: np.ndarray  # (C, H, W) float32 in [0, 1]
    label: Optional[int]
    id: str
    cdr: Optional[float] = None  # synthetic items record their true ratio
    geometry: Optional[dict] = None  # transient; not persisted in packs


@dataclass
class DatasetIndex:
    items: list
    domain_tag: str

    def __len__(self) -> int:
        return len(self.items)

    @property
    def labeled(self) -> bool:
        return all(item.label is not None for item in self.items)

    @property
    def class_counts(self) -> Optional[tuple]:
        """(negatives, positives), or None for (partially) unlabeled sets."""
        if not self.labeled:
            return None
        labels = [item.label for item in self.items]
        return (labels.count(0), labels.count(1))

    def image_shape(self) -> tuple:
        return tuple(self.items[0].pixels.shape)

    def unlabeled_view(self) -> "DatasetIndex":
        """Same pixels, labels stripped (what the adaptation phase sees)."""
        items = [
            LabeledImage(pixels=i.pixels, label=None, id=i.id, cdr=None, geometry=None)
            for i in self.items
        ]
        return DatasetIndex(items, self.domain_tag)


@dataclass(frozen=True)
class DomainStyle:
    """Photometric transform applied per image, in this order:
    contrast (about 0.5), per-channel tint, brightness offset, box blur,
    gaussian noise, clamp to [0, 1]. Identity parameters skip their stage,
    so an all-identity style is a bit-exact no-op."""

    background_tint: tuple = (0.0, 0.0, 0.0)
    contrast: float = 1.0
    noise_std: float = 0.0
    blur_radius: int = 0
    brightness_offset: float = 0.0

    def __post_init__(self):
        if self.contrast <= 0:
            raise ContractError("contrast must be positive")
        if self.noise_std < 0:
            raise ContractError("noise_std must be >= 0")
        if self.blur_radius < 0 or int(self.blur_radius) != self.blur_radius:
            raise ContractError("blur_radius must be a non-negative integer")
        if len(self.background_tint) != 3:
            raise ContractError("background_tint must have 3 channels")

    @property
    def is_identity(self) -> bool:
        return (
            tuple(self.background_tint) == (0.0, 0.0, 0.0)
            and self.contrast == 1.0
            and self.noise_std == 0.0
            and self.blur_radius == 0
            and self.brightness_offset == 0.0
        )


# preset name -> (style, default positive fraction)
#
# The shifted presets raise contrast (plus flavor differences in tint, noise,
# blur, brightness). On contrast-raised targets a classifier trained on the
# neutral source preset keeps its ranking ability but over-fires, piling up
# false positives, the miscalibration regime the adaptation phase repairs.
STYLE_PRESETS: dict = {
    "source": (DomainStyle(noise_std=0.02), 0.5),
    "shiftA": (
        DomainStyle(
            background_tint=(0.02, 0.03, 0.01),
            contrast=1.18,
            noise_std=0.03,
            blur_radius=0,
            brightness_offset=0.0,
        ),
        0.5,
    ),
    "shiftB": (
        DomainStyle(
            background_tint=(0.01, 0.01, 0.05),
            contrast=1.32,
            noise_std=0.045,
            blur_radius=1,
            brightness_offset=0.03,
        ),
        0.5,
    ),
    "skewed": (
        DomainStyle(
            background_tint=(0.015, 0.015, 0.01),
            contrast=1.06,
            noise_std=0.025,
            blur_radius=0,
            brightness_offset=0.01,
        ),
        0.1,
    ),
}


# ---------------------------------------------------------------------------
# style application


def _box_blur(img: np.ndarray, radius: int) -> np.ndarray:
    """Separable box blur with edge-replicated borders (float64 in/out)."""
    k = 2 * radius + 1
    c, h, w = img.shape
    p = np.pad(img, ((0, 0), (radius, radius), (0, 0)), mode="edge")
    v = np.zeros((c, h, w), dtype=np.float64)
    for dy in range(k):
        v += p[:, dy : dy + h, :]
    p = np.pad(v, ((0, 0), (0, 0), (radius, radius)), mode="edge")
    out = np.zeros((c, h, w), dtype=np.float64)
    for dx in range(k):
        out += p[:, :, dx : dx + w]
    return out / (k * k)


def apply_style(pixels: np.ndarray, style: DomainStyle, rng: Optional[Prng]) -> np.ndarray:
    """Transform one (C, H, W) image; returns float32 clamped to [0, 1]."""
    if style.is_identity:
        return pixels.astype(np.float32, copy=True)
    x = pixels.astype(np.float64)
    if style.contrast != 1.0:
        x = (x - 0.5) * style.contrast + 0.5
    tint = np.asarray(style.background_tint, dtype=np.float64)
    if np.any(tint != 0.0):
        x = x + tint[:, None, None]
    if style.brightness_offset != 0.0:
        x = x + style.brightness_offset
    if style.blur_radius > 0:
        x = _box_blur(x, int(style.blur_radius))
    if style.noise_std > 0.0:
        if rng is None:
            raise ContractError("noise_std > 0 requires a prng")
        x = x + style.noise_std * rng.normal(x.shape)
    return np.clip(x, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# synthetic generation


def _draw_geometry(rng: Prng, label: int, h: int, w: int, cdr_threshold: float) -> dict:
    """One attempt at placing disc and cup; raises GeometryError off-frame."""
    bg = rng.uniform_in(0.10, 0.18)
    disc_level = rng.uniform_in(0.52, 0.58)
    cup_level = rng.uniform_in(0.85, 0.91)
    rv_d = h * rng.uniform_in(0.24, 0.34)
    rh_d = rv_d * rng.uniform_in(0.85, 1.15)
    cx = w * (0.5 + rng.uniform_in(-0.08, 0.08))
    cy = h * (0.5 + rng.uniform_in(-0.08, 0.08))
    if label == 1:
        cdr = rng.uniform_in(cdr_threshold + 0.05, 0.95)
    else:
        cdr = rng.uniform_in(0.20, cdr_threshold - 0.05)
    rv_c = cdr * rv_d
    rh_c = rv_c * rng.uniform_in(0.90, 1.10)
    off_x = rng.uniform_in(-1.0, 1.0) * 0.5 * max(rh_d - rh_c, 0.0)
    off_y = rng.uniform_in(-1.0, 1.0) * 0.5 * (rv_d - rv_c)

    if not (cy - rv_d >= 2.0 and cy + rv_d <= h - 3.0 and cx - rh_d >= 2.0 and cx + rh_d <= w - 3.0):
        raise GeometryError("disc exceeds frame")
    if rh_c > rh_d * 0.98:
        raise GeometryError("cup exceeds disc horizontally")
    return {
        "bg": bg,
        "disc_level": disc_level,
        "cup_level": cup_level,
        "cx": cx,
        "cy": cy,
        "rv_d": rv_d,
        "rh_d": rh_d,
        "rv_c": rv_c,
        "rh_c": rh_c,
        "cup_cx": cx + off_x,
        "cup_cy": cy + off_y,
        "cdr": cdr,
    }


def _ellipse_alpha(
    yy: np.ndarray, xx: np.ndarray, cx: float, cy: float, rv: float, rh: float
) -> np.ndarray:
    """Soft-edged ellipse coverage in [0, 1]; the 0.5 level sits exactly on
    the ellipse boundary, which the measurement oracle relies on."""
    field = np.sqrt(((yy - cy) / rv) ** 2 + ((xx - cx) / rh) ** 2)
    edge_px = 0.5 * (rv + rh)
    return np.clip((1.0 - field) * edge_px + 0.5, 0.0, 1.0)


def render_image(geom: dict, h: int, w: int) -> np.ndarray:
    """Rasterize a geometry dict to a (3, h, w) float image (no style)."""
    yy = np.arange(h, dtype=np.float64)[:, None]
    xx = np.arange(w, dtype=np.float64)[None, :]
    a_disc = _ellipse_alpha(yy, xx, geom["cx"], geom["cy"], geom["rv_d"], geom["rh_d"])
    a_cup = _ellipse_alpha(yy, xx, geom["cup_cx"], geom["cup_cy"], geom["rv_c"], geom["rh_c"])
    intensity = (
        geom["bg"]
        + a_disc * (geom["disc_level"] - geom["bg"])
        + a_cup * (geom["cup_level"] - geom["disc_level"])
    )
    return (intensity[None, :, :] * _BASE_TINT[:, None, None]).astype(np.float64)


def generate_synthetic(
    n: int,
    pos_ratio: float,
    style: DomainStyle,
    image_size: tuple = (64, 64),
    cdr_threshold: float = 0.6,
    prng: Optional[Prng] = None,
    domain_tag: str = "synthetic",
) -> DatasetIndex:
    """Exactly round(n * pos_ratio) positives; labels exact by construction.

    Positives draw the cup/disc ratio from [threshold+0.05, 0.95], negatives
    from [0.20, threshold-0.05]; the 0.05 margin keeps the task learnable.
    """
    if n <= 0:
        raise ContractError("n must be positive")
    if not 0.0 < pos_ratio < 1.0:
        raise ContractError("pos_ratio must be in (0, 1)")
    if not 0.25 < cdr_threshold < 0.90:
        raise ContractError(
            "cdr_threshold must be in (0.25, 0.90) so both label ranges are non-empty"
        )
    if prng is None:
        raise ContractError("generate_synthetic requires a prng")
    h, w = (int(v) for v in image_size)
    if h < 16 or w < 16:
        raise ContractError(f"image_size {image_size} too small to render geometry")

    n_pos = int(round(n * pos_ratio))
    labels = [1] * n_pos + [0] * (n - n_pos)
    prng.split(0).shuffle(labels)

    items = []
    for i, label in enumerate(labels):
        item_rng = prng.split(1 + i)
        geom = None
        for _ in range(_MAX_PLACEMENT_TRIES):
            try:
                geom = _draw_geometry(item_rng, label, h, w, cdr_threshold)
                break
            except GeometryError:
                continue
        if geom is None:
            raise GeometryError(f"item {i}: no valid geometry in {_MAX_PLACEMENT_TRIES} tries")
        pixels = apply_style(render_image(geom, h, w), style, item_rng)
        items.append(
            LabeledImage(
                pixels=pixels,
                label=label,
                id=f"{domain_tag}-{i:05d}",
                cdr=geom["cdr"],
                geometry=geom,
            )
        )
    return DatasetIndex(items, domain_tag)


def apply_domain_shift(
    ds: DatasetIndex, style: DomainStyle, prng: Prng, domain_tag: Optional[str] = None
) -> DatasetIndex:
    """Pixel transform only: labels, ids, and item count are preserved."""
    items = []
    for i, item in enumerate(ds.items):
        items.append(
            replace(item, pixels=apply_style(item.pixels, style, prng.split(1 + i)))
        )
    return DatasetIndex(items, domain_tag or f"{ds.domain_tag}~styled")


# ---------------------------------------------------------------------------
# splitting and batching


def stratified_split(
    ds: DatasetIndex, train_fraction: float = 0.7, prng: Optional[Prng] = None
) -> "tuple[DatasetIndex, DatasetIndex]":
    """Per class: floor(train_fraction * n_c) shuffled items to train, rest
    to validation. Both classes must be present."""
    if not 0.0 < train_fraction < 1.0:
        raise ContractError("train_fraction must be in (0, 1)")
    if not ds.labeled:
        raise ContractError("stratified_split needs a fully labeled dataset")
    if prng is None:
        raise ContractError("stratified_split requires a prng")
    by_class = {0: [], 1: []}
    for i, item in enumerate(ds.items):
        by_class[item.label].append(i)
    for c in (0, 1):
        if not by_class[c]:
            raise ContractError(f"class {c} has no items; cannot split")

    train_idx: list = []
    val_idx: list = []
    for c in (0, 1):
        idx = list(by_class[c])
        prng.split(c).shuffle(idx)
        take = int(train_fraction * len(idx))
        train_idx.extend(idx[:take])
        val_idx.extend(idx[take:])
    train_idx.sort()
    val_idx.sort()
    train = DatasetIndex([ds.items[i] for i in train_idx], f"{ds.domain_tag}/train")
    val = DatasetIndex([ds.items[i] for i in val_idx], f"{ds.domain_tag}/val")
    return train, val


class Batch:
    __slots__ = ("x", "labels", "ids")

    def __init__(self, x: Tensor, labels: Optional[np.ndarray], ids: list):
        self.x = x
        self.labels = labels
        self.ids = ids


def batches(
    ds: DatasetIndex, batch_size: int = 16, prng: Optional[Prng] = None
) -> Iterator[Batch]:
    """One epoch of batches; shuffled when a prng is given, in dataset order
    otherwise. The final partial batch is kept."""
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    order = list(range(len(ds.items)))
    if prng is not None:
        prng.shuffle(order)
    has_labels = ds.labeled
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        x = np.stack([ds.items[i].pixels for i in chunk]).astype(np.float32)
        labels = (
            np.array([ds.items[i].label for i in chunk], dtype=np.int64)
            if has_labels
            else None
        )
        yield Batch(Tensor(x), labels, [ds.items[i].id for i in chunk])


# ---------------------------------------------------------------------------
# directory ingestion (PPM P6 + labels CSV)


def _read_ppm(path: Path) -> np.ndarray:
    """Decode a binary P6 PPM (maxval 255) into (3, H, W) float64 in [0,1]."""
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise IngestionError(f"{path}: {e}") from None

    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(raw):
            ch = raw[pos : pos + 1]
            if ch == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            elif ch.isspace():
                pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise IngestionError(f"{path}: truncated PPM header")
        return raw[start:pos]

    if token() != b"P6":
        raise IngestionError(f"{path}: not a binary PPM (P6) file")
    try:
        width, height, maxval = int(token()), int(token()), int(token())
    except ValueError:
        raise IngestionError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise IngestionError(f"{path}: unsupported maxval {maxval} (only 255)")
    pos += 1  # single whitespace after maxval
    expected = width * height * 3
    data = raw[pos : pos + expected]
    if len(data) != expected:
        raise IngestionError(f"{path}: pixel payload truncated")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(height, width, 3)
    return arr.transpose(2, 0, 1).astype(np.float64) / 255.0


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resampling of a (C, H, W) image at aligned pixel centers."""
    c, h, w = img.shape
    if (h, w) == (out_h, out_w):
        return img.copy()
    sy = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    sx = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    y0 = np.floor(sy).astype(np.intp)
    x0 = np.floor(sx).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (sy - y0)[None, :, None]
    fx = (sx - x0)[None, None, :]
    top = img[:, y0[:, None], x0[None, :]] * (1 - fx) + img[:, y0[:, None], x1[None, :]] * fx
    bot = img[:, y1[:, None], x0[None, :]] * (1 - fx) + img[:, y1[:, None], x1[None, :]] * fx
    return top * (1 - fy) + bot * fy


def load_directory(
    path, labels_csv=None, image_size: tuple = (64, 64), domain_tag: Optional[str] = None
) -> DatasetIndex:
    """Ingest a directory of P6 PPM images, optionally labeled by a CSV of
    "filename,label" rows; images are bilinearly resized to image_size."""
    root = Path(path)
    if not root.is_dir():
        raise IngestionError(f"{root}: not a directory")
    h, w = (int(v) for v in image_size)
    tag = domain_tag or root.name

    entries: list
    if labels_csv is not None:
        csv_path = Path(labels_csv)
        try:
            with open(csv_path, newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        except OSError as e:
            raise IngestionError(f"{csv_path}: {e}") from None
        if not rows or [v.strip() for v in rows[0]] != ["filename", "label"]:
            raise IngestionError(f'{csv_path}: first row must be the header "filename,label"')
        entries = []
        for ln, row in enumerate(rows[1:], start=2):
            if len(row) != 2:
                raise IngestionError(f"{csv_path}:{ln}: expected 2 fields, got {len(row)}")
            name, label_s = row[0].strip(), row[1].strip()
            if label_s not in ("0", "1"):
                raise IngestionError(f"{csv_path}:{ln}: label must be 0 or 1, got {label_s!r}")
            entries.append((name, int(label_s)))
    else:
        entries = [(p.name, None) for p in sorted(root.glob("*.ppm"))]
        if not entries:
            raise IngestionError(f"{root}: no .ppm files found")

    items = []
    for name, label in entries:
        img_path = root / name
        if not img_path.is_file():
            raise IngestionError(f"{img_path}: referenced by CSV but missing")
        img = _read_ppm(img_path)
        resized = np.clip(resize_bilinear(img, h, w), 0.0, 1.0).astype(np.float32)
        items.append(LabeledImage(pixels=resized, label=label, id=name))
    return DatasetIndex(items, tag)


# ---------------------------------------------------------------------------
# binary pack persistence
#
# layout (integers little-endian):
#   magic "SATD" | u32 item count
#   per item: u32 id length | id utf-8 | u8 label (0/1/255=unlabeled)
#             u32 H | u32 W | u32 C | f32 payload in (C, H, W) order


def save_pack(ds: DatasetIndex, path) -> None:
    out = bytearray()
    out += PACK_MAGIC
    out += struct.pack("<I", len(ds.items))
    for item in ds.items:
        ib = item.id.encode()
        c, h, w = item.pixels.shape
        label = _UNLABELED if item.label is None else int(item.label)
        out += struct.pack("<I", len(ib))
        out += ib
        out += struct.pack("<B", label)
        out += struct.pack("<III", h, w, c)
        out += item.pixels.astype("<f4", copy=False).tobytes()
    with open(path, "wb") as fh:
        fh.write(bytes(out))


def load_pack(path, domain_tag: Optional[str] = None) -> DatasetIndex:
    p = Path(path)
    try:
        buf = p.read_bytes()
    except OSError as e:
        raise IngestionError(f"{p}: {e}") from None
    if buf[:4] != PACK_MAGIC:
        raise IngestionError(f"{p}: bad magic (not a dataset pack)")
    pos = 4

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise IngestionError(f"{p}: truncated pack")
        b = buf[pos : pos + n]
        pos += n
        return b

    (count,) = struct.unpack("<I", take(4))
    items = []
    for _ in range(count):
        (idlen,) = struct.unpack("<I", take(4))
        item_id = take(idlen).decode()
        (label_b,) = struct.unpack("<B", take(1))
        h, w, c = struct.unpack("<III", take(12))
        payload = take(4 * c * h * w)
        pixels = np.frombuffer(payload, dtype="<f4").reshape(c, h, w).copy()
        label = None if label_b == _UNLABELED else int(label_b)
        if label not in (None, 0, 1):
            raise IngestionError(f"{p}: item {item_id!r} has invalid label byte {label_b}")
        items.append(LabeledImage(pixels=pixels, label=label, id=item_id))
    if pos != len(buf):
        raise IngestionError(f"{p}: {len(buf) - pos} trailing bytes")
    return DatasetIndex(items, domain_tag or p.stem)


def write_manifest(path, payload: dict) -> None:
    """JSON sidecar describing how a pack was generated."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
