"""Image-pair datasets: directory loading, tiling, resizing and a synthetic
change generator with exact labels.

Directory layout::

    root/<id>/t1.png  t2.png  label.png     (or t1.scdt / t2.scdt / label.scdt)
    root/train.txt, root/test.txt           optional manifests, one id per line

Images are float arrays ``[C, H, W]`` scaled to [0, 1]; labels are uint8
``[H, W]`` with 1 = changed.
"""

from __future__ import annotations

import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .rawio import atomic_write, load_scdt, save_scdt

IMAGE_NAMES = ("t1", "t2", "label")
NOISE_FRACTION = 0.02  # uniform noise amplitude on T2, fraction of dynamic range


class DatasetError(ValueError):
    pass


@dataclass
class SamplePair:
    t1: np.ndarray
    t2: np.ndarray
    label: np.ndarray
    id: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.t1.ndim != 3 or self.t1.shape != self.t2.shape:
            raise DatasetError(f"{self.id}: t1 {self.t1.shape} and t2 {self.t2.shape} must be equal [C,H,W]")
        if self.label.shape != self.t1.shape[1:]:
            raise DatasetError(f"{self.id}: label {self.label.shape} does not match images {self.t1.shape[1:]}")

    @property
    def size(self) -> tuple:
        return self.t1.shape[1:]


@dataclass
class DatasetSplit:
    train: list
    test: list
    seed: int = 0

    def __post_init__(self):
        clash = {p.id for p in self.train} & {p.id for p in self.test}
        if clash:
            raise DatasetError(f"ids in both train and test: {sorted(clash)[:5]}")


# -- loading -------------------------------------------------------------


def _find(folder: Path, name: str) -> Path | None:
    for ext in (".png", ".scdt"):
        candidate = folder / f"{name}{ext}"
        if candidate.exists():
            return candidate
    return None


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".scdt":
        arr = load_scdt(path)
        return arr if arr.ndim == 3 else arr[None]
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L") if im.mode in ("L", "I", "1", "P") else im.convert("RGB"))
    arr = arr.astype(np.float32) / 255.0
    return arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1).copy()


def read_label(path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".scdt":
        arr = load_scdt(path)
        arr = arr[0] if arr.ndim == 3 else arr
    else:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("L"))
    return (arr != 0).astype(np.uint8)


def load_pair(folder) -> SamplePair:
    folder = Path(folder)
    sample_id = folder.name
    files = {}
    for name in IMAGE_NAMES:
        found = _find(folder, name)
        if found is None:
            raise DatasetError(f"{sample_id}: missing {name}.png")
        files[name] = found
    t1, t2 = read_image(files["t1"]), read_image(files["t2"])
    label = read_label(files["label"])
    if t1.shape != t2.shape or label.shape != t1.shape[1:]:
        raise DatasetError(
            f"{sample_id}: size mismatch t1 {t1.shape[1:]}, t2 {t2.shape[1:]}, label {label.shape}"
        )
    return SamplePair(t1, t2, label, sample_id)


def read_manifest(path) -> list:
    lines = Path(path).read_text().splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.lstrip().startswith("#")]


def load_dataset(root, ids=None) -> list:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset directory {root} does not exist")
    if ids is None:
        ids = sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))
    if not ids:
        raise DatasetError(f"no samples found under {root}")
    return [load_pair(root / i) for i in ids]


def load_split(root, seed: int = 0) -> DatasetSplit:
    """Split by ``train.txt``/``test.txt`` when present, else everything trains."""
    root = Path(root)
    train_m, test_m = root / "train.txt", root / "test.txt"
    if train_m.exists() or test_m.exists():
        train = load_dataset(root, read_manifest(train_m)) if train_m.exists() else []
        test = load_dataset(root, read_manifest(test_m)) if test_m.exists() else []
        return DatasetSplit(train, test, seed)
    return DatasetSplit(load_dataset(root), [], seed)


def _png_bytes(arr: np.ndarray) -> bytes:
    import io

    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def to_uint8(image: np.ndarray) -> np.ndarray:
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 3:
        arr = arr[0] if arr.shape[0] == 1 else arr.transpose(1, 2, 0)
    return arr


def write_png(path, image: np.ndarray) -> None:
    with atomic_write(path) as fh:
        fh.write(_png_bytes(to_uint8(image)))


def write_label_png(path, label: np.ndarray) -> None:
    with atomic_write(path) as fh:
        fh.write(_png_bytes((np.asarray(label) != 0).astype(np.uint8) * 255))


def write_pair(folder, pair: SamplePair, raw: bool = False) -> None:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    if raw:
        save_scdt(folder / "t1.scdt", pair.t1)
        save_scdt(folder / "t2.scdt", pair.t2)
    else:
        write_png(folder / "t1.png", pair.t1)
        write_png(folder / "t2.png", pair.t2)
    write_label_png(folder / "label.png", pair.label)


def manifest_files(split: DatasetSplit) -> dict:
    files = {"train.txt": "".join(f"{p.id}\n" for p in split.train)}
    if split.test:
        files["test.txt"] = "".join(f"{p.id}\n" for p in split.test)
    return files


def write_dataset(root, pairs, files: dict | None = None, raw: bool = False) -> None:
    """Write sample folders plus extra text ``files`` (manifests, sidecars).
    The directory appears at ``root`` only once complete."""
    root = Path(root)
    if root.exists() and any(root.iterdir()):
        raise DatasetError(f"output directory {root} is not empty")
    root.parent.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=f".{root.name}.", dir=root.parent))
    try:
        for pair in pairs:
            write_pair(staging / pair.id, pair, raw=raw)
        for name, text in (files or {}).items():
            (staging / name).write_text(text)
        if root.exists():
            root.rmdir()
        staging.rename(root)
    except BaseException:
        shutil.rmtree(staging, ignore_errors=True)
        raise


# -- patches and resizing ------------------------------------------------


def grid_positions(length: int, size: int, stride: int) -> list:
    """Window starts along one axis; a final window sits flush with the end."""
    if size > length:
        raise ValueError(f"patch size {size} exceeds image size {length}")
    if stride < 1:
        raise ValueError("stride must be positive")
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] != length - size:
        starts.append(length - size)
    return starts


def extract_patches(pair: SamplePair, size, stride=None) -> list:
    h, w = (size, size) if np.isscalar(size) else size
    if stride is None:
        stride = (h, w)
    sy, sx = (stride, stride) if np.isscalar(stride) else stride
    H, W = pair.size
    if h > H or w > W:
        raise ValueError(f"{pair.id}: patch {h}x{w} exceeds image {H}x{W}")
    patches = []
    for y in grid_positions(H, h, sy):
        for x in grid_positions(W, w, sx):
            patches.append(
                SamplePair(
                    pair.t1[:, y : y + h, x : x + w].copy(),
                    pair.t2[:, y : y + h, x : x + w].copy(),
                    pair.label[y : y + h, x : x + w].copy(),
                    f"{pair.id}@{y},{x}",
                    {"origin": (y, x), "source": pair.id},
                )
            )
    return patches


def stitch(tiles, origins, shape) -> np.ndarray:
    """Paste ``[..., h, w]`` tiles at their ``(y, x)`` origins into ``shape``."""
    first = np.asarray(tiles[0])
    out = np.zeros(tuple(shape), dtype=first.dtype)
    for tile, (y, x) in zip(tiles, origins):
        tile = np.asarray(tile)
        out[..., y : y + tile.shape[-2], x : x + tile.shape[-1]] = tile
    return out


def _axis_coords(n_out: int, n_in: int) -> np.ndarray:
    if n_out == 1:
        return np.zeros(1)
    return np.arange(n_out) * ((n_in - 1) / (n_out - 1))


def resize(image: np.ndarray, target, mode: str = "bilinear") -> np.ndarray:
    """Corner-aligned bilinear (images) or nearest (labels) resampling of the
    last two axes."""
    h, w = target
    if h < 1 or w < 1:
        raise ValueError("target dimensions must be positive")
    arr = np.asarray(image)
    H, W = arr.shape[-2:]
    ys, xs = _axis_coords(h, H), _axis_coords(w, W)
    if mode == "nearest":
        yi = np.minimum(np.floor(ys + 0.5).astype(int), H - 1)
        xi = np.minimum(np.floor(xs + 0.5).astype(int), W - 1)
        return arr[..., yi[:, None], xi[None, :]]
    if mode != "bilinear":
        raise ValueError(f"unknown resize mode {mode!r}")
    y0 = np.minimum(np.floor(ys).astype(int), H - 1)
    x0 = np.minimum(np.floor(xs).astype(int), W - 1)
    y1, x1 = np.minimum(y0 + 1, H - 1), np.minimum(x0 + 1, W - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    src = arr.astype(np.float64)
    top = src[..., y0[:, None], x0[None, :]] * (1 - fx) + src[..., y0[:, None], x1[None, :]] * fx
    bottom = src[..., y1[:, None], x0[None, :]] * (1 - fx) + src[..., y1[:, None], x1[None, :]] * fx
    out = top * (1 - fy) + bottom * fy
    return out.astype(arr.dtype if arr.dtype.kind == "f" else np.float64)


def resize_pair(pair: SamplePair, target) -> SamplePair:
    return SamplePair(
        resize(pair.t1, target), resize(pair.t2, target),
        resize(pair.label, target, mode="nearest"), pair.id, dict(pair.meta),
    )


# -- synthetic data ------------------------------------------------------

PALETTE = np.array(
    [
        [0.95, 0.15, 0.10],
        [0.10, 0.85, 0.20],
        [0.15, 0.20, 0.95],
        [0.95, 0.90, 0.10],
        [0.90, 0.15, 0.90],
        [0.10, 0.90, 0.90],
        [0.98, 0.98, 0.98],
        [0.02, 0.02, 0.02],
    ]
)


def rasterize(shape: dict, size) -> np.ndarray:
    """Boolean mask of a ``rect`` or ``ellipse`` record."""
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    cy, cx, ry, rx = shape["cy"], shape["cx"], shape["ry"], shape["rx"]
    if shape["kind"] == "rect":
        return (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    return ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0


def _background(rng, size) -> np.ndarray:
    h, w = size
    base = rng.uniform(0.35, 0.6, size=3)
    yy, xx = np.mgrid[0:h, 0:w] / max(h, w)
    tex = np.zeros((h, w))
    for _ in range(3):
        fy, fx = rng.uniform(1, 6, size=2)
        tex += np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    tex /= 3.0
    tint = rng.uniform(0.04, 0.08, size=3)
    return base[:, None, None] + tint[:, None, None] * tex[None]


def _random_shape(rng, size, max_area: float) -> dict:
    h, w = size
    area = rng.uniform(0.4, 1.0) * max_area
    aspect = rng.uniform(0.6, 1.6)
    ry = max(1.0, np.sqrt(area * aspect) / 2)
    rx = max(1.0, np.sqrt(area / aspect) / 2)
    return {
        "kind": "rect" if rng.random() < 0.5 else "ellipse",
        "cy": float(rng.uniform(0, h - 1)),
        "cx": float(rng.uniform(0, w - 1)),
        "ry": float(ry),
        "rx": float(rx),
    }


def _paint(image: np.ndarray, shapes: list, size) -> None:
    for s in shapes:
        image[:, rasterize(s, size)] = PALETTE[s["color"]][:, None]


def synth_pair(seed: int, index: int, size=(64, 64), change_fraction: float = 0.1) -> SamplePair:
    """One synthetic pair; randomness depends only on ``(seed, index)``."""
    size = (size, size) if isinstance(size, int) else tuple(size)
    h, w = size
    rng = np.random.default_rng([seed, index])
    npix = h * w
    colors = list(rng.permutation(len(PALETTE)))

    persistent = []
    for _ in range(rng.integers(1, 4)):
        s = _random_shape(rng, size, 0.04 * npix)
        s["color"] = int(colors[0])
        persistent.append(s)

    removed, added = [], []
    label = np.zeros((h, w), dtype=bool)
    target = change_fraction * npix
    max_area = max(4.0, min(0.5 * target, 0.25 * npix))
    k = 0
    while label.sum() < 0.9 * target and k < 64:
        s = _random_shape(rng, size, max_area)
        # removed and added shapes draw from disjoint palette slices
        if rng.random() < 0.5:
            s["color"] = int(colors[1 + k % 3])
            removed.append(s)
        else:
            s["color"] = int(colors[4 + k % 4])
            added.append(s)
        label |= rasterize(s, size)
        k += 1

    background = _background(rng, size)
    t1 = background.copy()
    _paint(t1, persistent + removed, size)
    t2 = background.copy()
    _paint(t2, persistent + added, size)
    t2 += rng.uniform(-NOISE_FRACTION, NOISE_FRACTION, size=t2.shape)
    np.clip(t2, 0.0, 1.0, out=t2)
    return SamplePair(
        t1.astype(np.float32), t2.astype(np.float32), label.astype(np.uint8),
        f"synth{seed}_{index:05d}",
        {"persistent": persistent, "removed": removed, "added": added},
    )


def synth_generate(seed: int, count: int, size=(64, 64), change_fraction: float = 0.1, start: int = 0) -> list:
    if not 0 < change_fraction < 0.5:
        raise ValueError("change_fraction must lie in (0, 0.5)")
    return [synth_pair(seed, start + i, size, change_fraction) for i in range(count)]
