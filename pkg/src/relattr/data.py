"""Dataset ingestion, a procedural toy dataset, and triplet sampling.

Three concerns live here: parsing the CelebA-style attribute annotation
format, rendering a small synthetic dataset whose binary attributes each
control one visual factor, and sampling the (x1, x2, x3) triplets that the
matching loss consumes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
from PIL import Image

from .types import AttributeVector, DimensionError, ImageBatch, RangeError


class AttributeFileError(ValueError):
    """Malformed attribute annotation file; carries the offending line number."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class AttributeTable:
    """Ordered (image_id, binary attributes) annotations sharing one name registry."""

    names: tuple[str, ...]
    image_ids: tuple[str, ...]
    values: np.ndarray  # (N, n) in {0, 1}

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.int64)
        if arr.ndim != 2 or arr.shape != (len(self.image_ids), len(self.names)):
            raise DimensionError(
                f"values shape {arr.shape} does not match "
                f"{len(self.image_ids)} ids x {len(self.names)} names"
            )
        if not np.isin(arr, (0, 1)).all():
            raise RangeError("attribute table values must be 0 or 1")
        if len(set(self.image_ids)) != len(self.image_ids):
            raise ValueError("duplicate image_ids in attribute table")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "image_ids", tuple(self.image_ids))

    def __len__(self) -> int:
        return len(self.image_ids)

    def entries(self) -> Iterator[tuple[str, AttributeVector]]:
        for i, image_id in enumerate(self.image_ids):
            yield image_id, AttributeVector(self.values[i], self.names)

    def attributes_of(self, image_id: str) -> AttributeVector:
        try:
            idx = self.image_ids.index(image_id)
        except ValueError:
            raise KeyError(image_id) from None
        return AttributeVector(self.values[idx], self.names)


def parse_attribute_file(text) -> AttributeTable:
    """Parse the CelebA list-attribute layout.

    Line 1 is the row count, line 2 the attribute names, each further line
    an image filename followed by one -1/+1 value per name. On-disk -1 maps
    to 0 and +1 to 1.
    """
    if hasattr(text, "read"):
        text = text.read()
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    lines = text.splitlines()
    if not lines:
        raise AttributeFileError("empty attribute file", 1)

    try:
        count = int(lines[0].strip())
    except ValueError:
        raise AttributeFileError(f"invalid row count {lines[0].strip()!r}", 1) from None
    if count < 0:
        raise AttributeFileError(f"negative row count {count}", 1)
    if len(lines) < 2:
        raise AttributeFileError("missing attribute-name line", 2)
    names = tuple(lines[1].split())
    if not names:
        raise AttributeFileError("no attribute names", 2)

    ids: list[str] = []
    seen: set[str] = set()
    rows: list[list[int]] = []
    for line_no, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        fields = line.split()
        if len(fields) != 1 + len(names):
            raise AttributeFileError(
                f"expected filename plus {len(names)} values, got {len(fields)} fields",
                line_no,
            )
        image_id, raw = fields[0], fields[1:]
        if image_id in seen:
            raise AttributeFileError(f"duplicate image id {image_id!r}", line_no)
        row = []
        for token in raw:
            if token == "1":
                row.append(1)
            elif token == "-1":
                row.append(0)
            else:
                raise AttributeFileError(
                    f"value {token!r} not in {{-1,+1}}", line_no
                )
        seen.add(image_id)
        ids.append(image_id)
        rows.append(row)

    if len(rows) != count:
        raise AttributeFileError(
            f"header declared {count} rows but file has {len(rows)} (end of file)",
            len(lines) + 1,
        )
    values = np.array(rows, dtype=np.int64) if rows else np.zeros((0, len(names)), np.int64)
    return AttributeTable(names=names, image_ids=tuple(ids), values=values)


def serialize_attribute_table(table: AttributeTable) -> str:
    """Inverse of parse_attribute_file (0 -> -1, 1 -> +1, single-space separated)."""
    lines = [str(len(table)), " ".join(table.names)]
    for i, image_id in enumerate(table.image_ids):
        vals = " ".join("1" if v else "-1" for v in table.values[i])
        lines.append(f"{image_id} {vals}")
    return "\n".join(lines) + "\n"


# --- toy dataset -----------------------------------------------------------

TOY_ATTRIBUTE_NAMES = (
    "warm_hue",
    "light_background",
    "border",
    "large_shape",
    "stripes",
    "corner_dot",
    "square_shape",
    "second_dot",
)

_FG_WARM = np.array([0.63, 0.00, -0.49])
_FG_COOL = np.array([-0.49, -0.07, 0.63])
_BG_LIGHT = 0.38
_BG_DARK = -0.45
_BORDER_COLOR = np.array([0.63, 0.63, 0.63])
_STRIPE_COLOR = np.array([-0.14, -0.14, -0.14])
_CORNER_COLOR = np.array([0.66, 0.56, -0.56])
_SECOND_COLOR = np.array([-0.56, 0.49, 0.63])


@dataclass(frozen=True)
class ToySpec:
    """Geometry and seeding of the procedural toy dataset."""

    n_attributes: int = 4
    image_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.n_attributes <= 8:
            raise RangeError(f"n_attributes must be in [2, 8], got {self.n_attributes}")
        if self.image_size % 64 or self.image_size <= 0:
            raise RangeError(
                f"image_size must be a positive multiple of 64, got {self.image_size}"
            )

    @property
    def names(self) -> tuple[str, ...]:
        return TOY_ATTRIBUTE_NAMES[: self.n_attributes]


def render_toy_image(spec: ToySpec, attributes: AttributeVector, instance_seed: int) -> ImageBatch:
    """Render one toy image; each binary attribute toggles one visual factor.

    Nuisance randomness (center jitter, pixel noise) depends only on
    (spec.seed, instance_seed), never on the attributes, so flipping one
    attribute leaves every pixel outside that factor's region untouched.
    """
    if attributes.n != spec.n_attributes:
        raise DimensionError(
            f"got {attributes.n} attributes for a {spec.n_attributes}-attribute spec"
        )
    size = spec.image_size
    scale = size // 64
    rng = np.random.default_rng((spec.seed, int(instance_seed)))
    jitter = rng.uniform(-0.06, 0.06, size=2)
    noise = rng.normal(0.0, 0.005, size=(size, size, 3))

    a = np.zeros(len(TOY_ATTRIBUTE_NAMES), dtype=np.int64)  # absent factors stay off
    a[: attributes.n] = attributes.values
    fg = _FG_WARM if a[0] else _FG_COOL
    bg = _BG_LIGHT if a[1] else _BG_DARK
    radius = (0.30 if a[3] else 0.17) * size
    square = bool(a[6])

    canvas = np.full((size, size, 3), bg, dtype=np.float64)

    ys, xs = np.mgrid[0:size, 0:size]
    cy = size * (0.5 + jitter[0])
    cx = size * (0.5 + jitter[1])
    dy = ys + 0.5 - cy
    dx = xs + 0.5 - cx
    if square:
        dist = np.maximum(np.abs(dy), np.abs(dx)) - radius
    else:
        dist = np.hypot(dy, dx) - radius
    coverage = np.clip(0.5 - dist, 0.0, 1.0)[:, :, None]  # 1px soft edge
    canvas = canvas * (1.0 - coverage) + fg * coverage

    if a[4]:
        band = 4 * scale
        stripe_rows = (ys // band) % 2 == 1
        canvas[stripe_rows] = 0.5 * canvas[stripe_rows] + 0.5 * _STRIPE_COLOR

    if a[2]:
        w = 3 * scale
        canvas[:w] = _BORDER_COLOR
        canvas[-w:] = _BORDER_COLOR
        canvas[:, :w] = _BORDER_COLOR
        canvas[:, -w:] = _BORDER_COLOR

    if a[5]:
        lo, hi = 6 * scale, 14 * scale
        canvas[lo:hi, lo:hi] = _CORNER_COLOR
    if a[7]:
        lo, hi = size - 14 * scale, size - 6 * scale
        canvas[lo:hi, lo:hi] = _SECOND_COLOR

    canvas = np.clip(canvas + noise, -1.0, 1.0)
    return ImageBatch(canvas[None].astype(np.float32))


def _to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round((img + 1.0) * 127.5), 0, 255).astype(np.uint8)


def _to_float(img: np.ndarray) -> np.ndarray:
    return img.astype(np.float32) / 127.5 - 1.0


_EVAL_SEED_OFFSET = 1_000_000_000


def build_toy_dataset(spec: ToySpec, n_train: int, n_eval: int) -> "ToyDataset":
    """Render a toy dataset fully in memory (uint8 arrays, no files)."""
    images: dict = {}
    labels: dict = {}
    for split, n, label_stream, seed_base in (
        ("train", n_train, 1, 0),
        ("eval", n_eval, 2, _EVAL_SEED_OFFSET),
    ):
        label_rng = np.random.default_rng((spec.seed, label_stream))
        labs = label_rng.integers(0, 2, size=(n, spec.n_attributes))
        imgs = np.zeros((n, spec.image_size, spec.image_size, 3), np.uint8)
        for i in range(n):
            av = AttributeVector(labs[i], spec.names)
            imgs[i] = _to_uint8(render_toy_image(spec, av, seed_base + i).data[0])
        images[split] = imgs
        labels[split] = labs.astype(np.int64)
    return ToyDataset(spec=spec, names=spec.names, images=images, labels=labels)


def make_toy_dataset(spec: ToySpec, n_train: int, n_eval: int, out_dir) -> Path:
    """Render a full toy dataset to ``out_dir`` (PNG images plus manifest.json)."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    dataset = build_toy_dataset(spec, n_train, n_eval)
    manifest = {
        "spec": {
            "n_attributes": spec.n_attributes,
            "image_size": spec.image_size,
            "seed": spec.seed,
        },
        "attribute_names": list(spec.names),
        "splits": {},
    }
    for split in ("train", "eval"):
        rows = []
        for i in range(dataset.size(split)):
            name = f"images/{split}_{i:06d}.png"
            Image.fromarray(dataset.images[split][i]).save(out / name)
            rows.append({"file": name, "attributes": dataset.labels[split][i].tolist()})
        manifest["splits"][split] = {"size": dataset.size(split), "entries": rows}
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=1))
    return manifest_path


@dataclass
class ToyDataset:
    """In-memory toy dataset: uint8 images and binary labels per split."""

    spec: ToySpec
    names: tuple[str, ...]
    images: dict  # split -> (N, S, S, 3) uint8
    labels: dict  # split -> (N, n) int64

    def size(self, split: str) -> int:
        return len(self.images[split])

    def table(self, split: str) -> AttributeTable:
        n = self.size(split)
        ids = tuple(f"{split}_{i:06d}.png" for i in range(n))
        return AttributeTable(self.names, ids, self.labels[split])

    def fetch(self, split: str) -> Callable[[np.ndarray], np.ndarray]:
        images = self.images[split]

        def get(indices: np.ndarray) -> np.ndarray:
            return _to_float(images[np.asarray(indices)])

        return get

    def batch(self, split: str, indices) -> ImageBatch:
        return ImageBatch(self.fetch(split)(np.asarray(indices)))


def load_toy_dataset(root) -> ToyDataset:
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    spec = ToySpec(**manifest["spec"])
    names = tuple(manifest["attribute_names"])
    images: dict = {}
    labels: dict = {}
    for split, info in manifest["splits"].items():
        imgs, labs = [], []
        for row in info["entries"]:
            with Image.open(root / row["file"]) as im:
                imgs.append(np.asarray(im.convert("RGB")))
            labs.append(row["attributes"])
        images[split] = np.stack(imgs) if imgs else np.zeros((0, spec.image_size, spec.image_size, 3), np.uint8)
        labels[split] = np.array(labs, dtype=np.int64).reshape(len(imgs), len(names))
    return ToyDataset(spec=spec, names=names, images=images, labels=labels)


def _center_square(im: Image.Image) -> Image.Image:
    side = min(im.size)
    left = (im.width - side) // 2
    top = (im.height - side) // 2
    return im.crop((left, top, left + side, top + side))


def load_png(path, *, size: int | None = None) -> ImageBatch:
    """Read one image file into a batch of 1, optionally center-crop-resized."""
    with Image.open(path) as im:
        im = im.convert("RGB")
        if size is not None and im.size != (size, size):
            im = _center_square(im).resize((size, size), Image.BILINEAR)
        return ImageBatch(_to_float(np.asarray(im))[None])


def save_png(batch: ImageBatch, path, index: int = 0):
    Image.fromarray(_to_uint8(batch.data[index])).save(path)


def load_image_folder(attr_path, image_dir, image_size: int):
    """Load a real dataset: attribute annotations plus a folder of images.

    Images are center-cropped to square then resized. Returns the table and
    a fetch callable compatible with sample_triplets.
    """
    table = parse_attribute_file(Path(attr_path).read_bytes())
    image_dir = Path(image_dir)

    def load_one(image_id: str) -> np.ndarray:
        with Image.open(image_dir / image_id) as im:
            im = _center_square(im.convert("RGB"))
            im = im.resize((image_size, image_size), Image.BILINEAR)
            return np.asarray(im)

    def fetch(indices: np.ndarray) -> np.ndarray:
        return _to_float(np.stack([load_one(table.image_ids[i]) for i in np.asarray(indices)]))

    return table, fetch


# --- triplet sampling ------------------------------------------------------


@dataclass(frozen=True)
class TripletBatch:
    """Inputs for one matching-loss step: three images with their labels per row."""

    x1: ImageBatch
    x2: ImageBatch
    x3: ImageBatch
    a1: tuple[AttributeVector, ...]
    a2: tuple[AttributeVector, ...]
    a3: tuple[AttributeVector, ...]

    def __post_init__(self):
        if not (self.x1.data.shape == self.x2.data.shape == self.x3.data.shape):
            raise DimensionError("triplet image batches must share one shape")
        b = self.x1.batch_size
        if not (len(self.a1) == len(self.a2) == len(self.a3) == b):
            raise DimensionError("attribute rows must match the image batch size")

    @property
    def batch_size(self) -> int:
        return self.x1.batch_size

    def label_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.stack([av.values for av in self.a1]),
            np.stack([av.values for av in self.a2]),
            np.stack([av.values for av in self.a3]),
        )


def sample_triplets(table: AttributeTable, images, batch_size: int, rng_seed,
                    *, avoid_attribute_collisions: bool = False,
                    max_tries: int = 100) -> TripletBatch:
    """Draw batch rows of three distinct dataset entries each.

    ``images`` maps an index array to a float image array in [-1, 1].
    Relative attributes are formed downstream from the returned label pairs.
    With ``avoid_attribute_collisions`` the third entry is re-drawn until its
    labels differ from both partners' (otherwise a "wrong" triplet can be a
    correct one in disguise); kept off by default.
    """
    n = len(table)
    if n < 3:
        raise ValueError(f"need at least 3 dataset entries to sample triplets, have {n}")
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)

    i1 = rng.integers(0, n, size=batch_size)
    i2 = rng.integers(0, n, size=batch_size)
    while True:
        clash = i2 == i1
        if not clash.any():
            break
        i2[clash] = rng.integers(0, n, size=int(clash.sum()))
    i3 = rng.integers(0, n, size=batch_size)
    tries = 0
    while True:
        clash = (i3 == i1) | (i3 == i2)
        if avoid_attribute_collisions:
            same_labels = (
                np.all(table.values[i3] == table.values[i1], axis=1)
                | np.all(table.values[i3] == table.values[i2], axis=1)
            )
            clash = clash | same_labels
        if not clash.any():
            break
        tries += 1
        if tries > max_tries:
            raise ValueError(
                "could not draw collision-free triplets; attribute labels too uniform"
            )
        i3[clash] = rng.integers(0, n, size=int(clash.sum()))

    def labels(idx):
        return tuple(AttributeVector(table.values[j], table.names) for j in idx)

    return TripletBatch(
        x1=ImageBatch(images(i1)),
        x2=ImageBatch(images(i2)),
        x3=ImageBatch(images(i3)),
        a1=labels(i1),
        a2=labels(i2),
        a3=labels(i3),
    )
