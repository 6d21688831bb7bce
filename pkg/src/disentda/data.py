"""Synthetic two-domain corpora, IDX-format ingestion and paired batching.

The synthetic task is a desk-scale stand-in for the usual adaptation
benchmarks: every class owns a fixed blocky glyph template on a mid-gray
background, the source domain adds small pixel jitter, and the target
domain is the same templates passed through a configurable shift
(translation, channel permutation, intensity inversion, Gaussian noise).
Target ground-truth labels are generated but sealed away from the training
path; only the evaluation code may read them.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .util import RNG_BATCH, RNG_DATA, RNG_TEMPLATE, ConfigError, seeded_rng

SOURCE = "source"
TARGET = "target"

# Glyphs live on a 4x4 grid of cells; each class lights a fixed subset and
# each individual image lights a few extra "distractor" cells that carry no
# class information.
_GRID = 4
_GRID_CELLS = _GRID * _GRID
_PATTERN_CELLS = 6


@dataclass
class Dataset:
    """Immutable image stack with stable indices.

    `images` has shape (N, C, H, W) with values in [0, 1]. `labels` is
    present exactly for source datasets; target ground truth, when known,
    lives in the sealed field and is reachable only through
    `sealed_labels()`, which the training path never calls.
    """

    images: np.ndarray
    domain_tag: str
    labels: np.ndarray | None = None
    indices: np.ndarray | None = None
    heldout_labels: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (N, C, H, W), got shape {self.images.shape}")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValueError("image values must lie in [0, 1]")
        if self.domain_tag not in (SOURCE, TARGET):
            raise ValueError(f"domain_tag must be source or target, got {self.domain_tag!r}")
        n = self.images.shape[0]
        if self.domain_tag == SOURCE:
            if self.labels is None:
                raise ValueError("source datasets carry labels")
            self.labels = np.asarray(self.labels, dtype=np.intp)
            if self.labels.shape != (n,):
                raise ValueError(f"need one label per image, got shape {self.labels.shape}")
        elif self.labels is not None:
            raise ValueError("target datasets are unlabeled; use the sealed field for eval truth")
        if self.indices is None:
            self.indices = np.arange(n, dtype=np.intp)
        else:
            self.indices = np.asarray(self.indices, dtype=np.intp)
            if not np.array_equal(np.sort(self.indices), np.arange(n)):
                raise ValueError("indices must be a bijection onto [0, N)")
        if self.heldout_labels is not None:
            self.heldout_labels = np.asarray(self.heldout_labels, dtype=np.intp)
            if self.heldout_labels.shape != (n,):
                raise ValueError("sealed labels must match the image count")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple[int, ...]:
        return tuple(self.images.shape[1:])

    def sealed_labels(self) -> np.ndarray:
        """Ground-truth labels for evaluation only; never used in training."""
        if self.domain_tag == SOURCE:
            return self.labels.copy()
        if self.heldout_labels is None:
            raise ValueError("this target dataset has no held-out ground truth")
        return self.heldout_labels.copy()


@dataclass
class ShiftSpec:
    """Domain shift applied to target images, in this order: integer
    translation (per sample), fixed channel permutation, intensity
    inversion p -> 1 - p, additive Gaussian noise, then one clip to [0, 1].
    """

    noise_std: float = 0.2
    intensity_invert: bool = True
    channel_permute: bool = False
    translation: int = 0

    def validate(self) -> "ShiftSpec":
        if self.noise_std < 0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.translation < 0:
            raise ConfigError(f"translation must be >= 0, got {self.translation}")
        return self

    def is_null(self) -> bool:
        return (
            self.noise_std == 0
            and not self.intensity_invert
            and not self.channel_permute
            and self.translation == 0
        )


@dataclass
class SynthSpec:
    """Synthetic corpus layout: class count, per-domain class size, glyph
    geometry and the target-domain shift.

    The glyph design plants an explicit transferable/domain-specific split.
    WHICH cells deviate from the background identifies the class and
    survives intensity inversion; the DIRECTION each cell deviates is
    partially class-informative (pattern polarities flip per sample with
    probability `polarity_flip`) but inverts wholesale in the target
    domain, so a model that leans on polarity transfers badly. Distractor
    cells are lit per image at random positions with random polarity and
    carry no class signal at all.

    With `open_set_disjoint` the target draws its glyphs from class ids
    n_classes..2*n_classes-1, so no target class exists in the source label
    space.
    """

    n_classes: int = 10
    per_class: int = 100
    eval_per_class: int | None = None
    image_size: int = 16
    channels: int = 1
    background: float = 0.5
    foreground: float = 0.9
    jitter_std: float = 0.05
    distractors: int = 3
    polarity_flip: float = 0.2
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    open_set_disjoint: bool = False

    def validate(self) -> "SynthSpec":
        if self.n_classes < 2:
            raise ConfigError(f"need at least 2 classes, got {self.n_classes}")
        if self.per_class < 1:
            raise ConfigError(f"per_class must be >= 1, got {self.per_class}")
        if self.eval_per_class is not None and self.eval_per_class < 1:
            raise ConfigError(f"eval_per_class must be >= 1, got {self.eval_per_class}")
        if self.image_size < 4 or self.image_size % 4:
            raise ConfigError(f"image_size must be a positive multiple of 4, got {self.image_size}")
        if self.channels < 1:
            raise ConfigError(f"channels must be >= 1, got {self.channels}")
        for name, v in (
            ("background", self.background),
            ("foreground", self.foreground),
            ("mirrored foreground", 2.0 * self.background - self.foreground),
        ):
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.jitter_std < 0:
            raise ConfigError(f"jitter_std must be >= 0, got {self.jitter_std}")
        if not 0 <= self.distractors <= _GRID_CELLS - _PATTERN_CELLS:
            raise ConfigError(
                f"distractors must lie in [0, {_GRID_CELLS - _PATTERN_CELLS}], got {self.distractors}"
            )
        if not 0.0 <= self.polarity_flip <= 1.0:
            raise ConfigError(f"polarity_flip must lie in [0, 1], got {self.polarity_flip}")
        self.shift.validate()
        return self


def class_pattern_cells(class_id: int, size: int = 16, channels: int = 1) -> np.ndarray:
    """Cell indices (into the 4x4 grid) active in a class glyph.

    The pattern depends only on (class_id, size, channels), so the task is
    the same across run seeds. The first half of the returned cells are
    painted above background ("bright"), the rest below ("dark").
    """
    if class_id < 0:
        raise ValueError(f"class_id must be >= 0, got {class_id}")
    rng = seeded_rng(RNG_TEMPLATE, class_id, size, channels)
    return rng.choice(_GRID_CELLS, size=_PATTERN_CELLS, replace=False)


def _paint_cells(img: np.ndarray, cells, value: float) -> None:
    size = img.shape[-1]
    cell = size // _GRID
    for c in cells:
        r, q = divmod(int(c), _GRID)
        img[..., r * cell : (r + 1) * cell, q * cell : (q + 1) * cell] = float(value)


def class_template(
    class_id: int,
    size: int = 16,
    channels: int = 1,
    background: float = 0.5,
    foreground: float = 0.9,
) -> np.ndarray:
    """Deterministic glyph for a class on a 4x4 grid of cells.

    Each active cell deviates from the background by |foreground -
    background|: half of them upward (at `foreground`), half downward (at
    the value mirrored across the background). Which cells are active is
    class-defining and survives intensity inversion; which direction each
    one deviates is the polarity trap that inversion flips.

    Returns a (C, size, size) image.
    """
    if size < 4 or size % 4:
        raise ValueError(f"size must be a positive multiple of 4, got {size}")
    lit = class_pattern_cells(class_id, size, channels)
    img = np.full((channels, size, size), float(background))
    half = _PATTERN_CELLS // 2
    _paint_cells(img, lit[:half], foreground)
    _paint_cells(img, lit[half:], 2.0 * background - foreground)
    if channels > 1:
        # give each channel a small deterministic brightness tilt so
        # channel permutation is an observable shift
        tilt = seeded_rng(RNG_TEMPLATE, class_id, size, channels, 1).uniform(
            -0.05, 0.05, size=channels
        )
        img = np.clip(img + tilt[:, None, None], 0.0, 1.0)
    return img


def apply_shift(images: np.ndarray, shift: ShiftSpec, rng: np.random.Generator) -> np.ndarray:
    """Run the target-domain shift pipeline over a stack of images."""
    shift.validate()
    out = np.asarray(images, dtype=np.float64).copy()
    n, c = out.shape[0], out.shape[1]
    if shift.translation > 0:
        offsets = rng.integers(-shift.translation, shift.translation + 1, size=(n, 2))
        for i, (dy, dx) in enumerate(offsets):
            out[i] = np.roll(out[i], (int(dy), int(dx)), axis=(1, 2))
    if shift.channel_permute:
        perm = rng.permutation(c)
        out = out[:, perm]
    if shift.intensity_invert:
        out = 1.0 - out
    if shift.noise_std > 0:
        out = out + rng.normal(0.0, shift.noise_std, size=out.shape)
    return np.clip(out, 0.0, 1.0)


def _stack_domain(spec: SynthSpec, class_ids: list[int], rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    labels = np.repeat(np.asarray(class_ids, dtype=np.intp), spec.per_class)
    templates = {
        c: class_template(c, spec.image_size, spec.channels, spec.background, spec.foreground)
        for c in class_ids
    }
    pattern = {
        c: class_pattern_cells(c, spec.image_size, spec.channels) for c in class_ids
    }
    spare = {c: np.setdiff1d(np.arange(_GRID_CELLS), cells) for c, cells in pattern.items()}
    images = np.empty(
        (labels.size, spec.channels, spec.image_size, spec.image_size), dtype=np.float64
    )
    half = _PATTERN_CELLS // 2
    lo = 2.0 * spec.background - spec.foreground
    for i, c in enumerate(labels):
        img = templates[int(c)].copy()
        if spec.polarity_flip > 0:
            cells = pattern[int(c)]
            flips = rng.random(_PATTERN_CELLS) < spec.polarity_flip
            # repaint flipped cells at the opposite deviation direction
            _paint_cells(img, cells[:half][flips[:half]], lo)
            _paint_cells(img, cells[half:][flips[half:]], spec.foreground)
        if spec.distractors:
            # per-image nuisance cells with per-cell random polarity, at the
            # same deviation magnitude as pattern cells so they are
            # indistinguishable pixel-wise
            extra = rng.choice(spare[int(c)], size=spec.distractors, replace=False)
            dflips = rng.random(spec.distractors) < 0.5
            _paint_cells(img, extra[dflips], spec.foreground)
            _paint_cells(img, extra[~dflips], lo)
        images[i] = img
    if spec.jitter_std > 0:
        images = images + rng.normal(0.0, spec.jitter_std, size=images.shape)
    return images, labels


def synth_two_domain(spec: SynthSpec, seed: int, split: int = 0) -> tuple[Dataset, Dataset]:
    """Generate a (source, target) pair; `split` keys independent draws
    (0 for the training pair, 1 for a held-out evaluation pair).

    Held-out splits honor `eval_per_class` when set, so evaluation cost can
    be tuned independently of the training corpus size.
    """
    spec.validate()
    if split != 0 and spec.eval_per_class is not None:
        spec = replace(spec, per_class=spec.eval_per_class)
    src_classes = list(range(spec.n_classes))
    tgt_classes = (
        [c + spec.n_classes for c in src_classes] if spec.open_set_disjoint else src_classes
    )

    rng_s = seeded_rng(seed, RNG_DATA, 2 * split)
    src_images, src_labels = _stack_domain(spec, src_classes, rng_s)
    source = Dataset(images=np.clip(src_images, 0.0, 1.0), domain_tag=SOURCE, labels=src_labels)

    rng_t = seeded_rng(seed, RNG_DATA, 2 * split + 1)
    tgt_base, tgt_truth = _stack_domain(spec, tgt_classes, rng_t)
    tgt_images = apply_shift(tgt_base, spec.shift, rng_t)
    target = Dataset(images=tgt_images, domain_tag=TARGET, heldout_labels=tgt_truth)
    return source, target


# ---------------------------------------------------------------------------
# IDX format: 0x00 0x00 <dtype> <rank>, big-endian uint32 dims, raw payload.
# Only the unsigned-byte dtype (0x08) is supported.

_IDX_UBYTE = 0x08


def write_idx(path, array: np.ndarray) -> None:
    """Write an unsigned-byte array (rank 3 images or rank 1 labels)."""
    arr = np.asarray(array)
    if arr.dtype != np.uint8:
        raise ValueError(f"IDX writer expects uint8 data, got {arr.dtype}")
    if arr.ndim not in (1, 3):
        raise ValueError(f"IDX writer handles rank 1 or 3, got rank {arr.ndim}")
    with open(path, "wb") as f:
        f.write(struct.pack(">BBBB", 0, 0, _IDX_UBYTE, arr.ndim))
        for d in arr.shape:
            f.write(struct.pack(">I", d))
        f.write(arr.tobytes())


def read_idx(path) -> np.ndarray:
    """Read an IDX file into a uint8 array of the declared shape."""
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise ValueError(f"{path}: truncated IDX header")
    z0, z1, dtype, rank = struct.unpack(">BBBB", raw[:4])
    if z0 != 0 or z1 != 0:
        raise ValueError(f"{path}: bad magic bytes {z0:#04x} {z1:#04x}")
    if dtype != _IDX_UBYTE:
        raise ValueError(f"{path}: unsupported IDX dtype {dtype:#04x} (only unsigned byte)")
    header_end = 4 + 4 * rank
    if len(raw) < header_end:
        raise ValueError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{rank}I", raw[4:header_end])
    count = int(np.prod(dims, dtype=np.int64)) if rank else 0
    payload = raw[header_end:]
    if len(payload) < count:
        raise ValueError(f"{path}: truncated IDX payload ({len(payload)} of {count} bytes)")
    if len(payload) > count:
        raise ValueError(f"{path}: trailing bytes after IDX payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def load_idx(images_path, labels_path=None, domain_tag: str = SOURCE) -> Dataset:
    """Load an IDX image file (and optional label file) as a Dataset.

    Pixels are scaled to [0, 1]. Labels attach as real labels for a source
    dataset and as sealed evaluation-only truth for a target dataset.
    """
    images = read_idx(images_path)
    if images.ndim != 3:
        raise ValueError(f"{images_path}: image file must have rank 3, got {images.ndim}")
    pixels = images.astype(np.float64)[:, None, :, :] / 255.0
    labels = None
    if labels_path is not None:
        labels = read_idx(labels_path)
        if labels.ndim != 1:
            raise ValueError(f"{labels_path}: label file must have rank 1, got {labels.ndim}")
        if labels.shape[0] != pixels.shape[0]:
            raise ValueError(
                f"label count {labels.shape[0]} does not match image count {pixels.shape[0]}"
            )
        labels = labels.astype(np.intp)
    if domain_tag == SOURCE:
        if labels is None:
            raise ValueError("source IDX data needs a label file")
        return Dataset(images=pixels, domain_tag=SOURCE, labels=labels)
    return Dataset(images=pixels, domain_tag=TARGET, heldout_labels=labels)


# ---------------------------------------------------------------------------
# batching


@dataclass
class DomainBatch:
    """One paired step of training data: B source rows and B target rows."""

    x_S: Tensor
    y_S: np.ndarray
    x_T: Tensor
    target_indices: np.ndarray


def make_batches(source: Dataset, target: Dataset, batch_size: int, seed: int, epoch: int) -> list[DomainBatch]:
    """Paired batches for one epoch, deterministic given (seed, epoch).

    Both domains are shuffled independently; the longer stream sets the
    batch count (floor division) and the shorter one wraps around so every
    batch carries exactly `batch_size` rows from each domain.
    """
    ns, nt = len(source), len(target)
    if ns == 0 or nt == 0:
        raise ConfigError("both datasets must be nonempty")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if batch_size > ns and batch_size > nt:
        raise ConfigError(f"batch_size {batch_size} exceeds both dataset sizes ({ns}, {nt})")
    rng = seeded_rng(seed, RNG_BATCH, epoch)
    perm_s = rng.permutation(ns)
    perm_t = rng.permutation(nt)
    n_batches = max(ns, nt) // batch_size
    batches = []
    for j in range(n_batches):
        pos = j * batch_size + np.arange(batch_size)
        rows_s = perm_s[pos % ns]
        rows_t = perm_t[pos % nt]
        batches.append(
            DomainBatch(
                x_S=Tensor(source.images[rows_s]),
                y_S=source.labels[rows_s].copy(),
                x_T=Tensor(target.images[rows_t]),
                target_indices=target.indices[rows_t].copy(),
            )
        )
    return batches
