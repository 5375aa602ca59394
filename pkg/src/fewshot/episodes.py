"""Datasets, augmentation, synthetic domain shift, and episode sampling."""

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, ConfigError, IngestionError


@dataclass
class DatasetTable:
    """Immutable pool of (input, class, domain) items with contiguous classes."""

    inputs: list                        # list of ndarray
    labels: np.ndarray                  # class indices, contiguous from 0
    domains: list                       # per-item domain tag
    class_names: list
    domain_name: str = "default"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels) or len(self.domains) != len(self.labels):
            raise ConfigError("inputs/labels/domains lengths differ")
        n_classes = len(self.class_names)
        counts = np.bincount(self.labels, minlength=n_classes)
        if len(counts) > n_classes or np.any(counts == 0):
            raise ConfigError("class indices must be contiguous and every class non-empty")
        self._by_class = [np.flatnonzero(self.labels == c) for c in range(n_classes)]

    @property
    def n_classes(self):
        return len(self.class_names)

    def __len__(self):
        return len(self.inputs)

    def class_items(self, c):
        return self._by_class[c]


@dataclass
class Episode:
    """One N-way/K-shot task with disjoint support and query items."""

    support_inputs: np.ndarray
    support_labels: np.ndarray
    query_inputs: np.ndarray
    query_labels: np.ndarray
    support_ids: np.ndarray             # indices into the source table
    query_ids: np.ndarray
    classes: np.ndarray                 # original class indices, position = new label
    n_way: int = 0
    k_shot: int = 0
    n_query: int = 0


def sample_episode(data, n_way, k_shot, n_query, rng):
    """Uniform episode draw: N classes without replacement, then K+Q items
    per class without replacement; the first K become support."""
    if data.n_classes < n_way:
        raise CapacityError(f"dataset has {data.n_classes} classes, need {n_way}")
    classes = rng.choice(data.n_classes, size=n_way, replace=False)
    sup_x, sup_y, sup_id = [], [], []
    qry_x, qry_y, qry_id = [], [], []
    for new_label, c in enumerate(classes):
        pool = data.class_items(int(c))
        if len(pool) < k_shot + n_query:
            raise CapacityError(
                f"class {data.class_names[int(c)]!r} has {len(pool)} items, "
                f"need {k_shot + n_query}"
            )
        picked = rng.choice(pool, size=k_shot + n_query, replace=False)
        for i in picked[:k_shot]:
            sup_x.append(data.inputs[i])
            sup_y.append(new_label)
            sup_id.append(i)
        for i in picked[k_shot:]:
            qry_x.append(data.inputs[i])
            qry_y.append(new_label)
            qry_id.append(i)
    return Episode(
        support_inputs=np.asarray(sup_x, dtype=np.float64),
        support_labels=np.asarray(sup_y, dtype=np.int64),
        query_inputs=np.asarray(qry_x, dtype=np.float64),
        query_labels=np.asarray(qry_y, dtype=np.int64),
        support_ids=np.asarray(sup_id, dtype=np.int64),
        query_ids=np.asarray(qry_id, dtype=np.int64),
        classes=np.asarray(classes, dtype=np.int64),
        n_way=n_way,
        k_shot=k_shot,
        n_query=n_query,
    )


# ------------------------------------------------------------ augmentation

def horizontal_flip(img):
    """Mirror the width axis of an H x W x C image."""
    return np.ascontiguousarray(img[:, ::-1, :])


def color_jitter(img, strength, rng):
    """Scale each channel by an independent factor in [1-s, 1+s], clamp to [0, 1]."""
    if strength == 0:
        return img.copy()
    factors = rng.uniform(1.0 - strength, 1.0 + strength, size=img.shape[-1])
    return np.clip(img * factors, 0.0, 1.0)


def random_crop(img, size, padding, rng):
    """Zero-pad the spatial axes then cut a size x size window at a random offset."""
    h, w, _ = img.shape
    padded = np.pad(img, ((padding, padding), (padding, padding), (0, 0)))
    ph, pw = padded.shape[:2]
    if size > ph or size > pw:
        raise ConfigError(f"crop size {size} exceeds padded input {ph}x{pw}")
    top = rng.integers(0, ph - size + 1)
    left = rng.integers(0, pw - size + 1)
    return padded[top:top + size, left:left + size, :]


@dataclass
class AugmentConfig:
    horizontal_flip: bool = False
    color_jitter: float = 0.0
    crop_size: int = 0                 # 0 disables cropping
    crop_padding: int = 0


def augment(img, cfg, rng):
    """Apply the configured image augmentations; flip fires with prob 0.5."""
    out = np.asarray(img, dtype=np.float64)
    if out.ndim != 3:
        return out.copy()              # vector data passes through untouched
    if cfg.horizontal_flip and rng.random() < 0.5:
        out = horizontal_flip(out)
    if cfg.color_jitter > 0:
        out = color_jitter(out, cfg.color_jitter, rng)
    if cfg.crop_size > 0:
        out = random_crop(out, cfg.crop_size, cfg.crop_padding, rng)
    return out


def augment_batch(batch, cfg, rng):
    return np.asarray([augment(x, cfg, rng) for x in batch])


# ------------------------------------------------- synthetic domain shift

@dataclass
class ShiftConfig:
    """Gaussian cluster generator with a single domain-shift magnitude axis.

    The shift translates every class center by `shift` along a seed-fixed
    random direction and rotates the centers by `shift` radians (capped at
    pi) in a seed-fixed random plane. shift = 0 reproduces the source
    domain exactly.
    """

    class_count: int = 10
    samples_per_class: int = 30
    dim: int = 8
    separation: float = 10.0
    shift: float = 0.0
    noise: float = 0.1
    seed: int = 0
    domain_name: str = ""

    def __post_init__(self):
        if self.separation <= 0:
            raise ConfigError("separation must be positive")
        if self.shift < 0:
            raise ConfigError("shift must be non-negative")


def _shift_transform(dim, shift, rng):
    """Rotation matrix (random plane, angle min(shift, pi)) and translation."""
    direction = rng.standard_normal(dim)
    direction /= np.linalg.norm(direction)
    q, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    theta = min(shift, np.pi)
    g = np.eye(dim)
    g[0, 0] = g[1, 1] = np.cos(theta)
    g[0, 1] = -np.sin(theta)
    g[1, 0] = np.sin(theta)
    rot = q @ g @ q.T
    return rot, shift * direction


def synth_task_domain(cfg):
    """Deterministic synthetic classification domain per the config seed."""
    ss = np.random.SeedSequence(cfg.seed)
    center_rng, shift_rng, sample_rng = (np.random.default_rng(s) for s in ss.spawn(3))
    centers = cfg.separation * center_rng.standard_normal((cfg.class_count, cfg.dim))
    if cfg.shift > 0:
        rot, trans = _shift_transform(cfg.dim, cfg.shift, shift_rng)
        centers = centers @ rot.T + trans
    inputs, labels = [], []
    for c in range(cfg.class_count):
        pts = centers[c] + cfg.noise * sample_rng.standard_normal((cfg.samples_per_class, cfg.dim))
        inputs.extend(pts)
        labels.extend([c] * cfg.samples_per_class)
    name = cfg.domain_name or f"synth(shift={cfg.shift:g},seed={cfg.seed})"
    return DatasetTable(
        inputs=[np.asarray(x) for x in inputs],
        labels=np.asarray(labels),
        domains=[name] * len(inputs),
        class_names=[f"class_{c}" for c in range(cfg.class_count)],
        domain_name=name,
    )


# ------------------------------------------------------------ splitting

def split_base_novel(data, base_classes):
    """Partition a table into base/novel tables with reindexed classes."""
    base_classes = sorted(set(int(c) for c in base_classes))
    all_classes = set(range(data.n_classes))
    if not set(base_classes) <= all_classes:
        raise ConfigError("base class list contains unknown classes")
    novel_classes = sorted(all_classes - set(base_classes))

    def subset(cls_list):
        if not cls_list:
            return DatasetTable([], np.zeros(0, dtype=np.int64), [], [],
                                domain_name=data.domain_name)
        remap = {c: i for i, c in enumerate(cls_list)}
        keep = [i for i, y in enumerate(data.labels) if int(y) in remap]
        return DatasetTable(
            inputs=[data.inputs[i] for i in keep],
            labels=np.asarray([remap[int(data.labels[i])] for i in keep]),
            domains=[data.domains[i] for i in keep],
            class_names=[data.class_names[c] for c in cls_list],
            domain_name=data.domain_name,
        )

    return subset(base_classes), subset(novel_classes)


# ------------------------------------------------------------------- IO

def save_csv(data, path):
    """Vector dataset export: header label,domain,f0,...,f{d-1}."""
    dim = np.asarray(data.inputs[0]).ravel().shape[0]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["label", "domain"] + [f"f{i}" for i in range(dim)])
        for x, y, dom in zip(data.inputs, data.labels, data.domains):
            w.writerow([data.class_names[int(y)], dom] + [repr(float(v)) for v in np.ravel(x)])


def load_csv(path):
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[:2] != ["label", "domain"]:
            raise IngestionError(f"{path}: expected header label,domain,f0,...")
        inputs, names, domains = [], [], []
        for row in reader:
            names.append(row[0])
            domains.append(row[1])
            inputs.append(np.array([float(v) for v in row[2:]]))
    if not inputs:
        raise IngestionError(f"{path}: no data rows")
    class_names = sorted(set(names))
    index = {n: i for i, n in enumerate(class_names)}
    labels = np.array([index[n] for n in names])
    return DatasetTable(inputs, labels, domains, class_names, domain_name=domains[0])


def load_image_dataset(root, image_size=None):
    """Load root/<class_name>/*.{png,jpg,jpeg,bmp} into a table.

    Classes are indexed in lexicographic directory order; pixel values are
    scaled to [0, 1]; images are resized to image_size x image_size when given.
    """
    import os

    from PIL import Image, UnidentifiedImageError

    exts = (".png", ".jpg", ".jpeg", ".bmp")
    class_dirs = sorted(
        d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d))
    )
    if not class_dirs:
        raise IngestionError(f"{root}: no class directories")
    inputs, labels, domains = [], [], []
    for idx, name in enumerate(class_dirs):
        files = sorted(
            f for f in os.listdir(os.path.join(root, name)) if f.lower().endswith(exts)
        )
        if not files:
            raise IngestionError(f"{root}/{name}: empty class directory")
        for fname in files:
            path = os.path.join(root, name, fname)
            try:
                with Image.open(path) as im:
                    im = im.convert("RGB")
                    if image_size:
                        im = im.resize((image_size, image_size))
                    arr = np.asarray(im, dtype=np.float64) / 255.0
            except (UnidentifiedImageError, OSError) as e:
                raise IngestionError(f"cannot decode {path}: {e}") from e
            inputs.append(arr)
            labels.append(idx)
            domains.append(os.path.basename(os.path.normpath(root)))
    return DatasetTable(inputs, np.asarray(labels), domains, class_dirs,
                        domain_name=os.path.basename(os.path.normpath(root)))
