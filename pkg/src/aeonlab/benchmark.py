"""Synthetic dual-noise benchmark: Gaussian class blobs, similarity-driven OOD
replacement from an offset pool, then part-dependent closed-set label flips."""
from __future__ import annotations

import csv
import heapq
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

GENERATOR_VERSION = "1"
TAGS = ("clean", "id_noisy", "ood")
CLEAN, ID_NOISY, OOD = 0, 1, 2
NORM_EPS = 1e-12


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class SynthConfig:
    num_classes: int = 8
    dim: int = 16
    samples_per_class: int = 500
    test_per_class: int = 250
    class_sep: float = 4.0
    class_std: float = 1.0
    pool_size: int = 3000
    pool_components: int = 8
    pool_offset: float = 3.5
    pool_std: float = 0.5
    r_id: float = 0.3
    r_ood: float = 0.3
    flip_std: float = 0.1
    embed_dim: int | None = None
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.r_id <= 1.0 and 0.0 <= self.r_ood <= 1.0):
            raise ConfigError("noise rates must lie in [0, 1]")
        if self.num_classes < 2 or self.dim < 1 or self.samples_per_class < 1:
            raise ConfigError("need >= 2 classes, dim >= 1 and >= 1 sample per class")
        if self.flip_std < 0 or self.class_std < 0 or self.pool_std < 0:
            raise ConfigError("standard deviations must be non-negative")


@dataclass
class TaggedDataset:
    """Noisy training records with ground-truth provenance.

    ``true_labels`` is -1 for OOD records. ``tags`` holds codes into ``TAGS``.
    """

    features: np.ndarray
    noisy_labels: np.ndarray
    true_labels: np.ndarray
    tags: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.noisy_labels)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def num_classes(self) -> int:
        return int(self.meta.get("num_classes", int(self.noisy_labels.max()) + 1))

    def tag_counts(self) -> dict[str, int]:
        return {name: int(np.sum(self.tags == code)) for code, name in enumerate(TAGS)}

    def check_invariants(self, r_ood: float | None = None) -> None:
        t, y, yh = self.tags, self.true_labels, self.noisy_labels
        C = self.num_classes
        if not np.array_equal(t == OOD, y == -1):
            raise DataError("tag=ood must coincide with true_label=-1")
        noisy = t == ID_NOISY
        if np.any(yh[noisy] == y[noisy]) or np.any((y[noisy] < 0) | (y[noisy] >= C)):
            raise DataError("id_noisy records must carry a wrong in-range label")
        clean = t == CLEAN
        if np.any(yh[clean] != y[clean]):
            raise DataError("clean records must carry their true label")
        if np.any((yh < 0) | (yh >= C)):
            raise DataError("noisy labels out of range")
        if r_ood is not None and int(np.sum(t == OOD)) != round(r_ood * len(self)):
            raise DataError("OOD count does not equal round(r_ood * |D|)")


# -- generation ---------------------------------------------------------------------
def _spread_means(rng: np.random.Generator, k: int, dim: int, sep: float) -> np.ndarray:
    if k <= dim:
        # orthonormal directions at radius sep/sqrt(2): all pairwise distances equal sep
        q, _ = np.linalg.qr(rng.standard_normal((dim, k)))
        return (q.T * (sep / np.sqrt(2.0))).copy()
    means: list[np.ndarray] = []
    for _ in range(100_000):
        c = rng.standard_normal(dim)
        c *= sep / np.linalg.norm(c)
        if all(np.linalg.norm(c - m) >= sep for m in means):
            means.append(c)
            if len(means) == k:
                return np.array(means)
    raise ConfigError("could not place class means at the requested separation")


def _pool_means(rng, cfg: SynthConfig, class_means: np.ndarray) -> np.ndarray:
    radius = float(np.linalg.norm(class_means, axis=1).mean()) or 1.0
    out = []
    for _ in range(100_000):
        c = rng.standard_normal(cfg.dim)
        c *= radius / np.linalg.norm(c)
        if np.min(np.linalg.norm(class_means - c, axis=1)) >= cfg.pool_offset:
            out.append(c)
            if len(out) == cfg.pool_components:
                return np.array(out)
    raise ConfigError("could not place OOD pool components at the requested offset")


def generate_clean(cfg: SynthConfig):
    """Class blobs and the OOD pool.

    Returns ``(x_train, y_train, x_test, y_test, pool, class_means)``.
    """
    rng = np.random.default_rng([cfg.seed, 0])
    means = _spread_means(rng, cfg.num_classes, cfg.dim, cfg.class_sep)
    pool_means = _pool_means(rng, cfg, means)

    def blobs(per_class):
        y = np.repeat(np.arange(cfg.num_classes), per_class)
        x = means[y] + cfg.class_std * rng.standard_normal((len(y), cfg.dim))
        return x, y

    x_train, y_train = blobs(cfg.samples_per_class)
    x_test, y_test = blobs(cfg.test_per_class)
    comp = rng.integers(0, cfg.pool_components, size=cfg.pool_size)
    pool = pool_means[comp] + cfg.pool_std * rng.standard_normal((cfg.pool_size, cfg.dim))
    return x_train, y_train, x_test, y_test, pool, means


def cosine_similarity(a, b) -> np.ndarray | float:
    """Cosine similarity of vectors, or the full matrix for 2-D inputs (rows vs rows)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    an = a / np.maximum(np.linalg.norm(a, axis=-1, keepdims=True), NORM_EPS)
    bn = b / np.maximum(np.linalg.norm(b, axis=-1, keepdims=True), NORM_EPS)
    if a.ndim == 1 and b.ndim == 1:
        return float(np.clip(an @ bn, -1.0, 1.0))
    return np.clip(an @ bn.T, -1.0, 1.0)


def random_embedding(dim: int, embed_dim: int, seed) -> np.ndarray:
    return np.random.default_rng([seed, 3]).standard_normal((dim, embed_dim)) / np.sqrt(embed_dim)


def select_ood(sim: np.ndarray, k: int) -> list[tuple[int, int]]:
    """Greedy one-to-one matching of records to pool items by descending similarity.

    Each step takes the record whose best *still unused* pool item is most
    similar; ties go to the lower record index, then the lower pool index.
    """
    n_rec, n_pool = sim.shape
    if k > n_pool:
        raise ConfigError(f"cannot replace {k} records from a pool of {n_pool}")
    if k == 0:
        return []
    used = np.zeros(n_pool, dtype=bool)
    best = sim.argmax(axis=1)
    heap = [(-sim[i, best[i]], i, int(best[i])) for i in range(n_rec)]
    heapq.heapify(heap)
    pairs = []
    while len(pairs) < k:
        neg, i, j = heapq.heappop(heap)
        if used[j]:
            row = np.where(used, -np.inf, sim[i])
            j = int(row.argmax())
            heapq.heappush(heap, (-row[j], i, j))
            continue
        used[j] = True
        pairs.append((i, j))
    return pairs


def inject_ood(data: TaggedDataset, pool: np.ndarray, r_ood: float, embed=None) -> TaggedDataset:
    """Replace the round(r_ood*|D|) records closest (cosine) to the pool by their
    top-1 pool vector; the record's label is kept."""
    k = int(round(r_ood * len(data)))
    if k > len(pool):
        raise ConfigError(f"r_ood * |D| = {k} exceeds the pool size {len(pool)}")
    feats = data.features.copy()
    tags = data.tags.copy()
    true = data.true_labels.copy()
    if k:
        a, b = (feats, pool) if embed is None else (feats @ embed, pool @ embed)
        for i, j in select_ood(cosine_similarity(a, b), k):
            feats[i] = pool[j]
            tags[i] = OOD
            true[i] = -1
    return TaggedDataset(feats, data.noisy_labels.copy(), true, tags, dict(data.meta))


def id_transition_row(x, true_label: int, q: float, W: np.ndarray) -> np.ndarray:
    """Label distribution for one record: 1-q on the true class, q spread over the
    others by a softmax of the scores ``x @ W[true_label]`` (true class excluded)."""
    x = np.asarray(x, dtype=np.float64)
    scores = x @ W[true_label]
    C = scores.shape[0]
    row = np.zeros(C)
    others = np.arange(C) != true_label
    s = scores[others]
    e = np.exp(s - s.max())
    row[others] = q * e / e.sum()
    row[true_label] = 1.0 - q
    return row


def inject_id(data: TaggedDataset, r_id: float, flip_std: float, seed, rows_out: list | None = None) -> TaggedDataset:
    """Flip labels of non-OOD records with instance-dependent flip rates."""
    rng = np.random.default_rng([seed, 1]) if not isinstance(seed, np.random.Generator) else seed
    C = data.num_classes
    d = data.dim
    W = rng.standard_normal((C, d, C))
    eligible = np.flatnonzero(data.tags != OOD)
    q = np.clip(rng.normal(r_id, flip_std, size=len(eligible)), 0.0, 1.0)
    u = rng.random(len(eligible))
    noisy = data.noisy_labels.copy()
    tags = data.tags.copy()
    for k, i in enumerate(eligible):
        y = int(data.true_labels[i])
        row = id_transition_row(data.features[i], y, q[k], W)
        if rows_out is not None:
            rows_out.append(row)
        new = int(min(np.searchsorted(np.cumsum(row), u[k], side="right"), C - 1))
        if new != y:
            noisy[i] = new
            tags[i] = ID_NOISY
    return TaggedDataset(data.features.copy(), noisy, data.true_labels.copy(), tags, dict(data.meta))


def synthesize(cfg: SynthConfig) -> tuple[TaggedDataset, TaggedDataset]:
    """Full pipeline. Returns ``(train, test)``; the test split is always clean."""
    x_train, y_train, x_test, y_test, pool, _ = generate_clean(cfg)
    meta = {"num_classes": cfg.num_classes, "dim": cfg.dim, "seed": cfg.seed, "r_id": cfg.r_id,
            "r_ood": cfg.r_ood, "generator_version": GENERATOR_VERSION}
    n = len(y_train)
    data = TaggedDataset(x_train, y_train.copy(), y_train.copy(), np.zeros(n, dtype=np.int64), meta)
    embed = random_embedding(cfg.dim, cfg.embed_dim, cfg.seed) if cfg.embed_dim else None
    data = inject_ood(data, pool, cfg.r_ood, embed)
    if cfg.r_id > 0:  # a zero rate means no closed-set noise, even with flip_std > 0
        data = inject_id(data, cfg.r_id, cfg.flip_std, cfg.seed)
    data.meta["synth_config"] = asdict(cfg)
    data.meta["tag_counts"] = data.tag_counts()
    test = TaggedDataset(x_test, y_test.copy(), y_test.copy(), np.zeros(len(y_test), dtype=np.int64), dict(meta))
    return data, test


# -- file format ----------------------------------------------------------------------
def _rows_to_csv(data: TaggedDataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"f{j}" for j in range(data.dim)] + ["noisy_label", "true_label", "tag"])
    for x, yh, y, t in zip(data.features, data.noisy_labels, data.true_labels, data.tags):
        w.writerow([repr(float(v)) for v in x] + [int(yh), int(y), TAGS[int(t)]])
    return buf.getvalue()


def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def split_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".test.csv")


def write_dataset(data: TaggedDataset, path, test: TaggedDataset | None = None) -> None:
    """CSV ``f0..f{d-1},noisy_label,true_label,tag`` plus a ``.meta.json`` sidecar.

    A clean test split, when given, goes to ``<stem>.test.csv`` in the same format.
    """
    path = Path(path)
    path.write_text(_rows_to_csv(data))
    meta = dict(data.meta)
    meta["tag_counts"] = data.tag_counts()
    meta["num_records"] = len(data)
    if test is not None:
        split_path(path).write_text(_rows_to_csv(test))
        meta["test_split"] = split_path(path).name
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))


def _read_csv(path, meta: dict) -> TaggedDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 3
        if d < 1 or header[-3:] != ["noisy_label", "true_label", "tag"]:
            raise DataError(f"{path}: unexpected header")
        feats, yh, y, tags = [], [], [], []
        for line in reader:
            if len(line) != d + 3:
                raise DataError(f"{path}: malformed row")
            feats.append([float(v) for v in line[:d]])
            yh.append(int(line[d]))
            y.append(int(line[d + 1]))
            try:
                tags.append(TAGS.index(line[d + 2]))
            except ValueError:
                raise DataError(f"{path}: unknown tag {line[d + 2]!r}") from None
    return TaggedDataset(np.array(feats, dtype=np.float64).reshape(-1, d), np.array(yh, dtype=np.int64),
                         np.array(y, dtype=np.int64), np.array(tags, dtype=np.int64), meta)


def read_dataset(path) -> tuple[TaggedDataset, TaggedDataset | None]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such dataset: {path}")
    mp = meta_path(path)
    meta = json.loads(mp.read_text()) if mp.exists() else {}
    data = _read_csv(path, meta)
    test = None
    if meta.get("test_split"):
        tp = path.with_name(meta["test_split"])
        if tp.exists():
            test = _read_csv(tp, dict(meta))
    return data, test
