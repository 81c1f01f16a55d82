"""Synthetic identity-cluster dataset generation and DRKDATA1 persistence.

File format: header line ``DRKDATA1,n,d`` followed by one CSV row per sample:
identity, split tag (train|heldout), then d feature values printed with full
precision so that load(save(d)) == d exactly.
"""

from dataclasses import dataclass

import numpy as np

from .exceptions import DataFormatError, InputError

DATA_MAGIC = "DRKDATA1"
SPLITS = ("train", "heldout")


@dataclass(frozen=True)
class SynthSpec:
    num_identities: int = 20
    samples_per_identity: int = 16
    feature_dim: int = 32
    intra_class_stddev: float = 4.0
    inter_class_separation: float = 6.0
    heldout_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_identities < 2:
            raise InputError("need at least 2 identities")
        if self.samples_per_identity < 2:
            raise InputError("need at least 2 samples per identity (pairing requires it)")
        if self.feature_dim < 1:
            raise InputError("feature_dim must be >= 1")
        if not self.intra_class_stddev > 0:
            raise InputError("intra_class_stddev must be > 0")
        if not self.inter_class_separation > 0:
            raise InputError("inter_class_separation must be > 0")
        if not 0.0 < self.heldout_fraction < 1.0:
            raise InputError(
                f"heldout_fraction must lie in (0, 1), got {self.heldout_fraction}")


@dataclass
class LabeledDataset:
    features: np.ndarray    # (n, d)
    identities: np.ndarray  # (n,)
    split: np.ndarray       # (n,) of "train"/"heldout"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.identities = np.asarray(self.identities, dtype=np.intp)
        self.split = np.asarray(self.split)
        n = self.features.shape[0]
        if self.identities.shape != (n,) or self.split.shape != (n,):
            raise InputError("identities and split must have one entry per sample")
        bad = set(np.unique(self.split)) - set(SPLITS)
        if bad:
            raise InputError(f"unknown split tags: {sorted(bad)}")
        train_ids = set(np.unique(self.identities[self.split == "train"]).tolist())
        held_ids = set(np.unique(self.identities[self.split == "heldout"]).tolist())
        if train_ids & held_ids:
            raise InputError("train and heldout identities must be disjoint")
        for tag in SPLITS:
            ids, counts = np.unique(self.identities[self.split == tag], return_counts=True)
            if ids.size and counts.min() < 2:
                raise InputError(f"every {tag} identity needs >= 2 samples")

    def subset(self, tag: str):
        mask = self.split == tag
        return self.features[mask], self.identities[mask]

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def __eq__(self, other) -> bool:
        return (isinstance(other, LabeledDataset)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.identities, other.identities)
                and np.array_equal(self.split, other.split))


def heldout_count(spec: SynthSpec) -> int:
    count = int(round(spec.num_identities * spec.heldout_fraction))
    return min(max(count, 1), spec.num_identities - 1)


def generate(spec: SynthSpec) -> LabeledDataset:
    """Gaussian identity clusters with centers uniform in a scaled hypercube.

    Identities are split whole into disjoint train/heldout sets; everything is
    a pure function of ``spec.seed``.
    """
    rng = np.random.default_rng(spec.seed)
    half = spec.inter_class_separation / 2.0
    centers = rng.uniform(-half, half, size=(spec.num_identities, spec.feature_dim))
    noise = rng.normal(0.0, spec.intra_class_stddev,
                       size=(spec.num_identities, spec.samples_per_identity, spec.feature_dim))
    features = (centers[:, None, :] + noise).reshape(-1, spec.feature_dim)
    identities = np.repeat(np.arange(spec.num_identities), spec.samples_per_identity)
    held = rng.permutation(spec.num_identities)[:heldout_count(spec)]
    held_mask = np.isin(identities, held)
    split = np.where(held_mask, "heldout", "train")
    return LabeledDataset(features=features, identities=identities, split=split)


def save(dataset: LabeledDataset, path) -> None:
    n, d = dataset.features.shape
    with open(path, "w") as fh:
        fh.write(f"{DATA_MAGIC},{n},{d}\n")
        for i in range(n):
            values = ",".join(repr(float(v)) for v in dataset.features[i])
            fh.write(f"{int(dataset.identities[i])},{dataset.split[i]},{values}\n")


def load(path) -> LabeledDataset:
    """Parse a DRKDATA1 file; any malformation raises with the offending line."""
    with open(path) as fh:
        header = fh.readline()
        if not header:
            raise DataFormatError(f"{path}: empty file")
        parts = header.strip().split(",")
        if len(parts) != 3 or parts[0] != DATA_MAGIC:
            raise DataFormatError(f"{path}:1: expected header '{DATA_MAGIC},n,d'")
        try:
            n, d = int(parts[1]), int(parts[2])
        except ValueError as exc:
            raise DataFormatError(f"{path}:1: non-integer dimensions") from exc
        features = np.empty((n, d))
        identities = np.empty(n, dtype=np.intp)
        split = np.empty(n, dtype="<U7")
        for i in range(n):
            line = fh.readline()
            lineno = i + 2
            if not line:
                raise DataFormatError(f"{path}:{lineno}: truncated (expected {n} rows)")
            fields = line.strip().split(",")
            if len(fields) != d + 2:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {d + 2} fields, got {len(fields)}")
            try:
                identities[i] = int(fields[0])
                features[i] = [float(v) for v in fields[2:]]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: unparseable value: {exc}") from exc
            if fields[1] not in SPLITS:
                raise DataFormatError(f"{path}:{lineno}: unknown split tag {fields[1]!r}")
            split[i] = fields[1]
        extra = fh.readline()
        if extra.strip():
            raise DataFormatError(f"{path}:{n + 2}: trailing data beyond {n} declared rows")
    try:
        return LabeledDataset(features=features, identities=identities, split=split)
    except InputError as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
