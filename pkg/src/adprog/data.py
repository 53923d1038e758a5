"""Cohort ingestion, longitudinal sequence assembly, and synthetic cohorts.

The prediction cohort is four visits (bl, m06, m12, m18) per subject, each
visit carrying a 3-channel square image and 17 named biomarker values.
Missing later visits are forward-filled from the most recent earlier visit;
missing baselines exclude the subject.  Assembled sequences are 4 x 273
(256 image features then the 17 biomarkers, in the documented order).

The synthetic generators replace the restricted clinical cohort: a smooth
blob phantom whose radius shrinks at a class-dependent rate, plus biomarker
trajectories with class-dependent slopes.  Everything is a pure function of
its config, keyed by the config seed.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, InputError, SchemaError

log = logging.getLogger(__name__)

BIOMARKER_NAMES = (
    "CDRSB", "ADAS11", "ADAS13", "ADASQ4", "MMSE",
    "RAVLT_immediate", "RAVLT_learning", "RAVLT_forgetting",
    "RAVLT_perc_forgetting", "FAQ",
    "Ventricles", "Hippocampus", "WholeBrain", "Entorhinal",
    "Fusiform", "MidTemp", "ICV",
)
VISIT_ORDER = ("bl", "m06", "m12", "m18")
IMAGE_FEATURE_DIM = 256
SEQUENCE_WIDTH = IMAGE_FEATURE_DIM + len(BIOMARKER_NAMES)  # 273
MISSING_TOKENS = {"", "na", "nan", "n/a", "null", "none"}


@dataclass
class BiomarkerRow:
    subject_id: str
    visit_code: str
    values: dict[str, float | None]

    def missing_fields(self) -> list[str]:
        return [k for k in BIOMARKER_NAMES if self.values.get(k) is None]


@dataclass
class FeatureSequence:
    """One subject's 4 x 273 feature matrix with label and provenance."""

    subject_id: str
    data: np.ndarray
    label: int
    augmented: bool = False
    source_subject_id: str | None = None
    variant: int = 0

    def __post_init__(self):
        if self.data.shape != (len(VISIT_ORDER), SEQUENCE_WIDTH):
            raise InputError(
                f"sequence for {self.subject_id} has shape {self.data.shape},"
                f" expected {(len(VISIT_ORDER), SEQUENCE_WIDTH)}")
        if self.source_subject_id is None:
            self.source_subject_id = self.subject_id


# ---------------------------------------------------------------------------
# biomarker file IO
# ---------------------------------------------------------------------------

def load_biomarkers(path) -> list[BiomarkerRow]:
    """Parse the biomarker CSV; unknown columns are ignored with a warning."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        required = ["subject_id", "visit_code", *BIOMARKER_NAMES]
        for col in required:
            if col not in header:
                raise SchemaError(f"{path}: missing mandatory column {col!r}")
        extras = [c for c in header if c not in required]
        if extras:
            log.warning("%s: ignoring unknown columns %s", path, extras)
        idx = {c: header.index(c) for c in required}
        rows = []
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            values: dict[str, float | None] = {}
            for name in BIOMARKER_NAMES:
                raw = rec[idx[name]].strip()
                if raw.lower() in MISSING_TOKENS:
                    values[name] = None
                    continue
                try:
                    values[name] = float(raw)
                except ValueError:
                    raise SchemaError(
                        f"{path}:{lineno}: cannot parse {name}={raw!r}") from None
            rows.append(BiomarkerRow(rec[idx["subject_id"]],
                                     rec[idx["visit_code"]], values))
    return rows


def write_biomarkers(path, rows: list[BiomarkerRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "visit_code", *BIOMARKER_NAMES])
        for row in rows:
            writer.writerow(
                [row.subject_id, row.visit_code]
                + [("NA" if row.values.get(n) is None else f"{row.values[n]:.6f}")
                   for n in BIOMARKER_NAMES])


def write_labels(path, labels: dict[str, int]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "label"])
        for sid in sorted(labels):
            writer.writerow([sid, labels[sid]])


def load_labels(path) -> dict[str, int]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "subject_id" not in reader.fieldnames \
                or "label" not in reader.fieldnames:
            raise SchemaError(f"{path}: expected subject_id,label header")
        return {rec["subject_id"]: int(rec["label"]) for rec in reader}


# ---------------------------------------------------------------------------
# forward fill
# ---------------------------------------------------------------------------

@dataclass
class FillRecord:
    visit_code: str
    source_visit: str


def forward_fill(visits: dict[str, object]) -> tuple[dict[str, object], list[FillRecord]]:
    """Complete the four visits by copying the most recent earlier visit.

    Only earlier visits are ever read.  Raises InputError when the baseline
    itself is missing; callers exclude the subject and log the reason.
    """
    if VISIT_ORDER[0] not in visits:
        raise InputError("baseline visit missing")
    filled: dict[str, object] = {}
    records: list[FillRecord] = []
    last_present = VISIT_ORDER[0]
    for code in VISIT_ORDER:
        if code in visits:
            filled[code] = visits[code]
            last_present = code
        else:
            filled[code] = visits[last_present]
            records.append(FillRecord(code, last_present))
    return filled, records


# ---------------------------------------------------------------------------
# sequence assembly and normalization
# ---------------------------------------------------------------------------

def _fill_missing_fields(per_visit: dict[str, dict[str, float | None]],
                         subject_id: str) -> dict[str, dict[str, float]]:
    """Field-level forward fill (then backfill) for sparse biomarker values."""
    out: dict[str, dict[str, float]] = {code: {} for code in VISIT_ORDER}
    for name in BIOMARKER_NAMES:
        series = [per_visit[code].get(name) for code in VISIT_ORDER]
        last = None
        for i, v in enumerate(series):
            if v is not None:
                last = v
            elif last is not None:
                series[i] = last
        nxt = None
        for i in range(len(series) - 1, -1, -1):
            if series[i] is not None:
                nxt = series[i]
            else:
                series[i] = nxt
        if any(v is None for v in series):
            raise InputError(
                f"subject {subject_id}: biomarker {name} missing at every visit")
        for code, v in zip(VISIT_ORDER, series):
            out[code][name] = float(v)
    return out


def assemble_sequences(image_features: dict[tuple[str, str], np.ndarray],
                       biomarkers: list[BiomarkerRow],
                       labels: dict[str, int]) -> list[FeatureSequence]:
    """Raw (unnormalized) 4 x 273 sequences, ordered by subject id.

    Both modalities must cover all four visits after forward_fill; a subject
    with a missing modality raises InputError naming it.
    """
    bio_by_subject: dict[str, dict[str, dict[str, float | None]]] = {}
    for row in biomarkers:
        bio_by_subject.setdefault(row.subject_id, {})[row.visit_code] = row.values

    sequences = []
    for sid in sorted(labels):
        feats = {code: image_features.get((sid, code)) for code in VISIT_ORDER}
        present_feats = {c: f for c, f in feats.items() if f is not None}
        if sid not in bio_by_subject:
            raise InputError(f"subject {sid}: no biomarker rows")
        try:
            feats_filled, feat_fills = forward_fill(present_feats)
            bio_filled, bio_fills = forward_fill(bio_by_subject[sid])
        except InputError as exc:
            raise InputError(f"subject {sid}: {exc}") from None
        for rec in feat_fills + bio_fills:
            log.debug("subject %s: visit %s filled from %s", sid,
                      rec.visit_code, rec.source_visit)
        bio_complete = _fill_missing_fields(bio_filled, sid)
        rows = []
        for code in VISIT_ORDER:
            feat = np.asarray(feats_filled[code], dtype=np.float64)
            if feat.shape != (IMAGE_FEATURE_DIM,):
                raise InputError(
                    f"subject {sid} visit {code}: feature vector has shape"
                    f" {feat.shape}, expected ({IMAGE_FEATURE_DIM},)")
            bio_vec = np.array([bio_complete[code][n] for n in BIOMARKER_NAMES])
            rows.append(np.concatenate([feat, bio_vec]))
        sequences.append(FeatureSequence(sid, np.vstack(rows), int(labels[sid])))
    return sequences


@dataclass(frozen=True)
class NormStats:
    mean: np.ndarray
    std: np.ndarray


def fit_norm_stats(train_sequences: list[FeatureSequence]) -> NormStats:
    """Per-feature mean/std over all timepoints of the training split only."""
    if not train_sequences:
        raise InputError("cannot fit normalization on an empty split")
    stacked = np.concatenate([s.data for s in train_sequences], axis=0)
    std = stacked.std(axis=0)
    return NormStats(stacked.mean(axis=0), np.maximum(std, 1e-8))


def normalize_sequences(sequences: list[FeatureSequence],
                        stats: NormStats) -> list[FeatureSequence]:
    return [replace(s, data=(s.data - stats.mean) / stats.std) for s in sequences]


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def rotate_augment(image: np.ndarray, angle_deg: float) -> np.ndarray:
    """Rotate about the image centre with bilinear resampling, zero fill."""
    if abs(angle_deg) > 5.0:
        raise ConfigurationError(
            f"rotation angle {angle_deg} outside the allowed +/-5 degrees")
    if image.ndim != 3:
        raise InputError(f"expected a [C,H,W] image, got shape {image.shape}")
    _, h, w = image.shape
    theta = math.radians(angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    ys, xs = np.meshgrid(np.arange(h) - cy, np.arange(w) - cx, indexing="ij")
    # inverse mapping: rotate output coordinates by -theta
    src_y = cos_t * ys + sin_t * xs + cy
    src_x = -sin_t * ys + cos_t * xs + cx
    y0 = np.floor(src_y).astype(np.intp)
    x0 = np.floor(src_x).astype(np.intp)
    fy, fx = src_y - y0, src_x - x0
    out = np.zeros_like(image)
    for dy, dx, wgt in ((0, 0, (1 - fy) * (1 - fx)), (0, 1, (1 - fy) * fx),
                        (1, 0, fy * (1 - fx)), (1, 1, fy * fx)):
        yy, xx = y0 + dy, x0 + dx
        valid = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
        yc, xc = np.clip(yy, 0, h - 1), np.clip(xx, 0, w - 1)
        out += image[:, yc, xc] * (wgt * valid)
    return out


def rebalance(sequences: list[FeatureSequence],
              augmented_pool: list[FeatureSequence],
              multiplier: int | None = None) -> list[FeatureSequence]:
    """Append augmented copies of every minority subject until near-balance.

    The pool holds pre-extracted augmented sequences keyed by
    (source_subject_id, variant); each minority subject contributes variants
    1..multiplier-1.  With counts within one multiple already, the input is
    returned unchanged.
    """
    counts = {0: 0, 1: 0}
    for s in sequences:
        if s.augmented:
            raise InputError("rebalance expects base sequences only")
        counts[s.label] += 1
    if counts[0] == 0 or counts[1] == 0:
        raise InputError(f"both classes must be present, got counts {counts}")
    minority = 0 if counts[0] < counts[1] else 1
    if multiplier is None:
        multiplier = math.ceil(counts[1 - minority] / counts[minority])
    if multiplier <= 1:
        return list(sequences)
    pool = {(s.source_subject_id, s.variant): s for s in augmented_pool}
    out = list(sequences)
    for s in sequences:
        if s.label != minority:
            continue
        for variant in range(1, multiplier):
            key = (s.subject_id, variant)
            if key not in pool:
                raise InputError(
                    f"no augmented variant {variant} for subject {s.subject_id};"
                    f" extract features with enough augment variants")
            aug = pool[key]
            if not aug.augmented or aug.label != s.label:
                raise InputError(f"augmented pool entry {key} is inconsistent")
            out.append(aug)
    return out


# ---------------------------------------------------------------------------
# cross-validation folds
# ---------------------------------------------------------------------------

def kfold_split(subjects: dict[str, int] | list[tuple[str, int]], k: int = 5,
                seed: int = 0) -> list[tuple[list[str], list[str]]]:
    """Subject-level stratified folds: list of (train_ids, val_ids).

    Each subject appears in exactly one validation fold; per-class shuffling
    is seeded, and classes are dealt round-robin so fold class ratios stay
    within one subject of the global ratio.
    """
    items = sorted(dict(subjects).items())
    if k < 2:
        raise ConfigurationError(f"k must be >= 2, got {k}")
    if len(items) < k:
        raise ConfigurationError(f"{len(items)} subjects cannot fill {k} folds")
    by_class: dict[int, list[str]] = {}
    for sid, label in items:
        by_class.setdefault(label, []).append(sid)
    for label, members in sorted(by_class.items()):
        if len(members) < k:
            raise ConfigurationError(
                f"class {label} has only {len(members)} subjects; use a"
                f" smaller k than {k}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                       spawn_key=(7,)))
    val_folds: list[list[str]] = [[] for _ in range(k)]
    offset = 0
    for label in sorted(by_class):
        members = list(by_class[label])
        rng.shuffle(members)
        for i, sid in enumerate(members):
            val_folds[(i + offset) % k].append(sid)
        offset = (offset + len(members)) % k
    all_ids = {sid for sid, _ in items}
    folds = []
    for val in val_folds:
        val_sorted = sorted(val)
        train_sorted = sorted(all_ids.difference(val))
        folds.append((train_sorted, val_sorted))
    return folds


# ---------------------------------------------------------------------------
# synthetic cohorts
# ---------------------------------------------------------------------------

# name -> (baseline mean, baseline sd, stable slope/visit, progressive slope/visit, visit noise sd)
BIOMARKER_MODEL: dict[str, tuple[float, float, float, float, float]] = {
    "CDRSB": (1.5, 0.8, 0.10, 0.90, 0.35),
    "ADAS11": (9.0, 3.0, 0.20, 2.20, 1.20),
    "ADAS13": (15.0, 4.0, 0.30, 3.00, 1.50),
    "ADASQ4": (4.0, 1.5, 0.10, 0.90, 0.60),
    "MMSE": (27.5, 1.6, -0.10, -1.10, 0.70),
    "RAVLT_immediate": (35.0, 8.0, -0.40, -3.20, 2.50),
    "RAVLT_learning": (4.5, 1.8, -0.05, -0.50, 0.80),
    "RAVLT_forgetting": (4.2, 1.8, 0.05, 0.55, 0.80),
    "RAVLT_perc_forgetting": (55.0, 22.0, 1.00, 8.00, 6.00),
    "FAQ": (3.5, 2.5, 0.20, 2.00, 1.10),
    "Ventricles": (38_000.0, 9_000.0, 300.0, 1_800.0, 700.0),
    "Hippocampus": (6_800.0, 650.0, -25.0, -190.0, 60.0),
    "WholeBrain": (1.02e6, 8.0e4, -1_200.0, -6_500.0, 2_500.0),
    "Entorhinal": (3_600.0, 450.0, -15.0, -120.0, 50.0),
    "Fusiform": (17_500.0, 1_600.0, -30.0, -220.0, 90.0),
    "MidTemp": (19_500.0, 1_800.0, -35.0, -260.0, 100.0),
    "ICV": (1.53e6, 1.4e5, 0.0, 0.0, 1_200.0),
}


@dataclass(frozen=True)
class SyntheticCohortConfig:
    """Progression cohort: sMCI/pMCI subjects with four visits each."""

    n_smci: int = 390
    n_pmci: int = 140
    seed: int = 0
    image_side: int = 64
    smci_atrophy: tuple[float, float] = (0.010, 0.004)
    pmci_atrophy: tuple[float, float] = (0.045, 0.010)
    biomarker_separation: float = 1.0
    biomarker_noise: float = 1.0
    image_noise: float = 0.02
    label_noise: float = 0.0

    def __post_init__(self):
        if self.n_smci < 0 or self.n_pmci < 0:
            raise ConfigurationError("subject counts must be >= 0")
        if not 0.0 <= self.label_noise <= 1.0:
            raise ConfigurationError("label noise must be a probability")

    def null_signal(self) -> "SyntheticCohortConfig":
        """Class-indistinguishable variant: identical trajectories per class."""
        return replace(self, pmci_atrophy=self.smci_atrophy,
                       biomarker_separation=0.0)


@dataclass(frozen=True)
class DiagnosisCohortConfig:
    """Three-class (CN/MCI/AD) single-visit cohort for Phase-1 training."""

    n_cn: int = 30
    n_mci: int = 30
    n_ad: int = 30
    seed: int = 0
    image_side: int = 64
    radii: tuple[float, float, float] = (0.36, 0.30, 0.24)
    radius_sd: float = 0.02
    image_noise: float = 0.02


@dataclass
class SyntheticCohort:
    images: dict[tuple[str, str], np.ndarray]
    biomarkers: list[BiomarkerRow]
    labels: dict[str, int]
    config: SyntheticCohortConfig = None


def _subject_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(index,)))


def _phantom_image(side: int, radius: float, rng: np.random.Generator,
                   texture: np.ndarray, noise_sd: float) -> np.ndarray:
    """Soft disc on a gradient background with per-subject texture."""
    ax = np.linspace(-1.0, 1.0, side)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    dist = np.sqrt(yy * yy + xx * xx)
    blob = 1.0 / (1.0 + np.exp((dist - radius) / 0.08))
    background = 0.15 + 0.10 * xx
    channel_weights = (1.0, 0.85, 0.70)
    img = np.stack([background + w * blob + texture for w in channel_weights])
    if noise_sd > 0:
        img = img + noise_sd * rng.standard_normal(img.shape)
    return img


def _subject_texture(side: int, rng: np.random.Generator) -> np.ndarray:
    ax = np.linspace(0.0, 1.0, side)
    yy, xx = np.meshgrid(ax, ax, indexing="ij")
    texture = np.zeros((side, side))
    for _ in range(3):
        fy, fx = rng.uniform(2.0, 7.0, size=2)
        py, px = rng.uniform(0.0, 2 * np.pi, size=2)
        texture += rng.uniform(0.02, 0.05) * np.sin(fy * yy * np.pi + py) \
            * np.sin(fx * xx * np.pi + px)
    return texture


def synth_generate(cfg: SyntheticCohortConfig) -> SyntheticCohort:
    """Deterministic progression cohort: images, biomarker rows, labels."""
    images: dict[tuple[str, str], np.ndarray] = {}
    rows: list[BiomarkerRow] = []
    labels: dict[str, int] = {}
    total = cfg.n_smci + cfg.n_pmci
    for idx in range(total):
        sid = f"S{idx:04d}"
        progressive = idx >= cfg.n_smci
        rng = _subject_rng(cfg.seed, idx)
        atrophy_mean, atrophy_sd = (cfg.pmci_atrophy if progressive
                                    else cfg.smci_atrophy)
        rate = max(0.0, rng.normal(atrophy_mean, atrophy_sd))
        base_radius = rng.normal(0.30, 0.025)
        texture = _subject_texture(cfg.image_side, rng)
        baselines = {}
        for name, (mu, sd, *_rest) in BIOMARKER_MODEL.items():
            baselines[name] = rng.normal(mu, sd)
        label = 1 if progressive else 0
        if cfg.label_noise > 0 and rng.random() < cfg.label_noise:
            label = 1 - label
        labels[sid] = label
        for t, code in enumerate(VISIT_ORDER):
            radius = base_radius * (1.0 - rate * t)
            images[(sid, code)] = _phantom_image(
                cfg.image_side, radius, rng, texture, cfg.image_noise)
            values = {}
            for name, (_mu, _sd, slope_s, slope_p, noise) in BIOMARKER_MODEL.items():
                slope = slope_s
                if progressive:
                    slope = slope_s + cfg.biomarker_separation * (slope_p - slope_s)
                values[name] = (baselines[name] + slope * t
                                + cfg.biomarker_noise * noise * rng.standard_normal())
            rows.append(BiomarkerRow(sid, code, values))
    return SyntheticCohort(images, rows, labels, cfg)


def synth_diagnosis(cfg: DiagnosisCohortConfig) -> tuple[dict[str, np.ndarray],
                                                         dict[str, int]]:
    """Three-class single-visit cohort (images keyed by subject id)."""
    images: dict[str, np.ndarray] = {}
    labels: dict[str, int] = {}
    counts = (cfg.n_cn, cfg.n_mci, cfg.n_ad)
    idx = 0
    for cls, n in enumerate(counts):
        for _ in range(n):
            sid = f"D{idx:04d}"
            rng = _subject_rng(cfg.seed + 1_000_003, idx)
            radius = rng.normal(cfg.radii[cls], cfg.radius_sd)
            texture = _subject_texture(cfg.image_side, rng)
            images[sid] = _phantom_image(cfg.image_side, radius, rng, texture,
                                         cfg.image_noise)
            labels[sid] = cls
            idx += 1
    return images, labels


def normalize_image(image: np.ndarray) -> np.ndarray:
    """Zero-mean unit-variance scaling of one image."""
    std = image.std()
    return (image - image.mean()) / (std if std > 1e-12 else 1.0)


# ---------------------------------------------------------------------------
# feature cache files
# ---------------------------------------------------------------------------

_FEATURE_COLS = [f"f{i:03d}" for i in range(IMAGE_FEATURE_DIM)]


def write_feature_cache(path, features: dict[tuple[str, str], np.ndarray]) -> None:
    """One row per subject-visit: subject_id, visit_code, f000..f255."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "visit_code", *_FEATURE_COLS])
        for (sid, code) in sorted(features):
            vec = features[(sid, code)]
            writer.writerow([sid, code, *(f"{v:.12g}" for v in vec)])


def load_feature_cache(path) -> dict[tuple[str, str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "visit_code", *_FEATURE_COLS]:
            raise SchemaError(f"{path}: unexpected feature cache header")
        out = {}
        for rec in reader:
            out[(rec[0], rec[1])] = np.array([float(v) for v in rec[2:]])
    return out


def write_augmented_cache(path,
                          features: dict[tuple[str, int, str], np.ndarray]) -> None:
    """Augmented variants: subject_id, variant, visit_code, f000..f255."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["subject_id", "variant", "visit_code", *_FEATURE_COLS])
        for (sid, variant, code) in sorted(features):
            vec = features[(sid, variant, code)]
            writer.writerow([sid, variant, code, *(f"{v:.12g}" for v in vec)])


def load_augmented_cache(path) -> dict[tuple[str, int, str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["subject_id", "variant", "visit_code", *_FEATURE_COLS]:
            raise SchemaError(f"{path}: unexpected augmented cache header")
        out = {}
        for rec in reader:
            out[(rec[0], int(rec[1]), rec[2])] = np.array([float(v) for v in rec[3:]])
    return out


def augmented_pool_from_caches(augmented: dict[tuple[str, int, str], np.ndarray],
                               biomarkers: list[BiomarkerRow],
                               labels: dict[str, int]) -> list[FeatureSequence]:
    """Assemble augmented FeatureSequences: rotated image features, same biomarkers."""
    variants = sorted({(sid, var) for (sid, var, _code) in augmented})
    pool = []
    for sid, var in variants:
        feats = {(sid, code): augmented.get((sid, var, code))
                 for code in VISIT_ORDER}
        feats = {k: v for k, v in feats.items() if v is not None}
        rows = [r for r in biomarkers if r.subject_id == sid]
        seqs = assemble_sequences(feats, rows, {sid: labels[sid]})
        for seq in seqs:
            pool.append(replace(seq, augmented=True, source_subject_id=sid,
                                variant=var))
    return pool

