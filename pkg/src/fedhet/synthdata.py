"""Synthetic density-attributed cohorts and all patient-level splits.

Patients carry a four-category breast-density score (A-D), renderable
images with lesion bounding boxes, and a derived stratum label used by
every split: dev/test, k-fold CV, density-disjoint client partitions,
and population-matched client partitions. Lesion visibility decreases
with density via a per-category contrast multiplier, which is what
induces the client heterogeneity downstream.
"""

from __future__ import annotations

import csv
import io
import zipfile
from dataclasses import dataclass, field, replace

import numpy as np

DENSITIES = ("A", "B", "C", "D")
LESION_TYPES = ("mass", "calcification", "other")
PATHOLOGIES = ("benign", "malignant")
PRIORITY_CLASSES = ("malignant", "benign_mass_or_calc", "other_benign", "normal")
PATCH_LABELS = ("NM", "BM", "BC", "MM", "MC")

ARCHIVE_MAGIC = "FHSIM1"


class ConfigError(ValueError):
    """Invalid generator or split configuration."""


class InfeasiblePartitionError(ValueError):
    """Population targets cannot be met by the available patient pool."""

    def __init__(self, message: str, achievable: dict[str, float]):
        super().__init__(message)
        self.achievable = achievable


@dataclass(frozen=True)
class LesionBox:
    x: int
    y: int
    w: int
    h: int
    lesion_type: str = "mass"
    pathology: str = "benign"

    def __post_init__(self):
        if self.w <= 0 or self.h <= 0:
            raise ValueError("lesion box must have positive size")
        if self.lesion_type not in LESION_TYPES:
            raise ValueError(f"unknown lesion type {self.lesion_type!r}")
        if self.pathology not in PATHOLOGIES:
            raise ValueError(f"unknown pathology {self.pathology!r}")


def iou(a, b) -> float:
    """Intersection over union of two (x, y, w, h) boxes; 0 for disjoint."""
    ax, ay, aw, ah = a.x, a.y, a.w, a.h
    bx, by, bw, bh = b.x, b.y, b.w, b.h
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    if inter == 0:
        return 0.0
    union = aw * ah + bw * bh - inter
    return inter / union


@dataclass
class ImageRecord:
    pixels: np.ndarray
    lesions: list[LesionBox] = field(default_factory=list)

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        h, w = self.pixels.shape
        for box in self.lesions:
            if box.x < 0 or box.y < 0 or box.x + box.w > w or box.y + box.h > h:
                raise ValueError("lesion box outside the pixel grid")

    @property
    def image_label(self) -> int:
        return int(any(b.pathology == "malignant" for b in self.lesions))


@dataclass(frozen=True)
class StratumLabel:
    priority_class: str
    lesion_type: str | None
    density: str

    def key(self) -> tuple:
        return (self.priority_class, self.lesion_type or "", self.density)


@dataclass
class PatientRecord:
    patient_id: int
    density: str
    images: list[ImageRecord]

    def __post_init__(self):
        if self.density not in DENSITIES:
            raise ValueError(f"unknown density {self.density!r}")
        if not self.images:
            raise ValueError("patient must have at least one image")

    @property
    def stratum(self) -> StratumLabel:
        return assign_priority_label(self)


@dataclass
class Cohort:
    patients: list[PatientRecord]

    def __post_init__(self):
        ids = [p.patient_id for p in self.patients]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate patient_id in cohort")

    def __len__(self):
        return len(self.patients)

    def patient_ids(self) -> list[int]:
        return [p.patient_id for p in self.patients]

    def density_counts(self) -> dict[str, int]:
        counts = {d: 0 for d in DENSITIES}
        for p in self.patients:
            counts[p.density] += 1
        return counts

    def density_distribution(self) -> dict[str, float]:
        n = max(len(self.patients), 1)
        return {d: c / n for d, c in self.density_counts().items()}


@dataclass(frozen=True)
class Patch:
    pixels: np.ndarray
    label: str
    source_image: tuple[int, int]
    box: LesionBox

    def __post_init__(self):
        if self.label not in PATCH_LABELS:
            raise ValueError(f"unknown patch label {self.label!r}")


@dataclass(frozen=True)
class GeneratorConfig:
    n_patients: int = 200
    density_marginal: tuple[float, float, float, float] = (0.10, 0.40, 0.40, 0.10)
    lesion_prevalence: float = 0.55
    contrast_by_density: tuple[float, float, float, float] = (1.0, 0.8, 0.55, 0.35)
    noise_sigma: float = 0.06
    image_size: int = 64
    patch_size: int = 16
    images_per_patient: int = 2
    malignant_fraction: float = 0.5

    def __post_init__(self):
        if self.n_patients < 1:
            raise ConfigError("n_patients must be positive")
        if abs(sum(self.density_marginal) - 1.0) > 1e-9:
            raise ConfigError("density_marginal must sum to 1")
        if any(m < 0 for m in self.density_marginal):
            raise ConfigError("density_marginal entries must be non-negative")
        if not all(
            a > b for a, b in zip(self.contrast_by_density, self.contrast_by_density[1:])
        ):
            raise ConfigError("contrast_by_density must strictly decrease from A to D")
        if not 0.0 <= self.lesion_prevalence <= 1.0:
            raise ConfigError("lesion_prevalence must be a probability")
        if self.patch_size > self.image_size:
            raise ConfigError("patch_size cannot exceed image_size")


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def _render_lesion(pixels: np.ndarray, box: LesionBox, amplitude: float, rng) -> None:
    ys = np.arange(box.y, box.y + box.h)
    xs = np.arange(box.x, box.x + box.w)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    cy = box.y + (box.h - 1) / 2.0
    cx = box.x + (box.w - 1) / 2.0
    if box.lesion_type == "mass":
        # smooth radial blob filling the box
        r2 = ((yy - cy) / (box.h / 2.0)) ** 2 + ((xx - cx) / (box.w / 2.0)) ** 2
        profile = np.exp(-2.0 * r2)
    elif box.lesion_type == "calcification":
        # scattered bright speckles
        profile = np.zeros((box.h, box.w))
        n_spots = max(3, (box.h * box.w) // 12)
        sy = rng.integers(0, box.h, n_spots)
        sx = rng.integers(0, box.w, n_spots)
        profile[sy, sx] = 1.3
    else:
        # faint uniform fill for architectural-distortion-like findings
        profile = np.full((box.h, box.w), 0.5)
    pixels[box.y : box.y + box.h, box.x : box.x + box.w] += amplitude * profile


def _sample_lesion(cfg: GeneratorConfig, rng) -> LesionBox:
    size = cfg.image_size
    lo, hi = max(4, size // 6), max(6, size // 3)
    w = int(rng.integers(lo, hi + 1))
    h = int(rng.integers(lo, hi + 1))
    x = int(rng.integers(0, size - w + 1))
    y = int(rng.integers(0, size - h + 1))
    u = rng.random()
    if u < 0.45:
        lesion_type = "mass"
    elif u < 0.90:
        lesion_type = "calcification"
    else:
        lesion_type = "other"
    if lesion_type == "other":
        pathology = "benign"
    else:
        pathology = "malignant" if rng.random() < cfg.malignant_fraction else "benign"
    return LesionBox(x, y, w, h, lesion_type, pathology)


_TEXTURE_BLOBS_BY_DENSITY = (0, 0, 6, 9)
_TEXTURE_AMPLITUDE = 0.3


def _render_texture(pixels: np.ndarray, size: int, density_idx: int, rng) -> None:
    """Fibroglandular-like clutter: soft bright blobs, more of them the denser
    the breast. They carry no label, so they mask lesions rather than mark
    them -- the mechanism that makes dense images hard."""
    for _ in range(_TEXTURE_BLOBS_BY_DENSITY[density_idx]):
        lo, hi = max(4, size // 6), max(6, size // 3)
        w = int(rng.integers(lo, hi + 1))
        h = int(rng.integers(lo, hi + 1))
        x = int(rng.integers(0, size - w + 1))
        y = int(rng.integers(0, size - h + 1))
        yy, xx = np.meshgrid(np.arange(y, y + h), np.arange(x, x + w), indexing="ij")
        cy, cx = y + (h - 1) / 2.0, x + (w - 1) / 2.0
        r2 = ((yy - cy) / (h / 2.0)) ** 2 + ((xx - cx) / (w / 2.0)) ** 2
        pixels[y : y + h, x : x + w] += _TEXTURE_AMPLITUDE * np.exp(-2.0 * r2)


def _render_image(cfg: GeneratorConfig, density_idx: int, rng) -> ImageRecord:
    size = cfg.image_size
    base = 0.25 + 0.08 * density_idx
    pixels = base + rng.normal(0.0, cfg.noise_sigma, (size, size))
    _render_texture(pixels, size, density_idx, rng)
    lesions: list[LesionBox] = []
    if rng.random() < cfg.lesion_prevalence:
        box = _sample_lesion(cfg, rng)
        contrast = cfg.contrast_by_density[density_idx]
        amplitude = 0.55 * contrast * (1.0 if box.pathology == "malignant" else 0.5)
        _render_lesion(pixels, box, amplitude, rng)
        lesions.append(box)
    np.clip(pixels, 0.0, 1.0, out=pixels)
    return ImageRecord(pixels=pixels.astype(np.float32), lesions=lesions)


def generate_cohort(cfg: GeneratorConfig, seed: int) -> Cohort:
    """Deterministically generate ``cfg.n_patients`` synthetic patients."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x5D47]))
    marginal = np.asarray(cfg.density_marginal)
    patients = []
    for pid in range(cfg.n_patients):
        density_idx = int(rng.choice(4, p=marginal))
        images = [
            _render_image(cfg, density_idx, rng) for _ in range(cfg.images_per_patient)
        ]
        patients.append(
            PatientRecord(patient_id=pid, density=DENSITIES[density_idx], images=images)
        )
    return Cohort(patients)


# ---------------------------------------------------------------------------
# stratum labels and splitting
# ---------------------------------------------------------------------------


def assign_priority_label(patient: PatientRecord) -> StratumLabel:
    """Patient-level split label, highest-priority lesion first.

    Priority: malignant lesion > benign mass/calcification > other benign
    finding > normal. A patient is normal only if every image is
    lesion-free. Among lesions tied at the winning priority, the lesion
    type is chosen in fixed (mass, calcification, other) order.
    """
    lesions = [box for img in patient.images for box in img.lesions]
    if not lesions:
        return StratumLabel("normal", None, patient.density)
    malignant = [b for b in lesions if b.pathology == "malignant"]
    if malignant:
        chosen = min(malignant, key=lambda b: LESION_TYPES.index(b.lesion_type))
        return StratumLabel("malignant", chosen.lesion_type, patient.density)
    benign_mc = [b for b in lesions if b.lesion_type in ("mass", "calcification")]
    if benign_mc:
        chosen = min(benign_mc, key=lambda b: LESION_TYPES.index(b.lesion_type))
        return StratumLabel("benign_mass_or_calc", chosen.lesion_type, patient.density)
    return StratumLabel("other_benign", "other", patient.density)


def _strata(cohort: Cohort) -> dict[tuple, list[PatientRecord]]:
    groups: dict[tuple, list[PatientRecord]] = {}
    for p in sorted(cohort.patients, key=lambda q: q.patient_id):
        groups.setdefault(p.stratum.key(), []).append(p)
    return dict(sorted(groups.items()))


def _largest_remainder_counts(
    n: int, fractions: list[float], class_so_far: list[int]
) -> list[int]:
    """Apportion n items to parts by largest remainder.

    Exact remainder ties go to the part that has so far received the
    fewest patients of the stratum's lesion class (``class_so_far``),
    then to the lowest part index.
    """
    ideals = [n * f for f in fractions]
    counts = [int(np.floor(v + 1e-12)) for v in ideals]
    remainders = [v - c for v, c in zip(ideals, counts)]
    leftover = n - sum(counts)
    order = sorted(
        range(len(fractions)),
        key=lambda j: (-round(remainders[j], 12), class_so_far[j], j),
    )
    for j in order[:leftover]:
        counts[j] += 1
    return counts


def stratified_split(cohort: Cohort, fractions, seed: int) -> list[Cohort]:
    """Patient-level stratified split into len(fractions) disjoint cohorts."""
    fractions = list(fractions)
    if len(fractions) < 2:
        raise ConfigError("need at least two fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError("fractions must sum to 1")
    if not cohort.patients:
        raise ConfigError("cannot split an empty cohort")
    parts: list[list[PatientRecord]] = [[] for _ in fractions]
    # per-part count of patients sharing the current stratum's lesion class,
    # maintained across strata for deterministic remainder tie-breaking
    class_counts: list[dict[str, int]] = [dict() for _ in fractions]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x51F7]))
    for key, patients in _strata(cohort).items():
        lesion_class = key[0]
        so_far = [c.get(lesion_class, 0) for c in class_counts]
        counts = _largest_remainder_counts(len(patients), fractions, so_far)
        order = rng.permutation(len(patients))
        shuffled = [patients[i] for i in order]
        start = 0
        for j, c in enumerate(counts):
            parts[j].extend(shuffled[start : start + c])
            class_counts[j][lesion_class] = class_counts[j].get(lesion_class, 0) + c
            start += c
    return [Cohort(sorted(p, key=lambda q: q.patient_id)) for p in parts]


def kfold_splits(dev: Cohort, k: int, seed: int) -> list[tuple[Cohort, Cohort]]:
    """k stratified folds; each patient validates in exactly one fold."""
    if k < 2:
        raise ConfigError("k must be at least 2")
    if k > len(dev.patients):
        raise ConfigError(f"k={k} exceeds patient count {len(dev.patients)}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x6B66]))
    fold_members: list[list[PatientRecord]] = [[] for _ in range(k)]
    offset = 0
    for _key, patients in _strata(dev).items():
        order = rng.permutation(len(patients))
        for i, idx in enumerate(order):
            fold_members[(offset + i) % k].append(patients[idx])
        offset += len(patients)
    splits = []
    for f in range(k):
        val = sorted(fold_members[f], key=lambda p: p.patient_id)
        train = sorted(
            (p for g in range(k) if g != f for p in fold_members[g]),
            key=lambda p: p.patient_id,
        )
        splits.append((Cohort(train), Cohort(val)))
    return splits


STRONG2_GROUPS = (("A", "B"), ("C", "D"))


def partition_strong(dev: Cohort, n_clients: int) -> list[Cohort]:
    """Density-disjoint clients: 2 -> {A,B} vs {C,D}; 4 -> one density each."""
    if not dev.patients:
        raise ConfigError("cannot partition an empty cohort")
    if n_clients == 2:
        groups = STRONG2_GROUPS
    elif n_clients == 4:
        groups = tuple((d,) for d in DENSITIES)
    else:
        raise ConfigError("strong partition supports 2 or 4 clients")
    counts = dev.density_counts()
    clients = []
    for allowed in groups:
        missing = [d for d in allowed if counts[d] == 0]
        if missing:
            raise ConfigError(
                f"density {'/'.join(missing)} absent from the development cohort"
            )
        members = [p for p in dev.patients if p.density in allowed]
        clients.append(Cohort(sorted(members, key=lambda p: p.patient_id)))
    return clients


def partition_population(dev: Cohort, targets, seed: int) -> list[Cohort]:
    """Split dev into equally sized clients matching target density mixes.

    Greedy largest-deficit assignment: patients are processed in a seeded
    shuffled order and each goes to the client (with remaining capacity)
    whose quota for the patient's density is furthest from being met.
    """
    targets = [tuple(t) for t in targets]
    for t in targets:
        if len(t) != 4 or abs(sum(t) - 1.0) > 1e-9:
            raise ConfigError("each target must be a 4-vector summing to 1")
    if not dev.patients:
        raise ConfigError("cannot partition an empty cohort")
    m = len(targets)
    n = len(dev.patients)
    sizes = [n // m + (1 if c < n % m else 0) for c in range(m)]

    pool = dev.density_counts()
    needed = {
        d: sum(t[di] * sizes[c] for c, t in enumerate(targets))
        for di, d in enumerate(DENSITIES)
    }
    achievable = dev.density_distribution()
    for d in DENSITIES:
        if needed[d] - pool[d] > 0.025 * n:
            raise InfeasiblePartitionError(
                f"pool lacks patients of density {d}: need ~{needed[d]:.1f}, "
                f"have {pool[d]}; achievable pool distribution {achievable}",
                achievable,
            )

    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x9097]))
    order = rng.permutation(n)
    patients = sorted(dev.patients, key=lambda p: p.patient_id)
    assigned: list[list[PatientRecord]] = [[] for _ in range(m)]
    density_assigned = [dict.fromkeys(DENSITIES, 0) for _ in range(m)]
    class_assigned: list[dict[str, int]] = [dict() for _ in range(m)]
    for idx in order:
        patient = patients[idx]
        di = DENSITIES.index(patient.density)
        lesion_class = patient.stratum.priority_class
        candidates = [c for c in range(m) if len(assigned[c]) < sizes[c]]
        def deficit(c):
            quota = targets[c][di] * sizes[c]
            return quota - density_assigned[c][patient.density]
        best = max(
            candidates,
            key=lambda c: (round(deficit(c), 9), -class_assigned[c].get(lesion_class, 0), -c),
        )
        assigned[best].append(patient)
        density_assigned[best][patient.density] += 1
        class_assigned[best][lesion_class] = class_assigned[best].get(lesion_class, 0) + 1
    return [Cohort(sorted(a, key=lambda p: p.patient_id)) for a in assigned]


def density_l1(cohort: Cohort, target) -> float:
    dist = cohort.density_distribution()
    return sum(abs(dist[d] - target[i]) for i, d in enumerate(DENSITIES))


# ---------------------------------------------------------------------------
# patch extraction
# ---------------------------------------------------------------------------

_PATCH_LABELS_BY_LESION = {
    ("mass", "benign"): "BM",
    ("calcification", "benign"): "BC",
    ("mass", "malignant"): "MM",
    ("calcification", "malignant"): "MC",
}

MAX_PATCH_ATTEMPTS = 10
PATCHES_PER_LESION = 5


def _clip_center(c: int, patch: int, limit: int) -> int:
    lo = patch // 2
    hi = limit - (patch - patch // 2)
    return int(min(max(c, lo), lo if hi < lo else hi))


def _patch_box(cx: int, cy: int, patch: int, size: int) -> LesionBox:
    x = min(max(cx - patch // 2, 0), size - patch)
    y = min(max(cy - patch // 2, 0), size - patch)
    return LesionBox(x, y, patch, patch)


def extract_patches(
    image: ImageRecord,
    seed: int,
    patch_size: int = 16,
    source_image: tuple[int, int] = (0, 0),
) -> list[Patch]:
    """One lesion-free patch plus up to 5 patches per mass/calcification.

    Candidates overlapping an accepted patch with IoU > 0.5 are
    discarded; each slot is retried at most 10 times, then skipped.
    """
    h, w = image.pixels.shape
    if patch_size > h or patch_size > w:
        raise ConfigError("image smaller than patch size")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, 0x9A7C]))
    accepted: list[Patch] = []

    def crop(box: LesionBox) -> np.ndarray:
        return image.pixels[box.y : box.y + box.h, box.x : box.x + box.w].copy()

    # one normal patch: random location avoiding every lesion box
    for _ in range(MAX_PATCH_ATTEMPTS):
        x = int(rng.integers(0, w - patch_size + 1))
        y = int(rng.integers(0, h - patch_size + 1))
        box = LesionBox(x, y, patch_size, patch_size)
        if any(iou(box, lesion) > 0.0 for lesion in image.lesions):
            continue
        accepted.append(Patch(crop(box), "NM", source_image, box))
        break

    for lesion in image.lesions:
        label = _PATCH_LABELS_BY_LESION.get((lesion.lesion_type, lesion.pathology))
        if label is None:  # 'other' findings are not patch-sampled
            continue
        for _slot in range(PATCHES_PER_LESION):
            for _ in range(MAX_PATCH_ATTEMPTS):
                cx = int(rng.integers(lesion.x, lesion.x + lesion.w))
                cy = int(rng.integers(lesion.y, lesion.y + lesion.h))
                box = _patch_box(cx, cy, patch_size, w)
                if any(iou(box, p.box) > 0.5 for p in accepted):
                    continue
                accepted.append(Patch(crop(box), label, source_image, box))
                break
    return accepted


def cohort_patches(cohort: Cohort, seed: int, patch_size: int = 16) -> list[Patch]:
    """All patches over a cohort, with per-image derived seeds."""
    patches = []
    for patient in cohort.patients:
        for i, image in enumerate(patient.images):
            sub = (int(seed) & 0xFFFFFF) * 1000003 + patient.patient_id * 31 + i
            patches.extend(
                extract_patches(
                    image, sub, patch_size, source_image=(patient.patient_id, i)
                )
            )
    return patches


# ---------------------------------------------------------------------------
# archive format: zip of CSV tables + raw little-endian float32 image blob
# ---------------------------------------------------------------------------


def save_cohort(cohort: Cohort, path) -> None:
    patients_csv = io.StringIO()
    pw = csv.writer(patients_csv)
    pw.writerow(["patient_id", "density", "priority_class", "lesion_type"])
    lesions_csv = io.StringIO()
    lw = csv.writer(lesions_csv)
    lw.writerow(["patient_id", "image_idx", "x", "y", "w", "h", "lesion_type", "pathology"])
    index_csv = io.StringIO()
    iw = csv.writer(index_csv)
    iw.writerow(["patient_id", "image_idx", "height", "width", "offset"])

    blob = io.BytesIO()
    offset = 0
    for p in cohort.patients:
        s = p.stratum
        pw.writerow([p.patient_id, p.density, s.priority_class, s.lesion_type or ""])
        for i, img in enumerate(p.images):
            h, w = img.pixels.shape
            iw.writerow([p.patient_id, i, h, w, offset])
            raw = img.pixels.astype("<f4").tobytes()
            blob.write(raw)
            offset += len(raw)
            for box in img.lesions:
                lw.writerow(
                    [p.patient_id, i, box.x, box.y, box.w, box.h, box.lesion_type, box.pathology]
                )
    with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("MAGIC", ARCHIVE_MAGIC + "\n")
        zf.writestr("patients.csv", patients_csv.getvalue())
        zf.writestr("lesions.csv", lesions_csv.getvalue())
        zf.writestr("images.csv", index_csv.getvalue())
        zf.writestr("images.bin", blob.getvalue())


def load_cohort(path) -> Cohort:
    with zipfile.ZipFile(path) as zf:
        magic = zf.read("MAGIC").decode("ascii").strip()
        if magic != ARCHIVE_MAGIC:
            raise ValueError(f"{path}: bad archive magic {magic!r}")
        patients_rows = list(csv.DictReader(io.StringIO(zf.read("patients.csv").decode())))
        lesion_rows = list(csv.DictReader(io.StringIO(zf.read("lesions.csv").decode())))
        index_rows = list(csv.DictReader(io.StringIO(zf.read("images.csv").decode())))
        blob = zf.read("images.bin")

    lesions_by_image: dict[tuple[int, int], list[LesionBox]] = {}
    for row in lesion_rows:
        key = (int(row["patient_id"]), int(row["image_idx"]))
        lesions_by_image.setdefault(key, []).append(
            LesionBox(
                int(row["x"]), int(row["y"]), int(row["w"]), int(row["h"]),
                row["lesion_type"], row["pathology"],
            )
        )
    images_by_patient: dict[int, list[ImageRecord]] = {}
    for row in index_rows:
        pid, idx = int(row["patient_id"]), int(row["image_idx"])
        h, w = int(row["height"]), int(row["width"])
        offset = int(row["offset"])
        pixels = np.frombuffer(blob, dtype="<f4", count=h * w, offset=offset).reshape(h, w)
        images_by_patient.setdefault(pid, []).append(
            ImageRecord(pixels=pixels.copy(), lesions=lesions_by_image.get((pid, idx), []))
        )
    patients = [
        PatientRecord(int(row["patient_id"]), row["density"], images_by_patient[int(row["patient_id"])])
        for row in patients_rows
    ]
    return Cohort(patients)


def default_population_targets() -> list[tuple[float, float, float, float]]:
    """Dense fractions 0.660 (Asian-like) and 0.455 (White-like), spread over
    C/D and A/B proportionally to the default density marginal."""
    def spread(dense: float) -> tuple[float, float, float, float]:
        return (0.2 * (1 - dense), 0.8 * (1 - dense), 0.8 * dense, 0.2 * dense)

    return [spread(0.660), spread(0.455)]
