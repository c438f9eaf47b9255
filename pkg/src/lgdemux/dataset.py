"""Dataset construction: mode combinations, augmentation, splits, disk layout.

A dataset of superposition order N contains every unordered combination of
1..N *distinct* modes (the order-N set nests all lower orders).  Combinations
never repeat a mode: a multi-hot label cannot encode multiplicity, so the
member count deviates from a literal 36^N enumeration; manifests record this
policy.

Augmentation follows the source protocol: beam rotations on a 1-degree grid,
integer beam shifts (numerical datasets only; the [0, 16]-pixel range at
224x224 scales proportionally with the configured side), and additive Gaussian
noise with variance 0.2 on the [-1, 1] value scale, applied before the final
re-quantization.

For split purposes the variants of one combination are grouped into rotation
cohorts (same angular band = near-duplicate poses); a cohort never straddles
splits, while every class still reaches every split through its other cohorts.

`synthexp` datasets emulate lab captures: each variant is an independent
synthetic capture - the beam itself is rotated (exact, via the azimuthal phase
of each mode), passed through the frozen systematic aberration with fresh
detection noise, and paired with the ideal image of the same rotated beam.
No beam shifts, and the stored inputs are standardized to mean 0 / variance 1
over the training split, as lab datasets are.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fileio
from .aberration import AberrationConfig, aberrate, moderate_config
from .imaging import (
    NORM_DATASET,
    NORM_NONE,
    Image,
    intensity_to_image,
    quantize,
    rotate_bilinear,
    shift_integer,
)
from .lgfield import (
    BeamParams,
    FieldGrid,
    GridSpec,
    ModeIndex,
    mode_basis,
    mode_bit,
    synth_mode,
)

NOISE_VARIANCE = 0.2           # Gaussian augmentation noise, [-1, 1] value scale
ROTATION_DEGREES = 360         # 1-degree resolution
FULL_SCALE_SIDE = 224
FULL_SCALE_MAX_SHIFT = 16

SPLIT_NAMES = ("train", "val", "test")


# ---------------------------------------------------------------------------
# labels


def modes_vector(combo, p_max: int, l_max: int) -> np.ndarray:
    """Multi-hot label bits ordered p-major with l fastest: bit = p*(l_max+1)+l."""
    n_labels = (p_max + 1) * (l_max + 1)
    bits = np.zeros(n_labels, dtype=np.uint8)
    for m in combo:
        if m.p > p_max or m.l > l_max:
            raise ValueError(f"mode (p={m.p}, l={m.l}) outside label space")
        bits[mode_bit(m, l_max)] = 1
    if not 1 <= int(bits.sum()) <= 3:
        raise ValueError(f"modes vector popcount {int(bits.sum())} not in 1..3")
    return bits


def enumerate_combinations(n_modes: int, p_max: int, l_max: int) -> list[tuple[ModeIndex, ...]]:
    """All unordered combinations of 1..n_modes distinct modes, smaller sizes first."""
    if not 1 <= n_modes <= 3:
        raise ValueError(f"superposition order must be 1..3, got {n_modes}")
    basis = mode_basis(p_max, l_max)
    combos: list[tuple[ModeIndex, ...]] = []
    for k in range(1, n_modes + 1):
        combos.extend(itertools.combinations(basis, k))
    return combos


@dataclass
class LabeledSample:
    input: Image
    label: np.ndarray
    target: Image | None = None
    provenance: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# augmentation


def augment(
    img: Image,
    rotation_deg: int,
    shift: tuple[int, int],
    noise_seed: int | None,
    noise_variance: float = NOISE_VARIANCE,
    max_shift: int | None = None,
) -> Image:
    """Rotate (bilinear, about grid center), shift (integer pixels, zero-intensity
    fill), add Gaussian noise, clamp and re-quantize.

    The label of an augmented sample is copied from its base, never recomputed.
    """
    if not 0 <= rotation_deg < ROTATION_DEGREES:
        raise ValueError(f"rotation {rotation_deg} outside [0, {ROTATION_DEGREES}) degrees")
    dx, dy = int(shift[0]), int(shift[1])
    limit = max_shift if max_shift is not None else img.side // 2
    if abs(dx) > limit or abs(dy) > limit:
        raise ValueError(f"shift {shift} exceeds limit {limit} pixels")

    values = img.values.astype(np.float64)
    if rotation_deg != 0:
        values = rotate_bilinear(values, math.radians(rotation_deg))
    if dx or dy:
        values = shift_integer(values, dx, dy)
    if noise_seed is not None and noise_variance > 0.0:
        rng = np.random.default_rng(noise_seed)
        values = values + rng.normal(0.0, math.sqrt(noise_variance), values.shape)
    return Image(quantize(values))


def scaled_max_shift(side: int) -> int:
    return round(FULL_SCALE_MAX_SHIFT * side / FULL_SCALE_SIDE)


# ---------------------------------------------------------------------------
# split assignment


def assign_splits(
    groups: list[tuple], fractions, seed: int
) -> dict:
    """Assign groups of samples to train/val/test.

    `groups` entries are (class_key, group_id, size).  Every group lands in one
    split; allocation is stratified per class (with a running carry so global
    fractions stay exact when group sizes allow) and deterministic under seed.
    """
    fracs = _check_fractions(fractions)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x5B71]))
    by_class: dict = {}
    for key, gid, size in groups:
        by_class.setdefault(key, []).append((gid, int(size)))

    assignment = {}
    carry = np.zeros(3, dtype=np.float64)
    for key in sorted(by_class):
        class_groups = by_class[key]
        order = rng.permutation(len(class_groups))
        n_c = sum(size for _, size in class_groups)
        quota = np.array([f * n_c for f in fracs]) + carry
        bounds = np.floor(np.cumsum(quota) + 1e-9)
        targets = np.diff(np.concatenate([[0.0], bounds])).astype(int)

        assigned = np.zeros(3, dtype=int)
        s = 0
        for j in order:
            gid, size = class_groups[j]
            while s < 2 and assigned[s] >= targets[s]:
                s += 1
            assignment[gid] = s
            assigned[s] += size
        carry = quota - assigned
    return assignment


def _check_fractions(fractions):
    fracs = [float(f) for f in fractions]
    if len(fracs) == 2:
        fracs.append(0.0)
    if len(fracs) != 3:
        raise ValueError(f"need 2 or 3 split fractions, got {len(fracs)}")
    if any(f < 0 for f in fracs):
        raise ValueError(f"negative split fraction in {fracs}")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise ValueError(f"split fractions {fracs} sum to {sum(fracs)}, expected 1")
    return fracs


def split(manifest: dict, fractions, seed: int | None = None) -> list[str]:
    """Re-derive a split assignment for an existing manifest's samples.

    Groups by (combination, rotation cohort) so augmented near-duplicates never
    straddle splits; returns one split name per sample index.
    """
    records = manifest["samples"]
    groups_seen = {}
    for rec in records:
        gid = (rec["combo_index"], rec["cohort"])
        groups_seen.setdefault(gid, [rec["combo_index"], 0])
        groups_seen[gid][1] += 1
    groups = [(ck, gid, size) for gid, (ck, size) in sorted(groups_seen.items())]
    assignment = assign_splits(groups, fractions, manifest["seed"] if seed is None else seed)
    return [SPLIT_NAMES[assignment[(r["combo_index"], r["cohort"])]] for r in records]


# ---------------------------------------------------------------------------
# dataset build


@dataclass
class DatasetConfig:
    n_modes: int = 1
    kind: str = "num"                 # "num" | "synthexp"
    side: int = 64
    p_max: int = 3
    l_max: int = 3
    augment_count: int = 70
    augment_mode: str = "add"         # "add": base + k variants; "total": k variants only
    noise_variance: float = NOISE_VARIANCE
    max_shift: int | None = None      # None -> scaled from the 224-pixel protocol
    rotation_cohorts: int = 12
    fractions: tuple = (0.85, 0.15, 0.0)
    seed: int = 0
    extent: float = 1.0
    fill_factor: float = 2.2          # extent / (largest mode radius)
    w0: float | None = None
    wavelength: float = 532e-9
    aberration: AberrationConfig | None = None  # synthexp only; None -> moderate_config(seed)

    def __post_init__(self):
        if self.kind not in ("num", "synthexp"):
            raise ValueError(f"kind must be num|synthexp, got {self.kind!r}")
        if self.augment_mode not in ("add", "total"):
            raise ValueError(f"augment_mode must be add|total, got {self.augment_mode!r}")
        if self.augment_mode == "total" and self.augment_count < 1:
            raise ValueError("augment_mode 'total' needs augment_count >= 1")
        _check_fractions(self.fractions)

    @property
    def n_labels(self) -> int:
        return (self.p_max + 1) * (self.l_max + 1)

    def resolved_w0(self) -> float:
        if self.w0 is not None:
            return self.w0
        return self.extent / (self.fill_factor * math.sqrt(2 * self.p_max + self.l_max + 1))

    def resolved_max_shift(self) -> int:
        if self.kind == "synthexp":
            return 0  # lab-style augmentation has no beam shifts
        return self.max_shift if self.max_shift is not None else scaled_max_shift(self.side)

    def resolved_aberration(self) -> AberrationConfig | None:
        if self.kind != "synthexp":
            return None
        return self.aberration if self.aberration is not None else moderate_config(self.seed)

    def beam(self) -> BeamParams:
        return BeamParams(w0=self.resolved_w0(), wavelength=self.wavelength, z=0.0)

    def grid(self) -> GridSpec:
        return GridSpec(self.side, self.extent)

    def to_dict(self) -> dict:
        ab = self.resolved_aberration()
        return {
            "n_modes": self.n_modes,
            "kind": self.kind,
            "side": self.side,
            "p_max": self.p_max,
            "l_max": self.l_max,
            "augment_count": self.augment_count,
            "augment_mode": self.augment_mode,
            "noise_variance": self.noise_variance,
            "max_shift": self.resolved_max_shift(),
            "rotation_cohorts": self.rotation_cohorts,
            "fractions": list(self.fractions),
            "seed": self.seed,
            "extent": self.extent,
            "fill_factor": self.fill_factor,
            "w0": self.resolved_w0(),
            "wavelength": self.wavelength,
            "aberration": ab.to_dict() if ab else None,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DatasetConfig":
        doc = dict(doc)
        ab = doc.get("aberration")
        doc["aberration"] = AberrationConfig.from_dict(ab) if ab else None
        doc["fractions"] = tuple(doc.get("fractions", (0.85, 0.15, 0.0)))
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


def _variant_plan(cfg: DatasetConfig, rng: np.random.Generator) -> list[dict]:
    """Rotation/shift parameters for the variants of one combination."""
    s_max = cfg.resolved_max_shift()
    plan = []
    if cfg.augment_mode == "add":
        plan.append({"rotation_deg": 0, "shift": (0, 0), "augmented": False})
    for _ in range(cfg.augment_count):
        rot = int(rng.integers(0, ROTATION_DEGREES))
        if s_max > 0:
            shift = (int(rng.integers(-s_max, s_max + 1)), int(rng.integers(-s_max, s_max + 1)))
        else:
            shift = (0, 0)
        plan.append({"rotation_deg": rot, "shift": shift, "augmented": True})
    return plan


def generate_samples(cfg: DatasetConfig):
    """Produce all samples in memory.

    Returns (records, inputs, labels, targets, normalization):
      records: one provenance dict per sample (combo, variant params, split, cohort)
      inputs:  (n, side, side) float32
      labels:  (n, n_labels) uint8 multi-hot
      targets: (n, side, side) float32 or None (synthexp only)
      normalization: {"mean", "std"} or None (synthexp only)
    """
    combos = enumerate_combinations(cfg.n_modes, cfg.p_max, cfg.l_max)
    beam = cfg.beam()
    grid = cfg.grid()
    ab_cfg = cfg.resolved_aberration()
    synthexp = cfg.kind == "synthexp"

    # one synthesis per mode; rotations use the azimuthal phase of each term
    bank = {m: synth_mode(m, beam, grid).values for m in {m for c in combos for m in c}}

    def combo_field(combo, rotation_rad: float) -> np.ndarray:
        total = np.zeros((cfg.side, cfg.side), dtype=np.complex128)
        for m in combo:
            term = bank[m]
            if rotation_rad != 0.0 and m.l != 0:
                term = term * np.exp(-1j * m.l * rotation_rad)
            total = total + term
        return total / math.sqrt(len(combo))

    records = []
    inputs = []
    targets = [] if synthexp else None
    labels = []

    for ci, combo in enumerate(combos):
        label = modes_vector(combo, cfg.p_max, cfg.l_max)
        plan_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x11, ci]))
        base_img = None
        if not synthexp:
            inten = np.abs(combo_field(combo, 0.0)) ** 2
            base_img = intensity_to_image(inten)
        for vi, variant in enumerate(_variant_plan(cfg, plan_rng)):
            noise_seed = int(np.random.SeedSequence([cfg.seed, 0x23, ci, vi]).generate_state(1)[0])
            rot = variant["rotation_deg"]
            if synthexp:
                fvals = combo_field(combo, math.radians(rot))
                target_img = intensity_to_image(np.abs(fvals) ** 2)
                ab_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x29, ci, vi]))
                capture = aberrate(FieldGrid(grid, fvals), ab_cfg, rng=ab_rng)
                if variant["augmented"] and cfg.noise_variance > 0.0:
                    noisy = capture.values + np.random.default_rng(noise_seed).normal(
                        0.0, math.sqrt(cfg.noise_variance), capture.values.shape
                    )
                    capture = Image(quantize(noisy))
                inputs.append(capture.values)
                targets.append(target_img.values)
            else:
                if variant["augmented"]:
                    img = augment(
                        base_img,
                        rot,
                        variant["shift"],
                        noise_seed,
                        noise_variance=cfg.noise_variance,
                        max_shift=max(cfg.resolved_max_shift(), 0),
                    )
                else:
                    img = base_img
                inputs.append(img.values)
            labels.append(label)
            records.append(
                {
                    "index": len(records),
                    "combo_index": ci,
                    "combo": [[m.p, m.l] for m in combo],
                    "variant": vi,
                    "augmented": variant["augmented"],
                    "rotation_deg": rot,
                    "shift": list(variant["shift"]),
                    "noise_seed": noise_seed if variant["augmented"] else None,
                    "cohort": rot * cfg.rotation_cohorts // ROTATION_DEGREES,
                }
            )

    inputs = np.stack(inputs).astype(np.float32)
    labels = np.stack(labels).astype(np.uint8)
    targets_arr = np.stack(targets).astype(np.float32) if synthexp else None

    # split assignment (per combination x rotation cohort, stratified by combo)
    groups_seen: dict = {}
    for rec in records:
        gid = (rec["combo_index"], rec["cohort"])
        groups_seen.setdefault(gid, [rec["combo_index"], 0])
        groups_seen[gid][1] += 1
    groups = [(ck, gid, size) for gid, (ck, size) in sorted(groups_seen.items())]
    assignment = assign_splits(groups, cfg.fractions, cfg.seed)
    for rec in records:
        rec["split"] = SPLIT_NAMES[assignment[(rec["combo_index"], rec["cohort"])]]

    normalization = None
    if synthexp:
        train_mask = np.array([rec["split"] == "train" for rec in records])
        pool = inputs[train_mask] if train_mask.any() else inputs
        mean = float(pool.mean())
        std = float(pool.std())
        if std == 0.0:
            std = 1.0
        inputs = ((inputs - mean) / std).astype(np.float32)
        normalization = {"mean": mean, "std": std}

    return records, inputs, labels, targets_arr, normalization


def build_dataset(cfg: DatasetConfig, out_dir) -> dict:
    """Generate, write to disk (PFM images + JSON manifest), return the manifest."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    records, inputs, labels, targets, normalization = generate_samples(cfg)

    for rec in records:
        i = rec["index"]
        if targets is not None:
            in_name = f"images/input_{i:05d}.pfm"
            tg_name = f"images/target_{i:05d}.pfm"
            fileio.write_pfm(out / in_name, inputs[i])
            fileio.write_pfm(out / tg_name, targets[i])
            rec["input_file"] = in_name
            rec["target_file"] = tg_name
        else:
            in_name = f"images/sample_{i:05d}.pfm"
            fileio.write_pfm(out / in_name, inputs[i])
            rec["input_file"] = in_name
            rec["target_file"] = None

    split_counts = {name: 0 for name in SPLIT_NAMES}
    for rec in records:
        split_counts[rec["split"]] += 1

    manifest = {
        "config": cfg.to_dict(),
        "kind": cfg.kind,
        "n_modes": cfg.n_modes,
        "seed": cfg.seed,
        "label_order": "bit = p*(l_max+1) + l  (p-major, l fastest)",
        "n_labels": cfg.n_labels,
        "combination_policy": (
            "unordered combinations of distinct modes, sizes 1..N (nested); "
            "duplicate modes excluded, so counts deviate from a literal 36^N enumeration"
        ),
        "counts": {
            "combinations": len(enumerate_combinations(cfg.n_modes, cfg.p_max, cfg.l_max)),
            "samples": len(records),
            "splits": split_counts,
        },
        "augmentation_note": (
            "num: bilinear image rotation, integer shifts with zero-intensity fill, Gaussian "
            "noise before re-quantization; synthexp: beam rotated in the field (exact azimuthal "
            "phases), independent synthetic capture per variant, no shifts"
        ),
        "normalization": normalization,
        "samples": records,
    }
    fileio.write_manifest(out / "manifest.json", manifest)
    return fileio.read_manifest(out / "manifest.json")


@dataclass
class DatasetArrays:
    manifest: dict
    inputs: np.ndarray               # (n, 1, side, side) float32
    labels: np.ndarray               # (n, n_labels) float32
    targets: np.ndarray | None       # (n, 1, side, side) float32
    splits: np.ndarray               # (n,) of "train"/"val"/"test"

    def subset(self, split_name: str):
        mask = self.splits == split_name
        return (
            self.inputs[mask],
            self.labels[mask],
            self.targets[mask] if self.targets is not None else None,
        )


def load_dataset(dir_path) -> DatasetArrays:
    root = Path(dir_path)
    manifest = fileio.read_manifest(root / "manifest.json")
    records = manifest["samples"]
    n_labels = manifest["n_labels"]
    p_max = manifest["config"]["p_max"]
    l_max = manifest["config"]["l_max"]

    inputs = []
    targets = [] if manifest["kind"] == "synthexp" else None
    labels = np.zeros((len(records), n_labels), dtype=np.float32)
    splits = []
    for rec in records:
        inputs.append(fileio.read_pfm(root / rec["input_file"]))
        if targets is not None:
            targets.append(fileio.read_pfm(root / rec["target_file"]))
        combo = [ModeIndex(p, l) for p, l in rec["combo"]]
        labels[rec["index"]] = modes_vector(combo, p_max, l_max)
        splits.append(rec["split"])
    inputs_arr = np.stack(inputs)[:, None, :, :]
    targets_arr = np.stack(targets)[:, None, :, :] if targets is not None else None
    return DatasetArrays(manifest, inputs_arr, labels, targets_arr, np.array(splits))
