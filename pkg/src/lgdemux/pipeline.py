"""The two-stage demultiplexing flow and its experiment harness.

A run trains the calibration network (distorted capture -> ideal image, HWL by
default) and the classifier (ideal augmented images -> modes vector)
separately, then concatenates them: test captures pass through calibration and
the classifier's thresholded sigmoid scores become the predicted mode set.

Reports carry exact-match accuracy (predicted label set == true set), per-label
precision/recall, confusion summaries, per-sample records, and a full config
echo sufficient to reproduce the run bit-for-bit in deterministic mode.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import fileio
from .dataset import DatasetArrays, load_dataset
from .loss import HWLConfig, get_loss
from .nncore import (
    Network,
    TrainConfig,
    batch_forward,
    bce_with_logits,
    calibration_net_spec,
    classifier_net_spec,
    classify,
    exact_match,
    save_model,
    train,
)

OPS = ("classifier_standalone", "bpnet", "ablation")


@dataclass
class ExperimentConfig:
    op: str = "bpnet"
    clf_db: str = ""
    calib_db: str | None = None
    test_kind: str = "single"          # informational: "single" | "2mode"
    threshold: float = 0.5
    seed: int = 0
    calib_loss: str = "hwl"
    hwl_gamma: float = 4.0
    calib_base_channels: int = 16
    clf_channels: tuple = (16, 32, 32, 32)
    calib_epochs: int = 30
    clf_epochs: int = 40
    calib_batch: int = 16
    clf_batch: int = 32
    calib_lr: float = 1e-3
    clf_lr: float = 1e-3
    patience: int | None = 10
    shuffle_labels: bool = False       # control: permute class->label mapping
    ablation_losses: tuple = ("hwl", "mae", "mse")

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"op must be one of {OPS}, got {self.op!r}")

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["clf_channels"] = list(self.clf_channels)
        doc["ablation_losses"] = list(self.ablation_losses)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc)
        doc["clf_channels"] = tuple(doc.get("clf_channels", (16, 32, 32, 32)))
        doc["ablation_losses"] = tuple(doc.get("ablation_losses", ("hwl", "mae", "mse")))
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in doc.items() if k in known})


# ---------------------------------------------------------------------------
# training entry points


def _clf_metric(net, x, y):
    detected, _ = classify(net, x)
    return exact_match(detected, y > 0.5)


def train_classifier(db: DatasetArrays, cfg: ExperimentConfig, log=None):
    """Train the multi-label classifier on a numerical dataset's train split."""
    tr_x, tr_y, _ = db.subset("train")
    va_x, va_y, _ = db.subset("val")
    if cfg.shuffle_labels:
        tr_y = _shuffled_labels(db, "train", cfg.seed)
    side = tr_x.shape[-1]
    net = Network(classifier_net_spec(tr_y.shape[1], cfg.clf_channels), (1, side, side), seed=cfg.seed)
    tcfg = TrainConfig(
        epochs=cfg.clf_epochs, batch_size=cfg.clf_batch, lr=cfg.clf_lr,
        seed=cfg.seed, patience=cfg.patience,
    )
    history, opt = train(
        net, tr_x, tr_y.astype(np.float32), bce_with_logits, tcfg,
        val_x=va_x, val_y=va_y.astype(np.float32), val_metric=_clf_metric, log=log,
    )
    return net, history, tcfg, opt


def train_calibration(db: DatasetArrays, cfg: ExperimentConfig, loss_name: str | None = None, log=None):
    """Train the capture->ideal image model on a synthexp dataset's train split."""
    if db.targets is None:
        raise ValueError("calibration training needs a synthexp dataset with targets")
    tr_x, _, tr_t = db.subset("train")
    va_x, _, va_t = db.subset("val")
    side = tr_x.shape[-1]
    loss_fn = get_loss(loss_name or cfg.calib_loss, HWLConfig(gamma=cfg.hwl_gamma))
    net = Network(calibration_net_spec(cfg.calib_base_channels), (1, side, side), seed=cfg.seed)
    tcfg = TrainConfig(
        epochs=cfg.calib_epochs, batch_size=cfg.calib_batch, lr=cfg.calib_lr,
        seed=cfg.seed, patience=cfg.patience,
    )
    history, opt = train(net, tr_x, tr_t, loss_fn, tcfg, val_x=va_x, val_y=va_t, log=log)
    return net, history, tcfg, opt


def calibrate_images(calib_net: Network, inputs: np.ndarray, batch_size: int = 32) -> np.ndarray:
    return batch_forward(calib_net, inputs, batch_size)


def _shuffled_labels(db: DatasetArrays, split_name: str, seed: int) -> np.ndarray:
    """Permute the combo -> label mapping (consistently across a combo's samples)."""
    records = db.manifest["samples"]
    mask = db.splits == split_name
    combo_ids = sorted({r["combo_index"] for r in records})
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5AFF]))
    perm = dict(zip(combo_ids, [combo_ids[i] for i in rng.permutation(len(combo_ids))]))
    combo_label = {}
    for r in records:
        combo_label.setdefault(r["combo_index"], db.labels[r["index"]])
    out = np.stack([combo_label[perm[r["combo_index"]]] for r in records if mask[r["index"]]])
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# evaluation and reports


def _bits_to_modes(bits, p_max: int, l_max: int) -> list[list[int]]:
    idx = np.flatnonzero(bits)
    return [[int(i // (l_max + 1)), int(i % (l_max + 1))] for i in idx]


def _per_label_stats(pred: np.ndarray, true: np.ndarray, p_max: int, l_max: int) -> list[dict]:
    stats = []
    for i in range(true.shape[1]):
        tp = int(np.sum(pred[:, i] & true[:, i]))
        fp = int(np.sum(pred[:, i] & ~true[:, i]))
        fn = int(np.sum(~pred[:, i] & true[:, i]))
        stats.append(
            {
                "label": [i // (l_max + 1), i % (l_max + 1)],
                "tp": tp,
                "fp": fp,
                "fn": fn,
                "precision": tp / (tp + fp) if tp + fp else None,
                "recall": tp / (tp + fn) if tp + fn else None,
            }
        )
    return stats


def make_report(op: str, config_echo: dict, pred: np.ndarray, true: np.ndarray,
                p_max: int, l_max: int, extras: dict | None = None) -> dict:
    """Score predicted vs true label sets; the exact-match metric is verified
    against an independent brute-force set comparison on every call."""
    pred = np.asarray(pred, dtype=bool)
    true = np.asarray(true, dtype=bool)
    acc = exact_match(pred, true)

    # brute force: python-set comparison per sample
    mismatches = 0
    samples = []
    confusion: dict = {}
    for i in range(len(pred)):
        t = {tuple(m) for m in _bits_to_modes(true[i], p_max, l_max)}
        p = {tuple(m) for m in _bits_to_modes(pred[i], p_max, l_max)}
        ok = t == p
        if not ok:
            mismatches += 1
            key = (tuple(sorted(t)), tuple(sorted(p)))
            confusion[key] = confusion.get(key, 0) + 1
        samples.append(
            {"index": i, "true": sorted(map(list, t)), "pred": sorted(map(list, p)), "correct": ok}
        )
    brute = 1.0 - mismatches / len(pred) if len(pred) else 1.0
    if abs(brute - acc) > 1e-12:
        raise AssertionError(f"exact-match metric inconsistent: {acc} vs brute-force {brute}")

    top_conf = sorted(confusion.items(), key=lambda kv: -kv[1])[:10]
    return {
        "op": op,
        "config_echo": config_echo,
        "n_samples": int(len(pred)),
        "exact_match_accuracy": acc,
        "per_label": _per_label_stats(pred, true, p_max, l_max),
        "confusion_top": [
            {"true": [list(m) for m in t], "pred": [list(m) for m in p], "count": c}
            for (t, p), c in top_conf
        ],
        "samples": samples,
        "extras": extras or {},
    }


def write_report(report: dict, out_dir, stem: str = "report") -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_manifest(out / f"{stem}.json", report)
    (out / f"{stem}.txt").write_text(format_report(report), encoding="utf-8")
    return {"json": str(out / f"{stem}.json"), "txt": str(out / f"{stem}.txt")}


def format_report(report: dict) -> str:
    lines = [
        f"op: {report['op']}",
        f"samples: {report['n_samples']}",
        f"exact-match accuracy: {report['exact_match_accuracy']:.4f}",
    ]
    for k, v in sorted(report.get("extras", {}).items()):
        lines.append(f"{k}: {v}")
    lines.append("")
    lines.append("label (p,l)   tp   fp   fn   precision recall")
    for s in report.get("per_label", []):
        prec = "-" if s["precision"] is None else f"{s['precision']:.3f}"
        rec = "-" if s["recall"] is None else f"{s['recall']:.3f}"
        lines.append(
            f"({s['label'][0]},{s['label'][1]})      {s['tp']:4d} {s['fp']:4d} {s['fn']:4d}   {prec:>9} {rec:>6}"
        )
    if report.get("confusion_top"):
        lines.append("")
        lines.append("top confusions (true -> predicted, count):")
        for c in report["confusion_top"]:
            lines.append(f"  {c['true']} -> {c['pred']}  x{c['count']}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# experiment runners


def run_classifier_standalone(cfg: ExperimentConfig, out_dir=None, log=None) -> dict:
    """Train on a numerical dataset and score exact-match on its validation split."""
    db = load_dataset(cfg.clf_db)
    net, history, tcfg, opt = train_classifier(db, cfg, log=log)
    va_x, va_y, _ = db.subset("val")
    detected, _ = classify(net, va_x, cfg.threshold)
    p_max = db.manifest["config"]["p_max"]
    l_max = db.manifest["config"]["l_max"]

    extras = {"epochs_run": len(history), "final_train_loss": history[-1]["train_loss"]}
    if cfg.shuffle_labels:
        # chance level of a guesser drawing a combo by training marginal frequency
        records = db.manifest["samples"]
        train_mask = db.splits == "train"
        combo_counts: dict = {}
        for r in records:
            if train_mask[r["index"]]:
                combo_counts[r["combo_index"]] = combo_counts.get(r["combo_index"], 0) + 1
        n_train = sum(combo_counts.values())
        extras["chance_level"] = float(sum((c / n_train) ** 2 for c in combo_counts.values()))

    report = make_report("classifier_standalone", cfg.to_dict(), detected, va_y > 0.5, p_max, l_max, extras)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(out / "classifier.lgdx", net, optimizer=opt, epoch=len(history),
                   train_config=tcfg, extra={"role": "classifier", "db": str(cfg.clf_db)})
        fileio.write_manifest(out / "history.json", {"classifier": history})
        write_report(report, out)
    return report


def run_bpnet(cfg: ExperimentConfig, out_dir=None, log=None,
              trained_calib: Network | None = None, trained_clf: Network | None = None) -> dict:
    """Calibration + classifier on the synthexp test split; also scores the raw
    classifier on the same distorted inputs (the value of the calibration stage)."""
    if cfg.calib_db is None:
        raise ValueError("bpnet needs calib_db")
    calib_arr = load_dataset(cfg.calib_db)
    clf_arr = load_dataset(cfg.clf_db)

    calib_history = clf_history = None
    calib = trained_calib
    if calib is None:
        calib, calib_history, calib_tcfg, calib_opt = train_calibration(calib_arr, cfg, log=log)
    clf = trained_clf
    if clf is None:
        clf, clf_history, clf_tcfg, clf_opt = train_classifier(clf_arr, cfg, log=log)

    te_x, te_y, _ = calib_arr.subset("test")
    if len(te_x) == 0:
        raise ValueError(f"calibration dataset {cfg.calib_db} has an empty test split")
    calibrated = calibrate_images(calib, te_x)
    detected, _ = classify(clf, calibrated, cfg.threshold)
    raw_detected, _ = classify(clf, te_x, cfg.threshold)

    p_max = calib_arr.manifest["config"]["p_max"]
    l_max = calib_arr.manifest["config"]["l_max"]
    extras = {
        "raw_classifier_exact_match": exact_match(raw_detected, te_y > 0.5),
        "test_split_size": int(len(te_x)),
    }
    if calib_history is not None:
        extras["calib_epochs_run"] = len(calib_history)
    if clf_history is not None:
        extras["clf_epochs_run"] = len(clf_history)

    report = make_report("bpnet", cfg.to_dict(), detected, te_y > 0.5, p_max, l_max, extras)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        if calib_history is not None:
            save_model(out / "calibration.lgdx", calib, optimizer=calib_opt, epoch=len(calib_history),
                       train_config=calib_tcfg, extra={"role": "calibration", "db": str(cfg.calib_db)})
        if clf_history is not None:
            save_model(out / "classifier.lgdx", clf, optimizer=clf_opt, epoch=len(clf_history),
                       train_config=clf_tcfg, extra={"role": "classifier", "db": str(cfg.clf_db)})
        fileio.write_manifest(out / "history.json", {"calibration": calib_history, "classifier": clf_history})
        write_report(report, out)
    return report


def foreground_mask(target: np.ndarray) -> np.ndarray:
    """Pixels carrying beam signal: above (mean + 3*std) of the darkest decile."""
    flat = target.reshape(target.shape[0], -1)
    k = max(1, flat.shape[1] // 10)
    lowest = np.sort(flat, axis=1)[:, :k]
    thr = lowest.mean(axis=1) + 3.0 * lowest.std(axis=1)
    return target > thr.reshape(-1, *([1] * (target.ndim - 1)))


def foreground_metrics(pred: np.ndarray, target: np.ndarray) -> dict:
    """Foreground fidelity + dark-collapse fraction over a batch.

    Energy is measured above the dark level (-1); a prediction has collapsed
    when its energy over the target's foreground is < 10% of the target's own.
    """
    mask = foreground_mask(target)
    per_img_mae = []
    collapsed = 0
    for i in range(len(target)):
        m = mask[i]
        per_img_mae.append(float(np.abs(pred[i][m] - target[i][m]).mean()))
        e_target = float((target[i][m] + 1.0).sum())
        e_pred = float(np.clip(pred[i][m] + 1.0, 0.0, None).sum())
        if e_pred < 0.1 * e_target:
            collapsed += 1
    return {
        "foreground_mae": float(np.mean(per_img_mae)),
        "dark_collapse_fraction": collapsed / len(target),
    }


def run_ablation_loss(cfg: ExperimentConfig, out_dir=None, log=None) -> dict:
    """Train calibration nets identical except for the loss; compare fidelity.

    The report carries, per loss: training history tail, foreground MAE and
    dark-collapse fraction on the test split, and downstream flow accuracy
    with one shared classifier.
    """
    if cfg.calib_db is None:
        raise ValueError("ablation needs calib_db")
    calib_arr = load_dataset(cfg.calib_db)
    clf_arr = load_dataset(cfg.clf_db)
    clf, clf_history, *_ = train_classifier(clf_arr, cfg, log=log)

    te_x, te_y, te_t = calib_arr.subset("test")
    p_max = calib_arr.manifest["config"]["p_max"]
    l_max = calib_arr.manifest["config"]["l_max"]

    results = {}
    for loss_name in cfg.ablation_losses:
        calib, history, *_ = train_calibration(calib_arr, cfg, loss_name=loss_name, log=log)
        calibrated = calibrate_images(calib, te_x)
        detected, _ = classify(clf, calibrated, cfg.threshold)
        entry = foreground_metrics(calibrated, te_t)
        entry["bpnet_exact_match"] = exact_match(detected, te_y > 0.5)
        entry["final_train_loss"] = history[-1]["train_loss"]
        entry["epochs_run"] = len(history)
        results[loss_name] = entry

    report = {
        "op": "ablation",
        "config_echo": cfg.to_dict(),
        "n_samples": int(len(te_x)),
        "losses": results,
        "clf_epochs_run": len(clf_history),
    }
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        fileio.write_manifest(out / "report.json", report)
        lines = [f"loss ablation on {cfg.calib_db} ({len(te_x)} test samples)"]
        for name, e in results.items():
            lines.append(
                f"  {name:4s}: fg-mae {e['foreground_mae']:.4f}  dark-collapse {e['dark_collapse_fraction']:.2f}"
                f"  flow-accuracy {e['bpnet_exact_match']:.3f}"
            )
        (out / "report.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return report


def run_from_echo(echo: dict, out_dir=None, log=None) -> dict:
    """Re-run an experiment from a report's config echo (exact reproduction)."""
    cfg = ExperimentConfig.from_dict(echo)
    if cfg.op == "classifier_standalone":
        return run_classifier_standalone(cfg, out_dir, log=log)
    if cfg.op == "bpnet":
        return run_bpnet(cfg, out_dir, log=log)
    return run_ablation_loss(cfg, out_dir, log=log)


# ---------------------------------------------------------------------------
# rendering


def ssim(a: np.ndarray, b: np.ndarray, dynamic_range: float = 2.0) -> float:
    """Global structural-similarity score (single-window SSIM)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    mu_a, mu_b = a.mean(), b.mean()
    va, vb = a.var(), b.var()
    cov = ((a - mu_a) * (b - mu_b)).mean()
    return float(
        ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
    )


def _to_png_gray(panel: np.ndarray) -> "object":
    from PIL import Image as PILImage

    lo, hi = float(panel.min()), float(panel.max())
    scale = 255.0 / (hi - lo) if hi > lo else 1.0
    return PILImage.fromarray(((panel - lo) * scale).astype(np.uint8), mode="L")


def render_panel(samples: list[dict], calib_net: Network | None, out_dir, stem: str = "panel") -> list[str]:
    """Write input / prediction / ground-truth triptych grids as PFM and PNG.

    Each sample dict has "input" (2-D array) and optionally "target"; the
    prediction column is the calibration net's output (or the input itself when
    no net is given).  An empty sample list writes nothing and succeeds.
    """
    if not samples:
        return []
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    side = samples[0]["input"].shape[0]
    gutter = 2
    rows = []
    for s in samples:
        x = np.asarray(s["input"], dtype=np.float32)
        if calib_net is not None:
            pred = calib_net.forward(x[None, None])[0, 0]
        else:
            pred = x
        cols = [x, pred]
        target = s.get("target")
        cols.append(np.asarray(target, dtype=np.float32) if target is not None else np.full_like(x, -1.0))
        row = np.full((side, 3 * side + 2 * gutter), -1.0, dtype=np.float32)
        for c, img in enumerate(cols):
            row[:, c * (side + gutter) : c * (side + gutter) + side] = img
        rows.append(row)
    spacer = np.full((gutter, rows[0].shape[1]), -1.0, dtype=np.float32)
    stacked = []
    for r in rows:
        stacked.extend([r, spacer])
    grid = np.concatenate(stacked[:-1], axis=0)
    pfm_path = out / f"{stem}.pfm"
    png_path = out / f"{stem}.png"
    fileio.write_pfm(pfm_path, grid)
    _to_png_gray(grid).save(png_path)
    return [str(pfm_path), str(png_path)]
