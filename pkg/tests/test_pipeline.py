"""Flow-level tests at tiny scale: metric integrity, composability, reproducibility."""

import numpy as np
import pytest

from lgdemux import fileio, pipeline
from lgdemux.aberration import AberrationConfig
from lgdemux.dataset import DatasetConfig, build_dataset, load_dataset
from lgdemux.nncore import classify
from lgdemux.pipeline import (
    ExperimentConfig,
    foreground_mask,
    foreground_metrics,
    make_report,
    render_panel,
    run_ablation_loss,
    run_bpnet,
    run_classifier_standalone,
    run_from_echo,
    ssim,
    train_calibration,
)

TINY = dict(side=16, p_max=1, l_max=1, rotation_cohorts=4)


@pytest.fixture(scope="module")
def tiny_dbs(tmp_path_factory):
    root = tmp_path_factory.mktemp("dbs")
    num = build_dataset(
        DatasetConfig(n_modes=1, kind="num", augment_count=10, seed=3, **TINY),
        root / "num1",
    )
    exp = build_dataset(
        DatasetConfig(
            n_modes=1, kind="synthexp", augment_count=10, seed=3,
            fractions=(0.72, 0.18, 0.10), **TINY,
        ),
        root / "exp1",
    )
    clean = build_dataset(
        DatasetConfig(
            n_modes=1, kind="synthexp", augment_count=10, seed=3,
            fractions=(0.72, 0.18, 0.10), aberration=AberrationConfig(),
            noise_variance=0.0, **TINY,
        ),
        root / "exp1_clean",
    )
    return {"root": root, "num1": root / "num1", "exp1": root / "exp1", "exp1_clean": root / "exp1_clean"}


def tiny_cfg(dbs, **kw):
    base = dict(
        op="bpnet", clf_db=str(dbs["num1"]), calib_db=str(dbs["exp1"]),
        calib_base_channels=8, clf_channels=(8, 8), calib_epochs=8, clf_epochs=10,
        calib_batch=8, clf_batch=8, seed=5, patience=None,
    )
    base.update(kw)
    return ExperimentConfig(**base)


class TestReport:
    def test_exact_match_vs_brute_force(self):
        pred = np.array([[1, 0, 0, 1], [0, 1, 0, 0], [0, 0, 1, 0]], dtype=bool)
        true = np.array([[1, 0, 0, 1], [0, 0, 1, 0], [0, 0, 1, 0]], dtype=bool)
        report = make_report("bpnet", {}, pred, true, p_max=1, l_max=1)
        assert report["exact_match_accuracy"] == pytest.approx(2.0 / 3.0)
        assert report["n_samples"] == 3
        assert report["confusion_top"][0]["count"] == 1
        wrong = [s for s in report["samples"] if not s["correct"]]
        assert len(wrong) == 1 and wrong[0]["index"] == 1

    def test_per_label_stats(self):
        pred = np.array([[1, 1], [1, 0]], dtype=bool)
        true = np.array([[1, 0], [1, 0]], dtype=bool)
        report = make_report("bpnet", {}, pred, true, p_max=0, l_max=1)
        by_label = {tuple(s["label"]): s for s in report["per_label"]}
        assert by_label[(0, 0)]["tp"] == 2 and by_label[(0, 0)]["fp"] == 0
        assert by_label[(0, 1)]["fp"] == 1 and by_label[(0, 1)]["recall"] is None

    def test_report_files(self, tiny_dbs, tmp_path):
        cfg = tiny_cfg(tiny_dbs, op="classifier_standalone", clf_epochs=2)
        report = run_classifier_standalone(cfg, out_dir=tmp_path / "r")
        assert (tmp_path / "r" / "report.json").exists()
        assert (tmp_path / "r" / "report.txt").exists()
        assert (tmp_path / "r" / "classifier.lgdx").exists()
        loaded = fileio.read_manifest(tmp_path / "r" / "report.json")
        assert loaded["exact_match_accuracy"] == report["exact_match_accuracy"]


class TestForeground:
    def test_mask_finds_beam(self):
        img = np.full((1, 16, 16), -1.0)
        img[0, 6:10, 6:10] = 0.5
        mask = foreground_mask(img)
        assert mask[0, 7, 7] and not mask[0, 0, 0]
        assert mask.sum() == 16

    def test_dark_collapse_detected(self):
        target = np.full((2, 8, 8), -1.0)
        target[:, 3:5, 3:5] = 1.0
        dark = np.full_like(target, -1.0)
        metrics = foreground_metrics(dark, target)
        assert metrics["dark_collapse_fraction"] == 1.0
        good = foreground_metrics(target, target)
        assert good["dark_collapse_fraction"] == 0.0
        assert good["foreground_mae"] == 0.0


class TestFlows:
    def test_classifier_standalone_tiny(self, tiny_dbs):
        report = run_classifier_standalone(tiny_cfg(tiny_dbs, op="classifier_standalone", clf_epochs=25))
        # 4 well-separated single-mode classes: should be essentially solved
        assert report["exact_match_accuracy"] >= 0.9

    def test_shuffled_label_control(self, tiny_dbs):
        cfg = tiny_cfg(tiny_dbs, op="classifier_standalone", clf_epochs=6, shuffle_labels=True)
        report = run_classifier_standalone(cfg)
        assert "chance_level" in report["extras"]
        chance = report["extras"]["chance_level"]
        assert report["exact_match_accuracy"] <= max(3 * chance, chance + 0.35)

    def test_bpnet_and_raw_reported(self, tiny_dbs, tmp_path):
        report = run_bpnet(tiny_cfg(tiny_dbs), out_dir=tmp_path / "bp")
        assert 0.0 <= report["exact_match_accuracy"] <= 1.0
        assert "raw_classifier_exact_match" in report["extras"]
        assert (tmp_path / "bp" / "calibration.lgdx").exists()

    def test_mae_equals_hwl_gamma0_trajectory(self, tiny_dbs):
        db = load_dataset(tiny_dbs["exp1"])
        cfg_a = tiny_cfg(tiny_dbs, calib_loss="mae", calib_epochs=4)
        cfg_b = tiny_cfg(tiny_dbs, calib_loss="hwl", hwl_gamma=0.0, calib_epochs=4)
        _, hist_a, *_ = train_calibration(db, cfg_a)
        _, hist_b, *_ = train_calibration(db, cfg_b)
        for ea, eb in zip(hist_a, hist_b):
            assert ea["train_loss"] == pytest.approx(eb["train_loss"], abs=1e-12)

    def test_ablation_report_structure(self, tiny_dbs, tmp_path):
        cfg = tiny_cfg(tiny_dbs, op="ablation", calib_epochs=3, clf_epochs=3)
        report = run_ablation_loss(cfg, out_dir=tmp_path / "ab")
        assert set(report["losses"]) == {"hwl", "mae", "mse"}
        for entry in report["losses"].values():
            assert {"foreground_mae", "dark_collapse_fraction", "bpnet_exact_match"} <= set(entry)
        assert report["config_echo"]["seed"] == cfg.seed
        assert (tmp_path / "ab" / "report.json").exists()

    def test_config_echo_rerun_exact(self, tiny_dbs):
        cfg = tiny_cfg(tiny_dbs, calib_epochs=4, clf_epochs=4)
        report1 = run_bpnet(cfg)
        report2 = run_from_echo(report1["config_echo"])
        assert report1["exact_match_accuracy"] == report2["exact_match_accuracy"]
        assert report1["extras"]["raw_classifier_exact_match"] == report2["extras"]["raw_classifier_exact_match"]
        assert report1["per_label"] == report2["per_label"]


class TestComposability:
    def test_in_memory_equals_staged_disk(self, tiny_dbs, tmp_path):
        db = load_dataset(tiny_dbs["exp1"])
        cfg = tiny_cfg(tiny_dbs, calib_epochs=3)
        calib, *_ = train_calibration(db, cfg)
        te_x, te_y, _ = db.subset("test")

        from lgdemux.pipeline import calibrate_images

        calibrated = calibrate_images(calib, te_x)
        # stage through PFM files, bit-exact float32
        staged = []
        for i in range(len(calibrated)):
            path = tmp_path / f"calibrated_{i}.pfm"
            fileio.write_pfm(path, calibrated[i, 0])
            staged.append(fileio.read_pfm(path))
        staged = np.stack(staged)[:, None]
        from lgdemux.nncore import Network, classifier_net_spec

        clf = Network(classifier_net_spec(4, (8, 8)), (1, 16, 16), seed=1)
        _, scores_mem = classify(clf, calibrated)
        _, scores_disk = classify(clf, staged)
        np.testing.assert_allclose(scores_mem, scores_disk, atol=1e-6)
        assert np.max(np.abs(scores_mem - scores_disk)) == 0.0  # float32 round trip is exact


class TestRender:
    def test_empty_list_no_files(self, tmp_path):
        assert render_panel([], None, tmp_path / "none") == []
        assert not (tmp_path / "none").exists()

    def test_zero_aberration_near_identity(self, tiny_dbs, tmp_path):
        db = load_dataset(tiny_dbs["exp1_clean"])
        cfg = ExperimentConfig(
            op="bpnet", clf_db=str(tiny_dbs["num1"]), calib_db=str(tiny_dbs["exp1_clean"]),
            calib_base_channels=8, calib_epochs=30, calib_batch=8, seed=2, patience=None,
        )
        calib, *_ = train_calibration(db, cfg)
        te_x, _, te_t = db.subset("test")
        pred = calib.forward(te_x[:1])[0, 0]
        score = ssim(pred, te_t[0, 0])
        assert score > 0.95, f"SSIM {score}"
        files = render_panel(
            [{"input": te_x[0, 0], "target": te_t[0, 0]}], calib, tmp_path / "p"
        )
        assert len(files) == 2
        grid = fileio.read_pfm(files[0])
        assert grid.shape[1] == 3 * 16 + 2 * 2

    def test_random_inputs_no_crash(self, tiny_dbs, tmp_path):
        db = load_dataset(tiny_dbs["exp1"])
        cfg = tiny_cfg(tiny_dbs, calib_epochs=1)
        calib, *_ = train_calibration(db, cfg)
        rng = np.random.default_rng(0)
        probes = [{"input": rng.normal(size=(16, 16)).astype(np.float32)} for _ in range(3)]
        files = render_panel(probes, calib, tmp_path / "rp", stem="random")
        assert len(files) == 2


class TestSsim:
    def test_identical_images(self):
        x = np.random.default_rng(0).uniform(-1, 1, (16, 16))
        assert ssim(x, x) == pytest.approx(1.0)

    def test_uncorrelated_low(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(-1, 1, (32, 32))
        b = rng.uniform(-1, 1, (32, 32))
        assert ssim(a, b) < 0.2


class TestConfig:
    def test_round_trip(self, tiny_dbs):
        cfg = tiny_cfg(tiny_dbs)
        back = ExperimentConfig.from_dict(cfg.to_dict())
        assert back.to_dict() == cfg.to_dict()

    def test_bad_op(self):
        with pytest.raises(ValueError):
            ExperimentConfig(op="nope", clf_db="x")
