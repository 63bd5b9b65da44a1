import json
import math
import shutil

import numpy as np
import pytest
from conftest import TINY, tiny_train_config
from hypothesis import given
from hypothesis import strategies as st

from mapgen.autodiff import load_checkpoint
from mapgen.dataio import read_label, write_synthetic_dataset
from mapgen.training import (
    ConfigError,
    LrSchedule,
    MapGenModel,
    StageDependencyError,
    autolabel,
    infer,
    load_model,
    lr_at,
    metrics_path,
    model_config,
    read_sidecar,
    run_stage,
    state_dir,
    train_config,
)
from mapgen.training.stages import _BoxTask, _GenTask, _SegTask


def test_lr_examples():
    total = 1000
    w = math.ceil(0.05 * total)
    assert lr_at(0, total) == 0.0
    assert lr_at(w, total) == 5e-4
    assert lr_at(total - 1, total) < 1e-6 * 5e-4
    assert lr_at(w // 2, total) == pytest.approx(5e-4 * (w // 2) / w)
    with pytest.raises(ValueError):
        lr_at(total, total)
    with pytest.raises(ValueError):
        lr_at(-1, total)


@given(st.integers(2, 5000), st.floats(0.0, 0.5))
def test_lr_continuous_at_warmup_and_nonincreasing_after(total, frac):
    s = LrSchedule(total, 5e-4, frac)
    w = s.warmup_steps
    if 0 < w < total:
        # the ramp would reach base_lr at w; the cosine starts there
        assert abs(s(w) - 5e-4 * w / w) <= 1e-12 * 5e-4
    lrs = [s(i) for i in range(min(w, total - 1), total)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    assert all(0.0 <= v <= 5e-4 for v in lrs)


def test_config_defaults_and_validation():
    cfg = train_config()
    assert (cfg.epochs, cfg.batch_size, cfg.lr, cfg.warmup_frac) == (150, 32, 5e-4, 0.05)
    for bad in [dict(stage="det"), dict(epochs=0), dict(warmup_frac=1.0), dict(lr=0.0), dict(mask_ratio=(0.5, 0.1))]:
        with pytest.raises(ConfigError):
            train_config(**bad)
    for bad in [dict(fusion="sum"), dict(pos_emb="rope"), dict(gen_heads=3), dict(seg_image_widths=(4, 8))]:
        with pytest.raises(ConfigError):
            model_config(**bad)
    with pytest.raises(ConfigError):
        train_config(nonsense=1)
    with pytest.raises(ConfigError):
        model_config("huge")


def test_gen_without_seg_names_seg(tmp_path, small_samples):
    with pytest.raises(StageDependencyError, match="seg"):
        run_stage(tiny_train_config("gen"), None, tmp_path / "g.mgck", samples=small_samples)
    with pytest.raises(StageDependencyError, match="seg"):
        run_stage(tiny_train_config("box"), None, tmp_path / "b.mgck", samples=small_samples)


def test_box_without_gen_names_gen(trained_chain, tmp_path, small_samples):
    with pytest.raises(StageDependencyError, match="'gen'"):
        run_stage(tiny_train_config("box"), trained_chain["seg"], tmp_path / "b.mgck", samples=small_samples)
    # the no-generation variant only needs segmentation
    run_stage(tiny_train_config("box", epochs=1, generation=False), trained_chain["seg"], tmp_path / "b.mgck",
              samples=small_samples)


def test_stage_runs_leave_other_prefixes_bit_identical(trained_chain):
    seg, gen, box = (load_checkpoint(trained_chain[s]) for s in ("seg", "gen", "box"))
    for before, after, prefix in [(seg, gen, "seg."), (gen, box, "seg."), (gen, box, "gen.")]:
        names = [k for k in before if k.startswith(prefix)]
        assert names
        for k in names:
            assert after[k].tobytes() == before[k].tobytes()
    assert not any(k.startswith("gen.") for k in seg)


@pytest.mark.parametrize("stage", ["seg", "gen", "box"])
def test_frozen_parameters_get_no_gradient_buffer(stage, tiny_cfg, small_samples):
    model = MapGenModel(tiny_cfg, 0)
    model.freeze_all_but(stage)
    cfg = tiny_train_config(stage)
    task = {"seg": _SegTask(model, small_samples[:8]), "gen": _GenTask, "box": _BoxTask}[stage]
    if stage != "seg":
        task = task(model, small_samples[:8], cfg)
    task.loss(task.items[:4], np.random.default_rng(0)).backward()
    for other in ("seg", "gen", "box"):
        grads = [p.grad for p in model.parameters(other)]
        if other == stage:
            assert any(g is not None and g.any() for g in grads)
        else:
            assert all(g is None for g in grads)


def test_same_seed_gives_bit_identical_checkpoints(tmp_path, small_samples):
    for d in ("a", "b"):
        run_stage(tiny_train_config("seg"), None, tmp_path / d / "seg.mgck", samples=small_samples)
    assert (tmp_path / "a" / "seg.mgck").read_bytes() == (tmp_path / "b" / "seg.mgck").read_bytes()
    run_stage(tiny_train_config("seg", seed=1), None, tmp_path / "c" / "seg.mgck", samples=small_samples)
    assert (tmp_path / "c" / "seg.mgck").read_bytes() != (tmp_path / "a" / "seg.mgck").read_bytes()


@pytest.mark.parametrize("stage", ["seg", "gen"])
def test_resume_matches_uninterrupted(stage, tmp_path, trained_chain, small_samples):
    cfg = tiny_train_config(stage, epochs=3)
    up = trained_chain["seg"] if stage == "gen" else None
    run_stage(cfg, up, tmp_path / "full.mgck", samples=small_samples)
    part = run_stage(cfg, up, tmp_path / "cut.mgck", samples=small_samples, stop_after=0)
    assert not part.completed and not (tmp_path / "cut.mgck").exists()
    rep = run_stage(cfg, up, tmp_path / "cut.mgck", samples=small_samples, resume=True)
    assert rep.completed
    assert (tmp_path / "cut.mgck").read_bytes() == (tmp_path / "full.mgck").read_bytes()
    full_log = [json.loads(x) for x in metrics_path(tmp_path / "full.mgck").read_text().splitlines()]
    cut_log = [json.loads(x) for x in metrics_path(tmp_path / "cut.mgck").read_text().splitlines()]
    assert [r["loss"] for r in cut_log] == [r["loss"] for r in full_log]


def test_metrics_log_and_state_rotation(tmp_path, small_samples):
    out = tmp_path / "seg.mgck"
    rep = run_stage(tiny_train_config("seg", epochs=4), None, out, samples=small_samples)
    lines = [json.loads(x) for x in metrics_path(out).read_text().splitlines()]
    assert [r["epoch"] for r in lines] == [0, 1, 2, 3]
    assert set(lines[0]) == {"epoch", "stage", "loss", "lr", "seconds"}
    assert rep.losses == [r["loss"] for r in lines]
    assert sorted(p.name for p in state_dir(out).iterdir()) == ["epoch_0002.mgck", "epoch_0003.mgck"]
    side = read_sidecar(out)
    assert side["stages"] == ["seg"] and side["model"]["n_points"] == TINY["n_points"]


def test_last_partial_batch_is_kept(tmp_path, small_samples):
    n = 9
    rep = run_stage(tiny_train_config("seg", epochs=1), None, tmp_path / "s.mgck", samples=small_samples[:n])
    assert rep.samples == n


def test_load_model_checks_stages(trained_chain):
    with pytest.raises(StageDependencyError):
        load_model(trained_chain["seg"], need=("seg", "gen"))
    model = load_model(trained_chain["box"])
    assert model.cfg.n_points == TINY["n_points"]


def test_inference_is_deterministic(trained_chain, small_samples):
    model = load_model(trained_chain["box"])
    a = infer(model, small_samples[:6], np.random.default_rng(5))
    b = infer(model, small_samples[:6], np.random.default_rng(5))
    assert a.boxes.shape == (6, 7)
    np.testing.assert_array_equal(a.boxes, b.boxes)


def test_autolabel_accounting(trained_chain, small_dataset, tmp_path):
    model = load_model(trained_chain["box"])
    summary = autolabel(model, small_dataset, tmp_path / "out")
    assert summary["frames"] == 12 and summary["frame_errors"] == 0
    assert summary["kept"] == summary["boxes_in"] - summary["skipped"]
    written = sum(len(read_label(p, None)) for p in (tmp_path / "out" / "label_2").glob("*.txt"))
    assert written == summary["kept"]
    on_disk = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert on_disk["kept"] == summary["kept"]


def test_autolabel_empty_dataset(trained_chain, tmp_path):
    write_synthetic_dataset(tmp_path / "empty", 0, seed=1)
    summary = autolabel(load_model(trained_chain["box"]), tmp_path / "empty", tmp_path / "out")
    assert (summary["frames"], summary["boxes_in"], summary["kept"], summary["skipped"]) == (0, 0, 0, 0)
    assert list((tmp_path / "out" / "label_2").iterdir()) == []


def test_autolabel_missing_calibration_is_recorded(trained_chain, small_dataset, tmp_path):
    root = tmp_path / "data"
    shutil.copytree(small_dataset, root)
    (root / "calib" / "000003.txt").unlink()
    summary = autolabel(load_model(trained_chain["box"]), root, tmp_path / "out")
    assert summary["frames"] == 11 and summary["frame_errors"] == 1
    assert summary["errors"][0]["scene"] == "000003"
    assert not (tmp_path / "out" / "label_2" / "000003.txt").exists()
