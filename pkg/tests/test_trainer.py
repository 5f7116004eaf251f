import copy
import csv
import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glad import trainer
from glad.model import ModelConfig, init_glad_model
from glad.synthdata import DomainSpec, generate_domain, strip_labels
from glad.trainer import (TrainConfig, TrainReport, ablation_rows,
                          active_groups, config_from_dict, config_to_dict,
                          evaluate, format_ablation_table, lr_at,
                          run_ablation_matrix, step_losses, train)

TINY_MODEL = ModelConfig(frame_dim=64, enc_hidden=8, enc_out=6, feat_dim=6,
                         n_classes=4, n_frames=4, tol_clips=3, tol_hidden=8,
                         domain_hidden=(8, 6, 4))


def tiny_config(**overrides):
    defaults = dict(warmup_epochs=1, main_epochs=2, batch_size=4,
                    lr_drop_epochs=(1,), seed=0, model=TINY_MODEL)
    defaults.update(overrides)
    return TrainConfig(**defaults)


def tiny_data(seed=0, n=16, n_classes=4):
    src_spec = DomainSpec(n_classes=n_classes, n_videos=n, length_range=(12, 24),
                          seed=seed, domain="source")
    tgt_spec = DomainSpec(n_classes=n_classes, n_videos=n, length_range=(8, 12),
                          background_mode="fixed_checkerboard", seed=seed + 1,
                          domain="target")
    _, src = generate_domain(src_spec)
    _, tgt = generate_domain(tgt_spec)
    return src, tgt


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(global_views=0, local_views=0)


def test_lr_schedule_paper_values():
    cfg = TrainConfig(lr=2e-3, lr_drop_epochs=(5, 10), lr_drop_factor=10.0)
    assert lr_at(0, cfg) == pytest.approx(2e-3)
    assert lr_at(4, cfg) == pytest.approx(2e-3)
    assert lr_at(5, cfg) == pytest.approx(2e-4)
    assert lr_at(9, cfg) == pytest.approx(2e-4)
    assert lr_at(10, cfg) == pytest.approx(2e-5)
    assert lr_at(49, cfg) == pytest.approx(2e-5)


@given(st.integers(0, 100), st.integers(0, 100))
@settings(max_examples=50)
def test_lr_schedule_non_increasing(e1, e2):
    cfg = TrainConfig()
    lo, hi = sorted((e1, e2))
    assert lr_at(hi, cfg) <= lr_at(lo, cfg)


def test_lr_rejects_negative_epoch():
    with pytest.raises(ValueError):
        lr_at(-1, TrainConfig())


def test_active_groups_by_phase():
    cfg = tiny_config()
    assert active_groups(cfg, "warmup") == ["enc", "proj", "tol"]
    main = active_groups(cfg, "main")
    assert set(main) == {"enc", "proj", "act", "tol", "dg", "dl", "dx"}
    src_only = tiny_config(use_tol=False, use_gla=False)
    assert active_groups(src_only, "main") == ["enc", "proj", "act"]
    dann = tiny_config(use_tol=False, gla_views=("gg",))
    assert active_groups(dann, "main") == ["enc", "proj", "act", "dg"]


def test_enabled_gla_views_respect_view_counts():
    cfg = tiny_config(global_views=0)
    assert cfg.enabled_gla_views() == ("ll",)
    cfg = tiny_config(local_views=0)
    assert cfg.enabled_gla_views() == ("gg",)


def test_step_losses_shapes_and_finiteness():
    src, tgt = tiny_data()
    cfg = tiny_config()
    mdl = init_glad_model(TINY_MODEL, seed=0)
    rng = np.random.default_rng(0)
    stats, grads = step_losses(mdl, src[:4], strip_labels(tgt[:4]), cfg, rng,
                               "main", None)
    assert np.isfinite(stats["loss_total"])
    assert stats["loss_total"] == pytest.approx(
        stats["loss_ce"] + stats["loss_tol"] - stats["loss_gla"])
    for group in mdl.param_groups():
        for g, p in zip(grads[group], mdl.params[group]):
            assert g.shape == p.shape
            assert np.all(np.isfinite(g))


def test_step_losses_warmup_touches_only_tol_path():
    src, tgt = tiny_data()
    cfg = tiny_config()
    mdl = init_glad_model(TINY_MODEL, seed=1)
    rng = np.random.default_rng(1)
    stats, grads = step_losses(mdl, src[:4], strip_labels(tgt[:4]), cfg, rng,
                               "warmup", None)
    assert stats["loss_ce"] == 0.0 and stats["loss_gla"] == 0.0
    assert stats["loss_tol"] > 0.0
    for group in ("act", "dg", "dl", "dx"):
        assert all(np.all(g == 0) for g in grads[group])
    assert any(np.any(g != 0) for g in grads["tol"])


def test_step_losses_rejects_mismatched_batches():
    src, tgt = tiny_data()
    mdl = init_glad_model(TINY_MODEL, seed=0)
    with pytest.raises(ValueError):
        step_losses(mdl, src[:4], strip_labels(tgt[:3]), tiny_config(),
                    np.random.default_rng(0), "main", None)


def test_epoch_batches_cover_smaller_domain():
    rng = np.random.default_rng(0)
    batches = list(trainer._epoch_batches(10, 6, 4, rng))
    assert len(batches) == math.ceil(6 / 4)
    for src_idx, tgt_idx in batches:
        assert len(src_idx) == 4 and len(tgt_idx) == 4
        assert all(0 <= i < 10 for i in src_idx)
        assert all(0 <= i < 6 for i in tgt_idx)


def test_train_writes_report_and_checkpoint(tmp_path):
    src, tgt = tiny_data()
    cfg = tiny_config()
    mdl, report = train(cfg, src, tgt, tgt_test=tgt, out_dir=str(tmp_path))
    assert (tmp_path / "report.csv").exists()
    assert (tmp_path / "report.json").exists()
    assert (tmp_path / "final" / "params.bin").exists()
    assert len(report.epochs) == cfg.warmup_epochs + cfg.main_epochs
    with open(tmp_path / "report.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["phase", "epoch", "lr", "loss_ce", "loss_tol",
                       "loss_gla", "loss_total", "dom_acc_gg", "dom_acc_ll",
                       "dom_acc_cross", "target_mca"]
    assert len(rows) == 1 + len(report.epochs)


def test_train_skips_warmup_without_tol():
    src, tgt = tiny_data()
    cfg = tiny_config(use_tol=False)
    _, report = train(cfg, src, tgt)
    assert all(e["phase"] == "main" for e in report.epochs)


def test_train_deterministic_same_seed(tmp_path):
    src, tgt = tiny_data()
    cfg = tiny_config()
    train(cfg, src, tgt, tgt_test=tgt, out_dir=str(tmp_path / "a"))
    train(cfg, src, tgt, tgt_test=tgt, out_dir=str(tmp_path / "b"))
    a = (tmp_path / "a" / "report.csv").read_bytes()
    b = (tmp_path / "b" / "report.csv").read_bytes()
    assert a == b


def test_train_seed_changes_results():
    src, tgt = tiny_data()
    _, r0 = train(tiny_config(seed=0), src, tgt)
    _, r1 = train(tiny_config(seed=1), src, tgt)
    assert r0.epochs[-1]["loss_total"] != r1.epochs[-1]["loss_total"]


def test_disabled_paths_match_source_only_bitwise():
    """grl_coeff 0 with every toggle off must equal plain source-only
    training: target data reaches no updated parameter."""
    src, tgt = tiny_data()
    cfg_a = tiny_config(use_bg_aug=False, use_tol=False, use_gla=False,
                        grl_coeff=0.0)
    mdl_a, _ = train(cfg_a, src, tgt)
    other_tgt = [dataclasses.replace(t, frames=np.flip(t.frames, axis=1).copy())
                 for t in tgt]
    mdl_b, _ = train(cfg_a, src, other_tgt)
    for group in ("enc", "proj", "act"):
        for pa, pb in zip(mdl_a.params[group], mdl_b.params[group]):
            assert np.array_equal(pa, pb)


def test_tol_clips_sync_into_model_config():
    src, tgt = tiny_data()
    cfg = tiny_config(tol_clips=2, warmup_epochs=1, main_epochs=0)
    mdl, _ = train(cfg, src, tgt)
    assert mdl.config.tol_clips == 2


def test_evaluate_shapes_and_range():
    src, _ = tiny_data()
    mdl = init_glad_model(TINY_MODEL, seed=0)
    cm, mca = evaluate(mdl, src, 4)
    assert cm.shape == (4, 4)
    assert cm.sum() == len(src)
    assert 0.0 <= mca <= 100.0


def test_evaluate_rejects_unlabeled():
    src, _ = tiny_data()
    mdl = init_glad_model(TINY_MODEL, seed=0)
    with pytest.raises(ValueError):
        evaluate(mdl, strip_labels(src), 4)


def test_ablation_rows_cover_standard_matrix():
    rows = ablation_rows()
    assert set(rows) == {"source_only", "gla_only", "debias_only", "full_glad",
                         "supervised_target", "dann"}
    assert rows["dann"]["gla_views"] == ("gg",)
    assert rows["dann"]["use_bg_aug"] is False


def test_ablation_matrix_and_table():
    src, tgt = tiny_data(n=8)
    base = tiny_config(warmup_epochs=1, main_epochs=1)
    rows = {"source_only": ablation_rows()["source_only"],
            "full_glad": ablation_rows()["full_glad"]}
    table = run_ablation_matrix(base, src, tgt, tgt, seeds=[0, 1], rows=rows)
    for name in rows:
        assert len(table[name]["values"]) == 2
        vals = table[name]["values"]
        assert table[name]["mean"] == pytest.approx(np.mean(vals))
        assert table[name]["std"] == pytest.approx(np.std(vals))
    text = format_ablation_table(table)
    assert "source_only" in text and "full_glad" in text
    assert "+/- std" in text


def test_ablation_matrix_rejects_empty_seeds():
    with pytest.raises(ValueError):
        run_ablation_matrix(tiny_config(), [], [], [], seeds=[])


def test_config_dict_roundtrip():
    cfg = tiny_config(gla_views=("gg",), lr_drop_epochs=(3, 7))
    back = config_from_dict(config_to_dict(cfg))
    assert back == cfg
    assert isinstance(back.model, ModelConfig)


def test_report_csv_floats_roundtrip():
    report = TrainReport()
    report.epochs.append({"phase": "main", "epoch": 0, "lr": 2e-3,
                          "loss_ce": 1.2345678901234567, "loss_tol": 0.1,
                          "loss_gla": 0.2, "loss_total": 1.1345678901234567,
                          "dom_acc_gg": 0.5, "dom_acc_ll": float("nan"),
                          "dom_acc_cross": 0.25, "target_mca": 10.0})
    rows = list(report.csv_rows())
    # repr round-trips the exact float
    assert float(rows[1][3]) == 1.2345678901234567
