import dataclasses

import numpy as np
import pytest
import torch

from bandplc.audio import build_manifest
from bandplc.channel import GEParams, sample_trace
from bandplc.generator import load_checkpoint
from bandplc.training import (ConfigError, TrainingConfig, init_train_state,
                              load_train_checkpoint, make_batch, parse_config_file,
                              save_train_checkpoint, train_step, validate,
                              write_config_file)


def _quick_config(corpus, out_dir, **overrides):
    defaults = dict(data_dir=str(corpus), out_dir=str(out_dir), batch_size=2,
                    segment_seconds=1.0, total_steps=4, valid_fraction=0.0, seed=3)
    defaults.update(overrides)
    return TrainingConfig(**defaults)


def _manifest_for(config):
    return build_manifest(config.data_dir, config.segment_seconds,
                          config.valid_fraction, config.seed)


class TestConfig:
    def test_round_trip_through_file(self, tmp_path, speech_corpus):
        config = _quick_config(speech_corpus, tmp_path, alpha=0.05, adv_weight=0.5,
                               mask_loss_to_lost_regions=True)
        path = tmp_path / "run.cfg"
        write_config_file(config, path)
        assert parse_config_file(path) == config

    def test_comments_and_blank_lines(self, tmp_path, speech_corpus):
        path = tmp_path / "run.cfg"
        path.write_text(
            f"# toy run\n\ndata_dir = {speech_corpus}\n"
            "batch_size = 2  # small\nsplice_in_training = true\n"
        )
        config = parse_config_file(path)
        assert config.batch_size == 2
        assert config.splice_in_training is True

    def test_unknown_key_has_line_number(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("data_dir = /tmp\nnot_a_key = 1\n")
        with pytest.raises(ConfigError, match=":2:"):
            parse_config_file(path)

    def test_bad_value_has_line_number(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("data_dir = /tmp\nbatch_size = four\n")
        with pytest.raises(ConfigError, match=":2:"):
            parse_config_file(path)

    def test_missing_equals_sign(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("data_dir /tmp\n")
        with pytest.raises(ConfigError, match=":1:"):
            parse_config_file(path)

    def test_missing_data_dir(self, tmp_path):
        path = tmp_path / "bad.cfg"
        path.write_text("batch_size = 2\n")
        with pytest.raises(ConfigError, match="data_dir"):
            parse_config_file(path)

    def test_ge_ranges_respect_cap(self, tmp_path):
        with pytest.raises(ConfigError, match="cap"):
            TrainingConfig(data_dir="/tmp", p_gb_min=0.4, p_gb_max=0.6,
                           p_bg_min=0.3, p_bg_max=0.5)

    def test_segment_must_align_to_packets(self):
        with pytest.raises(ConfigError):
            TrainingConfig(data_dir="/tmp", segment_seconds=0.013)


class TestMakeBatch:
    def test_deterministic_per_step(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path)
        manifest = _manifest_for(config)
        a = make_batch(manifest, config, step=5)
        b = make_batch(manifest, config, step=5)
        assert torch.equal(a.bands.wide, b.bands.wide)
        assert torch.equal(a.clean, b.clean)
        assert torch.equal(a.f0_target, b.f0_target)
        assert all(np.array_equal(x.flags, y.flags) for x, y in zip(a.traces, b.traces))

    def test_steps_differ(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path)
        manifest = _manifest_for(config)
        a = make_batch(manifest, config, step=0)
        b = make_batch(manifest, config, step=1)
        assert not torch.equal(a.clean, b.clean)

    def test_degenerate_channel_all_received(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path, p_gb_min=0.0, p_gb_max=0.0)
        manifest = _manifest_for(config)
        batch = make_batch(manifest, config, step=0)
        assert torch.count_nonzero(batch.flags) == 0
        assert torch.equal(batch.clean, batch.lossy)
        # loss terms stay defined with nothing lost
        state = init_train_state(config)
        report = train_step(state, batch)
        assert all(np.isfinite(v) for v in report.as_row())

    def test_flags_follow_traces(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path, seed=11)
        manifest = _manifest_for(config)
        batch = make_batch(manifest, config, step=2)
        for i, trace in enumerate(batch.traces):
            per_frame = trace.flags[(np.arange(100) * 480) // 960]
            assert np.array_equal(batch.flags[i].numpy().astype(bool), per_frame)

    def test_empty_manifest(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path, valid_fraction=0.0)
        manifest = _manifest_for(config)
        empty = dataclasses.replace(manifest, entries=tuple(
            dataclasses.replace(e, split="valid") for e in manifest.entries))
        with pytest.raises(ValueError, match="no training entries"):
            make_batch(empty, config, 0)

    def test_cap_statistics_over_config_ranges(self, tmp_path):
        # the <= 50% cap holds across 10^4 channel draws from the default ranges
        config = TrainingConfig(data_dir="/tmp")
        rng = np.random.default_rng(0)
        rates = np.empty(10 ** 4)
        for i in range(10 ** 4):
            params = GEParams(
                p_gb=float(rng.uniform(config.p_gb_min, config.p_gb_max)),
                p_bg=float(rng.uniform(config.p_bg_min, config.p_bg_max)),
                seed=int(rng.integers(2 ** 31)),
            )
            rates[i] = sample_trace(params, 100, config.max_loss_rate).loss_rate
        assert rates.max() <= 0.5
        assert rates.mean() <= 0.5


class TestTrainStep:
    def test_adversarial_decoupling(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path, adv_weight=0.0)
        manifest = _manifest_for(config)
        state = init_train_state(config)
        before = [p.clone() for p in state.d_parameters()]
        report = train_step(state, make_batch(manifest, config, 0))
        assert report.gan_g == 0.0 and report.metric_g == 0.0
        for p_before, p_after in zip(before, state.d_parameters()):
            assert torch.equal(p_before, p_after)

    def test_report_recombination_identity(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path)
        manifest = _manifest_for(config)
        state = init_train_state(config)
        for step in range(2):
            r = train_step(state, make_batch(manifest, config, step))
            w = config.loss_weights
            expected = (r.plcpa + r.mae + w.alpha * r.f0 + w.beta * r.linguistic
                        + w.adv_weight * (r.gan_g + r.metric_g))
            assert r.total == expected

    def test_all_terms_finite(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path)
        manifest = _manifest_for(config)
        state = init_train_state(config)
        r = train_step(state, make_batch(manifest, config, 0))
        assert all(np.isfinite(v) for v in r.as_row())

    def test_masked_losses_run(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path, mask_loss_to_lost_regions=True)
        manifest = _manifest_for(config)
        state = init_train_state(config)
        r = train_step(state, make_batch(manifest, config, 0))
        assert np.isfinite(r.total)

    def test_splice_in_training_runs(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path, splice_in_training=True)
        manifest = _manifest_for(config)
        state = init_train_state(config)
        r = train_step(state, make_batch(manifest, config, 0))
        assert np.isfinite(r.total)

    def test_optimizers_share_no_parameters(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path)
        state = init_train_state(config)
        g_params = {id(p) for group in state.opt_g.param_groups for p in group["params"]}
        d_params = {id(p) for group in state.opt_d.param_groups for p in group["params"]}
        assert g_params and d_params
        assert g_params.isdisjoint(d_params)

    def test_step_counter_advances(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path)
        manifest = _manifest_for(config)
        state = init_train_state(config)
        assert state.step == 0
        train_step(state, make_batch(manifest, config, 0))
        assert state.step == 1


class TestResume:
    def test_checkpoint_resume_reproduces_next_loss(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path)
        manifest = _manifest_for(config)
        state = init_train_state(config)
        train_step(state, make_batch(manifest, config, 0))
        ckpt = tmp_path / "mid.pt"
        save_train_checkpoint(ckpt, state)
        r_continued = train_step(state, make_batch(manifest, config, state.step))

        resumed = load_train_checkpoint(ckpt, config)
        assert resumed.step == 1
        r_resumed = train_step(resumed, make_batch(manifest, config, resumed.step))
        for field in ("plcpa", "mae", "f0", "linguistic", "gan_g", "metric_g", "total"):
            assert getattr(r_resumed, field) == pytest.approx(
                getattr(r_continued, field), abs=1e-6)

    def test_config_mismatch_rejected(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path)
        state = init_train_state(config)
        ckpt = tmp_path / "s.pt"
        save_train_checkpoint(ckpt, state)
        other = dataclasses.replace(config, batch_size=3)
        with pytest.raises(ConfigError, match="config"):
            load_train_checkpoint(ckpt, other)

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk.pt"
        path.write_bytes(b"garbage")
        with pytest.raises(ConfigError):
            load_train_checkpoint(path)


class TestValidate:
    def test_zero_loss_reports_capped_si_sdr(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path, valid_fraction=0.5,
                               p_gb_min=0.0, p_gb_max=0.0)
        manifest = _manifest_for(config)
        state = init_train_state(config)
        metrics = validate(state, manifest, max_files=1)
        assert metrics["si_sdr"] == 60.0
        assert metrics["si_sdr_lost"] == 60.0
        assert metrics["plcpa"] == pytest.approx(0.0, abs=1e-9)
        assert metrics["mae"] == pytest.approx(0.0, abs=1e-12)

    def test_empty_validation_set(self, speech_corpus, tmp_path):
        config = _quick_config(speech_corpus, tmp_path, valid_fraction=0.0)
        manifest = _manifest_for(config)
        state = init_train_state(config)
        with pytest.raises(ValueError, match="empty"):
            validate(state, manifest)

    def test_training_improves_lost_region_si_sdr(self, overfit_run, overfit_corpus):
        trained = overfit_run["state"]
        config = dataclasses.replace(trained.config, valid_fraction=0.25)
        manifest = build_manifest(config.data_dir, config.segment_seconds,
                                  config.valid_fraction, config.seed)
        untrained = init_train_state(config)
        untrained_metrics = validate(untrained, manifest)
        trained_state = dataclasses.replace(trained, config=config)
        trained_metrics = validate(trained_state, manifest)
        assert trained_metrics["si_sdr_lost"] > untrained_metrics["si_sdr_lost"]


class TestTrainLoopArtifacts:
    def test_csv_and_checkpoints(self, overfit_run):
        out_dir = overfit_run["out_dir"]
        csv_path = overfit_run["csv_path"]
        header = csv_path.read_text().splitlines()[0]
        assert header == "step,plcpa,mae,f0,linguistic,gan_g,metric_g,total"
        assert len(csv_path.read_text().splitlines()) == 201  # header + 200 steps
        assert (out_dir / "ckpt_step100.pt").exists()
        assert (out_dir / "ckpt_step200.pt").exists()
        assert (out_dir / "train_state.pt").exists()
        model, extra = load_checkpoint(out_dir / "generator.pt")
        assert extra["step"] == 200
        assert (out_dir / "config.resolved.cfg").exists()

    def test_csv_rows_recombine(self, overfit_run):
        rows = np.genfromtxt(overfit_run["csv_path"], delimiter=",", names=True)
        w = overfit_run["config"].loss_weights
        expected = (rows["plcpa"] + rows["mae"] + w.alpha * rows["f0"]
                    + w.beta * rows["linguistic"]
                    + w.adv_weight * (rows["gan_g"] + rows["metric_g"]))
        assert np.allclose(rows["total"], expected, atol=1e-6)
