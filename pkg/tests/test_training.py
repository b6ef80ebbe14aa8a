import csv
import json
import logging

import pytest
import torch

from tokencodec.codec.losses import mel_loss, quantizer_loss
from tokencodec.core.config import TrainConfig, with_overrides
from tokencodec.core.exceptions import InsufficientInitDataError, TrainingFaultError, ValidationError
from tokencodec.core.monitoring import MetricsCollector
from tokencodec.pipeline.analysis import encode_histogram
from tokencodec.pipeline.data import TensorClips
from tokencodec.pipeline import training
from tokencodec.pipeline.training import Trainer, lr_at

from .conftest import tone


def test_lr_schedule_points():
    """Cosine decay from the peak to zero, with the peak halved at mid-schedule."""
    cfg = TrainConfig(total_steps=1000)
    assert lr_at(0, cfg) == pytest.approx(2e-4)
    assert lr_at(500, cfg) == pytest.approx(1e-4)
    assert lr_at(1000, cfg) == pytest.approx(0.0, abs=1e-20)


def test_lr_constant_schedule():
    cfg = TrainConfig(total_steps=10, schedule="constant", lr=1e-3)
    assert lr_at(7, cfg) == 1e-3


def test_lr_out_of_range():
    cfg = TrainConfig(total_steps=10)
    with pytest.raises(ValidationError):
        lr_at(11, cfg)
    with pytest.raises(ValidationError):
        lr_at(-1, cfg)


def _reconstruction_terms(trainer, batch):
    with torch.no_grad():
        fake, result = trainer.model(batch)
        real = batch[..., : fake.shape[-1]]
        cfg = trainer.cfg
        return (
            cfg.losses.lambda_mel * mel_loss(real, fake, cfg.mel_spectral, cfg.mel, cfg.sample_rate)
            + cfg.losses.lambda_q * quantizer_loss(result.latents, result.codes)
        ).item()


def test_codebook_initialized_before_first_step(tiny_config, tone_clips):
    trainer = Trainer(tiny_config, tone_clips, device="cpu")
    assert not trainer.model.quantizer.initialized
    trainer.train_step_g()
    assert trainer.model.quantizer.initialized


def test_trainer_logs_parameter_counts(tiny_config, tone_clips, caplog):
    with caplog.at_level(logging.INFO):
        trainer = Trainer(tiny_config, tone_clips, device="cpu")
    summary = trainer.model.parameter_summary()
    assert summary["encoder"] == sum(p.numel() for p in trainer.model.encoder.parameters())
    assert summary["codebook_entries"] == tiny_config.vq.codebook_size
    assert "Parameter counts" in caplog.text
    assert "critics" in caplog.text


def test_codebook_init_needs_enough_frames(tiny_config, monkeypatch):
    """A corpus too small to fill the k-means buffer is reported, not padded."""
    monkeypatch.setattr(training, "MAX_INIT_BATCHES", 3)
    cfg = with_overrides(tiny_config, {"vq": {"codebook_size": 16, "init_buffer_frames": 10_000_000}})
    trainer = Trainer(cfg, TensorClips([tone(0.5)], 24000), device="cpu")
    with pytest.raises(InsufficientInitDataError):
        trainer.initialize_codebook()


def test_single_generator_step_descends(tiny_config, tone_clips):
    """Without adversarial terms, one step lowers mel plus quantizer loss on its batch."""
    cfg = with_overrides(tiny_config, {
        "losses": {"lambda_adv": 0.0, "lambda_feat": 0.0},
        "train": {"schedule": "constant", "lr": 1e-4},
    })
    trainer = Trainer(cfg, tone_clips, device="cpu")
    trainer.initialize_codebook()
    batch = trainer.batch(0)
    before = _reconstruction_terms(trainer, batch)
    trainer.train_step_g(batch)
    after = _reconstruction_terms(trainer, batch)
    assert after < before


def test_zero_lr_leaves_weights_unchanged(tiny_config, tone_clips):
    """With lr = 0 both optimizers leave every parameter bitwise identical."""
    cfg = with_overrides(tiny_config, {"train": {"lr": 0.0}})
    trainer = Trainer(cfg, tone_clips, device="cpu")
    trainer.initialize_codebook()
    model_before = {k: v.clone() for k, v in trainer.model.named_parameters()}
    critics_before = {k: v.clone() for k, v in trainer.critics.named_parameters()}

    trainer.train_step_g()
    trainer.train_step_d()

    for name, param in trainer.model.named_parameters():
        assert torch.equal(param, model_before[name]), name
    for name, param in trainer.critics.named_parameters():
        assert torch.equal(param, critics_before[name]), name


def test_strict_alternation(tiny_config, tone_clips):
    trainer = Trainer(tiny_config, tone_clips, device="cpu")
    with pytest.raises(TrainingFaultError):
        trainer.train_step_d()
    trainer.train_step_g()
    with pytest.raises(TrainingFaultError):
        trainer.train_step_g()
    trainer.train_step_d()
    assert trainer.step == 1


def test_seeded_runs_are_identical(tiny_config, tone_clips):
    def totals():
        trainer = Trainer(tiny_config, tone_clips, device="cpu")
        return [(g.total, d.total) for g, d in trainer.fit(steps=3)]

    first, second = totals(), totals()
    assert first == second


def test_discriminator_warmup(tiny_config, tone_clips):
    """Critics neither train nor contribute adversarial terms during warm-up."""
    cfg = with_overrides(tiny_config, {"train": {"disc_warmup_steps": 2}})
    trainer = Trainer(cfg, tone_clips, device="cpu")
    critics_before = {k: v.clone() for k, v in trainer.critics.named_parameters()}

    g, d = trainer.train_step_g(), trainer.train_step_d()
    assert g.terms["adv"] == 0.0 and g.terms["feat"] == 0.0
    assert d.total == 0.0
    for name, param in trainer.critics.named_parameters():
        assert torch.equal(param, critics_before[name])

    trainer.fit(steps=1)
    g, d = trainer.train_step_g(), trainer.train_step_d()
    assert g.terms["adv"] > 0.0
    assert d.total > 0.0


def test_gradient_clipping_runs(tiny_config, tone_clips):
    cfg = with_overrides(tiny_config, {"train": {"grad_clip": 0.5, "quantizer_reduction": "mean"}})
    trainer = Trainer(cfg, tone_clips, device="cpu")
    g = trainer.train_step_g()
    trainer.train_step_d()
    assert torch.isfinite(torch.tensor(g.total))


def test_nan_loss_writes_diagnostic_dump(tiny_config, tone_clips, tmp_path):
    trainer = Trainer(tiny_config, tone_clips, device="cpu", fault_dir=tmp_path)
    trainer.initialize_codebook()
    batch = trainer.batch(0).clone()
    batch[0, 100] = float("nan")

    with pytest.raises(TrainingFaultError) as exc_info:
        trainer.train_step_g(batch)

    dump = json.loads((tmp_path / "fault_step0_generator.json").read_text())
    assert dump["step"] == 0
    assert dump["batch"]["finite"] is False
    assert exc_info.value.details["dump"].endswith("fault_step0_generator.json")


def test_sample_rate_mismatch(tiny_config):
    with pytest.raises(ValidationError):
        Trainer(tiny_config, TensorClips([tone(1.0, sample_rate=16000)], 16000), device="cpu")


def test_fit_writes_metrics_and_checkpoints(tiny_config, tone_clips, tmp_path):
    """Each iteration writes a generator and a critic row; checkpoints land on schedule."""
    cfg = with_overrides(tiny_config, {"train": {"checkpoint_every": 2}})
    metrics = MetricsCollector()
    metrics.open_csv(tmp_path / "metrics.csv")
    trainer = Trainer(cfg, tone_clips, device="cpu", metrics=metrics)
    history = trainer.fit(steps=4, checkpoint_dir=tmp_path / "ckpt")
    metrics.close()

    assert len(history) == 4
    assert trainer.step == 4
    with open(tmp_path / "metrics.csv") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == 8
    assert [r["side"] for r in rows[:2]] == ["generator", "discriminator"]
    assert float(rows[0]["utilization"]) > 0
    assert (tmp_path / "ckpt" / "step0000002.pt").exists()
    assert (tmp_path / "ckpt" / "step0000004.pt").exists()
    assert (tmp_path / "ckpt" / "last.pt").exists()


def test_fit_stops_at_total_steps(tiny_config, tone_clips):
    cfg = with_overrides(tiny_config, {"train": {"total_steps": 3}})
    trainer = Trainer(cfg, tone_clips, device="cpu")
    assert len(trainer.fit(steps=10)) == 3


def _overfit_correlation(model, clips) -> float:
    """Pearson correlation between every clip and its reconstruction, pooled."""
    model.eval()
    real, fake = [], []
    with torch.no_grad():
        for i in range(len(clips)):
            audio = clips.load(i).samples
            decoded, _ = model(audio.unsqueeze(0))
            fake.append(decoded[0])
            real.append(audio[: decoded.shape[-1]])
    return torch.corrcoef(torch.stack([torch.cat(real), torch.cat(fake)]))[0, 1].item()


@pytest.mark.slow
def test_toy_overfit(toy_config, tone_clips):
    """Ten 1 s clips, 2000 steps, batch 4.

    Mel loss halves from its step-10 value, decoded audio tracks the clips,
    and the codes used on the clips never shrink over the first 500 steps.
    """
    cfg = with_overrides(toy_config, {"train": {"total_steps": 2000, "batch_size": 4, "crop_seconds": 1.0}})
    trainer = Trainer(cfg, tone_clips, device="cpu")
    trainer.initialize_codebook()
    clips = [tone_clips.load(i) for i in range(len(tone_clips))]

    utilization = [encode_histogram(trainer.model, clips).utilization]
    history = []
    for _ in range(2000):
        history.append(trainer.train_step_g())
        trainer.train_step_d()
        if trainer.step <= 500 and trainer.step % 50 == 0:
            utilization.append(encode_histogram(trainer.model, clips).utilization)

    baseline = history[10].terms["mel"]
    final = sum(g.terms["mel"] for g in history[-10:]) / 10
    assert final < 0.5 * baseline
    assert _overfit_correlation(trainer.model, tone_clips) > 0.9

    one_code = 1 / cfg.vq.codebook_size
    assert len(utilization) == 11
    assert utilization[0] > 0
    assert all(b >= a - one_code for a, b in zip(utilization, utilization[1:])), utilization
