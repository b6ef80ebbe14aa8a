"""Alternating generator/critic training."""
import json
import math
from contextlib import contextmanager
from datetime import datetime, timezone
UTC = timezone.utc
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Tuple

import torch
import torch.nn as nn
from torch.optim import AdamW

from ..codec.base import count_parameters, seeded
from ..codec.discriminators import DiscriminatorEnsemble
from ..codec.losses import (
    LossReport,
    adv_loss,
    detach_terms,
    disc_loss,
    feat_match_loss,
    generator_total,
    mel_loss,
    quantizer_loss,
)
from ..codec.model import CodecModel
from ..codec.vq import utilization_rate
from ..core.config import CodecConfig, TrainConfig, get_settings
from ..core.exceptions import InsufficientInitDataError, TrainingFaultError, ValidationError
from ..core.logging import get_logger, log_execution_time
from ..core.monitoring import MetricsCollector
from .data import ClipSource, StepBatchDataset, batch_loader

logger = get_logger(__name__)

INIT_STREAM = 1
MAX_INIT_BATCHES = 1000


def lr_at(step: int, cfg: TrainConfig) -> float:
    """Learning rate for ``step`` under the configured schedule.

    Raises:
        ValidationError: If step lies outside [0, total_steps]
    """
    if not 0 <= step <= cfg.total_steps:
        raise ValidationError("step outside schedule", {"step": step, "total_steps": cfg.total_steps})
    if cfg.schedule == "constant":
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / cfg.total_steps))


def resolve_device(name: Optional[str] = None) -> torch.device:
    name = name or get_settings().DEVICE
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


@contextmanager
def frozen(module: nn.Module) -> Iterator[None]:
    """Temporarily stop gradient accumulation into ``module``'s parameters."""
    flags = [p.requires_grad for p in module.parameters()]
    for p in module.parameters():
        p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in zip(module.parameters(), flags):
            p.requires_grad_(flag)


class Trainer:
    """Owns the generator, the critics, both optimizers and the step counter.

    One iteration is ``train_step_g`` followed by ``train_step_d``; calling them
    out of order raises TrainingFaultError.
    """

    def __init__(
        self,
        cfg: CodecConfig,
        clips: ClipSource,
        device: Optional[str] = None,
        metrics: Optional[MetricsCollector] = None,
        fault_dir: Optional[Path] = None,
    ):
        self.cfg = cfg
        self.train_cfg = cfg.train
        self.device = resolve_device(device)
        self.clips = clips
        self.metrics = metrics or MetricsCollector()
        self.fault_dir = Path(fault_dir or get_settings().LOGS_DIR)
        self.log = logger.bind(seed=cfg.train.seed)

        if clips.sample_rate != cfg.sample_rate:
            raise ValidationError(
                "clip sample rate differs from codec sample rate",
                {"clips": clips.sample_rate, "codec": cfg.sample_rate}
            )

        torch.manual_seed(cfg.train.seed)
        self.model = CodecModel(cfg).to(self.device)
        self.critics = DiscriminatorEnsemble(cfg.discriminators).to(self.device)
        summary = {**self.model.parameter_summary(), "critics": count_parameters(self.critics)}
        self.log.info(f"Parameter counts: {summary}")
        t = cfg.train
        self.opt_g = AdamW(self.model.parameters(), lr=t.lr, betas=t.betas, weight_decay=t.weight_decay)
        self.opt_d = AdamW(self.critics.parameters(), lr=t.lr, betas=t.betas, weight_decay=t.weight_decay)

        self.batches = StepBatchDataset(clips, t)
        self.step = 0
        self._expect = "g"
        self._pending: Optional[Tuple[torch.Tensor, torch.Tensor]] = None

    @property
    def critics_active(self) -> bool:
        return self.step >= self.train_cfg.disc_warmup_steps

    def batch(self, step: Optional[int] = None) -> torch.Tensor:
        return self.batches[self.step if step is None else step]

    def _set_lr(self) -> float:
        lr = lr_at(min(self.step, self.train_cfg.total_steps), self.train_cfg)
        for opt in (self.opt_g, self.opt_d):
            for group in opt.param_groups:
                group["lr"] = lr
        return lr

    @log_execution_time()
    def initialize_codebook(self) -> None:
        """Run k-means over at least ``buffer_frames`` latent frames from init batches.

        Raises:
            InsufficientInitDataError: If the corpus cannot supply enough frames
        """
        needed = self.cfg.vq.buffer_frames
        init_batches = StepBatchDataset(self.clips, self.train_cfg, stream=INIT_STREAM)
        frames: List[torch.Tensor] = []
        gathered = 0
        self.model.encoder.eval()
        with torch.no_grad():
            for i in range(MAX_INIT_BATCHES):
                latents = self.model.encoder(init_batches[i].to(self.device))
                flat = latents.reshape(-1, latents.shape[-1])
                frames.append(flat)
                gathered += flat.shape[0]
                if gathered >= needed:
                    break
        self.model.encoder.train()
        if gathered < needed:
            raise InsufficientInitDataError(
                "could not gather enough frames for codebook init",
                {"gathered": gathered, "needed": needed}
            )
        buffer = torch.cat(frames)[:needed]
        self.model.quantizer.initialize(buffer, seed=self.train_cfg.seed)
        self.log.info(f"Codebook initialized from {needed} frames")

    def _fault(self, side: str, terms: Dict[str, float], lr: float, batch: torch.Tensor) -> TrainingFaultError:
        """Write a JSON diagnostic dump and return the error to raise."""
        self.fault_dir.mkdir(parents=True, exist_ok=True)
        dump_path = self.fault_dir / f"fault_step{self.step}_{side}.json"
        dump = {
            "timestamp": datetime.now(UTC).isoformat(),
            "step": self.step,
            "side": side,
            "lr": lr,
            "terms": {k: (v if math.isfinite(v) else str(v)) for k, v in terms.items()},
            "batch": {
                "shape": list(batch.shape),
                "finite": bool(torch.isfinite(batch).all()),
                "abs_max": float(batch.abs().max()) if batch.numel() else 0.0,
            },
            "non_finite_params": [
                name for name, p in self.model.named_parameters() if not torch.isfinite(p).all()
            ],
        }
        dump_path.write_text(json.dumps(dump, indent=2))
        self.log.error(f"Non-finite {side} loss at step {self.step}; dump written to {dump_path}")
        return TrainingFaultError(
            f"non-finite {side} loss at step {self.step}",
            {"dump": str(dump_path), "terms": dump["terms"]}
        )

    def _clip(self, module: nn.Module) -> None:
        if self.train_cfg.grad_clip is not None:
            torch.nn.utils.clip_grad_norm_(module.parameters(), self.train_cfg.grad_clip)

    def train_step_g(self, batch: Optional[torch.Tensor] = None) -> LossReport:
        """One generator update followed by the codebook EMA update and revival."""
        if self._expect != "g":
            raise TrainingFaultError("generator step out of order; run train_step_d first", {"step": self.step})
        if not self.model.quantizer.initialized:
            self.initialize_codebook()

        lr = self._set_lr()
        audio = (self.batch() if batch is None else batch).to(self.device)
        self.model.train()
        self.critics.train()

        fake, result = self.model(audio)
        real = audio[..., : fake.shape[-1]]
        w = self.cfg.losses
        zero = fake.new_zeros(())
        terms = {
            "quantizer": quantizer_loss(result.latents, result.codes, self.train_cfg.quantizer_reduction),
            "mel": mel_loss(real, fake, self.cfg.mel_spectral, self.cfg.mel, self.cfg.sample_rate),
            "adv": zero,
            "feat": zero,
        }
        if self.critics_active and (w.lambda_adv > 0 or w.lambda_feat > 0):
            with frozen(self.critics):
                with torch.no_grad():
                    real_out = self.critics.critique(real)
                fake_out = self.critics.critique(fake)
            terms["adv"] = adv_loss(fake_out.logits)
            terms["feat"] = feat_match_loss(real_out.features, fake_out.features)

        try:
            total = generator_total(terms, w)
        except TrainingFaultError:
            raise self._fault("generator", detach_terms(terms), lr, audio)

        self.opt_g.zero_grad(set_to_none=True)
        total.backward()
        self._clip(self.model)
        self.opt_g.step()

        self.model.quantizer.update(
            result,
            seed=seeded(self.train_cfg.seed, 2, self.step).initial_seed(),
            revive=self.train_cfg.revival,
        )

        self._pending = (real.detach(), fake.detach())
        self._expect = "d"
        report = LossReport(side="generator", terms={**detach_terms(terms), "disc": 0.0}, total=float(total))
        self.metrics.write_row(report.as_row(self.step, lr, self.model.quantizer.utilization()))
        return report

    def train_step_d(self) -> LossReport:
        """One critic update on the batch of the preceding generator step."""
        if self._expect != "d" or self._pending is None:
            raise TrainingFaultError("critic step out of order; run train_step_g first", {"step": self.step})
        lr = lr_at(min(self.step, self.train_cfg.total_steps), self.train_cfg)
        real, fake = self._pending

        loss_value = 0.0
        if self.critics_active:
            real_out, fake_out = self.critics(real, fake)
            loss = disc_loss(real_out.logits, fake_out.logits)
            loss_value = float(loss)
            if not math.isfinite(loss_value):
                raise self._fault("discriminator", {"disc": loss_value}, lr, real)
            self.opt_d.zero_grad(set_to_none=True)
            loss.backward()
            self._clip(self.critics)
            self.opt_d.step()

        self._pending = None
        self._expect = "g"
        report = LossReport(side="discriminator", terms={"disc": loss_value}, total=loss_value)
        self.metrics.write_row(report.as_row(self.step, lr))
        self.step += 1
        return report

    def fit(
        self,
        steps: Optional[int] = None,
        checkpoint_dir: Optional[Path] = None,
    ) -> List[Tuple[LossReport, LossReport]]:
        """Run alternating steps until ``steps`` more iterations or ``total_steps``.

        Checkpoints go to ``checkpoint_dir`` every ``checkpoint_every`` steps and
        at the end.
        """
        from .checkpoint import save_trainer

        end = self.train_cfg.total_steps if steps is None else min(self.step + steps, self.train_cfg.total_steps)
        history: List[Tuple[LossReport, LossReport]] = []
        if not self.model.quantizer.initialized:
            self.initialize_codebook()

        self.log.info(f"Training steps {self.step}..{end} on {self.device}")
        for batch in batch_loader(self.batches, self.step, end):
            g = self.train_step_g(batch)
            d = self.train_step_d()
            history.append((g, d))
            if self.step % self.train_cfg.log_every == 0:
                self.log.bind(step=self.step).info(
                    f"g_total={g.total:.4f} mel={g.terms['mel']:.4f} "
                    f"q={g.terms['quantizer']:.4f} d={d.total:.4f} "
                    f"util={utilization_rate(self.model.quantizer.codebook.usage_count):.3f}"
                )
            if checkpoint_dir is not None and self.step % self.train_cfg.checkpoint_every == 0:
                save_trainer(self, Path(checkpoint_dir) / f"step{self.step:07d}.pt")

        if checkpoint_dir is not None:
            save_trainer(self, Path(checkpoint_dir) / "last.pt")
        return history
