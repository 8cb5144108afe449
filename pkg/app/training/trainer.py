"""Boucle d'entraînement jointe : batches absolus et batches de préférence."""
import json
import time
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Union

import numpy as np
import psutil
import torch
from torch.optim.lr_scheduler import LambdaLR

from app.config import RunConfig, settings
from app.data.loader import AudioBatch, PreferenceBatch, collate, collate_pairs
from app.errors import AllTermsSkippedError, EmptyInputError
from app.logger import logger
from app.model.network import QualityModel
from app.models import LossReport, PreferencePair, SampleRecord
from app.training.batching import make_batches, pair_duration, record_duration
from app.training.checkpoint import Checkpoint, save_checkpoint
from app.training.objectives import (
    cmos_loss,
    masked_metric_loss,
    preference_ce,
    total_loss,
)

TRAIN_LOG_NAME = "train_log.jsonl"
CHECKPOINT_NAME = "checkpoint.pt"


def seed_everything(seed: int, deterministic: bool) -> None:
    """Graine torch et noyaux déterministes."""
    torch.manual_seed(seed)
    torch.use_deterministic_algorithms(deterministic, warn_only=True)


def _epochs(items: Sequence, budget_s: float, seed: int, duration_of) -> Iterator[list]:
    """Lots à l'infini ; l'époque e est mélangée avec la graine seed + e."""
    epoch = 0
    while True:
        for batch in make_batches(items, budget_s, seed + epoch, duration_of):
            yield batch
        epoch += 1


class Trainer:
    """Entraîne un `QualityModel` selon `RunConfig.train`."""

    def __init__(
        self,
        model: QualityModel,
        config: RunConfig,
        records: Sequence[SampleRecord],
        pairs: Sequence[PreferencePair] = (),
        audio_root: Optional[str] = None,
        output_dir: Optional[str] = None,
    ):
        self.model = model
        self.config = config
        self.cfg = config.train
        self.registry = model.registry
        self.weights = self.registry.weights()
        self.records = list(records)
        self.by_id = {r.sample_id: r for r in self.records}
        self.pairs = list(pairs)
        if not self.records and not self.pairs:
            raise EmptyInputError("nothing to train on: no records and no pairs")
        self.audio_root = audio_root
        self.device = torch.device(settings.DEVICE)
        self.output_dir = Path(output_dir or config.output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.output_dir / TRAIN_LOG_NAME

        self.optimizer = torch.optim.Adam(model.parameters(), lr=self.cfg.lr)
        warmup = self.cfg.warmup_steps
        self.scheduler = LambdaLR(
            self.optimizer,
            lambda step: min(1.0, (step + 1) / warmup) if warmup else 1.0,
        )
        self.step = 0
        self._coin = np.random.default_rng(self.cfg.seed)
        self._absolute = _epochs(self.records, self.cfg.batch_budget_s, self.cfg.seed,
                                 record_duration) if self.records else None
        self._preference = _epochs(self.pairs, self.cfg.batch_budget_s, self.cfg.seed,
                                   pair_duration(self.by_id)) if self.pairs else None

    # ------------------------------------------------------------------
    # Étapes
    # ------------------------------------------------------------------

    def _apply(self, mse=None, ce=None, cmos=None) -> LossReport:
        try:
            outcome = total_loss(
                mse, ce, cmos,
                lambda_mse=self.cfg.lambda_mse,
                lambda_ce=self.cfg.lambda_ce,
                lambda_cmos=self.cfg.lambda_cmos,
            )
        except AllTermsSkippedError:
            logger.debug("Step {step}: aucun terme de perte, pas de mise à jour", step=self.step)
            return LossReport()
        outcome.total.backward()
        if self.cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(self.model.parameters(), self.cfg.grad_clip)
        self.optimizer.step()
        self.scheduler.step()
        return outcome.report

    def train_step(self, batch: Union[AudioBatch, PreferenceBatch]) -> LossReport:
        """Une mise à jour (ou aucune si tous les termes sont SKIPPED)."""
        self.model.train()
        self.optimizer.zero_grad(set_to_none=True)
        if isinstance(batch, PreferenceBatch):
            comparison = self.model.compare(batch.side_a.to(self.device),
                                            batch.side_b.to(self.device))
            ce = preference_ce(comparison.preference.logits, batch.classes.to(self.device))
            cmos = None
            if self.cfg.lambda_cmos > 0:
                cmos = cmos_loss(comparison.preference.cmos, batch.cmos.to(self.device))
            return self._apply(ce=ce, cmos=cmos)
        batch = batch.to(self.device)
        bundle = self.model.score(batch)
        mse = masked_metric_loss(bundle.values, batch.labels, self.weights, self.registry.names)
        return self._apply(mse=mse)

    # ------------------------------------------------------------------
    # Boucle
    # ------------------------------------------------------------------

    def _draw_kind(self) -> str:
        coin = self._coin.random()
        if self._preference is None:
            return "absolute"
        if self._absolute is None:
            return "preference"
        return "preference" if coin < self.cfg.mix_ratio else "absolute"

    def next_batch(self) -> Union[AudioBatch, PreferenceBatch]:
        """Batch suivant selon la pièce de mélange."""
        load_audio = self.model.needs_audio
        if self._draw_kind() == "preference":
            pairs = next(self._preference)
            return collate_pairs(pairs, self.by_id, self.registry, self.audio_root,
                                 self.model.sample_rate, load_audio)
        records = next(self._absolute)
        return collate(records, self.registry, self.audio_root, self.model.sample_rate,
                       load_audio)

    def resume(self, checkpoint: Checkpoint) -> None:
        """Reprend au step stocké ; l'ordre des batches est rejoué à l'identique."""
        self.model.load_state_dict(checkpoint.model.state_dict())
        if checkpoint.optimizer_state:
            self.optimizer.load_state_dict(checkpoint.optimizer_state)
        for _ in range(checkpoint.step):
            if self._draw_kind() == "preference":
                next(self._preference)
            else:
                next(self._absolute)
            self.scheduler.step()
        self.step = checkpoint.step
        logger.info("Reprise de l'entraînement au step {step}", step=self.step)

    def _write_log(self, report: LossReport, wall_ms: float) -> None:
        row = {
            "step": self.step,
            "loss": report.model_dump(),
            "lr": self.optimizer.param_groups[0]["lr"],
            "wall_ms": round(wall_ms, 3),
        }
        with open(self.log_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(row) + "\n")

    def save(self) -> Path:
        """Checkpoint courant dans le dossier du run."""
        return save_checkpoint(
            str(self.output_dir / CHECKPOINT_NAME),
            self.model,
            self.step,
            self.optimizer,
            self.config.model_dump(),
        )

    def fit(self, steps: Optional[int] = None) -> List[LossReport]:
        """Entraîne jusqu'à `steps` (défaut : config) ; renvoie les rapports de ce run."""
        target = steps or self.cfg.steps
        if self.step == 0 and self.log_path.exists():
            self.log_path.unlink()
        seed_everything(self.cfg.seed + self.step, self.cfg.deterministic)
        process = psutil.Process()
        reports: List[LossReport] = []
        logger.info(
            "Entraînement {name}: {n} paramètres, {r} énoncés, {p} paires, steps {s}->{t}",
            name=self.config.model_name, n=self.model.parameter_count(),
            r=len(self.records), p=len(self.pairs), s=self.step, t=target,
        )
        window_start = time.perf_counter()
        while self.step < target:
            started = time.perf_counter()
            batch = self.next_batch()
            report = self.train_step(batch)
            self.step += 1
            reports.append(report)
            self._write_log(report, (time.perf_counter() - started) * 1000.0)

            if self.step % self.cfg.log_every == 0:
                elapsed = time.perf_counter() - window_start
                ram_mb = process.memory_info().rss / (1024 * 1024)
                logger.info(
                    "step {step} | loss {loss} | mse {mse} | ce {ce} | {ips:.2f} it/s | RAM {ram:.1f} MB",
                    step=self.step, loss=report.total, mse=report.mse_total, ce=report.ce,
                    ips=self.cfg.log_every / max(elapsed, 1e-9), ram=ram_mb,
                )
                window_start = time.perf_counter()
            if self.step % self.cfg.checkpoint_every == 0:
                self.save()
        self.save()
        logger.success("Entraînement terminé au step {step}", step=self.step)
        return reports


def read_train_log(path: str) -> List[dict]:
    """Relit le journal JSON Lines d'entraînement."""
    with open(path, "r", encoding="utf-8") as handle:
        return [json.loads(line) for line in handle if line.strip()]
