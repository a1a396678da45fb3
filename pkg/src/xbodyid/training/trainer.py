"""Finetuning loop: identity + weighted batch-hard triplet loss on z_final."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import torch

from ..data.images import ImageCache
from ..data.manifest import DatasetManifest
from ..model.checkpoint import save_checkpoint
from ..model.lora import LoraConfig, apply_lora, lora_parameters
from ..model.vit import BodyIdNet
from .losses import batch_hard_triplet_loss, combined_loss, identity_loss
from .mining import mining_statistics
from .samplers import BatchSpec, epoch_batches

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 5
    lr: float = 1e-4
    optimizer: str = "adamw"  # adamw | sgd
    weight_decay: float = 1e-4
    loss_weight: float = 1.0  # lambda on the triplet term
    margin: float = 0.0
    batch: BatchSpec = field(default_factory=BatchSpec)
    warmup_steps: int = 0
    checkpoint_every: int = 0  # epochs; 0 keeps only the final checkpoint
    seed: int = 0
    lora: Optional[LoraConfig] = None
    head_lr_scale: float = 1.0  # learning-rate multiplier for the freshly initialized classifier

    def __post_init__(self):
        if isinstance(self.batch, dict):
            self.batch = BatchSpec(**self.batch)
        if isinstance(self.lora, dict):
            self.lora = LoraConfig(**self.lora)
        if self.loss_weight < 0 or self.margin < 0:
            raise ValueError("loss_weight and margin must be non-negative")
        if self.head_lr_scale <= 0:
            raise ValueError("head_lr_scale must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")
        if self.optimizer not in ("adamw", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_json(self) -> dict:
        d = asdict(self)
        d["batch"]["domains"] = list(self.batch.domains)
        d["lora"] = self.lora.to_json() if self.lora else None
        return d


@dataclass
class EpochLog:
    epoch: int
    id_loss: float
    tri_loss: float
    loss: float
    pct_hard_pos_cross_domain: float
    pct_hard_neg_same_domain: float
    n_anchors: int
    lr: float
    steps: int

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TrainResult:
    model: BodyIdNet
    epochs: list[EpochLog]
    mining: list[list]  # per epoch, the batch MiningRecords
    label_map: dict[str, int]
    checkpoint: Optional[Path] = None


def _optimizer(groups, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return torch.optim.SGD(groups, lr=cfg.lr, momentum=0.9, weight_decay=cfg.weight_decay)
    return torch.optim.AdamW(groups, lr=cfg.lr, weight_decay=cfg.weight_decay)


def _lr_factor(step: int, total: int, warmup: int) -> float:
    if step < warmup:
        return (step + 1) / warmup
    t = (step - warmup) / max(1, total - warmup)
    return 0.5 * (1 + math.cos(math.pi * min(1.0, t)))


def train(model: BodyIdNet, manifest: DatasetManifest, cfg: TrainConfig,
          out_dir=None, images: Optional[ImageCache] = None) -> TrainResult:
    """Train on the ``train`` split of ``manifest``.

    With ``cfg.lora`` set, adapters are attached and only they are updated.
    Writes ``train_log.jsonl``, ``mining_records.jsonl`` and checkpoints to
    ``out_dir`` when given.
    """
    torch.manual_seed(cfg.seed)
    train_m = manifest.filter(split="train", domains=cfg.batch.domains)
    if not len(train_m):
        raise ValueError("manifest has no training records in the requested domains")
    label_map = {s: i for i, s in enumerate(train_m.subjects)}
    if len(label_map) > model.cfg.n_classes:
        raise ValueError(f"{len(label_map)} training identities but model has {model.cfg.n_classes} classes")
    images = images or ImageCache(train_m, model.cfg.image_height, model.cfg.image_width)
    if images.manifest is not train_m:
        images = ImageCache(train_m, model.cfg.image_height, model.cfg.image_width)

    if cfg.lora is not None:
        apply_lora(model, cfg.lora)
        groups = [{"params": lora_parameters(model)}]
    else:
        head = [p for p in model.classifier.parameters() if p.requires_grad]
        ids = {id(p) for p in head}
        body = [p for p in model.parameters() if p.requires_grad and id(p) not in ids]
        groups = [{"params": body}, {"params": head, "lr": cfg.lr * cfg.head_lr_scale}]
    opt = _optimizer(groups, cfg)

    steps_per_epoch = len(epoch_batches(train_m, cfg.batch, 0))
    total = steps_per_epoch * cfg.epochs
    sched = torch.optim.lr_scheduler.LambdaLR(opt, lambda s: _lr_factor(s, total, cfg.warmup_steps))

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "train_log.jsonl").write_text("")
        (out / "mining_records.jsonl").write_text("")

    history, mining_all = [], []
    ckpt = None
    step = 0
    for epoch in range(cfg.epochs):
        model.train()
        id_sum = tri_sum = loss_sum = 0.0
        records = []
        batches = epoch_batches(train_m, cfg.batch, epoch)
        for b, idx in enumerate(batches):
            recs = [train_m.records[i] for i in idx]
            x = images.batch(idx)
            labels = torch.tensor([label_map[r.subject_id] for r in recs])
            domains = [r.domain for r in recs]
            bundle = model(x)
            l_id = identity_loss(model.classify(bundle.z_final), labels)
            l_tri, rec = batch_hard_triplet_loss(bundle.z_final, labels, domains, cfg.margin)
            loss = combined_loss(l_id, l_tri, cfg.loss_weight)
            if not torch.isfinite(loss):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} batch {b}: id={l_id.item()} tri={l_tri.item()}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            step += 1
            id_sum += l_id.item()
            tri_sum += l_tri.item()
            loss_sum += loss.item()
            records.append(rec)
            if out is not None:
                with open(out / "mining_records.jsonl", "a") as fh:
                    fh.write(json.dumps({"epoch": epoch, "batch": b, **rec.to_json()}) + "\n")
        stats = mining_statistics(records)
        n = len(batches)
        entry = EpochLog(
            epoch=epoch, id_loss=id_sum / n, tri_loss=tri_sum / n, loss=loss_sum / n,
            pct_hard_pos_cross_domain=stats.pct_hard_pos_cross_domain,
            pct_hard_neg_same_domain=stats.pct_hard_neg_same_domain,
            n_anchors=stats.n_anchors, lr=opt.param_groups[0]["lr"], steps=n,
        )
        log.info("epoch %d loss %.4f (id %.4f tri %.4f) hard-pos cross %.1f%% hard-neg same %.1f%%",
                 epoch, entry.loss, entry.id_loss, entry.tri_loss,
                 entry.pct_hard_pos_cross_domain, entry.pct_hard_neg_same_domain)
        history.append(entry)
        mining_all.append(records)
        if out is not None:
            with open(out / "train_log.jsonl", "a") as fh:
                fh.write(json.dumps(entry.to_json()) + "\n")
            last = epoch == cfg.epochs - 1
            if last or (cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0):
                name = "model.pt" if last else f"model_epoch{epoch + 1}.pt"
                ckpt = save_checkpoint(out / name, model, extra={"epoch": epoch + 1, "label_map": label_map})
    model.eval()
    return TrainResult(model=model, epochs=history, mining=mining_all, label_map=label_map, checkpoint=ckpt)


def read_train_log(path) -> list[EpochLog]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"training log not found: {path}")
    return [EpochLog(**json.loads(line)) for line in path.read_text().splitlines() if line.strip()]
