"""Training loop: stratified sampling with simulation, Adam, mAP selection.

Each epoch draws a fixed number of samples through the simulation-aware
sampler, so the class balance and the synthetic/real mix follow the policy
tiers rather than the raw archive. Validation runs on raw held-out scenes
only, never on simulated data, and checkpoint selection maximizes scene
level average precision there. FiLM finetuning reuses the same loop with
the backbone frozen and a single bank's parameters exposed to the
optimizer.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np
import torch

from . import retrieval
from .detector import (
    DetectorModel,
    EmptyLossError,
    InsufficientPositives,
    TrainingDiverged,
    build_model_input,
    loss_torch,
    predict,
)
from .evalkit import EvalRecord, average_precision
from .rtlut import RtLut
from .simulator import SimulationPolicy, TrainingIndex, TrainingSample, draw_training_sample


@dataclass
class TrainConfig:
    epochs: int = 170
    samples_per_epoch: int = 65536
    learning_rate: float = 5e-4
    weight_decay: float = 1e-6
    positive_weight: float = 10.0
    batch_size: int = 32
    patience: int = 15  # epochs without val-mAP improvement before stopping
    seed: int = 0
    selection_metric: str = "mAP"  # fixed; kept explicit for the log

    def __post_init__(self):
        for name in ("epochs", "samples_per_epoch", "learning_rate", "weight_decay",
                     "positive_weight", "batch_size", "patience"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.selection_metric != "mAP":
            raise ValueError("model selection is fixed to validation mAP")


@dataclass
class ValExample:
    """One raw validation scene pair with its hand label."""

    scene: object  # Scene
    reference: object  # Scene
    mask: np.ndarray | None
    label: str  # "plume" | "no_plume"
    site_id: str

    @property
    def is_positive(self) -> bool:
        return self.label == "plume"


@dataclass
class Corpus:
    """Time-split dataset: sampling index for training, raw pairs for validation."""

    index: TrainingIndex
    val: list[ValExample]


@dataclass
class TrainLog:
    learning_rate: float
    weight_decay: float
    positive_weight: float
    samples_per_epoch: int
    batch_size: int
    seed: int
    selection_metric: str
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_map: float = float("nan")
    stopped_early: bool = False


def _sample_tensors(sample: TrainingSample, lut: RtLut, model: DetectorModel):
    product = retrieval.mbmp(sample.scene, sample.reference, lut)
    model_input = build_model_input(sample.scene, sample.reference, product, model.config)
    target = sample.mask.astype(np.float32)
    return model_input, target, sample.scene.site_id


def _forward_batch(model: DetectorModel, batch, positive_weight: float):
    data = torch.from_numpy(np.stack([b[0].data for b in batch]))
    density = torch.from_numpy(np.stack([b[0].density for b in batch]))
    target = torch.from_numpy(np.stack([b[1] for b in batch]))
    bank_ids = [model.resolve_bank(b[2]) for b in batch]
    logits = model.net(data, density, bank_ids)
    prob = torch.sigmoid(logits)
    return loss_torch(prob, target, density, positive_weight)


def prepare_examples(model: DetectorModel, examples: list[ValExample], lut: RtLut):
    """Precompute retrieval-derived inputs; they are training-invariant."""
    prepared = []
    for i, example in enumerate(examples):
        product = retrieval.mbmp(example.scene, example.reference, lut)
        model_input = build_model_input(example.scene, example.reference, product, model.config)
        prepared.append((
            model_input,
            example.site_id,
            getattr(example.scene, "scene_id", str(i)),
            example.scene.satellite.value,
            example.label,
        ))
    return prepared


def score_prepared(model: DetectorModel, prepared):
    records = []
    for model_input, site_id, scene_id, satellite, label in prepared:
        pred = predict(model, model_input, site_id)
        records.append(EvalRecord(
            scene_id=scene_id, site_id=site_id, country="", satellite=satellite,
            scene_score=pred.scene_score, label=label,
        ))
    return average_precision(records), records


def validate(model: DetectorModel, examples: list[ValExample], lut: RtLut):
    """Scene scores on raw validation pairs -> (mAP, eval records)."""
    return score_prepared(model, prepare_examples(model, examples, lut))


def train(
    model: DetectorModel,
    corpus: Corpus,
    policy: SimulationPolicy,
    config: TrainConfig,
    lut: RtLut,
    log_fn=None,
) -> tuple[DetectorModel, TrainLog]:
    """Train the backbone; returns the checkpoint with the best val mAP."""
    rng = np.random.default_rng(config.seed)
    torch.manual_seed(config.seed)
    # Sites with enough real positives get their own FiLM bank up front; all
    # other sites route through the trainable GENERIC bank.
    for site in corpus.index.sites:
        if len(site.positives) >= 5:
            model.add_bank(site.site_id)
    optimizer = torch.optim.Adam(
        model.net.parameters(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    log = TrainLog(
        learning_rate=config.learning_rate,
        weight_decay=config.weight_decay,
        positive_weight=config.positive_weight,
        samples_per_epoch=config.samples_per_epoch,
        batch_size=config.batch_size,
        seed=config.seed,
        selection_metric=config.selection_metric,
    )
    best_state = copy.deepcopy(model.net.state_dict())
    best_map = -math.inf
    epochs_since_best = 0
    val_prepared = prepare_examples(model, corpus.val, lut)

    steps = max(1, config.samples_per_epoch // config.batch_size)
    for epoch in range(config.epochs):
        model.net.train()
        epoch_losses = []
        for _ in range(steps):
            batch = []
            for _ in range(config.batch_size):
                sample = draw_training_sample(corpus.index, policy, rng, lut)
                batch.append(_sample_tensors(sample, lut, model))
            optimizer.zero_grad()
            try:
                batch_loss = _forward_batch(model, batch, config.positive_weight)
            except EmptyLossError:
                continue
            if not torch.isfinite(batch_loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}", last_good_state=best_state
                )
            batch_loss.backward()
            optimizer.step()
            epoch_losses.append(float(batch_loss.detach()))
        model.net.eval()
        val_map, _ = score_prepared(model, val_prepared)
        entry = {
            "epoch": epoch,
            "train_loss": float(np.mean(epoch_losses)) if epoch_losses else float("nan"),
            "val_mAP": val_map,
        }
        log.epochs.append(entry)
        if log_fn:
            log_fn(entry)
        if val_map > best_map:
            best_map = val_map
            best_state = copy.deepcopy(model.net.state_dict())
            log.best_epoch = epoch
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best >= config.patience:
                log.stopped_early = True
                break
    log.best_val_map = best_map
    model.net.load_state_dict(best_state)
    model.net.eval()
    return model, log


def finetune_film(
    model: DetectorModel,
    site_examples: list[ValExample],
    film_bank_id: str,
    lut: RtLut,
    learning_rate: float = 5e-3,
    epochs: int = 40,
    positive_weight: float = 10.0,
    seed: int = 0,
) -> DetectorModel:
    """Learn one site's (gamma, beta) bank with the backbone frozen.

    Requires at least five positive examples for the site. Only the named
    bank changes; every other tensor in the model is untouched.
    """
    n_pos = sum(e.is_positive for e in site_examples)
    if n_pos < 5:
        raise InsufficientPositives(
            f"site bank {film_bank_id!r} needs >= 5 positive images, got {n_pos}"
        )
    model.add_bank(film_bank_id)
    bank = model.net.banks[film_bank_id]
    optimizer = torch.optim.Adam(bank.parameters(), lr=learning_rate)
    rng = np.random.default_rng(seed)

    prepared = []
    for example in site_examples:
        product = retrieval.mbmp(example.scene, example.reference, lut)
        model_input = build_model_input(example.scene, example.reference, product, model.config)
        mask = example.mask if example.mask is not None else np.zeros_like(model_input.density)
        prepared.append((
            torch.from_numpy(model_input.data).unsqueeze(0),
            torch.from_numpy(model_input.density).unsqueeze(0),
            torch.from_numpy(mask.astype(np.float32)).unsqueeze(0),
        ))

    # Backbone (and batch-norm statistics) stay frozen: eval mode, no grads.
    model.net.eval()
    for p in model.net.parameters():
        p.requires_grad_(False)
    for p in bank.parameters():
        p.requires_grad_(True)
    try:
        for _ in range(epochs):
            for i in rng.permutation(len(prepared)):
                data, density, target = prepared[i]
                optimizer.zero_grad()
                logits = model.net(data, density, film_bank_id)
                fit = loss_torch(torch.sigmoid(logits), target, density, positive_weight)
                fit.backward()
                optimizer.step()
    finally:
        for p in model.net.parameters():
            p.requires_grad_(True)
    return model
