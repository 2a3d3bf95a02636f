import numpy as np
import pytest
import torch

from plumewatch import synth
from plumewatch.detector import DetectorModel, GENERIC_BANK, InsufficientPositives, ModelConfig, forward
from plumewatch.simulator import SimulationPolicy
from plumewatch.training import TrainConfig, finetune_film, train, validate


@pytest.fixture(scope="module")
def micro_corpus(lut):
    specs = synth.default_site_specs(2, seed=300)
    library = synth.make_plume_library(301, n=10, shape=(32, 32))
    series = [
        synth.build_site_series(spec, lut, library, 30, positive_rate=0.3,
                                seed=310 + i, shape=(32, 32))
        for i, spec in enumerate(specs)
    ]
    return synth.series_to_corpus(series, library)


def micro_config(**overrides):
    base = dict(epochs=2, samples_per_epoch=16, batch_size=4, patience=5, seed=5)
    base.update(overrides)
    return TrainConfig(**base)


def test_config_defaults_match_recipe():
    config = TrainConfig()
    assert config.epochs == 170
    assert config.samples_per_epoch == 65536
    assert config.learning_rate == 5e-4
    assert config.weight_decay == 1e-6
    assert config.positive_weight == 10.0
    assert config.selection_metric == "mAP"


def test_config_rejects_nonpositive():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1.0)
    with pytest.raises(ValueError):
        TrainConfig(selection_metric="accuracy")


def test_training_log_echoes_recipe(lut, micro_corpus):
    torch.manual_seed(0)
    model = DetectorModel(ModelConfig(widths=(4, 8, 16, 32)))
    config = micro_config()
    _, log = train(model, micro_corpus, SimulationPolicy(seed=1), config, lut)
    assert log.learning_rate == 5e-4
    assert log.weight_decay == 1e-6
    assert log.positive_weight == 10.0
    assert log.selection_metric == "mAP"
    assert len(log.epochs) == 2
    assert log.best_epoch >= 0
    assert {"epoch", "train_loss", "val_mAP"} <= set(log.epochs[0])


def test_epoch_zero_deterministic(lut, micro_corpus):
    losses = []
    for _ in range(2):
        torch.manual_seed(99)
        model = DetectorModel(ModelConfig(widths=(4, 8, 16, 32)))
        config = micro_config(epochs=1)
        _, log = train(model, micro_corpus, SimulationPolicy(seed=2), config, lut)
        losses.append(log.epochs[0]["train_loss"])
    assert losses[0] == losses[1]


def test_eligible_sites_gain_banks(lut, micro_corpus):
    torch.manual_seed(1)
    model = DetectorModel(ModelConfig(widths=(4, 8, 16, 32)))
    train(model, micro_corpus, SimulationPolicy(seed=3), micro_config(epochs=1), lut)
    for site in micro_corpus.index.sites:
        if len(site.positives) >= 5:
            assert model.has_bank(site.site_id)


def test_validate_returns_records(lut, micro_corpus):
    torch.manual_seed(2)
    model = DetectorModel(ModelConfig(widths=(4, 8, 16, 32)))
    val_map, records = validate(model, micro_corpus.val, lut)
    assert 0.0 <= val_map <= 1.0
    assert len(records) == len(micro_corpus.val)
    labels = {r.label for r in records}
    assert labels <= {"plume", "no_plume"}


# ---------------------------------------------------------------------------
# FiLM finetuning
# ---------------------------------------------------------------------------


def test_finetune_requires_five_positives(lut, micro_corpus):
    model = DetectorModel(ModelConfig(widths=(4, 8, 16, 32)))
    positives = [e for e in micro_corpus.val if e.is_positive][:4]
    negatives = [e for e in micro_corpus.val if not e.is_positive][:4]
    with pytest.raises(InsufficientPositives):
        finetune_film(model, positives + negatives, "few_site", lut, epochs=1)


def test_finetune_touches_only_named_bank(lut):
    shifted = synth.make_shifted_site_corpus(lut, passes=40)
    examples = shifted.val
    assert sum(e.is_positive for e in examples) >= 5

    torch.manual_seed(3)
    model = DetectorModel(ModelConfig(widths=(4, 8, 16, 32)))
    model.add_bank("other_site")
    before = {k: v.clone() for k, v in model.net.state_dict().items()}

    rng = np.random.default_rng(0)
    probe = (rng.standard_normal((15, 32, 32)) * 0.1).astype(np.float32)
    from plumewatch.detector import ModelInput

    probe_input = ModelInput(data=probe, density=np.ones((32, 32), dtype=np.float32))
    generic_before = forward(model, probe_input, GENERIC_BANK).prob

    finetune_film(model, examples, "site_shifted", lut, epochs=2)

    after = model.net.state_dict()
    # every pre-existing tensor (backbone, GENERIC, other banks) is bit-identical
    assert all(torch.equal(before[k], after[k]) for k in before)
    new_keys = set(after) - set(before)
    assert new_keys and all("banks.site_shifted" in k for k in new_keys)
    # the new bank actually moved off its identity initialization
    bank = model.net.banks["site_shifted"]
    moved = any(not torch.equal(g, torch.ones_like(g)) for g in bank.gammas)
    moved = moved or any(not torch.equal(b, torch.zeros_like(b)) for b in bank.betas)
    assert moved
    generic_after = forward(model, probe_input, GENERIC_BANK).prob
    assert np.array_equal(generic_before, generic_after)


def test_finetune_leaves_backbone_trainable(lut):
    shifted = synth.make_shifted_site_corpus(lut, passes=40)
    model = DetectorModel(ModelConfig(widths=(4, 8, 16, 32)))
    finetune_film(model, shifted.val, "site_shifted", lut, epochs=1)
    assert all(p.requires_grad for p in model.net.parameters())
