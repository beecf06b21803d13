import numpy as np
import pytest

from harness import build_samples, make_vocab, toy_model, top1_accuracy, train_on
from revfix.neural.model import PointerGenerator
from revfix.neural.training import TrainingConfig, train
from revfix.seqbuild import encode_sample
from revfix.synthetic import make_rename_corpus


@pytest.fixture(scope="module")
def tiny_setup():
    triples = make_rename_corpus(12, seed=21)
    samples, regions = build_samples(triples, "cc")
    vocab = make_vocab(samples)
    encoded = [encode_sample(s, vocab) for s in samples]
    return triples, samples, regions, vocab, encoded


def test_zero_learning_rate_leaves_parameters_unchanged(tiny_setup):
    _, _, _, vocab, encoded = tiny_setup
    model = toy_model(vocab, "cc", seed=1)
    before = {k: v.copy() for k, v in model.params.items()}
    train(model, encoded, TrainingConfig(steps=5, batch_size=4, learning_rate=0.0, seed=2))
    assert all(np.array_equal(before[k], model.params[k]) for k in before)


def test_same_seed_identical_loss_logs(tiny_setup):
    _, _, _, vocab, encoded = tiny_setup
    logs = []
    for _ in range(2):
        model = toy_model(vocab, "cc", seed=3)
        result = train(
            model, encoded, TrainingConfig(steps=30, batch_size=4, seed=7, log_interval=5)
        )
        logs.append(result.loss_log)
    assert logs[0] == logs[1]


def test_different_seeds_differ(tiny_setup):
    _, _, _, vocab, encoded = tiny_setup
    results = []
    for seed in (1, 2):
        model = toy_model(vocab, "cc", seed=seed)
        results.append(
            train(model, encoded, TrainingConfig(steps=10, batch_size=4, seed=seed)).loss_log
        )
    assert results[0] != results[1]


def test_divergence_aborts_and_rolls_back(tiny_setup):
    _, _, _, vocab, encoded = tiny_setup
    model = toy_model(vocab, "cc", seed=1)
    result = train(
        model,
        encoded,
        TrainingConfig(steps=200, batch_size=4, learning_rate=1e9, clip_norm=1e12, seed=2),
        valid_samples=encoded[:2],
    )
    assert result.diverged
    assert all(np.isfinite(v).all() for v in model.params.values())  # rolled back


def test_empty_training_set_rejected(tiny_setup):
    _, _, _, vocab, _ = tiny_setup
    model = toy_model(vocab, "cc", seed=1)
    with pytest.raises(ValueError):
        train(model, [], TrainingConfig(steps=1))


def test_validation_tracking_and_lr_decay(tiny_setup):
    _, _, _, vocab, encoded = tiny_setup
    model = toy_model(vocab, "cc", seed=1)
    result = train(
        model,
        encoded,
        TrainingConfig(steps=60, batch_size=4, eval_interval=10, seed=5, patience=0,
                       learning_rate=1e-6, min_lr=1e-9),
        valid_samples=encoded[:3],
    )
    assert len(result.valid_log) == 6
    assert result.final_lr < 1e-6  # plateau at a useless rate forces decay


def test_interval_checkpoints_written(tiny_setup, tmp_path):
    _, _, _, vocab, encoded = tiny_setup
    model = toy_model(vocab, "cc", seed=1)
    final = tmp_path / "model.ckpt"
    train(
        model,
        encoded,
        TrainingConfig(steps=10, batch_size=4, seed=2, checkpoint_interval=5),
        checkpoint_path=final,
    )
    assert final.exists()
    assert (tmp_path / "model.step000005.ckpt").exists()
    assert (tmp_path / "model.step000010.ckpt").exists()


def test_small_memorization_run(tiny_setup):
    # 12 samples memorized quickly: the full 32-sample overfit criterion
    # lives in the acceptance suite
    triples, samples, regions, vocab, encoded = tiny_setup
    model = toy_model(vocab, "cc", seed=11)
    train_on(model, samples, vocab, steps=700, lr=1.0, batch_size=12, seed=4)
    by_id = {t.triple_id: t for t in triples}
    assert top1_accuracy(model, samples, vocab, regions, by_id) == 100.0
