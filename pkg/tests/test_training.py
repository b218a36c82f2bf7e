import numpy as np
import pytest

from trajdiffuse.denoisers import (
    load_checkpoint,
    make_blob_dataset,
    save_checkpoint,
    train_toy_denoiser,
)
from trajdiffuse.denoisers.toy import PARAM_ORDER
from trajdiffuse.errors import ConfigurationError, TrainingError
from trajdiffuse.schedule import make_linear_schedule


@pytest.fixture(scope="module")
def schedule():
    return make_linear_schedule(30, 1e-4, 0.1)


@pytest.fixture(scope="module")
def small_dataset():
    return make_blob_dataset(12, seed=3)


def holdout_mse(model, videos, schedule, seed):
    rng = np.random.default_rng(seed)
    total = 0.0
    for video in videos:
        t = int(rng.integers(0, schedule.num_steps))
        noise = rng.standard_normal(video.latent.shape)
        abar = schedule.alpha_bars[t]
        z = np.sqrt(abar) * video.latent + np.sqrt(1 - abar) * noise
        pred = model.predict_noise(z, t, video.cond, None)
        total += float(np.mean((pred - noise) ** 2))
    return total / len(videos)


def test_loss_decreases_from_first_evaluation(schedule):
    dataset = make_blob_dataset(1, seed=4)
    model = train_toy_denoiser(dataset, schedule, epochs=8, seed=0, lr=5e-3)
    history = model.train_loss_history
    assert history[-1] < history[0]


def test_seeded_runs_produce_identical_parameters(schedule, small_dataset):
    a = train_toy_denoiser(small_dataset, schedule, epochs=2, seed=9)
    b = train_toy_denoiser(small_dataset, schedule, epochs=2, seed=9)
    for key in a.params:
        assert (a.params[key] == b.params[key]).all(), key
    c = train_toy_denoiser(small_dataset, schedule, epochs=2, seed=10)
    assert any(not np.allclose(a.params[k], c.params[k]) for k in a.params)


def test_trained_beats_untrained_on_holdout(schedule):
    train_set = make_blob_dataset(40, seed=5)
    holdout = make_blob_dataset(10, seed=6)
    trained = train_toy_denoiser(train_set, schedule, epochs=6, seed=1)
    untrained = train_toy_denoiser(train_set, schedule, epochs=1, seed=1, lr=0.0)
    mse_trained = holdout_mse(trained, holdout.videos, schedule, seed=7)
    mse_untrained = holdout_mse(untrained, holdout.videos, schedule, seed=7)
    assert mse_trained < mse_untrained


def test_divergence_raises_training_error(schedule, small_dataset):
    with pytest.raises(TrainingError):
        train_toy_denoiser(small_dataset, schedule, epochs=30, seed=0, lr=1e4)


def test_empty_dataset_and_epochs_validation(schedule, small_dataset):
    from trajdiffuse.denoisers.data import BlobDataset

    with pytest.raises(ConfigurationError):
        train_toy_denoiser(BlobDataset(videos=(), frames=8, channels=2, size=16),
                           schedule, epochs=1, seed=0)
    with pytest.raises(ConfigurationError):
        train_toy_denoiser(small_dataset, schedule, epochs=0, seed=0)


class TestCheckpoint:
    def test_round_trip_preserves_predictions(self, schedule, small_dataset, tmp_path):
        model = train_toy_denoiser(small_dataset, schedule, epochs=1, seed=2)
        path = tmp_path / "model.bin"
        save_checkpoint(model, path, schedule_params={
            "num_steps": 30, "beta_start": 1e-4, "beta_end": 0.1,
        })
        loaded = load_checkpoint(path)
        assert loaded.schedule.num_steps == 30
        rng = np.random.default_rng(0)
        z = rng.standard_normal((8, 2, 16, 16))
        a = model.predict_noise(z, 3, small_dataset.videos[0].cond, None)
        b = loaded.predict_noise(z, 3, small_dataset.videos[0].cond, None)
        # float32 storage rounds parameters; predictions stay close
        assert np.allclose(a, b, atol=1e-4)

    def test_manifest_contents(self, schedule, small_dataset, tmp_path):
        import json

        model = train_toy_denoiser(small_dataset, schedule, epochs=1, seed=2)
        path = tmp_path / "model.bin"
        save_checkpoint(model, path)
        manifest = json.loads((tmp_path / "model.json").read_text())
        assert manifest["dtype"] == "<f4"
        assert [l["name"] for l in manifest["layers"]] == list(PARAM_ORDER)
        assert manifest["schedule_hash"] == schedule.content_hash()
        raw = path.read_bytes()
        total = sum(int(np.prod(l["shape"])) for l in manifest["layers"])
        assert len(raw) == 4 * total

    def test_load_requires_schedule_when_absent(self, schedule, small_dataset, tmp_path):
        model = train_toy_denoiser(small_dataset, schedule, epochs=1, seed=2)
        path = tmp_path / "model.bin"
        save_checkpoint(model, path)  # no schedule params recorded
        with pytest.raises(ConfigurationError):
            load_checkpoint(path)
        loaded = load_checkpoint(path, schedule=schedule)
        assert loaded.hidden == model.hidden

    def test_corrupt_checkpoint_rejected(self, tmp_path):
        (tmp_path / "bad.json").write_text("{}")
        (tmp_path / "bad.bin").write_bytes(b"1234")
        with pytest.raises(ConfigurationError):
            load_checkpoint(tmp_path / "bad.bin")
