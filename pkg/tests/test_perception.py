"""Tests for the silhouette autoencoder."""

import numpy as np
import pytest

from clothbench import perception as P
from clothbench import simworld as S
from clothbench.tensor import ContractError, Tensor


def _world_frames(n_frames, seed=2):
    """Render n_frames silhouettes from a scripted run (5 Hz)."""
    world = S.SimWorld(S.ArmModel(), S.ClothModel(), S.Camera())
    state = world.initial_state()
    mat = S.MaterialParams(0.05, 0.10)
    frames = []
    for cmd, _ in zip(S.scripted_policy(world, seed=seed), range(n_frames)):
        state = world.step(state, cmd, mat)
        frames.append(S.rasterize(world.camera, state.x))
    return np.stack(frames)


@pytest.fixture(scope="module")
def one_frame():
    return _world_frames(12)[-1]


def test_encode_shape_and_determinism(one_frame):
    model = P.AutoencoderModel(seed=3)
    z1 = P.encode(model, one_frame)
    z2 = P.encode(model, one_frame)
    assert z1.shape == (3,)
    assert np.array_equal(z1, z2)  # bit-identical inference


def test_encode_rejects_wrong_shape():
    model = P.AutoencoderModel(seed=0)
    with pytest.raises(ContractError):
        P.encode(model, np.zeros((96, 120)))
    with pytest.raises(ContractError):
        P.decode(model, np.zeros(4))


def test_decode_output_in_unit_interval():
    model = P.AutoencoderModel(seed=1)
    img = P.decode(model, np.array([0.3, -1.2, 0.8]))
    assert img.shape == (96, 128)
    assert img.min() >= 0.0 and img.max() <= 1.0


def test_encode_batch_matches_single(one_frame):
    model = P.AutoencoderModel(seed=4)
    stack = np.stack([one_frame, np.roll(one_frame, 5, axis=1)])
    zs = P.encode_many(model, stack)
    assert zs.shape == (2, 3)
    assert np.allclose(zs[0], P.encode(model, one_frame), atol=1e-12)


def test_inference_mutates_no_state(one_frame):
    model = P.AutoencoderModel(seed=5)
    before = {k: v.copy() for k, v in model.running.items()}
    P.decode(model, P.encode(model, one_frame))
    for k, v in model.running.items():
        assert np.array_equal(before[k], v)


def test_training_mode_updates_running_stats(one_frame):
    model = P.AutoencoderModel(seed=5)
    before = {k: v.copy() for k, v in model.running.items()}
    batch = Tensor(np.repeat(one_frame[None, None].astype(float), 4, axis=0))
    model.encode_batch(batch, training=True)
    changed = any(not np.array_equal(before[k], v) for k, v in model.running.items()
                  if k.startswith("enc_"))
    assert changed


def test_iou_basics():
    a = np.zeros((4, 4), dtype=np.uint8)
    b = np.zeros((4, 4), dtype=np.uint8)
    assert P.iou(a, b) == 1.0  # both empty by convention
    a[0, 0] = 1
    assert P.iou(a, b) == 0.0
    b[0, 0] = 1
    b[0, 1] = 1
    assert P.iou(a, b) == pytest.approx(0.5)


def test_save_load_roundtrip_preserves_outputs(tmp_path, one_frame):
    model = P.AutoencoderModel(seed=6)
    model.loss_history = [0.5, 0.25]
    path = tmp_path / "ae.ckpt"
    P.save_autoencoder(model, path)
    loaded = P.load_autoencoder(path)
    assert np.array_equal(P.encode(model, one_frame), P.encode(loaded, one_frame))
    assert loaded.loss_history == [0.5, 0.25]
    assert P.autoencoder_digest(model) == P.autoencoder_digest(loaded)


def test_digest_changes_with_weights():
    m1 = P.AutoencoderModel(seed=0)
    m2 = P.AutoencoderModel(seed=0)
    assert P.autoencoder_digest(m1) == P.autoencoder_digest(m2)
    m2.params["enc_conv0_w"].data += 1e-6
    assert P.autoencoder_digest(m1) != P.autoencoder_digest(m2)


def test_train_rejects_tiny_dataset(one_frame):
    with pytest.raises(ContractError):
        P.train_ae(np.repeat(one_frame[None], 10, axis=0), epochs=1)


# ---------------------------------------------------------------------------
# Training behavior (one shared training run keeps the suite fast)
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def memorized(one_frame):
    images = np.repeat(one_frame[None], 200, axis=0)
    return P.train_ae(images, epochs=15, batch_size=50, lr=2e-2, seed=0)


def test_single_image_memorization(one_frame, memorized):
    prob = P.decode(memorized, P.encode(memorized, one_frame))
    assert P.iou(prob > 0.5, one_frame) > 0.98


def test_training_loss_halves_and_decreases_smoothed(memorized):
    hist = np.asarray(memorized.loss_history)
    assert hist[-1] <= 0.5 * hist[0]
    smoothed = np.convolve(hist, np.ones(5) / 5, mode="valid")
    assert np.all(np.diff(smoothed) <= 1e-6)


def test_extreme_inputs_map_to_distinct_latents(memorized):
    z0 = P.encode(memorized, np.zeros((96, 128)))
    z1 = P.encode(memorized, np.ones((96, 128)))
    assert np.linalg.norm(z1 - z0) > 0.0


def test_training_divergence_reports_epoch(one_frame):
    # Batchnorm renormalizes every layer, so even absurd learning rates stay
    # finite; the divergence contract is about non-finite values entering the
    # pipeline, which must surface with the epoch index rather than crash.
    images = np.repeat(one_frame[None], 200, axis=0).astype(float)
    images[17, 0, 0] = np.nan
    with pytest.raises(P.TrainingDivergedError) as exc:
        P.train_ae(images, epochs=2, batch_size=50, lr=1e-3, seed=0)
    assert exc.value.epoch == 0
