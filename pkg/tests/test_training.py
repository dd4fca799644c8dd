import json
import math

import numpy as np
import pytest

from defraudnet.errors import ConfigError, FormatError, StateError, TrainingDiverged
from defraudnet.model import build_model, desk_config
from defraudnet.tensor import ParamStore
from defraudnet.training import (
    CKPT_MAGIC,
    OptimizerState,
    TrainConfig,
    checkpoint_bytes,
    load_checkpoint,
    parse_checkpoint,
    sample_loss,
    save_checkpoint,
    sgd_nesterov_step,
    train,
    train_ace,
    write_epoch_log,
)


def single_param(w, g, decay=False):
    store = ParamStore()
    t = store.add("w", np.array(w, dtype=np.float64), decay=decay)
    t.grad = np.array(g, dtype=np.float64)
    return store, OptimizerState.for_params(store)


# ---------------------------------------------------------------- optimizer

def test_nesterov_example():
    store, state = single_param([1.0], [0.5])
    sgd_nesterov_step(store, state, TrainConfig(lr=0.1, momentum=0.9, weight_decay=0.0))
    assert state.velocity["w"][0] == pytest.approx(0.5, abs=1e-15)
    assert store["w"].data[0] == pytest.approx(1 - 0.1 * (0.5 + 0.45), abs=1e-15)


def test_zero_lr_updates_velocity_only():
    store, state = single_param([1.0, 2.0], [0.5, -1.0])
    sgd_nesterov_step(store, state, TrainConfig(momentum=0.9), lr=0.0)
    np.testing.assert_array_equal(store["w"].data, [1.0, 2.0])
    np.testing.assert_array_equal(state.velocity["w"], [0.5, -1.0])


def test_zero_momentum_two_steps_is_plain_sgd():
    store, state = single_param([1.0], [0.3])
    cfg = TrainConfig(lr=0.05, momentum=0.0, weight_decay=0.0)
    sgd_nesterov_step(store, state, cfg)
    sgd_nesterov_step(store, state, cfg)
    assert store["w"].data[0] == pytest.approx(1.0 - 0.05 * (0.3 + 0.3), abs=1e-15)


def test_weight_decay_contraction_matches_closed_form():
    lr, mu, wd = 0.1, 0.9, 0.01
    store, state = single_param([2.0, -1.0], [0.0, 0.0], decay=True)
    cfg = TrainConfig(lr=lr, momentum=mu, weight_decay=wd)
    for _ in range(10):
        store["w"].grad = np.zeros(2)
        sgd_nesterov_step(store, state, cfg)
    # state (w, v) evolves linearly: v' = wd*w + mu*v, w' = w - lr*(wd*w + mu*v')
    m = np.array([[1 - lr * wd * (1 + mu), -lr * mu * mu], [wd, mu]])
    want = np.linalg.matrix_power(m, 10) @ np.array([[2.0, -1.0], [0.0, 0.0]])
    np.testing.assert_allclose(store["w"].data, want[0], atol=1e-6)
    np.testing.assert_allclose(state.velocity["w"], want[1], atol=1e-6)


def test_weight_decay_skips_undecayed_params():
    store, state = single_param([2.0], [0.0], decay=False)
    sgd_nesterov_step(store, state, TrainConfig(weight_decay=0.5))
    assert store["w"].data[0] == 2.0


def test_missing_gradient_names_parameter():
    store = ParamStore()
    store.add("net1.stem.conv.weight", np.ones(2))
    with pytest.raises(StateError, match="net1.stem.conv.weight"):
        sgd_nesterov_step(store, OptimizerState.for_params(store), TrainConfig())


def test_step_changes_a_parameter_and_velocity_covers_params():
    m = build_model(desk_config(), seed=0)
    state = OptimizerState.for_params(m.params)
    assert set(state.velocity) == set(m.params)
    before = {n: t.data.copy() for n, t in m.params.items()}
    m.params.zero_grad()
    from defraudnet.tensor import backward

    loss, _ = sample_loss(m, np.random.default_rng(0).uniform(size=(3, 224, 224)).astype(np.float32), 1)
    backward(loss)
    sgd_nesterov_step(m.params, state, TrainConfig())
    assert any(not np.array_equal(before[n], t.data) for n, t in m.params.items())


def test_train_config_validation():
    for bad in (dict(lr=0), dict(momentum=1.0), dict(momentum=-0.1), dict(weight_decay=-1)):
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"learning_rate": 1})
    assert TrainConfig.from_dict(TrainConfig().to_dict()) == TrainConfig()


# ---------------------------------------------------------------- train loop

def tiny_dataset(n_per_class=2, seed=0):
    rng = np.random.default_rng(seed)
    data = []
    for i in range(n_per_class):
        data.append((rng.uniform(0, 0.5, size=(3, 224, 224)).astype(np.float32), 0))
        data.append((rng.uniform(0.5, 1, size=(3, 224, 224)).astype(np.float32), 1))
    return data


def test_train_ace_helper():
    assert train_ace([0, 0, 1, 1], [0, 0, 1, 1]) == 0.0
    assert train_ace([0, 0, 0, 0], [0, 0, 1, 1]) == 50.0
    assert train_ace([0, 1, 0, 1], [0, 0, 1, 1]) == 50.0


def test_single_class_dataset_rejected():
    data = [(d, 0) for d, _ in tiny_dataset(1)]
    with pytest.raises(ConfigError, match="both live and fake"):
        train(build_model(desk_config()), data, TrainConfig(epochs=1))
    with pytest.raises(ConfigError):
        train(build_model(desk_config()), [], TrainConfig(epochs=1))


def test_divergence_names_step():
    data = tiny_dataset(1)
    data[1] = (np.full((3, 224, 224), np.nan, np.float32), 1)
    with pytest.raises(TrainingDiverged, match="step"):
        train(build_model(desk_config()), data, TrainConfig(epochs=1, shuffle=False))


def test_zero_init_head_initial_loss_is_ln2():
    m = build_model(desk_config(zero_init_head=True), seed=0)
    loss, out = sample_loss(m, tiny_dataset(1)[0][0], 0)
    assert np.all(out.data == 0)
    assert abs(loss.item() - math.log(2)) < 1e-6


def test_same_seed_same_log_and_checkpoint(tmp_path):
    data = tiny_dataset(2)
    cfg = TrainConfig(epochs=2, seed=3)
    runs = []
    for i in range(2):
        res = train(build_model(desk_config(), seed=3), data, cfg)
        path = tmp_path / f"run{i}.ckpt"
        save_checkpoint(path, res.model, res.state, len(res.log), res.rng_state)
        write_epoch_log(res.log, tmp_path / f"run{i}.jsonl")
        runs.append(res)
    assert (tmp_path / "run0.ckpt").read_bytes() == (tmp_path / "run1.ckpt").read_bytes()
    assert (tmp_path / "run0.jsonl").read_bytes() == (tmp_path / "run1.jsonl").read_bytes()
    lines = [json.loads(l) for l in (tmp_path / "run0.jsonl").read_text().splitlines()]
    assert [sorted(l) for l in lines] == [["epoch", "loss", "train_ace"]] * 2


def test_callbacks_stop_when_and_schedule():
    seen, lrs = [], []
    res = train(
        build_model(desk_config()), tiny_dataset(1), TrainConfig(epochs=5),
        callbacks=[seen.append], lr_schedule=lambda e: lrs.append(e) or 0.001, stop_when=lambda r: r["epoch"] == 1,
    )
    assert len(res.log) == 2 and seen == res.log and lrs == [0, 1]


def test_multi_fingerprint_steps():
    res = train(build_model(desk_config()), tiny_dataset(2), TrainConfig(epochs=1, fingerprints_per_step=2))
    assert len(res.log) == 1 and np.isfinite(res.log[0]["loss"])


def test_augmented_training_runs():
    res = train(build_model(desk_config()), tiny_dataset(1), TrainConfig(epochs=1, augment=True))
    assert np.isfinite(res.log[0]["loss"])


# ---------------------------------------------------------------- checkpoints

@pytest.fixture(scope="module")
def trained():
    res = train(build_model(desk_config(), seed=1), tiny_dataset(1), TrainConfig(epochs=1, seed=1))
    return res


def test_checkpoint_roundtrip_predictions_bitwise(tmp_path, trained):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, trained.model, trained.state, 1, trained.rng_state, {"note": "x"})
    ck = load_checkpoint(path)
    assert ck.epoch == 1 and ck.meta == {"note": "x"} and ck.rng_state == trained.rng_state
    assert ck.config == trained.model.config
    for name, v in trained.state.velocity.items():
        assert ck.state.velocity[name].tobytes() == v.tobytes()
    rng = np.random.default_rng(5)
    for _ in range(10):
        img = rng.uniform(size=(3, 224, 224)).astype(np.float32)
        a, b = trained.model.forward(img), ck.model.forward(img)
        assert a.logits.tobytes() == b.logits.tobytes()
        assert a.patch_weights.tobytes() == b.patch_weights.tobytes()
    assert checkpoint_bytes(ck.model, ck.state, ck.epoch, ck.rng_state, ck.meta) == path.read_bytes()


def test_checkpoint_layout(trained):
    buf = checkpoint_bytes(trained.model, trained.state)
    assert buf[:8] == CKPT_MAGIC
    assert int.from_bytes(buf[8:12], "little") == 1
    assert int.from_bytes(buf[12:20], "little") == len(buf) - 20 - 32
    import hashlib

    assert hashlib.sha256(buf[:-32]).digest() == buf[-32:]


def test_checkpoint_corruption_detected(trained):
    buf = bytearray(checkpoint_bytes(trained.model, trained.state))
    rng = np.random.default_rng(0)
    for pos in rng.integers(20, len(buf) - 32, size=5):
        bad = bytearray(buf)
        bad[pos] ^= 0x01
        with pytest.raises(FormatError, match="checksum"):
            parse_checkpoint(bytes(bad))


def test_checkpoint_bad_magic_version_truncation(trained):
    buf = checkpoint_bytes(trained.model, trained.state)
    with pytest.raises(FormatError, match="magic"):
        parse_checkpoint(b"NOTACKPT" + buf[8:])
    with pytest.raises(FormatError, match="version"):
        parse_checkpoint(buf[:8] + (2).to_bytes(4, "little") + buf[12:])
    with pytest.raises(FormatError, match="truncated"):
        parse_checkpoint(buf[:-100])
    with pytest.raises(FormatError):
        parse_checkpoint(b"")


def test_checkpoint_param_set_must_match_config(trained):
    import copy
    from dataclasses import replace

    from defraudnet.patching import PatchGridConfig

    other = copy.copy(trained.model)
    other.config = replace(trained.model.config, zero_init_head=not trained.model.config.zero_init_head)
    # same shapes under a differently-initialised config still loads
    parse_checkpoint(checkpoint_bytes(other, trained.state))
    other.config = desk_config(patch_grid=PatchGridConfig(56, 56))
    with pytest.raises(FormatError, match="does not match config|shape"):
        parse_checkpoint(checkpoint_bytes(other, trained.state))
