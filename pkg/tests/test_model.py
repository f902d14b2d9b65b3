import dataclasses

import numpy as np
import pytest

from collab_handshake.checkpoint import checkpoint_bytes, load_checkpoint, save_checkpoint
from collab_handshake.errors import ConfigError, DimensionError, FormatError, ShapeError, TruncatedError, VersionError
from collab_handshake.model import (Method, Model, ModelConfig, Observation, decode, encode, init_params,
                                    parameter_audit)
from collab_handshake.tensor import Tape, finite_diff_params
from collab_handshake.train import batch_forward


def obs(seed, shape=(3, 16, 16)):
    return Observation(np.random.default_rng(seed).uniform(size=shape))


def test_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(variant="scaled_dot", message_size=8, key_size=1024)
    ModelConfig(variant="scaled_dot", message_size=16, key_size=16)
    with pytest.raises(ConfigError):
        ModelConfig(message_size=0)
    with pytest.raises(ConfigError):
        ModelConfig.from_dict({"message_size": 8, "colour": "red"})
    cfg = ModelConfig(message_size=1, key_size=4)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_observation_validation():
    with pytest.raises(Exception):
        Observation(np.full((3, 16, 16), 1.5))
    with pytest.raises(Exception):
        Observation(np.zeros((16, 16)))


def test_encode_shapes_and_determinism():
    m = Model(ModelConfig())
    f = m.encode(obs(0))
    assert f.shape == (16, 4, 4)
    assert np.array_equal(f, m.encode(obs(0)))
    with pytest.raises(DimensionError):
        m.encode(Observation(np.zeros((3, 8, 8))))


def test_zero_obs_zero_biases_give_zero_map():
    m = Model(ModelConfig())
    assert not m.encode(Observation(np.zeros((3, 16, 16)))).any()


def test_message_and_key_heads():
    cfg = ModelConfig(message_size=1, key_size=4)
    m = Model(cfg)
    assert m.message(obs(1)).shape == (1,) and m.key(obs(1)).shape == (4,)
    assert not np.array_equal(m.key(obs(1)), m.key(obs(2)))
    zeroed = m.params.copy()
    for name in ("message.weight", "message.bias", "key.weight", "key.bias"):
        zeroed.values[name][:] = 0
    z = Model(cfg, zeroed)
    assert not z.message(obs(3)).any() and not z.key(obs(3)).any()
    nomsg = Model(dataclasses.replace(cfg, method=Method.OURS_NOMSG))
    assert np.array_equal(nomsg.message(obs(4)), np.ones(1))


def test_decode_shape_and_order():
    m = Model(ModelConfig())
    a, b = m.encode(obs(5)), m.encode(obs(6))
    p = m.decode(a, b)
    assert p.logits.shape == (6, 16, 16)
    assert p.labels.min() >= 0 and p.labels.max() < 6
    assert not np.array_equal(p.logits, m.decode(b, a).logits)


def test_parameter_audit():
    store = init_params(ModelConfig(), np.random.default_rng(0))
    audit = parameter_audit(store)
    enc = 16 * 3 * 9 + 16 + 16 * 16 * 9 + 16
    key = 16 * 1024 + 1024
    attn = 8 * 1024
    msg = 16 * 8 + 8
    dec = 32 * 16 * 9 + 16 + 16 * 16 * 9 + 16 + 16 * 6 * 9 + 6
    assert audit == {"shared": enc + key + attn, "target_only": msg + dec, "total": enc + key + attn + msg + dec}
    assert audit["total"] == store.num_scalars()


def test_catall_and_compression_decoder_width():
    assert ModelConfig(method="catall").decoder_in_channels == 16 * 5
    cfg = ModelConfig(method="compression")
    assert cfg.decoder_in_channels == 16 + 4 * 4
    m = Model(cfg)
    assert m.feature_map(obs(0)).shape == (4, 4, 4)


@pytest.mark.parametrize("seed", range(10))
def test_gradcheck_full_pipeline(seed):
    cfg = ModelConfig(image_size=8, feature_channels=4, message_size=3, key_size=5)
    rng = np.random.default_rng(seed)
    store = init_params(cfg, rng)
    for name in store:
        # nonzero biases so every path carries signal
        if name.endswith("bias"):
            store.values[name][:] = rng.normal(scale=0.1, size=store[name].shape)
    arrays = {"target": rng.uniform(size=(2, 3, 8, 8)), "normals": rng.uniform(size=(2, 4, 3, 8, 8))}
    labels = rng.integers(0, 6, size=(2, 8, 8))

    def fn(tape, s):
        logits, _, _ = batch_forward(tape, s, cfg, arrays)
        return tape.cross_entropy(logits, labels)

    assert finite_diff_params(fn, store, 1e-5, max_coords=6, rng=rng) <= 1e-4


def test_gradients_reach_every_module(small_split):
    from collab_handshake.scenario import stack_episodes
    cfg = ModelConfig()
    store = init_params(cfg, np.random.default_rng(0))
    arrays = stack_episodes(small_split["train"][:4])
    tape = Tape()
    logits, _, _ = batch_forward(tape, store, cfg, arrays)
    tape.backward(tape.cross_entropy(logits, arrays["labels"]))
    for prefix in ("message.", "key.", "attention.", "encoder.", "decoder."):
        assert any(np.abs(g).sum() > 0 for k, g in store.grads.items() if k.startswith(prefix)), prefix


def test_nomsg_message_head_gets_zero_gradient(small_split):
    from collab_handshake.scenario import stack_episodes
    cfg = ModelConfig(method="ours_nomsg")
    store = init_params(cfg, np.random.default_rng(0))
    arrays = stack_episodes(small_split["train"][:4])
    tape = Tape()
    logits, _, _ = batch_forward(tape, store, cfg, arrays)
    tape.backward(tape.cross_entropy(logits, arrays["labels"]))
    assert not store.grads["message.weight"].any() and not store.grads["message.bias"].any()


# -- checkpoints ------------------------------------------------------------

def test_checkpoint_round_trip(tmp_path):
    cfg = ModelConfig(message_size=4, key_size=16)
    m = Model(cfg, rng=np.random.default_rng(3))
    path = tmp_path / "nested" / "m.chsk"
    save_checkpoint(m.params, cfg, str(path))
    params, cfg2 = load_checkpoint(str(path))
    assert cfg2 == cfg
    for k, v in m.params.items():
        assert params[k].tobytes() == v.tobytes()
    f = m.encode(obs(1))
    assert np.array_equal(Model(cfg2, params).decode(f, f).logits, m.decode(f, f).logits)
    assert checkpoint_bytes(params, cfg2) == path.read_bytes()


def test_checkpoint_errors(tmp_path):
    cfg = ModelConfig()
    path = tmp_path / "m.chsk"
    save_checkpoint(Model(cfg).params, cfg, str(path))
    data = path.read_bytes()

    bad = tmp_path / "bad.chsk"
    bad.write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(FormatError):
        load_checkpoint(str(bad))

    bad.write_bytes(data[:len(data) // 2])
    with pytest.raises(TruncatedError):
        load_checkpoint(str(bad))

    bad.write_bytes(data[:8] + (99).to_bytes(4, "little") + data[12:])
    with pytest.raises(VersionError):
        load_checkpoint(str(bad))

    with pytest.raises(ShapeError, match="message_size"):
        load_checkpoint(str(path), expected=dataclasses.replace(cfg, message_size=4))
