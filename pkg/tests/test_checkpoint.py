import struct

import numpy as np
import pytest

from garom.checkpoint import (MAGIC, CheckpointFormatError, load_checkpoint, read_container,
                              save_checkpoint, write_container)
from garom.data import gen_gaussian_dataset
from garom.model import TrainConfig, build_model, generate, train


@pytest.fixture(scope="module")
def trained():
    cfg = TrainConfig(eta=1, latent_dim=4, noise_dim=3, epochs=3, seed=5)
    m = build_model(12, 2, cfg)
    train(m, gen_gaussian_dataset(16, 12, seed=0))
    return m


def test_round_trip_bit_exact(tmp_path, trained):
    path = tmp_path / "ck.bin"
    save_checkpoint(trained, path)
    back = load_checkpoint(path)
    assert back.config == trained.config
    assert back.k == trained.k
    assert back.history == trained.history
    for (na, a), (nb, b) in zip(trained.named_nets(), back.named_nets()):
        assert na == nb
        np.testing.assert_array_equal(a.params, b.params)
    for group in ("gen_adam", "disc_adam"):
        for name, st in getattr(trained, group).items():
            other = getattr(back, group)[name]
            np.testing.assert_array_equal(st.first_moment, other.first_moment)
            np.testing.assert_array_equal(st.second_moment, other.second_moment)
            assert st.step_count == other.step_count
    rng = np.random.default_rng(0)
    z, c = rng.uniform(-1, 1, (5, 3)), rng.uniform(-1, 1, (5, 2))
    np.testing.assert_array_equal(generate(trained, z, c), generate(back, z, c))


def test_resume_matches_continuous_state(tmp_path, trained):
    path = tmp_path / "ck.bin"
    save_checkpoint(trained, path)
    a, b = load_checkpoint(path), load_checkpoint(path)
    d = gen_gaussian_dataset(16, 12, seed=0)
    train(a, d, a.config.replace(epochs=1))
    train(b, d, b.config.replace(epochs=1))
    assert a.history == b.history and len(a.history) == 4


def test_fresh_model_reloads_with_empty_history(tmp_path):
    m = build_model(12, 1, TrainConfig(latent_dim=2, noise_dim=2))
    save_checkpoint(m, tmp_path / "f.bin")
    assert load_checkpoint(tmp_path / "f.bin").history == []


def test_header_layout(tmp_path, trained):
    path = tmp_path / "ck.bin"
    save_checkpoint(trained, path)
    raw = path.read_bytes()
    assert raw[:8] == b"GAROMCK1"
    assert struct.unpack_from("<I", raw, 8)[0] == 1
    eta, lam, gamma, lr, epochs = struct.unpack_from("<QdddQ", raw, 12)
    assert (eta, lam, gamma, lr, epochs) == (1, 1e-3, 0.3, 1e-3, 3)


def test_corrupted_magic(tmp_path, trained):
    path = tmp_path / "ck.bin"
    save_checkpoint(trained, path)
    raw = bytearray(path.read_bytes())
    raw[0:8] = b"NOTGAROM"
    path.write_bytes(bytes(raw))
    with pytest.raises(CheckpointFormatError, match="magic"):
        load_checkpoint(path)


def test_truncated_file(tmp_path, trained):
    path = tmp_path / "ck.bin"
    save_checkpoint(trained, path)
    raw = path.read_bytes()
    for cut in (4, 20, len(raw) // 2, len(raw) - 1):
        path.write_bytes(raw[:cut])
        with pytest.raises(CheckpointFormatError, match="truncated|magic"):
            load_checkpoint(path)
    path.write_bytes(raw + b"\0")
    with pytest.raises(CheckpointFormatError, match="trailing"):
        load_checkpoint(path)


def test_dimension_mismatch_against_header(tmp_path, trained):
    tensors = {f"{p}.{i}.{kind}": getattr(l, kind)
               for p, net in trained.named_nets() for i, l in enumerate(net.layers)
               for kind in ("weight", "bias")}
    # wrong bias length for one layer
    tensors["discriminator.decoder.0.bias"] = np.zeros(3)
    path = tmp_path / "bad.bin"
    write_container(path, tensors, trained.config)
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(path)


def test_generic_container_round_trip(tmp_path):
    t = {"a": np.arange(6.0).reshape(2, 3), "scalar": np.array(2.5), "empty": np.zeros((0, 4))}
    write_container(tmp_path / "c.bin", t, k=0.25)
    cfg, k, back = read_container(tmp_path / "c.bin")
    assert cfg == TrainConfig() and k == 0.25
    for name in t:
        assert back[name].shape == t[name].shape
        np.testing.assert_array_equal(back[name], t[name])
    assert (tmp_path / "c.bin").read_bytes().startswith(MAGIC)
