import numpy as np
import pytest

from antgan import models as M
from antgan import tensor as T
from antgan.errors import ConfigError, DimensionError, FormatError, UsageError
from antgan.phantoms import read_pgm

GENERATOR_TABLE = {
    "Conv1": "240*240*64",
    "Conv2": "120*120*128",
    "Conv3": "60*60*256",
    "RB": "60*60*256",
    "Deconv1": "120*120*256",
    "Deconv2": "240*240*64",
    "Conv4": "240*240*1",
}
DISCRIMINATOR_TABLE = {
    "Conv1": "120*120*64",
    "Conv2": "60*60*128",
    "Conv3": "30*30*256",
    "Conv4": "30*30*256",
    "Conv5": "30*30*1",
}


def cell(shape):
    return "*".join(map(str, shape))


@pytest.fixture(scope="module")
def full_scale():
    s = M.ArchScale.full()
    x = T.Tensor(np.zeros((1, 1, 240, 240), np.float32))
    g = M.build_generator(s, seed=0)
    d = M.build_discriminator(s, seed=0)
    return M.layer_shapes(g, x), M.discriminator_layer_shapes(d, x), g


def test_full_generator_table(full_scale):
    shapes, _, _ = full_scale
    for k in range(1, 10):
        assert cell(shapes[f"RB_{k}"]) == GENERATOR_TABLE["RB"]
    for name, want in GENERATOR_TABLE.items():
        if name != "RB":
            assert cell(shapes[name]) == want, name


def test_full_residual_block_table(full_scale):
    g = full_scale[2]
    x = T.Tensor(np.zeros((1, 256, 60, 60), np.float32))
    with T.no_grad():
        y = M.residual_block_forward(g.params, "rb1", x)
    assert cell((y.shape[2], y.shape[3], y.shape[1])) == "60*60*256"


def test_full_discriminator_table(full_scale):
    _, dshapes, _ = full_scale
    assert {k: cell(v) for k, v in dshapes.items()} == DISCRIMINATOR_TABLE


def test_desk_scale_arithmetic():
    s = M.ArchScale(64, 16, 3)
    x = T.Tensor(np.zeros((1, 1, 64, 64), np.float32))
    shapes = M.layer_shapes(M.build_generator(s), x)
    assert shapes["Conv1"] == (64, 64, 16)
    assert shapes["Conv2"] == (32, 32, 32)
    assert shapes["Conv3"] == (16, 16, 64)
    assert shapes["RB_3"] == (16, 16, 64)
    assert shapes["Deconv1"] == (32, 32, 64)
    assert shapes["Deconv2"] == (64, 64, 16)
    assert shapes["Conv4"] == (64, 64, 1)
    d = M.discriminator_layer_shapes(M.build_discriminator(s), x)
    assert d["Conv3"] == (8, 8, 64)
    assert d["Conv5"] == (8, 8, 1)


def test_arch_scale_validation():
    with pytest.raises(ConfigError):
        M.ArchScale(62, 16, 3)
    with pytest.raises(ConfigError):
        M.ArchScale(64, 16, 0)


def test_wrong_input_shape():
    g = M.build_generator(M.ArchScale(16, 4, 1))
    with pytest.raises(DimensionError):
        g(T.Tensor(np.zeros((1, 1, 32, 32), np.float32)))
    with pytest.raises(DimensionError):
        M.residual_block_forward(g.params, "rb1", T.Tensor(np.zeros((1, 3, 4, 4), np.float32)))


def test_init_deterministic_and_seed_sensitive():
    s = M.ArchScale(16, 4, 1)
    a = M.build_generator(s, seed=5)
    b = M.build_generator(s, seed=5)
    c = M.build_generator(s, seed=6)
    for k in a.params:
        assert a.params[k].data.tobytes() == b.params[k].data.tobytes()
    assert any(a.params[k].data.tobytes() != c.params[k].data.tobytes() for k in a.params)


def test_init_statistics():
    g = M.build_generator(M.ArchScale(64, 16, 3), seed=0)
    w = np.concatenate([t.data.ravel() for k, t in g.params.items() if k.endswith(".weight")])
    assert abs(w.std() - 0.02) < 0.001
    assert all(not t.data.any() for k, t in g.params.items() if k.endswith(".bias"))


def test_shortcut_with_zero_last_layer_is_tanh_identity():
    s = M.ArchScale(16, 4, 1)
    g = M.build_generator(s, use_shortcut=True, seed=1)
    g.params["conv4.weight"].data[:] = 0
    x = np.random.default_rng(0).uniform(-1, 1, (1, 1, 16, 16)).astype(np.float32)
    with T.no_grad():
        y = g(T.Tensor(x))
    np.testing.assert_allclose(y.data, np.tanh(x), rtol=1e-6)


def test_residual_zero_branch_is_identity():
    g = M.build_generator(M.ArchScale(16, 4, 1), seed=2)
    g.params["rb1.conv2.in_scale"].data[:] = 0
    x = T.Tensor(np.random.default_rng(0).standard_normal((1, 16, 4, 4)).astype(np.float32))
    with T.no_grad():
        y = M.residual_block_forward(g.params, "rb1", x)
    np.testing.assert_array_equal(y.data, x.data)


def test_zero_discriminator_scores_zero():
    d = M.build_discriminator(M.ArchScale(16, 4, 1), seed=0)
    for t in d.params.values():
        t.data[:] = 0
    x = T.Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 1, 16, 16)).astype(np.float32))
    with T.no_grad():
        np.testing.assert_array_equal(d(x).data, 0)


def test_generators_have_equal_size():
    s = M.ArchScale(32, 8, 2)
    assert M.build_generator(s, True).n_parameters() == M.build_generator(s, False).n_parameters()


def test_checkpoint_round_trip(tmp_path):
    s = M.ArchScale(16, 4, 1)
    nets = (M.build_generator(s, seed=1), M.build_generator(s, seed=2),
            M.build_discriminator(s, seed=3), M.build_discriminator(s, seed=4))
    p1, p2 = tmp_path / "a.antw", tmp_path / "b.antw"
    M.save_networks(p1, *nets)
    loaded = M.load_networks(p1)
    M.save_networks(p2, *loaded)
    assert p1.read_bytes() == p2.read_bytes()
    for orig, back in zip(nets, loaded):
        for k in orig.params:
            np.testing.assert_array_equal(orig.params[k].data, back.params[k].data)
    assert loaded[0].use_shortcut and loaded[0].scale == s


def test_checkpoint_errors(tmp_path):
    p = tmp_path / "c.antw"
    M.write_checkpoint(p, {"w": np.ones((2, 3), np.float32)})
    raw = p.read_bytes()
    (tmp_path / "bad.antw").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(FormatError, match="offset 0"):
        M.read_checkpoint(tmp_path / "bad.antw")
    (tmp_path / "short.antw").write_bytes(raw[:-4])
    with pytest.raises(FormatError) as exc:
        M.read_checkpoint(tmp_path / "short.antw")
    assert exc.value.offset == len(raw) - 24


def test_dump_activations(tmp_path):
    s = M.ArchScale(16, 4, 1)
    g = M.build_generator(s, seed=0)
    x = T.Tensor(np.random.default_rng(0).uniform(-1, 1, (1, 1, 16, 16)).astype(np.float32))
    paths = M.dump_activations(g, x, "Conv1", tmp_path / "a")
    assert len(paths) == 4
    assert [p.name for p in paths] == [f"Conv1_ch{c:03d}.pgm" for c in range(4)]
    for p in paths:
        img = read_pgm(p)
        assert img.shape == (16, 16) and img.min() == 0 and img.max() == 255
    again = M.dump_activations(g, x, "Conv1", tmp_path / "b")
    assert [p.read_bytes() for p in paths] == [p.read_bytes() for p in again]
    with pytest.raises(UsageError):
        M.dump_activations(g, x, "Conv9", tmp_path)


def test_dump_zero_weights_constant_input_is_uniform_gray(tmp_path):
    g = M.build_generator(M.ArchScale(16, 4, 1), seed=0)
    for k, v in g.params.items():
        if k.endswith(".weight"):
            v.data[:] = 0
    x = T.Tensor(np.full((1, 1, 16, 16), 0.3, np.float32))
    for layer in ("Conv1", "Deconv2"):
        for p in M.dump_activations(g, x, layer, tmp_path):
            assert (read_pgm(p) == 128).all()
