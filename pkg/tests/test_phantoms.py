import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from antgan import phantoms as P
from antgan.errors import ConfigError, FormatError, ValidationError


@pytest.fixture(scope="module")
def small_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("ph") / "small.antd"
    P.make_phantoms(1, 10, 10, 64, path)
    return path


def test_generation_is_deterministic(small_file, tmp_path):
    again = P.make_phantoms(1, 10, 10, 64, tmp_path / "again.antd")
    assert again.read_bytes() == small_file.read_bytes()
    other = P.make_phantoms(2, 10, 10, 64, tmp_path / "other.antd")
    assert other.read_bytes() != small_file.read_bytes()


def test_file_length(small_file):
    assert small_file.stat().st_size == 16 + 20 * (1 + 4 * 64 * 64 + 64 * 64)


def test_header(small_file):
    raw = small_file.read_bytes()
    assert raw[:4] == b"ANTD"
    assert struct.unpack_from("<III", raw, 4) == (1, 20, 64)


def test_lesion_contrast_against_ring(small_file):
    _, images, masks, labels = P.read_dataset(small_file)
    for im, m, lab in zip(images, masks, labels):
        if lab == P.NORMAL:
            assert not m.any()
            continue
        inside = m.astype(bool)
        # 2-pixel ring just outside the union, computed independently with a square-free disc
        yy, xx = np.mgrid[-2:3, -2:3]
        grown = np.zeros_like(inside)
        for dy, dx in zip(yy.ravel(), xx.ravel()):
            if dy * dy + dx * dx <= 4:
                grown |= np.roll(inside, (dy, dx), (0, 1))
        ring = grown & ~inside
        assert im[inside].mean() - im[ring].mean() >= 0.3


def test_abnormal_mask_coverage(small_file):
    _, _, masks, labels = P.read_dataset(small_file)
    for m, lab in zip(masks, labels):
        if lab == P.ABNORMAL:
            assert 1 <= m.sum() <= 0.25 * m.size


def test_tissue_statistics_match_normals(tmp_path):
    path = P.make_phantoms(3, 40, 40, 64, tmp_path / "stats.antd")
    _, images, masks, labels = P.read_dataset(path)
    normal, abnormal = [], []
    for im, m, lab in zip(images, masks, labels):
        keep = (im > (P.BACKGROUND + P.TISSUE) / 2) & (m == 0)
        (abnormal if lab else normal).append(im[keep])
    normal, abnormal = np.concatenate(normal), np.concatenate(abnormal)
    assert abs(abnormal.mean() / normal.mean() - 1) < 0.10
    assert abs(abnormal.std() / normal.std() - 1) < 0.10


def test_round_trip_is_bit_exact(small_file, tmp_path):
    size, images, masks, labels = P.read_dataset(small_file)
    out = tmp_path / "copy.antd"
    P.write_dataset(out, images, masks, labels)
    assert out.read_bytes() == small_file.read_bytes()


def test_loader_maps_to_model_range(small_file):
    _, images, _, _ = P.read_dataset(small_file)
    mapped = {(2.0 * im - 1.0).astype(np.float32).tobytes() for im in images}
    pools = P.load_dataset(small_file)
    loaded = pools.train_normal + pools.test_normal + pools.train_abnormal + pools.test_abnormal
    assert len(loaded) == 20
    for s in loaded:
        assert s.image.dtype == np.float32 and s.image.shape == (1, 64, 64)
        assert s.image.min() >= -1 and s.image.max() <= 1
        assert s.image[0].tobytes() in mapped


def test_split_sizes_and_stability(small_file):
    a = P.load_dataset(small_file, split_seed=4)
    b = P.load_dataset(small_file, split_seed=4)
    assert (len(a.train_normal), len(a.test_normal)) == (8, 2)
    assert (len(a.train_abnormal), len(a.test_abnormal)) == (8, 2)
    for pa, pb in ((a.train_normal, b.train_normal), (a.test_abnormal, b.test_abnormal)):
        assert [s.image.tobytes() for s in pa] == [s.image.tobytes() for s in pb]
    assert all(s.label == P.NORMAL for s in a.test_normal)
    assert all(s.label == P.ABNORMAL for s in a.train_abnormal)


def test_sample_is_uniform_with_replacement(small_file):
    pools = P.load_dataset(small_file)
    rng = np.random.default_rng(0)
    draws = [id(P.sample(pools.train_normal, rng)) for _ in range(800)]
    counts = np.array([draws.count(id(s)) for s in pools.train_normal])
    assert counts.min() > 60 and counts.max() < 140
    with pytest.raises(ConfigError):
        P.sample([], rng)


def test_bad_magic(small_file, tmp_path):
    bad = tmp_path / "bad.antd"
    bad.write_bytes(b"ANTX" + small_file.read_bytes()[4:])
    with pytest.raises(FormatError, match="offset 0") as exc:
        P.read_dataset(bad)
    assert exc.value.offset == 0


def test_truncated_file_reports_record_offset(small_file, tmp_path):
    raw = small_file.read_bytes()
    rec = 1 + 5 * 64 * 64
    cut = tmp_path / "cut.antd"
    cut.write_bytes(raw[: 16 + 3 * rec + 100])
    with pytest.raises(FormatError) as exc:
        P.read_dataset(cut)
    assert exc.value.offset == 16 + 3 * rec


def test_bad_label(small_file, tmp_path):
    raw = bytearray(small_file.read_bytes())
    raw[16] = 7
    p = tmp_path / "label.antd"
    p.write_bytes(bytes(raw))
    with pytest.raises(FormatError) as exc:
        P.read_dataset(p)
    assert exc.value.offset == 16


def test_invalid_generation_args(tmp_path):
    with pytest.raises(ConfigError):
        P.make_phantoms(0, 1, 1, 30, tmp_path / "x.antd")
    with pytest.raises(ConfigError):
        P.make_phantoms(0, 0, 1, 32, tmp_path / "x.antd")


def test_unwritable_path(tmp_path):
    with pytest.raises(OSError):
        P.make_phantoms(0, 1, 1, 16, tmp_path / "missing" / "x.antd")


class TestExport:
    def test_extremes_and_midpoint(self, tmp_path):
        for value, byte in ((-1.0, 0), (1.0, 255), (0.0, 128)):
            p = P.export_image(np.full((1, 4, 4), value, np.float32), tmp_path / "e.pgm")
            assert (P.read_pgm(p) == byte).all()

    def test_golden_bytes(self, tmp_path):
        # (v+1)*127.5 = 0, 63.75, 127.5, 191.25, 255, 255, 0, 1.275 -> round half up, clamp
        img = np.array([[-1.0, -0.5, 0.0, 0.5], [1.0, 1.5, -2.0, -0.99]], np.float32)
        p = P.export_image(img, tmp_path / "g.pgm")
        assert p.read_bytes() == b"P5\n4 2\n255\n" + bytes([0, 64, 128, 191, 255, 255, 0, 1])

    def test_non_finite(self, tmp_path):
        with pytest.raises(ValidationError):
            P.export_image(np.array([[np.nan]]), tmp_path / "n.pgm")

    @settings(max_examples=40)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=30))
    def test_bytes_monotone(self, values):
        v = np.sort(np.array(values))
        assert (np.diff(P.to_bytes(v).astype(int)) >= 0).all()
