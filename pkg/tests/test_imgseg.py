import numpy as np
import pytest

from mwmix.imgseg import (
    TABLE_COLUMNS,
    ImageFormatError,
    read_ppm,
    segment,
    segment_channel,
    table_to_csv,
    transform_intensity,
    transformed_histogram,
    write_pgm,
    write_ppm,
)
from mwmix.metrics import ari


def half_split(h=24, w=32, seed=0):
    rng = np.random.default_rng(seed)
    img = np.empty((h, w, 3))
    img[:, : w // 2] = 0.2
    img[:, w // 2:] = 0.8
    img += rng.uniform(-0.01, 0.01, img.shape)
    truth = np.zeros((h, w), dtype=int)
    truth[:, w // 2:] = 1
    return img, truth


def test_transform_examples():
    assert transform_intensity(0.5, 17) == 0.0
    assert transform_intensity(1.0, 2) == pytest.approx(0.6744898, abs=1e-7)
    assert transform_intensity(0.0, 2) == pytest.approx(-0.6744898, abs=1e-7)
    x = np.linspace(0, 1, 256)
    y = transform_intensity(x, 1000)
    assert np.all(np.isfinite(y)) and np.all(np.diff(y) > 0)
    with pytest.raises(ValueError):
        transform_intensity(0.5, 0)


def test_ppm_roundtrip(tmp_path):
    img = np.random.default_rng(1).integers(0, 256, (5, 7, 3)) / 255.0
    write_ppm(tmp_path / "a.ppm", img)
    np.testing.assert_array_equal(read_ppm(tmp_path / "a.ppm"), img)


def test_ppm_header_comments(tmp_path):
    raster = bytes(range(12))
    (tmp_path / "c.ppm").write_bytes(b"P6\n# comment\n2 2\n# another\n255\n" + raster)
    img = read_ppm(tmp_path / "c.ppm")
    assert img.shape == (2, 2, 3) and img[0, 0, 1] == pytest.approx(1 / 255)


def test_ppm_errors(tmp_path):
    (tmp_path / "p5.pgm").write_bytes(b"P5\n1 1\n255\n\x00")
    with pytest.raises(ImageFormatError):
        read_ppm(tmp_path / "p5.pgm")
    (tmp_path / "short.ppm").write_bytes(b"P6\n4 4\n255\n\x00\x00")
    with pytest.raises(ImageFormatError):
        read_ppm(tmp_path / "short.ppm")
    (tmp_path / "junk.ppm").write_bytes(b"P6\nxx")
    with pytest.raises(ImageFormatError):
        read_ppm(tmp_path / "junk.ppm")


def test_pgm_writer(tmp_path):
    write_pgm(tmp_path / "l.pgm", np.array([[0, 255], [255, 0]]))
    assert (tmp_path / "l.pgm").read_bytes() == b"P5\n2 2\n255\n\x00\xff\xff\x00"


@pytest.mark.parametrize("estimator", ["pmle", "mwde"])
def test_half_split_recovered(estimator):
    img, truth = half_split()
    res = segment(img, estimator, n_starts=2)
    for fit in res.channels:
        assert set(np.unique(fit.labels)) == {1, 2}
        assert ari(truth.ravel(), fit.labels.ravel()) >= 0.99
        assert len(np.unique(fit.recolored)) <= 2
        assert np.all((fit.recolored >= 0) & (fit.recolored <= 1))
    assert len(np.unique(res.combined.reshape(-1, 3), axis=0)) <= 8
    assert set(np.unique(res.refined_labels)) <= set(range(8))


def test_estimators_agree_on_half_split():
    img, _ = half_split()
    a = segment(img, "pmle", n_starts=2)
    b = segment(img, "mwde", n_starts=2)
    differ = np.any(a.combined != b.combined, axis=-1).mean()
    assert differ < 0.01


def test_table_schema():
    img, _ = half_split()
    res = segment(img, "pmle", n_starts=1)
    table = res.table()
    assert [list(r) for r in table] == [TABLE_COLUMNS] * 3
    assert [r["channel"] for r in table] == ["red", "green", "blue"]
    assert TABLE_COLUMNS == ["channel", "estimator", "w1", "w2", "mu1", "mu2", "sigma1", "sigma2"]
    for r in table:
        assert r["mu1"] < r["mu2"] and r["w1"] + r["w2"] == pytest.approx(1.0)
    header = table_to_csv(table).splitlines()[0]
    assert header == ",".join(TABLE_COLUMNS)


def test_constant_image_falls_back():
    img = np.full((6, 6, 3), 0.4)
    res = segment(img, "mwde", n_starts=1)
    for fit in res.channels:
        assert fit.g_hat is None and "single cluster" in fit.diagnostic
        assert np.all(fit.labels == 1)
        np.testing.assert_allclose(fit.recolored, img[..., 0])
    np.testing.assert_allclose(res.combined, img)
    assert table_to_csv(res.table()).splitlines()[1] == "red,mwde,,,,,,"


def test_segment_input_validation():
    with pytest.raises(ImageFormatError):
        segment(np.zeros((4, 4)), "pmle")
    with pytest.raises(ImageFormatError):
        segment(np.full((2, 2, 3), 1.5), "pmle")
    with pytest.raises(ValueError):
        segment_channel(np.linspace(0, 1, 16).reshape(4, 4), "kmeans")


def test_histogram():
    x = np.linspace(0, 1, 100)
    lo, hi, counts = transformed_histogram(x, bins=10)
    assert counts.sum() == 100 and np.all(hi > lo)
    np.testing.assert_allclose(lo[1:], hi[:-1])
