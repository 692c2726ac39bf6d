import io
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from tvprofile.field import DomainError, DomainMask
from tvprofile.ingest import (
    InputError,
    PolygonSpec,
    format_polygon,
    load_density,
    load_mask,
    load_volume,
    mask_to_pgm,
    parse_polygon,
    rasterize,
    read_pgm,
    write_pgm,
    write_volume,
)


def png_bytes(arr, mode="L"):
    buf = io.BytesIO()
    Image.fromarray(np.asarray(arr, dtype=np.uint8), mode="L").convert(mode).save(buf, format="PNG")
    return buf.getvalue()


def test_all_white_and_all_black():
    m = load_mask(write_pgm(np.full((10, 10), 255)))
    assert m.dims == (12, 12) and m.count == 100
    with pytest.raises(DomainError):
        load_mask(write_pgm(np.zeros((10, 10), dtype=int)))


def test_p2_p5_and_png_agree():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(7, 9))
    a = load_mask(write_pgm(img, binary=True))
    b = load_mask(write_pgm(img, binary=False))
    c = load_mask(png_bytes(img), "png")
    assert np.array_equal(a.data, b.data) and np.array_equal(a.data, c.data)
    assert np.array_equal(a.interior(), img > 127.5)


def test_threshold_is_strict_half_max():
    img = np.array([[127, 128], [0, 255]])
    m = load_mask(write_pgm(img))
    assert m.interior().tolist() == [[False, True], [False, True]]
    m16 = load_mask(b"P2\n2 1\n1000\n500 501\n")
    assert m16.interior().tolist() == [[False, True]]


def test_pgm_header_comments_and_16bit():
    data = b"P5\n# made by hand\n2 1\n# another\n65535\n" + np.array([0, 40000], dtype=">u2").tobytes()
    arr, maxval = read_pgm(data)
    assert maxval == 65535 and arr.tolist() == [[0, 40000]]


@pytest.mark.parametrize("data", [b"P6\n1 1\n255\n\x00\x00\x00", b"P5\n2 2\n255\n\x00", b"P2\n2\n",
                                  b"P2\n1 1\n255\n300\n", b"P5\n1 1\n70000\n\x00\x00", b"hello"])
def test_malformed_inputs(data):
    with pytest.raises(InputError):
        load_mask(data)


def test_png_modes():
    img = np.array([[0, 255], [255, 0]])
    assert load_mask(png_bytes(img, "1")).count == 2
    with pytest.raises(InputError, match="mode"):
        load_mask(png_bytes(img, "RGB"))
    with pytest.raises(InputError):
        load_mask(b"\x89PNG\r\n\x1a\nbroken", "png")


@given(arrays(np.bool_, st.tuples(st.integers(1, 8), st.integers(1, 8))).filter(lambda a: a.any()),
       st.booleans())
def test_mask_pgm_round_trip(a, binary):
    m = DomainMask.from_array(a)
    assert np.array_equal(load_mask(mask_to_pgm(m, binary)).data, m.data)


SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]


def test_full_square():
    assert rasterize(PolygonSpec((SQUARE,), 10)).count == 100


def test_square_with_hole():
    hole = [(0.25, 0.25), (0.75, 0.25), (0.75, 0.75), (0.25, 0.75)]
    m = rasterize(PolygonSpec((SQUARE, hole), 40))
    assert abs(m.count - 40**2 * 0.75) <= 40


def test_mirror_symmetry():
    pts = [(0.1, 0.3), (2.3, 0.0), (1.7, 1.13), (2.9, 2.2), (0.4, 1.9)]
    a = rasterize(PolygonSpec((pts,), 37))
    b = rasterize(PolygonSpec(([(-x, y) for x, y in pts],), 37))
    assert np.array_equal(a.data, b.data[:, ::-1])


def test_aspect_preserved_and_centered():
    m = rasterize(PolygonSpec(([(0, 0), (2, 0), (2, 1), (0, 1)],), 20))
    inner = m.interior()
    rows = np.flatnonzero(inner.any(axis=1))
    assert inner.sum() == 200 and rows[0] == 5 and rows[-1] == 14


def test_polygon_errors():
    with pytest.raises(InputError):
        PolygonSpec(([(0, 0), (1, 1)],), 10)
    with pytest.raises(InputError, match="self-intersecting"):
        PolygonSpec(([(0, 0), (1, 1), (1, 0), (0, 1)],), 10)
    with pytest.raises(InputError):
        rasterize(PolygonSpec(([(0, 0), (1, 0), (2, 0)],), 10))
    with pytest.raises(InputError):
        parse_polygon("0 0, 1 0, 1\n")


def test_polygon_text_format():
    text = "# outer\n0 0, 4 0, 4 4, 0 4\n1 1, 3 1, 3 3, 1 3  # hole\n\n"
    p = parse_polygon(text, 16)
    assert len(p.rings) == 2 and p.target_resolution == 16
    q = parse_polygon(format_polygon(p), 16)
    assert all(np.array_equal(a, b) for a, b in zip(p.rings, q.rings))
    assert rasterize(p).count == 16 * 16 - 8 * 8


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=3, max_size=12),
       st.integers(10, 40))
def test_resolution_consistency_convex(points, N):
    from shapely.geometry import MultiPoint

    hull = MultiPoint(points).convex_hull
    if hull.geom_type != "Polygon" or hull.area < 0.05:
        return
    ring = list(hull.exterior.coords)[:-1]
    a = rasterize(PolygonSpec((ring,), N)).count / N**2
    b = rasterize(PolygonSpec((ring,), 2 * N)).count / (2 * N) ** 2
    assert abs(a - b) < 2 / N


def test_density_loading():
    m = DomainMask.from_array(np.array([[1, 1, 0], [1, 0, 0]]))
    d = load_density(write_pgm(np.full((2, 3), 50)), None, m)
    assert np.allclose(d.weights[m.data], 1 / 3)
    d2 = load_density(write_pgm(np.array([[7, 7, 0], [7, 0, 0]])), None, m)
    assert np.allclose(d2.weights, d.weights * m.data)
    d3 = load_density(write_pgm(np.array([[10, 20, 0], [30, 0, 0]])), None, m)
    assert d3.weights[1, 2] / d3.weights[1, 1] == pytest.approx(2.0)
    assert d3.total(m) == pytest.approx(1.0)
    with pytest.raises(InputError):
        load_density(write_pgm(np.full((3, 3), 50)), None, m)
    with pytest.raises(InputError):
        load_density(write_pgm(np.array([[0, 0, 9], [0, 9, 9]])), None, m)


def test_volume_loading():
    m = load_volume(write_volume(np.full((2, 2, 2), 255, dtype=np.uint8)))
    assert m.dims == (4, 4, 4) and m.count == 8
    v = np.zeros((2, 3, 4), dtype=np.uint8)
    v[1, 2, 3] = 128
    v[0, 0, 0] = 127
    m = load_volume(write_volume(v))
    assert m.count == 1 and m.data[2, 3, 4]
    with pytest.raises(InputError):
        load_volume(write_volume(np.zeros((2, 2, 2), dtype=np.uint8)))
    with pytest.raises(InputError):
        load_volume(struct.pack("<3I", 2, 2, 2) + b"\xff" * 7)
    with pytest.raises(InputError):
        load_volume(b"\x01\x00")
