import numpy as np
import pytest

from gmsfem.errors import ConfigError
from gmsfem.fields import (
    CoefficientField,
    channels_field,
    checkerboard_field,
    constant_field,
    inclusions_field,
    laminate_field,
    localized_source,
    read_field,
    write_field,
)
from gmsfem.grid import build_grid


def test_constant_field():
    g = build_grid(2, 3, 4)
    k = constant_field(g, 2.5)
    assert k.values.shape == (g.n_fine_cells,)
    assert np.all(k.values == 2.5)


def test_laminate_alternates_rows():
    g = build_grid(2, 2, 4)
    k = laminate_field(g, 1.0, 100.0, period=2 * g.refine, axis=1).as_array()
    # period of two coarse cells: whole coarse rows alternate
    assert np.all(k[: g.refine] == 1.0)
    assert np.all(k[g.refine :] == 100.0)
    assert np.all(k == k[:, :1])


def test_checkerboard_pattern():
    g = build_grid(1, 1, 4)
    k = checkerboard_field(g, 1.0, 9.0, 2).as_array()
    assert k[0, 0] == 1.0 and k[0, 1] == 9.0 and k[1, 0] == 9.0 and k[1, 1] == 1.0


def test_channels_deterministic_and_exact_contrast():
    g = build_grid(10, 10, 10)
    a = channels_field(g, 1e4, seed=7)
    b = channels_field(g, 1e4, seed=7)
    c = channels_field(g, 1e4, seed=8)
    assert a.values.tobytes() == b.values.tobytes()
    assert not np.array_equal(a.values, c.values)
    assert a.contrast == 1e4


def _components(mask):
    from scipy import ndimage

    return ndimage.label(mask)


def test_channels_span_the_domain_and_are_connected():
    g = build_grid(10, 10, 10)
    k = channels_field(g, 1e4, seed=3, n_channels=2).as_array()
    lab, n = _components(k > 1)
    assert n == 2
    for c in range(1, n + 1):
        cols = np.nonzero((lab == c).any(axis=0))[0]
        assert cols.min() == 0 and cols.max() == g.Nx - 1


def test_inclusions_isolated():
    g = build_grid(5, 5, 8)
    k = inclusions_field(g, 100.0, seed=1, count=6, size=2).as_array()
    lab, n = _components(k > 1)
    assert n == 6
    assert np.all(k[0] == 1) and np.all(k[:, 0] == 1)


def test_field_file_round_trip(tmp_path):
    g = build_grid(2, 2, 3)
    k = checkerboard_field(g, 1.0, 50.0, 2)
    p = tmp_path / "k.txt"
    write_field(p, k)
    r = read_field(p, g)
    assert np.array_equal(r.values, k.values)


def test_field_file_dimension_mismatch(tmp_path):
    g = build_grid(2, 2, 3)
    p = tmp_path / "k.txt"
    write_field(p, constant_field(g, 1.0))
    with pytest.raises(ConfigError):
        read_field(p, build_grid(2, 2, 4))


@pytest.mark.parametrize("bad", [0.0, -1.0, np.inf, np.nan])
def test_rejects_nonpositive_or_nonfinite(bad):
    vals = np.ones(4)
    vals[2] = bad
    with pytest.raises(ValueError):
        CoefficientField(2, 2, vals)


def test_localized_source_support():
    g = build_grid(4, 4, 5)
    f = localized_source(g, (0.5, 0.5), 0.1, 3.0)
    x = g.fine_coords
    inside = np.max(np.abs(x - 0.5), axis=1) <= 0.1 + 1e-12
    assert np.all(f[inside] == 3.0) and np.all(f[~inside] == 0.0)
