import math

import numpy as np
import pytest

from lossforge.genome import loss
from lossforge.losses import (
    BUILTIN_NAMES, GROUPS, binary_phenotype, builtin, builtins, curve_rows,
    difference_surface, grid_axis, grid_peak, grid_rows, group_phenotypes,
    parse_loss_name, signed_values, surface,
)


def test_sixteen_builtins():
    losses = builtins()
    assert len(losses) == 16
    assert [l.name for l in losses] == list(BUILTIN_NAMES)


def test_lookup_is_case_insensitive():
    assert builtin('ce').genome == builtin('CE').genome
    assert builtin('ce').name == 'CE'


def test_unknown_builtin():
    with pytest.raises(KeyError):
        builtin('Z9')
    with pytest.raises(ValueError):
        builtin('R1', ratio_log='natural')


@pytest.mark.parametrize('ratio_log', ['ratio', 'split'])
@pytest.mark.parametrize('name', BUILTIN_NAMES)
def test_closed_form_matches_genome(name, ratio_log):
    b = builtin(name, ratio_log)
    axis = grid_axis(101, 1e-3)
    y, yhat = np.meshgrid(axis, axis, indexing='ij')
    np.testing.assert_allclose(
        signed_values(b, y, yhat), b.closed_form(y, yhat),
        rtol=1e-9, atol=1e-12,
    )


def test_split_ratio_changes_only_r1_and_r2():
    for name in BUILTIN_NAMES:
        same = builtin(name, 'ratio').genome == builtin(name, 'split').genome
        assert same == (name not in ('R1', 'R2'))


def test_ce_example():
    value = loss(builtin('CE').genome, np.ones(1), np.full(1, math.exp(-1)))
    assert value == pytest.approx(1.0, abs=1e-6)


def test_a2_example():
    assert loss(builtin('A2').genome, np.ones(1), np.ones(1)) == \
        pytest.approx(1.0, abs=1e-6)


def test_m1_at_perfect_prediction():
    y = np.array([0.0, 0.3, 1.0])
    np.testing.assert_allclose(signed_values('M1', y, y), math.log(2.0))


def test_binary_phenotype_shape():
    curve = binary_phenotype('CE')
    assert curve.yhat.shape == curve.raw.shape == (101,)
    assert curve.yhat[0] == pytest.approx(1e-3)
    assert curve.yhat[-1] == pytest.approx(1.0 - 1e-3)
    assert curve.normalized.min() == 0.0
    assert curve.normalized.max() == 1.0
    assert not curve.constant
    # CE falls as the prediction approaches the label.
    assert np.argmax(curve.raw) == 0


def test_r0_grows_with_confidence():
    curve = binary_phenotype('R0')
    assert np.argmax(curve.raw) == len(curve.raw) - 1


def test_constant_phenotype(constant_genome):
    with pytest.warns(UserWarning):
        curve = binary_phenotype(constant_genome)
    assert curve.constant
    np.testing.assert_array_equal(curve.normalized, np.zeros(101))


def test_surface_orientation():
    grid = surface('CE', samples=11)
    assert grid.raw.shape == (11, 11)
    # raw[i, j] is at y[i], yhat[j]; CE is zero wherever y is (nearly) zero.
    assert np.all(np.abs(grid.raw[0]) < 1e-5)
    assert grid.raw[-1, 0] == grid.raw.max()


def test_difference_with_itself_is_zero():
    grid = difference_surface('A2', 'A2', samples=21)
    np.testing.assert_array_equal(grid.raw, np.zeros((21, 21)))


def test_a2_minus_ce_peak():
    peak = grid_peak(difference_surface('A2', 'CE'))
    assert peak.yhat < 0.05
    assert peak.y > 0.95
    assert abs(peak.value - 0.188) <= 0.06


def test_group_phenotypes():
    curves = group_phenotypes('r')
    assert list(curves) == list(GROUPS['R']) + ['CE']
    with pytest.raises(KeyError):
        group_phenotypes('Q')


def test_rows():
    rows = list(curve_rows(binary_phenotype('M1', samples=5)))
    assert len(rows) == 5
    assert all(row[0] == 1.0 for row in rows)
    rows = list(grid_rows(surface('M1', samples=4)))
    assert len(rows) == 16
    assert rows[1][0] == rows[0][0]
    assert rows[1][1] > rows[0][1]


def test_grid_axis_needs_two_samples():
    with pytest.raises(ValueError):
        grid_axis(1, 1e-3)


@pytest.mark.parametrize('text, name, alpha', [
    ('A2', 'A2', 0.0),
    ('ce_0.1', 'CE', 0.1),
    ('A2_0.10', 'A2', 0.1),
    (' M1_.05 ', 'M1', 0.05),
])
def test_parse_loss_name(text, name, alpha):
    b, a = parse_loss_name(text)
    assert b.name == name
    assert a == pytest.approx(alpha)


@pytest.mark.parametrize('text, error', [
    ('A2_1.5', ValueError),
    ('A2-0.1', KeyError),
    ('Q7', KeyError),
])
def test_parse_bad_loss_name(text, error):
    with pytest.raises(error):
        parse_loss_name(text)


@pytest.mark.parametrize('name', ['A0', 'A1', 'A2'])
def test_a_group_vanishes_where_the_label_is_zero(name):
    yhat = grid_axis(101, 1e-3)
    y = np.zeros_like(yhat)
    values = signed_values(name, y, yhat)
    np.testing.assert_array_equal(values, 0.0)
    np.testing.assert_array_equal(builtin(name).closed_form(y, yhat), 0.0)
