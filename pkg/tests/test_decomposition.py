import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from karman_ci.decomposition import DIRECTIONS, Primitive, cone_margin, decompose, reconstruct
from karman_ci.errors import ConeViolation
from karman_ci.grid_fields import GridSpec, ScalarField, SymTensorField

SPEC = GridSpec(9)


def const_scalar(c):
    return ScalarField(SPEC, np.full(SPEC.shape, float(c)))


@pytest.mark.parametrize("name", ["identity", "offdiag_pos", "offdiag_neg"])
def test_decompose_matches_oracle(oracle, name):
    case = oracle["decomposition"][name]
    D = SymTensorField.constant(SPEC, *case["D"])
    prims = decompose(D)
    assert [p.index for p in prims] == [0, 1, 2, 3]
    got = [float(p.coeff.values[0, 0]) for p in prims]
    assert got == pytest.approx(case["coeffs"], abs=1e-15)
    assert np.abs(reconstruct(prims).values - D.values).max() <= 1e-14


def test_directions_are_unit_and_ordered():
    r = 2**-0.5
    assert np.allclose(DIRECTIONS, ((1.0, 0.0), (0.0, 1.0), (r, r), (r, -r)), rtol=0, atol=1e-15)
    for e in DIRECTIONS:
        assert np.hypot(*e) == pytest.approx(1.0, abs=1e-15)


def test_single_primitive_and_diagonal_pair():
    assert np.allclose(reconstruct([Primitive(0, const_scalar(4))]).values, [4, 0, 0])
    pair = reconstruct([Primitive(2, const_scalar(0.3)), Primitive(3, const_scalar(0.3))])
    assert np.abs(pair.values - [0.3, 0.0, 0.3]).max() <= 1e-15


def test_cone_violation_reports_node():
    vals = np.tile([1.0, 0.0, 1.0], SPEC.shape + (1,))
    vals[3, 5] = [1.0, 1.5, 2.0]
    with pytest.raises(ConeViolation) as exc:
        decompose(SymTensorField(SPEC, vals))
    assert exc.value.node == (3, 5)
    assert exc.value.margin == pytest.approx(-0.5)


def test_positive_definite_outside_cone_is_rejected():
    # PD (eigenvalues 0.5 +- 0.3 with d22 = 0.25) but |d12| > min(d11, d22)
    D = SymTensorField.constant(SPEC, 1.0, 0.3, 0.25)
    assert np.all(D.eigenvalues()[0] > 0)
    with pytest.raises(ConeViolation):
        decompose(D)


def test_primitive_validation():
    with pytest.raises(ValueError):
        Primitive(4, const_scalar(1))
    with pytest.raises(ValueError):
        Primitive(0, const_scalar(-1))
    assert np.allclose(Primitive(1, const_scalar(0.09)).amplitude().values, 0.3)


admissible = st.tuples(
    st.floats(0, 10, allow_nan=False), st.floats(0, 10, allow_nan=False), st.floats(-1, 1, allow_nan=False)
).map(lambda t: (t[0], t[2] * min(t[0], t[1]), t[1]))


@settings(max_examples=40, deadline=None)
@given(st.lists(admissible, min_size=81, max_size=81), st.randoms(use_true_random=False))
def test_roundtrip_nonnegative_and_local(entries, rnd):
    vals = np.array(entries).reshape(SPEC.shape + (3,))
    D = SymTensorField(SPEC, vals)
    assert np.all(cone_margin(D) >= 0)
    prims = decompose(D)
    for p in prims:
        assert np.all(p.coeff.values >= 0)
    assert np.abs(reconstruct(prims).values - vals).max() <= 1e-14 * max(1.0, np.abs(vals).max())
    perm = list(range(81))
    rnd.shuffle(perm)
    flat = vals.reshape(81, 3)[perm].reshape(vals.shape)
    prims_p = decompose(SymTensorField(SPEC, flat))
    for a, b in zip(prims, prims_p):
        assert np.array_equal(a.coeff.values.reshape(81)[perm], b.coeff.values.reshape(81))
