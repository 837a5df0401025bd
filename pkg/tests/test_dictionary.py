import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hdte.dictionary import (
    DesignMatrix,
    DictionarySpec,
    RawData,
    Term,
    build_z_design,
    expand,
    interact_groups,
    prune_collinear,
    read_csv,
    with_intercept,
)
from hdte.errors import ConfigError, DataError

from oracles import gram_rank


def raw_from(x, names=None):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    names = names or tuple(f"x{j}" for j in range(x.shape[1]))
    return RawData(np.zeros(n), np.zeros(n), np.zeros(n), x, names)


def test_identity_spec_reproduces_x(rng):
    x = rng.standard_normal((6, 3))
    raw = raw_from(x, ("a", "b", "c"))
    m = expand(raw, DictionarySpec.identity(raw.columns))
    assert m.p == 3
    np.testing.assert_array_equal(m.values, x)
    assert m.labels == ("a", "b", "c")


def test_power_two_appends_squares():
    raw = raw_from([1.0, 2.0, 3.0], ("a",))
    spec = DictionarySpec((Term("a"), Term("a", "power", k=2)))
    m = expand(raw, spec)
    np.testing.assert_array_equal(m.values[:, 1], [1.0, 4.0, 9.0])
    assert m.labels == ("a", "a^2")


def test_quadratic_spline_matches_regime_dummy_definition():
    # x, x^2, three regime dummies, then x and x^2 times each dummy
    v = np.array([-1.0, 0.5, 1.5, 0.0, 1.0])
    cuts = (0.0, 1.0)
    raw = raw_from(v, ("inc",))
    m = expand(raw, DictionarySpec((Term("inc", "quadratic_spline", cuts=cuts),)))
    expected = []
    for x in v:
        regime = sum(x >= c for c in cuts)
        dummies = [1.0 if regime == r else 0.0 for r in range(3)]
        expected.append([x, x * x] + dummies + [x * dm for dm in dummies] + [x * x * dm for dm in dummies])
    np.testing.assert_array_equal(m.values, np.array(expected))
    assert m.p == 11
    # 1.5 lies in the top regime
    row = m.values[2]
    assert row[2:5].tolist() == [0.0, 0.0, 1.0]
    assert row[7] == 1.5 and row[10] == 2.25


def test_spline_cuts_must_increase():
    with pytest.raises(ConfigError):
        Term("a", "quadratic_spline", cuts=(1.0, 1.0))
    with pytest.raises(ConfigError):
        Term("a", "power", k=0)


def test_unknown_column_and_overflow_are_named():
    raw = raw_from([1.0, 2.0], ("a",))
    with pytest.raises(ConfigError, match="'b'"):
        expand(raw, DictionarySpec((Term("b"),)))
    big = raw_from([1e200, 2.0], ("a",))
    with pytest.raises(DataError, match="a\\^2"):
        expand(big, DictionarySpec((Term("a", "power", k=2),)))


def test_interact_groups_products_and_count(rng):
    m = DesignMatrix(np.array([[1.0, 3.0], [2.0, 4.0]]), ("a", "b"))
    out = interact_groups(m, [[0], [1]])
    np.testing.assert_array_equal(out.values[:, 2], [3.0, 8.0])
    assert out.labels[2] == "a*b"
    big = DesignMatrix(rng.standard_normal((4, 12)), tuple(f"c{j}" for j in range(12)))
    out = interact_groups(big, [list(range(5)), list(range(5, 12))])
    assert out.p == 12 + 35


def test_interaction_skips_self_products():
    m = DesignMatrix(np.array([[1.0, 2.0], [3.0, 4.0]]), ("a", "b"))
    out = interact_groups(m, [[0, 1], [1]])
    assert out.labels[2:] == ("a*b",)


def test_interaction_rejects_empty_group():
    m = DesignMatrix(np.ones((2, 2)), ("a", "b"))
    with pytest.raises(ConfigError):
        interact_groups(m, [[0], []])


def test_prune_drops_duplicates_and_sums(rng):
    a, b = rng.standard_normal((2, 8))
    m = DesignMatrix(np.column_stack([a, b, a, a + b]), ("a", "b", "a2", "ab"))
    out = prune_collinear(m)
    assert out.labels == ("a", "b")
    assert out.dropped == ("a2", "ab")


def test_prune_keeps_full_rank(rng):
    A = rng.standard_normal((10, 5))
    assert gram_rank(A) == 5
    out = prune_collinear(DesignMatrix(A, tuple("abcde")))
    assert out.p == 5 and not out.dropped


def test_prune_all_zero_is_flagged():
    out = prune_collinear(DesignMatrix(np.zeros((4, 3)), ("a", "b", "c")))
    assert out.p == 0 and out.all_dropped


@given(st.integers(3, 9), st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_pruned_columns_have_full_rank(n, k, seed):
    r = np.random.default_rng(seed)
    base = r.standard_normal((n, k))
    mix = r.integers(-2, 3, size=(k, 3)).astype(float)
    A = np.column_stack([base, base @ mix])
    out = prune_collinear(DesignMatrix(A, tuple(f"c{j}" for j in range(A.shape[1]))))
    assert out.p == gram_rank(A) == np.linalg.matrix_rank(A)


def test_z_design_blocks(rng):
    F = rng.standard_normal((5, 3))
    z = np.array([1, 0, 1, 0, 0])
    m = build_z_design(DesignMatrix(F, ("a", "b", "c")), z)
    assert m.p == 6
    assert np.all(m.values[z == 1, :3] == 0)
    assert np.all(m.values[z == 0, 3:] == 0)
    with pytest.raises(DataError):
        build_z_design(DesignMatrix(F, ("a", "b", "c")), z[:4])


@given(st.integers(2, 12), st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_z_design_linear_identity(n, p, seed):
    r = np.random.default_rng(seed)
    F = r.standard_normal((n, p))
    z = r.integers(0, 2, n).astype(float)
    b0, b1 = r.standard_normal((2, p))
    Fz = build_z_design(DesignMatrix(F, tuple(f"c{j}" for j in range(p))), z).values
    np.testing.assert_allclose(Fz @ np.concatenate([b0, b1]), (1 - z) * (F @ b0) + z * (F @ b1),
                               atol=1e-12)


def test_expand_is_deterministic(rng):
    x = rng.standard_normal((20, 2))
    raw = raw_from(x, ("a", "b"))
    spec = DictionarySpec.from_dict({
        "terms": [{"column": "a", "transform": "polynomial", "k": 3},
                  {"column": "b", "transform": "indicators", "cuts": [0.0]}],
        "interactions": [{"groups": ["a", "b"]}],
    })
    m1, m2 = expand(raw, spec), expand(raw, spec)
    assert m1.values.tobytes() == m2.values.tobytes()
    assert m1.p == 3 + 2 + 6


def test_with_intercept_prepends_ones(rng):
    m = with_intercept(DesignMatrix(rng.standard_normal((3, 2)), ("a", "b")))
    assert m.labels[0] == "const" and np.all(m.values[:, 0] == 1)


def test_read_csv_roles_and_errors(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("y,d,z,a\n1.5,1,1,0.2\n0.5,0,1,-1\n2,0,0,3\n")
    raw = read_csv(p, "y", "d", "z")
    assert raw.columns == ("a",) and raw.n == 3
    np.testing.assert_array_equal(raw.z, [1, 1, 0])
    exo = read_csv(p, "y", "d", covariates=["a"])
    np.testing.assert_array_equal(exo.z, exo.d)

    bad = tmp_path / "bad.csv"
    bad.write_text("y,d,a\n1,1,2\n1,0\n")
    with pytest.raises(DataError, match="line 3"):
        read_csv(bad, "y", "d")
    miss = tmp_path / "miss.csv"
    miss.write_text("y,d,a\n1,1,2\n1,0,NA\n")
    with pytest.raises(DataError, match="missing value"):
        read_csv(miss, "y", "d")
    nonbin = tmp_path / "nb.csv"
    nonbin.write_text("y,d,a\n1,2,2\n1,0,1\n")
    with pytest.raises(DataError, match="binary"):
        read_csv(nonbin, "y", "d")


def test_spec_json_roundtrip():
    doc = {"terms": [{"column": "inc", "transform": "quadratic_spline", "cuts": [1, 2]}]}
    spec = DictionarySpec.from_json(json.dumps(doc))
    assert spec.terms[0].cuts == (1.0, 2.0)
