from fractions import Fraction

import numpy as np
import pytest

from lieflow.cartan import GradingVector, RedBlock, cartan_matrix, lattice_sites
from lieflow.flows import (
    CoefficientSpec,
    GridError,
    GridSpec,
    KField,
    UnsupportedExactModeError,
    assemble_L,
    build_K_field,
    compose_K,
    compose_field,
    mixed_log_derivative_check,
    poly_eval,
    solve_flows,
    u_matrix,
)
from lieflow.identities import GroupElement, random_unipotent, sample_rng
from lieflow.representations import build_fundamental_rep, grading_operator


def random_spec(n, grading, M, seed, degree=2):
    rng = np.random.default_rng(seed)
    base = CoefficientSpec.unit(n, GradingVector(grading), M)
    P = {k: np.round(rng.uniform(-1, 1, v.shape[:2] + (degree + 1,)), 1) for k, v in base.P.items()}
    Pbar = {k: np.round(rng.uniform(-1, 1, v.shape[:2] + (degree + 1,)), 1) for k, v in base.Pbar.items()}
    return CoefficientSpec(n, GradingVector(grading), M, P, Pbar)


def test_poly_eval_lowest_first():
    assert poly_eval(np.array([1.0, 2.0, 3.0]), 2.0) == 1 + 4 + 12


def test_zero_spec_gives_zero_generator():
    spec = CoefficientSpec.zero(3, GradingVector((0, 1, 0)))
    assert not np.any(assemble_L(spec, "+", 0.4)) and not np.any(assemble_L(spec, "-", 0.4))


def test_main_grading_generator():
    n = 3
    spec = CoefficientSpec.unit(n, GradingVector((1, 1, 1)), 1)
    L = assemble_L(spec, "+", 0.5)
    rep = build_fundamental_rep(n, 1)
    assert np.array_equal(L, sum(rep.Xp(i) for i in range(1, n + 1)))


def test_adjacent_scalar_sites_use_the_simple_generator():
    spec = CoefficientSpec.unit(2, GradingVector((1, 1)), 1)
    L = assemble_L(spec, "-", 0.0)
    rep = build_fundamental_rep(2, 1)
    assert np.array_equal(L, rep.Xm(1) + rep.Xm(2))


@pytest.mark.parametrize("grading,M", [((0, 1, 0), 1), ((0, 1, 0, 1), 2), ((1, 0, 0, 1, 1), 3)])
def test_generators_have_their_grade(grading, M):
    n = len(grading)
    c = GradingVector(grading)
    H = grading_operator(build_fundamental_rep(n, 1), cartan_matrix(n), c)
    full = random_spec(n, grading, M, 1)
    for k in range(1, M + 1):
        only = CoefficientSpec(n, c, M, {key: v for key, v in full.P.items() if key[0] == k},
                               {key: v for key, v in full.Pbar.items() if key[0] == k}).as_exact()
        t = Fraction(2, 7)
        for sign, eig in (("+", k), ("-", -k)):
            L = assemble_L(only, sign, t)
            assert np.any(L != 0)
            assert ((H.dot(L) - L.dot(H)) == eig * L).all()


def test_block_shapes_are_validated():
    c = GradingVector((0, 1, 0))
    with pytest.raises(ValueError):
        CoefficientSpec(3, c, 1, {(1, 1): np.zeros((3, 2, 1))})
    with pytest.raises(ValueError):
        CoefficientSpec(3, c, 1, {(2, 1): np.zeros((2, 2, 1))})
    with pytest.raises(ValueError):
        CoefficientSpec(3, c, 1, {(1, 1): np.zeros((2, 2, 9))})


def test_zero_spec_flows_are_identity():
    spec = CoefficientSpec.zero(3, GradingVector((0, 1, 0)))
    sol = solve_flows(spec, GridSpec(0, 1, 0, 1, 0.25, 1))
    assert np.allclose(sol.Mplus, np.eye(4)) and np.allclose(sol.Mminus, np.eye(4))


def test_a1_exact_flow():
    spec = CoefficientSpec.unit(1, GradingVector((1,)), 1)
    sol = solve_flows(spec, GridSpec(0, 1, 0, 1, 0.25, 1), "exact")
    for k, x in enumerate(GridSpec(0, 1, 0, 1, 0.25, 1).exact_nodes("x")):
        assert (sol.exact_minus[k] == np.array([[1, 0], [x, 1]], dtype=object)).all()


def test_float_and_exact_flows_agree():
    spec = random_spec(4, (0, 1, 0, 1), 2, 3)
    grid = GridSpec(0, 1, 0, 1, 0.05, 1)
    a, b = solve_flows(spec, grid), solve_flows(spec, grid, "exact")
    assert np.max(np.abs(a.Mplus - b.Mplus)) < 1e-10
    assert np.max(np.abs(a.Mminus - b.Mminus)) < 1e-10


def test_exact_mode_rejects_zero_grade_terms():
    c = GradingVector((1, 1))
    spec = CoefficientSpec(2, c, 1, A0={1: [0.5]})
    with pytest.raises(UnsupportedExactModeError):
        solve_flows(spec, GridSpec(0, 1, 0, 1, 0.5, 1), "exact")


def test_zero_grade_terms_enter_the_flow():
    c = GradingVector((1,))
    spec = CoefficientSpec(1, c, 1, A0={1: [1.0]})
    sol = solve_flows(spec, GridSpec(0, 1, 0, 1, 0.1, 1))
    # M-' = M- A0 h_1 with constant A0 integrates to exp(x h_1)
    assert np.allclose(sol.Mminus[-1], np.diag([np.e, 1 / np.e]), atol=1e-8)


def test_grid_validation():
    with pytest.raises(GridError):
        GridSpec(0, 1, 0, 1, 0.3, 1)
    with pytest.raises(GridError):
        GridSpec(0, 1, 0, 1, -0.1, 1)
    g = GridSpec(0, 1, 0, 0.5, 0.25, 3)
    assert (g.nx, g.ny) == (4, 2) and g.refined(2).h == 0.0625


def test_compose_K():
    I = np.eye(3)
    assert np.array_equal(compose_K(I, I).K.matrix, I)
    spec = random_spec(2, (1, 1), 2, 4)
    sol = solve_flows(spec, GridSpec(0, 1, 0, 1, 0.1, 1))
    kf = compose_field(sol, 0.1)
    te = compose_K(sol.Mplus[3], sol.Mminus[7])
    assert np.allclose(kf.K[7, 3], te.K.matrix)
    assert kf.hw(1)[7, 3] == pytest.approx(te.K.hw(1))
    # unipotent flows: det K = 1
    assert np.allclose(np.linalg.det(kf.K), 1)


def test_u_matrix_identity_and_determinants():
    c = GradingVector((0, 0, 1, 0))
    for site in lattice_sites(c):
        assert np.array_equal(u_matrix(GroupElement.identity(4), site), np.eye(site.dim))
    K = random_unipotent(4, sample_rng(2, 2))
    for site in lattice_sites(c):
        lo, hi = K.hw(site.m - 1), K.hw(site.b)
        assert np.linalg.det(u_matrix(K, site, "first")) == pytest.approx(lo ** site.R * hi)
        assert np.linalg.det(u_matrix(K, site, "last")) == pytest.approx(hi ** site.R * lo)


def test_u_matrix_on_a_field_matches_pointwise():
    spec = random_spec(3, (0, 1, 0), 1, 5)
    kf = build_K_field(spec, GridSpec(0, 0.5, 0, 0.5, 0.1, 1))
    site = spec.sites[0]
    grid = u_matrix(kf, site, "last")
    assert np.allclose(grid[2, 4], u_matrix(kf.at(2, 4), site, "last"))


def test_mixed_log_derivative_zero_spec():
    spec = CoefficientSpec.zero(2, GradingVector((1, 1)))
    kf = build_K_field(spec, GridSpec(0, 1, 0, 1, 0.1, 1))
    assert mixed_log_derivative_check(kf, spec, 1)["residual"] == 0


def test_mixed_log_derivative_is_second_order():
    spec = CoefficientSpec.unit(1, GradingVector((1,)), 1)
    res = []
    for h in (0.1, 0.05, 0.025):
        kf = build_K_field(spec, GridSpec(0, 1, 0, 1, h, 1))
        out = mixed_log_derivative_check(kf, spec, 1)
        step = round(0.1 / h)
        res.append(np.max(np.abs(out["grid"][step - 1::step, step - 1::step])))
    assert 3.6 < res[0] / res[1] < 4.4 and 3.6 < res[1] / res[2] < 4.4


def test_mixed_log_derivative_fine_grid():
    spec = random_spec(2, (1, 1), 2, 6)
    kf = build_K_field(spec, GridSpec(0, 1, 0, 1, 1e-3, 1))
    assert mixed_log_derivative_check(kf, spec, 1)["residual"] < 1e-6
    assert isinstance(kf, KField)
