import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from ganshield.errors import SynthesisError
from ganshield.grid import default_test_system
from ganshield.lqr import (
    care_residual,
    control_attacked,
    control_nominal,
    control_resilient,
    load_design,
    lqr_gain,
    save_design,
    solve_care,
    solve_lyapunov,
    spectral_abscissa,
    synthesize_lqr,
    wide_area_weights,
)


def test_scalar_closed_form():
    A = np.array([[0.0]])
    B = np.array([[1.0]])
    Q = np.array([[1.0]])
    R = np.array([[1.0]])
    P = solve_care(A, B, Q, R)
    assert P[0, 0] == pytest.approx(1.0, abs=1e-10)
    K = lqr_gain(P, B, R)
    assert K[0, 0] == pytest.approx(1.0, abs=1e-10)


def test_stable_system_zero_state_cost():
    P = solve_care(np.array([[-1.0]]), np.array([[1.0]]), np.zeros((1, 1)), np.eye(1))
    assert abs(P[0, 0]) < 1e-12


def test_zero_input_matrix_gives_zero_gain():
    A = np.array([[-1.0, 0.2], [0.0, -2.0]])
    B = np.zeros((2, 1))
    P = solve_care(A, B, np.eye(2), np.eye(1))
    K = lqr_gain(P, B, np.eye(1))
    np.testing.assert_array_equal(K, np.zeros((1, 2)))


def test_scaling_R_scales_scalar_gain():
    A = np.array([[0.0]])
    B = np.array([[1.0]])
    Q = np.array([[1.0]])
    K1 = lqr_gain(solve_care(A, B, Q, np.array([[1.0]])), B, np.array([[1.0]]))
    K4 = lqr_gain(solve_care(A, B, Q, np.array([[4.0]])), B, np.array([[4.0]]))
    # scalar CARE with R=c: P = sqrt(c), K = P/c = 1/sqrt(c)
    assert K4[0, 0] == pytest.approx(K1[0, 0] / 2.0, abs=1e-9)


def test_lyapunov_solver_against_scipy():
    rng = np.random.default_rng(3)
    F = rng.normal(size=(5, 5)) - 3.0 * np.eye(5)
    S = rng.normal(size=(5, 5))
    S = S @ S.T
    P = solve_lyapunov(F, S)
    ref = scipy.linalg.solve_lyapunov(F.T, -S)
    np.testing.assert_allclose(P, ref, atol=1e-9)


def test_random_stable_systems_meet_residual_bound():
    rng = np.random.default_rng(17)
    for _ in range(5):
        A = rng.normal(size=(6, 6)) - 4.0 * np.eye(6)
        B = rng.normal(size=(6, 2))
        P = solve_care(A, B, np.eye(6), np.eye(2))
        res = care_residual(A, B, np.eye(6), np.eye(2), P)
        assert res <= 1e-8 * (1.0 + np.linalg.norm(P, "fro"))
        K = lqr_gain(P, B, np.eye(2))
        assert spectral_abscissa(A - B @ K) < 0
        ref = scipy.linalg.solve_continuous_are(A, B, np.eye(6), np.eye(2))
        np.testing.assert_allclose(P, ref, rtol=1e-7, atol=1e-9)


def test_unstable_system_is_stabilized():
    # double integrator
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    P = solve_care(A, B, np.eye(2), np.eye(1))
    K = lqr_gain(P, B, np.eye(1))
    assert spectral_abscissa(A - B @ K) < 0
    ref = scipy.linalg.solve_continuous_are(A, B, np.eye(2), np.eye(1))
    np.testing.assert_allclose(P, ref, rtol=1e-8, atol=1e-10)


def test_stabilizable_but_uncontrollable_pair():
    A = np.diag([-1.0, 1.0])
    B = np.array([[0.0], [1.0]])
    P = solve_care(A, B, np.eye(2), np.eye(1))
    K = lqr_gain(P, B, np.eye(1))
    assert spectral_abscissa(A - B @ K) < 0


def test_nonstabilizable_pair_raises():
    A = np.diag([1.0, 2.0])
    B = np.array([[0.0], [0.0]])
    with pytest.raises(SynthesisError):
        solve_care(A, B, np.eye(2), np.eye(1))


def test_asymmetric_weights_rejected():
    A = np.array([[-1.0]])
    B = np.array([[1.0]])
    with pytest.raises(ValueError):
        solve_care(
            np.array([[-1.0, 0.0], [0.0, -1.0]]),
            np.eye(2),
            np.array([[1.0, 0.3], [0.0, 1.0]]),
            np.eye(2),
        )
    with pytest.raises(ValueError):
        solve_care(A, B, np.eye(1), np.array([[0.0]]))
    with pytest.raises(ValueError):
        solve_care(A, B, np.array([[-1.0]]), np.eye(1))


def test_default_system_design():
    m = default_test_system()
    design = synthesize_lqr(m.A, m.B)
    assert design.residual <= 1e-8 * (1.0 + np.linalg.norm(design.P, "fro"))
    assert np.max(design.closed_loop_eigs.real) < 0
    assert design.K.shape == (m.n_gen, m.n_x)


def test_control_nominal_at_equilibrium_is_zero():
    K_row = np.array([1.0, 2.0, -0.5])
    x_o = np.array([0.1, 0.2, 0.3])
    assert control_nominal(K_row, x_o.copy(), x_o) == 0.0


def test_control_nominal_arithmetic_example():
    K_row = np.array([1.0, 2.0])
    x_o = np.zeros(2)
    x = np.array([0.5, -0.25])
    assert control_nominal(K_row, x, x_o) == pytest.approx(0.0)


def test_control_matches_dot_product_oracle():
    rng = np.random.default_rng(8)
    for _ in range(10):
        K_row = rng.normal(size=6)
        x = rng.normal(size=6)
        x_o = rng.normal(size=6)
        want = -float(sum(K_row[i] * (x[i] - x_o[i]) for i in range(6)))
        assert abs(control_nominal(K_row, x, x_o) - want) < 1e-12


def test_attacked_with_no_attack_equals_nominal():
    rng = np.random.default_rng(9)
    K_row = rng.normal(size=4)
    x = rng.normal(size=4)
    x_o = rng.normal(size=4)
    assert control_attacked(K_row, x, x_o) == control_nominal(K_row, x, x_o)


def test_attacked_bias_enters_linearly():
    rng = np.random.default_rng(10)
    K_row = rng.normal(size=6)
    x = rng.normal(size=6)
    x_o = rng.normal(size=6)
    bias = np.zeros(6)
    bias[2:4] = 0.12
    diff = control_attacked(K_row, x + bias, x_o) - control_nominal(K_row, x, x_o)
    assert diff == pytest.approx(-float(K_row[2:4] @ bias[2:4]), abs=1e-12)


def test_resilient_on_spliced_vector():
    rng = np.random.default_rng(11)
    K_row = rng.normal(size=4)
    x = rng.normal(size=4)
    z = rng.normal(size=4)
    x_o = rng.normal(size=4)
    mask = np.array([1.0, 0.0, 1.0, 0.0])
    spliced = mask * x + (1 - mask) * z
    # independent splice oracle, element by element
    want = np.array([x[0], z[1], x[2], z[3]])
    np.testing.assert_array_equal(spliced, want)
    assert control_resilient(K_row, spliced, x_o) == control_nominal(K_row, spliced, x_o)
    all_attacked = control_resilient(K_row, z, x_o)
    assert all_attacked == pytest.approx(-float(K_row @ (z - x_o)), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(alpha=st.floats(0.0, 1.0), seed=st.integers(0, 100))
def test_control_laws_are_affine(alpha, seed):
    rng = np.random.default_rng(seed)
    K_row = rng.normal(size=5)
    x1, x2 = rng.normal(size=5), rng.normal(size=5)
    x_o = rng.normal(size=5)
    mixed = control_nominal(K_row, alpha * x1 + (1 - alpha) * x2, x_o)
    parts = alpha * control_nominal(K_row, x1, x_o) + (1 - alpha) * control_nominal(
        K_row, x2, x_o
    )
    assert mixed == pytest.approx(parts, abs=1e-9)


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        control_nominal(np.ones(3), np.ones(4), np.ones(3))


def test_design_file_roundtrip(tmp_path):
    m = default_test_system()
    design = synthesize_lqr(m.A, m.B)
    p = tmp_path / "design.json"
    save_design(design, p)
    back = load_design(p)
    np.testing.assert_array_equal(back.K, design.K)
    np.testing.assert_array_equal(back.P, design.P)
    assert back.residual == design.residual
    save_design(back, tmp_path / "design2.json")
    assert p.read_bytes() == (tmp_path / "design2.json").read_bytes()


def test_wide_area_weights_couple_the_gain():
    m = default_test_system()
    edges = [(0, 1), (1, 2), (2, 3), (3, 0)]
    Q = wide_area_weights(m.n_gen, edges)
    # symmetric PSD with the promised structure
    np.testing.assert_allclose(Q, Q.T)
    assert np.all(np.linalg.eigvalsh(Q) > 0)
    design = synthesize_lqr(m.A, m.B, Q=Q, R=0.1 * np.eye(m.n_gen))
    K = design.K
    # every controller leans on at least one remote angle
    for i in range(m.n_gen):
        remote = [abs(K[i, 2 * j]) for j in range(m.n_gen) if j != i]
        assert max(remote) > 0.1
    # diagonal weighting, by contrast, leaves remote gains near zero
    local = synthesize_lqr(m.A, m.B).K
    for i in range(m.n_gen):
        remote = [abs(local[i, 2 * j]) for j in range(m.n_gen) if j != i]
        assert max(remote) < 0.05


def test_wide_area_weights_validate_edges():
    with pytest.raises(ValueError):
        wide_area_weights(3, [(0, 3)])
    with pytest.raises(ValueError):
        wide_area_weights(3, [(1, 1)])
    with pytest.raises(ValueError):
        wide_area_weights(0, [])
