import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dptrack.springs import (
    SolverError,
    SpringSystem,
    build_connectivity,
    energy,
    energy_gradient,
    generate_random_system,
    signed_lengths,
    solve_1d,
    solve_cgd,
    solve_ida,
    spring_constants,
)


def chain(k_stat=(1.0, 0.0, 1.0)):
    # three nodes on a line, two springs, anchors at the nodes' rest spots
    return SpringSystem(
        dynamic_positions=[[0.0, 0.0], [1.0, 0.2], [2.1, 0.0]],
        anchor_positions=[[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]],
        dynamic_springs=[[0, 1], [1, 2]],
        dynamic_stiffness=[2.0, 3.0],
        nominal_lengths=[1.0, 1.0],
        static_springs=[[0, 0], [1, 1], [2, 2]],
        static_stiffness=k_stat,
    )


def energy_by_loops(system, x):
    total = 0.0
    for (i, a), k in zip(system.static_springs, system.static_stiffness):
        total += 0.5 * k * np.sum((x[i] - system.anchor_positions[a]) ** 2)
    for (i, j), k, mu in zip(system.dynamic_springs, system.dynamic_stiffness, system.nominal_lengths):
        total += k * (mu - np.linalg.norm(x[i] - x[j])) ** 2
    return total


def numeric_gradient(system, x, h=1e-6):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (energy(system, xp) - energy(system, xm)) / (2 * h)
    return g


def one_axis_oracle(system, anchors_1d, lengths_1d):
    """Minimizer of the 1D quadratic built by explicit loops."""
    n = system.n_dynamic
    H = np.zeros((n, n))
    b = np.zeros(n)
    for s, ((i, j), k) in enumerate(zip(system.dynamic_springs, system.dynamic_stiffness)):
        # k (x_i - x_j - L)^2
        H[i, i] += 2 * k
        H[j, j] += 2 * k
        H[i, j] -= 2 * k
        H[j, i] -= 2 * k
        b[i] += 2 * k * lengths_1d[s]
        b[j] -= 2 * k * lengths_1d[s]
    for (i, a), k in zip(system.static_springs, system.static_stiffness):
        # 1/2 k (x_i - a)^2
        H[i, i] += k
        b[i] += k * anchors_1d[a]
    return np.linalg.solve(H, b)


class TestSpringSystem:
    def test_rejects_negative_stiffness(self):
        with pytest.raises(ValueError):
            SpringSystem([[0, 0], [1, 0]], [[0, 0]], [[0, 1]], [-1.0], [1.0], [[0, 0]], [1.0])

    def test_rejects_bad_index(self):
        with pytest.raises(ValueError):
            SpringSystem([[0, 0], [1, 0]], [[0, 0]], [[0, 2]], [1.0], [1.0], [[0, 0]], [1.0])

    def test_rejects_self_loop_and_duplicates(self):
        with pytest.raises(ValueError):
            SpringSystem([[0, 0], [1, 0]], [[0, 0]], [[1, 1]], [1.0], [1.0], [[0, 0]], [1.0])
        with pytest.raises(ValueError):
            SpringSystem([[0, 0], [1, 0]], [[0, 0]], [[0, 1], [1, 0]], [1.0, 1.0], [1.0, 1.0], [[0, 0]], [1.0])

    def test_rejects_isolated_node(self):
        with pytest.raises(ValueError, match="without springs"):
            SpringSystem([[0, 0], [1, 0], [5, 5]], [[0, 0]], [[0, 1]], [1.0], [1.0], [[0, 0]], [1.0])

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            SpringSystem([[0, np.nan], [1, 0]], [[0, 0]], [[0, 1]], [1.0], [1.0], [[0, 0]], [1.0])

    def test_arrays_are_read_only(self):
        s = chain()
        with pytest.raises(ValueError):
            s.dynamic_positions[0, 0] = 5.0


class TestEnergy:
    def test_single_static_spring(self):
        s = SpringSystem([[3.0, 4.0], [0.0, 0.0]], [[0.0, 0.0]], [[0, 1]], [0.0], [1.0], [[0, 0]], [2.0])
        # 1/2 * 2 * 25
        assert energy(s) == pytest.approx(25.0)

    def test_single_dynamic_spring_has_no_half(self):
        s = SpringSystem([[0.0, 0.0], [3.0, 0.0]], [[0.0, 0.0]], [[0, 1]], [2.0], [1.0], [[0, 0]], [0.0])
        assert energy(s) == pytest.approx(2.0 * (1.0 - 3.0) ** 2)

    def test_matches_loop_summation(self):
        for seed in range(5):
            s = generate_random_system(6, seed)
            x = s.dynamic_positions + np.random.default_rng(seed).normal(size=s.dynamic_positions.shape)
            assert energy(s, x) == pytest.approx(energy_by_loops(s, x), rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        for seed in range(5):
            s = generate_random_system(5, seed)
            x = s.dynamic_positions
            np.testing.assert_allclose(energy_gradient(s, x), numeric_gradient(s, x), rtol=1e-5, atol=1e-5)

    def test_gradient_of_coincident_endpoints_is_finite(self):
        s = SpringSystem([[1.0, 1.0], [1.0, 1.0]], [[0, 0], [2, 2]], [[0, 1]], [1.0], [1.0], [[0, 0], [1, 1]], [1.0, 1.0])
        g = energy_gradient(s)
        assert np.isfinite(g).all()


class TestConnectivity:
    def test_rows_have_one_plus_and_one_minus(self):
        s = generate_random_system(4, 0)
        B = build_connectivity(s)
        assert B.shape == (s.n_springs, s.n_dynamic + s.n_anchors)
        np.testing.assert_array_equal(B.sum(axis=1), 0.0)
        np.testing.assert_array_equal(np.abs(B).sum(axis=1), 2.0)

    def test_static_rows_point_at_anchor_columns(self):
        s = chain()
        B = build_connectivity(s)
        for r, (i, a) in enumerate(s.static_springs, start=len(s.dynamic_springs)):
            assert B[r, i] == 1.0 and B[r, s.n_dynamic + a] == -1.0

    def test_linear_forces_equal_negative_gradient_at_fixed_directions(self):
        # with L laid along current directions, -B^T K (B x - L) restricted to
        # dynamic nodes is the negative energy gradient
        s = generate_random_system(5, 3)
        B = build_connectivity(s)
        K = np.diag(spring_constants(s))
        L = signed_lengths(s)
        X = np.vstack([s.dynamic_positions, s.anchor_positions])
        forces = -(B.T @ K @ (B @ X - L))[: s.n_dynamic]
        np.testing.assert_allclose(forces, -energy_gradient(s), rtol=1e-9, atol=1e-9)


class TestSolve1D:
    def test_matches_dense_oracle(self):
        for seed in range(5):
            s = generate_random_system(6, seed)
            L = signed_lengths(s)
            for axis in range(2):
                got = solve_1d(s.anchor_positions[:, axis], s, L[:, axis])
                want = one_axis_oracle(s, s.anchor_positions[:, axis], L[:, axis])
                np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-9)

    def test_unanchored_component_raises(self):
        s = SpringSystem(
            [[0, 0], [1, 0], [5, 0], [6, 0]],
            [[0, 0]],
            [[0, 1], [2, 3]],
            [1.0, 1.0],
            [1.0, 1.0],
            [[0, 0]],
            [1.0],
        )
        with pytest.raises(SolverError) as info:
            solve_ida(s)
        assert set(info.value.nodes) == {2, 3}


class TestIDA:
    def test_free_parts_land_on_anchors(self):
        # zero dynamic stiffness decouples the nodes
        s = SpringSystem(
            [[0, 0], [1, 1], [2, 0]],
            [[0.5, 0.2], [1.2, 0.9], [2.3, -0.4]],
            [[0, 1], [1, 2]],
            [0.0, 0.0],
            [1.0, 1.0],
            [[0, 0], [1, 1], [2, 2]],
            [1.0, 2.0, 3.0],
        )
        rep = solve_ida(s)
        np.testing.assert_allclose(rep.final_positions, s.anchor_positions, atol=1e-12)

    def test_converged_point_is_stationary(self):
        for seed in range(5):
            s = generate_random_system(8, seed)
            rep = solve_ida(s, tol=1e-10, max_iter=20000)
            assert rep.converged
            scale = max(s.dynamic_stiffness.max(), s.static_stiffness.max())
            assert np.max(np.abs(energy_gradient(s, rep.final_positions))) < 1e-6 * scale

    def test_default_stop_meets_equilibrium_certificate(self):
        # gradient inf-norm at the output within 10 * tol * max stiffness
        tol = 1e-3
        for seed in range(20):
            s = generate_random_system(8, seed)
            rep = solve_ida(s, tol=tol)
            if not rep.converged:
                continue
            scale = max(s.dynamic_stiffness.max(), s.static_stiffness.max())
            assert np.max(np.abs(energy_gradient(s, rep.final_positions))) <= 10 * tol * scale

    def test_energy_trace_is_monotone(self):
        for seed in range(10):
            rep = solve_ida(generate_random_system(8, seed))
            assert np.all(np.diff(rep.energy_trace) <= 1e-9 * max(rep.energy_trace[0], 1.0))

    def test_translation_equivariance(self):
        s = generate_random_system(6, 11)
        offset = np.array([3.5, -7.25])
        a = solve_ida(s, tol=1e-9, max_iter=5000).final_positions
        b = solve_ida(s.translated(offset), tol=1e-9, max_iter=5000).final_positions
        np.testing.assert_allclose(b, a + offset, atol=1e-7)

    def test_rejects_bad_arguments(self):
        with pytest.raises(ValueError):
            solve_ida(chain(), tol=0)
        with pytest.raises(ValueError):
            solve_ida(chain(), max_iter=0)

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 10), seed=st.integers(0, 2**31 - 1))
    def test_never_increases_energy(self, n, seed):
        s = generate_random_system(n, seed)
        rep = solve_ida(s)
        assert rep.final_energy <= rep.initial_energy * (1 + 1e-12)
        assert np.isfinite(rep.final_positions).all()


class TestCGD:
    def test_reaches_gradient_tolerance(self):
        s = generate_random_system(8, 2)
        rep = solve_cgd(s, tol=1e-4)
        assert rep.converged
        assert np.max(np.abs(energy_gradient(s, rep.final_positions))) < 1e-4

    def test_zero_iterations_at_minimum(self):
        s = generate_random_system(4, 5)
        x = solve_cgd(s, tol=1e-9).final_positions
        rep = solve_cgd(s.with_positions(x), tol=1e-6)
        assert rep.iterations == 0

    def test_agrees_with_ida_on_simple_chain(self):
        s = chain()
        a = solve_ida(s, tol=1e-10, max_iter=10000)
        b = solve_cgd(s, tol=1e-9)
        # the minimum is zero: both ends anchored, the middle node free
        assert a.final_energy < 1e-6 and b.final_energy < 1e-6

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(2, 8), seed=st.integers(0, 2**31 - 1))
    def test_energy_decreases(self, n, seed):
        rep = solve_cgd(generate_random_system(n, seed))
        assert rep.final_energy <= rep.initial_energy
        assert np.all(np.diff(rep.energy_trace) <= 0)


class TestGenerator:
    def test_deterministic(self):
        a, b = generate_random_system(5, 42), generate_random_system(5, 42)
        np.testing.assert_array_equal(a.dynamic_positions, b.dynamic_positions)
        np.testing.assert_array_equal(a.static_stiffness, b.static_stiffness)

    def test_complete_graph(self):
        s = generate_random_system(6, 0)
        assert len(s.dynamic_springs) == 15
        assert len(s.static_springs) == 6

    def test_too_small(self):
        with pytest.raises(ValueError):
            generate_random_system(1, 0)
