"""Dual spring system of a part constellation and its energy minimizers.

A constellation posterior is represented as a 2D spring system: dynamic
nodes (part positions) are tied to each other by springs with a nominal
length, and to fixed anchor nodes (visual best matches) by zero-length
springs. Its energy is

    E = 1/2 sum_i k_i |x_i - a_i|^2 + sum_(i,j) k_ij (mu_ij - |x_i - x_j|)^2

Two minimizers are provided. :func:`solve_ida` splits the 2D system into
two 1D linear systems that are solved in closed form and re-assembled,
iterating until the nodes stop moving. :func:`solve_cgd` is a plain
nonlinear conjugate-gradient reference on the same energy.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

__all__ = [
    "SolverError",
    "SpringSystem",
    "SolveReport",
    "energy",
    "energy_gradient",
    "spring_constants",
    "build_connectivity",
    "signed_lengths",
    "solve_1d",
    "solve_ida",
    "solve_cgd",
    "generate_random_system",
]

_FALLBACK_DIRECTION = np.full(2, np.sqrt(0.5))


class SolverError(RuntimeError):
    """Raised when a spring system cannot be brought to equilibrium."""

    def __init__(self, message, nodes=()):
        super().__init__(message)
        self.nodes = tuple(int(n) for n in nodes)


@dataclass(frozen=True, eq=False)
class SpringSystem:
    """Dynamic nodes, anchors and the springs between them.

    ``dynamic_springs`` is an ``(S, 2)`` array of dynamic node index pairs
    with matching ``dynamic_stiffness`` and ``nominal_lengths``;
    ``static_springs`` is an ``(T, 2)`` array of (dynamic index, anchor
    index) pairs with ``static_stiffness``. Static springs have zero rest
    length.
    """

    dynamic_positions: np.ndarray
    anchor_positions: np.ndarray
    dynamic_springs: np.ndarray
    dynamic_stiffness: np.ndarray
    nominal_lengths: np.ndarray
    static_springs: np.ndarray
    static_stiffness: np.ndarray

    def __post_init__(self):
        conv = {
            "dynamic_positions": (float, (-1, 2)),
            "anchor_positions": (float, (-1, 2)),
            "dynamic_springs": (int, (-1, 2)),
            "dynamic_stiffness": (float, (-1,)),
            "nominal_lengths": (float, (-1,)),
            "static_springs": (int, (-1, 2)),
            "static_stiffness": (float, (-1,)),
        }
        for name, (dtype, shape) in conv.items():
            arr = np.array(getattr(self, name), dtype=dtype).reshape(shape)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        self._validate()

    def _validate(self):
        n_dyn, n_stat = self.n_dynamic, self.n_anchors
        ds, ss = self.dynamic_springs, self.static_springs
        if len(self.dynamic_stiffness) != len(ds) or len(self.nominal_lengths) != len(ds):
            raise ValueError("dynamic spring attributes have inconsistent lengths")
        if len(self.static_stiffness) != len(ss):
            raise ValueError("static spring attributes have inconsistent lengths")
        if np.any(self.dynamic_stiffness < 0) or np.any(self.static_stiffness < 0):
            raise ValueError("stiffness must be non-negative")
        if np.any(self.nominal_lengths < 0):
            raise ValueError("nominal lengths must be non-negative")
        if len(ds):
            if ds.min() < 0 or ds.max() >= n_dyn:
                raise ValueError("dynamic spring references an invalid node")
            if np.any(ds[:, 0] == ds[:, 1]):
                raise ValueError("dynamic spring connects a node to itself")
            pairs = np.sort(ds, axis=1)
            if len(np.unique(pairs, axis=0)) != len(pairs):
                raise ValueError("duplicate dynamic spring")
        if len(ss):
            if ss[:, 0].min() < 0 or ss[:, 0].max() >= n_dyn:
                raise ValueError("static spring references an invalid dynamic node")
            if ss[:, 1].min() < 0 or ss[:, 1].max() >= n_stat:
                raise ValueError("static spring references an invalid anchor")
        touched = np.zeros(n_dyn, dtype=bool)
        touched[ds.ravel()] = True
        touched[ss[:, 0]] = True
        if not touched.all():
            raise ValueError(f"dynamic nodes without springs: {np.flatnonzero(~touched).tolist()}")
        if not (np.isfinite(self.dynamic_positions).all() and np.isfinite(self.anchor_positions).all()):
            raise ValueError("node positions must be finite")

    @cached_property
    def _ends(self):
        # contiguous endpoint index arrays of the dynamic springs
        return np.ascontiguousarray(self.dynamic_springs[:, 0]), np.ascontiguousarray(self.dynamic_springs[:, 1])

    @property
    def n_dynamic(self):
        return len(self.dynamic_positions)

    @property
    def n_anchors(self):
        return len(self.anchor_positions)

    @property
    def n_springs(self):
        return len(self.dynamic_springs) + len(self.static_springs)

    def with_positions(self, positions):
        """Copy of the system with the dynamic nodes moved to ``positions``."""
        return SpringSystem(
            positions,
            self.anchor_positions,
            self.dynamic_springs,
            self.dynamic_stiffness,
            self.nominal_lengths,
            self.static_springs,
            self.static_stiffness,
        )

    def translated(self, offset):
        """Copy with every node (dynamic and anchor) shifted by ``offset``."""
        offset = np.asarray(offset, dtype=float)
        moved = self.with_positions(self.dynamic_positions + offset)
        return SpringSystem(
            moved.dynamic_positions,
            self.anchor_positions + offset,
            self.dynamic_springs,
            self.dynamic_stiffness,
            self.nominal_lengths,
            self.static_springs,
            self.static_stiffness,
        )


@dataclass
class SolveReport:
    final_positions: np.ndarray
    iterations: int
    initial_energy: float
    final_energy: float
    converged: bool
    wall_time: float
    energy_trace: list = field(default_factory=list)


def _positions(system, positions):
    return system.dynamic_positions if positions is None else np.asarray(positions, dtype=float)


def energy(system, positions=None):
    """Spring energy of ``system``, optionally at other dynamic ``positions``."""
    x = _positions(system, positions)
    ss = system.static_springs
    d_stat = np.take(x, ss[:, 0], axis=0) - np.take(system.anchor_positions, ss[:, 1], axis=0)
    i, j = system._ends
    # np.take is much faster than fancy row indexing on small arrays
    d_dyn = np.take(x, i, axis=0) - np.take(x, j, axis=0)
    stretch = system.nominal_lengths - np.sqrt(np.einsum("ij,ij->i", d_dyn, d_dyn))
    return float(
        0.5 * np.dot(system.static_stiffness, np.einsum("ij,ij->i", d_stat, d_stat))
        + np.dot(system.dynamic_stiffness, stretch * stretch)
    )


def energy_gradient(system, positions=None):
    """Analytic gradient of :func:`energy` w.r.t. the dynamic positions, shape ``(N, 2)``.

    A dynamic spring whose endpoints coincide contributes zero (the
    subgradient with the smallest norm).
    """
    x = _positions(system, positions)
    ss = system.static_springs
    i, j = system._ends
    d_dyn = np.take(x, i, axis=0) - np.take(x, j, axis=0)
    norm = np.sqrt(np.einsum("ij,ij->i", d_dyn, d_dyn))
    safe = np.where(norm > 0, norm, 1.0)
    coef = np.where(norm > 0, 2.0 * system.dynamic_stiffness * (1.0 - system.nominal_lengths / safe), 0.0)
    push = coef[:, None] * d_dyn
    pull = system.static_stiffness[:, None] * (
        np.take(x, ss[:, 0], axis=0) - np.take(system.anchor_positions, ss[:, 1], axis=0)
    )
    n = len(x)
    grad = np.empty_like(x)
    for axis in range(2):
        grad[:, axis] = (
            np.bincount(i, push[:, axis], minlength=n)
            - np.bincount(j, push[:, axis], minlength=n)
            + np.bincount(ss[:, 0], pull[:, axis], minlength=n)
        )
    return grad


def spring_constants(system):
    """Diagonal of the linear-force stiffness matrix, dynamic springs first.

    The energy weights the dynamic terms without the 1/2 factor, so their
    linear force constant is ``2 k_ij``; with this choice the node forces
    of the 1D systems are exactly the negative energy gradient.
    """
    return np.concatenate([2.0 * system.dynamic_stiffness, system.static_stiffness])


def build_connectivity(system):
    """Signed incidence matrix B, ``(n_springs, n_dynamic + n_anchors)``.

    Rows are the dynamic springs followed by the static springs; columns
    are the dynamic nodes followed by the anchors. Each row holds +1 at the
    first endpoint and -1 at the second.
    """
    n_dyn = system.n_dynamic
    ds, ss = system.dynamic_springs, system.static_springs
    first = np.concatenate([ds[:, 0], ss[:, 0]])
    second = np.concatenate([ds[:, 1], n_dyn + ss[:, 1]])
    n_cols = n_dyn + system.n_anchors
    if len(first) and (max(first.max(), second.max()) >= n_cols or min(first.min(), second.min()) < 0):
        raise ValueError("spring references a node outside the system")
    B = np.zeros((len(first), n_cols))
    rows = np.arange(len(first))
    B[rows, first] = 1.0
    B[rows, second] = -1.0
    return B


class _Linear1D:
    """Blocks of the per-axis equilibrium system, shared by both axes.

    Holds the factorized dynamic block of B^T K B, the dynamic/static
    coupling block and the dynamic rows of B^T K. The block relating the
    anchors to each other never enters the closed form and is not built.
    """

    def __init__(self, system):
        n_dyn = system.n_dynamic
        B = build_connectivity(system)
        k = spring_constants(system)
        C = B.T * k
        K_hat_top = C[:n_dyn] @ B
        self.K_dyn = K_hat_top[:, :n_dyn]
        self.K_stat = K_hat_top[:, n_dyn:]
        self.C_dyn = C[:n_dyn]
        self.n_dynamic_springs = len(system.dynamic_springs)
        _check_anchored(system)
        try:
            self.factor = cho_factor(self.K_dyn)
        except LinAlgError as exc:
            raise SolverError("dynamic stiffness block is singular", range(n_dyn)) from exc

    def solve(self, rhs_const, L):
        """Closed-form dynamic positions for spring lengths ``L`` (one column per axis)."""
        rhs = self.C_dyn @ L - rhs_const
        return cho_solve(self.factor, rhs)


def _check_anchored(system):
    # Each group of nodes joined by springs of positive stiffness needs at
    # least one positive static spring, else its position is undetermined.
    n_dyn = system.n_dynamic
    ds = system.dynamic_springs[system.dynamic_stiffness > 0]
    graph = coo_matrix((np.ones(len(ds)), (ds[:, 0], ds[:, 1])), shape=(n_dyn, n_dyn))
    _, labels = connected_components(graph, directed=False)
    anchored = np.zeros(labels.max() + 1 if n_dyn else 0, dtype=bool)
    pinned = system.static_springs[system.static_stiffness > 0, 0]
    anchored[labels[pinned]] = True
    loose = np.flatnonzero(~anchored[labels])
    if len(loose):
        raise SolverError(
            f"singular dynamic stiffness block: nodes {loose.tolist()} are not tied to any anchor",
            loose,
        )


def _directions(system, x, previous=None):
    ds = system.dynamic_springs
    diff = x[ds[:, 0]] - x[ds[:, 1]]
    norm = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    u = np.empty_like(diff)
    ok = norm > 1e-12
    u[ok] = diff[ok] / norm[ok, None]
    if previous is None:
        u[~ok] = _FALLBACK_DIRECTION
    else:
        u[~ok] = previous[~ok]
    return u


def signed_lengths(system, positions=None, previous_directions=None):
    """Per-axis signed nominal lengths, shape ``(n_springs, 2)``.

    Each dynamic spring's rest length is laid along the current direction
    between its endpoints, so the axis components keep the full 2D length.
    Static springs have zero rest length. Coincident endpoints reuse
    ``previous_directions`` or fall back to the diagonal.
    """
    x = _positions(system, positions)
    u = _directions(system, x, previous_directions)
    L = np.zeros((system.n_springs, 2))
    L[: len(u)] = system.nominal_lengths[:, None] * u
    return L


def solve_1d(anchors_1d, system, lengths_1d):
    """Equilibrium of one axis of ``system`` given spring lengths for that axis.

    Returns the dynamic node coordinates solving
    ``K_dyn x = C_dyn L - K_stat x_stat``.
    """
    lin = _Linear1D(system)
    anchors_1d = np.asarray(anchors_1d, dtype=float)
    return lin.solve(lin.K_stat @ anchors_1d, np.asarray(lengths_1d, dtype=float))


def solve_ida(system, tol=1e-3, max_iter=100):
    """Minimize the spring energy by alternating closed-form 1D solves.

    Stops once no dynamic node moves by more than ``tol`` between two
    iterations, or after ``max_iter`` iterations.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    start = time.perf_counter()
    lin = _Linear1D(system)
    # both constant terms are fixed for the whole solve
    stat_term = lin.K_stat @ system.anchor_positions
    n_ds = lin.n_dynamic_springs

    x = system.dynamic_positions.copy()
    e0 = energy(system, x)
    trace = [e0]
    u = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        u = _directions(system, x, u)
        L = np.zeros((system.n_springs, 2))
        L[:n_ds] = system.nominal_lengths[:, None] * u
        # both axes in one call: the columns never interact
        x_new = lin.solve(stat_term, L)
        if not np.isfinite(x_new).all():
            raise SolverError("non-finite node positions", np.flatnonzero(~np.isfinite(x_new).all(axis=1)))
        step = np.max(np.linalg.norm(x_new - x, axis=1)) if len(x) else 0.0
        x = x_new
        trace.append(energy(system, x))
        if step < tol:
            converged = True
            break
    return SolveReport(
        final_positions=x,
        iterations=it,
        initial_energy=e0,
        final_energy=trace[-1],
        converged=converged,
        wall_time=time.perf_counter() - start,
        energy_trace=trace,
    )


def _line_search(system, x, fx, g, p, alpha0, c1=1e-4, max_halvings=60):
    slope = float(np.vdot(g, p))
    alpha = alpha0
    for _ in range(max_halvings):
        x_new = x + alpha * p
        f_new = energy(system, x_new)
        if f_new <= fx + c1 * alpha * slope:
            return alpha, x_new, f_new
        alpha *= 0.5
    return 0.0, x, fx


def solve_cgd(system, tol=1e-3, max_iter=5000):
    """Minimize the spring energy by Polak-Ribiere nonlinear conjugate gradient.

    The first trial step of each line search is a secant estimate of the
    1D minimizer along the search direction; Armijo backtracking by
    halving then enforces sufficient decrease. The direction is reset to
    steepest descent whenever it stops being a descent direction. Stops
    when the gradient infinity-norm drops below ``tol``.
    """
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter at least 1")
    start = time.perf_counter()
    x = system.dynamic_positions.copy()
    fx = energy(system, x)
    e0 = fx
    trace = [fx]
    g = energy_gradient(system, x)
    if not np.isfinite(g).all():
        raise SolverError("non-finite gradient")
    p = -g
    converged = bool(np.max(np.abs(g), initial=0.0) < tol)
    it = 0
    while not converged and it < max_iter:
        it += 1
        slope = float(np.vdot(g, p))
        if slope >= 0:
            p = -g
            slope = -float(np.vdot(g, g))
        p_norm = np.sqrt(np.vdot(p, p))
        eps = 1e-7 / p_norm
        curvature = float(np.vdot(energy_gradient(system, x + eps * p) - g, p)) / eps
        alpha0 = -slope / curvature if curvature > 0 else 1.0 / p_norm
        alpha, x_new, f_new = _line_search(system, x, fx, g, p, alpha0)
        if alpha == 0.0:
            break
        g_new = energy_gradient(system, x_new)
        if not np.isfinite(g_new).all():
            raise SolverError("non-finite gradient")
        beta = max(0.0, float(np.vdot(g_new, g_new - g)) / float(np.vdot(g, g)))
        p = -g_new + beta * p
        x, fx, g = x_new, f_new, g_new
        trace.append(fx)
        converged = bool(np.max(np.abs(g)) < tol)
    return SolveReport(
        final_positions=x,
        iterations=it,
        initial_energy=e0,
        final_energy=fx,
        converged=converged,
        wall_time=time.perf_counter() - start,
        energy_trace=trace,
    )


def generate_random_system(n_dyn, seed, sigma=0.1):
    """Random fully-connected benchmark system on the unit square.

    Rest positions are uniform in ``[0, 1]^2``; dynamic nodes start at the
    rest positions displaced by ``U([-0.5, 0.5]^2)`` and each anchor sits
    at its displaced node plus ``U([-0.25, 0.25]^2)``. Dynamic springs have
    the rest distance as nominal length and stiffness ``(sigma * mu)^-2``;
    static stiffness is ``1/2 + u * mean(k_dyn)`` with ``u ~ U([0, 1])``.
    ``seed`` may be anything accepted by :func:`numpy.random.default_rng`.
    """
    if n_dyn < 2:
        raise ValueError("a random spring system needs at least two dynamic nodes")
    rng = np.random.default_rng(seed)
    rest = rng.uniform(0.0, 1.0, size=(n_dyn, 2))
    nodes = rest + rng.uniform(-0.5, 0.5, size=(n_dyn, 2))
    anchors = nodes + rng.uniform(-0.25, 0.25, size=(n_dyn, 2))
    i, j = np.triu_indices(n_dyn, k=1)
    mu = np.linalg.norm(rest[i] - rest[j], axis=1)
    k_dyn = (sigma * mu) ** -2.0
    k_stat = 0.5 + rng.uniform(0.0, 1.0, size=n_dyn) * k_dyn.mean()
    idx = np.arange(n_dyn)
    return SpringSystem(
        dynamic_positions=nodes,
        anchor_positions=anchors,
        dynamic_springs=np.column_stack([i, j]),
        dynamic_stiffness=k_dyn,
        nominal_lengths=mu,
        static_springs=np.column_stack([idx, idx]),
        static_stiffness=k_stat,
    )
