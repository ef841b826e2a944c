"""Backward stochastic difference equations, system operators, and the
brute-force quadratic oracle.

Under the two-point noise the admissible control set is a finite-dimensional
Euclidean space (one m-vector per information atom per time), so the cost is
literally a quadratic form J(t,x;u) = u^T M u + 2 b^T u + c over stacked
control coordinates. This module materializes that form by simulating the
zero-state response of every basis coordinate once and accumulating
probability-weighted Gram products, minimizes it by pseudo-inverse, and
provides the backward-equation machinery (adjoint operators, first-order
stationarity residual, decoupling residual) used to cross-check the Riccati
route. Everything here is exact up to floating point — no sampling.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ResourceLimitError, ValidationError
from .linalg import PINV_RTOL, PSD_TOL, pinv, range_residual, symmetrize
from .model import (
    AdaptedProcess,
    FeedbackPolicy,
    OpenLoopPolicy,
    Policy,
    ProblemData,
    ScenarioTree,
    Trajectory,
    block_mean,
    build_tree,
    ensure_valid,
    expand,
    measurable_level,
    rollout,
    trajectory_cost,
    zero_policy,
)

#: Default cap on the stacked-control dimension for oracle assembly.
STACKED_DIM_CAP = 4096


# ---------------------------------------------------------------------------
# Backward equation

def _driver_values(tree: ScenarioTree, driver, n: int) -> list[np.ndarray]:
    t, N = tree.start, tree.end
    if driver is None:
        return [np.zeros((tree.n_nodes(k), n)) for k in range(t, N)]
    if isinstance(driver, AdaptedProcess):
        if driver.first != t or driver.last < N - 1:
            raise ValidationError("driver must cover times t..N-1")
        vals = [driver.at(k) for k in range(t, N)]
    else:
        vals = [np.atleast_2d(np.asarray(v, dtype=float)) for v in driver]
        if len(vals) != N - t:
            raise ValidationError(f"driver must have {N - t} entries, got {len(vals)}")
    for k, v in zip(range(t, N), vals):
        if v.shape != (tree.n_nodes(k), n):
            raise ValidationError(
                f"driver at time {k} must have shape {(tree.n_nodes(k), n)}, got {v.shape}"
            )
    return vals


def solve_bsde(tree: ScenarioTree, problem: ProblemData, terminal,
               driver=None) -> AdaptedProcess:
    """Solve V_k = A_k^T E_k[V_{k+1}] + C_k^T E_k[V_{k+1} w_k] + driver_k
    backward from V_N = terminal.

    On the binary tree E_k[.] is the mean of the two children and
    E_k[. w_k] their signed half-difference, both exact. `terminal` is one
    row per leaf (a single row is broadcast); `driver` covers t..N-1 at full
    resolution, or None for zero.
    """
    t, N, n = tree.start, tree.end, problem.n
    eta = np.atleast_2d(np.asarray(terminal, dtype=float))
    if eta.shape == (1, n) and tree.n_nodes(N) > 1:
        eta = np.tile(eta, (tree.n_nodes(N), 1))
    if eta.shape != (tree.n_nodes(N), n):
        raise ValidationError(
            f"terminal must have shape {(tree.n_nodes(N), n)}, got {eta.shape}"
        )
    xi = _driver_values(tree, driver, n)

    values: list[np.ndarray] = [np.empty(0)] * (N - t + 1)
    values[N - t] = eta
    V = eta
    for k in range(N - 1, t - 1, -1):
        mean = 0.5 * (V[0::2] + V[1::2])
        half_diff = 0.5 * (V[0::2] - V[1::2])
        V = mean @ problem.A[k] + half_diff @ problem.C[k] + xi[k - t]
        values[k - t] = V
    return AdaptedProcess(tree=tree, first=t, values=tuple(values))


# ---------------------------------------------------------------------------
# System operators and adjoints

def state_response(problem: ProblemData, tree: ScenarioTree, x) -> Trajectory:
    """Homogeneous trajectory X^{x,0} (zero control) from the root."""
    return rollout(problem, tree, x, zero_policy(problem, tree.start))


def control_response(problem: ProblemData, tree: ScenarioTree, u: Policy) -> Trajectory:
    """Zero-state trajectory X^{0,u} from the root."""
    return rollout(problem, tree, np.zeros(problem.n), u)


def _adjoint_controls(problem: ProblemData, tree: ScenarioTree,
                      V: AdaptedProcess) -> tuple[np.ndarray, ...]:
    """The control-space projections B_k^T E_s[V_{k+1}] + D_k^T E_s[V_{k+1} w_k]
    at information level s = max(t, k-d), one coarse array per k."""
    t = tree.start
    out = []
    for k in range(t, tree.end):
        s = measurable_level(t, problem.d, k)
        Vn = V.at(k + 1)
        ev = block_mean(Vn, k + 1 - s)
        evw = block_mean(0.5 * (Vn[0::2] - Vn[1::2]), k - s)
        out.append(ev @ problem.B[k] + evw @ problem.D[k])
    return tuple(out)


def adjoint_state(problem: ProblemData, tree: ScenarioTree, xi) -> np.ndarray:
    """Adjoint of the homogeneous state map applied to a process xi on t..N-1."""
    V = solve_bsde(tree, problem, terminal=np.zeros(problem.n), driver=xi)
    return V.at(tree.start)[0]


def adjoint_control(problem: ProblemData, tree: ScenarioTree, xi) -> tuple[np.ndarray, ...]:
    """Adjoint of the zero-state control-to-state map applied to xi."""
    V = solve_bsde(tree, problem, terminal=np.zeros(problem.n), driver=xi)
    return _adjoint_controls(problem, tree, V)


def adjoint_terminal_state(problem: ProblemData, tree: ScenarioTree, eta) -> np.ndarray:
    """Adjoint of x -> X_N applied to terminal data eta."""
    V = solve_bsde(tree, problem, terminal=eta, driver=None)
    return V.at(tree.start)[0]


def adjoint_terminal_control(problem: ProblemData, tree: ScenarioTree,
                             eta) -> tuple[np.ndarray, ...]:
    """Adjoint of u -> X_N applied to terminal data eta."""
    V = solve_bsde(tree, problem, terminal=eta, driver=None)
    return _adjoint_controls(problem, tree, V)


def apply_operators(tree: ScenarioTree, problem: ProblemData, t: int,
                    x=None, u: Policy | None = None, xi=None, eta=None) -> dict:
    """Evaluate the four system operators and/or their adjoints.

    Forward (from x and/or u): the state block over t..N-1 and the terminal
    state. Adjoint (from a state-process xi and/or terminal eta): the initial
    covector and the coarse control-space process.
    """
    if tree.start != t:
        raise ValidationError(f"tree is rooted at {tree.start}, not {t}")
    out: dict = {}
    if x is not None:
        traj = state_response(problem, tree, x)
        out["homogeneous_states"] = traj.states
        out["homogeneous_terminal"] = traj.states.at(tree.end)
    if u is not None:
        traj = control_response(problem, tree, u)
        out["forced_states"] = traj.states
        out["forced_terminal"] = traj.states.at(tree.end)
    if xi is not None:
        out["state_adjoint"] = adjoint_state(problem, tree, xi)
        out["control_adjoint"] = adjoint_control(problem, tree, xi)
    if eta is not None:
        out["terminal_state_adjoint"] = adjoint_terminal_state(problem, tree, eta)
        out["terminal_control_adjoint"] = adjoint_terminal_control(problem, tree, eta)
    return out


def process_inner(values_a: Sequence[np.ndarray], values_b: Sequence[np.ndarray]) -> float:
    """Sum over time of E[<a_k, b_k>] for node arrays at matching resolution
    (uniform node probabilities make each expectation a plain row mean)."""
    total = 0.0
    for a, b in zip(values_a, values_b, strict=True):
        if a.shape != b.shape:
            raise ValidationError(f"inner product shape mismatch: {a.shape} vs {b.shape}")
        total += float(np.mean(np.sum(a * b, axis=1)))
    return total


def terminal_inner(a: np.ndarray, b: np.ndarray) -> float:
    """E[<a, b>] for two terminal node arrays."""
    return process_inner([a], [b])


# ---------------------------------------------------------------------------
# Stacked controls and the quadratic form

@dataclass(frozen=True)
class StackedControlLayout:
    """Index map between admissible controls and flat coordinate vectors.

    Coordinate order: time-major, then information atom, then control
    component; the control at time k lives on 2^(max(t,k-d) - t) atoms.
    """

    t: int
    N: int
    d: int
    m: int
    atoms: tuple[int, ...]
    offsets: tuple[int, ...]
    size: int

    @classmethod
    def build(cls, problem: ProblemData, t: int) -> "StackedControlLayout":
        atoms, offsets = [], []
        size = 0
        for k in range(t, problem.N):
            s = measurable_level(t, problem.d, k)
            offsets.append(size)
            atoms.append(1 << (s - t))
            size += atoms[-1] * problem.m
        return cls(t=t, N=problem.N, d=problem.d, m=problem.m,
                   atoms=tuple(atoms), offsets=tuple(offsets), size=size)

    def offset(self, k: int, atom: int) -> int:
        j = k - self.t
        if not 0 <= j < len(self.offsets):
            raise ValidationError(f"time {k} outside [{self.t}, {self.N - 1}]")
        if not 0 <= atom < self.atoms[j]:
            raise ValidationError(f"atom {atom} out of range at time {k}")
        return self.offsets[j] + atom * self.m

    def stack(self, policy: OpenLoopPolicy) -> np.ndarray:
        if policy.start != self.t or len(policy.controls) != self.N - self.t:
            raise ValidationError("policy does not span t..N-1")
        vec = np.empty(self.size)
        for j, u in enumerate(policy.controls):
            if u.shape != (self.atoms[j], self.m):
                raise ValidationError(
                    f"control at time {self.t + j} must have shape "
                    f"{(self.atoms[j], self.m)}, got {u.shape}"
                )
            vec[self.offsets[j]:self.offsets[j] + u.size] = u.ravel()
        return vec

    def unstack(self, vec) -> OpenLoopPolicy:
        vec = np.asarray(vec, dtype=float).reshape(-1)
        if vec.shape != (self.size,):
            raise ValidationError(f"vector must have length {self.size}, got {vec.shape}")
        controls = []
        for j in range(self.N - self.t):
            chunk = vec[self.offsets[j]:self.offsets[j] + self.atoms[j] * self.m]
            controls.append(chunk.reshape(self.atoms[j], self.m))
        return OpenLoopPolicy(t=self.t, d=self.d, controls=controls)


@dataclass(frozen=True)
class QuadraticForm:
    """J(t,x;u) = u^T M u + 2 b^T u + c over stacked control coordinates."""

    M: np.ndarray
    b: np.ndarray
    c: float
    layout: StackedControlLayout

    def evaluate(self, vec) -> float:
        vec = np.asarray(vec, dtype=float).reshape(-1)
        return float(vec @ self.M @ vec + 2.0 * (self.b @ vec) + self.c)


def assemble_quadratic(problem: ProblemData, t: int, x,
                       tree: ScenarioTree | None = None,
                       dim_cap: int = STACKED_DIM_CAP) -> QuadraticForm:
    """Materialize the cost as an explicit quadratic form.

    One joint forward sweep carries the homogeneous response to x and the
    zero-state response of every stacked basis control; at each time the
    Q-weighted (and finally G-weighted) Gram products accumulate into M, the
    cross products with the homogeneous response into b, and the homogeneous
    cost into c. The R-blocks of M are added analytically (controls at
    different times never meet through R). Identical to evaluating J on
    basis controls and polarizing, but with one simulation per coordinate.
    """
    ensure_valid(problem)
    if not 0 <= t <= problem.N - 1:
        raise ValidationError(f"t={t} must satisfy 0 <= t <= N-1 = {problem.N - 1}")
    layout = StackedControlLayout.build(problem, t)
    if layout.size > dim_cap:
        raise ResourceLimitError(
            f"stacked-control dimension {layout.size} exceeds cap {dim_cap}"
        )
    if tree is None:
        tree = build_tree(t, problem.N)
    elif tree.start != t or tree.end != problem.N:
        raise ValidationError("tree must span t..N")

    n, m, dim = problem.n, problem.m, layout.size
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (n,):
        raise ValidationError(f"initial state must have length {n}, got {x.shape}")

    M = np.zeros((dim, dim))
    b = np.zeros(dim)
    c = 0.0
    X0 = x[None, :]                      # homogeneous response, (nodes, n)
    S = np.zeros((dim, 1, n))            # basis responses, (dim, nodes, n)

    def accumulate(weight_mat: np.ndarray, prob: float) -> None:
        nonlocal c
        WX0 = X0 @ weight_mat
        Sf = S.reshape(dim, -1)
        M_part = (S @ weight_mat).reshape(dim, -1) @ Sf.T
        M[...] += prob * M_part
        b[...] += prob * (Sf @ WX0.ravel())
        c += prob * float(np.sum(WX0 * X0))

    for k in range(t, problem.N):
        nodes = tree.n_nodes(k)
        accumulate(problem.Q[k], 1.0 / nodes)

        j = k - t
        atoms = layout.atoms[j]
        off = layout.offsets[j]
        prob_atom = 1.0 / atoms
        for a in range(atoms):
            sl = slice(off + a * m, off + (a + 1) * m)
            M[sl, sl] += prob_atom * problem.R[k]

        # Basis controls acting now: coordinate (k, atom a, component i) is
        # e_i on every node descending from atom a.
        U = np.zeros((dim, nodes, m))
        span = nodes // atoms
        for a in range(atoms):
            for i in range(m):
                U[off + a * m + i, a * span:(a + 1) * span, i] = 1.0

        drift = S @ problem.A[k].T + U @ problem.B[k].T
        diff = S @ problem.C[k].T + U @ problem.D[k].T
        S_next = np.empty((dim, 2 * nodes, n))
        S_next[:, 0::2] = drift + diff
        S_next[:, 1::2] = drift - diff
        S = S_next

        drift0 = X0 @ problem.A[k].T
        diff0 = X0 @ problem.C[k].T
        X0_next = np.empty((2 * nodes, n))
        X0_next[0::2] = drift0 + diff0
        X0_next[1::2] = drift0 - diff0
        X0 = X0_next

    accumulate(problem.G, 1.0 / tree.n_nodes(problem.N))
    return QuadraticForm(M=symmetrize(M), b=b, c=c, layout=layout)


@dataclass(frozen=True)
class OracleOutcome:
    """Result of globally minimizing the stacked quadratic form."""

    bounded: bool
    value: float | None
    minimizer: np.ndarray | None
    reason: str

    @property
    def status(self) -> str:
        return "Bounded" if self.bounded else "Unbounded"


def oracle_minimize(q: QuadraticForm, psd_tol: float = PSD_TOL,
                    pinv_rtol: float = PINV_RTOL) -> OracleOutcome:
    """Global infimum of u^T M u + 2 b^T u + c.

    Bounded with value c - b^T M^+ b at minimizer -M^+ b iff M is PSD and b
    lies in the range of M; otherwise the form runs to minus infinity along
    a negative eigenvector or along kernel directions with linear descent.
    """
    vals = np.linalg.eigvalsh(symmetrize(q.M))
    scale = max(1.0, float(np.max(np.abs(vals))) if vals.size else 0.0)
    if vals.size and vals[0] < -psd_tol * scale:
        return OracleOutcome(
            bounded=False, value=None, minimizer=None,
            reason=f"quadratic term has negative eigenvalue {vals[0]:.3e}",
        )
    if range_residual(q.b[:, None], q.M, pinv_rtol) > psd_tol:
        return OracleOutcome(
            bounded=False, value=None, minimizer=None,
            reason="linear term has a component outside the range of the quadratic term",
        )
    Mdag = pinv(q.M, pinv_rtol)
    minimizer = -(Mdag @ q.b)
    value = q.c - float(q.b @ Mdag @ q.b)
    return OracleOutcome(bounded=True, value=value, minimizer=minimizer, reason="")


def oracle_cost(problem: ProblemData, t: int, x, vec,
                tree: ScenarioTree | None = None) -> float:
    """Exact cost of a stacked control vector (direct simulation)."""
    if tree is None:
        tree = build_tree(t, problem.N)
    layout = StackedControlLayout.build(problem, t)
    policy = layout.unstack(vec)
    return trajectory_cost(problem, rollout(problem, tree, x, policy))


# ---------------------------------------------------------------------------
# First-order optimality and decoupling

def _costate(problem: ProblemData, tree: ScenarioTree, traj: Trajectory) -> AdaptedProcess:
    """Backward costate driven by Q_k X_k with terminal G X_N."""
    driver = [traj.states.at(k) @ problem.Q[k] for k in range(tree.start, tree.end)]
    terminal = traj.states.at(tree.end) @ problem.G
    return solve_bsde(tree, problem, terminal=terminal, driver=driver)


def stationary_residual(problem: ProblemData, t: int, x, u: Policy,
                        tree: ScenarioTree | None = None) -> float:
    """Max norm over times and information atoms of the first-order condition
    R_k u_k + B_k^T E_{k-d}[Z_{k+1}] + D_k^T E_{k-d}[Z_{k+1} w_k], where Z is
    the costate of the trajectory under u. Zero (to tolerance) iff u is a
    stationary point of the cost."""
    if tree is None:
        tree = build_tree(t, problem.N)
    traj = rollout(problem, tree, x, u)
    Z = _costate(problem, tree, traj)
    worst = 0.0
    for k in range(t, problem.N):
        s = measurable_level(t, problem.d, k)
        Zn = Z.at(k + 1)
        ez = block_mean(Zn, k + 1 - s)
        ezw = block_mean(0.5 * (Zn[0::2] - Zn[1::2]), k - s)
        rows = traj.control_at(k) @ problem.R[k] + ez @ problem.B[k] + ezw @ problem.D[k]
        worst = max(worst, float(np.max(np.linalg.norm(rows, axis=1))))
    return worst


def decoupling_residual(problem: ProblemData, t: int, x, sol,
                        tree: ScenarioTree | None = None) -> float:
    """On the optimal trajectory, max deviation of the costate Z_k from the
    layered representation sum_i P^(i)_k E_{k-i}[X_k] (indices 0..min(k-t,d))."""
    if tree is None:
        tree = build_tree(t, problem.N)
    policy = FeedbackPolicy(t=sol.t, d=sol.d, gains=sol.K)
    traj = rollout(problem, tree, x, policy)
    Z = _costate(problem, tree, traj)
    worst = 0.0
    for k in range(t, problem.N + 1):
        X = traj.states.at(k)
        predicted = np.zeros_like(X)
        for i in range(min(k - t, sol.d) + 1):
            lagged = expand(block_mean(X, i), i)
            predicted += lagged @ sol.P_at(i, k)
        rows = Z.at(k) - predicted
        worst = max(worst, float(np.max(np.linalg.norm(rows, axis=1))))
    return worst


@dataclass(frozen=True)
class FixedPairCheck:
    """Outcome of probing the initial-pair range condition: `sufficient` is
    the step-wise Ran(H_k) ⊂ Ran(W_k) test (a proof when true); `falsified`
    reports whether any sampled admissible control drove H_k E_{k-d}[X_k]
    out of the range of W_k. A pass is "not falsified", never a proof."""

    sufficient: bool
    falsified: bool
    worst_violation: float
    samples: int


def fixed_pair_check(problem: ProblemData, t: int, x, sol,
                     tree: ScenarioTree | None = None, samples: int = 200,
                     seed: int = 0, tol: float = PSD_TOL) -> FixedPairCheck:
    """Probe whether H_k E_{k-d}[X_k] stays in Ran(W_k) along closed-loop
    trajectories fed by random extra inputs (the quantifier runs over all
    admissible inputs, so sampling can only falsify)."""
    if tree is None:
        tree = build_tree(t, problem.N)
    sufficient = all(
        range_residual(sol.H[j], sol.W[j]) <= tol for j in range(len(sol.W))
    )
    projectors = [
        np.eye(problem.m) - sol.W[j] @ pinv(sol.W[j]) for j in range(len(sol.W))
    ]
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=float).reshape(-1)
    worst = 0.0
    for _ in range(samples):
        extra = [rng.standard_normal((1 << (measurable_level(t, problem.d, k) - t),
                                      problem.m)) for k in range(t, problem.N)]
        X = x[None, :]
        for k in range(t, problem.N):
            s = measurable_level(t, problem.d, k)
            ex = block_mean(X, k - s)
            hx = ex @ sol.H[k - t].T
            out_of_range = hx @ projectors[k - t].T
            scale = max(1.0, float(np.max(np.abs(hx))))
            worst = max(worst, float(np.max(np.abs(out_of_range))) / scale)
            u = ex @ sol.K[k - t].T + extra[k - t]
            u_full = expand(u, k - s)
            drift = X @ problem.A[k].T + u_full @ problem.B[k].T
            diff = X @ problem.C[k].T + u_full @ problem.D[k].T
            nxt = np.empty((2 * X.shape[0], problem.n))
            nxt[0::2] = drift + diff
            nxt[1::2] = drift - diff
            X = nxt
    return FixedPairCheck(sufficient=sufficient, falsified=worst > tol,
                          worst_violation=worst, samples=samples)


def first_variation_inner(problem: ProblemData, t: int, traj: Trajectory,
                          Z: AdaptedProcess, v: OpenLoopPolicy,
                          tree: ScenarioTree) -> float:
    """sum_k E[(R_k u_k + B_k^T Z_{k+1} + D_k^T Z_{k+1} w_k)^T v_k]: the
    first-order term in the cost expansion around u in direction v."""
    total = 0.0
    for k in range(t, problem.N):
        s = measurable_level(t, problem.d, k)
        Zn = Z.at(k + 1)
        w = tree.step_noise(k)
        grad = (
            expand(traj.control_at(k) @ problem.R[k], k + 1 - s)
            + Zn @ problem.B[k]
            + (Zn * w[:, None]) @ problem.D[k]
        )
        v_full = expand(v.controls[k - v.start], k + 1 - s)
        total += float(np.mean(np.sum(grad * v_full, axis=1)))
    return total


def cost_difference_residual(problem: ProblemData, t: int, x,
                             u: OpenLoopPolicy, v: OpenLoopPolicy, lam: float,
                             tree: ScenarioTree | None = None) -> float:
    """Absolute defect of the exact second-order expansion
    J(t,x;u+lam*v) - J(t,x;u) = lam^2 J(t,0;v) + 2 lam <gradient, v>."""
    if tree is None:
        tree = build_tree(t, problem.N)
    traj_u = rollout(problem, tree, x, u)
    Z = _costate(problem, tree, traj_u)
    shifted = OpenLoopPolicy(
        t=t, d=problem.d,
        controls=[a + lam * b for a, b in zip(u.controls, v.controls, strict=True)],
    )
    lhs = trajectory_cost(problem, rollout(problem, tree, x, shifted)) \
        - trajectory_cost(problem, traj_u)
    rhs = lam * lam * trajectory_cost(problem, rollout(problem, tree, np.zeros(problem.n), v)) \
        + 2.0 * lam * first_variation_inner(problem, t, traj_u, Z, v, tree)
    return abs(lhs - rhs)
