"""Backward solution of the coupled Riccati-like recursions under delay.

With a d-step input delay the single Riccati recursion splits into d+1
coupled matrices P^(0)..P^(d). At time k only the indices 0..min(k-t, d) are
defined, and the recursion changes shape at the region boundary k = t+d:

* k >= t+d: all d+1 indices; the top one is P^(d)_k = -H_k^T W_k^+ H_k.
* t < k < t+d: indices 0..k-t; the top one absorbs an extra propagation
  term, P^(k-t)_k = A_k^T P^(k+1-t)_{k+1} A_k - H_k^T W_k^+ H_k.
* k = t: only P^(0), which absorbs the -H^T W^+ H fold-in directly.

Both boundary pieces, the W_k/H_k summation-limit switch at k = t+d
(limit min(k+1-t, d)), and short horizons N - t <= d are handled by one
loop over the top index r_k = min(k-t, d); empty regions skip naturally.
The same module provides the single-region variant (all indices defined at
every time, used as a cross-check), the delay-free specialization, gain
extraction, value evaluation, solvability classification, and JSON
round-tripping of solutions.

Solutions store only the defined (i, k) pairs; reading an undefined pair is
an error rather than a silent zero, since zero-filling would mask indexing
mistakes in the piecewise structure.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UnsolvableError, ValidationError
from .linalg import (
    PINV_RTOL,
    PSD_TOL,
    is_pd,
    is_psd,
    pinv,
    range_residual,
    symmetrize,
)
from .model import FeedbackPolicy, ProblemData, ensure_valid

UNIQUELY_SOLVABLE = "UniquelySolvable"
SOLVABLE_ALL_PAIRS = "SolvableAllPairs"
CONVEX_CANDIDATE = "ConvexCandidate"
NOT_CONVEX = "NotConvex"

#: Order of decreasing strength, for "at least as strong as" comparisons.
CLASSIFICATION_ORDER = (NOT_CONVEX, CONVEX_CANDIDATE, SOLVABLE_ALL_PAIRS, UNIQUELY_SOLVABLE)


def classification_rank(classification: str) -> int:
    try:
        return CLASSIFICATION_ORDER.index(classification)
    except ValueError:
        raise ValidationError(f"unknown classification {classification!r}") from None


@dataclass(frozen=True)
class RiccatiSolution:
    """Output of the backward pass.

    P maps (i, k) to a symmetric n x n matrix for the defined pairs only;
    W/H/K are indexed by k - t for k = t..N-1. `delayed` is False when the
    solution came from the delay-free route (d = 0), where only P^(0) exists.
    `single_region` marks the variant that carries every index 0..d at every
    time (solve_riccati_bar); the piecewise form tops out at min(k - t, d).
    """

    t: int
    N: int
    d: int
    n: int
    m: int
    P: dict[tuple[int, int], np.ndarray]
    W: tuple[np.ndarray, ...]
    H: tuple[np.ndarray, ...]
    K: tuple[np.ndarray, ...]
    delayed: bool = True
    single_region: bool = False

    def top_index(self, k: int) -> int:
        self._check_time(k, self.N)
        if self.single_region:
            return self.d
        return min(k - self.t, self.d)

    def P_at(self, i: int, k: int) -> np.ndarray:
        try:
            return self.P[(i, k)]
        except KeyError:
            raise ValidationError(
                f"P^({i})_{k} is not defined (defined indices at time {k}: "
                f"0..{min(k - self.t, self.d)})"
            ) from None

    def P_sum(self, k: int) -> np.ndarray:
        """Sum of all defined P^(i)_k; the value-function weight at time k."""
        total = np.zeros((self.n, self.n))
        for i in range(self.top_index(k) + 1):
            total = total + self.P_at(i, k)
        return total

    def W_at(self, k: int) -> np.ndarray:
        self._check_time(k, self.N - 1)
        return self.W[k - self.t]

    def H_at(self, k: int) -> np.ndarray:
        self._check_time(k, self.N - 1)
        return self.H[k - self.t]

    def K_at(self, k: int) -> np.ndarray:
        self._check_time(k, self.N - 1)
        return self.K[k - self.t]

    def _check_time(self, k: int, last: int) -> None:
        if not self.t <= k <= last:
            raise ValidationError(f"time {k} outside solution range [{self.t}, {last}]")


def _wh_from_next(problem: ProblemData, t: int, P: dict, k: int,
                  limit: int) -> tuple[np.ndarray, np.ndarray]:
    """W_k and H_k from the stored next-time matrices, with the given
    summation limit (min(k+1-t, d) in the piecewise system, d in the
    single-region one)."""
    A, B = problem.A[k], problem.B[k]
    C, D = problem.C[k], problem.D[k]
    Psum = np.zeros((problem.n, problem.n))
    for i in range(limit + 1):
        Psum = Psum + P[(i, k + 1)]
    P0 = P[(0, k + 1)]
    W = symmetrize(problem.R[k] + B.T @ Psum @ B + D.T @ P0 @ D)
    H = B.T @ Psum @ A + D.T @ P0 @ C
    return W, H


def recompute_wh(problem: ProblemData, sol: RiccatiSolution, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Re-derive W_k, H_k from the stored P matrices (consistency check)."""
    limit = min(k + 1 - sol.t, sol.d) if sol.delayed else 0
    return _wh_from_next(problem, sol.t, sol.P, k, limit)


def _check_solve_args(problem: ProblemData, t: int) -> None:
    ensure_valid(problem)
    if not 0 <= t <= problem.N - 1:
        raise ValidationError(f"initial time t={t} must satisfy 0 <= t <= N-1 = {problem.N - 1}")


def solve_riccati(problem: ProblemData, t: int,
                  pinv_rtol: float = PINV_RTOL) -> RiccatiSolution:
    """Backward pass of the piecewise-coupled recursion (see module docstring)."""
    _check_solve_args(problem, t)
    if problem.d == 0:
        return _wrap_delay_free(problem, t, pinv_rtol)

    n, N, d = problem.n, problem.N, problem.d
    P: dict[tuple[int, int], np.ndarray] = {(0, N): symmetrize(problem.G)}
    for j in range(1, min(N - t, d) + 1):
        P[(j, N)] = np.zeros((n, n))

    W: list[np.ndarray] = [np.empty(0)] * (N - t)
    H: list[np.ndarray] = [np.empty(0)] * (N - t)
    K: list[np.ndarray] = [np.empty(0)] * (N - t)
    for k in range(N - 1, t - 1, -1):
        A, C, Q = problem.A[k], problem.C[k], problem.Q[k]
        Wk, Hk = _wh_from_next(problem, t, P, k, min(k + 1 - t, d))
        Wdag = pinv(Wk, pinv_rtol)
        fold = symmetrize(Hk.T @ Wdag @ Hk)
        W[k - t], H[k - t], K[k - t] = Wk, Hk, -Wdag @ Hk

        P01 = P[(0, k + 1)] + P[(1, k + 1)]
        state_part = Q + A.T @ P01 @ A + C.T @ P[(0, k + 1)] @ C
        r = min(k - t, d)
        if r == 0:
            P[(0, k)] = symmetrize(state_part - fold)
        else:
            P[(0, k)] = symmetrize(state_part)
            for i in range(1, r):
                P[(i, k)] = symmetrize(A.T @ P[(i + 1, k + 1)] @ A)
            if r == d:
                P[(d, k)] = symmetrize(-fold)
            else:
                P[(r, k)] = symmetrize(A.T @ P[(r + 1, k + 1)] @ A - fold)

    return RiccatiSolution(t=t, N=N, d=d, n=n, m=problem.m, P=P,
                           W=tuple(W), H=tuple(H), K=tuple(K))


def solve_riccati_bar(problem: ProblemData, t: int,
                      pinv_rtol: float = PINV_RTOL) -> RiccatiSolution:
    """Single-region variant: every index 0..d defined at every time, the
    W/H sums always run to d, and the top line is -H^T W^+ H throughout.
    Used as an independent cross-check of the piecewise pass."""
    _check_solve_args(problem, t)
    if problem.d == 0:
        return _wrap_delay_free(problem, t, pinv_rtol)

    n, N, d = problem.n, problem.N, problem.d
    P: dict[tuple[int, int], np.ndarray] = {(0, N): symmetrize(problem.G)}
    for j in range(1, d + 1):
        P[(j, N)] = np.zeros((n, n))

    W: list[np.ndarray] = [np.empty(0)] * (N - t)
    H: list[np.ndarray] = [np.empty(0)] * (N - t)
    K: list[np.ndarray] = [np.empty(0)] * (N - t)
    for k in range(N - 1, t - 1, -1):
        A, C, Q = problem.A[k], problem.C[k], problem.Q[k]
        Wk, Hk = _wh_from_next(problem, t, P, k, d)
        Wdag = pinv(Wk, pinv_rtol)
        W[k - t], H[k - t], K[k - t] = Wk, Hk, -Wdag @ Hk

        P[(0, k)] = symmetrize(
            Q + A.T @ (P[(0, k + 1)] + P[(1, k + 1)]) @ A + C.T @ P[(0, k + 1)] @ C
        )
        for i in range(1, d):
            P[(i, k)] = symmetrize(A.T @ P[(i + 1, k + 1)] @ A)
        P[(d, k)] = symmetrize(-(Hk.T @ Wdag @ Hk))

    return RiccatiSolution(t=t, N=N, d=d, n=n, m=problem.m, P=P,
                           W=tuple(W), H=tuple(H), K=tuple(K),
                           single_region=True)


# ---------------------------------------------------------------------------
# Delay-free specialization

@dataclass(frozen=True)
class DelayFreeSolution:
    """Classical recursion P_k = Q + A^T P A + C^T P C - H^T W^+ H, with the
    per-step constrained-equation status (W_k PSD, H_k in range of W_k)."""

    t: int
    N: int
    n: int
    m: int
    P: tuple[np.ndarray, ...]
    W: tuple[np.ndarray, ...]
    H: tuple[np.ndarray, ...]
    K: tuple[np.ndarray, ...]
    w_psd: tuple[bool, ...]
    range_ok: tuple[bool, ...]

    def P_at(self, k: int) -> np.ndarray:
        if not self.t <= k <= self.N:
            raise ValidationError(f"time {k} outside [{self.t}, {self.N}]")
        return self.P[k - self.t]


def solve_delay_free(problem: ProblemData, t: int,
                     pinv_rtol: float = PINV_RTOL,
                     psd_tol: float = PSD_TOL) -> DelayFreeSolution:
    _check_solve_args(problem, t)
    n, N = problem.n, problem.N
    P: list[np.ndarray] = [np.empty(0)] * (N - t + 1)
    P[N - t] = symmetrize(problem.G)
    W, H, K, w_psd, range_ok = [], [], [], [], []
    for k in range(N - 1, t - 1, -1):
        A, B = problem.A[k], problem.B[k]
        C, D = problem.C[k], problem.D[k]
        Pn = P[k + 1 - t]
        Wk = symmetrize(problem.R[k] + B.T @ Pn @ B + D.T @ Pn @ D)
        Hk = B.T @ Pn @ A + D.T @ Pn @ C
        Wdag = pinv(Wk, pinv_rtol)
        P[k - t] = symmetrize(
            problem.Q[k] + A.T @ Pn @ A + C.T @ Pn @ C - Hk.T @ Wdag @ Hk
        )
        W.append(Wk)
        H.append(Hk)
        K.append(-Wdag @ Hk)
        w_psd.append(is_psd(Wk, psd_tol))
        range_ok.append(range_residual(Hk, Wk) <= psd_tol)
    W.reverse(); H.reverse(); K.reverse(); w_psd.reverse(); range_ok.reverse()
    return DelayFreeSolution(t=t, N=N, n=n, m=problem.m, P=tuple(P), W=tuple(W),
                             H=tuple(H), K=tuple(K), w_psd=tuple(w_psd),
                             range_ok=tuple(range_ok))


def _wrap_delay_free(problem: ProblemData, t: int, pinv_rtol: float) -> RiccatiSolution:
    df = solve_delay_free(problem, t, pinv_rtol)
    P = {(0, k): df.P[k - t] for k in range(t, problem.N + 1)}
    return RiccatiSolution(t=t, N=problem.N, d=0, n=problem.n, m=problem.m,
                           P=P, W=df.W, H=df.H, K=df.K, delayed=False)


# ---------------------------------------------------------------------------
# Classification, value, gains

@dataclass(frozen=True)
class StepEvidence:
    k: int
    w_min_eig: float
    range_residual: float


@dataclass(frozen=True)
class SolvabilityReport:
    classification: str
    steps: tuple[StepEvidence, ...]
    note: str = ""

    def at_least(self, classification: str) -> bool:
        return classification_rank(self.classification) >= classification_rank(classification)


def classify(sol: RiccatiSolution, tol: float = PSD_TOL) -> SolvabilityReport:
    """Solvability classification from the per-step W_k evidence.

    UniquelySolvable: every W_k positive definite. SolvableAllPairs: every
    W_k PSD with H_k in its range (pseudo-inverse feedback well defined for
    every initial pair). ConvexCandidate: every W_k PSD but some range
    condition fails — solvability then depends on the initial pair and needs
    the oracle. NotConvex: some W_k has a genuinely negative eigenvalue.
    """
    steps = []
    all_pd = all_psd = ranges_ok = True
    for j, Wk in enumerate(sol.W):
        k = sol.t + j
        Hk = sol.H[j]
        vals = np.linalg.eigvalsh(symmetrize(Wk))
        resid = range_residual(Hk, Wk)
        steps.append(StepEvidence(k=k, w_min_eig=float(vals[0]), range_residual=resid))
        all_pd = all_pd and is_pd(Wk, tol)
        all_psd = all_psd and is_psd(Wk, tol)
        ranges_ok = ranges_ok and resid <= tol
    if all_pd:
        cls, note = UNIQUELY_SOLVABLE, ""
    elif all_psd and ranges_ok:
        cls, note = SOLVABLE_ALL_PAIRS, ""
    elif all_psd:
        cls, note = CONVEX_CANDIDATE, "fixed-initial-pair solvability requires oracle check"
    else:
        cls, note = NOT_CONVEX, ""
    return SolvabilityReport(classification=cls, steps=tuple(steps), note=note)


def optimal_value(sol: RiccatiSolution, k: int, xi,
                  report: SolvabilityReport | None = None,
                  tol: float = PSD_TOL) -> float:
    """xi^T (sum of defined P^(i)_k) xi — the best achievable cost from
    (k, xi). Refuses when the classification does not guarantee solvability."""
    if not sol.t <= k <= sol.N - 1:
        raise ValidationError(f"time {k} outside [{sol.t}, {sol.N - 1}]")
    if report is None:
        report = classify(sol, tol)
    if not report.at_least(SOLVABLE_ALL_PAIRS):
        raise UnsolvableError(
            f"optimal value undefined: classification is {report.classification}"
            + (f" ({report.note})" if report.note else "")
        )
    xi = np.asarray(xi, dtype=float).reshape(-1)
    if xi.shape != (sol.n,):
        raise ValidationError(f"state must have length {sol.n}, got {xi.shape}")
    return float(xi @ sol.P_sum(k) @ xi)


def gains(sol: RiccatiSolution) -> tuple[np.ndarray, ...]:
    """K_k = -W_k^+ H_k for k = t..N-1."""
    return sol.K


def feedback_policy(sol: RiccatiSolution) -> FeedbackPolicy:
    """The gain policy u_k = K_k E_{max(t,k-d)}[X_k] as a simulable object."""
    return FeedbackPolicy(t=sol.t, d=sol.d, gains=sol.K)


# ---------------------------------------------------------------------------
# Serialization (consumed by the CLI)

def solution_to_dict(sol: RiccatiSolution, report: SolvabilityReport | None = None) -> dict:
    if report is None:
        report = classify(sol)
    return {
        "t": sol.t,
        "d": sol.d,
        "N": sol.N,
        "P": {f"{i},{k}": M.tolist() for (i, k), M in sorted(sol.P.items())},
        "W": [M.tolist() for M in sol.W],
        "H": [M.tolist() for M in sol.H],
        "K": [M.tolist() for M in sol.K],
        "classification": report.classification,
    }


def solution_from_dict(data: dict) -> tuple[RiccatiSolution, str]:
    try:
        t, d, N = int(data["t"]), int(data["d"]), int(data["N"])
        P = {}
        for key, M in data["P"].items():
            i_s, k_s = key.split(",")
            P[(int(i_s), int(k_s))] = np.asarray(M, dtype=float)
        W = tuple(np.asarray(M, dtype=float) for M in data["W"])
        H = tuple(np.asarray(M, dtype=float) for M in data["H"])
        K = tuple(np.asarray(M, dtype=float) for M in data["K"])
        classification = str(data["classification"])
    except (KeyError, ValueError, TypeError, AttributeError) as exc:
        raise ValidationError(f"malformed solution JSON: {exc}") from exc
    n = P[(0, N)].shape[0]
    m = W[0].shape[0] if W else 0
    sol = RiccatiSolution(t=t, N=N, d=d, n=n, m=m, P=P, W=W, H=H, K=K,
                          delayed=d > 0)
    return sol, classification
