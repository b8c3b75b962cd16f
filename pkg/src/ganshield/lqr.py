"""LQR synthesis and the control laws used around it.

The Riccati equation is solved by Kleinman's Newton iteration: each step
solves a Lyapunov equation by Kronecker vectorization, and the starting gain
comes from a Bass-style eigenvalue shift when the open loop is unstable. At
the state dimensions used here (tens of states) the dense Kronecker solve is
entirely adequate.

All control laws act on deviations from the equilibrium x_o. The resilient
law receives a spliced state estimate but applies the same arithmetic.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import SynthesisError


def _check_symmetric(M: np.ndarray, name: str, tol: float = 1e-10) -> np.ndarray:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got {M.shape}")
    denom = max(1.0, float(np.abs(M).max()))
    if np.abs(M - M.T).max() > tol * denom:
        raise ValueError(f"{name} is not symmetric within tolerance")
    return 0.5 * (M + M.T)


def solve_lyapunov(F: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Solve F'P + PF = -S by Kronecker vectorization (column-major vec).

    One pass of iterative refinement keeps the answer usable even when the
    closed loop is barely stable and the Kronecker matrix is nearly singular.
    """
    n = F.shape[0]
    eye = np.eye(n)
    lhs = np.kron(eye, F.T) + np.kron(F.T, eye)
    try:
        vec = np.linalg.solve(lhs, (-S).flatten(order="F"))
        P = vec.reshape((n, n), order="F")
        residual = F.T @ P + P @ F + S
        vec = np.linalg.solve(lhs, residual.flatten(order="F"))
        P = P - vec.reshape((n, n), order="F")
    except np.linalg.LinAlgError as exc:
        raise SynthesisError(f"Lyapunov equation is singular: {exc}") from exc
    return 0.5 * (P + P.T)


def care_residual(A, B, Q, R, P) -> float:
    term = A.T @ P + P @ A - P @ B @ np.linalg.solve(R, B.T @ P) + Q
    return float(np.linalg.norm(term, "fro"))


def _bass_initial_gain(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Stabilizing gain via an eigenvalue shift.

    With A + beta I antistable, solve (A + beta I) X + X (A + beta I)' = 2 B B'
    and take K0 = B' X^{-1}: then (A - B K0) X + X (A - B K0)' = -2 beta X, so
    the closed loop sits at spectral abscissa -beta.  Keeping beta just past
    the leftmost eigenvalue keeps X well conditioned, which matters more here
    than a deep margin.
    """
    n = A.shape[0]
    eigs = np.linalg.eigvals(A)
    beta = max(0.0, -float(np.min(eigs.real))) + 0.5
    F = A + beta * np.eye(n)
    # F X + X F' = 2 B B'  <=>  (F') ' X + X (F') = -(-2BB') in solve_lyapunov form
    X = solve_lyapunov(F.T, -2.0 * B @ B.T)
    # X is singular when (A, B) is stabilizable but not controllable; the
    # pseudo-inverse still yields a gain acting on the controllable subspace
    return B.T @ np.linalg.pinv(X, hermitian=True)


def spectral_abscissa(M: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(M).real))


def solve_care(
    A: np.ndarray,
    B: np.ndarray,
    Q: np.ndarray,
    R: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 100,
) -> np.ndarray:
    """Continuous-time algebraic Riccati solution by Newton iteration.

    Returns symmetric P with Frobenius residual at most tol * (1 + ||P||_F);
    the default tolerance leaves margin under the 1e-8 design bound.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    Q = _check_symmetric(Q, "Q")
    R = _check_symmetric(R, "R")
    if np.min(np.linalg.eigvalsh(Q)) < -1e-10:
        raise ValueError("Q must be positive semidefinite")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise ValueError("R must be positive definite") from exc

    if spectral_abscissa(A) < 0:
        K = np.zeros((B.shape[1], A.shape[0]))
    else:
        K = _bass_initial_gain(A, B)
        if spectral_abscissa(A - B @ K) >= 0:
            raise SynthesisError(
                "initial gain fails to stabilize; the pair (A, B) may not be stabilizable"
            )

    P = np.zeros_like(A)
    res = np.inf
    for _ in range(max_iter):
        F = A - B @ K
        S = Q + K.T @ R @ K
        P = solve_lyapunov(F, S)
        res = care_residual(A, B, Q, R, P)
        K_next = np.linalg.solve(R, B.T @ P)
        if res <= tol * (1.0 + float(np.linalg.norm(P, "fro"))):
            if spectral_abscissa(A - B @ K_next) < 0:
                return P
            # Converged to the wrong Riccati branch; fall through and keep
            # iterating with a damped step from the current stabilizing gain.

        # Full Newton steps can leave the stabilizing set when the previous
        # gain was barely stable, after which the iteration may settle on a
        # non-stabilizing solution.  Backtrack toward the previous gain until
        # the closed loop is stable again.
        dK = K_next - K
        floor = 1e-12 * (1.0 + float(np.linalg.norm(K, "fro")))
        step = 1.0
        while spectral_abscissa(A - B @ (K + step * dK)) >= 0:
            step *= 0.5
            if step * float(np.linalg.norm(dK, "fro")) <= floor:
                raise SynthesisError(
                    "Newton step cannot be damped into the stabilizing set; "
                    "the pair (A, B) may not be stabilizable"
                )
        K = K + step * dK
    raise SynthesisError(
        f"Riccati iteration did not converge in {max_iter} steps (residual {res:.3e})"
    )


def lqr_gain(P: np.ndarray, B: np.ndarray, R: np.ndarray) -> np.ndarray:
    """K = R^{-1} B' P."""
    R = _check_symmetric(R, "R")
    try:
        np.linalg.cholesky(R)
    except np.linalg.LinAlgError as exc:
        raise ValueError("R must be positive definite") from exc
    B = np.asarray(B, dtype=np.float64)
    if B.ndim == 1:
        B = B[:, None]
    return np.linalg.solve(R, B.T @ P)


@dataclass
class LqrDesign:
    """A synthesized feedback design; row i of K drives generator i."""

    Q: np.ndarray
    R: np.ndarray
    P: np.ndarray
    K: np.ndarray
    residual: float
    closed_loop_eigs: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))


def synthesize_lqr(A: np.ndarray, B: np.ndarray, Q=None, R=None) -> LqrDesign:
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    n_x, n_u = A.shape[0], B.shape[1]
    Q = np.eye(n_x) if Q is None else np.asarray(Q, dtype=np.float64)
    R = np.eye(n_u) if R is None else np.asarray(R, dtype=np.float64)
    P = solve_care(A, B, Q, R)
    K = lqr_gain(P, B, R)
    res = care_residual(A, B, Q, R, P)
    eigs = np.linalg.eigvals(A - B @ K)
    if np.max(eigs.real) >= 0:
        raise SynthesisError("closed loop is not asymptotically stable")
    return LqrDesign(Q=Q, R=R, P=P, K=K, residual=res, closed_loop_eigs=eigs)


def wide_area_weights(
    n_gen: int,
    edges: list[tuple[int, int]],
    angle_weight: float = 10.0,
    speed_weight: float = 10.0,
    ridge: float = 1e-6,
) -> np.ndarray:
    """State cost that prices inter-generator angle spread and local speed.

    A diagonal Q yields nearly decentralized gains on a weakly coupled
    system, and a controller that ignores remote measurements cannot be
    disturbed through the channels that carry them.  Penalizing the angle
    difference across each coupling edge instead forces every gain row to
    lean on neighbours' states, which is the point of wide-area control.
    States are interleaved [angle_0, speed_0, angle_1, speed_1, ...].
    """
    if n_gen < 1:
        raise ValueError("n_gen must be positive")
    n_x = 2 * n_gen
    rows = []
    for i, j in edges:
        if not (0 <= i < n_gen and 0 <= j < n_gen) or i == j:
            raise ValueError(f"edge ({i}, {j}) does not join two distinct generators")
        row = np.zeros(n_x)
        row[2 * i] = 1.0
        row[2 * j] = -1.0
        rows.append(np.sqrt(angle_weight) * row)
    for i in range(n_gen):
        row = np.zeros(n_x)
        row[2 * i + 1] = 1.0
        rows.append(np.sqrt(speed_weight) * row)
    C = np.array(rows)
    return C.T @ C + ridge * np.eye(n_x)


def control_nominal(K_row: np.ndarray, x_received: np.ndarray, x_o: np.ndarray) -> float:
    """du_i = -K_i (x - x_o) from the states this controller received."""
    K_row = np.asarray(K_row, dtype=np.float64)
    x_received = np.asarray(x_received, dtype=np.float64)
    if K_row.shape != x_received.shape or K_row.shape != np.shape(x_o):
        raise ValueError("gain row, received state, and equilibrium must share one shape")
    return float(-K_row @ (x_received - x_o))


def control_attacked(K_row: np.ndarray, x_received: np.ndarray, x_o: np.ndarray) -> float:
    """Same arithmetic as the nominal law on a possibly corrupted vector.

    Corruption enters only through the received data; the gain is unchanged.
    """
    return control_nominal(K_row, x_received, x_o)


def control_resilient(K_row: np.ndarray, x_hat: np.ndarray, x_o: np.ndarray) -> float:
    """Nominal arithmetic on the spliced estimate x_hat (deviation form)."""
    return control_nominal(K_row, x_hat, x_o)


# ---------------------------------------------------------------------------
# Design file

def save_design(design: LqrDesign, path: str | Path) -> None:
    doc = {
        "Q": design.Q.reshape(-1).tolist(),
        "R": design.R.reshape(-1).tolist(),
        "P": design.P.reshape(-1).tolist(),
        "K": design.K.reshape(-1).tolist(),
        "n_x": design.Q.shape[0],
        "n_u": design.R.shape[0],
        "residual": design.residual,
        "closed_loop_eigs": [[float(e.real), float(e.imag)] for e in design.closed_loop_eigs],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_design(path: str | Path) -> LqrDesign:
    doc = json.loads(Path(path).read_text())
    n_x, n_u = doc["n_x"], doc["n_u"]
    return LqrDesign(
        Q=np.asarray(doc["Q"]).reshape(n_x, n_x),
        R=np.asarray(doc["R"]).reshape(n_u, n_u),
        P=np.asarray(doc["P"]).reshape(n_x, n_x),
        K=np.asarray(doc["K"]).reshape(n_u, n_x),
        residual=float(doc["residual"]),
        closed_loop_eigs=np.array([complex(re, im) for re, im in doc["closed_loop_eigs"]]),
    )
