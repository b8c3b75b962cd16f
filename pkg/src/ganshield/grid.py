"""Linear small-signal grid dynamics and trajectory simulation.

The plant is deliberately linear: a coupled-swing model with two states per
generator (angle and speed deviations), assembled from inertia, damping,
ground stiffness, and pairwise coupling stiffness. Operating points perturb
the built model multiplicatively and shift its equilibrium, standing in for
load changes. Integration is classical RK4 with the input held constant over
each step.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, NumericError


@dataclass
class GridModel:
    """Linear model d(dx)/dt = A dx + B du around the equilibrium x_o."""

    n_gen: int
    block_sizes: list[int]
    A: np.ndarray
    B: np.ndarray
    x_o: np.ndarray
    dt: float
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.B = np.asarray(self.B, dtype=np.float64)
        self.x_o = np.asarray(self.x_o, dtype=np.float64)
        n_x = sum(self.block_sizes)
        if len(self.block_sizes) != self.n_gen:
            raise ConfigurationError("block_sizes must list one entry per generator")
        if self.A.shape != (n_x, n_x):
            raise ConfigurationError(f"A shape {self.A.shape} != ({n_x}, {n_x})")
        if self.B.shape != (n_x, self.n_gen):
            raise ConfigurationError(f"B shape {self.B.shape} != ({n_x}, {self.n_gen})")
        if self.x_o.shape != (n_x,):
            raise ConfigurationError(f"x_o shape {self.x_o.shape} != ({n_x},)")
        if self.dt <= 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if not self.labels:
            self.labels = [f"x_{i}" for i in range(n_x)]
        if len(self.labels) != n_x:
            raise ConfigurationError("labels must name every state")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    def block_slices(self) -> list[slice]:
        slices, start = [], 0
        for size in self.block_sizes:
            slices.append(slice(start, start + size))
            start += size
        return slices

    def extract_block(self, x: np.ndarray, gen: int) -> np.ndarray:
        return x[self.block_slices()[gen]]


def modal_report(A: np.ndarray) -> list[dict]:
    """Oscillatory modes of A: frequency (Hz) and damping ratio, slow first."""
    eigs = np.linalg.eigvals(A)
    modes = []
    for lam in eigs:
        if lam.imag > 1e-9:
            freq = lam.imag / (2.0 * np.pi)
            zeta = -lam.real / abs(lam)
            modes.append({"freq_hz": float(freq), "damping_ratio": float(zeta)})
    modes.sort(key=lambda m: m["freq_hz"])
    return modes


def spectral_abscissa(A: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(A).real))


@dataclass
class SwingSystemSpec:
    """Parameters of the synthetic coupled-swing test system.

    ``coupling`` lists undirected edges (i, j, stiffness); the edge graph must
    connect all generators when there is more than one.
    """

    inertia: list[float]
    damping: list[float]
    restoring: list[float]
    coupling: list[tuple[int, int, float]]
    equilibrium_angles: list[float]
    dt: float = 0.01

    @property
    def n_gen(self) -> int:
        return len(self.inertia)


def _check_connected(n: int, edges: list[tuple[int, int, float]]) -> bool:
    if n <= 1:
        return True
    adj = {i: set() for i in range(n)}
    for i, j, k in edges:
        if k > 0:
            adj[i].add(j)
            adj[j].add(i)
    seen, stack = {0}, [0]
    while stack:
        for nb in adj[stack.pop()]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == n


def build_test_system(spec: SwingSystemSpec, require_stable: bool = True) -> GridModel:
    """Assemble the linearized coupled-swing model.

    Per generator i (angle a_i, speed w_i, torque input u_i):
        da_i/dt = w_i
        M_i dw_i/dt = -D_i w_i - k_i a_i - sum_j K_ij (a_i - a_j) + u_i
    """
    n = spec.n_gen
    if not (len(spec.damping) == len(spec.restoring) == len(spec.equilibrium_angles) == n):
        raise ConfigurationError("inertia, damping, restoring, equilibrium_angles must have equal length")
    if any(m <= 0 for m in spec.inertia):
        raise ConfigurationError("inertia entries must be positive")
    if any(d < 0 for d in spec.damping):
        raise ConfigurationError("damping entries must be non-negative")
    if any(k < 0 for _, _, k in spec.coupling):
        raise ConfigurationError("coupling stiffness must be non-negative")
    if not _check_connected(n, spec.coupling):
        raise ConfigurationError("coupling graph does not connect all generators")

    n_x = 2 * n
    A = np.zeros((n_x, n_x))
    B = np.zeros((n_x, n))
    for i in range(n):
        ai, wi = 2 * i, 2 * i + 1
        A[ai, wi] = 1.0
        A[wi, ai] = -spec.restoring[i] / spec.inertia[i]
        A[wi, wi] = -spec.damping[i] / spec.inertia[i]
        B[wi, i] = 1.0 / spec.inertia[i]
    for i, j, k in spec.coupling:
        if i == j or not (0 <= i < n and 0 <= j < n):
            raise ConfigurationError(f"bad coupling edge ({i}, {j})")
        for a, b in ((i, j), (j, i)):
            wa = 2 * a + 1
            A[wa, 2 * a] -= k / spec.inertia[a]
            A[wa, 2 * b] += k / spec.inertia[a]

    x_o = np.zeros(n_x)
    x_o[0::2] = spec.equilibrium_angles
    labels = []
    for i in range(n):
        labels += [f"g{i}_angle", f"g{i}_speed"]
    model = GridModel(n_gen=n, block_sizes=[2] * n, A=A, B=B, x_o=x_o, dt=spec.dt, labels=labels)
    if require_stable and all(d > 0 for d in spec.damping) and spectral_abscissa(A) >= 0:
        raise ConfigurationError("requested a stable system but the realization is not Hurwitz")
    return model


def default_test_system(dt: float = 0.01) -> GridModel:
    """The built-in 4-generator two-area system.

    Constants are tuned so the slowest oscillatory mode falls in 0.3-0.8 Hz,
    the remaining modes in 1.0-2.0 Hz, and every damping ratio in (0, 0.1).
    """
    inertia = [1.0, 1.1, 0.95, 1.05]
    spec = SwingSystemSpec(
        inertia=inertia,
        damping=[0.55 * m for m in inertia],
        restoring=[10.0 * m for m in inertia],
        coupling=[(0, 1, 30.0), (1, 2, 20.0), (2, 3, 30.0), (3, 0, 20.0)],
        equilibrium_angles=[0.12, 0.22, 0.32, 0.42],
        dt=dt,
    )
    return build_test_system(spec)


@dataclass
class OperatingPoint:
    """A perturbed realization of a base model.

    ``perturbation`` holds one fraction per swept parameter; parameter i acts
    on generator i by scaling the stiffness/damping entries of its speed row
    in A by (1 + p_i) and shifting its equilibrium angle (the first state of
    its block) by ``equilibrium_shift * p_i``.
    """

    perturbation: np.ndarray
    A: np.ndarray
    x_o: np.ndarray


def realize_operating_point(
    base: GridModel, perturbation: np.ndarray, equilibrium_shift: float = 0.3
) -> OperatingPoint:
    perturbation = np.asarray(perturbation, dtype=np.float64)
    if perturbation.size > base.n_gen:
        raise ConfigurationError(
            f"{perturbation.size} sweep parameters exceed {base.n_gen} generators"
        )
    A = base.A.copy()
    x_o = base.x_o.copy()
    slices = base.block_slices()
    for i, p in enumerate(perturbation):
        blk = slices[i]
        speed_row = blk.stop - 1
        A[speed_row, :] *= 1.0 + p
        x_o[blk.start] += equilibrium_shift * p
    return OperatingPoint(perturbation=perturbation, A=A, x_o=x_o)


@dataclass
class SweepSpec:
    """Per-parameter perturbation grid: fractions from -bound to +bound."""

    steps: list[float]
    bounds: list[float]
    equilibrium_shift: float = 0.3

    def __post_init__(self):
        if len(self.steps) != len(self.bounds):
            raise ConfigurationError("steps and bounds must pair up")
        for s, b in zip(self.steps, self.bounds):
            if s <= 0:
                raise ConfigurationError(f"step must be positive, got {s}")
            if b < s:
                raise ConfigurationError(f"bound {b} smaller than step {s}")
            ratio = b / s
            if abs(ratio - round(ratio)) > 1e-9:
                raise ConfigurationError(f"step {s} does not divide bound {b}")

    def levels(self) -> list[np.ndarray]:
        out = []
        for s, b in zip(self.steps, self.bounds):
            n = int(round(b / s))
            out.append(np.arange(-n, n + 1) * s)
        return out


def sample_operating_points(
    base: GridModel, sweep: SweepSpec, limit: int, seed: int
) -> list[OperatingPoint]:
    """Grid of perturbation levels, seeded-subsampled to ``limit`` points.

    The unperturbed point is always included. The full Cartesian product is
    returned in lexicographic order when it fits under the limit.
    """
    if limit < 1:
        raise ConfigurationError(f"limit must be >= 1, got {limit}")
    levels = sweep.levels()
    counts = [len(lv) for lv in levels]
    total = int(np.prod(counts))
    zero_index = int(np.ravel_multi_index([n // 2 for n in counts], counts))

    if limit == 1:
        indices = np.array([zero_index])
    elif total <= limit:
        indices = np.arange(total)
    else:
        rng = np.random.default_rng(seed)
        others = rng.choice(total - 1, size=limit - 1, replace=False)
        others = np.where(others >= zero_index, others + 1, others)
        indices = np.concatenate([[zero_index], np.sort(others)])

    points = []
    for idx in indices:
        multi = np.unravel_index(int(idx), counts)
        pert = np.array([levels[d][m] for d, m in enumerate(multi)])
        points.append(realize_operating_point(base, pert, sweep.equilibrium_shift))
    return points


@dataclass
class Trajectory:
    """A simulated run: absolute states x(t) = x_o + dx(t) and inputs du(t)."""

    t: np.ndarray
    states: np.ndarray  # (n_x, T+1)
    inputs: np.ndarray  # (n_gen, T+1); final column repeats the last held input
    x_o: np.ndarray
    dt: float
    diverged: bool = False
    provenance: dict = field(default_factory=dict)

    @property
    def deviations(self) -> np.ndarray:
        return self.states - self.x_o[:, None]


def _perfect_comm(n_gen: int):
    def comm(step, t, history):
        return np.tile(history[:, -1], (n_gen, 1))

    return comm


def simulate(
    model: GridModel,
    controller,
    comm=None,
    horizon: float = 10.0,
    seed: int = 0,
    x0: np.ndarray | None = None,
    A: np.ndarray | None = None,
    x_o: np.ndarray | None = None,
    provenance: dict | None = None,
) -> Trajectory:
    """Closed-loop RK4 simulation with zero-order-hold inputs.

    ``comm(step, t, history)`` returns the (n_gen, n_x) matrix of absolute
    states each receiver sees (defaults to perfect broadcast of the current
    state); ``controller(t, received)`` returns the (n_gen,) input vector held
    over the step. ``A`` and ``x_o`` override the base model's (for operating
    points). A non-finite state truncates the run and flags it diverged.
    """
    if horizon <= 0:
        raise ConfigurationError(f"horizon must be positive, got {horizon}")
    A = model.A if A is None else np.asarray(A, dtype=np.float64)
    x_o = model.x_o if x_o is None else np.asarray(x_o, dtype=np.float64)
    dt = model.dt
    n_steps = int(round(horizon / dt))
    if comm is None:
        comm = _perfect_comm(model.n_gen)

    dx = np.zeros(model.n_x) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    states = np.empty((model.n_x, n_steps + 1))
    inputs = np.zeros((model.n_gen, n_steps + 1))
    states[:, 0] = x_o + dx
    diverged = False
    last = n_steps
    for k in range(n_steps):
        t = k * dt
        received = comm(k, t, states[:, : k + 1])
        du = np.asarray(controller(t, received), dtype=np.float64)
        inputs[:, k] = du
        bu = model.B @ du
        with np.errstate(over="ignore", invalid="ignore"):
            k1 = A @ dx + bu
            k2 = A @ (dx + 0.5 * dt * k1) + bu
            k3 = A @ (dx + 0.5 * dt * k2) + bu
            k4 = A @ (dx + dt * k3) + bu
            dx = dx + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(dx)):
            diverged = True
            last = k
            break
        states[:, k + 1] = x_o + dx
    inputs[:, last] = inputs[:, max(last - 1, 0)] if last == n_steps else inputs[:, last]
    t_grid = np.arange(last + 1) * dt
    return Trajectory(
        t=t_grid,
        states=states[:, : last + 1],
        inputs=inputs[:, : last + 1],
        x_o=x_o.copy(),
        dt=dt,
        diverged=diverged,
        provenance=dict(provenance or {}, seed=seed),
    )


# ---------------------------------------------------------------------------
# File formats

def save_model(model: GridModel, path: str | Path) -> None:
    doc = {
        "n_gen": model.n_gen,
        "block_sizes": list(model.block_sizes),
        "A": model.A.reshape(-1).tolist(),
        "B": model.B.reshape(-1).tolist(),
        "x_o": model.x_o.tolist(),
        "dt": model.dt,
        "labels": list(model.labels),
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_model(path: str | Path) -> GridModel:
    doc = json.loads(Path(path).read_text())
    n_x = sum(doc["block_sizes"])
    return GridModel(
        n_gen=doc["n_gen"],
        block_sizes=list(doc["block_sizes"]),
        A=np.asarray(doc["A"], dtype=np.float64).reshape(n_x, n_x),
        B=np.asarray(doc["B"], dtype=np.float64).reshape(n_x, doc["n_gen"]),
        x_o=np.asarray(doc["x_o"], dtype=np.float64),
        dt=float(doc["dt"]),
        labels=list(doc["labels"]),
    )


def save_trajectory_csv(traj: Trajectory, path: str | Path, config_hash: str | None = None) -> None:
    n_x = traj.states.shape[0]
    n_gen = traj.inputs.shape[0]
    with open(path, "w", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("# x_o=" + ",".join(repr(float(v)) for v in traj.x_o) + "\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["t"] + [f"x_{i}" for i in range(n_x)] + [f"u_{i}" for i in range(n_gen)] + ["diverged"]
        )
        flag = "1" if traj.diverged else "0"
        for k in range(traj.t.size):
            row = [repr(float(traj.t[k]))]
            row += [repr(float(v)) for v in traj.states[:, k]]
            row += [repr(float(v)) for v in traj.inputs[:, k]]
            row.append(flag)
            writer.writerow(row)


def load_trajectory_csv(path: str | Path) -> Trajectory:
    rows = []
    x_o = None
    with open(path) as fh:
        for line in fh:
            if line.startswith("# x_o="):
                x_o = np.array([float(v) for v in line[len("# x_o=") :].split(",")])
            elif not line.startswith("#"):
                rows.append(line.rstrip("\n"))
    reader = csv.reader(rows)
    header = next(reader)
    n_x = sum(1 for h in header if h.startswith("x_"))
    n_gen = sum(1 for h in header if h.startswith("u_"))
    data = np.array([[float(v) for v in row[:-1]] + [float(row[-1])] for row in reader])
    t = data[:, 0]
    states = data[:, 1 : 1 + n_x].T
    inputs = data[:, 1 + n_x : 1 + n_x + n_gen].T
    diverged = bool(data[0, -1]) if data.size else False
    dt = float(t[1] - t[0]) if t.size > 1 else 0.01
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in trajectory file {path}")
    if x_o is None:
        x_o = np.zeros(n_x)
    return Trajectory(t=t, states=states, inputs=inputs, x_o=x_o, dt=dt, diverged=diverged)
