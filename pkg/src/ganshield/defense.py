"""Online detection, identification, imputation, and the resilient switch.

Each protected receiver runs one DefenseState. Every control step the raw
received window is normalized and scored by the discriminator; the moving
average of the last d scores is the attack probability, and an average below
the global threshold raises the alarm. Identification compares per-generator
block reconstruction losses against calibrated thresholds, the resulting
attack vector splices generated values over attacked blocks, and the same
feedback gain acts on the spliced estimate.
"""
from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CalibrationError
from .gan import discriminate, generate
from .lqr import control_nominal, control_resilient


def _score_window(model, window_normalized: np.ndarray) -> float:
    if hasattr(model, "score_window"):
        return float(model.score_window(window_normalized))
    return discriminate(model, window_normalized)


def _reconstruct_window(model, window_normalized: np.ndarray) -> np.ndarray:
    if hasattr(model, "reconstruct_window"):
        return model.reconstruct_window(window_normalized)
    return generate(model, window_normalized)


def attack_probability(scores, d: int) -> float:
    """Mean of the last d scores; during warm-up, of what exists."""
    if d < 1:
        raise ValueError("d must be >= 1")
    buf = list(scores)[-d:]
    if not buf:
        raise ValueError("score buffer is empty")
    return float(np.mean(buf))


def block_selector_masks(block_sizes: list[int], w: int) -> list[np.ndarray]:
    """Mask i is 1 exactly on generator i's block rows, all w columns."""
    n_x = sum(block_sizes)
    masks, start = [], 0
    for size in block_sizes:
        m = np.zeros((n_x, w))
        m[start : start + size, :] = 1.0
        masks.append(m)
        start += size
    return masks


def per_generator_losses(model, window_normalized: np.ndarray, block_sizes: list[int]) -> np.ndarray:
    """Block reconstruction losses ||(X - G(X)) restricted to block i||_F."""
    out = _reconstruct_window(model, window_normalized)
    diff = window_normalized - out
    losses, start = [], 0
    for size in block_sizes:
        losses.append(float(np.linalg.norm(diff[start : start + size, :])))
        start += size
    return np.array(losses)


def calibrate_thresholds(
    model, healthy_windows: np.ndarray, block_sizes: list[int], n_sigma: float = 3.0
) -> np.ndarray:
    """Per-generator thresholds mean + n_sigma * std over healthy windows.

    ``healthy_windows`` are raw (physical-unit) windows, shape (N, n_x, w);
    at least 100 are required for stable statistics. Losses are computed in
    normalized space, so the thresholds live there too.
    """
    if healthy_windows.ndim != 3 or healthy_windows.shape[0] < 100:
        raise CalibrationError(
            f"need at least 100 healthy windows, got {healthy_windows.shape}"
        )
    losses = np.array(
        [
            per_generator_losses(model, model.normalization.normalize(win), block_sizes)
            for win in healthy_windows
        ]
    )
    return losses.mean(axis=0) + n_sigma * losses.std(axis=0)


def identify(
    model, window_normalized: np.ndarray, thresholds: np.ndarray, block_sizes: list[int]
) -> tuple[tuple[int, ...], tuple[int, ...], np.ndarray]:
    """Split senders into attacked and secure sets by block loss thresholds."""
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if thresholds.shape != (len(block_sizes),):
        raise ValueError("one threshold per generator block is required")
    losses = per_generator_losses(model, window_normalized, block_sizes)
    attacked = tuple(int(i) for i in np.flatnonzero(losses > thresholds))
    secure = tuple(int(i) for i in range(len(block_sizes)) if i not in attacked)
    return attacked, secure, losses


def impute(x: np.ndarray, z: np.ndarray, m: np.ndarray) -> np.ndarray:
    """x_hat = x (*) m + z (*) (1 - m), elementwise."""
    x, z, m = (np.asarray(v, dtype=np.float64) for v in (x, z, m))
    if not (x.shape == z.shape == m.shape):
        raise ValueError("impute operands must share one shape")
    return x * m + z * (1.0 - m)


def build_attack_vector(attacked: tuple[int, ...], block_sizes: list[int]) -> np.ndarray:
    """Binary vector over states: 0 on attacked blocks, 1 elsewhere."""
    n_x = sum(block_sizes)
    m = np.ones(n_x)
    start = 0
    for i, size in enumerate(block_sizes):
        if i in attacked:
            m[start : start + size] = 0.0
        start += size
    return m


@dataclass
class DefenseState:
    """Per-receiver detector state and configuration."""

    d: int = 4
    eps: float = 0.5
    thresholds: np.ndarray | None = None
    hold_steps: int = 0
    scores: deque = field(default_factory=deque)
    step: int = 0
    alarm_onset_step: int | None = None
    attacked: tuple[int, ...] = ()
    secure: tuple[int, ...] = ()
    mode: str = "nominal"
    _hold_remaining: int = 0

    def __post_init__(self):
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie strictly inside (0, 1)")
        self.scores = deque(self.scores, maxlen=self.d)


@dataclass
class DefenseRecord:
    t: float
    score: float
    Pa: float
    mode: str
    attacked: tuple[int, ...]
    losses: np.ndarray


def defend_step(
    state: DefenseState,
    model,
    window_raw: np.ndarray,
    K_row: np.ndarray,
    x_o: np.ndarray,
    block_sizes: list[int],
    t: float = 0.0,
) -> tuple[float, DefenseState, DefenseRecord]:
    """One pass of the online loop for one receiver.

    ``window_raw`` holds the receiver's last w delivered samples in physical
    units, oldest first. Non-finite data trips the fail-safe: the window is
    sanitized to zeros and the step is forced resilient with every sender
    treated as attacked.
    """
    window_raw = np.asarray(window_raw, dtype=np.float64)
    n_gen = len(block_sizes)
    fail_safe = not np.all(np.isfinite(window_raw))
    if fail_safe:
        window_raw = np.where(np.isfinite(window_raw), window_raw, 0.0)
    Xn = model.normalization.normalize(window_raw)

    score = _score_window(model, Xn)
    state.scores.append(score)
    Pa = attack_probability(state.scores, state.d)
    # the average is only meaningful once d scores exist; a single-sample
    # average taken mid-transient is the classic false-alarm trigger
    alarmed = len(state.scores) >= state.d and Pa < state.eps

    if alarmed and state.alarm_onset_step is None:
        state.alarm_onset_step = state.step
    if alarmed:
        state._hold_remaining = state.hold_steps
    hold_active = state._hold_remaining > 0
    if not alarmed and hold_active:
        state._hold_remaining -= 1

    resilient = alarmed or hold_active or fail_safe
    x_latest = window_raw[:, -1]

    if fail_safe:
        attacked = tuple(range(n_gen))
        secure = ()
        losses = np.full(n_gen, np.inf)
    else:
        if state.thresholds is None:
            raise ValueError("defense thresholds are not calibrated")
        attacked, secure, losses = identify(model, Xn, state.thresholds, block_sizes)

    if resilient:
        # substitution is scoped to the identified blocks; an alarm that
        # localizes nothing leaves the data untouched, so a false alarm
        # cannot feed reconstruction noise back into the loop
        z = model.normalization.denormalize_vector(
            _reconstruct_window(model, Xn)[:, -1]
        )
        m = build_attack_vector(attacked, block_sizes)
        x_hat = impute(x_latest, z, m)
        du = control_resilient(K_row, x_hat, x_o)
        mode = "resilient"
    else:
        du = control_nominal(K_row, x_latest, x_o)
        mode = "nominal"

    state.attacked, state.secure, state.mode = attacked, secure, mode
    state.step += 1
    record = DefenseRecord(t=t, score=score, Pa=Pa, mode=mode, attacked=attacked, losses=losses)
    return du, state, record


class OracleDefenseModel:
    """Ground-truth stand-in for the trained model.

    The loop runner feeds it the true healthy state window and the true
    attack flag before each step; scoring and reconstruction then return the
    ideal answers. Upper-bounds what any learned model could achieve and
    exercises the full defense plumbing.
    """

    def __init__(self, n_x: int, w: int):
        self.n_x = n_x
        self.w = w
        from .gan import GanHyper, Normalization

        self.hyper = GanHyper(w=w)
        self.normalization = Normalization(mean=np.zeros(n_x), scale=np.ones(n_x))
        self._truth_window = np.zeros((n_x, w))
        self._under_attack = False

    def set_truth(self, healthy_window: np.ndarray, under_attack: bool) -> None:
        self._truth_window = np.asarray(healthy_window, dtype=np.float64).copy()
        self._under_attack = bool(under_attack)

    def score_window(self, window_normalized: np.ndarray) -> float:
        return 0.0 if self._under_attack else 1.0

    def reconstruct_window(self, window_normalized: np.ndarray) -> np.ndarray:
        return self._truth_window.copy()


# ---------------------------------------------------------------------------
# Diagnostics stream


def save_diagnostics_csv(
    records: list[DefenseRecord], path: str | Path, n_gen: int, config_hash: str | None = None
) -> None:
    with open(path, "w", newline="") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["t", "score", "Pa", "mode", "attacked_set"]
            + [f"Lr_G{i + 1}" for i in range(n_gen)]
        )
        for r in records:
            writer.writerow(
                [repr(float(r.t)), repr(float(r.score)), repr(float(r.Pa)), r.mode,
                 "|".join(str(i) for i in r.attacked)]
                + [repr(float(v)) for v in r.losses]
            )


def load_diagnostics_csv(path: str | Path) -> list[DefenseRecord]:
    records = []
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.reader(rows)
    header = next(reader)
    n_gen = sum(1 for h in header if h.startswith("Lr_G"))
    for row in reader:
        attacked = tuple(int(v) for v in row[4].split("|") if v != "")
        records.append(
            DefenseRecord(
                t=float(row[0]),
                score=float(row[1]),
                Pa=float(row[2]),
                mode=row[3],
                attacked=attacked,
                losses=np.array([float(v) for v in row[5 : 5 + n_gen]]),
            )
        )
    return records
