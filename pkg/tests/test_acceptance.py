"""End-to-end quality gates, one printed line per criterion.

Each test prints ``ACCEPTANCE <n> PASS|FAIL <detail>`` on the real stdout so
the suite doubles as a checklist even under pytest's capture. Criteria 5
through 8 share one full-scale training run whose artifacts are cached under
``.acceptance_cache/`` at the repository root; delete that directory to
force a fresh 20-minute training run. Everything is single-threaded and
seeded, so the cache is byte-for-byte equivalent to retraining.
"""
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from ganshield.attacks import AttackScenario, CommLink, expand_mask
from ganshield.config import parse_config
from ganshield.defense import (
    OracleDefenseModel,
    attack_probability,
    build_attack_vector,
    identify,
    impute,
)
from ganshield.gan import (
    GanHyper,
    Normalization,
    corrupted_examples_for_window,
    discriminator_loss_and_grads,
    generator_loss_and_grads,
    init_gan,
    load_gan,
)
from ganshield.grid import GridModel, simulate
from ganshield.harness import build_system, run_calibrate, run_scenario, run_train
from ganshield.loop import (
    DefenseSetup,
    detection_latency,
    identification_counts,
    run_closed_loop,
)
from ganshield.lqr import care_residual, lqr_gain, solve_care, spectral_abscissa
from ganshield.nn import grad_check

REPO = Path(__file__).resolve().parent.parent
CACHE = Path(os.environ.get("GANSHIELD_ACCEPTANCE_DIR", REPO / ".acceptance_cache"))
TRAIN_DIR = CACHE / "train"


def _announce(n: int, ok: bool, detail: str = "") -> None:
    line = f"ACCEPTANCE {n} {'PASS' if ok else 'FAIL'} {detail}".rstrip()
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


def _acceptance_raw() -> dict:
    return {
        "seed": 0,
        "out_dir": str(TRAIN_DIR),
        "dataset": {"max_windows_per_trajectory": 8},
    }


def _train_key(config) -> str:
    import hashlib

    subset = {k: config[k] for k in ("seed", "system", "lqr", "sweep", "dataset", "gan")}
    blob = json.dumps(subset, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@pytest.fixture(scope="session")
def artifacts():
    """Train (or reuse) the full-scale model plus calibrated thresholds."""
    config = parse_config(_acceptance_raw())
    key = _train_key(config)
    meta_file = TRAIN_DIR / "train_meta.json"
    usable = (
        meta_file.exists()
        and (TRAIN_DIR / "checkpoint.json").exists()
        and (TRAIN_DIR / "history.json").exists()
        and (TRAIN_DIR / "peaks.json").exists()
        and json.loads(meta_file.read_text()).get("key") == key
    )
    if not usable:
        TRAIN_DIR.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        run_train(config, out_dir=TRAIN_DIR)
        seconds = time.perf_counter() - t0
        meta_file.write_text(
            json.dumps(
                {"key": key, "train_seconds": seconds, "cpu_count": os.cpu_count()},
                indent=1,
            )
            + "\n"
        )
    if not (TRAIN_DIR / "thresholds.json").exists():
        run_calibrate(config, out_dir=TRAIN_DIR)
    return {
        "config": config,
        "dir": TRAIN_DIR,
        "history": json.loads((TRAIN_DIR / "history.json").read_text()),
        "meta": json.loads(meta_file.read_text()),
        "thresholds": np.array(
            json.loads((TRAIN_DIR / "thresholds.json").read_text())["thresholds"]
        ),
    }


# ---------------------------------------------------------------------------
# 1. Riccati correctness on random stabilizable systems


def _stabilizable(A: np.ndarray, B: np.ndarray) -> bool:
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if lam.real >= 0:
            M = np.hstack([A - lam * np.eye(n), B])
            if np.linalg.matrix_rank(M) < n:
                return False
    return True


def test_acceptance_01_riccati_on_random_stabilizable_systems():
    t0 = time.perf_counter()
    checked = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n_x = int(rng.integers(2, 13))
        n_u = int(rng.integers(1, 4))
        while True:
            A = rng.normal(size=(n_x, n_x))
            B = rng.normal(size=(n_x, n_u))
            if _stabilizable(A, B):
                break
        Q = np.eye(n_x)
        R = np.eye(n_u)
        P = solve_care(A, B, Q, R)
        res = care_residual(A, B, Q, R, P)
        assert res <= 1e-8 * (1.0 + np.linalg.norm(P, "fro")), (seed, res)
        K = lqr_gain(P, B, R)
        assert spectral_abscissa(A - B @ K) < 0, seed
        checked += 1
    elapsed = time.perf_counter() - t0
    ok = checked == 20 and elapsed < 5.0
    _announce(1, ok, f"20 systems, residual bound met, {elapsed:.2f}s")


# ---------------------------------------------------------------------------
# 2. Gradient fidelity of both objectives


def test_acceptance_02_gradient_fidelity_on_five_seeds():
    t0 = time.perf_counter()
    worst_g = worst_d = 0.0
    for seed in range(5):
        hyper = GanHyper(w=3, hidden_g=5, hidden_d=5)
        rng = np.random.default_rng(seed + 100)
        model = init_gan(n_x=4, hyper=hyper, seed=seed)
        for tensor in model.parameters():
            tensor.value[...] = 0.5 * rng.standard_normal(tensor.value.shape)
        Z = rng.standard_normal((2, 4, 3))
        X = rng.standard_normal((2, 4, 3))
        omegas = np.ones((2, 4, 3))

        def gen_loss_and_grads(_ps):
            loss, (ge, gd, gp), _ = generator_loss_and_grads(model, Z, X, omegas)
            return loss, [ge.W, ge.U, ge.b, gd.W, gd.U, gd.b, gp.W, gp.b]

        def disc_loss_and_grads(_ps):
            loss, (gd, gh), _ = discriminator_loss_and_grads(model, X, Z)
            return loss, [gd.W, gd.U, gd.b, gh.W, gh.b]

        err_g = grad_check(gen_loss_and_grads, model.generator_parameters(), h=1e-6)
        err_d = grad_check(disc_loss_and_grads, model.discriminator_parameters(), h=1e-6)
        worst_g = max(worst_g, err_g)
        worst_d = max(worst_d, err_d)
    elapsed = time.perf_counter() - t0
    ok = worst_g < 1e-4 and worst_d < 1e-4 and elapsed < 30.0
    _announce(2, ok, f"gen {worst_g:.2e}, disc {worst_d:.2e}, {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 3. Simulator order


def test_acceptance_03_rk4_terminal_error_shrinks_fast():
    def terminal_error(dt):
        m = GridModel(
            n_gen=1, block_sizes=[1], A=np.array([[-1.0]]), B=np.array([[0.0]]),
            x_o=np.zeros(1), dt=dt,
        )
        traj = simulate(m, lambda t, r: np.zeros(1), horizon=1.0, x0=np.array([1.0]))
        return abs(traj.states[0, -1] - np.exp(-1.0))

    factor = terminal_error(0.01) / terminal_error(0.005)
    _announce(3, factor >= 12.0, f"halving dt cut the error by {factor:.1f}x")


# ---------------------------------------------------------------------------
# 4. Exact defense algebra on exhaustive small cases


class _EchoModel:
    """Tiny duck-typed model whose reconstruction is the remembered clean window."""

    def __init__(self, n_x, w, clean):
        self.hyper = GanHyper(w=w, hidden_g=2, hidden_d=2)
        self.normalization = Normalization(
            mean=np.zeros(n_x), scale=np.ones(n_x)
        )
        self.n_x = n_x
        self.clean = clean

    def score_window(self, window):
        return 1.0

    def reconstruct_window(self, window):
        return self.clean.copy()


def test_acceptance_04_defense_algebra_exhaustive():
    n_gen, w = 3, 4
    block_sizes = [2, 2, 2]
    n_x = sum(block_sizes)
    rng = np.random.default_rng(7)
    clean = rng.normal(size=(n_x, w))
    peaks = np.abs(clean).max(axis=1) + 0.5
    norm = Normalization(mean=np.zeros(n_x), scale=np.ones(n_x))
    model = _EchoModel(n_x, w, clean)
    thresholds = np.full(n_gen, 1e-9)

    # moving-average property, exact
    scores = [1.0, 0.5, 0.25, 0.125, 0.0625]
    for d in (1, 2, 4):
        assert attack_probability(scores, d) == sum(scores[-d:]) / d

    checked = 0
    for bits in range(8):
        gm = np.array([(bits >> i) & 1 for i in range(n_gen)], dtype=np.float64)
        Omega = expand_mask(gm, block_sizes, w)
        examples = corrupted_examples_for_window(
            clean, norm, [gm], [Omega], peaks, bias_fraction=0.2, rng=np.random.default_rng(bits)
        )
        for ex in examples:
            # corruption never touches entries the mask declares healthy
            np.testing.assert_array_equal(ex.Omega * ex.Z, ex.Omega * ex.X)

        corrupted = clean.copy()
        for g in range(n_gen):
            if gm[g] == 0.0:
                corrupted[2 * g: 2 * g + 2, :] += 5.0

        attacked, secure, losses = identify(model, corrupted, thresholds, block_sizes)
        assert set(attacked) | set(secure) == set(range(n_gen))
        assert set(attacked) & set(secure) == set()
        assert attacked == tuple(g for g in range(n_gen) if gm[g] == 0.0)

        m = build_attack_vector(attacked, block_sizes)
        x = corrupted[:, -1]
        z = clean[:, -1]
        spliced = impute(x, z, m)
        np.testing.assert_array_equal(impute(spliced, z, m), spliced)
        np.testing.assert_array_equal(impute(x, z, np.ones(n_x)), x)
        np.testing.assert_array_equal(impute(x, z, np.zeros(n_x)), z)
        if gm.all():
            np.testing.assert_array_equal(spliced, clean[:, -1])
        else:
            np.testing.assert_array_equal(spliced, np.where(m == 1.0, x, z))
        checked += 1
    _announce(4, checked == 8, "all 8 masks: partition, splice, mask truthfulness exact")


# ---------------------------------------------------------------------------
# 5. Training convergence at full scale


def test_acceptance_05_training_balance(artifacts):
    hist = artifacts["history"]
    h = hist["history"]
    epochs = len(h["d_score_real"])
    d_tail = float(np.mean(h["d_score_real"][-10:]))
    g_tail = float(np.mean(h["g_score_fake"][-10:]))
    seconds = float(artifacts["meta"]["train_seconds"])
    ok = (
        hist["n_operating_points"] >= 200
        and hist["n_masks"] == 9
        and hist["hyperparameters"]["w"] == 5
        and epochs <= 120
        and abs(d_tail - 0.5) <= 0.15
        and abs(g_tail - 0.5) <= 0.15
        and seconds < 1800.0
    )
    _announce(
        5,
        ok,
        f"{hist['n_operating_points']} points, {epochs} epochs, "
        f"final-10 scores real {d_tail:.3f} / fake {g_tail:.3f}, {seconds/60:.1f} min",
    )


# ---------------------------------------------------------------------------
# 6-8. Held-out battery: detection, identification, mitigation


def _all_links(n_gen):
    return [
        CommLink(sender=s, receiver=r, mean_delay=0.0)
        for s in range(n_gen)
        for r in range(n_gen)
        if s != r
    ]


@pytest.fixture(scope="session")
def battery(artifacts):
    """50 attacked runs (25 bias, 25 blackout), 50 healthy, defense on."""
    config = artifacts["config"]
    model, design = build_system(config)
    gan = load_gan(TRAIN_DIR / "checkpoint.json")
    links = _all_links(model.n_gen)

    def setup():
        return DefenseSetup(
            model=gan,
            thresholds=artifacts["thresholds"],
            eps=float(config["defense"]["eps"]),
            d=int(config["defense"]["d"]),
            hold_steps=int(config["defense"]["hold_steps"]),
        )

    runs = []
    for i in range(25):
        sender = i % model.n_gen
        hit = [(sender, r) for r in range(model.n_gen) if r != sender]
        sc = AttackScenario(
            id=f"fdi-{i}", links=tuple(hit), kind="fdi",
            t_start=4.2, t_end=8.0, seed=1000 + i, bias_fraction=0.12,
        )
        x0 = 0.05 * np.random.default_rng([997, i]).standard_normal(model.n_x)
        base = run_closed_loop(model, design.K, links=links, horizon=8.0, seed=0, x0=x0)
        peaks = np.abs(base.trajectory.deviations).max(axis=1)
        off = run_closed_loop(
            model, design.K, links=links, scenario=sc, horizon=8.0, seed=0,
            x0=x0, peaks=peaks,
        )
        on = run_closed_loop(
            model, design.K, links=links, scenario=sc, defense=setup(),
            horizon=8.0, seed=0, x0=x0, peaks=peaks,
        )
        runs.append({"kind": "fdi", "sc": sc, "on": on, "off": off})

    for i in range(25):
        sender = (i + 2) % model.n_gen
        hit = [(sender, r) for r in range(model.n_gen) if r != sender]
        sc = AttackScenario(
            id=f"dos-{i}", links=tuple(hit), kind="dos",
            t_start=3.5, t_end=6.5, seed=2000 + i,
        )
        x0 = 0.05 * np.random.default_rng([998, i]).standard_normal(model.n_x)
        on = run_closed_loop(
            model, design.K, links=links, scenario=sc, defense=setup(),
            horizon=10.0, seed=0, x0=x0,
        )
        runs.append({"kind": "dos", "sc": sc, "on": on})

    healthy = []
    for i in range(50):
        x0 = 0.05 * np.random.default_rng([999, i]).standard_normal(model.n_x)
        res = run_closed_loop(
            model, design.K, links=links, defense=setup(), horizon=8.0, seed=0, x0=x0,
        )
        healthy.append(res)

    return {"runs": runs, "healthy": healthy, "model": model}


def _latency(run) -> float | None:
    sc = run["sc"]
    receivers_hit = sorted({r for _, r in sc.links})
    hits = [
        detection_latency(run["on"].records[r], sc.t_start)
        for r in receivers_hit
        if run["on"].records.get(r)
    ]
    hits = [v for v in hits if v is not None]
    return min(hits) if hits else None


def test_acceptance_06_detection_latency_and_false_alarms(battery):
    latencies = [_latency(run) for run in battery["runs"]]
    timely = sum(1 for v in latencies if v is not None and v <= 0.5)
    rate = timely / len(latencies)

    flagged = total = 0
    for res in battery["healthy"]:
        for recs in res.records.values():
            flagged += sum(1 for r in recs if r.mode != "nominal")
            total += len(recs)
    fa = flagged / total
    ok = rate >= 0.9 and fa <= 0.02
    _announce(
        6,
        ok,
        f"alarm within 0.5s in {timely}/{len(latencies)} attacked runs, "
        f"false-alarm step rate {fa:.4f}",
    )


def test_acceptance_07_identification_precision_recall(battery):
    n_gen = battery["model"].n_gen
    tp = fp = fn = 0
    for run in battery["runs"]:
        res = run["on"]
        times = np.asarray(res.times[: len(res.truth[0])])
        for r in range(n_gen):
            recs = res.records.get(r)
            if not recs:
                continue
            a, b, c = identification_counts(
                recs, res.truth[r], times, t_from=run["sc"].t_start
            )
            tp, fp, fn = tp + a, fp + b, fn + c
    precision = tp / (tp + fp) if tp + fp else 1.0
    recall = tp / (tp + fn) if tp + fn else 1.0
    ok = precision >= 0.9 and recall >= 0.8
    _announce(7, ok, f"precision {precision:.3f}, recall {recall:.3f} over post-onset steps")


def test_acceptance_08_mitigation(battery):
    dt = battery["model"].dt

    def post_onset_energy(traj, t_from):
        keep = traj.t >= t_from
        dev = traj.deviations[:, keep]
        return float(np.sum(dev * dev) * dt)

    on_total = off_total = 0.0
    per_run = []
    for run in battery["runs"]:
        if run["kind"] != "fdi":
            continue
        e_on = post_onset_energy(run["on"].trajectory, run["sc"].t_start)
        e_off = post_onset_energy(run["off"].trajectory, run["sc"].t_start)
        on_total += e_on
        off_total += e_off
        per_run.append(e_on / e_off)
    ratio = on_total / off_total

    unbounded = []
    for run in battery["runs"]:
        if run["kind"] != "dos":
            continue
        traj = run["on"].trajectory
        onset_idx = int(np.searchsorted(traj.t, run["sc"].t_start))
        onset_norm = float(np.linalg.norm(traj.deviations[:, onset_idx]))
        end_norm = float(np.linalg.norm(traj.deviations[:, -1]))
        if traj.diverged or not end_norm < onset_norm:
            unbounded.append((run["sc"].id, onset_norm, end_norm))
    ok = ratio <= 0.3 and not unbounded
    _announce(
        8,
        ok,
        f"pooled bias-attack energy ratio {ratio:.3f} "
        f"(per-run median {np.median(per_run):.3f}), "
        f"{25 - len(unbounded)}/25 blackout runs bounded",
    )


# ---------------------------------------------------------------------------
# 9. Oracle upper bound validates the plumbing


def test_acceptance_09_oracle_defense_matches_attack_free():
    config = parse_config({"seed": 0, "out_dir": str(TRAIN_DIR)})
    model, design = build_system(config)
    w = 5
    x0 = np.zeros(model.n_x)
    x0[2] = 0.04
    links = _all_links(model.n_gen)
    scenario = AttackScenario(
        id="fdi-oracle", links=((1, 0), (1, 2), (1, 3)), kind="fdi",
        t_start=1.0, t_end=2.5, bias_fraction=0.12, seed=3,
    )
    peaks = 0.05 * np.ones(model.n_x)
    oracle = OracleDefenseModel(model.n_x, w)
    # d = 1 so the alarm reacts on the first corrupted sample; the moving
    # average is an evaluation knob, not part of the wiring under test
    setup = DefenseSetup(
        model=oracle, thresholds=np.full(model.n_gen, 1e-9), d=1, eps=0.5
    )
    defended = run_closed_loop(
        model, design.K, links=links, scenario=scenario, defense=setup,
        horizon=3.0, x0=x0, peaks=peaks,
    )
    clean = run_closed_loop(model, design.K, links=links, horizon=3.0, x0=x0)
    worst = float(np.abs(defended.trajectory.states - clean.trajectory.states).max())
    ok = not defended.trajectory.diverged and worst <= 1e-6
    _announce(9, ok, f"max per-state gap to the attack-free run {worst:.2e}")


# ---------------------------------------------------------------------------
# 10. Byte-identical artifacts on rerun


def _small_raw(out_dir) -> dict:
    return {
        "seed": 0,
        "out_dir": str(out_dir),
        "sweep": {"steps": [0.1] * 4, "bounds": [0.1] * 4, "limit": 2},
        "dataset": {"horizon": 2.0, "max_windows_per_trajectory": 8},
        "gan": {"epochs": 2, "batch_size": 16, "hidden_g": 8, "hidden_d": 8},
        "scenarios": [
            {
                "id": "fdi-rerun", "kind": "fdi", "links": [[1, 0], [1, 2], [1, 3]],
                "t_start": 4.0, "t_end": 7.0, "bias_fraction": 0.12, "seed": 1,
                "horizon": 8.0,
            },
        ],
    }


def test_acceptance_10_reruns_are_byte_identical(tmp_path, artifacts):
    # training artifacts at reduced scale, trained twice
    blobs = []
    for name in ("a", "b"):
        out = tmp_path / name
        config = parse_config(_small_raw(out))
        run_train(config, out_dir=out)
        run_calibrate(config, out_dir=out)
        blobs.append(
            {
                p.name: p.read_bytes()
                for p in sorted(out.glob("*.json"))
            }
        )
    assert blobs[0].keys() == blobs[1].keys()
    stable_json = all(blobs[0][k] == blobs[1][k] for k in blobs[0])

    # a full-scale defended scenario, simulated twice into the same directory
    out = tmp_path / "scenario"
    out.mkdir()
    for fname in ("checkpoint.json", "thresholds.json"):
        (out / fname).write_bytes((TRAIN_DIR / fname).read_bytes())
    raw = dict(artifacts["config"].data)
    raw["out_dir"] = str(out)
    raw["scenarios"] = [
        {
            "id": "fdi-demo", "kind": "fdi", "links": [[1, 0], [1, 2], [1, 3]],
            "t_start": 4.2, "t_end": 8.0, "bias_fraction": 0.12, "seed": 5,
            "horizon": 8.0,
        }
    ]
    config = parse_config(raw)
    run_scenario(config, "fdi-demo", defense_on=True)
    run_dir = out / "scenario_fdi-demo_on"
    first = {p.name: p.read_bytes() for p in sorted(run_dir.iterdir())}
    run_scenario(config, "fdi-demo", defense_on=True)
    second = {p.name: p.read_bytes() for p in sorted(run_dir.iterdir())}
    stable_runs = first.keys() == second.keys() and all(
        first[k] == second[k] for k in first
    )
    ok = stable_json and stable_runs
    _announce(10, ok, f"train/calibrate json and {len(first)} run files byte-stable")
