"""Windowed dataset construction and adversarial training.

The generator is an LSTM encoder-decoder over state windows: the encoder
reads the window column by column, its final state seeds the decoder, and the
decoder unrolls autoregressively (each step consumes its own previous
projected output, starting from a zero vector). The discriminator is an LSTM
whose final hidden state feeds a scalar sigmoid head.

Training follows the two-player objective with a masked reconstruction term
weighted by lam: the discriminator ascends E[log D(X)] + E[log(1 - D(G(Z)))],
the generator descends E[log(1 - D(G(Z)))] + lam * L_r. Losses are computed
in logit space through softplus for numerical stability; a non-saturating
generator variant (-E[log D(G(Z))]) sits behind a flag.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .attacks import compute_peak_amplitudes, expand_mask
from .errors import NumericError
from .nn import (
    AdamState,
    DenseParams,
    LstmParams,
    ParamTensor,
    adam_step,
    dense_backward,
    dense_forward,
    init_dense,
    init_lstm,
    lstm_backward,
    lstm_cell,
    lstm_cell_backward,
    lstm_forward,
    save_checkpoint,
    load_checkpoint,
)

SCORE_EPS = 1e-12


def _sigmoid(a):
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def _softplus(a):
    return np.logaddexp(0.0, a)


@dataclass
class GanHyper:
    w: int = 5
    lam: float = 1.0
    epochs: int = 120
    batch_size: int = 32
    hidden_g: int = 64
    hidden_d: int = 64
    lr_g: float = 1e-3
    lr_d: float = 1e-3
    d_steps: int = 1
    non_saturating: bool = False
    # batch-mean D advantage above which its update is skipped (1.0 disables);
    # keeps the two players near balance instead of letting D saturate
    d_gate: float = 0.6
    # stddev of Gaussian noise added to D's inputs during training only;
    # off by default because the detector is consumed noise-free online and
    # a noise-matched D mis-scores clean inputs
    d_input_noise: float = 0.0

    def __post_init__(self):
        if self.w < 1:
            raise ValueError("window length w must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if min(self.hidden_g, self.hidden_d, self.d_steps) < 1:
            raise ValueError("hidden sizes and d_steps must be >= 1")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.5 <= self.d_gate <= 1.0:
            raise ValueError("d_gate must lie in [0.5, 1.0]")
        if self.d_input_noise < 0:
            raise ValueError("d_input_noise must be non-negative")

    def to_dict(self) -> dict:
        return {
            "w": self.w,
            "lam": self.lam,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "hidden_g": self.hidden_g,
            "hidden_d": self.hidden_d,
            "lr_g": self.lr_g,
            "lr_d": self.lr_d,
            "d_steps": self.d_steps,
            "non_saturating": self.non_saturating,
            "d_gate": self.d_gate,
            "d_input_noise": self.d_input_noise,
        }


@dataclass
class Normalization:
    mean: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.scale = np.asarray(self.scale, dtype=np.float64)
        if np.any(self.scale <= 0):
            raise ValueError("normalization scale must be positive per state")

    def normalize(self, window: np.ndarray) -> np.ndarray:
        if window.ndim == 2:
            return (window - self.mean[:, None]) / self.scale[:, None]
        return (window - self.mean[None, :, None]) / self.scale[None, :, None]

    def denormalize(self, window: np.ndarray) -> np.ndarray:
        if window.ndim == 2:
            return window * self.scale[:, None] + self.mean[:, None]
        return window * self.scale[None, :, None] + self.mean[None, :, None]

    def normalize_vector(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def denormalize_vector(self, x: np.ndarray) -> np.ndarray:
        return x * self.scale + self.mean


def fit_normalization(clean_windows: np.ndarray) -> Normalization:
    """Per-state z-score statistics over clean windows only.

    Zero-variance states get scale 1 with a warning so constant channels
    survive the transform unscaled.
    """
    if clean_windows.ndim != 3 or clean_windows.shape[0] == 0:
        raise ValueError("expected a non-empty (N, n_x, w) window stack")
    flat = clean_windows.transpose(1, 0, 2).reshape(clean_windows.shape[1], -1)
    mean = flat.mean(axis=1)
    scale = flat.std(axis=1)
    dead = scale == 0.0
    if np.any(dead):
        warnings.warn(
            f"{int(dead.sum())} state(s) have zero variance; scale clamped to 1",
            RuntimeWarning,
        )
        scale = np.where(dead, 1.0, scale)
    return Normalization(mean=mean, scale=scale)


@dataclass
class TrainingExample:
    """Corrupted window Z, clean window X, mask Omega (all n_x by w)."""

    Z: np.ndarray
    X: np.ndarray
    Omega: np.ndarray


@dataclass
class GanModel:
    enc: LstmParams
    dec: LstmParams
    proj: DenseParams
    disc: LstmParams
    head: DenseParams
    normalization: Normalization
    hyper: GanHyper
    n_x: int
    history: dict = field(default_factory=dict)

    def generator_parameters(self) -> list[ParamTensor]:
        return (
            self.enc.tensors("enc")
            + self.dec.tensors("dec")
            + self.proj.tensors("proj")
        )

    def discriminator_parameters(self) -> list[ParamTensor]:
        return self.disc.tensors("disc") + self.head.tensors("head")

    def parameters(self) -> list[ParamTensor]:
        return self.generator_parameters() + self.discriminator_parameters()


def init_gan(n_x: int, hyper: GanHyper, seed: int, normalization: Normalization | None = None) -> GanModel:
    rng = np.random.default_rng(seed)
    enc = init_lstm(rng, n_x, hyper.hidden_g)
    dec = init_lstm(rng, n_x, hyper.hidden_g)
    proj = init_dense(rng, hyper.hidden_g, n_x)
    disc = init_lstm(rng, n_x, hyper.hidden_d)
    head = init_dense(rng, hyper.hidden_d, 1)
    if normalization is None:
        normalization = Normalization(mean=np.zeros(n_x), scale=np.ones(n_x))
    return GanModel(
        enc=enc, dec=dec, proj=proj, disc=disc, head=head,
        normalization=normalization, hyper=hyper, n_x=n_x,
    )


# ---------------------------------------------------------------------------
# Forward passes


def _as_batch(window: np.ndarray, n_x: int, w: int) -> tuple[np.ndarray, bool]:
    window = np.asarray(window, dtype=np.float64)
    if window.ndim == 2:
        if window.shape != (n_x, w):
            raise ValueError(f"window shape {window.shape} != ({n_x}, {w})")
        return window[None], True
    if window.ndim != 3 or window.shape[1:] != (n_x, w):
        raise ValueError(f"window batch shape {window.shape} incompatible with ({n_x}, {w})")
    return window, False


def generate_with_cache(model: GanModel, Z: np.ndarray):
    """Run the encoder-decoder on a (B, n_x, w) batch; keep caches for backward."""
    w = model.hyper.w
    B = Z.shape[0]
    enc_in = np.transpose(Z, (2, 0, 1))  # (w, B, n_x)
    _, (h, c), enc_cache = lstm_forward(model.enc, enc_in)
    x_step = np.zeros((B, model.n_x))
    dec_caches, dec_hidden, outputs = [], [], []
    for _ in range(w):
        h, c, cache = lstm_cell(model.dec, x_step, h, c)
        y = dense_forward(model.proj, h)
        dec_caches.append(cache)
        dec_hidden.append(h)
        outputs.append(y)
        x_step = y
    Zhat = np.stack(outputs, axis=2)  # (B, n_x, w)
    return Zhat, {"enc": enc_cache, "dec": dec_caches, "hidden": dec_hidden}


def generate(model: GanModel, window: np.ndarray) -> np.ndarray:
    """Reconstruct a normalized window (or batch); mask-free by signature."""
    batch, squeeze = _as_batch(window, model.n_x, model.hyper.w)
    Zhat, _ = generate_with_cache(model, batch)
    return Zhat[0] if squeeze else Zhat


def discriminate_with_cache(model: GanModel, X: np.ndarray):
    inputs = np.transpose(X, (2, 0, 1))
    hs, (h, _), cache = lstm_forward(model.disc, inputs)
    logits = dense_forward(model.head, h)[:, 0]
    return logits, {"lstm": cache, "h_final": h}


def discriminate(model: GanModel, window: np.ndarray):
    """Probability score in the open interval (0,1); scalar for one window."""
    batch, squeeze = _as_batch(window, model.n_x, model.hyper.w)
    logits, _ = discriminate_with_cache(model, batch)
    scores = np.clip(_sigmoid(logits), SCORE_EPS, 1.0 - SCORE_EPS)
    return float(scores[0]) if squeeze else scores


def reconstruction_loss(Z: np.ndarray, Zhat: np.ndarray, Omega: np.ndarray) -> float:
    """Frobenius norm of the masked difference (reported value)."""
    Z, Zhat, Omega = (np.asarray(m, dtype=np.float64) for m in (Z, Zhat, Omega))
    if not (Z.shape == Zhat.shape == Omega.shape):
        raise ValueError("reconstruction_loss operands must share one shape")
    return float(np.linalg.norm((Z - Zhat) * Omega))


# ---------------------------------------------------------------------------
# Backward passes


def generator_backward(model: GanModel, Z: np.ndarray, cache, dZhat: np.ndarray):
    """Gradients of the generator parameters given dLoss/dZhat.

    The decoder is autoregressive, so the gradient of step t's projected
    output collects both the direct term dZhat[:, :, t] and the flow from
    step t+1's input.
    """
    w = model.hyper.w
    B = Z.shape[0]
    g_dec = model.dec.zeros_like()
    g_proj = model.proj.zeros_like()

    dh_next = np.zeros((B, model.dec.hidden_size))
    dc_next = np.zeros_like(dh_next)
    dx_pending = np.zeros((B, model.n_x))
    for t in range(w - 1, -1, -1):
        dy = dZhat[:, :, t] + dx_pending
        dh_proj = dense_backward(model.proj, cache["hidden"][t], dy, g_proj)
        dx_pending, dh_next, dc_next = lstm_cell_backward(
            model.dec, cache["dec"][t], dh_next + dh_proj, dc_next, g_dec
        )
    # dx_pending at t=0 hits the fixed zero start vector and is dropped;
    # the state gradient continues into the encoder's final (h, c)
    g_enc, _, _, _ = lstm_backward(model.enc, cache["enc"], dh_final=dh_next, dc_final=dc_next)
    return g_enc, g_dec, g_proj


def discriminator_backward(model: GanModel, cache, dlogits: np.ndarray):
    """Gradients of D's parameters and of its input windows."""
    g_head = model.head.zeros_like()
    dh_final = dense_backward(model.head, cache["h_final"], dlogits[:, None], g_head)
    g_disc, dinputs, _, _ = lstm_backward(model.disc, cache["lstm"], dh_final=dh_final)
    dX = np.transpose(dinputs, (1, 2, 0))  # back to (B, n_x, w)
    return g_disc, g_head, dX


# ---------------------------------------------------------------------------
# Objectives (losses plus analytic gradients, checked by grad_check)


def discriminator_loss_and_grads(
    model: GanModel,
    X: np.ndarray,
    Z: np.ndarray,
    noise_real: np.ndarray | None = None,
    noise_fake: np.ndarray | None = None,
):
    """L_D = -E[log D(X)] - E[log(1 - D(G(Z)))], gradients for D only.

    ``noise_real`` / ``noise_fake`` are optional perturbations added to D's
    inputs; the training loop passes them to blur the decision boundary, and
    they are part of the input, not the objective.
    """
    B = X.shape[0]
    Zhat, _ = generate_with_cache(model, Z)
    if noise_real is not None:
        X = X + noise_real
    if noise_fake is not None:
        Zhat = Zhat + noise_fake
    a_real, cache_r = discriminate_with_cache(model, X)
    a_fake, cache_f = discriminate_with_cache(model, Zhat)
    loss = float(np.mean(_softplus(-a_real)) + np.mean(_softplus(a_fake)))
    da_real = (_sigmoid(a_real) - 1.0) / B
    da_fake = _sigmoid(a_fake) / B
    g_disc_r, g_head_r, _ = discriminator_backward(model, cache_r, da_real)
    g_disc_f, g_head_f, _ = discriminator_backward(model, cache_f, da_fake)
    g_disc = g_disc_r.zeros_like()
    g_disc.W[:] = g_disc_r.W + g_disc_f.W
    g_disc.U[:] = g_disc_r.U + g_disc_f.U
    g_disc.b[:] = g_disc_r.b + g_disc_f.b
    g_head = g_head_r.zeros_like()
    g_head.W[:] = g_head_r.W + g_head_f.W
    g_head.b[:] = g_head_r.b + g_head_f.b
    stats = {
        "score_real": float(np.mean(_sigmoid(a_real))),
        "score_fake": float(np.mean(_sigmoid(a_fake))),
    }
    return loss, (g_disc, g_head), stats


def generator_loss_and_grads(model: GanModel, examples_Z: np.ndarray, examples_X: np.ndarray, omegas: np.ndarray):
    """Adversarial term plus lam times masked squared reconstruction.

    The saturating form E[log(1 - D(G(Z)))] is the default; the
    non-saturating flag switches to -E[log D(G(Z))]. Reconstruction is
    against the corrupted input Z itself (healthy entries), per the masked
    objective.
    """
    B = examples_Z.shape[0]
    lam = model.hyper.lam
    Zhat, cache = generate_with_cache(model, examples_Z)
    a_fake, cache_f = discriminate_with_cache(model, Zhat)
    if model.hyper.non_saturating:
        adv = float(np.mean(_softplus(-a_fake)))
        da_fake = (_sigmoid(a_fake) - 1.0) / B
    else:
        adv = float(-np.mean(_softplus(a_fake)))
        da_fake = -_sigmoid(a_fake) / B
    _, _, dZhat_adv = discriminator_backward(model, cache_f, da_fake)

    diff = (Zhat - examples_Z) * omegas
    rec = float(np.sum(diff * diff) / B)
    dZhat = dZhat_adv + lam * 2.0 * diff / B
    loss = adv + lam * rec
    g_enc, g_dec, g_proj = generator_backward(model, examples_Z, cache, dZhat)
    stats = {"score_fake": float(np.mean(_sigmoid(a_fake))), "rec": rec}
    return loss, (g_enc, g_dec, g_proj), stats


# ---------------------------------------------------------------------------
# Dataset


def windows_from_states(states: np.ndarray, w: int, stride: int = 1) -> np.ndarray:
    """All stride-spaced (n_x, w) windows of a state history, oldest first."""
    n_x, L = states.shape
    if L < w:
        return np.zeros((0, n_x, w))
    idx = np.arange(0, L - w + 1, stride)
    return np.stack([states[:, i : i + w] for i in idx], axis=0)


def _subsample_windows(n_win: int, cap: int, rng: np.random.Generator) -> np.ndarray:
    """Pick cap window indices, half from the leading quarter of the run.

    A uniform draw over a long settled run almost never lands on the initial
    transient, and a model that has only seen steady state rejects healthy
    settling dynamics. Half the budget goes to the transient head, the rest
    to the remainder.
    """
    head = max(1, n_win // 4)
    k_head = min(cap // 2, head)
    k_tail = cap - k_head
    if n_win - head < k_tail:
        return np.sort(rng.choice(n_win, size=cap, replace=False))
    picked_head = rng.choice(head, size=k_head, replace=False)
    picked_tail = head + rng.choice(n_win - head, size=k_tail, replace=False)
    return np.sort(np.concatenate([picked_head, picked_tail]))


def build_dataset(
    trajectories,
    gen_masks: list[np.ndarray],
    block_sizes: list[int],
    w: int,
    seed: int,
    bias_fraction: float = 0.20,
    max_windows_per_trajectory: int | None = None,
    peaks: np.ndarray | None = None,
) -> tuple[list[TrainingExample], Normalization, np.ndarray]:
    """Window, corrupt, and normalize trajectories into training examples.

    Every window pairs with each non-trivial mask twice (DoS zeros and
    constant-bias FDI, both applied in physical units before normalization)
    and once uncorrupted under the all-ones mask. ``max_windows_per_trajectory``
    takes a seeded subsample per trajectory to keep desk-scale training
    tractable; None keeps every stride-1 window.
    """
    rng = np.random.default_rng(seed)
    if peaks is None:
        peaks = compute_peak_amplitudes(trajectories)
    per_traj = []
    for k, traj in enumerate(trajectories):
        wins = windows_from_states(traj.states, w)
        if wins.shape[0] == 0:
            warnings.warn(f"trajectory {k} shorter than w={w}; skipped", RuntimeWarning)
            continue
        if max_windows_per_trajectory is not None and wins.shape[0] > max_windows_per_trajectory:
            wins = wins[_subsample_windows(wins.shape[0], max_windows_per_trajectory, rng)]
        per_traj.append(wins)
    if not per_traj:
        raise ValueError("no trajectory long enough to window")
    clean = np.concatenate(per_traj, axis=0)
    norm = fit_normalization(clean)

    examples = []
    expanded = [expand_mask(gm, block_sizes, w) for gm in gen_masks]
    for X_raw in clean:
        examples.extend(
            corrupted_examples_for_window(
                X_raw, norm, gen_masks, expanded, peaks, bias_fraction, rng
            )
        )
    return examples, norm, peaks


def corrupted_examples_for_window(
    X_raw: np.ndarray,
    norm: Normalization,
    gen_masks: list[np.ndarray],
    expanded: list[np.ndarray],
    peaks: np.ndarray,
    bias_fraction: float,
    rng: np.random.Generator,
) -> list[TrainingExample]:
    """Pair one clean raw window with every mask's corrupted variants."""
    examples = []
    X = norm.normalize(X_raw)
    for gm, Omega in zip(gen_masks, expanded):
        attacked = np.flatnonzero(gm == 0.0)
        if attacked.size == 0:
            examples.append(TrainingExample(Z=X.copy(), X=X, Omega=Omega))
            continue
        rows = Omega[:, 0] == 0.0
        dos_raw = X_raw.copy()
        dos_raw[rows, :] = 0.0
        examples.append(
            TrainingExample(Z=norm.normalize(dos_raw), X=X, Omega=Omega)
        )
        signs = rng.choice(np.array([-1.0, 1.0]), size=int(rows.sum()))
        fdi_raw = X_raw.copy()
        fdi_raw[rows, :] += (signs * bias_fraction * peaks[rows])[:, None]
        examples.append(
            TrainingExample(Z=norm.normalize(fdi_raw), X=X, Omega=Omega)
        )
    return examples


# ---------------------------------------------------------------------------
# Training


def _apply_grads(params: list[ParamTensor], grads: list[np.ndarray], state: AdamState):
    adam_step(params, grads, state)


def train_gan(
    examples: list[TrainingExample],
    hyper: GanHyper,
    seed: int,
    n_x: int,
    normalization: Normalization,
) -> GanModel:
    """Alternating minibatch training; returns the model with history embedded."""
    if not examples:
        raise ValueError("training dataset is empty")
    model = init_gan(n_x, hyper, seed, normalization)
    g_params = model.generator_parameters()
    d_params = model.discriminator_parameters()
    g_adam = AdamState.for_params(g_params, lr=hyper.lr_g)
    d_adam = AdamState.for_params(d_params, lr=hyper.lr_d)
    rng = np.random.default_rng(seed + 1)

    Z_all = np.stack([ex.Z for ex in examples])
    X_all = np.stack([ex.X for ex in examples])
    O_all = np.stack([ex.Omega for ex in examples])
    N = len(examples)
    bs = hyper.batch_size

    history = {"d_score_real": [], "g_score_fake": [], "loss_d": [], "loss_g": [], "loss_rec": []}
    sigma = hyper.d_input_noise
    for epoch in range(hyper.epochs):
        order = rng.permutation(N)
        real_scores, fake_scores, ld_acc, lg_acc, rec_acc = [], [], [], [], []
        for start in range(0, N, bs):
            sel = order[start : start + bs]
            Z, X, O = Z_all[sel], X_all[sel], O_all[sel]
            for _ in range(hyper.d_steps):
                noise_r = sigma * rng.standard_normal(X.shape) if sigma > 0 else None
                noise_f = sigma * rng.standard_normal(X.shape) if sigma > 0 else None
                loss_d, (g_disc, g_head), d_stats = discriminator_loss_and_grads(
                    model, X, Z, noise_real=noise_r, noise_fake=noise_f
                )
                if not np.isfinite(loss_d):
                    raise NumericError(
                        f"discriminator loss non-finite at epoch {epoch}, batch {start // bs}"
                    )
                # advantage 0.5 means D is at chance, 1.0 that it separates
                # perfectly; updating only below the gate stops the usual
                # runaway where D saturates and G's gradient dies
                advantage = 0.5 * (d_stats["score_real"] + 1.0 - d_stats["score_fake"])
                if advantage < hyper.d_gate:
                    _apply_grads(
                        d_params, [g_disc.W, g_disc.U, g_disc.b, g_head.W, g_head.b], d_adam
                    )
            loss_g, (g_enc, g_dec, g_proj), g_stats = generator_loss_and_grads(model, Z, X, O)
            if not np.isfinite(loss_g):
                raise NumericError(
                    f"generator loss non-finite at epoch {epoch}, batch {start // bs}"
                )
            _apply_grads(
                g_params,
                [g_enc.W, g_enc.U, g_enc.b, g_dec.W, g_dec.U, g_dec.b, g_proj.W, g_proj.b],
                g_adam,
            )
            real_scores.append(d_stats["score_real"])
            fake_scores.append(g_stats["score_fake"])
            ld_acc.append(loss_d)
            lg_acc.append(loss_g)
            rec_acc.append(g_stats["rec"])
        history["d_score_real"].append(float(np.mean(real_scores)))
        history["g_score_fake"].append(float(np.mean(fake_scores)))
        history["loss_d"].append(float(np.mean(ld_acc)))
        history["loss_g"].append(float(np.mean(lg_acc)))
        history["loss_rec"].append(float(np.mean(rec_acc)))
    model.history = history
    return model


# ---------------------------------------------------------------------------
# Checkpointing


def save_gan(model: GanModel, path) -> None:
    layers = model.parameters()
    save_checkpoint(
        path,
        layers,
        normalization={
            "mean": model.normalization.mean.tolist(),
            "scale": model.normalization.scale.tolist(),
        },
        hyperparameters=dict(model.hyper.to_dict(), n_x=model.n_x),
        history=model.history,
    )


def load_gan(path) -> GanModel:
    doc = load_checkpoint(path)
    hp = dict(doc["hyperparameters"])
    n_x = int(hp.pop("n_x"))
    hyper = GanHyper(**hp)
    arrays = doc["arrays"]
    model = GanModel(
        enc=LstmParams(W=arrays["enc.W"], U=arrays["enc.U"], b=arrays["enc.b"]),
        dec=LstmParams(W=arrays["dec.W"], U=arrays["dec.U"], b=arrays["dec.b"]),
        proj=DenseParams(W=arrays["proj.W"], b=arrays["proj.b"]),
        disc=LstmParams(W=arrays["disc.W"], U=arrays["disc.U"], b=arrays["disc.b"]),
        head=DenseParams(W=arrays["head.W"], b=arrays["head.b"]),
        normalization=Normalization(
            mean=np.asarray(doc["normalization"]["mean"]),
            scale=np.asarray(doc["normalization"]["scale"]),
        ),
        hyper=hyper,
        n_x=n_x,
        history=doc.get("history") or {},
    )
    return model
