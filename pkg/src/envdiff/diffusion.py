"""Framework-free DDPM mathematics over an abstract denoiser.

The forward chain adds Gaussian noise over T steps,
q(Y_t | Y_{t-1}) = N(sqrt(1 - beta_t) Y_{t-1}, beta_t I), with the closed
form marginal q(Y_t | Y_0) = N(sqrt(abar_t) Y_0, (1 - abar_t) I). The
learned reverse chain is Gaussian with variance tilde(beta)_t and a mean
derived from an epsilon-prediction network. All coefficients are extracted
as Python floats, so every operation works on numpy arrays and on torch
tensors alike; noise is drawn from the caller's numpy Generator and adapted
to the grid's type.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

DenoiserFn = Callable[[object, int, object, object], object]


@dataclass
class NoiseSchedule:
    """Per-step diffusion constants, 1-based steps stored at index t-1."""

    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    posterior_var: np.ndarray
    beta_start: float
    beta_end: float


def build_schedule(
    T: int = 100, beta_start: float = 1e-4, beta_end: float = 0.06
) -> NoiseSchedule:
    """Linear beta schedule with cached derived arrays.

    tilde(beta)_t = (1 - abar_{t-1}) / (1 - abar_t) * beta_t with abar_0 = 1,
    which forces tilde(beta)_1 = 0 exactly.
    """
    if not isinstance(T, (int, np.integer)) or T < 2:
        raise ValueError(f"T must be an integer >= 2, got {T!r}")
    if not (0.0 < beta_start < beta_end < 1.0):
        raise ValueError(
            f"need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )
    beta = np.linspace(beta_start, beta_end, T)
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    alpha_bar_prev = np.concatenate([[1.0], alpha_bar[:-1]])
    posterior_var = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    for arr in (beta, alpha, alpha_bar, posterior_var):
        arr.setflags(write=False)
    return NoiseSchedule(
        int(T), beta, alpha, alpha_bar, posterior_var, float(beta_start), float(beta_end)
    )


def schedule_report(sched: NoiseSchedule) -> dict:
    """Invariant report for audits; `violations` lists failed invariant names."""
    beta, abar, pv = sched.beta, sched.alpha_bar, sched.posterior_var
    checks = {
        "beta_in_open_unit_interval": bool(np.all((beta > 0) & (beta < 1))),
        "beta_strictly_increasing": bool(np.all(np.diff(beta) > 0)),
        "alpha_bar_strictly_decreasing": bool(np.all(np.diff(abar) < 0)),
        "posterior_var_first_step_zero": bool(pv[0] == 0.0),
        "posterior_var_bounded_by_beta": bool(np.all((pv >= 0) & (pv <= beta + 1e-15))),
        "terminal_alpha_bar_below_0.05": bool(abar[-1] < 0.05),
    }
    return {
        "T": sched.T,
        "beta_start": sched.beta_start,
        "beta_end": sched.beta_end,
        "terminal_alpha_bar": float(abar[-1]),
        "posterior_var_t1": float(pv[0]),
        "checks": checks,
        "violations": [k for k, ok in checks.items() if not ok],
    }


def dump_schedule(sched: NoiseSchedule, path) -> None:
    """Write the schedule as structured text for reproducibility audits."""
    payload = {
        "T": sched.T,
        "beta_start": sched.beta_start,
        "beta_end": sched.beta_end,
        "beta": [float(b) for b in sched.beta],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n")


def load_schedule(path) -> NoiseSchedule:
    """Rebuild a schedule dumped by ``dump_schedule``."""
    payload = json.loads(Path(path).read_text())
    sched = build_schedule(
        int(payload["T"]), float(payload["beta_start"]), float(payload["beta_end"])
    )
    if not np.allclose(sched.beta, np.asarray(payload["beta"]), rtol=0, atol=1e-12):
        raise ValueError(f"schedule file {path} is inconsistent with its parameters")
    return sched


def _check_t(t: int, sched: NoiseSchedule) -> int:
    if not 1 <= t <= sched.T:
        raise ValueError(f"step t={t} outside 1..{sched.T}")
    return int(t)


def _check_same_shape(a, b, what: str) -> None:
    if tuple(a.shape) != tuple(b.shape):
        raise ValueError(f"{what}: shape {tuple(a.shape)} != {tuple(b.shape)}")


def _noise_like(grid, rng: np.random.Generator):
    """Standard normal of the grid's shape, adapted to the grid's type."""
    z = rng.standard_normal(tuple(grid.shape))
    if hasattr(grid, "new_tensor"):
        return grid.new_tensor(z)
    return z


def forward_marginal(Y0, t: int, eps, sched: NoiseSchedule):
    """Closed-form marginal: sqrt(abar_t) Y0 + sqrt(1 - abar_t) eps."""
    t = _check_t(t, sched)
    _check_same_shape(Y0, eps, "forward_marginal")
    ab = float(sched.alpha_bar[t - 1])
    return math.sqrt(ab) * Y0 + math.sqrt(1.0 - ab) * eps


def forward_step(Y_prev, t: int, sched: NoiseSchedule, rng: np.random.Generator):
    """One forward noising step: sqrt(1 - beta_t) Y_{t-1} + sqrt(beta_t) z."""
    t = _check_t(t, sched)
    b = float(sched.beta[t - 1])
    return math.sqrt(1.0 - b) * Y_prev + math.sqrt(b) * _noise_like(Y_prev, rng)


def reverse_step(Y_t, t: int, eps_hat, sched: NoiseSchedule, rng: np.random.Generator):
    """One learned reverse step; deterministic at t == 1.

    mu = (Y_t - beta_t / sqrt(1 - abar_t) * eps_hat) / sqrt(alpha_t), to which
    sqrt(tilde(beta)_t) z is added for t > 1.
    """
    t = _check_t(t, sched)
    _check_same_shape(Y_t, eps_hat, "reverse_step")
    a = float(sched.alpha[t - 1])
    b = float(sched.beta[t - 1])
    ab = float(sched.alpha_bar[t - 1])
    mu = (Y_t - (b / math.sqrt(1.0 - ab)) * eps_hat) / math.sqrt(a)
    if t == 1:
        return mu
    pv = float(sched.posterior_var[t - 1])
    return mu + math.sqrt(pv) * _noise_like(Y_t, rng)


def sample(
    denoiser: DenoiserFn,
    X_c,
    z_r,
    shape: tuple,
    sched: NoiseSchedule,
    rng: np.random.Generator,
) -> np.ndarray:
    """Ancestral sampling from pure noise down to Y0 (normalized domain)."""
    Y = rng.standard_normal(shape)
    for t in range(sched.T, 0, -1):
        eps_hat = denoiser(Y, t, X_c, z_r)
        if tuple(eps_hat.shape) != tuple(Y.shape):
            raise ValueError(
                f"denoiser returned shape {tuple(eps_hat.shape)}, "
                f"expected {tuple(Y.shape)}"
            )
        Y = reverse_step(Y, t, eps_hat, sched, rng)
    return Y


def training_loss(
    denoiser: DenoiserFn,
    Y0,
    X_c,
    z_r,
    sched: NoiseSchedule,
    rng: np.random.Generator,
):
    """Epsilon-prediction objective for one draw.

    Draws t uniform in {1..T} first, then eps ~ N(0, I), in that order, forms
    Y_t via the closed-form marginal, and returns the mean squared residual
    between eps and the denoiser output. When the denoiser returns a tensor
    with autograd state, the returned scalar keeps it.
    """
    t = int(rng.integers(1, sched.T + 1))
    eps = _noise_like(Y0, rng)
    Y_t = forward_marginal(Y0, t, eps, sched)
    eps_hat = denoiser(Y_t, t, X_c, z_r)
    _check_same_shape(eps, eps_hat, "training_loss")
    r = eps - eps_hat
    loss = (r * r).mean()
    if hasattr(loss, "backward"):
        return loss
    return float(loss)


def zero_denoiser_variance(sched: NoiseSchedule) -> float:
    """Closed-form per-cell output variance of `sample` with denoiser == 0.

    Propagates v_{t-1} = v_t / alpha_t + tilde(beta)_t down from v_T = 1.
    """
    v = 1.0
    for t in range(sched.T, 0, -1):
        v = v / float(sched.alpha[t - 1]) + float(sched.posterior_var[t - 1])
    return v
