"""Per-layer root-NMSE target allocation under a client-energy budget.

Uniform profiles share one target across layers.  Mixed profiles are found
by reparameterizing the per-layer precision weights through a softmax over
unconstrained logits, which enforces the weighted energy budget exactly at
every iterate, and descending the noisy-inference cross entropy with Adam.
The pathwise gradient flows through the noise reparameterization
noise = eps_l * sqrt(s_ref_l) * g, computed by the network's own
reverse-mode pass; the network weights stay frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cnn import (CnnModel, backward_batch, calibrate_sref, forward_batch,
                  softmax_cross_entropy)
from .phymetrics import (InfeasibleError, LayerSpec, SystemParams,
                         client_energy_coefficient, compute_kappa)


class BudgetExhaustedError(ValueError):
    """The budget cannot cover the per-layer precision floors."""


@dataclass
class PrecisionProfile:
    """Per-layer root-NMSE targets (all clients share a layer's target)."""

    eps: np.ndarray      # (L,)
    gamma: np.ndarray    # (L,) = 1 / eps^2
    mode: str            # 'uniform' or 'mixed'

    def __post_init__(self):
        self.eps = np.asarray(self.eps, dtype=float)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if np.any(self.eps <= 0):
            raise ValueError("eps targets must be positive")
        if np.max(np.abs(self.gamma * self.eps ** 2 - 1.0)) > 1e-12:
            raise ValueError("gamma inconsistent with eps")

    @classmethod
    def uniform(cls, eps_shared: float, n_layers: int) -> "PrecisionProfile":
        eps = np.full(n_layers, float(eps_shared))
        return cls(eps, 1.0 / eps ** 2, "uniform")


@dataclass(frozen=True)
class BudgetSpec:
    """Weighted client-energy budget with a per-layer precision floor."""

    gamma0: float
    omega: np.ndarray
    gamma_min: float = 0.25

    def __post_init__(self):
        object.__setattr__(self, "omega", np.asarray(self.omega, dtype=float))
        if np.any(self.omega <= 0):
            raise ValueError("omega weights must be positive")
        if self.gamma_min <= 0:
            raise ValueError("gamma_min must be positive")


@dataclass
class AdamConfig:
    steps: int = 200
    batch: int = 128
    eta: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    holdout_frac: float = 0.1
    eval_every: int = 10
    eval_trials: int = 2


@dataclass
class AdamState:
    z: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    eta: float = 0.05

    def step(self, grad: np.ndarray, beta1: float, beta2: float) -> None:
        if not np.all(np.isfinite(grad)):
            return  # skip a pathological mini-batch
        self.t += 1
        self.m = beta1 * self.m + (1 - beta1) * grad
        self.v = beta2 * self.v + (1 - beta2) * grad ** 2
        m_hat = self.m / (1 - beta1 ** self.t)
        v_hat = self.v / (1 - beta2 ** self.t)
        self.z = self.z - self.eta * m_hat / (np.sqrt(v_hat) + 1e-8)


@dataclass
class MixedPrecisionResult:
    profile: PrecisionProfile
    z: np.ndarray
    budget_trace: list[float]     # sum(omega * gamma) at every iterate
    loss_trace: list[float]
    best_step: int


def omega_weights(layers: list[LayerSpec], n_clients: int,
                  sp: SystemParams) -> np.ndarray:
    """Budget weight of each layer: sum_k c_k / (a_max^2 kappa)."""
    kappa = compute_kappa(sp)
    return np.array([n_clients * client_energy_coefficient(layer, sp)
                     / (sp.a_max ** 2 * kappa) for layer in layers])


def closed_form_energy_lambda0(eps_k, c_k, a_max: float, kappa: float,
                               beta_max: float | None = None) -> float:
    """Minimum client waveform energy with the BS power cap inactive.

    With beta_max given, the gain-floor feasibility of every target is
    checked first.
    """
    eps_k = np.asarray(eps_k, dtype=float)
    c_k = np.broadcast_to(np.asarray(c_k, dtype=float), eps_k.shape)
    if beta_max is not None:
        u = np.sqrt(1.0 / (kappa * eps_k ** 2))
        bad = np.nonzero(u > a_max * beta_max)[0]
        if bad.size:
            raise InfeasibleError("targets exceed the reachable gain range",
                                  clients=bad + 1)
    return float(np.sum(c_k / eps_k ** 2) / (a_max ** 2 * kappa))


def shares_to_targets(z, budget: BudgetSpec) -> PrecisionProfile:
    """Softmax budget shares -> per-layer gamma and eps, budget tight."""
    z = np.asarray(z, dtype=float)
    floor = float(np.sum(budget.omega * budget.gamma_min))
    residual = budget.gamma0 - floor
    if residual <= 0:
        raise BudgetExhaustedError(
            f"budget {budget.gamma0} cannot cover the floor {floor}")
    shares = softmax(z)
    gamma = budget.gamma_min + residual * shares / budget.omega
    eps = gamma ** -0.5
    return PrecisionProfile(eps, gamma, "mixed")


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - np.max(z))
    return e / e.sum()


def budget_from_uniform(eps_shared: float, layers: list[LayerSpec],
                        n_clients: int, sp: SystemParams) -> float:
    """Budget spent by the uniform profile: sum_l omega_l / eps^2."""
    return float(np.sum(omega_weights(layers, n_clients, sp))
                 / eps_shared ** 2)


def uniform_logits(budget: BudgetSpec) -> np.ndarray:
    """Logits whose softmax reproduces the uniform-gamma profile under the
    budget (shares proportional to the omega weights)."""
    return np.log(budget.omega / budget.omega.sum())


def _loss_and_grad(model: CnnModel, images, labels, eps: np.ndarray,
                   s_ref: np.ndarray, rng: np.random.Generator):
    """Mini-batch CE and its pathwise gradient w.r.t. the eps targets."""
    logits, cache = forward_batch(model, images, eps=eps, s_ref=s_ref,
                                  rng=rng, keep_cache=True)
    ce, _ = softmax_cross_entropy(logits, labels)
    _, _, deltas = backward_batch(model, cache, labels)
    grad_eps = np.array([
        float(np.sum(deltas[l] * cache.noise_units[l])) * math.sqrt(s_ref[l])
        for l in range(len(eps))])
    return ce, grad_eps


def _grad_z(grad_eps: np.ndarray, gamma: np.ndarray, shares: np.ndarray,
            budget: BudgetSpec) -> np.ndarray:
    """Chain rule z -> shares -> gamma -> eps."""
    residual = budget.gamma0 - float(np.sum(budget.omega * budget.gamma_min))
    d_eps_d_gamma = -0.5 * gamma ** -1.5
    d_loss_d_gamma = grad_eps * d_eps_d_gamma
    coeff = d_loss_d_gamma * residual / budget.omega
    return shares * (coeff - float(np.dot(coeff, shares)))


def optimize_mixed_precision(model: CnnModel, calib_set, budget: BudgetSpec,
                             hyper: AdamConfig, rng: np.random.Generator,
                             stats: np.ndarray | None = None,
                             z_init: np.ndarray | None = None
                             ) -> MixedPrecisionResult:
    """Minimize noisy-inference CE over the budget-constrained targets.

    Starts from the uniform-equivalent allocation, tracks the best profile
    seen on a held-out calibration split, and never leaves the budget
    surface (the parameterization is exact).
    """
    images, labels = calib_set
    if stats is None:
        stats = calibrate_sref(model, images)
    n_hold = max(1, int(hyper.holdout_frac * len(images)))
    hold_images, hold_labels = images[:n_hold], labels[:n_hold]
    fit_images, fit_labels = images[n_hold:], labels[n_hold:]
    state = AdamState(
        z=uniform_logits(budget) if z_init is None else np.asarray(z_init, float),
        m=np.zeros(len(budget.omega)), v=np.zeros(len(budget.omega)),
        eta=hyper.eta)
    holdout_seed = rng.integers(0, 2 ** 63)

    def holdout_loss(profile: PrecisionProfile) -> float:
        # common random numbers across candidates
        h_rng = np.random.default_rng(holdout_seed)
        total = 0.0
        for _ in range(hyper.eval_trials):
            logits, _ = forward_batch(model, hold_images, eps=profile.eps,
                                      s_ref=stats, rng=h_rng)
            ce, _ = softmax_cross_entropy(logits, hold_labels)
            total += ce
        return total / hyper.eval_trials

    budget_trace, loss_trace = [], []
    best_profile = shares_to_targets(state.z, budget)
    best_loss = holdout_loss(best_profile)
    best_step = 0
    for step in range(1, hyper.steps + 1):
        profile = shares_to_targets(state.z, budget)
        budget_trace.append(float(np.dot(budget.omega, profile.gamma)))
        idx = rng.integers(0, len(fit_images), size=hyper.batch)
        ce, grad_eps = _loss_and_grad(model, fit_images[idx], fit_labels[idx],
                                      profile.eps, stats, rng)
        loss_trace.append(ce)
        shares = softmax(state.z)
        state.step(_grad_z(grad_eps, profile.gamma, shares, budget),
                   hyper.beta1, hyper.beta2)
        if step % hyper.eval_every == 0 or step == hyper.steps:
            candidate = shares_to_targets(state.z, budget)
            cand_loss = holdout_loss(candidate)
            if cand_loss < best_loss:
                best_loss, best_profile, best_step = cand_loss, candidate, step
    return MixedPrecisionResult(best_profile, state.z, budget_trace,
                                loss_trace, best_step)


def profile_rows(profile: PrecisionProfile, budget: BudgetSpec) -> list[dict]:
    """CSV row schema: layer, eps, gamma, omega, budget_share."""
    total = float(np.dot(budget.omega, profile.gamma))
    return [{"layer": l + 1,
             "eps": profile.eps[l],
             "gamma": profile.gamma[l],
             "omega": budget.omega[l],
             "budget_share": budget.omega[l] * profile.gamma[l] / total}
            for l in range(len(profile.eps))]
