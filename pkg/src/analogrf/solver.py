"""Joint beamformer / client-scaling design for one NN layer.

The non-convex coupling between the broadcast beamformer and the per-client
scalings is handled in three exact steps: the energy-minimizing scaling for a
fixed beamformer is closed form (beta = u / gain, the gain constraint tight);
the beamformer can be restricted to the span of the client channels without
loss (an orthonormal basis of that span turns N_t complex unknowns into
r <= K); and the remaining reciprocal-gain objective is minimized by
successive convex approximation, each convex subproblem solved by a damped
Newton log-barrier scheme over the 2r real coordinates.  No external solver
is involved.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.optimize

from .phymetrics import (InfeasibleError, LayerSpec, SystemParams,
                         client_energy_coefficient, compute_kappa,
                         required_gain, tw_schedule)

SCA_REL_TOL = 1e-6         # stop when the objective stalls
OBJ_DESCENT_TOL = 1e-8     # accepted relative surrogate increase
KKT_TOL = 1e-6
RANK_TOL = 1e-10           # times ||H||_F, QR pivot threshold
BARRIER_MU_MIN = 1e-9
BARRIER_MU_FACTOR = 0.1
NEWTON_MAX_STEPS = 80


class InfeasibleClientError(InfeasibleError):
    """A client's required gain cannot be met even at the scaling cap."""


class InfeasibleLayerError(InfeasibleError):
    """The per-layer problem has no feasible design."""


class SubproblemInfeasibleError(InfeasibleError):
    """A convex subproblem has an empty (or numerically empty) interior."""


@dataclass
class LayerProblem:
    """Constants of the per-layer design problem after gain elimination."""

    h: np.ndarray               # (N_t, K) channels
    u: np.ndarray               # (K,) required end-to-end gains
    chi: np.ndarray             # (K,) c_k * u_k^2, client energy numerators
    lam: float
    bs_energy_coeff: float      # lam * (T_w / eta_bs) * P_w0
    a_max: float
    beta_max: float
    p_wmax_over_pw0: float
    i_max: int = 30


@dataclass
class PhyDesign:
    """Solved physical-layer design for one layer."""

    f: np.ndarray                 # (N_t,) beamformer
    beta: np.ndarray              # (K,) client scalings
    b: np.ndarray                 # subspace coordinates, f = U @ b
    objective_trace: list[float]
    feasible: bool
    iterations: int


@dataclass
class Surrogate:
    """Affine lower bounds on the squared gains, tight at the expansion point.

    ubar_k(v) = G[k] @ v - d[k] satisfies ubar_k(v_i) = |a_k|^2 and
    ubar_k(v) <= |gain_k(v)|^2 everywhere.
    """

    v_i: np.ndarray          # (2r,) expansion point, real coordinates
    a_i: np.ndarray          # (K,) gains at the expansion point
    g_mat: np.ndarray        # (K, 2r)
    d: np.ndarray            # (K,)

    def ubar(self, v: np.ndarray) -> np.ndarray:
        return self.g_mat @ v - self.d


class _RealGainMap:
    """Real parameterization v = [Re b; Im b] of the reduced channels."""

    def __init__(self, h_tilde: np.ndarray):
        self.r = h_tilde.shape[0]
        self.k = h_tilde.shape[1]
        hr = h_tilde.real.T   # (K, r)
        hi = h_tilde.imag.T
        self.p_mat = np.hstack([hr, hi])    # Re(h^H b)
        self.q_mat = np.hstack([-hi, hr])   # Im(h^H b)

    def gains(self, v: np.ndarray) -> np.ndarray:
        return self.p_mat @ v + 1j * (self.q_mat @ v)

    @staticmethod
    def to_real(b: np.ndarray) -> np.ndarray:
        return np.concatenate([b.real, b.imag])

    @staticmethod
    def to_complex(v: np.ndarray) -> np.ndarray:
        r = v.size // 2
        return v[:r] + 1j * v[r:]


def subspace_reduce(h: np.ndarray) -> tuple[np.ndarray, np.ndarray, int]:
    """Orthonormal basis U of the channel span and reduced channels U^H @ H."""
    h = np.asarray(h, dtype=complex)
    norm = np.linalg.norm(h)
    if norm == 0:
        raise ValueError("channel matrix is zero")
    # plain QR first: when its diagonal certifies full column rank the basis
    # is exact and cheap; otherwise fall back to the pivoted factorization
    q, r = np.linalg.qr(h)
    diag = np.diag(r)
    if not np.all(np.abs(diag) > RANK_TOL * norm):
        q, r, _ = scipy.linalg.qr(h, mode="economic", pivoting=True)
        diag = np.diag(r)
    rank = int(np.sum(np.abs(diag) > RANK_TOL * norm))
    rank = max(rank, 1)
    # real-positive diagonal convention so a single channel reduces to its norm
    phases = np.where(np.abs(diag[:rank]) > 0,
                      diag[:rank] / np.abs(diag[:rank]), 1.0)
    u = q[:, :rank] * phases[None, :]
    h_tilde = u.conj().T @ h
    return u, h_tilde, rank


def optimal_beta(a: complex, u: float, beta_max: float) -> complex:
    """Energy-minimizing client scaling: gain constraint tight, phase aligned."""
    if u <= 0:
        raise ValueError("u must be positive")
    mag = abs(a)
    if mag * beta_max < u * (1.0 - 1e-12):
        raise InfeasibleClientError(
            f"|a|={mag:.4g} below u/beta_max={u / beta_max:.4g}")
    return u / a


def mrt_init(h_tilde: np.ndarray, sp: SystemParams) -> np.ndarray:
    """Sum-of-channels direction at full BS power, downscaled once if it
    violates the mixer gain cap."""
    norms = np.linalg.norm(h_tilde, axis=0)
    b_ref = h_tilde.sum(axis=1)
    if np.linalg.norm(b_ref) < 1e-12 * norms.max():
        b_ref = h_tilde[:, 0].copy()  # cancelling channels: fall back to one
    b0 = math.sqrt(sp.p_wmax_w / sp.p_w0_w) * b_ref / np.linalg.norm(b_ref)
    peak = np.abs(h_tilde.conj().T @ b0).max()
    if peak > sp.a_max:
        b0 *= sp.a_max / peak
    return b0


def build_surrogate(b_i: np.ndarray, h_tilde: np.ndarray,
                    problem: LayerProblem) -> Surrogate:
    if not np.all(np.isfinite(b_i)):
        raise ValueError("expansion point must be finite")
    gmap = _RealGainMap(h_tilde)
    v_i = gmap.to_real(np.asarray(b_i, dtype=complex))
    a_i = gmap.gains(v_i)
    g_mat = 2.0 * (a_i.real[:, None] * gmap.p_mat
                   + a_i.imag[:, None] * gmap.q_mat)
    d = np.abs(a_i) ** 2
    return Surrogate(v_i, a_i, g_mat, d)


class _BarrierModel:
    """Normalized surrogate objective plus log barrier over the constraints.

    Constraint slacks (all required > 0):
      affine:  ubar_k(v) - u_k^2/beta_max^2
      ball:    P_wmax/P_w0 - ||v||^2
      caps:    a_max^2 - |gain_k(v)|^2
    """

    def __init__(self, surr: Surrogate, problem: LayerProblem,
                 gmap: _RealGainMap, obj_scale: float):
        self.surr = surr
        self.gmap = gmap
        self.w_bs = problem.bs_energy_coeff / obj_scale
        self.chi = (1.0 - problem.lam) * problem.chi / obj_scale
        self.t_min = problem.u ** 2 / problem.beta_max ** 2
        self.ball = problem.p_wmax_over_pw0
        self.cap_sq = problem.a_max ** 2

    def slacks(self, v):
        ubar = self.surr.ubar(v)
        re = self.gmap.p_mat @ v
        im = self.gmap.q_mat @ v
        s_aff = ubar - self.t_min
        s_ball = self.ball - v @ v
        s_cap = self.cap_sq - (re ** 2 + im ** 2)
        return ubar, s_aff, s_ball, s_cap, re, im

    def in_domain(self, v) -> bool:
        ubar, s_aff, s_ball, s_cap, _, _ = self.slacks(v)
        return (ubar.min() > 0 and s_aff.min() > 0 and s_ball > 0
                and s_cap.min() > 0)

    def objective(self, v) -> float:
        ubar = self.surr.ubar(v)
        return self.w_bs * (v @ v) + float(np.sum(self.chi / ubar))

    def potential(self, v, mu) -> float:
        ubar, s_aff, s_ball, s_cap, _, _ = self.slacks(v)
        if ubar.min() <= 0 or s_aff.min() <= 0 or s_ball <= 0 or s_cap.min() <= 0:
            return np.inf
        barrier = -(np.log(s_aff).sum() + math.log(s_ball)
                    + np.log(s_cap).sum())
        return self.objective(v) + mu * barrier

    def grad_hess(self, v, mu):
        ubar, s_aff, s_ball, s_cap, re, im = self.slacks(v)
        g_mat, p_mat, q_mat = self.surr.g_mat, self.gmap.p_mat, self.gmap.q_mat
        n = v.size
        # objective
        grad = 2.0 * self.w_bs * v - g_mat.T @ (self.chi / ubar ** 2)
        rows = [g_mat]
        weights = [2.0 * self.chi / ubar ** 3]
        # affine barrier
        grad -= mu * (g_mat.T @ (1.0 / s_aff))
        rows.append(g_mat)
        weights.append(mu / s_aff ** 2)
        # ball barrier
        grad += mu * 2.0 * v / s_ball
        rows.append(v[None, :])
        weights.append(np.array([4.0 * mu / s_ball ** 2]))
        hess_diag = 2.0 * self.w_bs + 2.0 * mu / s_ball
        # gain-cap barrier
        w_rows = re[:, None] * p_mat + im[:, None] * q_mat  # 0.5 * grad of |gain|^2
        grad += mu * 2.0 * (w_rows.T @ (1.0 / s_cap))
        rows.extend([p_mat, q_mat, w_rows])
        weights.extend([2.0 * mu / s_cap, 2.0 * mu / s_cap,
                        4.0 * mu / s_cap ** 2])
        a_stack = np.vstack(rows)
        w_stack = np.concatenate(weights)
        hess = a_stack.T @ (w_stack[:, None] * a_stack)
        hess[np.diag_indices(n)] += hess_diag
        return grad, hess

    def kkt_residual(self, v) -> float:
        """Stationarity residual with multipliers fit on the active set."""
        ubar, s_aff, s_ball, s_cap, re, im = self.slacks(v)
        grad_f = 2.0 * self.w_bs * v - self.surr.g_mat.T @ (self.chi / ubar ** 2)
        cons_grads = []
        for k in range(len(s_aff)):
            cons_grads.append((s_aff[k], self.surr.g_mat[k],
                               np.linalg.norm(self.surr.g_mat[k])))
        cons_grads.append((s_ball, -2.0 * v, 2.0 * np.linalg.norm(v)))
        w_rows = re[:, None] * self.gmap.p_mat + im[:, None] * self.gmap.q_mat
        for k in range(len(s_cap)):
            cons_grads.append((s_cap[k], -2.0 * w_rows[k],
                               2.0 * np.linalg.norm(w_rows[k])))
        active = [g for s, g, gn in cons_grads
                  if gn > 0 and s / gn < 1e-5 * (1.0 + np.linalg.norm(v))]
        scale = max(np.linalg.norm(grad_f), 1e-30)
        if not active:
            return float(np.linalg.norm(grad_f) / scale)
        a_mat = np.array(active).T  # (2r, n_active); grad_f = A @ mult, mult >= 0
        mult, _ = scipy.optimize.nnls(a_mat, grad_f)
        return float(np.linalg.norm(grad_f - a_mat @ mult) / scale)


def _newton_minimize(model: _BarrierModel, v: np.ndarray, mu: float,
                     tol: float) -> np.ndarray:
    for _ in range(NEWTON_MAX_STEPS):
        grad, hess = model.grad_hess(v, mu)
        try:
            chol = scipy.linalg.cho_factor(hess, check_finite=False)
            step = -scipy.linalg.cho_solve(chol, grad, check_finite=False)
        except scipy.linalg.LinAlgError:
            jitter = 1e-10 * np.trace(hess) / hess.shape[0]
            hess[np.diag_indices_from(hess)] += max(jitter, 1e-30)
            step = -np.linalg.solve(hess, grad)
        decrement_sq = float(-grad @ step)
        if decrement_sq <= 2.0 * tol:
            break
        base = model.potential(v, mu)
        t = 1.0
        slope = 0.25 * float(grad @ step)
        while (not model.in_domain(v + t * step)
               or model.potential(v + t * step, mu) > base + t * slope):
            t *= 0.5
            if t < 1e-14:
                return v  # stalled: boundary-pinned, caller re-centers
        v = v + t * step
    return v


def solve_subproblem(surr: Surrogate, problem: LayerProblem,
                     h_tilde: np.ndarray, mu_start: float = 1.0) -> np.ndarray:
    """Minimize the convex surrogate; returns coordinates no worse than the
    expansion point, unchanged when it is already stationary.

    mu_start < 1 warm-starts the barrier path for expansion points already
    near the optimum (later SCA rounds).
    """
    gmap = _RealGainMap(h_tilde)
    v0 = surr.v_i.copy()
    raw = _BarrierModel(surr, problem, gmap, 1.0)
    if not raw.in_domain(v0):
        bad = np.nonzero(raw.slacks(v0)[1] <= 0)[0]
        raise SubproblemInfeasibleError(
            "expansion point infeasible for the surrogate", clients=bad + 1)
    obj_scale = max(abs(raw.objective(v0)), 1e-300)
    model = _BarrierModel(surr, problem, gmap, obj_scale)
    if model.kkt_residual(v0) <= KKT_TOL:
        return gmap.to_complex(v0)
    v = v0
    mu = mu_start
    while mu >= BARRIER_MU_MIN:
        v = _newton_minimize(model, v, mu, tol=max(mu * 1e-3, 1e-12))
        mu *= BARRIER_MU_FACTOR
    if model.objective(v) > model.objective(v0) * (1.0 + OBJ_DESCENT_TOL):
        return gmap.to_complex(v0)
    return gmap.to_complex(v)


def _true_objective(b: np.ndarray, h_tilde: np.ndarray,
                    problem: LayerProblem) -> float:
    gains = h_tilde.conj().T @ b
    client = np.sum((1.0 - problem.lam) * problem.chi / np.abs(gains) ** 2)
    return float(problem.bs_energy_coeff * np.vdot(b, b).real + client)


def _interior_candidate(b: np.ndarray, h_tilde: np.ndarray,
                        problem: LayerProblem) -> np.ndarray | None:
    """Scale a candidate point back inside the power/cap boundaries;
    None when the gain floors cannot survive the shrink."""
    shrink = 1.0 - 1e-9
    norm = np.linalg.norm(b)
    if norm == 0:
        return None
    bc = b * min(1.0, math.sqrt(problem.p_wmax_over_pw0) / norm * shrink)
    gains = h_tilde.conj().T @ bc
    peak = np.abs(gains).max()
    if peak > problem.a_max * shrink:
        bc = bc * (problem.a_max * shrink / peak)
        gains = h_tilde.conj().T @ bc
    if np.any(np.abs(gains) * problem.beta_max < problem.u * (1.0 + 1e-9)):
        return None
    return bc


def _phase_sweeps(targets: np.ndarray, gram_inv: np.ndarray,
                  sweeps: int = 4) -> np.ndarray:
    """Cyclic coordinate descent on the gain phases, minimizing the power
    t^H G^{-1} t of the least-norm beamformer at fixed magnitudes."""
    t = targets.copy()
    k = t.size
    for _ in range(sweeps):
        for j in range(k):
            coupling = gram_inv[j] @ t - gram_inv[j, j] * t[j]
            mag = abs(coupling)
            if mag > 0:
                t[j] = -abs(t[j]) * coupling / mag
    return t


def _magnitude_resplit(w: np.ndarray, m_mat: np.ndarray,
                       problem: LayerProblem) -> np.ndarray | None:
    """Convex re-split of the gain magnitudes at frozen phases.

    The least-norm beamformer power is the quadratic w' M w, so the layer
    objective restricted to this slice is a small barrier-Newton problem in
    the K magnitudes, boxed by the gain floors and the mixer cap.
    """
    k = w.size
    lo = problem.u / problem.beta_max * (1.0 + 1e-6)
    hi = np.full(k, problem.a_max * (1.0 - 1e-9))
    if np.any(lo >= hi):
        return None
    pad = 1e-6 * (hi - lo)
    w = np.clip(w, lo + pad, hi - pad)
    r_cap = problem.p_wmax_over_pw0
    power = float(w @ (m_mat @ w))
    if power >= r_cap * (1.0 - 1e-12):
        shrink = math.sqrt(r_cap * (1.0 - 1e-6) / power)
        w = w * shrink
        if np.any(w <= lo):
            return None
    chi_eff = (1.0 - problem.lam) * problem.chi
    w_bs = problem.bs_energy_coeff
    scale = max(w_bs * float(w @ (m_mat @ w))
                + float(np.sum(chi_eff / w ** 2)), 1e-300)

    def potential(wc, mu):
        s = r_cap - wc @ (m_mat @ wc)
        if s <= 0 or np.any(wc <= lo) or np.any(wc >= hi):
            return np.inf
        return ((w_bs * (wc @ (m_mat @ wc)) + float(np.sum(chi_eff / wc ** 2)))
                / scale - mu * (math.log(s) + np.log(wc - lo).sum()
                                + np.log(hi - wc).sum()))

    mu = 1e-2
    while mu >= 1e-9:
        for _ in range(40):
            mw = m_mat @ w
            s_ball = r_cap - w @ mw
            grad = (2 * w_bs * mw - 2 * chi_eff / w ** 3) / scale
            grad += mu * (2 * mw / s_ball - 1 / (w - lo) + 1 / (hi - w))
            hess = (2 * w_bs / scale) * m_mat
            hess += mu * (2 * m_mat / s_ball
                          + 4 * np.outer(mw, mw) / s_ball ** 2)
            hess[np.diag_indices(k)] += (6 * chi_eff / w ** 4 / scale
                                         + mu * (1 / (w - lo) ** 2
                                                 + 1 / (hi - w) ** 2))
            try:
                step = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                return w
            if -grad @ step <= 2e-12:
                break
            t = 1.0
            base = potential(w, mu)
            slope = 0.25 * float(grad @ step)
            while potential(w + t * step, mu) > base + t * slope:
                t *= 0.5
                if t < 1e-14:
                    return w
            w = w + t * step
        mu *= 0.1
    return w


def _gain_split_candidate(b: np.ndarray, h_tilde: np.ndarray,
                          problem: LayerProblem,
                          rounds: int = 3) -> np.ndarray | None:
    """Alternating exact refinement of the gain targets.

    Alternates phase coordinate descent (minimizing the least-norm power at
    fixed magnitudes) with the convex magnitude re-split at fixed phases,
    then maps the targets back through the least-norm beamformer.  Offered
    to the outer iteration as a descent candidate only; it removes the slow
    power-redistribution and phase-alignment modes of the plain linearized
    update.
    """
    k = h_tilde.shape[1]
    if h_tilde.shape[0] < k:
        return None  # rank-deficient channels: gain targets are coupled
    gains = h_tilde.conj().T @ b
    if np.any(gains == 0):
        return None
    gram = h_tilde.conj().T @ h_tilde
    try:
        chol = scipy.linalg.cho_factor(gram, check_finite=False)
    except scipy.linalg.LinAlgError:
        return None
    gram_inv = scipy.linalg.cho_solve(chol, np.eye(k), check_finite=False)
    gram_inv = 0.5 * (gram_inv + gram_inv.conj().T)
    targets = gains.copy()
    for _ in range(rounds):
        targets = _phase_sweeps(targets, gram_inv)
        phases = targets / np.abs(targets)
        c_mat = np.conj(phases)[:, None] * gram_inv * phases[None, :]
        m_mat = 0.5 * (c_mat.real + c_mat.real.T)
        w = _magnitude_resplit(np.abs(targets), m_mat, problem)
        if w is None:
            return None
        targets = phases * w
    b_cand = h_tilde @ scipy.linalg.cho_solve(chol, targets,
                                              check_finite=False)
    return _interior_candidate(b_cand, h_tilde, problem)


def _ensure_strict_interior(b0: np.ndarray, h_tilde: np.ndarray,
                            problem: LayerProblem) -> np.ndarray:
    """Pull the start strictly inside the power/cap boundaries; if a client's
    gain misses its floor, retarget via the least-norm exact-gain solution."""
    shrink = 1.0 - 1e-9
    b = b0 * min(1.0, math.sqrt(problem.p_wmax_over_pw0)
                 / max(np.linalg.norm(b0), 1e-300)) * shrink
    gains = h_tilde.conj().T @ b
    peak = np.abs(gains).max()
    if peak > problem.a_max * shrink:
        b *= problem.a_max * shrink / peak
        gains = h_tilde.conj().T @ b
    floor = problem.u / problem.beta_max
    weak = np.abs(gains) < floor * 1.05
    if not np.any(weak):
        return b
    # aim every gain at a 1.1x margin above its floor, keeping MRT phases
    targets = 1.1 * floor * np.exp(1j * np.angle(np.where(gains == 0, 1, gains)))
    b_fix, *_ = np.linalg.lstsq(h_tilde.conj().T, targets, rcond=None)
    gains_fix = h_tilde.conj().T @ b_fix
    still_weak = np.nonzero(np.abs(gains_fix) < floor)[0]
    if still_weak.size or np.vdot(b_fix, b_fix).real > problem.p_wmax_over_pw0:
        bad = still_weak if still_weak.size else np.nonzero(weak)[0]
        raise InfeasibleLayerError(
            "no feasible start meets the gain floors", clients=bad + 1)
    peak = np.abs(gains_fix).max()
    if peak > problem.a_max * shrink:
        b_fix = b_fix * (problem.a_max * shrink / peak)
        if np.any(np.abs(h_tilde.conj().T @ b_fix) < floor):
            raise InfeasibleLayerError(
                "gain floors and mixer cap conflict", clients=np.nonzero(weak)[0] + 1)
    return b_fix


def build_layer_problem(h: np.ndarray, eps, layer: LayerSpec,
                        sp: SystemParams, lam: float,
                        i_max: int = 30) -> LayerProblem:
    h = np.asarray(h, dtype=complex)
    k = h.shape[1]
    eps = np.broadcast_to(np.asarray(eps, dtype=float), (k,))
    kappa = compute_kappa(sp)
    u = np.array([required_gain(e, kappa) for e in eps])
    c = client_energy_coefficient(layer, sp)
    chi = c * u ** 2
    t_w = tw_schedule(layer, sp.lfft, sp.b_hz)
    return LayerProblem(
        h=h, u=u, chi=chi, lam=lam,
        bs_energy_coeff=lam * t_w / sp.eta_bs * sp.p_w0_w,
        a_max=sp.a_max, beta_max=sp.beta_max,
        p_wmax_over_pw0=sp.p_wmax_w / sp.p_w0_w, i_max=i_max)


def solve_layer(h: np.ndarray, eps, layer: LayerSpec, sp: SystemParams,
                lam: float = 0.0, i_max: int = 30, reduce: bool = True,
                sca_rel_tol: float = SCA_REL_TOL) -> PhyDesign:
    """Run the full per-layer design: feasibility pre-check, subspace
    reduction, SCA iterations, and closed-form scaling recovery."""
    problem = build_layer_problem(h, eps, layer, sp, lam, i_max)
    bad = np.nonzero(problem.u > sp.a_max * sp.beta_max)[0]
    if bad.size:
        raise InfeasibleLayerError(
            f"required gains exceed a_max*beta_max for clients {bad + 1}",
            clients=bad + 1)
    if reduce:
        u_basis, h_tilde, _ = subspace_reduce(problem.h)
    else:
        u_basis, h_tilde = None, problem.h
    b = _ensure_strict_interior(mrt_init(h_tilde, sp), h_tilde, problem)
    trace = [_true_objective(b, h_tilde, problem)]
    iterations = 0
    for it in range(i_max):
        surr = build_surrogate(b, h_tilde, problem)
        b_new = solve_subproblem(surr, problem, h_tilde,
                                 mu_start=1.0 if it == 0 else 1e-3)
        f_new = _true_objective(b_new, h_tilde, problem)
        # exact gain-target refinement, kept only on clear true descent
        # (relative margin keeps accept decisions stable under rescaling)
        cand = _gain_split_candidate(b_new, h_tilde, problem)
        if cand is not None:
            f_cand = _true_objective(cand, h_tilde, problem)
            if f_cand < f_new * (1.0 - 1e-9):
                b_new, f_new = cand, f_cand
        iterations += 1
        if f_new > trace[-1] * (1.0 + 1e-12):
            trace.append(trace[-1])  # numerically stalled, keep the iterate
            break
        b = b_new
        trace.append(f_new)
        if abs(trace[-2] - trace[-1]) <= sca_rel_tol * max(abs(trace[-2]), 1e-300):
            break
    gains = h_tilde.conj().T @ b
    beta = np.array([optimal_beta(a, u, problem.beta_max)
                     for a, u in zip(gains, problem.u)])
    f = b if u_basis is None else u_basis @ b
    return PhyDesign(f=f, beta=beta, b=b, objective_trace=trace,
                     feasible=True, iterations=iterations)


def export_design(path, design: PhyDesign) -> None:
    """Design file: beamformer and scalings as complex CSV, then the trace."""
    with open(path, "w") as fh:
        fh.write(f"feasible,{int(design.feasible)}\n")
        fh.write(f"iterations,{design.iterations}\n")
        fh.write("beamformer," + ";".join(
            f"{float(z.real)!r},{float(z.imag)!r}" for z in design.f) + "\n")
        fh.write("beta," + ";".join(
            f"{float(z.real)!r},{float(z.imag)!r}" for z in design.beta) + "\n")
        fh.write("objective_trace," + ";".join(
            repr(float(v)) for v in design.objective_trace) + "\n")
