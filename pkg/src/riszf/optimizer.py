"""Panel phase optimization by nonlinear conjugate gradients.

Minimizes J(phi) = Tr{(H(phi) H(phi)^H)^-1 Gamma} with the closed-form real
gradient, a Polak-Ribiere-plus direction update, and an Armijo backtracking
line search. Works on anything exposing H_bu and H12 (true channel sets and
estimated ones alike), since the compound channel is affine in e^{j phi}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .channel import compound_from_h12
from .errors import ConfigurationError, NonConvergenceError, SingularChannelError
from .precoder import CONDITION_LIMIT, PrecoderSolution, _gamma_vector, zero_forcing


@dataclass(frozen=True)
class RisState:
    """Phase vector and the unit-modulus reflection coefficients it induces."""

    phi: np.ndarray
    varphi: np.ndarray = field(init=False)

    def __post_init__(self):
        phi = np.ascontiguousarray(self.phi, dtype=float)
        phi.setflags(write=False)
        varphi = np.exp(1j * phi)
        varphi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "varphi", varphi)

    @property
    def n_r(self) -> int:
        return self.phi.shape[0]


@dataclass(frozen=True)
class OptimizerSettings:
    epsilon: float = 1e-6
    max_iter: int = 200
    restart_period: int | None = None   # None -> N_r
    initial_step: float = 1.0
    shrink: float = 0.5
    sufficient_decrease: float = 1e-4
    max_shrinks: int = 40
    rng_seed: int = 0
    multi_start: int = 1

    def __post_init__(self):
        if not (self.epsilon > 0.0):
            raise ConfigurationError("epsilon must be > 0")
        if self.max_iter < 1:
            raise ConfigurationError("max_iter must be >= 1")
        if self.multi_start < 1:
            raise ConfigurationError("multi_start must be >= 1")


@dataclass
class OptimizerTrace:
    iterations: list = field(default_factory=list)  # (iter, J, grad_norm, step, beta)
    termination: str = ""
    start_objective: float = math.nan

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    @property
    def objectives(self) -> np.ndarray:
        return np.array([row[1] for row in self.iterations])

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("iter,J,grad_norm,step,beta\n")
            for it, j, gn, step, beta in self.iterations:
                fh.write(f"{it},{j!r},{gn!r},{step!r},{beta!r}\n")


def _dims(chs) -> tuple[int, int, int]:
    k, m = chs.H_bu.shape
    return k, m, chs.H12.shape[1]


def _gram_inv(h: np.ndarray) -> np.ndarray:
    g = h @ h.conj().T
    ev = np.linalg.eigvalsh(g)
    if not np.all(np.isfinite(ev)) or ev[0] <= 0.0 or ev[-1] / ev[0] > CONDITION_LIMIT:
        raise SingularChannelError(np.inf if ev[0] <= 0.0 else ev[-1] / ev[0])
    return cho_solve(cho_factor(g, lower=True), np.eye(h.shape[0], dtype=complex))


def objective(chs, ris: RisState, gamma=None) -> float:
    """J = Tr{(H H^H)^-1 Gamma}; equals P / alpha^2 of the precoder."""
    k, m, _ = _dims(chs)
    g_vec = _gamma_vector(gamma, k)
    h = compound_from_h12(chs.H_bu, chs.H12, ris.varphi)
    gram_inv = _gram_inv(h)
    return float(np.real(np.sum(np.diag(gram_inv) * g_vec)))


def gradient(chs, ris: RisState, gamma=None) -> np.ndarray:
    """Closed-form dJ/dphi, evaluated without any Kronecker product.

    With G = H H^H: grad_i = 2 Im{ [vec(G^-1 Gamma G^-1 H)^H H12]_i varphi_i },
    which costs O(K^3 + M K^2 + K M N_r) complex multiplies.
    """
    k, m, _ = _dims(chs)
    g_vec = _gamma_vector(gamma, k)
    h = compound_from_h12(chs.H_bu, chs.H12, ris.varphi)
    gram_inv = _gram_inv(h)
    x = gram_inv @ (g_vec[:, None] * (gram_inv @ h))
    w = x.reshape(-1, order="F")
    row = (w.conj() @ chs.H12) * ris.varphi
    return 2.0 * np.imag(row)


def verify_gradient(chs, ris, gamma=None, h_step: float = 1e-6) -> float:
    """Worst per-component deviation of the analytic gradient from central
    differences; relative where the reference is meaningful, absolute below
    1e-12. Accepts a RisState or a bare phase vector."""
    if not (h_step > 0.0):
        raise ConfigurationError("h_step must be > 0")
    if not isinstance(ris, RisState):
        ris = RisState(np.asarray(ris, dtype=float))
    analytic = gradient(chs, ris, gamma)
    worst = 0.0
    phi = ris.phi
    for i in range(phi.shape[0]):
        e = np.zeros_like(phi)
        e[i] = h_step
        j_plus = objective(chs, RisState(phi + e), gamma)
        j_minus = objective(chs, RisState(phi - e), gamma)
        fd = (j_plus - j_minus) / (2.0 * h_step)
        scale = abs(fd)
        err = abs(analytic[i] - fd) if scale < 1e-12 else abs(analytic[i] - fd) / scale
        worst = max(worst, err)
    return worst


def optimize(chs, gamma=None, settings: OptimizerSettings | None = None,
             tx_power_w: float = 1.0) -> tuple[RisState, PrecoderSolution, OptimizerTrace]:
    """Full phase-optimization pipeline for one placement.

    Seeded uniform random start, conjugate-gradient loop with relative
    objective tolerance, zero-forcing on the converged channel. multi_start
    independent runs (seeds spawned from rng_seed) keep the best objective.
    """
    settings = settings or OptimizerSettings()
    k, m, nr = _dims(chs)
    g_vec = _gamma_vector(gamma, k)

    if nr == 0:
        sol = zero_forcing(chs.H_bu, g_vec, tx_power_w)
        trace = OptimizerTrace(termination="no-ris-elements", start_objective=sol.J)
        return RisState(np.zeros(0)), sol, trace

    seeds = np.random.SeedSequence(settings.rng_seed).spawn(settings.multi_start)
    best = None
    for seed_seq in seeds:
        rng = np.random.default_rng(seed_seq)
        phi0 = rng.uniform(0.0, 2.0 * math.pi, nr)
        result = _run_single(chs, g_vec, settings, phi0)
        if best is None or result[1] < best[1]:
            best = result
    phi, j_final, trace = best
    ris = RisState(phi)
    h = compound_from_h12(chs.H_bu, chs.H12, ris.varphi)
    sol = zero_forcing(h, g_vec, tx_power_w)
    return ris, sol, trace


def _run_single(chs, g_vec, settings: OptimizerSettings, phi0: np.ndarray):
    nr = phi0.shape[0]
    restart_every = settings.restart_period or nr
    phi = phi0.copy()
    j_curr = objective(chs, RisState(phi), g_vec)
    trace = OptimizerTrace(start_objective=j_curr)

    g_prev = None
    u_prev = None
    since_restart = 0
    for it in range(1, settings.max_iter + 1):
        g = -gradient(chs, RisState(phi), g_vec)  # ascent direction of -J
        grad_norm = float(np.linalg.norm(g))
        beta = 0.0
        if g_prev is not None and since_restart < restart_every:
            denom = float(g_prev @ g_prev)
            if denom > 0.0:
                beta = max(float(g @ (g - g_prev)) / denom, 0.0)
        u = g + beta * u_prev if (beta > 0.0 and u_prev is not None) else g.copy()
        if float(u @ g) <= 0.0:  # not a descent direction for J: restart
            beta = 0.0
            u = g.copy()
        if beta == 0.0:
            since_restart = 0

        # search along the unit direction: the step is then a phase
        # displacement in radians regardless of the objective's scale
        u_norm = float(np.linalg.norm(u))
        if u_norm == 0.0:
            trace.termination = "stationary"
            break
        u_hat = u / u_norm
        step, j_new = _armijo(chs, g_vec, phi, u_hat, j_curr, float(u_hat @ g), settings)
        if step is None and beta > 0.0:
            # conjugate direction stalled: retry along steepest descent
            beta = 0.0
            u = g.copy()
            since_restart = 0
            u_norm = float(np.linalg.norm(u))
            u_hat = u / u_norm
            step, j_new = _armijo(chs, g_vec, phi, u_hat, j_curr, float(u_hat @ g), settings)
        if step is None:
            if grad_norm <= 1e-12 * max(1.0, abs(j_curr)):
                trace.termination = "stationary"
                break
            trace.termination = "line-search-failure"
            raise NonConvergenceError(
                f"line search exhausted at iteration {it} (|grad| = {grad_norm:.3e})", trace)

        phi = phi + step * u_hat
        trace.iterations.append((it, j_new, grad_norm, step, beta))
        rel_drop = abs(j_new - j_curr) / abs(j_new)
        j_curr = j_new
        g_prev = g
        u_prev = u
        since_restart += 1
        if rel_drop < settings.epsilon:
            trace.termination = "converged"
            break
    else:
        trace.termination = "max-iterations"

    return phi, j_curr, trace


def _armijo(chs, g_vec, phi, u, j_curr, directional_decrease, settings: OptimizerSettings):
    """Backtracking line search; returns (step, new_J) or (None, None)."""
    step = settings.initial_step
    for _ in range(settings.max_shrinks + 1):
        try:
            j_try = objective(chs, RisState(phi + step * u), g_vec)
        except SingularChannelError:
            j_try = math.inf
        if j_try <= j_curr - settings.sufficient_decrease * step * directional_decrease:
            return step, j_try
        step *= settings.shrink
    return None, None
