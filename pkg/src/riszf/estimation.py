"""Uplink least-squares channel estimation and its exact error statistics.

Per user k the uplink unknowns form V_k = [h_bu_k | H_br^T diag(h_ru_k)]
(M x (N_r+1)): the direct column plus one column per panel element. A joint
pilot/reflection schedule Omega with orthogonal unit-modulus rows makes the
LS estimate white with per-entry variance sigma_ul^2 / (P_ul T). Because the
estimate recovers V_k itself, one training pass parameterizes the channel for
every reflection vector; the optimizer can run directly on the estimate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import hadamard

from .channel import ChannelSet, build_h12
from .errors import ConfigurationError, IdentifiabilityError


@dataclass(frozen=True)
class PilotPlan:
    """Joint pilot-symbol / panel-phase schedule shared by all users.

    per_user_power_w and per_user_t may be scalars or per-user vectors; only
    their product (the pilot energy) enters the error statistics, so robust
    designs can rescale either one.
    """

    t: int
    omega: np.ndarray          # (N_r+1, T), unit-modulus entries
    family: str
    per_user_power_w: np.ndarray | float = 1.0
    per_user_t: np.ndarray | int | None = None

    def __post_init__(self):
        omega = np.ascontiguousarray(self.omega, dtype=complex)
        omega.setflags(write=False)
        object.__setattr__(self, "omega", omega)
        if self.per_user_t is None:
            object.__setattr__(self, "per_user_t", self.t)

    @property
    def n_r(self) -> int:
        return self.omega.shape[0] - 1

    def power_of(self, user: int) -> float:
        return float(np.broadcast_to(self.per_user_power_w, (user + 1,))[user])

    def t_of(self, user: int) -> int:
        return int(np.broadcast_to(self.per_user_t, (user + 1,))[user])

    def pilot_energy(self, user: int) -> float:
        return self.power_of(user) * self.t_of(user)

    def entry_variance(self, user: int, noise_power_w: float) -> float:
        """Per-entry LS error variance sigma^2 / (P_ul T) for one user."""
        return noise_power_w / self.pilot_energy(user)


def design_pilots(n_r: int, t: int, family: str = "DFT",
                  per_user_power_w=1.0, per_user_t=None) -> PilotPlan:
    """Schedule with orthogonal rows, ||row||^2 = T, all-ones first row.

    The first row is the pure pilot-symbol row (panel held at the identity
    reflection); rows 2..N_r+1 modulate the individual elements.
    """
    if t < n_r + 1:
        raise IdentifiabilityError(
            f"T={t} pilot slots cannot identify N_r+1={n_r + 1} components per user")
    family = family.upper()
    if family == "DFT":
        n = np.arange(t)
        rows = np.arange(n_r + 1)
        omega = np.exp(-2j * np.pi * np.outer(rows, n) / t)
    elif family == "HADAMARD":
        if t & (t - 1) != 0:
            raise ConfigurationError(f"HADAMARD family needs T a power of two, got {t}")
        omega = hadamard(t).astype(complex)[: n_r + 1, :]
    else:
        raise ConfigurationError(f"unknown pilot family {family!r}")
    return PilotPlan(t=t, omega=omega, family=family,
                     per_user_power_w=per_user_power_w, per_user_t=per_user_t)


@dataclass(frozen=True)
class EstimationOutcome:
    """Estimated per-user blocks and their deviations from the truth.

    v_hat[k] is user k's estimated M x (N_r+1) block. e1 is the direct-block
    error in downlink orientation (K x M). e2 stacks the reflected-block
    errors: e2[m*N_r + i, k] is the error of user k, antenna m, element i.
    predicted_variance[k] is the per-entry LS variance sigma^2/(P_ul,k T_k).
    """

    v_hat: np.ndarray              # (K, M, N_r+1)
    e1: np.ndarray                 # (K, M)
    e2: np.ndarray                 # (M*N_r, K)
    predicted_variance: np.ndarray  # (K,)
    seed: int | None

    @property
    def K(self) -> int:
        return self.v_hat.shape[0]

    @property
    def M(self) -> int:
        return self.v_hat.shape[1]

    @property
    def N_r(self) -> int:
        return self.v_hat.shape[2] - 1


def true_v_blocks(chs: ChannelSet) -> np.ndarray:
    """Uplink unknowns V_k for every user, shape (K, M, N_r+1).

    Reciprocity: the uplink channel is the transpose of the downlink one, so
    user k's direct column is H_bu[k, :] and the element columns are
    H_br^T scaled by h_ru entries.
    """
    k, m, nr = chs.K, chs.M, chs.N_r
    v = np.empty((k, m, nr + 1), dtype=complex)
    for kk in range(k):
        v[kk, :, 0] = chs.H_bu[kk, :]
        v[kk, :, 1:] = chs.H_br.T * chs.H_ru[kk, :][None, :]
    return v


def _user_omega(plan: PilotPlan, user: int) -> np.ndarray:
    t_k = plan.t_of(user)
    if t_k == plan.t:
        return plan.omega
    return design_pilots(plan.n_r, t_k, plan.family).omega


def simulate_uplink_ls(chs: ChannelSet, plan: PilotPlan, noise_power_w: float,
                       seed=None) -> EstimationOutcome:
    """Full pilot-level simulation: Y_k = sqrt(P) V_k Omega + N_k, then LS.

    Users train sequentially in disjoint slots, so their noise draws are
    independent and there is no pilot contamination.
    """
    if plan.n_r != chs.N_r:
        raise ConfigurationError(f"plan covers N_r={plan.n_r}, channel has N_r={chs.N_r}")
    rng = np.random.default_rng(seed)
    v_true = true_v_blocks(chs)
    k, m, _ = v_true.shape
    v_hat = np.empty_like(v_true)
    for kk in range(k):
        omega = _user_omega(plan, kk)
        t_k = omega.shape[1]
        p_k = plan.power_of(kk)
        noise = _crandn(rng, (m, t_k)) * np.sqrt(noise_power_w)
        y = np.sqrt(p_k) * (v_true[kk] @ omega) + noise
        gram = omega @ omega.conj().T
        v_hat[kk] = np.linalg.solve(gram.conj().T, (y @ omega.conj().T).conj().T).conj().T / np.sqrt(p_k)
    return _outcome_from_blocks(v_hat, v_true, plan, noise_power_w, seed)


def inject_error_model(chs: ChannelSet, plan: PilotPlan, noise_power_w: float,
                       seed=None) -> EstimationOutcome:
    """Statistically equivalent shortcut: draw the LS errors directly.

    The LS error of each entry of V_k is i.i.d. circular Gaussian with
    variance sigma^2/(P_ul,k T_k) when the schedule Grammian is T I, so the
    pilot synthesis can be skipped wholesale in large sweeps.
    """
    if plan.n_r != chs.N_r:
        raise ConfigurationError(f"plan covers N_r={plan.n_r}, channel has N_r={chs.N_r}")
    rng = np.random.default_rng(seed)
    v_true = true_v_blocks(chs)
    k, m, cols = v_true.shape
    v_hat = v_true.copy()
    for kk in range(k):
        var = plan.entry_variance(kk, noise_power_w)
        v_hat[kk] += _crandn(rng, (m, cols)) * np.sqrt(var)
    return _outcome_from_blocks(v_hat, v_true, plan, noise_power_w, seed)


def _crandn(rng: np.random.Generator, shape) -> np.ndarray:
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2.0)


def _outcome_from_blocks(v_hat, v_true, plan: PilotPlan, noise_power_w: float,
                         seed) -> EstimationOutcome:
    k, m, cols = v_hat.shape
    nr = cols - 1
    err = v_hat - v_true
    e1 = err[:, :, 0].copy()                       # (K, M) downlink orientation
    e2 = err[:, :, 1:].reshape(k, m * nr).T.copy()  # row-major (m, i) -> m*nr+i
    predicted = np.array([plan.entry_variance(kk, noise_power_w) for kk in range(k)])
    return EstimationOutcome(v_hat=v_hat, e1=e1, e2=e2,
                             predicted_variance=predicted, seed=seed)


def ls_error_samples(m: int, plan: PilotPlan, noise_power_w: float, n_draws: int,
                     seed=None, user: int = 0) -> np.ndarray:
    """Vectorized draws of the LS error block for one user, (n, M, N_r+1).

    The LS error N Omega^H (Omega Omega^H)^{-1} / sqrt(P) does not involve
    the channel at all, so covariance studies can sample it directly.
    """
    rng = np.random.default_rng(seed)
    omega = _user_omega(plan, user)
    t_k = omega.shape[1]
    p_k = plan.power_of(user)
    gram = omega @ omega.conj().T
    ginv = np.linalg.inv(gram)
    noise = _crandn(rng, (n_draws, m, t_k)) * np.sqrt(noise_power_w)
    return (noise @ omega.conj().T @ ginv) / np.sqrt(p_k)


@dataclass(frozen=True)
class EstimatedChannel:
    """Channel parameterization rebuilt from estimated blocks.

    Exposes the same affine pieces as a true ChannelSet (H_bu, H12), so the
    phase optimizer and the compound assembly run unchanged on estimates.
    """

    H_bu: np.ndarray  # (K, M)
    H12: np.ndarray   # (K*M, N_r)

    @property
    def K(self) -> int:
        return self.H_bu.shape[0]

    @property
    def M(self) -> int:
        return self.H_bu.shape[1]

    @property
    def N_r(self) -> int:
        return self.H12.shape[1]


def estimated_channel(outcome: EstimationOutcome) -> EstimatedChannel:
    """Rearrange estimated blocks into the affine compound parameterization."""
    k, m, nr = outcome.K, outcome.M, outcome.N_r
    h_bu = outcome.v_hat[:, :, 0].copy()
    h12 = np.empty((k * m, nr), dtype=complex)
    for kk in range(k):
        # column i of user k's rank-one stack lives at rows kk + m_idx*K
        h12[kk::k, :] = outcome.v_hat[kk, :, 1:]
    return EstimatedChannel(H_bu=h_bu, H12=h12)


def reconstruct_channel(outcome: EstimationOutcome, ris) -> np.ndarray:
    """Downlink channel estimate for a reflection state.

    With zero estimation error this equals the true compound channel exactly;
    in general the deviation is e1 + ((I_M kron varphi^T) e2)^T.
    """
    varphi = np.asarray(ris.varphi if hasattr(ris, "varphi") else ris)
    if varphi.shape != (outcome.N_r,):
        raise ConfigurationError(
            f"reflection vector length {varphi.shape} != N_r {outcome.N_r}")
    rows = outcome.v_hat[:, :, 0] + outcome.v_hat[:, :, 1:] @ varphi
    return rows
