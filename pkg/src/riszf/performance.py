"""Link-quality evaluation under estimation errors.

Propagates white channel-estimation error into the zero-forcing downlink:
per-pair interference variances, per-user interference-plus-noise power,
closed-form BER bounds for square QAM, a symbol-level Monte Carlo oracle,
achievable rates, and the pilot-energy allocation that equalizes the
interference contribution across users.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erfc

from .errors import ConfigurationError
from .estimation import PilotPlan
from .precoder import PrecoderSolution

WILSON_Z = 1.959963984540054  # two-sided 95%


# ---------------------------------------------------------------------------
# error statistics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ErrorStatistics:
    """Second-order description of the estimation-error impact at each user.

    var_eps_pairs[k, l] is the variance of the residual coupling from stream
    l into user k. Rows are identical: the closed form depends on the column
    norm and pilot energy of the interfering stream only.
    """

    var_eps_pairs: np.ndarray   # (K, K)
    sigma_eps_sq: np.ndarray    # (K,) amplitude-uncertainty variance, diag of the above
    sigma_k_sq: np.ndarray      # (K,) interference-plus-noise power
    alpha_sq: float             # normalization under the true channel
    alpha_hat_sq: float         # normalization actually applied (estimated channel)
    gamma: np.ndarray           # (K,) stream weights
    noise_power_dl_w: float
    tx_power_w: float
    n_r: int

    @property
    def K(self) -> int:
        return self.gamma.shape[0]

    def snr_nominal(self) -> np.ndarray:
        """Per-user SNR with the amplitude error set to zero."""
        return self.alpha_hat_sq * self.gamma / self.sigma_k_sq

    def z_values(self, a: int) -> np.ndarray:
        """Exponent scale (3/(A-1)) * alpha_hat^2 gamma_k / sigma_k^2."""
        return (3.0 / (a - 1)) * self.snr_nominal()


def error_statistics(sol: PrecoderSolution, sol_hat: PrecoderSolution | None,
                     plan: PilotPlan, noise_ul_w: float, noise_dl_w: float,
                     n_r: int) -> ErrorStatistics:
    """Closed-form error statistics from the true and estimated solutions.

    The downlink error matrix has i.i.d. entries of variance
    (1+N_r) sigma_ul^2 / (P_ul,k T_k), so the coupling eps_kl = e_k^T b_l has
    variance (1+N_r) ||b_l||^2 sigma_ul^2 / (P_ul,l T_l): the row index drops
    out. Column norms come from the true-channel solution; the applied
    normalization alpha_hat^2 comes from the estimated one.
    """
    gamma = sol.gamma
    k = gamma.shape[0]
    b_norms = sol.b_col_norms_sq
    energies = np.array([plan.pilot_energy(l) for l in range(k)])
    per_stream = (1 + n_r) * noise_ul_w * b_norms / energies        # (K,)
    var_pairs = np.tile(per_stream, (k, 1))
    sigma_k_sq = sol.alpha_sq * (np.sum(gamma * per_stream) - gamma * per_stream) \
        + noise_dl_w
    alpha_hat_sq = sol.alpha_sq if sol_hat is None else sol_hat.alpha_sq
    return ErrorStatistics(
        var_eps_pairs=var_pairs,
        sigma_eps_sq=per_stream.copy(),
        sigma_k_sq=sigma_k_sq,
        alpha_sq=sol.alpha_sq,
        alpha_hat_sq=alpha_hat_sq,
        gamma=gamma.copy(),
        noise_power_dl_w=noise_dl_w,
        tx_power_w=sol.alpha_sq * sol.J,
        n_r=n_r,
    )


def perfect_csi_statistics(sol: PrecoderSolution, noise_dl_w: float,
                           n_r: int) -> ErrorStatistics:
    """Degenerate statistics for exact channel knowledge.

    All error variances vanish and the interference-plus-noise power reduces
    to the receiver noise alone; avoids materializing a pilot plan when no
    estimation takes place.
    """
    k = sol.gamma.shape[0]
    zeros = np.zeros(k)
    return ErrorStatistics(
        var_eps_pairs=np.zeros((k, k)),
        sigma_eps_sq=zeros,
        sigma_k_sq=np.full(k, float(noise_dl_w)),
        alpha_sq=sol.alpha_sq,
        alpha_hat_sq=sol.alpha_sq,
        gamma=sol.gamma.copy(),
        noise_power_dl_w=float(noise_dl_w),
        tx_power_w=sol.alpha_sq * sol.J,
        n_r=n_r,
    )


# ---------------------------------------------------------------------------
# closed-form BER
# ---------------------------------------------------------------------------

def _check_qam_order(a: int) -> int:
    m = round(math.sqrt(a))
    if a < 4 or m * m != a:
        raise ConfigurationError(f"modulation order {a} is not a square QAM order")
    return m


def gaussian_q(x):
    return 0.5 * erfc(np.asarray(x, dtype=float) / np.sqrt(2.0))


def q_exponential_bound(x):
    """Two-exponential upper bound on the Gaussian tail Q(x), x >= 0."""
    x = np.asarray(x, dtype=float)
    return 0.25 * np.exp(-x ** 2) + 0.25 * np.exp(-(x ** 2) / 2.0)


def qam_ber(snr, a: int):
    """Approximate coherent-demodulation BER of Gray-coded square A-QAM."""
    _check_qam_order(a)
    snr = np.asarray(snr, dtype=float)
    arg = np.sqrt(3.0 * snr / (a - 1))
    return (4.0 / np.log2(a)) * (1.0 - 1.0 / np.sqrt(a)) * gaussian_q(arg)


def qam_ber_exponential_bound(snr, a: int):
    """qam_ber with the Q function replaced by its two-exponential bound."""
    _check_qam_order(a)
    snr = np.asarray(snr, dtype=float)
    arg = np.sqrt(3.0 * snr / (a - 1))
    return (4.0 / np.log2(a)) * (1.0 - 1.0 / np.sqrt(a)) * q_exponential_bound(arg)


def ber_bound_imperfect(z, sigma_eps_sq, a: int):
    """Closed-form BER upper bound under Gaussian amplitude uncertainty.

    Averages the two-exponential QAM bound over a circular Gaussian relative
    amplitude error of variance sigma_eps_sq, at exponent scale z (the
    nominal SNR times 3/(A-1)). The second radical carries 4A(1+s2*z): that
    is the unique choice under which the zero-error limit collapses exactly
    to qam_ber_exponential_bound; a 2A radical there would inflate the second
    term by sqrt(2) for every input.
    """
    _check_qam_order(a)
    z = np.asarray(z, dtype=float)
    s2 = np.asarray(sigma_eps_sq, dtype=float)
    log2a = np.log2(a)
    pre = 2.0 * (np.sqrt(a) - 1.0) / log2a
    d1 = 2.0 + s2 * z
    d2 = 1.0 + s2 * z
    term1 = pre / np.sqrt(2.0 * a * d1) * np.exp(-z / d1)
    term2 = pre / np.sqrt(4.0 * a * d2) * np.exp(-z / d2)
    return term1 + term2


def ber_exact_complex_average(z, sigma_eps_sq, a: int):
    """Exact average of the two-exponential QAM bound over the error.

    Tighter than ber_bound_imperfect (1/x decay in place of 1/sqrt(x)); same
    zero-error limit. Useful as an internal consistency reference.
    """
    _check_qam_order(a)
    z = np.asarray(z, dtype=float)
    s2 = np.asarray(sigma_eps_sq, dtype=float)
    c = (1.0 - 1.0 / np.sqrt(a)) / np.log2(a)
    d1 = 2.0 + s2 * z
    d2 = 1.0 + s2 * z
    return c * (2.0 / d1 * np.exp(-z / d1) + 1.0 / d2 * np.exp(-z / d2))


def ber_integral_quadrature(snr_nominal: float, sigma_eps_sq: float, a: int,
                            nodes: int = 64) -> float:
    """Gauss-Hermite evaluation of the BER integral with the exact Q function.

    Averages qam_ber(snr_nominal * |1 - eps|^2) over eps circular Gaussian
    with variance sigma_eps_sq, using a tensor rule over the real and
    imaginary parts.
    """
    _check_qam_order(a)
    if sigma_eps_sq == 0.0:
        return float(qam_ber(snr_nominal, a))
    x, w = np.polynomial.hermite.hermgauss(nodes)
    s = math.sqrt(sigma_eps_sq)
    re = 1.0 - s * x[:, None]
    im = s * x[None, :]
    snr = snr_nominal * (re ** 2 + im ** 2)
    vals = qam_ber(snr, a)
    return float((w[:, None] * w[None, :] * vals).sum() / np.pi)


# ---------------------------------------------------------------------------
# Monte Carlo oracle
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BerEstimate:
    ber: np.ndarray       # (K,)
    ci_low: np.ndarray    # (K,) Wilson 95%
    ci_high: np.ndarray   # (K,)
    bit_errors: np.ndarray
    bits: int


def wilson_interval(errors: np.ndarray, n: int, z: float = WILSON_Z):
    errors = np.asarray(errors, dtype=float)
    p = errors / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return np.clip(center - half, 0.0, 1.0), np.clip(center + half, 0.0, 1.0)


def _qam_levels(a: int):
    """Per-axis amplitudes and Gray labels for unit-average-power square QAM."""
    m = _check_qam_order(a)
    step = math.sqrt(3.0 / (2.0 * (a - 1)))
    amps = (2 * np.arange(m) - (m - 1)) * step
    gray = np.arange(m) ^ (np.arange(m) >> 1)
    return amps, gray, step


def _popcount(values: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    v = values.copy()
    while np.any(v):
        out += v & 1
        v >>= 1
    return out


def mc_ber(sol: PrecoderSolution, sol_hat: PrecoderSolution | None, a: int,
           noise_power_w: float, n_symbols: int, seed=None,
           batch_size: int = 1 << 15) -> BerEstimate:
    """Symbol-level BER of the downlink with the exact received model.

    Transmits Gray-coded A-QAM through the true channel of `sol` using the
    precoder and normalization of `sol_hat` (falling back to `sol` itself for
    perfect knowledge). Receivers slice with the nominal per-user amplitude
    alpha_hat * sqrt(gamma_k): the residual coupling enters as genuine
    interference, not as an injected Gaussian surrogate.
    """
    if n_symbols < 1:
        raise ConfigurationError("n_symbols must be positive")
    applied = sol if sol_hat is None else sol_hat
    h = sol.H
    k = h.shape[0]
    gain = applied.alpha * (h @ applied.B)          # (K, K) effective coupling
    amps, gray, _ = _qam_levels(a)
    m = amps.shape[0]
    bits_per_axis = int(round(math.log2(m)))
    nominal = applied.alpha * np.sqrt(sol.gamma)    # slicer scale per user
    rng = np.random.default_rng(seed)
    errors = np.zeros(k, dtype=np.int64)
    done = 0
    while done < n_symbols:
        n = min(batch_size, n_symbols - done)
        ii = rng.integers(0, m, size=(k, n))
        qq = rng.integers(0, m, size=(k, n))
        s = amps[ii] * np.sqrt(sol.gamma)[:, None] + 1j * amps[qq] * np.sqrt(sol.gamma)[:, None]
        noise = (rng.standard_normal((k, n)) + 1j * rng.standard_normal((k, n))) \
            * math.sqrt(noise_power_w / 2.0)
        y = gain @ s + noise
        z = y / nominal[:, None]
        step2 = amps[1] - amps[0]
        i_hat = np.clip(np.rint((z.real - amps[0]) / step2), 0, m - 1).astype(np.int64)
        q_hat = np.clip(np.rint((z.imag - amps[0]) / step2), 0, m - 1).astype(np.int64)
        errors += _popcount(gray[ii] ^ gray[i_hat]).sum(axis=1)
        errors += _popcount(gray[qq] ^ gray[q_hat]).sum(axis=1)
        done += n
    bits = n_symbols * 2 * bits_per_axis
    lo, hi = wilson_interval(errors, bits)
    return BerEstimate(ber=errors / bits, ci_low=lo, ci_high=hi,
                       bit_errors=errors, bits=bits)


# ---------------------------------------------------------------------------
# rate and robust allocation
# ---------------------------------------------------------------------------

SNR_VARIANTS = ("conventional", "as-printed")


def assemble_snr(stats: ErrorStatistics, variant: str = "conventional") -> np.ndarray:
    """Named assembly point for the rate SNR; both published forms live here.

    "conventional": alpha_hat^2 gamma_k / sigma_k^2, the same ratio the BER
    exponent uses. "as-printed": P alpha^2 (1 + sigma_eps_k^2) / sigma_k^2,
    which scales with total power and puts the amplitude-error variance in
    the numerator; kept selectable because reported rate tables are
    ambiguous about it.
    """
    if variant == "conventional":
        return stats.snr_nominal()
    if variant == "as-printed":
        return stats.tx_power_w * stats.alpha_sq * (1.0 + stats.sigma_eps_sq) / stats.sigma_k_sq
    raise ConfigurationError(f"unknown SNR variant {variant!r}")


def achievable_rate(stats: ErrorStatistics, variant: str = "conventional") -> np.ndarray:
    """Per-user rate log2(1 + SNR_k) in bits/s/Hz."""
    return np.log2(1.0 + assemble_snr(stats, variant))


@dataclass(frozen=True)
class RobustAllocation:
    """Pilot energies making every stream's weighted error variance equal."""

    pilot_energies: np.ndarray   # (K,) P_ul,l * T_l
    total_energy: float
    weights: np.ndarray          # (K,) gamma_l ||b_l||^2

    def per_user_power(self, t) -> np.ndarray:
        """Powers realizing the allocation at the given symbol counts."""
        return self.pilot_energies / np.asarray(t, dtype=float)


def robust_pilot_allocation(sol: PrecoderSolution, total_energy: float) -> RobustAllocation:
    """Split a pilot-energy budget proportionally to gamma_l ||b_l||^2.

    Under this split gamma_l ||b_l||^2 / (P_ul,l T_l) is constant in l, so
    the interference contribution of every stream is identical and users see
    equal degradation. Column norms come from whatever solution the
    transmitter last computed.
    """
    if total_energy <= 0:
        raise ConfigurationError("pilot energy budget must be positive")
    weights = sol.gamma * sol.b_col_norms_sq
    energies = total_energy * weights / weights.sum()
    return RobustAllocation(pilot_energies=energies, total_energy=float(total_energy),
                            weights=weights)


# ---------------------------------------------------------------------------
# per-link report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinkReport:
    """Per-user link metrics for one placement and configuration."""

    modulation_order: int
    snr: np.ndarray
    ber_bound: np.ndarray
    rate: np.ndarray
    sigma_eps_sq: np.ndarray
    sigma_k_sq: np.ndarray
    ber_mc: np.ndarray | None = None
    ci_low: np.ndarray | None = None
    ci_high: np.ndarray | None = None

    def __post_init__(self):
        _check_qam_order(self.modulation_order)
        if np.any(self.ber_bound < 0):
            raise ConfigurationError("BER bound must be nonnegative")


def build_link_report(stats: ErrorStatistics, a: int,
                      mc: BerEstimate | None = None,
                      snr_variant: str = "conventional") -> LinkReport:
    z = stats.z_values(a)
    bound = np.minimum(ber_bound_imperfect(z, stats.sigma_eps_sq, a), 1.0)
    return LinkReport(
        modulation_order=a,
        snr=assemble_snr(stats, snr_variant),
        ber_bound=bound,
        rate=achievable_rate(stats, snr_variant),
        sigma_eps_sq=stats.sigma_eps_sq.copy(),
        sigma_k_sq=stats.sigma_k_sq.copy(),
        ber_mc=None if mc is None else mc.ber.copy(),
        ci_low=None if mc is None else mc.ci_low.copy(),
        ci_high=None if mc is None else mc.ci_high.copy(),
    )
