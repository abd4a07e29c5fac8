"""Zero-forcing precoding, power normalization, and spectral diagnostics.

The Gram matrix G = H H^H is factorized (Cholesky), never inverted through an
explicit pseudo-inverse of H: the interesting multiuser channels are exactly
the badly conditioned ones. A condition estimate above CONDITION_LIMIT is
reported as a singular channel, the operational meaning of "zero forcing
unfeasible".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, svdvals

from .errors import ConfigurationError, SingularChannelError

CONDITION_LIMIT = 1e12


def _gamma_vector(gamma, k: int) -> np.ndarray:
    if gamma is None:
        return np.ones(k)
    g = np.asarray(gamma, dtype=float)
    if g.ndim == 2:
        g = np.diag(g)
    if g.shape != (k,):
        raise ConfigurationError(f"gamma must have {k} entries")
    if np.any(g <= 0.0):
        raise ConfigurationError("gamma entries must be positive")
    return g


def _gram_and_condition(h: np.ndarray) -> tuple[np.ndarray, float]:
    g = h @ h.conj().T
    ev = np.linalg.eigvalsh(g)  # ascending
    if not np.all(np.isfinite(ev)) or ev[0] <= 0.0:
        return g, np.inf
    return g, float(ev[-1] / ev[0])


@dataclass(frozen=True)
class PrecoderSolution:
    """Zero-forcing solution with its power bookkeeping.

    alpha_sq * J == P by construction; per_user_rx_power[k] = alpha_sq * gamma_k.
    The channel the solution was computed from is kept so symbol-level
    simulation can replay it against a different (true) channel.
    """

    B: np.ndarray                  # (M, K)
    gamma: np.ndarray              # (K,) diagonal of the power-balance matrix
    alpha_sq: float
    J: float
    per_user_rx_power: np.ndarray  # (K,)
    H: np.ndarray                  # (K, M) channel used to build B

    @property
    def alpha(self) -> float:
        return float(np.sqrt(self.alpha_sq))

    @property
    def b_col_norms_sq(self) -> np.ndarray:
        return np.sum(np.abs(self.B) ** 2, axis=0)

    @property
    def K(self) -> int:
        return self.B.shape[1]


def zero_forcing(h: np.ndarray, gamma=None, tx_power_w: float = 1.0) -> PrecoderSolution:
    """B = H^H (H H^H)^-1 with alpha^2 = P / Tr{(H H^H)^-1 Gamma}."""
    h = np.asarray(h, dtype=complex)
    k, m = h.shape
    if k > m:
        raise ConfigurationError(f"zero forcing needs K <= M, got K={k}, M={m}")
    if not (tx_power_w > 0.0):
        raise ConfigurationError("tx_power_w must be > 0")
    g_vec = _gamma_vector(gamma, k)
    gram, cond = _gram_and_condition(h)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularChannelError(cond)
    factor = cho_factor(gram, lower=True)
    gram_inv = cho_solve(factor, np.eye(k, dtype=complex))
    b = h.conj().T @ gram_inv
    j = float(np.real(np.sum(np.diag(gram_inv) * g_vec)))
    alpha_sq = tx_power_w / j
    return PrecoderSolution(
        B=b,
        gamma=g_vec,
        alpha_sq=alpha_sq,
        J=j,
        per_user_rx_power=alpha_sq * g_vec,
        H=h,
    )


@dataclass(frozen=True)
class SpectralReport:
    eigenvalues: np.ndarray            # of H H^H, descending
    singular_values: np.ndarray        # of Gamma^-1/2 H, descending
    column_norm_products: np.ndarray   # gamma_l * ||b_l||^2


def spectral_report(h: np.ndarray, gamma=None) -> SpectralReport:
    """Spectral quantities behind the normalization bounds.

    gamma_l ||b_l||^2 equals diag(Gamma^1/2 (H H^H)^-1 Gamma^1/2) because
    B^H B = (H H^H)^-1 for the zero-forcing B.
    """
    h = np.asarray(h, dtype=complex)
    k, m = h.shape
    if k > m:
        raise ConfigurationError(f"spectral report needs K <= M, got K={k}, M={m}")
    g_vec = _gamma_vector(gamma, k)
    gram, cond = _gram_and_condition(h)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise SingularChannelError(cond)
    ev = np.linalg.eigvalsh(gram)[::-1].copy()
    sv = svdvals(h / np.sqrt(g_vec)[:, None])
    factor = cho_factor(gram, lower=True)
    gram_inv = cho_solve(factor, np.eye(k, dtype=complex))
    products = np.real(np.diag(gram_inv)) * g_vec
    return SpectralReport(
        eigenvalues=ev,
        singular_values=np.sort(sv)[::-1].copy(),
        column_norm_products=products,
    )
