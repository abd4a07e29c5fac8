"""Deterministic channel synthesis and compound-channel assembly.

Three matrices describe one placement: the direct BS-to-user link H_bu
(K x M), the BS-to-panel leg H_br (N_r x M) and the panel-to-user leg H_ru
(K x N_r). Every entry is sqrt(linear gain) times a pure propagation phase
exp(-j 2 pi f_c d / c) with per-element exact distances; no random fading
anywhere. H12 stacks the rank-one per-element couplings so the compound
channel is affine in the reflection vector: H(varphi) = H_bu + unvec(H12 varphi).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, GeometryError, ModelRangeError
from .scenario import (GeometryReport, ScenarioConfig, SPEED_OF_LIGHT,
                       element_positions, panel_axes, shadow_loss)

UMI_MIN_DISTANCE_M = 10.0


@dataclass(frozen=True)
class PathlossModel:
    """Distance-to-attenuation rule for the direct link.

    UMI_3GPP follows TR 38.901 Table 7.4.1-1 (street canyon) with the shadow
    fading terms disabled so maps stay deterministic; FREE_SPACE is the plain
    inverse-square law and carries no minimum-distance restriction.
    """

    name: str = "UMI_3GPP"

    def __post_init__(self):
        if self.name not in ("UMI_3GPP", "FREE_SPACE"):
            raise ConfigurationError(f"unknown pathloss model {self.name!r}")


def umi_los_db(d2d_m: float, d3d_m: float, f_ghz: float, h_bs_m: float, h_ut_m: float) -> float:
    # effective environment height 1 m, the street-canyon default
    h_bs_eff = h_bs_m - 1.0
    h_ut_eff = h_ut_m - 1.0
    d_bp = 4.0 * h_bs_eff * h_ut_eff * (f_ghz * 1e9) / SPEED_OF_LIGHT
    if d2d_m <= d_bp:
        return 32.4 + 21.0 * math.log10(d3d_m) + 20.0 * math.log10(f_ghz)
    return (32.4 + 40.0 * math.log10(d3d_m) + 20.0 * math.log10(f_ghz)
            - 9.5 * math.log10(d_bp**2 + (h_bs_m - h_ut_m) ** 2))


def umi_nlos_db(d2d_m: float, d3d_m: float, f_ghz: float, h_bs_m: float, h_ut_m: float) -> float:
    pl = 35.3 * math.log10(d3d_m) + 22.4 + 21.3 * math.log10(f_ghz) - 0.3 * (h_ut_m - 1.5)
    return max(pl, umi_los_db(d2d_m, d3d_m, f_ghz, h_bs_m, h_ut_m))


def free_space_db(d_m: float, wavelength_m: float) -> float:
    if d_m <= 0.0:
        raise ModelRangeError("free-space distance must be > 0")
    return 20.0 * math.log10(4.0 * math.pi * d_m / wavelength_m)


def direct_pathloss_db(model: PathlossModel, config: ScenarioConfig, ue_position,
                       d2d_m: float, d3d_m: float, shadowed: bool) -> float:
    """Direct-link attenuation in dB before antenna gains.

    Link classification is deterministic: an obstructed ray uses the NLOS
    formula (the obstacle penalty is added separately by the caller), an
    unobstructed ray uses LOS.
    """
    if model.name == "FREE_SPACE":
        return free_space_db(d3d_m, config.wavelength_m)
    if d2d_m < UMI_MIN_DISTANCE_M:
        raise ModelRangeError(
            f"BS-UE ground distance {d2d_m:.2f} m below the {UMI_MIN_DISTANCE_M:.0f} m model range")
    f_ghz = config.carrier_frequency_hz / 1e9
    h_bs = config.bs_position_m[2]
    h_ut = float(ue_position[2])
    if shadowed:
        return umi_nlos_db(d2d_m, d3d_m, f_ghz, h_bs, h_ut)
    return umi_los_db(d2d_m, d3d_m, f_ghz, h_bs, h_ut)


@dataclass(frozen=True)
class ChannelSet:
    """The three deterministic legs plus the stacked rank-one couplings."""

    H_bu: np.ndarray  # (K, M)
    H_br: np.ndarray  # (N_r, M)
    H_ru: np.ndarray  # (K, N_r)
    H12: np.ndarray   # (K*M, N_r)

    def __post_init__(self):
        for name in ("H_bu", "H_br", "H_ru", "H12"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=complex)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        k, m = self.H_bu.shape
        nr = self.H_br.shape[0]
        if self.H_br.shape != (nr, m) or self.H_ru.shape != (k, nr) or self.H12.shape != (k * m, nr):
            raise ConfigurationError("inconsistent channel matrix shapes")

    @property
    def K(self) -> int:
        return self.H_bu.shape[0]

    @property
    def M(self) -> int:
        return self.H_bu.shape[1]

    @property
    def N_r(self) -> int:
        return self.H_br.shape[0]

    @classmethod
    def from_legs(cls, h_bu: np.ndarray, h_br: np.ndarray, h_ru: np.ndarray) -> "ChannelSet":
        return cls(H_bu=h_bu, H_br=h_br, H_ru=h_ru, H12=build_h12(h_ru, h_br))


def build_h12(h_ru: np.ndarray, h_br: np.ndarray) -> np.ndarray:
    """Column i = column-major vec of the outer product h_ru[:, i] x h_br[i, :]."""
    h_ru = np.asarray(h_ru)
    h_br = np.asarray(h_br)
    k, nr = h_ru.shape
    m = h_br.shape[1]
    if h_br.shape[0] != nr:
        raise ConfigurationError("leg dimensions disagree on the element count")
    t3 = np.einsum("ki,im->kmi", h_ru, h_br)
    # (k, m, i) laid out so the Fortran reshape folds (k, m) into k + K*m
    return t3.reshape(k * m, nr, order="F")


def compound_from_h12(h_bu: np.ndarray, h12: np.ndarray, varphi: np.ndarray) -> np.ndarray:
    k, m = h_bu.shape
    if h12.shape[1] == 0:
        return h_bu.copy()
    return h_bu + (h12 @ varphi).reshape(k, m, order="F")


def assemble_compound(chs: ChannelSet, ris) -> np.ndarray:
    """H(varphi) = H_bu + H_ru diag(varphi) H_br for a reflection state."""
    varphi = np.asarray(ris.varphi if hasattr(ris, "varphi") else ris)
    if varphi.shape != (chs.N_r,):
        raise ConfigurationError(f"reflection vector length {varphi.shape} != N_r {chs.N_r}")
    if chs.N_r == 0:
        return chs.H_bu.copy()
    return chs.H_bu + chs.H_ru @ (varphi[:, None] * chs.H_br)


# -- synthesis ----------------------------------------------------------------

def direct_channel(config: ScenarioConfig, pathloss: PathlossModel | None = None,
                   ue_positions=None, geometry: GeometryReport | None = None) -> np.ndarray:
    """Direct BS-to-user matrix, entry (k, l) for user k and BS antenna l.

    The pathloss and obstruction decisions are made once per user from the BS
    site position (the array is thousands of times smaller than any obstacle
    standoff); phases and amplitudes then use per-antenna exact distances.
    """
    pathloss = pathloss or PathlossModel()
    geometry = geometry or element_positions(config)
    ues = config.ue_positions_m if ue_positions is None else tuple(ue_positions)
    bs_site = np.asarray(config.bs_position_m)
    elems = geometry.element_positions_bs
    k = len(ues)
    m = elems.shape[0]
    out = np.empty((k, m), dtype=complex)
    gain_db = config.antenna_gain_tx_dbi + config.antenna_gain_ue_dbi
    fc = config.carrier_frequency_hz
    for ki, ue in enumerate(ues):
        ue_arr = np.asarray(ue)
        d2d = math.hypot(ue_arr[0] - bs_site[0], ue_arr[1] - bs_site[1])
        shadow_db = shadow_loss(config, bs_site, ue_arr)
        d_elem = np.linalg.norm(ue_arr[None, :] - elems, axis=1)
        for li in range(m):
            pl_db = direct_pathloss_db(pathloss, config, ue_arr, d2d, d_elem[li],
                                       shadowed=shadow_db > 0.0)
            beta = 10.0 ** ((gain_db - pl_db - shadow_db) / 10.0)
            out[ki, li] = math.sqrt(beta) * np.exp(-2j * math.pi * fc * d_elem[li] / SPEED_OF_LIGHT)
    return out


def ris_leg_channels(config: ScenarioConfig,
                     geometry: GeometryReport | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(H_br, H_ru): per-element plate-scattering gains with exact distances.

    Angle frame, stated explicitly because it is easy to get wrong: for a
    panel with normal n, in-plane horizontal axis u and in-plane vertical
    axis v, a unit direction w has azimuth psi = atan2(w.u, w.n) measured
    from the normal inside the horizontal plane, and elevation theta measured
    from the v axis, so cos(theta) = w.v and the u-direction cosine is
    sin(theta) sin(psi) = w.u. Incidence angles are taken from each element
    toward the BS site (the gain formulas index incidence per element only);
    scattering angles are taken per element toward each user.
    """
    geometry = geometry or element_positions(config)
    elems = geometry.element_positions_ris
    nr = elems.shape[0]
    m = geometry.element_positions_bs.shape[0]
    k = config.n_users
    if nr == 0:
        return (np.zeros((0, m), dtype=complex), np.zeros((k, 0), dtype=complex))

    n, u, v = panel_axes(config.ris_tilt_rad)
    a, b = config.ris_element_size_m
    lam = config.wavelength_m
    fc = config.carrier_frequency_hz
    bs_site = np.asarray(config.bs_position_m)
    ris_site = np.asarray(config.ris_position_m)
    g_t = config.gain_tx_linear
    g_u = config.gain_ue_linear

    # incidence geometry: element -> BS site
    to_bs = bs_site[None, :] - elems
    d_bs_site = np.linalg.norm(to_bs, axis=1)
    _require_positive_distance(d_bs_site, "BS site")
    w_b = to_bs / d_bs_site[:, None]
    wb_n = w_b @ n
    wb_u = w_b @ u
    psi_i = np.arctan2(wb_u, wb_n)
    cos_psi_i = np.cos(psi_i)
    sin_psi_i = np.sin(psi_i)

    # H_br: per (element, BS antenna) distance, per-element incidence azimuth
    bs_elems = geometry.element_positions_bs
    diff = elems[:, None, :] - bs_elems[None, :, :]
    d_il = np.linalg.norm(diff, axis=2)
    shadow_br_db = shadow_loss(config, bs_site, ris_site)
    g_br = (g_t / (4.0 * math.pi)) * (a * b / d_il**2) * (cos_psi_i**2)[:, None]
    g_br *= 10.0 ** (-shadow_br_db / 10.0)
    h_br = np.sqrt(g_br) * np.exp(-2j * math.pi * fc * d_il / SPEED_OF_LIGHT)

    # H_ru: per (user, element) scattering pattern coupled to the incidence
    h_ru = np.empty((k, nr), dtype=complex)
    w_arg = math.pi * a / lam
    for ki, ue in enumerate(config.ue_positions_m):
        ue_arr = np.asarray(ue)
        to_ue = ue_arr[None, :] - elems
        d_ki = np.linalg.norm(to_ue, axis=1)
        _require_positive_distance(d_ki, f"user {ki}")
        w_s = to_ue / d_ki[:, None]
        ws_u = w_s @ u
        ws_v = w_s @ v
        big_w = w_arg * ws_v                      # cos(theta_s) = w.v
        big_y = w_arg * (sin_psi_i + ws_u)        # sin(theta_s) sin(psi_s) = w.u
        g_ru = (g_u / (4.0 * math.pi)) * (a * b / d_ki**2) * _sinc_sq(big_y) * _sinc_sq(big_w)
        shadow_ru_db = shadow_loss(config, ris_site, ue_arr)
        g_ru = g_ru * 10.0 ** (-shadow_ru_db / 10.0)
        h_ru[ki, :] = np.sqrt(g_ru) * np.exp(-2j * math.pi * fc * d_ki / SPEED_OF_LIGHT)

    return h_br, h_ru


def _require_positive_distance(distances: np.ndarray, who: str) -> None:
    # grazing directions are fine (the patterns stay finite); a coincident
    # point is not, the spherical spreading term diverges
    if np.any(distances < 1e-9):
        raise GeometryError(f"{who} coincides with a panel element")


def _sinc_sq(x: np.ndarray) -> np.ndarray:
    # unnormalized sinc: sin(x)/x, 1 at 0
    out = np.ones_like(x)
    nz = x != 0.0
    out[nz] = np.sin(x[nz]) / x[nz]
    return out**2


def synthesize(config: ScenarioConfig, pathloss: PathlossModel | None = None,
               geometry: GeometryReport | None = None) -> ChannelSet:
    """Full deterministic placement -> ChannelSet pipeline."""
    geometry = geometry or element_positions(config)
    h_bu = direct_channel(config, pathloss, geometry=geometry)
    h_br, h_ru = ris_leg_channels(config, geometry=geometry)
    return ChannelSet.from_legs(h_bu, h_br, h_ru)


# -- cross-implementation dump ------------------------------------------------

def write_channel_dump(chs: ChannelSet, path, carrier_frequency_hz: float) -> None:
    """Text dump: header (K, M, N_r, f_c), then row-major re/im pairs of
    H_bu, H_br and H_ru in that order, one entry per line."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{chs.K} {chs.M} {chs.N_r} {_fmt(carrier_frequency_hz)}\n")
        for mat in (chs.H_bu, chs.H_br, chs.H_ru):
            for val in mat.ravel(order="C"):
                fh.write(f"{_fmt(val.real)} {_fmt(val.imag)}\n")


def read_channel_dump(path) -> tuple[ChannelSet, float]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        k, m, nr = int(header[0]), int(header[1]), int(header[2])
        fc = float(header[3])
        flat = np.array([complex(float(re), float(im))
                         for re, im in (line.split() for line in fh if line.strip())])
    sizes = (k * m, nr * m, k * nr)
    if flat.size != sum(sizes):
        raise ConfigurationError("channel dump truncated")
    h_bu = flat[:sizes[0]].reshape(k, m)
    h_br = flat[sizes[0]:sizes[0] + sizes[1]].reshape(nr, m)
    h_ru = flat[sizes[0] + sizes[1]:].reshape(k, nr)
    return ChannelSet.from_legs(h_bu, h_br, h_ru), fc


def _fmt(x: float) -> str:
    return repr(float(x))
