"""Physical deployment: sites, arrays, obstacles, named presets, geometry queries.

All dB/dBm/dBi fields keep their unit in the field name and are converted to
linear units only at module boundaries. Positions are meters, tilts are
(azimuth, elevation) radians. Every type here is immutable; the operations are
pure functions, safe to share across worker processes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from .errors import ConfigurationError

# Idealized propagation speed: makes the 30 GHz carrier an exact 1 cm
# wavelength, which the element pitch and Fraunhofer figures assume.
SPEED_OF_LIGHT = 3.0e8

PRESET_NAMES = ("NEAR", "OUT", "FAR", "NEAR_NS")


def db_to_linear(db: float) -> float:
    return 10.0 ** (db / 10.0)


def dbm_to_watts(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class Obstacle:
    """Vertical screen of unbounded height over a 2-D ground segment."""

    p: tuple[float, float]
    q: tuple[float, float]
    attenuation_db: float = 10.0

    def __post_init__(self):
        if tuple(self.p) == tuple(self.q):
            raise ConfigurationError("obstacle endpoints must be distinct")
        if not (self.attenuation_db >= 0.0):
            raise ConfigurationError("obstacle attenuation must be >= 0 dB")
        object.__setattr__(self, "p", (float(self.p[0]), float(self.p[1])))
        object.__setattr__(self, "q", (float(self.q[0]), float(self.q[1])))


@dataclass(frozen=True)
class GridSpec:
    """Horizontal evaluation grid for the moving user."""

    x_range: tuple[float, float] = (0.0, 120.0)
    y_range: tuple[float, float] = (0.0, 120.0)
    resolution_m: float = 2.0
    height_m: float = 1.5

    def __post_init__(self):
        if not (self.resolution_m > 0.0):
            raise ConfigurationError("grid resolution must be > 0")
        object.__setattr__(self, "x_range", (float(self.x_range[0]), float(self.x_range[1])))
        object.__setattr__(self, "y_range", (float(self.y_range[0]), float(self.y_range[1])))

    def points(self) -> np.ndarray:
        """All (x, y) grid nodes, x-major, inclusive of both range ends."""
        xs = _inclusive_steps(*self.x_range, self.resolution_m)
        ys = _inclusive_steps(*self.y_range, self.resolution_m)
        out = np.empty((len(xs) * len(ys), 2))
        i = 0
        for x in xs:
            for y in ys:
                out[i, 0] = x
                out[i, 1] = y
                i += 1
        return out


def _inclusive_steps(lo: float, hi: float, step: float) -> np.ndarray:
    n = int(math.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


# Table defaults shared by all presets. The two screens are 10 m wide,
# centered on the stated anchor points, running along the x axis.
_DEFAULT_OBSTACLES = (
    Obstacle(p=(35.0, 80.0), q=(45.0, 80.0), attenuation_db=10.0),
    Obstacle(p=(75.0, 70.0), q=(85.0, 70.0), attenuation_db=10.0),
)

# Default placement of the moving user for single-shot runs: grid center,
# unshadowed, comfortably beyond the 10 m pathloss validity radius.
_DEFAULT_UE1 = (60.0, 60.0, 1.5)


@dataclass(frozen=True)
class ScenarioConfig:
    carrier_frequency_hz: float = 30.0e9
    bandwidth_hz: float = 50.0e6
    tx_power_dl_dbm: float = 24.0
    noise_power_dbm: float = -94.0
    ul_pilot_power_dbm: float = 15.0
    bs_position_m: tuple[float, float, float] = (60.0, 120.0, 10.0)
    bs_tilt_rad: tuple[float, float] = (math.pi, math.pi / 2.0)
    bs_antennas: int = 4
    bs_antenna_spacing_wavelengths: float = 0.5
    ris_position_m: tuple[float, float, float] = (0.0, 60.0, 6.0)
    ris_tilt_rad: tuple[float, float] = (-math.pi / 2.0, math.pi / 2.0)
    ris_elements: int = 1000
    ris_rows: int = 5
    ris_element_size_m: tuple[float, float] = (0.005, 0.005)
    antenna_gain_tx_dbi: float = 3.0
    antenna_gain_ue_dbi: float = 3.0
    obstacles: tuple[Obstacle, ...] = _DEFAULT_OBSTACLES
    ue_positions_m: tuple[tuple[float, float, float], ...] = (_DEFAULT_UE1, (20.0, 35.0, 1.5))
    grid: GridSpec = field(default_factory=GridSpec)
    preset: str = "CUSTOM"

    def __post_init__(self):
        object.__setattr__(self, "bs_position_m", _as_point3(self.bs_position_m))
        object.__setattr__(self, "ris_position_m", _as_point3(self.ris_position_m))
        object.__setattr__(self, "bs_tilt_rad", (float(self.bs_tilt_rad[0]), float(self.bs_tilt_rad[1])))
        object.__setattr__(self, "ris_tilt_rad", (float(self.ris_tilt_rad[0]), float(self.ris_tilt_rad[1])))
        object.__setattr__(self, "ris_element_size_m",
                           (float(self.ris_element_size_m[0]), float(self.ris_element_size_m[1])))
        object.__setattr__(self, "ue_positions_m", tuple(_as_point3(p) for p in self.ue_positions_m))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        self._validate()

    def _validate(self):
        k = len(self.ue_positions_m)
        if k < 1:
            raise ConfigurationError("at least one user position required")
        if self.bs_antennas < k:
            raise ConfigurationError(f"bs_antennas={self.bs_antennas} must be >= number of users {k}")
        if self.ris_rows < 1:
            raise ConfigurationError("ris_rows must be >= 1")
        # ris_elements == 0 is the explicit no-RIS configuration; any positive
        # count must fill whole rows.
        if self.ris_elements < 0:
            raise ConfigurationError("ris_elements must be >= 0")
        if self.ris_elements > 0 and self.ris_elements % self.ris_rows != 0:
            raise ConfigurationError(
                f"ris_elements={self.ris_elements} is not a multiple of ris_rows={self.ris_rows}")
        if not (self.carrier_frequency_hz > 0.0):
            raise ConfigurationError("carrier_frequency_hz must be > 0")
        for name in ("bandwidth_hz", "tx_power_dl_dbm", "noise_power_dbm", "ul_pilot_power_dbm"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ConfigurationError(f"{name} must be finite")
        if not (self.ris_element_size_m[0] > 0.0 and self.ris_element_size_m[1] > 0.0):
            raise ConfigurationError("ris_element_size_m entries must be > 0")
        if self.preset not in PRESET_NAMES + ("CUSTOM",):
            raise ConfigurationError(f"unknown preset {self.preset!r}")

    # -- derived linear-unit quantities ------------------------------------

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_frequency_hz

    @property
    def tx_power_dl_w(self) -> float:
        return dbm_to_watts(self.tx_power_dl_dbm)

    @property
    def noise_power_w(self) -> float:
        return dbm_to_watts(self.noise_power_dbm)

    @property
    def ul_pilot_power_w(self) -> float:
        return dbm_to_watts(self.ul_pilot_power_dbm)

    @property
    def gain_tx_linear(self) -> float:
        return db_to_linear(self.antenna_gain_tx_dbi)

    @property
    def gain_ue_linear(self) -> float:
        return db_to_linear(self.antenna_gain_ue_dbi)

    @property
    def n_users(self) -> int:
        return len(self.ue_positions_m)


def _as_point3(p) -> tuple[float, float, float]:
    t = tuple(float(v) for v in p)
    if len(t) != 3:
        raise ConfigurationError(f"expected a 3-D point, got {p!r}")
    return t


def resolve_preset(name: str) -> ScenarioConfig:
    """Fully populated configuration for one of the named deployments.

    The moving user starts at the grid-center default; the fixed user and the
    obstacle list are what distinguish the presets.
    """
    canonical = str(name).upper().replace("-", "_")
    if canonical not in PRESET_NAMES:
        raise ConfigurationError(f"unknown preset {name!r}; expected one of {PRESET_NAMES}")
    ue2 = {
        "NEAR": (20.0, 40.0, 1.5),
        "OUT": (40.0, 40.0, 1.5),
        "FAR": (90.0, 40.0, 1.5),
        "NEAR_NS": (20.0, 35.0, 1.5),
    }[canonical]
    obstacles = () if canonical == "NEAR_NS" else _DEFAULT_OBSTACLES
    return ScenarioConfig(ue_positions_m=(_DEFAULT_UE1, ue2), obstacles=obstacles, preset=canonical)


# -- array geometry ---------------------------------------------------------

def boresight(tilt_rad: tuple[float, float]) -> np.ndarray:
    """Unit normal for an (azimuth, elevation) tilt.

    Elevation pi/2 keeps the normal horizontal; azimuth pi faces -y and
    azimuth -pi/2 faces +x, matching the deployment table's conventions.
    """
    az, el = tilt_rad
    return np.array([-math.sin(az) * math.sin(el),
                     math.cos(az) * math.sin(el),
                     math.cos(el)])


def panel_axes(tilt_rad: tuple[float, float]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(normal, in-plane horizontal u, in-plane vertical v) for a tilt."""
    n = boresight(tilt_rad)
    z = np.array([0.0, 0.0, 1.0])
    u = np.cross(z, n)
    norm = np.linalg.norm(u)
    if norm < 1e-12:
        raise ConfigurationError("panel normal parallel to vertical: in-plane axes undefined")
    u = u / norm
    v = np.cross(n, u)
    return n, u, v


@dataclass(frozen=True)
class GeometryReport:
    element_positions_bs: np.ndarray   # (M, 3)
    element_positions_ris: np.ndarray  # (N_r, 3)
    aperture_bs_m: float
    aperture_ris_m: float
    fraunhofer_bs_m: float
    fraunhofer_ris_m: float


def element_positions(config: ScenarioConfig) -> GeometryReport:
    """Element coordinates for the BS line array and the RIS panel.

    The BS array runs horizontally, perpendicular to its boresight, centered
    on the site position. The RIS panel is an N_z-row grid with pitch (a, b),
    row-major element order, also centered on its site. Apertures are
    center-to-center extents; Fraunhofer distances use 2 D^2 / lambda.
    """
    lam = config.wavelength_m
    m = config.bs_antennas
    _, u_bs, _ = panel_axes(config.bs_tilt_rad)
    d = config.bs_antenna_spacing_wavelengths * lam
    offs = (np.arange(m) - (m - 1) / 2.0) * d
    bs = np.asarray(config.bs_position_m) + offs[:, None] * u_bs[None, :]

    nr = config.ris_elements
    a, b = config.ris_element_size_m
    if nr > 0:
        nz = config.ris_rows
        ny = nr // nz
        _, u_ris, v_ris = panel_axes(config.ris_tilt_rad)
        rows = (np.arange(nz) - (nz - 1) / 2.0) * b
        cols = (np.arange(ny) - (ny - 1) / 2.0) * a
        ris = (np.asarray(config.ris_position_m)[None, None, :]
               + cols[None, :, None] * u_ris[None, None, :]
               + rows[:, None, None] * v_ris[None, None, :]).reshape(nr, 3)
        ap_ris = math.hypot((ny - 1) * a, (nz - 1) * b)
    else:
        ris = np.zeros((0, 3))
        ap_ris = 0.0

    ap_bs = (m - 1) * d
    return GeometryReport(
        element_positions_bs=_frozen(bs),
        element_positions_ris=_frozen(ris),
        aperture_bs_m=ap_bs,
        aperture_ris_m=ap_ris,
        fraunhofer_bs_m=2.0 * ap_bs**2 / lam,
        fraunhofer_ris_m=2.0 * ap_ris**2 / lam,
    )


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# -- shadowing ---------------------------------------------------------------

def _orient(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _on_segment(o, a, b) -> bool:
    return (min(o[0], b[0]) <= a[0] <= max(o[0], b[0])
            and min(o[1], b[1]) <= a[1] <= max(o[1], b[1]))


def segments_cross(p, q, a, b) -> bool:
    """Closed-segment 2-D intersection test (touching counts as crossing)."""
    d1 = _orient(a, b, p)
    d2 = _orient(a, b, q)
    d3 = _orient(p, q, a)
    d4 = _orient(p, q, b)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True
    if d1 == 0 and _on_segment(a, p, b):
        return True
    if d2 == 0 and _on_segment(a, q, b):
        return True
    if d3 == 0 and _on_segment(p, a, q):
        return True
    if d4 == 0 and _on_segment(p, b, q):
        return True
    return False


def shadow_loss(config: ScenarioConfig, p, q) -> float:
    """Summed obstruction, in dB, along the horizontal projection of p -> q."""
    p2 = (float(p[0]), float(p[1]))
    q2 = (float(q[0]), float(q[1]))
    if tuple(p) == tuple(q):
        raise ConfigurationError("shadow_loss endpoints must differ")
    total = 0.0
    for obs in config.obstacles:
        if segments_cross(p2, q2, obs.p, obs.q):
            total += obs.attenuation_db
    return total


# -- flat key/value serialization --------------------------------------------

def config_to_dict(config: ScenarioConfig) -> dict:
    return {
        "carrier_frequency_hz": config.carrier_frequency_hz,
        "bandwidth_hz": config.bandwidth_hz,
        "tx_power_dl_dbm": config.tx_power_dl_dbm,
        "noise_power_dbm": config.noise_power_dbm,
        "ul_pilot_power_dbm": config.ul_pilot_power_dbm,
        "bs_position_m": list(config.bs_position_m),
        "bs_tilt_rad": list(config.bs_tilt_rad),
        "bs_antennas": config.bs_antennas,
        "bs_antenna_spacing_wavelengths": config.bs_antenna_spacing_wavelengths,
        "ris_position_m": list(config.ris_position_m),
        "ris_tilt_rad": list(config.ris_tilt_rad),
        "ris_elements": config.ris_elements,
        "ris_rows": config.ris_rows,
        "ris_element_size_m": list(config.ris_element_size_m),
        "antenna_gain_tx_dbi": config.antenna_gain_tx_dbi,
        "antenna_gain_ue_dbi": config.antenna_gain_ue_dbi,
        "obstacles": [
            {"p_m": list(o.p), "q_m": list(o.q), "attenuation_db": o.attenuation_db}
            for o in config.obstacles
        ],
        "ue_positions_m": [list(p) for p in config.ue_positions_m],
        "grid_x_range_m": list(config.grid.x_range),
        "grid_y_range_m": list(config.grid.y_range),
        "grid_resolution_m": config.grid.resolution_m,
        "grid_height_m": config.grid.height_m,
        "preset": config.preset,
    }


def config_from_dict(data: dict) -> ScenarioConfig:
    """Build a config from a flat mapping.

    A preset name may come alone; any explicit field overrides the preset's
    default. Unknown keys are rejected so typos never pass silently.
    """
    data = dict(data)
    preset = data.pop("preset", "CUSTOM")
    if preset != "CUSTOM":
        base = resolve_preset(preset)
    else:
        base = ScenarioConfig()
    known = set(config_to_dict(base).keys()) - {"preset"}
    unknown = set(data.keys()) - known
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")

    kwargs = {}
    scalar_keys = (
        "carrier_frequency_hz", "bandwidth_hz", "tx_power_dl_dbm", "noise_power_dbm",
        "ul_pilot_power_dbm", "bs_antennas", "bs_antenna_spacing_wavelengths",
        "ris_elements", "ris_rows", "antenna_gain_tx_dbi", "antenna_gain_ue_dbi",
    )
    for key in scalar_keys:
        if key in data:
            kwargs[key] = data[key]
    for key in ("bs_position_m", "ris_position_m"):
        if key in data:
            kwargs[key] = tuple(data[key])
    if "bs_tilt_rad" in data:
        kwargs["bs_tilt_rad"] = tuple(data["bs_tilt_rad"])
    if "ris_tilt_rad" in data:
        kwargs["ris_tilt_rad"] = tuple(data["ris_tilt_rad"])
    if "ris_element_size_m" in data:
        kwargs["ris_element_size_m"] = tuple(data["ris_element_size_m"])
    if "obstacles" in data:
        kwargs["obstacles"] = tuple(
            Obstacle(p=tuple(o["p_m"]), q=tuple(o["q_m"]),
                     attenuation_db=o.get("attenuation_db", 10.0))
            for o in data["obstacles"]
        )
    if "ue_positions_m" in data:
        kwargs["ue_positions_m"] = tuple(tuple(p) for p in data["ue_positions_m"])
    grid_kwargs = {}
    if "grid_x_range_m" in data:
        grid_kwargs["x_range"] = tuple(data["grid_x_range_m"])
    if "grid_y_range_m" in data:
        grid_kwargs["y_range"] = tuple(data["grid_y_range_m"])
    if "grid_resolution_m" in data:
        grid_kwargs["resolution_m"] = data["grid_resolution_m"]
    if "grid_height_m" in data:
        grid_kwargs["height_m"] = data["grid_height_m"]
    if grid_kwargs:
        kwargs["grid"] = replace(base.grid, **grid_kwargs)
    # the tag names the preset the config was derived from; explicit fields
    # layered on top do not rename it, so serialize/parse round-trips exactly
    kwargs["preset"] = preset
    return replace(base, **kwargs)


def load_config(path) -> ScenarioConfig:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    # manifests embed the scenario under a named block; plain configs are flat
    if "scenario" in data and isinstance(data["scenario"], dict):
        data = data["scenario"]
    return config_from_dict(data)


def save_config(config: ScenarioConfig, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(config_to_dict(config), fh, indent=2, sort_keys=True)
        fh.write("\n")


def with_panel_elements(config: ScenarioConfig, n_elements: int) -> ScenarioConfig:
    """Resize the reflecting panel, keeping a compatible row count.

    The configured row count is kept when it divides the new element count;
    otherwise the largest divisor not exceeding it is used, so sweeps over
    panel sizes never trip the whole-rows validation.
    """
    n_elements = int(n_elements)
    if n_elements <= 0:
        return replace(config, ris_elements=0)
    rows = min(config.ris_rows, n_elements)
    while n_elements % rows != 0:
        rows -= 1
    return replace(config, ris_elements=n_elements, ris_rows=rows)


def apply_overrides(config: ScenarioConfig, overrides: Iterable[str]) -> ScenarioConfig:
    """Apply repeatable key=value overrides (CLI --set) onto a config."""
    data = config_to_dict(config)
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} is not key=value")
        key, _, raw = item.partition("=")
        key = key.strip()
        if key not in data:
            raise ConfigurationError(f"unknown override key {key!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        data[key] = value
        if key != "preset":
            data["preset"] = "CUSTOM"
    return config_from_dict(data)
