"""Deployment presets, geometry queries, shadowing, and config round-trips."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from riszf.errors import ConfigurationError
from riszf.scenario import (
    GridSpec,
    Obstacle,
    PRESET_NAMES,
    ScenarioConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    db_to_linear,
    dbm_to_watts,
    element_positions,
    load_config,
    resolve_preset,
    save_config,
    shadow_loss,
    with_panel_elements,
)

# deployment anchors shared by all presets
BS_SITE = (60.0, 120.0, 10.0)
PANEL_SITE = (0.0, 60.0, 6.0)


def test_preset_fixed_user_placements():
    assert resolve_preset("NEAR").ue_positions_m[1] == (20.0, 40.0, 1.5)
    assert resolve_preset("OUT").ue_positions_m[1] == (40.0, 40.0, 1.5)
    assert resolve_preset("FAR").ue_positions_m[1] == (90.0, 40.0, 1.5)
    assert resolve_preset("NEAR_NS").ue_positions_m[1] == (20.0, 35.0, 1.5)


def test_preset_shared_anchors():
    for name in PRESET_NAMES:
        cfg = resolve_preset(name)
        assert cfg.bs_position_m == BS_SITE
        assert cfg.ris_position_m == PANEL_SITE
        assert cfg.carrier_frequency_hz == 30.0e9
        assert cfg.bs_antennas == 4


def test_preset_obstacle_lists():
    near = resolve_preset("NEAR")
    assert len(near.obstacles) == 2
    assert all(o.attenuation_db == 10.0 for o in near.obstacles)
    assert resolve_preset("NEAR_NS").obstacles == ()


def test_unknown_preset_rejected():
    with pytest.raises(ConfigurationError):
        resolve_preset("NOWHERE")


def test_preset_round_trip_tag():
    for name in PRESET_NAMES:
        assert resolve_preset(name).preset == name


def test_config_dict_round_trip():
    cfg = resolve_preset("NEAR")
    again = config_from_dict(config_to_dict(cfg))
    assert again == cfg


def test_config_file_round_trip(tmp_path):
    cfg = resolve_preset("FAR")
    path = tmp_path / "scenario.json"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_unit_conversions():
    assert dbm_to_watts(30.0) == pytest.approx(1.0)
    assert dbm_to_watts(0.0) == pytest.approx(1e-3)
    assert db_to_linear(3.0) == pytest.approx(10 ** 0.3)


# -- array geometry -----------------------------------------------------------

def test_bs_array_aperture_and_near_field_boundary():
    # four antennas at half-wavelength pitch: extent 1.5 lambda = 0.015 m,
    # so the 2 D^2 / lambda boundary sits at 0.045 m
    report = element_positions(resolve_preset("NEAR"))
    assert report.aperture_bs_m == pytest.approx(0.015, rel=1e-12)
    assert report.fraunhofer_bs_m == pytest.approx(0.045, rel=1e-12)


def test_panel_near_field_boundary_at_full_scale():
    cfg = resolve_preset("NEAR")
    assert cfg.ris_elements == 1000 and cfg.ris_rows == 5
    report = element_positions(cfg)
    assert report.fraunhofer_ris_m == pytest.approx(198.08499999999998, rel=1e-12)


def test_single_column_panel_layout():
    cfg = with_panel_elements(resolve_preset("NEAR"), 5)
    assert cfg.ris_rows == 5
    pos = element_positions(cfg).element_positions_ris
    assert pos.shape == (5, 3)
    d = np.diff(pos, axis=0)
    # a 5x1 column: consecutive elements one vertical pitch apart
    assert np.allclose(np.linalg.norm(d, axis=1), cfg.ris_element_size_m[1], atol=1e-12)


def test_panel_grid_pitch_exact():
    cfg = resolve_preset("NEAR")
    pos = element_positions(cfg).element_positions_ris
    nz, ny = cfg.ris_rows, cfg.ris_elements // cfg.ris_rows
    grid = pos.reshape(nz, ny, 3)
    along_row = np.linalg.norm(np.diff(grid, axis=1), axis=2)
    along_col = np.linalg.norm(np.diff(grid, axis=0), axis=2)
    assert np.allclose(along_row, cfg.ris_element_size_m[0], atol=1e-12)
    assert np.allclose(along_col, cfg.ris_element_size_m[1], atol=1e-12)


def test_element_count_must_fill_rows():
    with pytest.raises(ConfigurationError):
        ScenarioConfig(ris_elements=7, ris_rows=5)


def test_with_panel_elements_picks_compatible_rows():
    base = resolve_preset("NEAR")
    assert with_panel_elements(base, 1000).ris_rows == 5
    assert with_panel_elements(base, 8).ris_rows == 4
    assert with_panel_elements(base, 16).ris_rows == 4
    assert with_panel_elements(base, 3).ris_rows == 3
    assert with_panel_elements(base, 7).ris_rows == 1
    off = with_panel_elements(base, 0)
    assert off.ris_elements == 0
    assert element_positions(off).element_positions_ris.shape == (0, 3)


# -- shadowing ----------------------------------------------------------------

def test_clear_ray_has_no_loss():
    cfg = resolve_preset("NEAR")
    assert shadow_loss(cfg, BS_SITE, (40.0, 40.0, 1.5)) == 0.0


def test_single_screen_costs_its_attenuation():
    cfg = resolve_preset("NEAR")
    assert shadow_loss(cfg, BS_SITE, (20.0, 40.0, 1.5)) == 10.0
    assert shadow_loss(cfg, BS_SITE, (90.0, 40.0, 1.5)) == 10.0


def test_double_crossing_accumulates():
    cfg = ScenarioConfig(obstacles=(
        Obstacle(p=(-1.0, 1.0), q=(1.0, 1.0), attenuation_db=10.0),
        Obstacle(p=(-1.0, 2.0), q=(1.0, 2.0), attenuation_db=10.0),
    ))
    assert shadow_loss(cfg, (0.0, 0.0, 1.0), (0.0, 3.0, 1.0)) == 20.0


def test_panel_legs_unobstructed_in_presets():
    for name in PRESET_NAMES:
        cfg = resolve_preset(name)
        if not cfg.obstacles:
            continue
        assert shadow_loss(cfg, BS_SITE, PANEL_SITE) == 0.0
        for ue in cfg.ue_positions_m:
            assert shadow_loss(cfg, PANEL_SITE, ue) == 0.0


def test_no_obstacle_preset_map_fully_clear():
    cfg = resolve_preset("NEAR_NS")
    for x, y in cfg.grid.points()[::37]:
        if (x, y) == BS_SITE[:2]:
            continue
        assert shadow_loss(cfg, BS_SITE, (x, y, 1.5)) == 0.0


@given(
    px=st.floats(-50, 150), py=st.floats(-50, 150),
    qx=st.floats(-50, 150), qy=st.floats(-50, 150),
)
def test_shadow_loss_symmetric(px, py, qx, qy):
    cfg = resolve_preset("NEAR")
    p = (px, py, 1.5)
    q = (qx, qy, 2.5)
    if (px, py) == (qx, qy):
        return
    assert shadow_loss(cfg, p, q) == shadow_loss(cfg, q, p)


def test_degenerate_shadow_ray_rejected():
    cfg = resolve_preset("NEAR")
    with pytest.raises(ConfigurationError):
        shadow_loss(cfg, (1.0, 2.0, 3.0), (1.0, 2.0, 3.0))


# -- validation and overrides ---------------------------------------------------

def test_more_users_than_antennas_rejected():
    with pytest.raises(ConfigurationError):
        ScenarioConfig(bs_antennas=1)


def test_obstacle_validation():
    with pytest.raises(ConfigurationError):
        Obstacle(p=(1.0, 1.0), q=(1.0, 1.0))
    with pytest.raises(ConfigurationError):
        Obstacle(p=(0.0, 0.0), q=(1.0, 0.0), attenuation_db=-1.0)


def test_grid_points_inclusive_and_x_major():
    grid = GridSpec(x_range=(0.0, 4.0), y_range=(0.0, 2.0), resolution_m=2.0)
    pts = grid.points()
    assert pts.shape == (6, 2)
    assert pts[0].tolist() == [0.0, 0.0]
    assert pts[1].tolist() == [0.0, 2.0]
    assert pts[-1].tolist() == [4.0, 2.0]


def test_override_changes_field_and_marks_custom():
    cfg = apply_overrides(resolve_preset("NEAR"), ["grid_resolution_m=24"])
    assert cfg.grid.resolution_m == 24
    assert cfg.preset == "CUSTOM"


def test_override_rejects_unknown_key_and_bad_syntax():
    cfg = resolve_preset("NEAR")
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, ["no_such_field=1"])
    with pytest.raises(ConfigurationError):
        apply_overrides(cfg, ["not-a-pair"])


def test_config_from_dict_accepts_preset_plus_overrides():
    cfg = config_from_dict({"preset": "NEAR", "ris_elements": 500})
    assert cfg.ris_elements == 500
    assert cfg.ue_positions_m[1] == (20.0, 40.0, 1.5)
