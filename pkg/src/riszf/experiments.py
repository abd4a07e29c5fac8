"""Batch studies: coverage sweeps, outage tables, and multi-user counts.

One moving user walks the scenario grid while the remaining users stay at
their configured positions. Every grid point gets a fresh channel synthesis,
a fresh phase optimization per panel size, and a no-panel baseline row. All
randomness derives from the sweep seed, and records come back in a fixed
order regardless of worker scheduling, so output files are reproducible
byte for byte.
"""

from __future__ import annotations

import dataclasses
import json
import multiprocessing
import os
from dataclasses import dataclass

import numpy as np

from . import channel as channel_mod
from .errors import ConfigurationError, ModelRangeError, SingularChannelError
from .estimation import design_pilots, estimated_channel, inject_error_model, simulate_uplink_ls
from .optimizer import OptimizerSettings, optimize
from .performance import (
    build_link_report,
    error_statistics,
    mc_ber,
    perfect_csi_statistics,
)
from .precoder import zero_forcing
from .scenario import ScenarioConfig, config_to_dict, with_panel_elements

MODES = ("pe", "ie", "ie-fast")
_MODE_CODE = {name: idx for idx, name in enumerate(MODES)}

STATUS_OK = "ok"
STATUS_SINGULAR = "singular"
STATUS_MODEL_RANGE = "model-range"

CSV_HEADER = "x_m,y_m,user,config_id,nr,mode,ber_bound,ber_mc,rate,status"


@dataclass(frozen=True)
class SweepSpec:
    """Coverage study description; everything downstream derives from it."""

    scenario: ScenarioConfig
    nr_values: tuple[int, ...] = (128,)
    t_per_user: int | None = None          # None: smallest identifiable count
    mode: str = "pe"
    modulation_order: int = 4
    mc_symbols: int = 0                    # 0 disables the Monte Carlo column
    seed: int = 0
    workers: int | None = None
    snr_variant: str = "conventional"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if any(nr < 0 for nr in self.nr_values):
            raise ConfigurationError("panel sizes must be nonnegative")

    def pilot_count(self, nr: int) -> int:
        if self.t_per_user is not None:
            if self.t_per_user < nr + 1:
                raise ConfigurationError(
                    f"t_per_user={self.t_per_user} cannot identify nr+1={nr + 1} unknowns")
            return self.t_per_user
        return nr + 1


@dataclass(frozen=True)
class PointRecord:
    x_m: float
    y_m: float
    user: int
    config_id: str
    nr: int
    mode: str
    ber_bound: float
    ber_mc: float          # nan when Monte Carlo is off
    rate: float
    status: str

    def csv_row(self) -> str:
        return ",".join([
            repr(self.x_m), repr(self.y_m), str(self.user), self.config_id,
            str(self.nr), self.mode, repr(self.ber_bound), repr(self.ber_mc),
            repr(self.rate), self.status,
        ])


def _config_id(nr: int, mode: str) -> str:
    return f"{mode}-nr{nr}" if nr > 0 else f"{mode}-direct"


def _flagged_records(point, n_users, nr, mode, status) -> list[PointRecord]:
    nan = float("nan")
    return [PointRecord(point[0], point[1], u, _config_id(nr, mode), nr, mode,
                        nan, nan, nan, status) for u in range(n_users)]


def evaluate_point(config: ScenarioConfig, nr: int, mode: str, spec: SweepSpec,
                   seed_key: tuple[int, ...]) -> list[PointRecord]:
    """All per-user records for one placement and one panel size."""
    point = config.ue_positions_m[0]
    k = config.n_users
    cfg = with_panel_elements(config, nr)
    try:
        chs = channel_mod.synthesize(cfg)
    except ModelRangeError:
        return _flagged_records(point, k, nr, mode, STATUS_MODEL_RANGE)
    seq = np.random.SeedSequence(list(seed_key))
    opt_seed, est_seed, mc_seed = [int(s.generate_state(1)[0]) for s in seq.spawn(3)]
    noise_dl = cfg.noise_power_w
    p_dl = cfg.tx_power_dl_w
    a = spec.modulation_order
    try:
        if mode == "pe":
            _, sol, _ = optimize(chs, settings=OptimizerSettings(rng_seed=opt_seed),
                                 tx_power_w=p_dl)
            stats = perfect_csi_statistics(sol, noise_dl, nr)
            sol_hat = None
        else:
            t = spec.pilot_count(nr)
            plan = design_pilots(nr, t, per_user_power_w=cfg.ul_pilot_power_w)
            estimate = simulate_uplink_ls if mode == "ie" else inject_error_model
            outcome = estimate(chs, plan, noise_dl, seed=est_seed)
            est = estimated_channel(outcome)
            ris, sol_hat, _ = optimize(est, settings=OptimizerSettings(rng_seed=opt_seed),
                                       tx_power_w=p_dl)
            h_true = channel_mod.compound_from_h12(chs.H_bu, chs.H12, ris.varphi) \
                if nr > 0 else chs.H_bu
            sol = zero_forcing(h_true, tx_power_w=p_dl)
            stats = error_statistics(sol, sol_hat, plan, noise_dl, noise_dl, nr)
    except SingularChannelError:
        return _flagged_records(point, k, nr, mode, STATUS_SINGULAR)
    mc = None
    if spec.mc_symbols > 0:
        mc = mc_ber(sol, sol_hat, a, noise_dl, spec.mc_symbols, seed=mc_seed)
    report = build_link_report(stats, a, mc=mc, snr_variant=spec.snr_variant)
    cid = _config_id(nr, mode)
    nan = float("nan")
    return [PointRecord(point[0], point[1], u, cid, nr, mode,
                        float(report.ber_bound[u]),
                        nan if mc is None else float(report.ber_mc[u]),
                        float(report.rate[u]), STATUS_OK)
            for u in range(k)]


def _moving_positions(spec: SweepSpec) -> list[tuple[float, float, float]]:
    fixed = spec.scenario.ue_positions_m[1:]
    height = spec.scenario.grid.height_m
    points = []
    for x, y in spec.scenario.grid.points():
        if any(abs(x - fx) < 1e-9 and abs(y - fy) < 1e-9 for fx, fy, _ in fixed):
            continue
        points.append((float(x), float(y), float(height)))
    return points


def _point_task(args) -> list[PointRecord]:
    spec, point_idx, point = args
    config = dataclasses.replace(
        spec.scenario, ue_positions_m=(point,) + spec.scenario.ue_positions_m[1:])
    sizes = list(spec.nr_values)
    if 0 not in sizes:
        sizes.append(0)              # the no-panel baseline is always produced
    records = []
    for nr in sizes:
        key = (spec.seed, point_idx, nr, _MODE_CODE[spec.mode])
        records.extend(evaluate_point(config, nr, spec.mode, spec, key))
    return records


def default_workers() -> int:
    env = os.environ.get("RISZF_WORKERS")
    if env is not None:
        count = int(env)
        if count < 1:
            raise ConfigurationError("RISZF_WORKERS must be a positive integer")
        return count
    return os.cpu_count() or 1


def run_coverage(spec: SweepSpec) -> list[PointRecord]:
    """Evaluate every grid placement; records ordered by (point, size, user)."""
    tasks = [(spec, idx, pt) for idx, pt in enumerate(_moving_positions(spec))]
    workers = spec.workers if spec.workers is not None else default_workers()
    if workers > 1 and len(tasks) > 1:
        with multiprocessing.Pool(workers) as pool:
            per_point = pool.map(_point_task, tasks)
    else:
        per_point = [_point_task(t) for t in tasks]
    return [rec for batch in per_point for rec in batch]


# ---------------------------------------------------------------------------
# CDFs and outage quantiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OutageRow:
    config_id: str
    user: int
    metric: str
    q50: float
    q85: float
    count: int


@dataclass(frozen=True)
class OutageTable:
    rows: tuple[OutageRow, ...]

    def lookup(self, config_id: str, user: int, metric: str) -> OutageRow:
        for row in self.rows:
            if (row.config_id, row.user, row.metric) == (config_id, user, metric):
                return row
        raise KeyError((config_id, user, metric))


def cdf_and_outage(records: list[PointRecord]):
    """Empirical CDFs and 50%/85% quantiles per configuration and user.

    Flagged rows (singular placements, out-of-range geometry) carry no
    metric and are excluded; only clean evaluations enter the distribution.
    """
    clean = [r for r in records if r.status == STATUS_OK]
    if not clean:
        raise ConfigurationError("no clean records to summarize")
    groups: dict[tuple[str, int], list[PointRecord]] = {}
    for rec in clean:
        groups.setdefault((rec.config_id, rec.user), []).append(rec)
    rows = []
    cdfs: dict[tuple[str, int, str], np.ndarray] = {}
    for (cid, user), recs in sorted(groups.items()):
        for metric in ("ber_bound", "rate"):
            values = np.sort(np.array([getattr(r, metric) for r in recs]))
            q50, q85 = np.quantile(values, [0.5, 0.85], method="linear")
            rows.append(OutageRow(cid, user, metric, float(q50), float(q85), len(values)))
            cum = np.arange(1, values.size + 1) / values.size
            cdfs[(cid, user, metric)] = np.column_stack([values, cum])
    return OutageTable(rows=tuple(rows)), cdfs


# ---------------------------------------------------------------------------
# multi-user study
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MultiUeStudySpec:
    user_counts: tuple[int, ...] = (2, 3, 4)
    bs_antennas: int = 4
    nr: int = 128
    position_budget: int = 1200            # total placements, split as budget // K runs
    ber_threshold: float = 0.01
    modulation_order: int = 4
    seed: int = 0
    workers: int | None = None

    def __post_init__(self):
        if max(self.user_counts) > self.bs_antennas:
            raise ConfigurationError("need at least as many antennas as users")


@dataclass(frozen=True)
class MultiUeResult:
    """Pass counts per (K, panel on/off, obstacles on/off) cell."""

    counts: dict
    runs_per_k: dict
    threshold: float


def _multi_ue_task(args) -> tuple:
    base, spec, k, run_idx, positions = args
    cfg = dataclasses.replace(base, ue_positions_m=positions, bs_antennas=spec.bs_antennas)
    outcomes = {}
    for use_ris in (False, True):
        for use_obstacles in (True, False):
            nr = spec.nr if use_ris else 0
            cfg_case = with_panel_elements(
                dataclasses.replace(
                    cfg, obstacles=cfg.obstacles if use_obstacles else ()),
                nr)
            key = (spec.seed, k, run_idx, int(use_ris), int(use_obstacles))
            recs = evaluate_point(cfg_case, nr, "pe",
                                  SweepSpec(scenario=cfg_case,
                                            modulation_order=spec.modulation_order,
                                            seed=spec.seed),
                                  key)
            ok = all(r.status == STATUS_OK for r in recs)
            below = ok and all(r.ber_bound < spec.ber_threshold for r in recs)
            outcomes[(use_ris, use_obstacles)] = below
    return (k, run_idx, outcomes)


def run_multi_ue(spec: MultiUeStudySpec, base: ScenarioConfig) -> MultiUeResult:
    """Count random placements where every user clears the BER threshold."""
    grid_points = base.grid.points()
    height = base.grid.height_m
    tasks = []
    for k in spec.user_counts:
        runs = spec.position_budget // k
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, k]))
        for run_idx in range(runs):
            idx = rng.choice(len(grid_points), size=k, replace=False)
            positions = tuple(
                (float(grid_points[i][0]), float(grid_points[i][1]), float(height))
                for i in idx)
            tasks.append((base, spec, k, run_idx, positions))
    workers = spec.workers if spec.workers is not None else default_workers()
    if workers > 1 and len(tasks) > 1:
        with multiprocessing.Pool(workers) as pool:
            results = pool.map(_multi_ue_task, tasks)
    else:
        results = [_multi_ue_task(t) for t in tasks]
    counts: dict = {}
    runs_per_k: dict = {}
    for k, _, outcomes in results:
        runs_per_k[k] = runs_per_k.get(k, 0) + 1
        for case, below in outcomes.items():
            counts[(k,) + case] = counts.get((k,) + case, 0) + int(below)
    return MultiUeResult(counts=counts, runs_per_k=runs_per_k,
                         threshold=spec.ber_threshold)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def write_records_csv(records: list[PointRecord], path) -> None:
    lines = [CSV_HEADER] + [rec.csv_row() for rec in records]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_records_csv(path) -> list[PointRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != CSV_HEADER:
            raise ConfigurationError(f"unexpected CSV header {header!r}")
        for line in fh:
            x, y, user, cid, nr, mode, bound, bmc, rate, status = line.strip().split(",")
            records.append(PointRecord(float(x), float(y), int(user), cid, int(nr),
                                       mode, float(bound), float(bmc), float(rate),
                                       status))
    return records


def write_cdf_csv(cdf: np.ndarray, path) -> None:
    lines = ["value,cumulative_probability"]
    lines += [f"{repr(float(v))},{repr(float(p))}" for v, p in cdf]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def summary_payload(spec: SweepSpec, table: OutageTable) -> dict:
    return {
        "scenario": config_to_dict(spec.scenario),
        "nr_values": list(spec.nr_values),
        "t_per_user": spec.t_per_user,
        "mode": spec.mode,
        "modulation_order": spec.modulation_order,
        "mc_symbols": spec.mc_symbols,
        "seed": spec.seed,
        "snr_variant": spec.snr_variant,
        "outage": [dataclasses.asdict(row) for row in table.rows],
    }


def write_summary_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
