"""Greedy evaluation runs, the five report metrics, speed sweeps and trace replay.

A trace is JSON lines: one ``header`` record, one ``step`` record per timestep,
one ``run_end`` record per run, and a closing ``report`` record. Every metric is
a pure function of the step and run_end records (see ``report_from_records``).
"""
from __future__ import annotations

import csv
import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from . import mlp, reward, sim
from .agent import greedy
from .config import RunConfig, ScenarioConfig
from .harness import randomize_start, theta_range
from .state import Encoder


class TraceError(ValueError):
    """Corrupt or inconsistent trace file."""


@dataclass
class EvalReport:
    scenario: str
    theta_v: float | None
    runs: int
    collisions: int
    collision_rate: float  # percent of runs
    total_distance_km: float
    avg_distance_between_collisions: float  # km
    no_collision: bool
    rule_violation_ratio: float  # percent of timesteps
    lane_distribution: dict[str, float]  # lane index -> percent of timesteps
    avg_speed: float  # m/s
    steps: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def lane_distribution(lanes: Iterable[int], n_lanes: int | None = None) -> dict[str, float]:
    """Percent of timesteps spent on each lane index."""
    lanes = list(lanes)
    if not lanes:
        raise ValueError("lane distribution of an empty trace is undefined")
    n = max(max(lanes) + 1, n_lanes or 0)
    counts = np.bincount(np.asarray(lanes, dtype=np.int64), minlength=n)
    return {str(k): 100.0 * float(c) / len(lanes) for k, c in enumerate(counts)}


def report_from_records(records: list[dict], scenario: str, theta_v: float | None, n_lanes: int) -> EvalReport:
    steps = [r for r in records if r["type"] == "step"]
    ends = [r for r in records if r["type"] == "run_end"]
    runs = len(ends)
    if runs == 0 or not steps:
        raise ValueError("no evaluation runs recorded")
    collisions = sum(1 for e in ends if e["collision"])
    total_km = sum(e["distance"] for e in ends) / 1000.0
    no_collision = collisions == 0
    avg_dist = total_km if no_collision else total_km / collisions
    violations = sum(1 for r in steps if r["violation"])
    return EvalReport(
        scenario=scenario,
        theta_v=theta_v,
        runs=runs,
        collisions=collisions,
        collision_rate=100.0 * collisions / runs,
        total_distance_km=total_km,
        avg_distance_between_collisions=avg_dist,
        no_collision=no_collision,
        rule_violation_ratio=100.0 * violations / len(steps),
        lane_distribution=lane_distribution((r["lane"] for r in steps), n_lanes),
        avg_speed=float(np.mean([r["v"] for r in steps])),
        steps=len(steps),
    )


def _n_lanes(sc: ScenarioConfig) -> int:
    return sc.n_lanes + (1 if sc.scenario_id == "merging" else 0)


def run_seed(seed: int, run: int) -> tuple[int, int]:
    ss = np.random.SeedSequence([seed, run])
    a, b = ss.generate_state(2, dtype=np.uint64)
    return int(a), int(b)


def evaluate_run(
    policy,
    encoder: Encoder,
    sc: ScenarioConfig,
    rcfg,
    run: int,
    seed: int,
    theta_v: float | None,
    max_steps: int,
) -> list[dict]:
    """One greedy run to course end or first collision; returns its trace records."""
    traffic_seed, start_seed = run_seed(seed, run)
    scene = sim.build_scenario(sc.scenario_id, sc, traffic_seed)
    scene, theta, start = randomize_start(scene, np.random.default_rng(start_seed), theta_range(sc), theta_v)
    s0 = scene.ego.s
    records = []
    collided = False
    kind = None
    for t in range(max_steps):
        x = encoder(scene, theta)
        a = int(policy(x))
        scene, events = sim.step(scene, a)
        rb = reward.evaluate_step(scene, a, events, theta, rcfg)
        ego = scene.ego
        records.append(
            {
                "type": "step",
                "run": run,
                "t": t,
                "action": a,
                "s": round(ego.s, 6),
                "v": round(ego.v, 6),
                "lane": ego.lane,
                "reward": round(rb.reward, 6),
                "class": rb.s_class.value,
                "flags": rb.flags.as_dict(),
                "violation": bool(rb.flags.pass_right or rb.flags.safe_distance),
                "collision": events.collision,
                "kind": events.kind.value if events.kind else None,
            }
        )
        if events.collision:
            collided, kind = True, events.kind.value
            break
        if ego.s >= sc.course_length:
            break
    records.append(
        {
            "type": "run_end",
            "run": run,
            "collision": collided,
            "kind": kind,
            "distance": round(scene.ego.s - s0, 6),
            "theta_v": theta,
            "start": dataclasses.asdict(start),
        }
    )
    return records


def greedy_policy(params: mlp.NetworkParams):
    def policy(x):
        return greedy(mlp.forward(params, x))

    return policy


def evaluate(
    params: mlp.NetworkParams,
    cfg: RunConfig,
    scenario: str,
    n_runs: int | None = None,
    theta_v: float | None = None,
    seed: int = 0,
    empty: bool = False,
    policy=None,
) -> tuple[EvalReport, list[dict]]:
    """Greedy (epsilon = 0) evaluation over ``n_runs`` seeded runs.

    ``theta_v=None`` samples the desired speed per run from the scenario range.
    ``empty=True`` removes all background traffic.
    """
    encoder = Encoder(cfg.encoder)
    if params is not None and params.input_dim != encoder.dim:
        raise ValueError(
            f"checkpoint input_dim {params.input_dim} does not match encoder input_dim {encoder.dim}"
        )
    sc = cfg.scenario[scenario]
    if empty:
        sc = dataclasses.replace(sc, density=0.0)
    n_runs = cfg.eval.n_runs if n_runs is None else n_runs
    policy = policy if policy is not None else greedy_policy(params)
    records: list[dict] = [
        {
            "type": "header",
            "scenario": scenario,
            "theta_v": theta_v,
            "runs": n_runs,
            "seed": seed,
            "empty": empty,
            "n_lanes": _n_lanes(sc),
            "encoder": dataclasses.asdict(cfg.encoder),
            "input_dim": encoder.dim,
        }
    ]
    for run in range(n_runs):
        records += evaluate_run(policy, encoder, sc, cfg.reward, run, seed, theta_v, cfg.eval.max_steps)
    report = report_from_records(records, scenario, theta_v, _n_lanes(sc))
    records.append({"type": "report", "report": report.to_dict()})
    return report, records


def speed_sweep(
    params,
    cfg: RunConfig,
    scenario: str,
    theta_values: list[float],
    empty: bool = False,
    n_runs: int | None = None,
    seed: int = 0,
    policy=None,
) -> list[tuple[float, float]]:
    """(theta_v, average speed) per desired speed."""
    rows = []
    for tv in theta_values:
        rep, _ = evaluate(params, cfg, scenario, n_runs, tv, seed, empty, policy)
        rows.append((tv, rep.avg_speed))
    return rows


# --- files -----------------------------------------------------------------


def write_trace(records: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_trace(path: str) -> list[dict]:
    records = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise TraceError(f"line {lineno}: not valid JSON ({exc.msg})") from None
    if not records or records[0].get("type") != "header":
        raise TraceError("trace has no header record")
    if records[-1].get("type") != "report":
        raise TraceError("trace is truncated: no closing report record")
    return records


@dataclass
class ReplayResult:
    matches: bool
    recomputed: EvalReport
    embedded: dict
    warnings: list[str] = field(default_factory=list)


def replay(records: list[dict], encoder_cfg=None) -> ReplayResult:
    """Recompute the report from a trace's step records and compare with the embedded one."""
    header, embedded = records[0], records[-1]["report"]
    ends = [r for r in records if r["type"] == "run_end"]
    if len(ends) != header["runs"]:
        raise TraceError(f"trace has {len(ends)} completed runs, header declares {header['runs']}")
    rep = report_from_records(records, header["scenario"], header["theta_v"], header["n_lanes"])
    warnings = []
    if encoder_cfg is not None and header.get("encoder") != dataclasses.asdict(encoder_cfg):
        warnings.append("trace was produced with a different encoder configuration")
    return ReplayResult(_same(rep.to_dict(), embedded), rep, embedded, warnings)


def _same(a, b) -> bool:
    if isinstance(a, dict) and isinstance(b, dict):
        return a.keys() == b.keys() and all(_same(a[k], b[k]) for k in a)
    if isinstance(a, float) and isinstance(b, (int, float)):
        return a == b or (math.isnan(a) and math.isnan(b))
    return a == b


def write_report(report: EvalReport, json_path: str, csv_path: str) -> None:
    with open(json_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    flat = {k: v for k, v in report.to_dict().items() if k != "lane_distribution"}
    for lane, pct in report.lane_distribution.items():
        flat[f"lane_{lane}"] = pct
    with open(csv_path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(flat), lineterminator="\n")
        w.writeheader()
        w.writerow(flat)


def write_sweep(table: dict[str, list[tuple[float, float]]], path: str) -> None:
    """One row per theta_v, one average-speed column per setting."""
    cols = list(table)
    thetas = [tv for tv, _ in table[cols[0]]]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["theta_v", *cols])
        for i, tv in enumerate(thetas):
            w.writerow([tv, *(f"{table[c][i][1]:.3f}" for c in cols)])
