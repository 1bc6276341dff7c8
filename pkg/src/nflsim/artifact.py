"""Run artifacts on disk, and comparison between two runs.

A run directory holds:
  metrics.csv     per-round table, header
                  round,beta_r,beta_win,beta_true,acc,beta_guard,nfl_flag,event
  events.jsonl    one JSON event per line (reports, cancels, activations, ...)
  trajectory.csv  round,sha256-of-global-parameters (round 0 = initialization)
  summary.json    means over the last 10 rounds plus detection milestones
  manifest.json   echoed config and run provenance
  models.npz      final global parameters and any adapted models

Floats are written with shortest-roundtrip repr, so artifacts from the
same (config, seed) are byte-identical regardless of worker count.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .engine import RunResult
from .errors import ConfigError

METRICS_HEADER = "round,beta_r,beta_win,beta_true,acc,beta_guard,nfl_flag,event"


def _fmt(x: float) -> str:
    return repr(float(x))


def write_run(result: RunResult, out_dir, workers: int = 1) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    lines = [METRICS_HEADER]
    for m in result.metrics:
        lines.append(
            ",".join(
                [
                    str(m.round),
                    _fmt(m.beta_r),
                    _fmt(m.beta_win),
                    _fmt(m.beta_true),
                    _fmt(m.acc),
                    _fmt(m.beta_guard),
                    "true" if m.nfl_flag else "false",
                    ";".join(m.events),
                ]
            )
        )
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")

    with (out / "events.jsonl").open("w") as fh:
        for ev in result.events:
            fh.write(json.dumps(ev, sort_keys=True) + "\n")

    (out / "trajectory.csv").write_text(
        "\n".join(f"{r},{h}" for r, h in enumerate(result.trajectory)) + "\n"
    )

    (out / "summary.json").write_text(json.dumps(result.summary, indent=2, sort_keys=True) + "\n")

    manifest = {
        "config": result.config.to_dict(),
        "behaviors": result.behaviors,
        "workers": workers,
        "numpy": np.__version__,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    arrays = {"global": result.final_global.values}
    for cid, params in sorted(result.adapted.items()):
        arrays[f"adapted_{cid}"] = params.values
    np.savez(out / "models.npz", **arrays)
    return out


def load_metrics(run_dir) -> list[dict]:
    path = Path(run_dir) / "metrics.csv"
    rows = []
    lines = path.read_text().strip().splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise ConfigError(f"{path} does not look like a metrics table")
    for line in lines[1:]:
        parts = line.split(",")
        rows.append(
            {
                "round": int(parts[0]),
                "beta_r": float(parts[1]),
                "beta_win": float(parts[2]),
                "beta_true": float(parts[3]),
                "acc": float(parts[4]),
                "beta_guard": float(parts[5]),
                "nfl_flag": parts[6] == "true",
                "event": parts[7],
            }
        )
    return rows


def _load_json(run_dir, name: str) -> dict:
    return json.loads((Path(run_dir) / name).read_text())


def _load_trajectory(run_dir) -> list[str]:
    lines = (Path(run_dir) / "trajectory.csv").read_text().strip().splitlines()
    return [line.split(",")[1] for line in lines]


@dataclass
class CompareReport:
    rounds: int
    identical_trajectory: bool
    acc_delta: list[float]  # a minus b, per round
    beta_delta: list[float]
    final_acc_delta: float
    final_beta_delta: float
    final_beta_guard_delta: float


def compare_runs(run_a, run_b) -> CompareReport:
    """Per-round and final-summary deltas between two runs of equal shape."""
    man_a = _load_json(run_a, "manifest.json")["config"]
    man_b = _load_json(run_b, "manifest.json")["config"]
    for key in ("n_clients", "rounds"):
        if man_a[key] != man_b[key]:
            raise ConfigError(
                f"incompatible artifacts: {key} differs ({man_a[key]} vs {man_b[key]})"
            )
    met_a = load_metrics(run_a)
    met_b = load_metrics(run_b)
    sum_a = _load_json(run_a, "summary.json")
    sum_b = _load_json(run_b, "summary.json")
    traj_a = _load_trajectory(run_a)
    traj_b = _load_trajectory(run_b)
    return CompareReport(
        rounds=man_a["rounds"],
        identical_trajectory=traj_a == traj_b,
        acc_delta=[a["acc"] - b["acc"] for a, b in zip(met_a, met_b)],
        beta_delta=[a["beta_true"] - b["beta_true"] for a, b in zip(met_a, met_b)],
        final_acc_delta=sum_a["final_acc"] - sum_b["final_acc"],
        final_beta_delta=sum_a["final_beta_true"] - sum_b["final_beta_true"],
        final_beta_guard_delta=sum_a["final_beta_guard"] - sum_b["final_beta_guard"],
    )


def format_compare(report: CompareReport) -> str:
    lines = [
        f"rounds compared:        {report.rounds}",
        f"identical trajectory:   {'yes' if report.identical_trajectory else 'no'}",
        f"final ACC delta:        {report.final_acc_delta:+.4f}",
        f"final beta delta:       {report.final_beta_delta:+.4f}",
        f"final guard beta delta: {report.final_beta_guard_delta:+.4f}",
        f"max |per-round ACC delta|: {max(abs(d) for d in report.acc_delta):.4f}",
    ]
    return "\n".join(lines)
