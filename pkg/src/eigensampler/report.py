"""Result emission: summary documents, trajectory tables, figures.

Every numeric field in a bundle is reproducible bitwise from the resolved
config and seed; wall-clock timings are quarantined under "timing" and are
the only non-deterministic entries.  Trajectory tables are plain
delimiter-separated text with a header row; figures render the same data
for quick inspection and are never parsed back.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .engine import TrajectoryRecord

SCHEMA_VERSION = 1

TRAJECTORY_COLUMNS = (
    "step", "imaginary_time", "projector_id", "step_success_prob", "energy"
)


@dataclass
class ResultBundle:
    """Everything one solve emits: config echo, summaries, file manifest."""

    resolved_config: dict
    seed: int
    levels: list
    gap: Optional[dict] = None
    timing: dict = field(default_factory=dict)
    files: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        doc = {
            "schema_version": self.schema_version,
            "seed": self.seed,
            "resolved_config": self.resolved_config,
            "levels": self.levels,
        }
        if self.gap is not None:
            doc["gap"] = self.gap
        doc["timing"] = self.timing
        doc["files"] = self.files
        return doc


def write_trajectory_csv(path, record: TrajectoryRecord, seed) -> Path:
    """One row per recorded step; prefixed with schema/seed/status comments."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION} seed={seed}\n")
        fh.write(f"# status={record.status} restarts={record.restarts}\n")
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for row in zip(
            record.steps, record.times, record.projector_ids,
            record.success_probs, record.energies,
        ):
            writer.writerow([row[0], repr(row[1]), row[2], repr(row[3]), repr(row[4])])
    return path


def read_trajectory_csv(path):
    """Round-trip reader for trajectory tables (used by tests and sweeps)."""
    rows = []
    with open(path, newline="") as fh:
        data = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(data)
    for entry in reader:
        rows.append(
            {
                "step": int(entry["step"]),
                "imaginary_time": float(entry["imaginary_time"]),
                "projector_id": int(entry["projector_id"]),
                "step_success_prob": float(entry["step_success_prob"]),
                "energy": float(entry["energy"]),
            }
        )
    return rows


def write_summary_json(path, bundle: ResultBundle) -> Path:
    path = Path(path)
    with open(path, "w") as fh:
        json.dump(bundle.to_dict(), fh, indent=2)
        fh.write("\n")
    return path


def render_energy_figure(path, level_records, oracle_energies, title) -> Path:
    """Energy along imaginary time for every level, oracle levels dashed."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for level, record in enumerate(level_records):
        ax.plot(record.times, record.energies, lw=1.0, label=f"level {level}")
    for energy in oracle_energies:
        ax.axhline(energy, color="gray", lw=0.6, ls="--", zorder=0)
    ax.set_xlabel("imaginary time")
    ax.set_ylabel("energy")
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def render_fidelity_figure(path, fidelities, title) -> Path:
    """Final fidelity against the oracle eigenspace, one bar per level."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    levels = list(range(len(fidelities)))
    ax.bar(levels, fidelities, width=0.6, color="#4878cf")
    for level, fid in zip(levels, fidelities):
        ax.text(level, fid, f"{fid:.4f}", ha="center", va="bottom", fontsize=8)
    ax.axhline(1.0, color="gray", lw=0.6, ls="--")
    ax.set_ylim(0, 1.08)
    ax.set_xticks(levels)
    ax.set_xlabel("level")
    ax.set_ylabel("fidelity vs oracle")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150, metadata={"Date": None})
    plt.close(fig)
    return Path(path)


def write_bundle(out_dir, bundle: ResultBundle, formats, level_records,
                 oracle_energies, title) -> dict:
    """Write the requested formats; returns {kind: [paths]} and updates the bundle."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {"trajectories": [], "figures": [], "summary": []}
    if "csv" in formats:
        for level, record in enumerate(level_records):
            path = write_trajectory_csv(
                out_dir / f"level{level}_trajectory.csv", record, bundle.seed
            )
            files["trajectories"].append(str(path))
    if "png" in formats:
        files["figures"].append(
            str(render_energy_figure(out_dir / "energy.png", level_records,
                                     oracle_energies, title))
        )
        fidelities = [entry["median_fidelity"] for entry in bundle.levels]
        files["figures"].append(
            str(render_fidelity_figure(out_dir / "fidelity.png", fidelities, title))
        )
    bundle.files = {k: v for k, v in files.items() if v}
    if "json" in formats:
        path = write_summary_json(out_dir / "summary.json", bundle)
        bundle.files.setdefault("summary", []).append(str(path))
        # rewrite so the manifest includes the summary itself
        write_summary_json(path, bundle)
        files["summary"].append(str(path))
    return bundle.files
