"""Run artifacts: deterministic CSV output, config hashing, run manifests,
and the matplotlib figures rendered next to each CSV.

CSV numbers are written with 17 significant digits so a replayed run can be
compared byte for byte; the figures are derived artifacts and carry no
replay contract.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def format_value(x) -> str:
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def write_csv(path: Path, header: list[str], rows: list[tuple]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def config_hash(config: dict) -> str:
    """Hash of the experiment-relevant config; output directory and worker
    count are excluded because they must not affect results."""
    relevant = {k: v for k, v in sorted(config.items()) if k not in ("out", "workers")}
    blob = json.dumps(relevant, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    seed: int
    code_version: str
    checks: dict = field(default_factory=dict)
    fitted: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    outputs: list = field(default_factory=list)
    wall_time_s: float = 0.0
    _t0: float = field(default_factory=time.monotonic, repr=False)

    def add_check(self, name: str, passed: bool) -> None:
        self.checks[name] = "PASS" if passed else "FAIL"

    @property
    def all_passed(self) -> bool:
        return all(v == "PASS" for v in self.checks.values())

    def write(self, out_dir: Path) -> Path:
        self.wall_time_s = time.monotonic() - self._t0
        path = out_dir / f"manifest_{self.config_hash}.json"
        payload = {
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "code_version": self.code_version,
            "wall_time_s": self.wall_time_s,
            "checks": self.checks,
            "fitted": self.fitted,
            "warnings": self.warnings,
            "outputs": self.outputs,
        }
        path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
        return path


def new_figure(n_axes: int = 1, width: float = 6.0, height: float = 4.0):
    fig, axes = plt.subplots(1, n_axes, figsize=(width * n_axes, height))
    return fig, axes


def save_figure(fig, path: Path) -> None:
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
