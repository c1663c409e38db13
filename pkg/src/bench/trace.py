"""Closed-loop traces, run summaries and their CSV / JSON outputs."""

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import structlog
from pydantic import BaseModel

from src.core.config import settings
from src.loop.state import StepRecord
from src.netmodel import NetworkModel

logger = structlog.get_logger(__name__)


class RunSummary(BaseModel):
    controller: str
    policy: str
    seed: int
    steps: int
    total_cost: float
    state_violations: int
    input_violations: int
    max_state_violation: float
    fallbacks: int
    statuses: dict[str, int]
    max_beta_sum: Optional[float] = None
    max_alpha_sum: Optional[float] = None
    median_solve_ms: float
    modified_steps: int


@dataclass(eq=False)
class SimTrace:
    """
    Records of one run; ``x_final`` is x(T), so states span t = 0..T.

    Violations are counted on x(1..T) and on every applied input with
    slack ``membership_slack``.
    """

    model: NetworkModel
    records: list[StepRecord]
    x_final: np.ndarray
    controller: str
    policy: str
    seed: int
    fallbacks: int = 0
    metadata: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return len(self.records)

    @property
    def states(self) -> np.ndarray:
        return np.vstack([r.x for r in self.records] + [self.x_final])

    @property
    def inputs(self) -> np.ndarray:
        return np.vstack([r.u_cert for r in self.records]) if self.records else np.zeros((0, self.model.m))

    @property
    def proposals(self) -> np.ndarray:
        return np.vstack([r.u_L for r in self.records]) if self.records else np.zeros((0, self.model.m))

    @property
    def statuses(self) -> list[str]:
        return [r.status for r in self.records]

    @property
    def beta_sums(self) -> np.ndarray:
        return np.array([float(np.sum(r.beta)) for r in self.records])

    @property
    def alpha_sums(self) -> np.ndarray:
        return np.array([float(np.sum(r.alpha)) for r in self.records])

    @property
    def total_cost(self) -> float:
        return float(sum(np.sum(r.stage_cost) for r in self.records))

    def state_violation_profile(self) -> np.ndarray:
        return np.array([self.model.state_violation(x) for x in self.states[1:]])

    def input_violation_profile(self) -> np.ndarray:
        return np.array([self.model.input_violation(u) for u in self.inputs])

    def state_violations(self, slack: Optional[float] = None) -> int:
        slack = settings.membership_slack if slack is None else slack
        return int(np.count_nonzero(self.state_violation_profile() > slack))

    def input_violations(self, slack: Optional[float] = None) -> int:
        slack = settings.membership_slack if slack is None else slack
        return int(np.count_nonzero(self.input_violation_profile() > slack))

    def summary(self) -> RunSummary:
        certified = self.controller != "raw"
        solve_ms = [r.solve_ms for r in self.records]
        violation = self.state_violation_profile()
        modified = sum(
            1 for r in self.records if not np.allclose(r.u_cert, r.u_L, atol=np.sqrt(settings.passthrough_tol))
        )
        return RunSummary(
            controller=self.controller,
            policy=self.policy,
            seed=self.seed,
            steps=self.steps,
            total_cost=self.total_cost,
            state_violations=self.state_violations(),
            input_violations=self.input_violations(),
            max_state_violation=float(np.max(violation)) if violation.size else 0.0,
            fallbacks=self.fallbacks,
            statuses=dict(Counter(self.statuses)),
            max_beta_sum=float(np.max(self.beta_sums)) if certified and self.records else None,
            max_alpha_sum=float(np.max(self.alpha_sums)) if certified and self.records else None,
            median_solve_ms=float(np.median(solve_ms)) if solve_ms else 0.0,
            modified_steps=modified if self.controller == "certified" else 0,
        )

    def rows(self) -> list[dict]:
        """One row per (t, subsystem)."""
        model = self.model
        n_max = max(sub.n for sub in model.subsystems)
        m_max = max(sub.m for sub in model.subsystems)
        p_max = max(sub.p for sub in model.subsystems)
        out = []
        for r in self.records:
            for i, sub in enumerate(model.subsystems):
                row = {"t": r.t, "subsystem": i}
                x_i = r.x[model.state_slice(i)]
                for k in range(n_max):
                    row[f"state_{k}"] = x_i[k] if k < sub.n else ""
                for name, vec, sl, size, width in (
                    ("u_L", r.u_L, model.input_slice(i), sub.m, m_max),
                    ("u_cert", r.u_cert, model.input_slice(i), sub.m, m_max),
                    ("w", r.w, model.disturbance_slice(i), sub.p, p_max),
                ):
                    local = vec[sl]
                    for k in range(width):
                        row[f"{name}_{k}"] = local[k] if k < size else ""
                row["beta"] = r.beta[i]
                row["alpha"] = r.alpha[i]
                row["status"] = r.status
                row["stage_cost"] = r.stage_cost[i]
                row["solve_ms"] = r.solve_ms
                out.append(row)
        return out

    def write_csv(self, path: str | Path) -> None:
        rows = self.rows()
        if not rows:
            Path(path).write_text("", encoding="utf-8")
            return
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)

    def write(self, out_dir: str | Path) -> Path:
        """trace.csv plus summary.json in ``out_dir``."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        self.write_csv(out_dir / "trace.csv")
        (out_dir / "summary.json").write_text(self.summary().model_dump_json(indent=2), encoding="utf-8")
        logger.info("Trace written", out_dir=str(out_dir), steps=self.steps)
        return out_dir
