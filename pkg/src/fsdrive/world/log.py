"""Per-tick episode record and its CSV serialization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields as dc_fields
from pathlib import Path

from fsdrive.world.scenario import ScenarioSpec

__all__ = ["TickRecord", "EpisodeLog"]

CSV_COLUMNS = (
    "t",
    "p_x",
    "p_y",
    "phi",
    "v_x",
    "v_y",
    "omega",
    "a",
    "delta",
    "solve_ms",
    "iters",
    "cost",
    "seq",
    "scene",
    "zones",
    "mks",
    "btw",
    "field",
    "min_ttc",
    "events",
)


@dataclass
class TickRecord:
    t: float
    p_x: float
    p_y: float
    phi: float
    v_x: float
    v_y: float
    omega: float
    a: float
    delta: float
    solve_ms: float
    iters: int
    cost: float
    seq: int
    scene: str
    zones: str  # four flags, e.g. "1000"
    mks: str  # two flags, e.g. "10"
    btw: int
    field: float
    min_ttc: float
    events: str  # ";"-joined tokens

    _FLOAT_COLUMNS = frozenset(
        ("t", "p_x", "p_y", "phi", "v_x", "v_y", "omega", "a", "delta",
         "solve_ms", "cost", "field", "min_ttc")
    )

    def row(self) -> list[str]:
        out = []
        for name in CSV_COLUMNS:
            value = getattr(self, name)
            # plain-float repr regardless of any numpy scalar sneaking in
            out.append(repr(float(value)) if name in self._FLOAT_COLUMNS else str(value))
        return out


@dataclass
class EpisodeLog:
    scenario: ScenarioSpec
    ticks: list[TickRecord] = field(default_factory=list)
    completed_time: float | None = None

    @property
    def duration_s(self) -> float:
        return self.ticks[-1].t if self.ticks else 0.0

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for tick in self.ticks:
                writer.writerow(tick.row())

    @classmethod
    def read_csv(cls, path, scenario: ScenarioSpec) -> "EpisodeLog":
        ticks: list[TickRecord] = []
        completed = None
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            for row in reader:
                tick = TickRecord(
                    t=float(row["t"]),
                    p_x=float(row["p_x"]),
                    p_y=float(row["p_y"]),
                    phi=float(row["phi"]),
                    v_x=float(row["v_x"]),
                    v_y=float(row["v_y"]),
                    omega=float(row["omega"]),
                    a=float(row["a"]),
                    delta=float(row["delta"]),
                    solve_ms=float(row["solve_ms"]),
                    iters=int(row["iters"]),
                    cost=float(row["cost"]),
                    seq=int(row["seq"]),
                    scene=row["scene"],
                    zones=row["zones"],
                    mks=row["mks"],
                    btw=int(row["btw"]),
                    field=float(row["field"]),
                    min_ttc=float(row["min_ttc"]) if row["min_ttc"] != "inf" else math.inf,
                    events=row["events"],
                )
                ticks.append(tick)
                if "done" in tick.events.split(";"):
                    completed = tick.t
        return cls(scenario=scenario, ticks=ticks, completed_time=completed)
