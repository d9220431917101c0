"""Fast-slow orchestration: the 20 Hz control loop and the slow semantic cycle.

The fast loop never waits on the slow system: it always consumes the most
recently published directive snapshot, swapped in atomically between ticks.
Slow-cycle latency is simulated by withholding publication for the
configured delay, which keeps every episode deterministic for a fixed seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from fsdrive.attention.directive import AttentionDirective
from fsdrive.attention.pipeline import SlowSystemError, run_one_step, run_two_step
from fsdrive.attention.providers import (
    ChatProvider,
    OneStepMockProvider,
    RuleBasedProvider,
)
from fsdrive.attention.zones import ZoneGeometry
from fsdrive.dynamics import ControlInput, DynamicsParams
from fsdrive.fields import FieldParams, FieldScene, total_field
from fsdrive.memory import HashEmbedding, MemoryStore
from fsdrive.solver import Solution, SolverConfig, build_reference, shift_warm_start, solve_step
from fsdrive.world.log import EpisodeLog, TickRecord
from fsdrive.world.metrics import EpisodeMetrics, compute_metrics
from fsdrive.world.scenario import ScenarioSpec
from fsdrive.world.simulator import World
from fsdrive.runtime.predictors import ConstantVelocityPredictor, HistoryTracker, ModelPredictor

__all__ = ["DirectiveSnapshot", "AblationToggles", "RunConfig", "EpisodeRunner", "run_episode"]

STOP_LINE_MARGIN = 2.5
COMFORT_BRAKE = ControlInput(-2.0, 0.0)
HARD_FAILURE_REUSE_TICKS = 3


@dataclass(frozen=True)
class DirectiveSnapshot:
    directive: AttentionDirective
    issued_at: float
    seq: int


@dataclass(frozen=True)
class AblationToggles:
    two_step: bool = True
    risk_zone: bool = True
    memory: bool = True

    @classmethod
    def from_spec(cls, ablate: str) -> "AblationToggles":
        """Parse a CLI spec like "ts,rz" (listed features are DISABLED)."""
        items = {tok.strip() for tok in ablate.split(",") if tok.strip()}
        unknown = items - {"ts", "rz", "mem"}
        if unknown:
            raise ValueError(f"unknown ablation toggles: {sorted(unknown)}")
        return cls(
            two_step="ts" not in items,
            risk_zone="rz" not in items,
            memory="mem" not in items,
        )


@dataclass
class RunConfig:
    seed: int = 0
    slow_period_s: float = 1.0
    proximity_trigger_m: float = 20.0
    latency_range_s: tuple[float, float] = (0.3, 1.5)
    fixed_latency_s: float | None = None
    stale_fail_safe_s: float = 5.0
    ablation: AblationToggles = field(default_factory=AblationToggles)
    zone_geometry: ZoneGeometry = field(default_factory=ZoneGeometry)
    solver: SolverConfig = field(default_factory=SolverConfig)
    field_params: FieldParams = field(default_factory=FieldParams)
    retrieval_k: int = 3
    predictor_checkpoint: str | None = None
    seed_memory: str | Path | None = "builtin"
    out_dir: str | Path | None = None


def _initial_snapshot() -> DirectiveSnapshot:
    return DirectiveSnapshot(AttentionDirective.all_at_risk(), issued_at=0.0, seq=0)


def load_seed_memory(store: MemoryStore) -> None:
    """Preload the packaged exemplar dialogues into a fresh store."""
    path = resources.files("fsdrive.data").joinpath("seed_memory.jsonl")
    if not path.is_file():
        return
    for line in path.read_text().splitlines():
        line = line.strip()
        if line:
            item = MemoryStore._decode(line)
            store.items.append(item)
            store._content_ids[MemoryStore._content_hash(item.human, item.answer)] = item.item_id


class EpisodeRunner:
    """Drives one scenario episode under the fast-slow architecture."""

    def __init__(
        self,
        spec: ScenarioSpec,
        config: RunConfig,
        provider: ChatProvider | None = None,
        dyn: DynamicsParams | None = None,
    ) -> None:
        self.spec = spec
        self.config = config
        self.dyn = dyn or DynamicsParams()
        self.world = World(spec, dyn=self.dyn)
        self.rng = np.random.default_rng(config.seed)
        if provider is not None:
            self.provider = provider
        elif config.ablation.two_step:
            self.provider = RuleBasedProvider()
        else:
            self.provider = OneStepMockProvider()
        self.memory: MemoryStore | None = None
        if config.ablation.memory:
            # always an in-memory copy so episodes start from identical state
            self.memory = MemoryStore(HashEmbedding())
            if config.seed_memory == "builtin":
                load_seed_memory(self.memory)
            elif config.seed_memory is not None:
                seeded = MemoryStore(HashEmbedding(), path=config.seed_memory)
                self.memory.items = list(seeded.items)
                self.memory._content_ids = dict(seeded._content_ids)
                self.memory.path = None
        n = config.solver.N
        if config.predictor_checkpoint:
            from fsdrive.predictor.model import load_model

            model = load_model(config.predictor_checkpoint)
            if model.cfg.n_out != n:
                raise ValueError(
                    f"checkpoint horizon {model.cfg.n_out} != solver horizon {n}"
                )
            self.predictor = ModelPredictor(model, t_s=self.dyn.T_s)
            self.tracker = HistoryTracker(model.cfg.t_in)
        else:
            self.predictor = ConstantVelocityPredictor(n, t_s=self.dyn.T_s)
            self.tracker = HistoryTracker()

        self.snapshot = _initial_snapshot()
        self._pending: tuple[float, AttentionDirective | None] | None = None
        self._last_trigger_t = -1e9
        self._last_success_t = 0.0
        self._near_ids: set[int] = set()
        self._warm: Solution | None = None
        self._failure_streak = 0
        self._failsafe_active = False
        self.slow_failures = 0
        self.slow_cycles = 0
        self.fast_ms: list[float] = []

    # ------------------------------------------------------------ slow system

    def _draw_latency(self) -> float:
        if self.config.fixed_latency_s is not None:
            return self.config.fixed_latency_s
        lo, hi = self.config.latency_range_s
        return float(self.rng.uniform(lo, hi))

    def _should_trigger(self) -> bool:
        if self._pending is not None:
            return False  # previous cycle still unpublished: no overlap
        if self.world.t - self._last_trigger_t >= self.config.slow_period_s:
            return True
        near = {
            e.entity_id
            for e in self.world.traffic_entities()
            if (e.x - self.world.ego.p_x) ** 2 + (e.y - self.world.ego.p_y) ** 2
            <= self.config.proximity_trigger_m**2
        }
        fresh = near - self._near_ids
        self._near_ids |= near
        return bool(fresh)

    def slow_cycle(self) -> None:
        """Sense, reason, record, and queue the publication after the latency."""
        self._last_trigger_t = self.world.t
        self.slow_cycles += 1
        snap = self.world.sense()
        try:
            if self.config.ablation.two_step:
                directive, record = run_two_step(
                    self.provider,
                    snap,
                    memory=self.memory,
                    k=self.config.retrieval_k,
                    zone_geometry=self.config.zone_geometry,
                )
            else:
                directive, record = run_one_step(
                    self.provider, snap, zone_geometry=self.config.zone_geometry
                )
        except SlowSystemError:
            self.slow_failures += 1
            # failed cycle: the held directive stays, sequence unchanged
            self._pending = (self.world.t + self._draw_latency(), None)
            return
        if self.memory is not None and self.config.ablation.two_step:
            self.memory.record(record.human, record.answer, record.tags)
        self._pending = (self.world.t + self._draw_latency(), directive)

    def _publish_due(self) -> None:
        if self._pending is not None and self.world.t >= self._pending[0]:
            directive = self._pending[1]
            if directive is not None:
                self.snapshot = DirectiveSnapshot(
                    directive=directive, issued_at=self.world.t, seq=self.snapshot.seq + 1
                )
                self._last_success_t = self.world.t
                self._failsafe_active = False
            self._pending = None

    def _check_staleness(self) -> None:
        if self.world.t - self._last_success_t > self.config.stale_fail_safe_s and (
            not self._failsafe_active
        ):
            self.snapshot = DirectiveSnapshot(
                AttentionDirective.all_at_risk(),
                issued_at=self.world.t,
                seq=self.snapshot.seq + 1,
            )
            self._failsafe_active = True

    # ------------------------------------------------------------ fast system

    def gated_scene(self) -> FieldScene:
        stop_geo, _ = self.world.stop_geometry()
        if not self.config.ablation.risk_zone:
            # without the risk-zone vocabulary no entity is admitted
            vehicles, vrus = (), ()
        else:
            vehicles, vrus = self.world.field_entities()
        return FieldScene(
            vehicles=vehicles,
            vrus=vrus,
            markings=self.world.ego_markings,
            stop_line=stop_geo,
        )

    def fast_tick(self) -> tuple[ControlInput, dict]:
        """Gate, forecast, build the reference, solve, and pick the control."""
        t0 = time.perf_counter()
        cfg = self.config
        world = self.world
        ego = world.ego
        directive = self.snapshot.directive

        entities = world.traffic_entities()
        self.tracker.update(entities)
        scene = self.gated_scene()
        predictions = self.predictor.predict(entities, self.tracker)

        stop_geo, s_stop = world.stop_geometry()
        s_max = None
        if directive.btw and stop_geo is not None and stop_geo.beta == 1:
            s_max = s_stop - STOP_LINE_MARGIN
        ref = build_reference(
            self.spec.ego.route, ego, self.spec.ego.v_ref, cfg.solver.N, self.dyn.T_s, s_max
        )

        failure = False
        try:
            sol = solve_step(
                ego,
                directive,
                scene,
                predictions,
                ref,
                cfg.solver,
                warm=self._warm,
                dyn=self.dyn,
                field_params=cfg.field_params,
                zone_geometry=cfg.zone_geometry,
            )
            if not np.isfinite(sol.cost) or not np.all(np.isfinite(sol.U)):
                failure = True
        except Exception:
            failure = True
            sol = None

        if failure:
            self._failure_streak += 1
            if self._warm is not None and self._failure_streak <= HARD_FAILURE_REUSE_TICKS:
                control = self._warm.first_control
                self._warm = shift_warm_start(self._warm)
            else:
                control = COMFORT_BRAKE
                self._warm = None
            solve_ms, iters, cost = 0.0, 0, float("nan")
        else:
            self._failure_streak = 0
            control = sol.first_control
            self._warm = shift_warm_start(sol)
            solve_ms, iters, cost = sol.solve_time_ms, sol.iterations, sol.cost

        field_value = total_field(
            scene, ego, directive, None, cfg.field_params, cfg.zone_geometry
        )
        self.fast_ms.append((time.perf_counter() - t0) * 1e3)
        return control, {
            "solve_ms": solve_ms,
            "iters": iters,
            "cost": cost,
            "field": field_value,
            "seq": self.snapshot.seq,
            "directive": directive,
        }

    # ----------------------------------------------------------------- episode

    def run(self) -> tuple[EpisodeMetrics, EpisodeLog]:
        log = EpisodeLog(scenario=self.spec)
        max_ticks = int(round(self.spec.duration_cap_s / self.dyn.T_s))
        for _ in range(max_ticks):
            self._publish_due()
            self._check_staleness()
            if self._should_trigger():
                self.slow_cycle()
                self._publish_due()  # zero-latency configs publish immediately
            control, info = self.fast_tick()
            events = self.world.step(control)
            d: AttentionDirective = info["directive"]
            log.ticks.append(
                TickRecord(
                    t=self.world.t,
                    p_x=self.world.ego.p_x,
                    p_y=self.world.ego.p_y,
                    phi=self.world.ego.phi,
                    v_x=self.world.ego.v_x,
                    v_y=self.world.ego.v_y,
                    omega=self.world.ego.omega,
                    a=control.a,
                    delta=control.delta,
                    solve_ms=info["solve_ms"],
                    iters=info["iters"],
                    cost=info["cost"],
                    seq=info["seq"],
                    scene="|".join(d.scene),
                    zones="".join(str(z) for z in d.zones),
                    mks="".join(str(m) for m in d.mks),
                    btw=d.btw,
                    field=info["field"],
                    min_ttc=self.world.min_ttc(),
                    events=";".join(events),
                )
            )
            if self.world.ego_done_time is not None:
                break
        log.completed_time = self.world.ego_done_time
        metrics = compute_metrics(log)
        if self.config.out_dir is not None:
            out = Path(self.config.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            log.write_csv(out / f"{self.spec.name}_seed{self.config.seed}.csv")
        return metrics, log


def run_episode(
    spec: ScenarioSpec,
    config: RunConfig | None = None,
    provider: ChatProvider | None = None,
) -> tuple[EpisodeMetrics, EpisodeLog]:
    """Run one scenario to route completion or the duration cap."""
    runner = EpisodeRunner(spec, config or RunConfig(), provider=provider)
    return runner.run()
