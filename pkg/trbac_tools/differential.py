#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pruebas Diferenciales Motor vs Oráculo
======================================

Genera una política y una secuencia de operaciones a partir de una semilla,
las ejecuta contra ``AuthzEngine`` y contra ``OracleModel`` y compara cada
resultado (veredicto, razón, estado de la instancia y alertas emitidas).

Por defecto toda la secuencia corre sobre el mismo par motor/oráculo; con
``episode_length`` se parte en episodios independientes. Cada divergencia se
informa junto con la secuencia mínima que la reproduce.
"""

import concurrent.futures
from collections import Counter
from dataclasses import asdict, dataclass, field
from datetime import timedelta
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from trbac_core.authn import Session
from trbac_core.authz_engine import AuthzEngine
from trbac_core.errors import AuthzError
from trbac_core.logs import LogFn
from trbac_core.policy_model import PolicyStore, resolve_effective_roles
from trbac_core.utils import ManualClock

from .generator import GENERATED_TENANT, PolicyDims, generate_policy
from .oracle import OracleMatrix, OracleModel

OP_KINDS = ("activate", "access", "complete", "delegate")
OP_WEIGHTS = (0.3, 0.45, 0.1, 0.15)
PROCESS_INSTANCES = (None, "p0", "p1")
EXPIRED_PROBABILITY = 0.05

EngineFactory = Callable[..., AuthzEngine]


def _silent(message: str, level: str = "INFO") -> None:
    pass


@dataclass(frozen=True)
class Operation:
    kind: str
    user: str
    location: str
    expired: bool
    task: str
    process_instance: Optional[str]
    instance_ref: int
    perm_index: int
    target: str

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class Outcome:
    kind: str
    verdict: str
    reason: str
    usage: Optional[int] = None
    state: Optional[str] = None
    holder: Optional[str] = None
    alerts: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


SKIPPED = Outcome(kind="skip", verdict="skip", reason="no-instance")


@dataclass
class Divergence:
    episode: int
    step: int
    category: str
    operations: List[Operation]
    engine: Outcome
    oracle: Outcome

    def to_dict(self) -> Dict[str, Any]:
        return {
            "episode": self.episode,
            "step": self.step,
            "category": self.category,
            "operations": [op.to_dict() for op in self.operations],
            "engine": self.engine.to_dict(),
            "oracle": self.oracle.to_dict(),
        }


@dataclass
class DivergenceReport:
    seed: int
    operations: int
    divergences: List[Divergence] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.divergences

    @property
    def categories(self) -> Dict[str, int]:
        return dict(Counter(d.category for d in self.divergences))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "seed": self.seed,
            "operations": self.operations,
            "ok": self.ok,
            "categories": self.categories,
            "divergences": [d.to_dict() for d in self.divergences],
        }


# =============================================================================
# GENERACIÓN DE OPERACIONES
# =============================================================================

def generate_operations(rng: np.random.Generator, matrix: OracleMatrix, n: int) -> List[Operation]:
    ops: List[Operation] = []
    if not matrix.users:
        return ops
    users = matrix.users
    tasks = matrix.tasks or ["none"]
    for _ in range(n):
        ops.append(Operation(
            kind=OP_KINDS[int(rng.choice(len(OP_KINDS), p=OP_WEIGHTS))],
            user=users[int(rng.integers(0, len(users)))],
            location=matrix.locations[int(rng.integers(0, len(matrix.locations)))],
            expired=bool(rng.random() < EXPIRED_PROBABILITY),
            task=tasks[int(rng.integers(0, len(tasks)))],
            process_instance=PROCESS_INSTANCES[int(rng.integers(0, len(PROCESS_INSTANCES)))],
            instance_ref=int(rng.integers(0, 1 << 16)),
            perm_index=int(rng.integers(0, len(matrix.perms))),
            target=users[int(rng.integers(0, len(users)))],
        ))
    return ops


# =============================================================================
# EJECUCIÓN
# =============================================================================

class _EngineSide:
    """Motor real con sesiones sintéticas y reloj fijo"""

    def __init__(self, store: PolicyStore, matrix: OracleMatrix, factory: EngineFactory):
        self.store = store
        self.matrix = matrix
        self.clock = ManualClock()
        self.alerts: List[Any] = []
        counter = iter(range(1 << 30))
        self.engine = factory(
            store, clock=self.clock, on_alert=self.alerts.append, logger=_silent,
            id_factory=lambda: f"i{next(counter)}",
        )
        self.created: List[str] = []

    def _session(self, op: Operation) -> Session:
        user = op.user
        now = self.clock()
        return Session(
            token=f"tok-{user}",
            user=user,
            tenant=GENERATED_TENANT,
            active_roles=resolve_effective_roles(self.store, GENERATED_TENANT, user),
            location=op.location,
            issued_at=now - timedelta(hours=1),
            expires_at=now - timedelta(seconds=1) if op.expired else now + timedelta(hours=1),
        )

    def run(self, op: Operation) -> Outcome:
        before = len(self.alerts)
        session = self._session(op)
        if op.kind == "activate":
            try:
                inst = self.engine.activate_task(session, op.task, op.process_instance)
            except AuthzError as exc:
                return self._denied(op, exc, before)
            self.created.append(inst.id)
            return self._outcome(op, "ok", "ok", inst.id, before)

        if not self.created:
            return SKIPPED
        instance_id = self.created[op.instance_ref % len(self.created)]
        if op.kind == "access":
            decision = self.engine.check_access(session, instance_id, self.matrix.perms[op.perm_index])
            return self._outcome(op, decision.verdict.value, decision.reason, instance_id, before)
        try:
            if op.kind == "complete":
                self.engine.complete_task(session, instance_id)
            else:
                self.engine.delegate_task(session, instance_id, op.target)
        except AuthzError as exc:
            return self._denied(op, exc, before, instance_id)
        return self._outcome(op, "ok", "ok", instance_id, before)

    def _denied(self, op: Operation, exc: AuthzError, before: int, instance_id: Optional[str] = None) -> Outcome:
        return self._outcome(op, "deny", exc.code.value, instance_id, before)

    def _outcome(self, op: Operation, verdict: str, reason: str, instance_id: Optional[str], before: int) -> Outcome:
        inst = self.engine.get_instance(GENERATED_TENANT, instance_id) if instance_id else None
        return Outcome(
            kind=op.kind, verdict=verdict, reason=reason,
            usage=inst.usage_count if inst else None,
            state=inst.state.value if inst else None,
            holder=inst.holder if inst else None,
            alerts=len(self.alerts) - before,
        )


class _OracleSide:
    def __init__(self, matrix: OracleMatrix):
        self.matrix = matrix
        self.model = OracleModel(matrix)

    def run(self, op: Operation) -> Outcome:
        model = self.model
        if op.kind == "activate":
            verdict, reason = model.activate(op.user, op.expired, op.task, op.process_instance)
            ref = len(model.instances) - 1 if verdict == "ok" else None
            return self._outcome(op, verdict, reason, ref)
        if not model.instances:
            return SKIPPED
        ref = op.instance_ref % len(model.instances)
        if op.kind == "access":
            result = model.access(op.user, op.expired, op.location, ref, self.matrix.perms[op.perm_index])
        elif op.kind == "complete":
            result = model.complete(op.user, op.expired, ref)
        else:
            result = model.delegate(op.user, op.expired, ref, op.target)
        return self._outcome(op, result[0], result[1], ref)

    def _outcome(self, op: Operation, verdict: str, reason: str, ref: Optional[int]) -> Outcome:
        inst = self.model.instances[ref] if ref is not None else None
        return Outcome(
            kind=op.kind, verdict=verdict, reason=reason,
            usage=inst.usage if inst else None,
            state=inst.state if inst else None,
            holder=inst.holder if inst else None,
            alerts=1 if verdict == "deny" else 0,
        )


def categorize(engine: Outcome, oracle: Outcome) -> str:
    if engine.reason != oracle.reason:
        return oracle.reason if oracle.reason != "ok" else engine.reason
    if engine.state != oracle.state and "deactivated" in (engine.state, oracle.state):
        return "usage-exhausted"
    if engine.alerts != oracle.alerts:
        return "alerts"
    return "state"


def first_divergence(store: PolicyStore, matrix: OracleMatrix, ops: List[Operation],
                     factory: EngineFactory) -> Optional[Tuple[int, Outcome, Outcome]]:
    engine, oracle = _EngineSide(store, matrix, factory), _OracleSide(matrix)
    for step, op in enumerate(ops):
        got, expected = engine.run(op), oracle.run(op)
        if got != expected:
            return step, got, expected
    return None


def shrink(store: PolicyStore, matrix: OracleMatrix, ops: List[Operation],
           factory: EngineFactory) -> List[Operation]:
    """Quita bloques de operaciones (de la mitad hasta uno) mientras la divergencia persista"""
    hit = first_divergence(store, matrix, ops, factory)
    if hit is None:
        return ops
    current = ops[:hit[0] + 1]
    size = max(1, len(current) // 2)
    while True:
        i = 0
        while i < len(current):
            candidate = current[:i] + current[i + size:]
            found = first_divergence(store, matrix, candidate, factory) if candidate else None
            if found is not None:
                current = candidate[:found[0] + 1]
            else:
                i += size
        if size == 1:
            return current
        size = max(1, size // 2)


def run_differential(
    seed: int,
    n: int,
    engine_factory: EngineFactory = AuthzEngine,
    episode_length: Optional[int] = None,
    dims: Optional[PolicyDims] = None,
    logger: Optional[LogFn] = None,
) -> DivergenceReport:
    """Ejecuta ``n`` operaciones pseudoaleatorias; vacío si motor y oráculo coinciden.

    Sin ``episode_length`` la secuencia completa se replica sobre un único
    par motor/oráculo. Tras una divergencia ambos lados se reinician en la
    operación siguiente y la comparación continúa, de modo que el reporte
    incluye todas las divergencias de la secuencia; cada una se reproduce con
    la historia posterior a la anterior.
    """
    log = logger or _silent
    store = generate_policy(seed, dims)
    matrix = OracleMatrix.build(store, GENERATED_TENANT)
    rng = np.random.default_rng(seed)
    ops = generate_operations(rng, matrix, n)
    report = DivergenceReport(seed=seed, operations=n)
    if episode_length is not None and episode_length < 1:
        raise ValueError("episode_length debe ser >= 1")

    episode, start = 0, 0
    while start < len(ops):
        end = len(ops) if episode_length is None else min(len(ops), start + episode_length)
        chunk = ops[start:end]
        hit = first_divergence(store, matrix, chunk, engine_factory)
        if hit is None:
            start = end
            episode += 1
            continue
        step, got, expected = hit
        minimal = shrink(store, matrix, chunk, engine_factory)
        final = first_divergence(store, matrix, minimal, engine_factory)
        if final is not None:
            _, got, expected = final
        category = categorize(got, expected)
        log(f"[Differential] seed={seed} episodio={episode} paso={start + step}: {category}", "WARNING")
        report.divergences.append(Divergence(
            episode=episode, step=start + step, category=category,
            operations=minimal, engine=got, oracle=expected,
        ))
        start += step + 1
        episode += 1
    log(f"[Differential] seed={seed}: {n} operaciones, {len(report.divergences)} divergencias")
    return report


def run_many(seeds: Iterable[int], n: int, workers: int = 4, **kwargs: Any) -> List[DivergenceReport]:
    """Una ejecución por semilla en paralelo; resultados en el orden de ``seeds``"""
    seeds = list(seeds)
    with concurrent.futures.ThreadPoolExecutor(max_workers=max(1, workers)) as executor:
        futures = [executor.submit(run_differential, seed, n, **kwargs) for seed in seeds]
        return [f.result() for f in futures]
