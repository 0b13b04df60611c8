#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Oráculo de fuerza bruta
=======================

Reescritura independiente de las reglas de autorización sobre matrices
booleanas de numpy. No importa nada del motor ni las funciones de
resolución del modelo: solo lee los datos del ``PolicyStore``.

- ``OracleMatrix``: asignación, jerarquía (cierre por potencias booleanas),
  otorgamientos, permisos, ubicaciones y conflictos de SoD dinámica.
- ``oracle_decide``: veredicto de una petición por enumeración literal.
- ``OracleModel``: máquina de estados de instancias paralela a la del motor.
"""

from dataclasses import dataclass, field
from itertools import product
from typing import Dict, List, Optional, Set, Tuple

import numpy as np

from trbac_core.policy_model import Permission, PolicyStore, SodMode

OFF_MAP_LOCATION = "elsewhere"
UNMAPPED_PERMISSION = Permission("read", "__unmapped__")

STATES = ("active", "deactivated", "completed")


def _closure(direct: np.ndarray) -> np.ndarray:
    """Cierre reflexivo-transitivo de una relación booleana cuadrada"""
    reach = direct | np.eye(direct.shape[0], dtype=bool)
    while True:
        nxt = reach | ((reach.astype(np.int64) @ reach.astype(np.int64)) > 0)
        if np.array_equal(nxt, reach):
            return reach
        reach = nxt


@dataclass
class OracleMatrix:
    tenant: str
    users: List[str]
    roles: List[str]
    tasks: List[str]
    perms: List[Permission]
    locations: List[str]
    assigned: np.ndarray       # U x R
    effective: np.ndarray      # U x R
    senior_of: np.ndarray      # R x U: el rol es senior estricto de algún rol asignado al usuario
    grants: np.ndarray         # R x T
    task_perms: np.ndarray     # T x P
    location_ok: np.ndarray    # U x T x L
    may_activate: np.ndarray   # U x T
    may_delegate: np.ndarray   # A x H x V
    conflicts: np.ndarray      # T x T, SoD dinámica
    usage_limit: np.ndarray    # T

    @classmethod
    def build(cls, store: PolicyStore, tenant: str) -> "OracleMatrix":
        users = sorted(u for t, u in store.users if t == tenant)
        roles = sorted(r for t, r in store.roles if t == tenant)
        tasks = sorted(k for t, k in store.tasks if t == tenant)
        perms = sorted(
            {p for (t, _), d in store.tasks.items() if t == tenant for p in d.permissions},
            key=str,
        ) + [UNMAPPED_PERMISSION]
        locations = sorted(store.locations) + [OFF_MAP_LOCATION]
        ui = {u: i for i, u in enumerate(users)}
        ri = {r: i for i, r in enumerate(roles)}
        ti = {k: i for i, k in enumerate(tasks)}
        pi = {p: i for i, p in enumerate(perms)}
        li = {loc: i for i, loc in enumerate(locations)}
        nu, nr, nt, npm, nl = len(users), len(roles), len(tasks), len(perms), len(locations)

        assigned = np.zeros((nu, nr), dtype=bool)
        for u in users:
            for r in store.users[(tenant, u)].assigned_roles:
                assigned[ui[u], ri[r]] = True

        junior = np.zeros((nr, nr), dtype=bool)
        grants = np.zeros((nr, nt), dtype=bool)
        allowed = np.ones((nr, nl), dtype=bool)
        for r in roles:
            role = store.roles[(tenant, r)]
            for j in role.juniors:
                junior[ri[r], ri[j]] = True
            for k in role.granted_tasks:
                grants[ri[r], ti[k]] = True
            if role.allowed_locations:
                allowed[ri[r], :] = False
                for loc in role.allowed_locations:
                    allowed[ri[r], li[loc]] = True

        reach = _closure(junior)
        strict = (junior.astype(np.int64) @ reach.astype(np.int64)) > 0
        effective = (assigned.astype(np.int64) @ reach.astype(np.int64)) > 0
        senior_of = (strict.astype(np.int64) @ assigned.T.astype(np.int64)) > 0

        task_perms = np.zeros((nt, npm), dtype=bool)
        usage_limit = np.zeros(nt, dtype=np.int64)
        for k in tasks:
            definition = store.tasks[(tenant, k)]
            usage_limit[ti[k]] = definition.usage_limit
            for p in definition.permissions:
                task_perms[ti[k], pi[p]] = True

        conflicts = np.zeros((nt, nt), dtype=bool)
        for (t, _), constraint in store.sod_constraints.items():
            if t != tenant or constraint.mode != SodMode.DYNAMIC:
                continue
            for a, b in product(constraint.conflicting_tasks, repeat=2):
                if a != b:
                    conflicts[ti[a], ti[b]] = True

        eff_i = effective.astype(np.int64)
        may_activate = (eff_i @ grants.astype(np.int64)) > 0
        # Ubicación: ningún rol activo que otorgue la tarea la prohíbe
        forbidding = np.einsum("ur,rt,rl->utl", eff_i, grants.astype(np.int64), (~allowed).astype(np.int64))
        location_ok = forbidding == 0
        senior_i = senior_of.astype(np.int64)
        may_delegate = np.einsum("ar,rh,rv->ahv", eff_i, senior_i, senior_i) > 0

        return cls(
            tenant=tenant, users=users, roles=roles, tasks=tasks, perms=perms, locations=locations,
            assigned=assigned, effective=effective, senior_of=senior_of, grants=grants,
            task_perms=task_perms, location_ok=location_ok, may_activate=may_activate,
            may_delegate=may_delegate, conflicts=conflicts, usage_limit=usage_limit,
        )

    def index(self) -> Tuple[Dict[str, int], Dict[str, int], Dict[Permission, int], Dict[str, int]]:
        return (
            {u: i for i, u in enumerate(self.users)},
            {k: i for i, k in enumerate(self.tasks)},
            {p: i for i, p in enumerate(self.perms)},
            {loc: i for i, loc in enumerate(self.locations)},
        )

    def access_table(self) -> Dict[Tuple, Tuple[str, str]]:
        """Mapa total (usuario, tarea, estado, es_titular, permiso, ubicación, bloqueo SoD) -> veredicto"""
        table = {}
        for u, k, state, holder, p, loc, blocked in product(
            self.users, self.tasks, STATES, (True, False), self.perms, self.locations, (False, True)
        ):
            request = OracleRequest(
                kind="access", user=u, expired=False, task=k, state=state,
                holder=u if holder else None, perm=p, location=loc, sod_blocked=blocked,
            )
            table[(u, k, state, holder, p, loc, blocked)] = oracle_decide(self, request)
        return table


@dataclass(frozen=True)
class OracleRequest:
    kind: str                       # activate | access | complete | delegate
    user: str
    expired: bool = False
    task: Optional[str] = None
    state: Optional[str] = None
    holder: Optional[str] = None
    perm: Optional[Permission] = None
    location: Optional[str] = None
    sod_blocked: bool = False
    target: Optional[str] = None


def oracle_decide(matrix: OracleMatrix, request: OracleRequest) -> Tuple[str, str]:
    """(veredicto, razón) por lectura directa de las reglas"""
    users, tasks, perms, locations = matrix.index()
    u = users[request.user]

    if request.kind == "activate":
        if request.expired:
            return "deny", "session-expired"
        if request.sod_blocked:
            return "deny", "sod-violation"
        if request.task not in tasks or not matrix.may_activate[u, tasks[request.task]]:
            return "deny", "no-role-task-mapping"
        return "ok", "ok"

    if request.kind == "access":
        k = tasks[request.task]
        if request.expired:
            return "deny", "session-expired"
        if request.holder != request.user:
            return "deny", "not-holder"
        if request.state == "completed":
            return "deny", "task-not-active"
        if request.state == "deactivated":
            return "deny", "usage-exhausted"
        if not matrix.location_ok[u, k, locations[request.location]]:
            return "deny", "location-forbidden"
        if request.sod_blocked:
            return "deny", "sod-violation"
        if not matrix.task_perms[k, perms[request.perm]]:
            return "deny", "no-role-task-mapping"
        return "permit", "ok"

    if request.kind == "complete":
        if request.expired:
            return "deny", "session-expired"
        if request.holder != request.user:
            return "deny", "not-holder"
        if request.state == "completed":
            return "deny", "task-not-active"
        return "ok", "ok"

    if request.kind == "delegate":
        if request.expired:
            return "deny", "session-expired"
        if request.state != "active":
            return "deny", "task-not-active"
        if request.target not in users:
            return "deny", "unknown-user"
        if not matrix.may_delegate[u, users[request.holder], users[request.target]]:
            return "deny", "not-superior"
        if request.sod_blocked:
            return "deny", "sod-violation"
        return "ok", "ok"

    raise ValueError(f"Tipo de petición desconocido: {request.kind}")


# =============================================================================
# MÁQUINA DE ESTADOS
# =============================================================================

@dataclass
class OracleInstance:
    task: str
    holder: str
    limit: int
    process_instance: Optional[str]
    state: str = "active"
    usage: int = 0


@dataclass
class OracleModel:
    """Estado de referencia: instancias en orden de creación + historial de SoD"""
    matrix: OracleMatrix
    instances: List[OracleInstance] = field(default_factory=list)
    history: Set[Tuple[str, str, str]] = field(default_factory=set)

    def _blocked(self, user: str, task: str, process_instance: Optional[str]) -> bool:
        _, tasks, _, _ = self.matrix.index()
        if process_instance is None or task not in tasks:
            return False
        row = self.matrix.conflicts[tasks[task]]
        return any(
            row[tasks[other]] and (process_instance, user, other) in self.history
            for other in self.matrix.tasks
        )

    def activate(self, user: str, expired: bool, task: str, process_instance: Optional[str]) -> Tuple[str, str]:
        verdict = oracle_decide(self.matrix, OracleRequest(
            kind="activate", user=user, expired=expired, task=task,
            sod_blocked=self._blocked(user, task, process_instance),
        ))
        if verdict[0] == "ok":
            _, tasks, _, _ = self.matrix.index()
            self.instances.append(OracleInstance(
                task=task, holder=user, limit=int(self.matrix.usage_limit[tasks[task]]),
                process_instance=process_instance,
            ))
            if process_instance is not None:
                self.history.add((process_instance, user, task))
        return verdict

    def access(self, user: str, expired: bool, location: str, ref: int, perm: Permission) -> Tuple[str, str]:
        inst = self.instances[ref]
        verdict = oracle_decide(self.matrix, OracleRequest(
            kind="access", user=user, expired=expired, task=inst.task, state=inst.state,
            holder=inst.holder, perm=perm, location=location,
            sod_blocked=self._blocked(inst.holder, inst.task, inst.process_instance),
        ))
        if verdict[0] == "permit":
            inst.usage += 1
            if inst.usage == inst.limit:
                inst.state = "deactivated"
        return verdict

    def complete(self, user: str, expired: bool, ref: int) -> Tuple[str, str]:
        inst = self.instances[ref]
        verdict = oracle_decide(self.matrix, OracleRequest(
            kind="complete", user=user, expired=expired, state=inst.state, holder=inst.holder,
        ))
        if verdict[0] == "ok":
            inst.state = "completed"
        return verdict

    def delegate(self, user: str, expired: bool, ref: int, target: str) -> Tuple[str, str]:
        inst = self.instances[ref]
        verdict = oracle_decide(self.matrix, OracleRequest(
            kind="delegate", user=user, expired=expired, state=inst.state, holder=inst.holder,
            target=target, sod_blocked=self._blocked(target, inst.task, inst.process_instance),
        ))
        if verdict[0] == "ok":
            inst.holder = target
            if inst.process_instance is not None:
                self.history.add((inst.process_instance, target, inst.task))
        return verdict
