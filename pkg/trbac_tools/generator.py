#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Generador de políticas aleatorias
=================================

Políticas pequeñas y válidas para las pruebas diferenciales. Misma semilla,
misma política. Las asignaciones de roles que violan una SoD estática se
rechazan y se reintentan.
"""

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

import numpy as np

from trbac_core.errors import ErrorCode, ToolingError
from trbac_core.policy_model import (
    DirectoryEntry,
    DiagnosticCode,
    Permission,
    PolicyStore,
    Role,
    SodConstraint,
    SodMode,
    TaskDef,
    Tenant,
    User,
    validate_policy,
)

GENERATED_TENANT = "t0"
OBJECTS = ("db0", "db1", "vm0")
PROCESSES = ("P0", "P1")
MAX_ASSIGN_RETRIES = 20

# Límites en los que el oráculo sigue siendo exhaustivo
DIM_LIMITS: Dict[str, int] = {"users": 5, "roles": 4, "tasks": 6, "locations": 3, "sod": 2}


@dataclass(frozen=True)
class PolicyDims:
    users: int = 3
    roles: int = 3
    tasks: int = 4
    locations: int = 2
    sod: int = 1

    def check(self) -> None:
        for name, value in asdict(self).items():
            limit = DIM_LIMITS[name]
            if isinstance(value, bool) or not isinstance(value, int) or not 0 <= value <= limit:
                raise ToolingError(ErrorCode.DIMS_OUT_OF_RANGE, f"{name}={value!r} fuera de [0, {limit}]")


def _subset(rng: np.random.Generator, items: List[str], low: int, high: int) -> frozenset:
    if not items:
        return frozenset()
    size = int(rng.integers(low, min(high, len(items)) + 1))
    picked = rng.choice(len(items), size=size, replace=False)
    return frozenset(items[int(i)] for i in picked)


def generate_policy(seed: int, dims: Optional[PolicyDims] = None) -> PolicyStore:
    dims = dims or PolicyDims()
    dims.check()
    rng = np.random.default_rng(seed)
    tenant = GENERATED_TENANT

    locations = [f"L{i}" for i in range(dims.locations)]
    role_ids = [f"R{i}" for i in range(dims.roles)]
    task_ids = [f"T{i}" for i in range(dims.tasks)]
    operations = ["read", "write", "configure"]

    store = PolicyStore(operations=frozenset(operations), locations=frozenset(locations))
    store = store.with_tenant(Tenant(id=tenant, name="Generated"))

    # Tareas
    processes: Dict[str, List[str]] = {}
    for task_id in task_ids:
        universe = [str(Permission(op, obj)) for op in operations for obj in OBJECTS]
        perms = frozenset(Permission.parse(p) for p in _subset(rng, universe, 1, 3))
        choice = int(rng.integers(0, len(PROCESSES) + 1))
        process = PROCESSES[choice] if choice < len(PROCESSES) else None
        if process is not None:
            processes.setdefault(process, []).append(task_id)
        store = store.with_task(TaskDef(
            id=task_id, tenant=tenant, usage_limit=int(rng.integers(1, 4)),
            permissions=perms, process=process,
        ))

    # Roles: aristas solo de menor a mayor índice, jerarquía acíclica
    grants: Dict[str, set] = {r: set() for r in role_ids}
    for task_id in task_ids:
        if role_ids:
            grants.update({r: grants[r] | {task_id} for r in _subset(rng, role_ids, 1, 2)})
    for i, role_id in enumerate(role_ids):
        juniors = frozenset(j for j in role_ids[i + 1:] if rng.random() < 0.35)
        allowed = frozenset() if rng.random() < 0.5 else _subset(rng, locations, 1, len(locations))
        store = store.with_role(Role(
            id=role_id, tenant=tenant, juniors=juniors,
            allowed_locations=allowed, granted_tasks=frozenset(grants[role_id]),
        ))

    # Restricciones SoD sobre procesos con al menos dos tareas
    candidates = sorted(p for p, tasks in processes.items() if len(tasks) >= 2)
    for k in range(dims.sod):
        if not candidates:
            break
        process = candidates[int(rng.integers(0, len(candidates)))]
        conflicting = _subset(rng, processes[process], 2, 3)
        mode = SodMode.STATIC if rng.random() < 0.5 else SodMode.DYNAMIC
        store = store.with_sod(SodConstraint(
            id=f"S{k}", tenant=tenant, process=process, conflicting_tasks=conflicting, mode=mode,
        ))

    if role_ids:
        store = store.with_tenant(Tenant(id=tenant, name="Generated", admin_roles=frozenset({role_ids[0]})))

    # Usuarios: reintentar asignaciones que violen SoD estática
    for i in range(dims.users):
        user_id = f"U{i}"
        store = store.with_directory_entry(tenant, DirectoryEntry(f"E{i}", f"Empleado-{i}", "staff"))
        for _ in range(MAX_ASSIGN_RETRIES):
            candidate = store.with_user(User(user_id, tenant, f"E{i}", _subset(rng, role_ids, 0, 2)))
            if not any(d.code == DiagnosticCode.STATIC_SOD_VIOLATION and user_id in d.subjects
                       for d in validate_policy(candidate)):
                store = candidate
                break
        else:
            store = store.with_user(User(user_id, tenant, f"E{i}", frozenset()))

    return store
