#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Modelo de Políticas Multi-tenant
================================

Tipos del dominio (tenant, usuario, rol, tarea, permiso, ubicación, SoD) y
las reglas puras de resolución sobre ellos:

- ``resolve_effective_roles``: roles asignados + cierre transitivo de juniors
- ``permitted_tasks``: unión de las tareas otorgadas por un conjunto de roles
- ``validate_policy``: un diagnóstico por invariante violado

El ``PolicyStore`` es una instantánea inmutable; las modificaciones
(``with_role``, ``with_user``...) devuelven un store nuevo.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

from .errors import ErrorCode, PolicyError

TenantId = str
UserId = str
RoleId = str
TaskId = str
ObjectId = str
LocationId = str
ProcessId = str
Key = Tuple[TenantId, str]

_IDENTIFIER = re.compile(r"^[^\s/\\]+$")


def is_valid_identifier(value: Any) -> bool:
    """No vacío, sin espacios ni separadores de ruta"""
    return isinstance(value, str) and bool(_IDENTIFIER.match(value))


# =============================================================================
# TIPOS DEL DOMINIO
# =============================================================================

class SodMode(Enum):
    """Modo de una restricción de separación de funciones"""
    STATIC = "static"     # en diseño, sobre tareas alcanzables
    DYNAMIC = "dynamic"   # en ejecución, por instancia de proceso


@dataclass(frozen=True)
class DirectoryEntry:
    """Empleado pre-registrado por el tenant"""
    employee_id: str
    name: str
    designation: str = ""


@dataclass(frozen=True)
class Permission:
    """Autorización para una operación sobre un objeto"""
    operation: str
    object: ObjectId

    def __str__(self) -> str:
        return f"{self.operation}:{self.object}"

    @classmethod
    def parse(cls, text: str) -> "Permission":
        operation, sep, obj = text.partition(":")
        if not sep or not operation or not obj:
            raise ValueError(f"Permiso mal formado: {text!r} (se espera 'operacion:objeto')")
        return cls(operation=operation, object=obj)


@dataclass(frozen=True)
class Tenant:
    id: TenantId
    name: str
    directory: FrozenSet[DirectoryEntry] = frozenset()
    alert_sink: Mapping[str, Any] = field(default_factory=lambda: {"kind": "log"}, compare=False, hash=False)
    admin_roles: FrozenSet[RoleId] = frozenset()

    def directory_entry(self, employee_id: str) -> Optional[DirectoryEntry]:
        for entry in self.directory:
            if entry.employee_id == employee_id:
                return entry
        return None


@dataclass(frozen=True)
class Role:
    id: RoleId
    tenant: TenantId
    juniors: FrozenSet[RoleId] = frozenset()
    allowed_locations: FrozenSet[LocationId] = frozenset()  # vacío = sin restricción
    granted_tasks: FrozenSet[TaskId] = frozenset()

    def allows_location(self, location: LocationId) -> bool:
        return not self.allowed_locations or location in self.allowed_locations


@dataclass(frozen=True)
class TaskDef:
    id: TaskId
    tenant: TenantId
    usage_limit: int
    permissions: FrozenSet[Permission]
    process: Optional[ProcessId] = None


@dataclass(frozen=True)
class SodConstraint:
    id: str
    tenant: TenantId
    process: ProcessId
    conflicting_tasks: FrozenSet[TaskId]
    mode: SodMode = SodMode.STATIC


@dataclass(frozen=True)
class User:
    id: UserId
    tenant: TenantId
    employee_id: str
    assigned_roles: FrozenSet[RoleId] = frozenset()


class DiagnosticCode(Enum):
    INVALID_IDENTIFIER = "invalid-identifier"
    DANGLING_REFERENCE = "dangling-reference"
    DUPLICATE_EMPLOYEE_ID = "duplicate-employee-id"
    UNKNOWN_EMPLOYEE = "unknown-employee"
    HIERARCHY_CYCLE = "hierarchy-cycle"
    STATIC_SOD_VIOLATION = "static-sod-violation"
    INVALID_USAGE_LIMIT = "invalid-usage-limit"
    EMPTY_TASK_PERMISSIONS = "empty-task-permissions"
    UNKNOWN_OPERATION = "unknown-operation"
    MALFORMED_SOD = "malformed-sod"


@dataclass(frozen=True)
class Diagnostic:
    code: DiagnosticCode
    message: str
    subjects: Tuple[str, ...] = ()

    def __str__(self) -> str:
        return f"[{self.code.value}] {self.message}"

    def to_dict(self) -> Dict[str, Any]:
        return {"code": self.code.value, "message": self.message, "subjects": list(self.subjects)}


# =============================================================================
# STORE
# =============================================================================

@dataclass(frozen=True)
class PolicyStore:
    """Configuración multi-tenant completa, indexada por (tenant, id)"""
    tenants: Dict[TenantId, Tenant] = field(default_factory=dict)
    users: Dict[Key, User] = field(default_factory=dict)
    roles: Dict[Key, Role] = field(default_factory=dict)
    tasks: Dict[Key, TaskDef] = field(default_factory=dict)
    sod_constraints: Dict[Key, SodConstraint] = field(default_factory=dict)
    locations: FrozenSet[LocationId] = frozenset()
    operations: FrozenSet[str] = frozenset({"read", "write", "configure"})

    # -------------------------------------------------------------------------
    # Consultas
    # -------------------------------------------------------------------------

    def tenant(self, tenant: TenantId) -> Tenant:
        try:
            return self.tenants[tenant]
        except KeyError:
            raise PolicyError(ErrorCode.UNKNOWN_TENANT, f"Tenant desconocido: {tenant}") from None

    def user(self, tenant: TenantId, user: UserId) -> User:
        try:
            return self.users[(tenant, user)]
        except KeyError:
            raise PolicyError(ErrorCode.UNKNOWN_USER, f"Usuario desconocido: {tenant}/{user}") from None

    def role(self, tenant: TenantId, role: RoleId) -> Role:
        try:
            return self.roles[(tenant, role)]
        except KeyError:
            raise PolicyError(ErrorCode.UNKNOWN_ROLE, f"Rol desconocido: {tenant}/{role}") from None

    def task(self, tenant: TenantId, task: TaskId) -> TaskDef:
        try:
            return self.tasks[(tenant, task)]
        except KeyError:
            raise PolicyError(ErrorCode.UNKNOWN_TASK, f"Tarea desconocida: {tenant}/{task}") from None

    def users_of(self, tenant: TenantId) -> List[User]:
        return [u for (t, _), u in sorted(self.users.items()) if t == tenant]

    def roles_of(self, tenant: TenantId) -> List[Role]:
        return [r for (t, _), r in sorted(self.roles.items()) if t == tenant]

    def tasks_of(self, tenant: TenantId) -> List[TaskDef]:
        return [d for (t, _), d in sorted(self.tasks.items()) if t == tenant]

    def constraints_of(self, tenant: TenantId, mode: Optional[SodMode] = None) -> List[SodConstraint]:
        return [
            c for (t, _), c in sorted(self.sod_constraints.items())
            if t == tenant and (mode is None or c.mode == mode)
        ]

    def user_by_employee(self, tenant: TenantId, employee_id: str) -> Optional[User]:
        for user in self.users_of(tenant):
            if user.employee_id == employee_id:
                return user
        return None

    # -------------------------------------------------------------------------
    # Modificaciones (devuelven un store nuevo)
    # -------------------------------------------------------------------------

    def with_tenant(self, tenant: Tenant) -> "PolicyStore":
        return replace(self, tenants={**self.tenants, tenant.id: tenant})

    def with_directory_entry(self, tenant: TenantId, entry: DirectoryEntry) -> "PolicyStore":
        current = self.tenant(tenant)
        kept = frozenset(e for e in current.directory if e.employee_id != entry.employee_id)
        return self.with_tenant(replace(current, directory=kept | {entry}))

    def with_user(self, user: User) -> "PolicyStore":
        return replace(self, users={**self.users, (user.tenant, user.id): user})

    def with_role(self, role: Role) -> "PolicyStore":
        return replace(self, roles={**self.roles, (role.tenant, role.id): role})

    def with_task(self, task: TaskDef) -> "PolicyStore":
        return replace(self, tasks={**self.tasks, (task.tenant, task.id): task})

    def with_sod(self, constraint: SodConstraint) -> "PolicyStore":
        return replace(
            self, sod_constraints={**self.sod_constraints, (constraint.tenant, constraint.id): constraint}
        )

    def with_location(self, location: LocationId) -> "PolicyStore":
        return replace(self, locations=self.locations | {location})

    def grant_task(self, tenant: TenantId, role: RoleId, task: TaskId) -> "PolicyStore":
        current = self.role(tenant, role)
        return self.with_role(replace(current, granted_tasks=current.granted_tasks | {task}))

    def add_junior(self, tenant: TenantId, senior: RoleId, junior: RoleId) -> "PolicyStore":
        current = self.role(tenant, senior)
        return self.with_role(replace(current, juniors=current.juniors | {junior}))

    def assign_role(self, tenant: TenantId, user: UserId, role: RoleId) -> "PolicyStore":
        current = self.user(tenant, user)
        return self.with_user(replace(current, assigned_roles=current.assigned_roles | {role}))

    # -------------------------------------------------------------------------
    # Serialización canónica
    # -------------------------------------------------------------------------

    def to_dict(self) -> Dict[str, Any]:
        return {
            "operations": sorted(self.operations),
            "locations": sorted(self.locations),
            "tenants": [
                {
                    "id": t.id,
                    "name": t.name,
                    "directory": [
                        {"employee_id": e.employee_id, "name": e.name, "designation": e.designation}
                        for e in sorted(t.directory, key=lambda e: e.employee_id)
                    ],
                    "alert_sink": dict(t.alert_sink),
                    "admin_roles": sorted(t.admin_roles),
                }
                for _, t in sorted(self.tenants.items())
            ],
            "roles": [
                {
                    "id": r.id,
                    "tenant": r.tenant,
                    "juniors": sorted(r.juniors),
                    "allowed_locations": sorted(r.allowed_locations),
                    "granted_tasks": sorted(r.granted_tasks),
                }
                for _, r in sorted(self.roles.items())
            ],
            "tasks": [
                {
                    "id": d.id,
                    "tenant": d.tenant,
                    "usage_limit": d.usage_limit,
                    "permissions": [
                        {"operation": p.operation, "object": p.object}
                        for p in sorted(d.permissions, key=lambda p: (p.operation, p.object))
                    ],
                    "process": d.process,
                }
                for _, d in sorted(self.tasks.items())
            ],
            "sod_constraints": [
                {
                    "id": c.id,
                    "tenant": c.tenant,
                    "process": c.process,
                    "conflicting_tasks": sorted(c.conflicting_tasks),
                    "mode": c.mode.value,
                }
                for _, c in sorted(self.sod_constraints.items())
            ],
            "users": [
                {
                    "id": u.id,
                    "tenant": u.tenant,
                    "employee_id": u.employee_id,
                    "assigned_roles": sorted(u.assigned_roles),
                }
                for _, u in sorted(self.users.items())
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PolicyStore":
        """Construye el store; KeyError/TypeError/ValueError si el documento está mal formado"""
        tenants = {}
        for t in data.get("tenants", []):
            tenants[t["id"]] = Tenant(
                id=t["id"],
                name=t.get("name", t["id"]),
                directory=frozenset(
                    DirectoryEntry(e["employee_id"], e.get("name", ""), e.get("designation", ""))
                    for e in t.get("directory", [])
                ),
                alert_sink=dict(t.get("alert_sink") or {"kind": "log"}),
                admin_roles=frozenset(t.get("admin_roles", [])),
            )
        roles = {}
        for r in data.get("roles", []):
            role = Role(
                id=r["id"],
                tenant=r["tenant"],
                juniors=frozenset(r.get("juniors", [])),
                allowed_locations=frozenset(r.get("allowed_locations", [])),
                granted_tasks=frozenset(r.get("granted_tasks", [])),
            )
            roles[(role.tenant, role.id)] = role
        tasks = {}
        for d in data.get("tasks", []):
            usage_limit = d["usage_limit"]
            if isinstance(usage_limit, bool) or not isinstance(usage_limit, int):
                raise TypeError(f"usage_limit de {d['id']} debe ser entero")
            task = TaskDef(
                id=d["id"],
                tenant=d["tenant"],
                usage_limit=usage_limit,
                permissions=frozenset(Permission(p["operation"], p["object"]) for p in d.get("permissions", [])),
                process=d.get("process"),
            )
            tasks[(task.tenant, task.id)] = task
        constraints = {}
        for c in data.get("sod_constraints", []):
            constraint = SodConstraint(
                id=c["id"],
                tenant=c["tenant"],
                process=c["process"],
                conflicting_tasks=frozenset(c["conflicting_tasks"]),
                mode=SodMode(c.get("mode", SodMode.STATIC.value)),
            )
            constraints[(constraint.tenant, constraint.id)] = constraint
        users = {}
        for u in data.get("users", []):
            user = User(
                id=u["id"],
                tenant=u["tenant"],
                employee_id=u["employee_id"],
                assigned_roles=frozenset(u.get("assigned_roles", [])),
            )
            users[(user.tenant, user.id)] = user
        return cls(
            tenants=tenants,
            users=users,
            roles=roles,
            tasks=tasks,
            sod_constraints=constraints,
            locations=frozenset(data.get("locations", [])),
            operations=frozenset(data.get("operations", ["read", "write", "configure"])),
        )


# =============================================================================
# REGLAS DE RESOLUCIÓN
# =============================================================================

def _junior_closure(store: PolicyStore, tenant: TenantId, start: Iterable[RoleId]) -> Set[RoleId]:
    """Roles alcanzables bajando por la jerarquía (incluye los de partida)"""
    seen: Set[RoleId] = set()
    pending = list(start)
    while pending:
        role_id = pending.pop()
        if role_id in seen:
            continue
        seen.add(role_id)
        role = store.roles.get((tenant, role_id))
        if role is not None:
            pending.extend(role.juniors - seen)
    return seen


def resolve_effective_roles(store: PolicyStore, tenant: TenantId, user: UserId) -> FrozenSet[RoleId]:
    """Roles asignados al usuario más todos sus juniors transitivos"""
    return frozenset(_junior_closure(store, tenant, store.user(tenant, user).assigned_roles))


def strict_juniors(store: PolicyStore, tenant: TenantId, role: RoleId) -> FrozenSet[RoleId]:
    """Roles de los que ``role`` es senior estricto (transitivamente)"""
    return frozenset(_junior_closure(store, tenant, store.role(tenant, role).juniors))


def permitted_tasks(store: PolicyStore, tenant: TenantId, roles: Iterable[RoleId]) -> FrozenSet[TaskId]:
    """Unión de las tareas otorgadas por los roles"""
    tasks: Set[TaskId] = set()
    for role_id in roles:
        tasks |= store.role(tenant, role_id).granted_tasks
    return frozenset(tasks)


def reachable_permissions(store: PolicyStore, tenant: TenantId, user: UserId) -> FrozenSet[Permission]:
    """Permisos que el usuario podría ejercer activando sus tareas"""
    perms: Set[Permission] = set()
    roles = resolve_effective_roles(store, tenant, user)
    for task_id in permitted_tasks(store, tenant, (r for r in roles if (tenant, r) in store.roles)):
        task = store.tasks.get((tenant, task_id))
        if task is not None:
            perms |= task.permissions
    return frozenset(perms)


# =============================================================================
# VALIDACIÓN
# =============================================================================

def _hierarchy_cycles(store: PolicyStore, tenant: TenantId) -> List[Tuple[RoleId, ...]]:
    """Componentes cíclicos de la jerarquía de un tenant"""
    reach = {r.id: _junior_closure(store, tenant, r.juniors) for r in store.roles_of(tenant)}
    cyclic = sorted(role_id for role_id, below in reach.items() if role_id in below)
    cycles: List[Tuple[RoleId, ...]] = []
    assigned: Set[RoleId] = set()
    for role_id in cyclic:
        if role_id in assigned:
            continue
        members = tuple(sorted(
            other for other in cyclic
            if other == role_id or (other in reach[role_id] and role_id in reach[other])
        ))
        assigned.update(members)
        cycles.append(members)
    return cycles


def validate_policy(store: PolicyStore) -> List[Diagnostic]:
    """Un diagnóstico por invariante violado; lista vacía si el store es válido"""
    diags: List[Diagnostic] = []

    def report(code: DiagnosticCode, message: str, *subjects: str) -> None:
        diags.append(Diagnostic(code, message, tuple(subjects)))

    def check_id(kind: str, value: Any, *scope: str) -> None:
        if not is_valid_identifier(value):
            report(DiagnosticCode.INVALID_IDENTIFIER, f"Identificador de {kind} inválido: {value!r}", *scope, str(value))

    for location in sorted(store.locations):
        check_id("ubicación", location)

    # Tenants y directorio
    for tenant_id, tenant in sorted(store.tenants.items()):
        check_id("tenant", tenant_id)
        seen_employees: Dict[str, int] = {}
        for entry in tenant.directory:
            if not entry.employee_id:
                report(DiagnosticCode.INVALID_IDENTIFIER, f"Entrada de directorio sin employee_id en {tenant_id}", tenant_id)
            seen_employees[entry.employee_id] = seen_employees.get(entry.employee_id, 0) + 1
        for employee_id, count in sorted(seen_employees.items()):
            if count > 1:
                report(DiagnosticCode.DUPLICATE_EMPLOYEE_ID,
                       f"employee_id {employee_id!r} repetido en el directorio de {tenant_id}", tenant_id, employee_id)
        for role_id in sorted(tenant.admin_roles):
            if (tenant_id, role_id) not in store.roles:
                report(DiagnosticCode.DANGLING_REFERENCE,
                       f"Tenant {tenant_id}: rol administrador inexistente {role_id}", tenant_id, role_id)

    # Roles
    for (tenant_id, role_id), role in sorted(store.roles.items()):
        check_id("rol", role_id, tenant_id)
        if tenant_id not in store.tenants:
            report(DiagnosticCode.DANGLING_REFERENCE, f"Rol {role_id}: tenant inexistente {tenant_id}", tenant_id, role_id)
        for junior in sorted(role.juniors):
            if (tenant_id, junior) not in store.roles:
                report(DiagnosticCode.DANGLING_REFERENCE,
                       f"Rol {tenant_id}/{role_id}: junior inexistente {junior}", tenant_id, role_id, junior)
        for task_id in sorted(role.granted_tasks):
            if (tenant_id, task_id) not in store.tasks:
                report(DiagnosticCode.DANGLING_REFERENCE,
                       f"Rol {tenant_id}/{role_id}: tarea inexistente {task_id}", tenant_id, role_id, task_id)
        for location in sorted(role.allowed_locations):
            if location not in store.locations:
                report(DiagnosticCode.DANGLING_REFERENCE,
                       f"Rol {tenant_id}/{role_id}: ubicación inexistente {location}", tenant_id, role_id, location)

    # Tareas
    for (tenant_id, task_id), task in sorted(store.tasks.items()):
        check_id("tarea", task_id, tenant_id)
        if tenant_id not in store.tenants:
            report(DiagnosticCode.DANGLING_REFERENCE, f"Tarea {task_id}: tenant inexistente {tenant_id}", tenant_id, task_id)
        if isinstance(task.usage_limit, bool) or not isinstance(task.usage_limit, int) or task.usage_limit < 1:
            report(DiagnosticCode.INVALID_USAGE_LIMIT,
                   f"Tarea {tenant_id}/{task_id}: usage_limit debe ser >= 1 (es {task.usage_limit!r})", tenant_id, task_id)
        if not task.permissions:
            report(DiagnosticCode.EMPTY_TASK_PERMISSIONS, f"Tarea {tenant_id}/{task_id} sin permisos", tenant_id, task_id)
        for perm in sorted(task.permissions, key=str):
            if perm.operation not in store.operations:
                report(DiagnosticCode.UNKNOWN_OPERATION,
                       f"Tarea {tenant_id}/{task_id}: operación fuera del vocabulario {perm.operation!r}",
                       tenant_id, task_id, perm.operation)
            check_id("objeto", perm.object, tenant_id, task_id)

    # Restricciones SoD
    for (tenant_id, sod_id), constraint in sorted(store.sod_constraints.items()):
        if tenant_id not in store.tenants:
            report(DiagnosticCode.DANGLING_REFERENCE, f"SoD {sod_id}: tenant inexistente {tenant_id}", tenant_id, sod_id)
        if len(constraint.conflicting_tasks) < 2:
            report(DiagnosticCode.MALFORMED_SOD, f"SoD {tenant_id}/{sod_id}: se necesitan al menos 2 tareas", tenant_id, sod_id)
        for task_id in sorted(constraint.conflicting_tasks):
            task = store.tasks.get((tenant_id, task_id))
            if task is None:
                report(DiagnosticCode.DANGLING_REFERENCE,
                       f"SoD {tenant_id}/{sod_id}: tarea inexistente {task_id}", tenant_id, sod_id, task_id)
            elif task.process != constraint.process:
                report(DiagnosticCode.MALFORMED_SOD,
                       f"SoD {tenant_id}/{sod_id}: la tarea {task_id} no pertenece al proceso {constraint.process}",
                       tenant_id, sod_id, task_id)

    # Usuarios
    for (tenant_id, user_id), user in sorted(store.users.items()):
        check_id("usuario", user_id, tenant_id)
        tenant = store.tenants.get(tenant_id)
        if tenant is None:
            report(DiagnosticCode.DANGLING_REFERENCE, f"Usuario {user_id}: tenant inexistente {tenant_id}", tenant_id, user_id)
        elif tenant.directory_entry(user.employee_id) is None:
            report(DiagnosticCode.UNKNOWN_EMPLOYEE,
                   f"Usuario {tenant_id}/{user_id}: employee_id {user.employee_id!r} fuera del directorio",
                   tenant_id, user_id)
        for role_id in sorted(user.assigned_roles):
            if (tenant_id, role_id) not in store.roles:
                report(DiagnosticCode.DANGLING_REFERENCE,
                       f"Usuario {tenant_id}/{user_id}: rol inexistente {role_id}", tenant_id, user_id, role_id)

    # Jerarquía acíclica
    for tenant_id in sorted({t for t, _ in store.roles}):
        for members in _hierarchy_cycles(store, tenant_id):
            report(DiagnosticCode.HIERARCHY_CYCLE,
                   f"Ciclo en la jerarquía de {tenant_id}: {' -> '.join(members)}", tenant_id, *members)

    # SoD estática sobre tareas alcanzables
    for (tenant_id, user_id), user in sorted(store.users.items()):
        static = store.constraints_of(tenant_id, SodMode.STATIC)
        if not static:
            continue
        roles = _junior_closure(store, tenant_id, user.assigned_roles)
        reachable: Set[TaskId] = set()
        for role_id in roles:
            role = store.roles.get((tenant_id, role_id))
            if role is not None:
                reachable |= role.granted_tasks
        for constraint in static:
            clash = sorted(reachable & constraint.conflicting_tasks)
            if len(clash) >= 2:
                report(DiagnosticCode.STATIC_SOD_VIOLATION,
                       f"Usuario {tenant_id}/{user_id} alcanza tareas en conflicto de {constraint.id}: {', '.join(clash)}",
                       tenant_id, user_id, constraint.id, *clash)

    return diags
