#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Motor de Autorización por Tareas y Roles
========================================

Semántica en ejecución de las tareas:

- ``activate_task``: crea una instancia activa si algún rol activo de la
  sesión otorga la tarea y la SoD dinámica lo admite.
- ``check_access``: verifica y cuenta un uso de forma atómica por instancia;
  al llegar a ``usage_limit`` la instancia queda desactivada.
- ``complete_task``: revocación definitiva de la instancia.
- ``delegate_task``: un senior de ambos extremos traspasa la instancia.
- ``audit_least_privilege``: permisos alcanzables que no se ejercieron.

Las denegaciones de ``check_access`` son valores (``AccessDecision``); las
de las demás operaciones son ``AuthzError``. Toda denegación genera
exactamente una alerta y no modifica el estado.
"""

from __future__ import annotations

import threading
import uuid
from dataclasses import dataclass, field, replace
from datetime import datetime, timedelta
from enum import Enum
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Set, Tuple

from .alerts import AlertRecord, alert_kind_for, make_alert
from .authn import Session
from .errors import AuthzError, ErrorCode
from .logs import LogFn, default_logger
from .persistence import AuditRecord
from .policy_model import (
    Permission,
    PolicyStore,
    RoleId,
    SodMode,
    TaskId,
    TenantId,
    UserId,
    reachable_permissions,
    strict_juniors,
)
from .utils import Clock, to_iso, utc_now

OK = "ok"


class InstanceState(Enum):
    ACTIVE = "active"
    DEACTIVATED = "deactivated"
    COMPLETED = "completed"


class Verdict(Enum):
    PERMIT = "permit"
    DENY = "deny"


@dataclass(frozen=True)
class DelegationRecord:
    from_user: UserId
    to_user: UserId
    by: RoleId
    at: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"from": self.from_user, "to": self.to_user, "by": self.by, "at": self.at}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DelegationRecord":
        return cls(data["from"], data["to"], data["by"], data.get("at", ""))


@dataclass
class TaskInstance:
    """Una activación de tarea con su contador de usos"""
    id: str
    tenant: TenantId
    task: TaskId
    holder: UserId
    activated_by: UserId
    usage_limit: int
    process_instance: Optional[str] = None
    state: InstanceState = InstanceState.ACTIVE
    usage_count: int = 0
    delegation_chain: Tuple[DelegationRecord, ...] = ()
    created_at: str = ""
    completed_at: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "id": self.id,
            "tenant": self.tenant,
            "task": self.task,
            "holder": self.holder,
            "activated_by": self.activated_by,
            "usage_limit": self.usage_limit,
            "process_instance": self.process_instance,
            "state": self.state.value,
            "usage_count": self.usage_count,
            "delegation_chain": [d.to_dict() for d in self.delegation_chain],
            "created_at": self.created_at,
            "completed_at": self.completed_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TaskInstance":
        return cls(
            id=data["id"],
            tenant=data["tenant"],
            task=data["task"],
            holder=data["holder"],
            activated_by=data.get("activated_by", data["holder"]),
            usage_limit=int(data["usage_limit"]),
            process_instance=data.get("process_instance"),
            state=InstanceState(data.get("state", "active")),
            usage_count=int(data.get("usage_count", 0)),
            delegation_chain=tuple(DelegationRecord.from_dict(d) for d in data.get("delegation_chain", [])),
            created_at=data.get("created_at", ""),
            completed_at=data.get("completed_at"),
        )


@dataclass(frozen=True)
class AccessDecision:
    verdict: Verdict
    reason: str
    usage_after: int
    alerts_emitted: Tuple[AlertRecord, ...] = ()
    tenant: Optional[TenantId] = None
    user: Optional[UserId] = None
    instance: Optional[str] = None
    task: Optional[TaskId] = None
    permission: Optional[Permission] = None
    decided_at: Optional[datetime] = None

    @property
    def permitted(self) -> bool:
        return self.verdict == Verdict.PERMIT

    def to_dict(self) -> Dict[str, Any]:
        return {
            "verdict": self.verdict.value,
            "reason": self.reason,
            "usage_after": self.usage_after,
            "alerts_emitted": len(self.alerts_emitted),
            "tenant": self.tenant,
            "user": self.user,
            "instance": self.instance,
            "task": self.task,
            "permission": str(self.permission) if self.permission else None,
            "decided_at": to_iso(self.decided_at) if self.decided_at else None,
        }


def decisions_from_audit(records: Iterable[AuditRecord]) -> List[AccessDecision]:
    """Reconstruye las decisiones de acceso registradas en la auditoría"""
    decisions = []
    for rec in records:
        if rec.verdict not in (Verdict.PERMIT.value, Verdict.DENY.value) or not rec.operation or not rec.object:
            continue
        decisions.append(AccessDecision(
            verdict=Verdict(rec.verdict),
            reason=rec.reason,
            usage_after=int(rec.extra.get("usage_after", 0)),
            tenant=rec.tenant,
            user=rec.user,
            instance=rec.instance,
            task=rec.extra.get("task"),
            permission=Permission(rec.operation, rec.object),
            decided_at=rec.at,
        ))
    return decisions


# =============================================================================
# MOTOR
# =============================================================================

AlertFn = Callable[[AlertRecord], Any]
Involvement = Tuple[TenantId, str, UserId, TaskId]


class AuthzEngine:
    """Estado de instancias de tareas sobre una instantánea de la política"""

    def __init__(
        self,
        store: PolicyStore,
        clock: Clock = utc_now,
        on_alert: Optional[AlertFn] = None,
        logger: Optional[LogFn] = None,
        id_factory: Optional[Callable[[], str]] = None,
    ):
        self.store = store
        self.clock = clock
        self.on_alert = on_alert
        self.logger = logger or default_logger
        self.id_factory = id_factory or (lambda: uuid.uuid4().hex)

        self._registry_lock = threading.Lock()
        self._instances: Dict[str, TaskInstance] = {}
        self._instance_locks: Dict[str, threading.Lock] = {}
        # (tenant, process_instance, usuario, tarea) para la SoD dinámica
        self._involvement: Set[Involvement] = set()

    def reload(self, store: PolicyStore) -> None:
        self.store = store
        self.logger("[AuthzEngine] Política recargada")

    # -------------------------------------------------------------------------
    # Consultas
    # -------------------------------------------------------------------------

    def get_instance(self, tenant: TenantId, instance_id: str) -> Optional[TaskInstance]:
        with self._registry_lock:
            inst = self._instances.get(instance_id)
            lock = self._instance_locks.get(instance_id)
        if inst is None or inst.tenant != tenant:
            return None
        with lock:
            return replace(inst)

    def list_instances(self, tenant: Optional[TenantId] = None) -> List[TaskInstance]:
        with self._registry_lock:
            items = [(i, self._instance_locks[i.id]) for i in self._instances.values()
                     if tenant is None or i.tenant == tenant]
        result = []
        for inst, lock in items:
            with lock:
                result.append(replace(inst))
        return sorted(result, key=lambda i: (i.created_at, i.id))

    def involvement(self) -> FrozenSet[Involvement]:
        with self._registry_lock:
            return frozenset(self._involvement)

    # -------------------------------------------------------------------------
    # Operaciones
    # -------------------------------------------------------------------------

    def activate_task(self, session: Session, task: TaskId, process_instance: Optional[str] = None) -> TaskInstance:
        store = self.store
        now = self.clock()
        tenant = session.tenant
        if session.is_expired(now):
            raise self._deny(session, ErrorCode.SESSION_EXPIRED, "activate_task", task=task)

        task_def = store.tasks.get((tenant, task))
        granted = task_def is not None and task in self._granted_by(store, tenant, session.active_roles)

        with self._registry_lock:
            if self._sod_blocks(store, tenant, session.user, task, process_instance):
                reason = ErrorCode.SOD_VIOLATION
            elif not granted:
                reason = ErrorCode.NO_ROLE_TASK_MAPPING
            else:
                reason = None
                instance = TaskInstance(
                    id=self.id_factory(),
                    tenant=tenant,
                    task=task,
                    holder=session.user,
                    activated_by=session.user,
                    usage_limit=task_def.usage_limit,
                    process_instance=process_instance,
                    created_at=to_iso(now),
                )
                self._instances[instance.id] = instance
                self._instance_locks[instance.id] = threading.Lock()
                if process_instance is not None:
                    self._involvement.add((tenant, process_instance, session.user, task))
                snapshot = replace(instance)

        if reason is not None:
            raise self._deny(session, reason, "activate_task", task=task)
        self.logger(f"[AuthzEngine] Instancia {snapshot.id} de {tenant}/{task} activada por {session.user}")
        return snapshot

    def check_access(self, session: Session, instance_id: str, perm: Permission) -> AccessDecision:
        inst, lock = self._lookup(session, instance_id)
        store = self.store
        with lock:
            now = self.clock()
            reason = self._access_deny_reason(store, session, inst, perm, now)
            if reason is None:
                inst.usage_count += 1
                if self._is_exhausted(inst.usage_count, inst.usage_limit):
                    inst.state = InstanceState.DEACTIVATED
                    self.logger(f"[AuthzEngine] Instancia {inst.id} desactivada ({inst.usage_count}/{inst.usage_limit})")
                return AccessDecision(
                    verdict=Verdict.PERMIT, reason=OK, usage_after=inst.usage_count,
                    tenant=inst.tenant, user=session.user, instance=inst.id, task=inst.task,
                    permission=perm, decided_at=now,
                )
            usage = inst.usage_count
            task = inst.task

        alert = self._alert(session, reason, "check_access", task=task, instance=instance_id, permission=str(perm))
        return AccessDecision(
            verdict=Verdict.DENY, reason=reason.value, usage_after=usage, alerts_emitted=(alert,),
            tenant=session.tenant, user=session.user, instance=instance_id, task=task,
            permission=perm, decided_at=now,
        )

    def complete_task(self, session: Session, instance_id: str) -> TaskInstance:
        inst, lock = self._lookup(session, instance_id)
        with lock:
            now = self.clock()
            if session.is_expired(now):
                reason = ErrorCode.SESSION_EXPIRED
            elif session.user != inst.holder:
                reason = ErrorCode.NOT_HOLDER
            elif inst.state == InstanceState.COMPLETED:
                reason = ErrorCode.TASK_NOT_ACTIVE
            else:
                reason = None
                inst.state = InstanceState.COMPLETED
                inst.completed_at = to_iso(now)
                snapshot = replace(inst)
        if reason is not None:
            raise self._deny(session, reason, "complete_task", instance=instance_id)
        self.logger(f"[AuthzEngine] Instancia {instance_id} completada por {session.user}")
        return snapshot

    def delegate_task(self, actor_session: Session, instance_id: str, to_user: UserId) -> TaskInstance:
        inst, lock = self._lookup(actor_session, instance_id)
        store = self.store
        tenant = inst.tenant
        with lock:
            now = self.clock()
            by_role = None
            if actor_session.is_expired(now):
                reason = ErrorCode.SESSION_EXPIRED
            elif inst.state != InstanceState.ACTIVE:
                reason = ErrorCode.TASK_NOT_ACTIVE
            elif (tenant, to_user) not in store.users:
                reason = ErrorCode.UNKNOWN_USER
            else:
                by_role = self._delegating_role(store, actor_session, inst.holder, to_user)
                reason = None if by_role is not None else ErrorCode.NOT_SUPERIOR

            if reason is None:
                with self._registry_lock:
                    if self._sod_blocks(store, tenant, to_user, inst.task, inst.process_instance):
                        reason = ErrorCode.SOD_VIOLATION
                    else:
                        record = DelegationRecord(inst.holder, to_user, by_role, to_iso(now))
                        inst.delegation_chain = inst.delegation_chain + (record,)
                        inst.holder = to_user
                        if inst.process_instance is not None:
                            self._involvement.add((tenant, inst.process_instance, to_user, inst.task))
                        snapshot = replace(inst)

        if reason is not None:
            raise self._deny(actor_session, reason, "delegate_task", instance=instance_id, to_user=to_user)
        self.logger(f"[AuthzEngine] Instancia {instance_id} delegada a {to_user} por {actor_session.user} ({by_role})")
        return snapshot

    # -------------------------------------------------------------------------
    # Persistencia del estado
    # -------------------------------------------------------------------------

    def snapshot(self) -> Dict[str, Any]:
        instances = [inst.to_dict() for inst in self.list_instances()]
        with self._registry_lock:
            involvement = sorted(list(item) for item in self._involvement)
        return {"instances": instances, "involvement": involvement}

    def restore(self, data: Mapping[str, Any]) -> None:
        instances = [TaskInstance.from_dict(d) for d in data.get("instances", [])]
        with self._registry_lock:
            self._instances = {inst.id: inst for inst in instances}
            self._instance_locks = {inst.id: threading.Lock() for inst in instances}
            self._involvement = {tuple(item) for item in data.get("involvement", [])}
        self.logger(f"[AuthzEngine] {len(instances)} instancias restauradas")

    # -------------------------------------------------------------------------
    # Reglas
    # -------------------------------------------------------------------------

    def _is_exhausted(self, usage_count: int, usage_limit: int) -> bool:
        return usage_count >= usage_limit

    def _access_deny_reason(self, store: PolicyStore, session: Session, inst: TaskInstance,
                            perm: Permission, now: datetime) -> Optional[ErrorCode]:
        # Precedencia: sesión > titular > estado > usos > ubicación > SoD > mapeo
        if session.is_expired(now):
            return ErrorCode.SESSION_EXPIRED
        if session.tenant != inst.tenant or session.user != inst.holder:
            return ErrorCode.NOT_HOLDER
        if inst.state == InstanceState.COMPLETED:
            return ErrorCode.TASK_NOT_ACTIVE
        if inst.state == InstanceState.DEACTIVATED:
            return ErrorCode.USAGE_EXHAUSTED
        for role_id in session.active_roles:
            role = store.roles.get((inst.tenant, role_id))
            if role is not None and inst.task in role.granted_tasks and not role.allows_location(session.location):
                return ErrorCode.LOCATION_FORBIDDEN
        with self._registry_lock:
            if self._sod_blocks(store, inst.tenant, inst.holder, inst.task, inst.process_instance):
                return ErrorCode.SOD_VIOLATION
        task_def = store.tasks.get((inst.tenant, inst.task))
        if task_def is None or perm not in task_def.permissions:
            return ErrorCode.NO_ROLE_TASK_MAPPING
        return None

    @staticmethod
    def _granted_by(store: PolicyStore, tenant: TenantId, roles: Iterable[RoleId]) -> Set[TaskId]:
        tasks: Set[TaskId] = set()
        for role_id in roles:
            role = store.roles.get((tenant, role_id))
            if role is not None:
                tasks |= role.granted_tasks
        return tasks

    def _sod_blocks(self, store: PolicyStore, tenant: TenantId, user: UserId,
                    task: TaskId, process_instance: Optional[str]) -> bool:
        """Requiere ``_registry_lock`` tomado"""
        if process_instance is None:
            return False
        for constraint in store.constraints_of(tenant, SodMode.DYNAMIC):
            if task not in constraint.conflicting_tasks:
                continue
            for other in constraint.conflicting_tasks - {task}:
                if (tenant, process_instance, user, other) in self._involvement:
                    return True
        return False

    @staticmethod
    def _delegating_role(store: PolicyStore, actor: Session, holder: UserId, to_user: UserId) -> Optional[RoleId]:
        """Menor rol activo del actor que es senior estricto de ambos extremos"""
        tenant = actor.tenant
        holder_user = store.users.get((tenant, holder))
        target_user = store.users.get((tenant, to_user))
        if holder_user is None or target_user is None:
            return None
        for role_id in sorted(actor.active_roles):
            if (tenant, role_id) not in store.roles:
                continue
            below = strict_juniors(store, tenant, role_id)
            if below & holder_user.assigned_roles and below & target_user.assigned_roles:
                return role_id
        return None

    def _lookup(self, session: Session, instance_id: str) -> Tuple[TaskInstance, threading.Lock]:
        with self._registry_lock:
            inst = self._instances.get(instance_id)
            lock = self._instance_locks.get(instance_id)
        if inst is None or inst.tenant != session.tenant:
            raise AuthzError(ErrorCode.NOT_FOUND, f"Instancia desconocida: {instance_id}")
        return inst, lock

    def _alert(self, session: Session, code: ErrorCode, endpoint: str, **detail: Any) -> AlertRecord:
        alert = make_alert(
            session.tenant, alert_kind_for(code), code, endpoint, self.clock,
            user=session.user, location=session.location, **detail,
        )
        self.logger(f"[AuthzEngine] Denegado {code.value}: {session.tenant}/{session.user} ({endpoint})", "WARNING")
        if self.on_alert is not None:
            self.on_alert(alert)
        return alert

    def _deny(self, session: Session, code: ErrorCode, endpoint: str, **detail: Any) -> AuthzError:
        alert = self._alert(session, code, endpoint, **detail)
        return AuthzError(code, f"Operación denegada: {code.value}", alerts=[alert])


# =============================================================================
# MÍNIMO PRIVILEGIO
# =============================================================================

@dataclass(frozen=True)
class LeastPrivilegeReport:
    """Permisos alcanzables sin uso en la ventana, por usuario"""
    window: timedelta
    generated_at: datetime
    entries: Dict[Tuple[TenantId, UserId], FrozenSet[Permission]] = field(default_factory=dict)

    def unused(self, tenant: TenantId, user: UserId) -> FrozenSet[Permission]:
        return self.entries.get((tenant, user), frozenset())

    def flagged(self) -> Dict[Tuple[TenantId, UserId], FrozenSet[Permission]]:
        return {key: perms for key, perms in self.entries.items() if perms}

    def to_dict(self) -> Dict[str, Any]:
        return {
            "window_seconds": self.window.total_seconds(),
            "generated_at": to_iso(self.generated_at),
            "users": [
                {"tenant": tenant, "user": user, "unused": sorted(str(p) for p in perms)}
                for (tenant, user), perms in sorted(self.entries.items())
            ],
        }


def audit_least_privilege(
    store: PolicyStore,
    access_log: Iterable[AccessDecision],
    window: timedelta,
    now: Optional[datetime] = None,
) -> LeastPrivilegeReport:
    now = now or utc_now()
    exercised: Set[Tuple[TenantId, UserId, Permission]] = set()
    for decision in access_log:
        if not decision.permitted or decision.permission is None or decision.decided_at is None:
            continue
        if now - window < decision.decided_at <= now:
            exercised.add((decision.tenant, decision.user, decision.permission))
    entries = {}
    for (tenant, user_id) in sorted(store.users):
        reachable = reachable_permissions(store, tenant, user_id)
        entries[(tenant, user_id)] = frozenset(
            p for p in reachable if (tenant, user_id, p) not in exercised
        )
    return LeastPrivilegeReport(window=window, generated_at=now, entries=entries)
