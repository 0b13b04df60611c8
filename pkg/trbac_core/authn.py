#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Registro y Autenticación
========================

Flujo de alta de un empleado y login:

1. ``register_user``: valida nombre + employee_id contra el directorio del
   tenant y deja un registro pendiente (token de un solo uso).
2. ``set_password``: crea la credencial (PBKDF2-SHA256, sal aleatoria por
   registro) en la tabla de credenciales, separada de la política.
3. ``authenticate``: compara en tiempo constante y emite una ``Session``.

Los fallos de registro y login generan una alerta ``unauthorized-attempt``
al tenant declarado. El error de login es uniforme: usuario inexistente y
contraseña incorrecta responden igual y con el mismo costo de hash.
"""

from __future__ import annotations

import base64
import secrets
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timedelta
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Mapping, Optional, Tuple

from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.kdf.pbkdf2 import PBKDF2HMAC

from .alerts import AlertKind, AlertRecord, make_alert
from .errors import AuthError, ErrorCode
from .logs import LogFn, default_logger, short_token
from .persistence import JsonDocumentFile
from .policy_model import LocationId, PolicyStore, RoleId, TenantId, UserId, resolve_effective_roles, strict_juniors
from .utils import Clock, to_iso, utc_now

HASH_ALGORITHM = "pbkdf2-sha256"
SALT_BYTES = 16
DIGEST_BYTES = 32
BAD_CREDENTIALS_MESSAGE = "Credenciales inválidas"

AlertFn = Callable[[AlertRecord], Any]


def hash_password(password: str, salt: bytes, iterations: int, algorithm_tag: str = HASH_ALGORITHM) -> bytes:
    if algorithm_tag != HASH_ALGORITHM:
        raise ValueError(f"Algoritmo de hash no soportado: {algorithm_tag}")
    kdf = PBKDF2HMAC(algorithm=hashes.SHA256(), length=DIGEST_BYTES, salt=salt, iterations=iterations)
    return kdf.derive(password.encode("utf-8"))


def new_session_token() -> str:
    """256 bits del CSPRNG, url-safe"""
    return secrets.token_urlsafe(32)


# =============================================================================
# TIPOS
# =============================================================================

@dataclass(frozen=True)
class CredentialRecord:
    tenant: TenantId
    user: UserId
    algorithm_tag: str
    salt: bytes
    iterations: int
    digest: bytes
    active: bool = True
    created_at: str = ""

    def verify(self, password: str) -> bool:
        candidate = hash_password(password, self.salt, self.iterations, self.algorithm_tag)
        return secrets.compare_digest(candidate, self.digest)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "tenant": self.tenant,
            "user": self.user,
            "algorithm_tag": self.algorithm_tag,
            "salt": base64.b64encode(self.salt).decode("ascii"),
            "iterations": self.iterations,
            "digest": base64.b64encode(self.digest).decode("ascii"),
            "active": self.active,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "CredentialRecord":
        return cls(
            tenant=data["tenant"],
            user=data["user"],
            algorithm_tag=data["algorithm_tag"],
            salt=base64.b64decode(data["salt"]),
            iterations=int(data["iterations"]),
            digest=base64.b64decode(data["digest"]),
            active=bool(data.get("active", True)),
            created_at=data.get("created_at", ""),
        )

    def public_dict(self) -> Dict[str, Any]:
        """Vista sin sal ni digest"""
        return {
            "tenant": self.tenant,
            "user": self.user,
            "algorithm_tag": self.algorithm_tag,
            "iterations": self.iterations,
            "active": self.active,
            "created_at": self.created_at,
        }


@dataclass
class PendingRegistration:
    token: str
    tenant: TenantId
    user: UserId
    employee_id: str
    name: str
    designation: str
    created_at: datetime
    expires_at: datetime
    consumed: bool = False

    def to_dict(self) -> Dict[str, Any]:
        return {
            "registration_token": self.token,
            "tenant": self.tenant,
            "user": self.user,
            "employee_id": self.employee_id,
            "name": self.name,
            "designation": self.designation,
            "expires_at": to_iso(self.expires_at),
        }


@dataclass(frozen=True)
class Session:
    token: str
    user: UserId
    tenant: TenantId
    active_roles: FrozenSet[RoleId]
    location: LocationId
    issued_at: datetime
    expires_at: datetime

    def is_expired(self, now: datetime) -> bool:
        return now >= self.expires_at

    def to_dict(self) -> Dict[str, Any]:
        return {
            "token": self.token,
            "user": self.user,
            "tenant": self.tenant,
            "active_roles": sorted(self.active_roles),
            "location": self.location,
            "issued_at": to_iso(self.issued_at),
            "expires_at": to_iso(self.expires_at),
        }


# =============================================================================
# TABLA DE CREDENCIALES
# =============================================================================

class CredentialTable:
    """credentials.json: una entrada por (tenant, usuario)"""

    def __init__(self, document: Optional[JsonDocumentFile] = None):
        self.document = document
        self._lock = threading.Lock()
        self._records: Dict[Tuple[TenantId, UserId], CredentialRecord] = {}
        if document is not None:
            for item in document.load().get("credentials", []):
                record = CredentialRecord.from_dict(item)
                self._records[(record.tenant, record.user)] = record

    def get(self, tenant: TenantId, user: UserId) -> Optional[CredentialRecord]:
        with self._lock:
            return self._records.get((tenant, user))

    def put(self, record: CredentialRecord) -> None:
        with self._lock:
            self._records[(record.tenant, record.user)] = record
            self._save_locked()

    def all(self) -> List[CredentialRecord]:
        with self._lock:
            return [r for _, r in sorted(self._records.items())]

    def _save_locked(self) -> None:
        if self.document is None:
            return
        items = [r.to_dict() for _, r in sorted(self._records.items())]
        self.document.save({"credentials": items})


# =============================================================================
# AUTENTICADOR
# =============================================================================

class Authenticator:
    """Registro de usuarios, credenciales y sesiones de un gateway"""

    def __init__(
        self,
        store: PolicyStore,
        credentials: Optional[CredentialTable] = None,
        hash_iterations: int = 100_000,
        min_password_length: int = 8,
        session_ttl: timedelta = timedelta(minutes=30),
        registration_ttl: timedelta = timedelta(minutes=10),
        session_grace: Optional[timedelta] = None,
        max_pending_per_user: int = 3,
        sweep_interval: timedelta = timedelta(seconds=60),
        enforce_location_at_login: bool = False,
        clock: Clock = utc_now,
        on_alert: Optional[AlertFn] = None,
        logger: Optional[LogFn] = None,
    ):
        self.store = store
        self.credentials = credentials or CredentialTable()
        self.hash_iterations = hash_iterations
        self.min_password_length = min_password_length
        self.session_ttl = session_ttl
        self.registration_ttl = registration_ttl
        # Una sesión vencida sigue respondiendo session-expired durante la gracia
        self.session_grace = session_ttl if session_grace is None else session_grace
        self.max_pending_per_user = max(1, max_pending_per_user)
        self.sweep_interval = sweep_interval
        self.enforce_location_at_login = enforce_location_at_login
        self.clock = clock
        self.on_alert = on_alert
        self.logger = logger or default_logger

        self._lock = threading.Lock()
        self._user_locks: Dict[Tuple[TenantId, UserId], threading.Lock] = {}
        self._pending: Dict[str, PendingRegistration] = {}
        self._sessions: Dict[str, Session] = {}
        self._last_sweep: Optional[datetime] = None
        # Hash de relleno para que un usuario inexistente cueste lo mismo
        self._dummy_salt = secrets.token_bytes(SALT_BYTES)

    def reload(self, store: PolicyStore) -> None:
        self.store = store

    # -------------------------------------------------------------------------
    # Registro
    # -------------------------------------------------------------------------

    def register_user(self, tenant: TenantId, name: str, designation: str, employee_id: str) -> PendingRegistration:
        store = self.store
        self._maybe_sweep()
        tenant_obj = store.tenants.get(tenant)
        if tenant_obj is None:
            self.logger(f"[Authn] Registro para tenant inexistente: {tenant!r}", "WARNING")
            raise AuthError(ErrorCode.UNKNOWN_TENANT, f"Tenant desconocido: {tenant}")

        actor = {"name": name, "employee_id": employee_id, "designation": designation}
        entry = tenant_obj.directory_entry(employee_id)
        user = store.user_by_employee(tenant, employee_id)
        if entry is None or entry.name.casefold() != name.casefold() or user is None:
            raise self._fail(tenant, ErrorCode.DIRECTORY_MISMATCH, "register_user",
                             "El empleado no coincide con el directorio del tenant", actor)
        if self.credentials.get(tenant, user.id) is not None:
            raise self._fail(tenant, ErrorCode.ALREADY_REGISTERED, "register_user",
                             "El usuario ya tiene credenciales", {**actor, "user": user.id})

        now = self.clock()
        pending = PendingRegistration(
            token=secrets.token_urlsafe(32),
            tenant=tenant,
            user=user.id,
            employee_id=employee_id,
            name=entry.name,
            designation=designation,
            created_at=now,
            expires_at=now + self.registration_ttl,
        )
        with self._lock:
            self._pending[pending.token] = pending
            same_user = [p for p in self._pending.values() if (p.tenant, p.user) == (tenant, user.id)]
            same_user.sort(key=lambda p: p.created_at)
            for old in same_user[:-self.max_pending_per_user]:
                del self._pending[old.token]
        self.logger(f"[Authn] Registro pendiente para {tenant}/{user.id} ({short_token(pending.token)})")
        return pending

    def set_password(self, pending: "PendingRegistration | str", password: str) -> CredentialRecord:
        token = pending if isinstance(pending, str) else pending.token
        now = self.clock()
        with self._lock:
            current = self._pending.get(token)
        if current is None or current.consumed or now >= current.expires_at:
            raise AuthError(ErrorCode.PENDING_EXPIRED, "Registro pendiente inexistente, usado o vencido")
        if not isinstance(password, str) or len(password) < self.min_password_length:
            raise AuthError(
                ErrorCode.WEAK_PASSWORD,
                f"La contraseña debe tener al menos {self.min_password_length} caracteres",
            )

        with self._user_lock(current.tenant, current.user):
            with self._lock:
                if current.consumed:
                    raise AuthError(ErrorCode.PENDING_EXPIRED, "Registro pendiente ya usado")
                current.consumed = True
                self._pending.pop(token, None)
            if self.credentials.get(current.tenant, current.user) is not None:
                raise AuthError(ErrorCode.ALREADY_REGISTERED, "El usuario ya tiene credenciales")
            salt = secrets.token_bytes(SALT_BYTES)
            record = CredentialRecord(
                tenant=current.tenant,
                user=current.user,
                algorithm_tag=HASH_ALGORITHM,
                salt=salt,
                iterations=self.hash_iterations,
                digest=hash_password(password, salt, self.hash_iterations),
                active=True,
                created_at=to_iso(now),
            )
            self.credentials.put(record)
        self.logger(f"[Authn] Credencial creada para {current.tenant}/{current.user}")
        return record

    # -------------------------------------------------------------------------
    # Login
    # -------------------------------------------------------------------------

    def authenticate(
        self,
        tenant: TenantId,
        user: UserId,
        password: str,
        location: LocationId,
        roles: Optional[Iterable[RoleId]] = None,
    ) -> Session:
        store = self.store
        self._maybe_sweep()
        actor = {"user": user, "location": location}
        record = self.credentials.get(tenant, user) if tenant in store.tenants else None

        if record is None:
            hash_password(password, self._dummy_salt, self.hash_iterations)
            if tenant not in store.tenants:
                self.logger(f"[Authn] Login para tenant inexistente: {tenant!r}", "WARNING")
                raise AuthError(ErrorCode.BAD_CREDENTIALS, BAD_CREDENTIALS_MESSAGE)
            raise self._fail(tenant, ErrorCode.BAD_CREDENTIALS, "authenticate", BAD_CREDENTIALS_MESSAGE, actor)

        if not record.verify(password):
            raise self._fail(tenant, ErrorCode.BAD_CREDENTIALS, "authenticate", BAD_CREDENTIALS_MESSAGE, actor)
        if not record.active:
            raise self._fail(tenant, ErrorCode.ACCOUNT_NOT_ACTIVATED, "authenticate",
                             "La cuenta está desactivada", actor)
        if (tenant, user) not in store.users:
            # Usuario retirado de la política después de registrarse
            raise self._fail(tenant, ErrorCode.BAD_CREDENTIALS, "authenticate", BAD_CREDENTIALS_MESSAGE, actor)

        effective = resolve_effective_roles(store, tenant, user)
        if roles is not None:
            requested = frozenset(roles)
            if not requested or not requested <= effective:
                missing = ", ".join(sorted(requested - effective)) or "(vacío)"
                raise self._fail(tenant, ErrorCode.ROLE_NOT_ASSIGNED, "authenticate",
                                 f"Roles no asignados: {missing}", actor)
            # Activar un rol senior activa también sus juniors
            active_roles = requested.union(*(strict_juniors(store, tenant, r) for r in requested))
        else:
            requested = effective
            active_roles = effective

        if self.enforce_location_at_login and requested:
            # Cuenta solo lo que el usuario pidió activar, no los juniors heredados
            allowed = any(
                store.roles[(tenant, r)].allows_location(location)
                for r in requested if (tenant, r) in store.roles
            )
            if not allowed:
                raise self._fail(tenant, ErrorCode.LOCATION_FORBIDDEN, "authenticate",
                                 f"Ningún rol activo permite la ubicación {location}", actor)

        now = self.clock()
        session = Session(
            token=new_session_token(),
            user=user,
            tenant=tenant,
            active_roles=active_roles,
            location=location,
            issued_at=now,
            expires_at=now + self.session_ttl,
        )
        with self._lock:
            self._sessions[session.token] = session
        self.logger(f"[Authn] Sesión {short_token(session.token)} para {tenant}/{user} en {location}")
        return session

    # -------------------------------------------------------------------------
    # Sesiones
    # -------------------------------------------------------------------------

    def lookup_session(self, token: Optional[str]) -> Optional[Session]:
        """Sesión registrada para el token, vencida o no"""
        if not token:
            return None
        with self._lock:
            return self._sessions.get(token)

    def logout(self, token: str) -> bool:
        with self._lock:
            removed = self._sessions.pop(token, None)
        if removed is not None:
            self.logger(f"[Authn] Sesión cerrada {short_token(token)}")
        return removed is not None

    def purge_expired(self, grace: timedelta = timedelta(0)) -> int:
        """Descarta sesiones vencidas hace más de ``grace`` y registros pendientes caducados"""
        now = self.clock()
        with self._lock:
            self._last_sweep = now
            expired = [t for t, s in self._sessions.items() if s.is_expired(now - grace)]
            for token in expired:
                del self._sessions[token]
            stale = [t for t, p in self._pending.items() if p.consumed or now >= p.expires_at]
            for token in stale:
                del self._pending[token]
        return len(expired)

    def get_stats(self) -> Dict[str, int]:
        with self._lock:
            return {"sessions": len(self._sessions), "pending": len(self._pending)}

    def set_active(self, tenant: TenantId, user: UserId, active: bool) -> CredentialRecord:
        """Activa o desactiva la credencial de un usuario"""
        with self._user_lock(tenant, user):
            record = self.credentials.get(tenant, user)
            if record is None:
                raise AuthError(ErrorCode.UNKNOWN_USER, f"Sin credencial: {tenant}/{user}")
            record = replace(record, active=active)
            self.credentials.put(record)
        if not active:
            with self._lock:
                for token in [t for t, s in self._sessions.items() if (s.tenant, s.user) == (tenant, user)]:
                    del self._sessions[token]
        self.logger(f"[Authn] Credencial {tenant}/{user} {'activada' if active else 'desactivada'}")
        return record

    # -------------------------------------------------------------------------

    def _maybe_sweep(self) -> None:
        now = self.clock()
        with self._lock:
            due = self._last_sweep is None or now - self._last_sweep >= self.sweep_interval
        if due:
            purged = self.purge_expired(self.session_grace)
            if purged:
                self.logger(f"[Authn] {purged} sesiones vencidas descartadas", "DEBUG")

    def _user_lock(self, tenant: TenantId, user: UserId) -> threading.Lock:
        with self._lock:
            return self._user_locks.setdefault((tenant, user), threading.Lock())

    def _fail(self, tenant: TenantId, code: ErrorCode, endpoint: str, message: str,
              actor: Dict[str, Any]) -> AuthError:
        alert = make_alert(tenant, AlertKind.UNAUTHORIZED_ATTEMPT, code, endpoint, self.clock, **actor)
        self.logger(f"[Authn] {code.value} en {tenant} ({endpoint})", "WARNING")
        if self.on_alert is not None:
            self.on_alert(alert)
        return AuthError(code, message, alerts=[alert])


def credential_table_at(path) -> CredentialTable:
    return CredentialTable(JsonDocumentFile(path, "credentials"))

