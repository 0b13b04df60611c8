#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Persistencia en archivos
========================

Distribución en disco (``storage.data_dir``)::

    policy.json          documento de política (format_version + store)
    credentials.json     tabla de credenciales, separada de la política
    instances.json       instancias de tareas + historial de SoD dinámica
    audit.log            auditoría de accesos, un JSON por línea
    alerts/<tenant>.log  alertas de cada tenant, un JSON por línea

Los documentos se escriben de forma atómica (temporal + rename) y con claves
ordenadas. Los logs son append-only.
"""

from __future__ import annotations

import json
import threading
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from .errors import ErrorCode, PersistenceError, ValidationFailed
from .logs import LogFn, default_logger
from .policy_model import PolicyStore, validate_policy
from .utils import Clock, atomic_write_json, ensure_directory, parse_iso, to_iso, utc_now

FORMAT_VERSION = 1


@dataclass(frozen=True)
class StorageLayout:
    """Rutas de todos los archivos bajo el directorio de datos"""
    data_dir: Path

    @property
    def policy_path(self) -> Path:
        return self.data_dir / "policy.json"

    @property
    def credentials_path(self) -> Path:
        return self.data_dir / "credentials.json"

    @property
    def instances_path(self) -> Path:
        return self.data_dir / "instances.json"

    @property
    def audit_path(self) -> Path:
        return self.data_dir / "audit.log"

    @property
    def alerts_dir(self) -> Path:
        return self.data_dir / "alerts"

    @property
    def logs_dir(self) -> Path:
        return self.data_dir / "logs"


# =============================================================================
# DOCUMENTO DE POLÍTICA
# =============================================================================

def policy_document(store: PolicyStore) -> Dict[str, Any]:
    return {"format_version": FORMAT_VERSION, **store.to_dict()}


def parse_policy_document(data: Any, source: str = "<memoria>") -> PolicyStore:
    """Documento -> store, sin validar. Rechaza versiones distintas."""
    if not isinstance(data, dict):
        raise PersistenceError(ErrorCode.PARSE_ERROR, f"{source}: se esperaba un objeto JSON")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise PersistenceError(
            ErrorCode.PARSE_ERROR,
            f"{source}: format_version {version!r} no soportado (se espera {FORMAT_VERSION})",
        )
    try:
        return PolicyStore.from_dict(data)
    except (KeyError, TypeError, ValueError, AttributeError) as exc:
        raise PersistenceError(ErrorCode.PARSE_ERROR, f"{source}: documento mal formado ({exc!r})") from exc


def load_policy(path: Union[str, Path]) -> PolicyStore:
    """Carga y valida; nunca devuelve un store inválido"""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise PersistenceError(ErrorCode.IO_ERROR, f"No se pudo leer {path}: {exc}") from exc
    try:
        data = json.loads(raw)
    except ValueError as exc:
        raise PersistenceError(ErrorCode.PARSE_ERROR, f"{path}: JSON inválido ({exc})") from exc
    store = parse_policy_document(data, str(path))
    diagnostics = validate_policy(store)
    if diagnostics:
        raise ValidationFailed(diagnostics, str(path))
    return store


_save_locks: Dict[str, threading.Lock] = {}
_save_locks_guard = threading.Lock()


def _lock_for(path: Path) -> threading.Lock:
    key = str(path.resolve())
    with _save_locks_guard:
        return _save_locks.setdefault(key, threading.Lock())


def save_policy(store: PolicyStore, path: Union[str, Path]) -> None:
    """Guarda con reemplazo atómico; el store debe ser válido"""
    path = Path(path)
    diagnostics = validate_policy(store)
    if diagnostics:
        raise ValidationFailed(diagnostics, str(path))
    document = policy_document(store)
    with _lock_for(path):
        try:
            atomic_write_json(document, path)
        except OSError as exc:
            raise PersistenceError(ErrorCode.IO_ERROR, f"No se pudo escribir {path}: {exc}") from exc


class PolicyRepository(ABC):
    """Punto de extensión para un almacenamiento distinto de archivos"""

    @abstractmethod
    def load(self) -> PolicyStore: ...

    @abstractmethod
    def save(self, store: PolicyStore) -> None: ...


class FilePolicyRepository(PolicyRepository):
    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def exists(self) -> bool:
        return self.path.exists()

    def load(self) -> PolicyStore:
        return load_policy(self.path)

    def save(self, store: PolicyStore) -> None:
        save_policy(store, self.path)


# =============================================================================
# DOCUMENTOS JSON GENÉRICOS (credenciales, instancias)
# =============================================================================

class JsonDocumentFile:
    """Documento JSON reemplazado completo en cada guardado"""

    def __init__(self, path: Union[str, Path], kind: str):
        self.path = Path(path)
        self.kind = kind
        self._lock = threading.Lock()

    def load(self) -> Dict[str, Any]:
        if not self.path.exists():
            return {"format_version": FORMAT_VERSION, self.kind: []}
        try:
            data = json.loads(self.path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise PersistenceError(ErrorCode.IO_ERROR, f"No se pudo leer {self.path}: {exc}") from exc
        except ValueError as exc:
            raise PersistenceError(ErrorCode.PARSE_ERROR, f"{self.path}: JSON inválido ({exc})") from exc
        if not isinstance(data, dict) or data.get("format_version") != FORMAT_VERSION:
            raise PersistenceError(ErrorCode.PARSE_ERROR, f"{self.path}: format_version no soportado")
        return data

    def save(self, payload: Dict[str, Any]) -> None:
        with self._lock:
            try:
                atomic_write_json({"format_version": FORMAT_VERSION, **payload}, self.path)
            except OSError as exc:
                raise PersistenceError(ErrorCode.IO_ERROR, f"No se pudo escribir {self.path}: {exc}") from exc


# =============================================================================
# LOG DE AUDITORÍA
# =============================================================================

@dataclass
class AuditRecord:
    """Una línea del log de auditoría"""
    timestamp: str
    actor: str
    endpoint: str
    verdict: str                 # permit | deny | ok | error
    reason: str
    instance: Optional[str] = None
    tenant: Optional[str] = None
    user: Optional[str] = None
    operation: Optional[str] = None
    object: Optional[str] = None
    extra: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "AuditRecord":
        return cls(**data)

    @property
    def at(self) -> datetime:
        return parse_iso(self.timestamp)


class AuditLog:
    """Log append-only, una línea JSON por registro"""

    def __init__(self, path: Union[str, Path], clock: Clock = utc_now, logger: Optional[LogFn] = None):
        self.path = Path(path)
        self.clock = clock
        self.logger = logger or default_logger
        self._lock = threading.Lock()
        self._last: Optional[datetime] = None
        ensure_directory(self.path.parent)

    def append(self, record: AuditRecord) -> AuditRecord:
        with self._lock:
            # Timestamps monótonos por escritor
            at = record.at
            if self._last is not None and at < self._last:
                at = self._last
                record.timestamp = to_iso(at)
            self._last = at
            line = json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False)
            try:
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(line + "\n")
                    f.flush()
            except OSError as exc:
                raise PersistenceError(ErrorCode.IO_ERROR, f"No se pudo escribir {self.path}: {exc}") from exc
        return record

    def record(self, **fields: Any) -> AuditRecord:
        """Atajo: crea el registro con el timestamp del reloj y lo agrega"""
        fields.setdefault("timestamp", to_iso(self.clock()))
        return self.append(AuditRecord(**fields))

    def read(
        self,
        window: Optional[timedelta] = None,
        now: Optional[datetime] = None,
    ) -> List[AuditRecord]:
        """Registros en orden; con ``window`` solo los de (now - window, now]"""
        if not self.path.exists():
            return []
        now = now or self.clock()
        records: List[AuditRecord] = []
        try:
            with open(self.path, "r", encoding="utf-8") as f:
                lines = f.readlines()
        except OSError as exc:
            raise PersistenceError(ErrorCode.IO_ERROR, f"No se pudo leer {self.path}: {exc}") from exc
        for number, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                record = AuditRecord.from_dict(json.loads(line))
            except (ValueError, TypeError):
                # Solo la última línea puede estar truncada (caída a mitad de escritura)
                if number == len(lines):
                    self.logger(f"[AuditLog] Línea final incompleta ignorada en {self.path}", "WARNING")
                    continue
                raise PersistenceError(ErrorCode.PARSE_ERROR, f"{self.path}:{number}: registro ilegible")
            if window is not None:
                at = record.at
                if not (now - window < at <= now):
                    continue
            records.append(record)
        return records


def append_audit(log: AuditLog, record: AuditRecord) -> AuditRecord:
    return log.append(record)


def read_audit(log: AuditLog, window: Optional[timedelta] = None, now: Optional[datetime] = None) -> List[AuditRecord]:
    return log.read(window, now)
