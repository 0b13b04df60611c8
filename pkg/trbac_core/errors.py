#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Errores del gateway TRBAC
=========================

Códigos de error compartidos por todos los módulos y la jerarquía de
excepciones. Los códigos son el contrato de cable: el gateway los devuelve
tal cual en ``{"error": code, "reason": ...}``.
"""

from __future__ import annotations

from enum import Enum
from typing import Any, Iterable, List, Optional


class ErrorCode(Enum):
    """Códigos de error y de denegación"""
    # policy-model
    UNKNOWN_USER = "unknown-user"
    UNKNOWN_ROLE = "unknown-role"
    UNKNOWN_TASK = "unknown-task"
    # authn
    UNKNOWN_TENANT = "unknown-tenant"
    DIRECTORY_MISMATCH = "directory-mismatch"
    ALREADY_REGISTERED = "already-registered"
    WEAK_PASSWORD = "weak-password"
    PENDING_EXPIRED = "pending-expired"
    BAD_CREDENTIALS = "bad-credentials"
    ACCOUNT_NOT_ACTIVATED = "account-not-activated"
    ROLE_NOT_ASSIGNED = "role-not-assigned"
    # authz-engine (razones de denegación)
    SESSION_EXPIRED = "session-expired"
    NOT_HOLDER = "not-holder"
    TASK_NOT_ACTIVE = "task-not-active"
    USAGE_EXHAUSTED = "usage-exhausted"
    LOCATION_FORBIDDEN = "location-forbidden"
    SOD_VIOLATION = "sod-violation"
    NO_ROLE_TASK_MAPPING = "no-role-task-mapping"
    NOT_SUPERIOR = "not-superior"
    NOT_TENANT_ADMIN = "not-tenant-admin"
    # gateway
    MALFORMED_REQUEST = "malformed-request"
    ACCESS_DENIED = "access-denied"
    NOT_FOUND = "not-found"
    SINK_UNAVAILABLE = "sink-unavailable"
    INTERNAL = "internal"
    # persistence
    IO_ERROR = "io-error"
    PARSE_ERROR = "parse-error"
    VALIDATION_FAILED = "validation-failed"
    # tooling
    DIMS_OUT_OF_RANGE = "dims-out-of-range"


class TrbacError(Exception):
    """Error base. Lleva el código y las alertas que produjo el fallo."""

    def __init__(self, code: ErrorCode, message: str = "", alerts: Iterable[Any] = ()):
        self.code = code
        self.message = message or code.value
        self.alerts: List[Any] = list(alerts)
        super().__init__(f"{code.value}: {self.message}")

    def to_dict(self) -> dict:
        return {"error": self.code.value, "reason": self.message}


class PolicyError(TrbacError):
    """Referencia desconocida en el modelo de políticas"""


class AuthError(TrbacError):
    """Fallo de registro o autenticación"""


class AuthzError(TrbacError):
    """Operación del motor denegada"""


class PersistenceError(TrbacError):
    """Fallo de E/S o de formato en disco"""


class ValidationFailed(PersistenceError):
    """La política cargada no supera validate_policy"""

    def __init__(self, diagnostics: List[Any], path: Optional[str] = None):
        self.diagnostics = list(diagnostics)
        where = f" ({path})" if path else ""
        lines = "; ".join(str(d) for d in self.diagnostics)
        super().__init__(ErrorCode.VALIDATION_FAILED, f"Política inválida{where}: {lines}")


class ToolingError(TrbacError):
    """Parámetros inválidos para las herramientas de verificación"""

