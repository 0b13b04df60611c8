"""
TRBAC Core - Autorización por tareas y roles multi-tenant
=========================================================

Este paquete contiene el modelo de políticas, el registro y autenticación
de usuarios, el motor de autorización por tareas y la persistencia en
archivos que usa el gateway.

Módulos:
- policy_model: tenants, roles, tareas, SoD y reglas de resolución
- authn: registro contra directorio, credenciales PBKDF2 y sesiones
- authz_engine: instancias de tareas, contador de usos, delegación
- alerts: alertas por tenant y despachador asíncrono
- persistence: policy.json, tablas JSON, log de auditoría
- config_system: configuración centralizada
"""

__version__ = "1.0.0"

from .errors import ErrorCode, TrbacError, PolicyError, AuthError, AuthzError, PersistenceError, ValidationFailed
from .policy_model import (
    DirectoryEntry,
    Permission,
    PolicyStore,
    Role,
    SodConstraint,
    SodMode,
    TaskDef,
    Tenant,
    User,
    permitted_tasks,
    resolve_effective_roles,
    validate_policy,
)
from .alerts import AlertDispatcher, AlertKind, AlertRecord
from .authn import Authenticator, CredentialRecord, PendingRegistration, Session
from .authz_engine import (
    AccessDecision,
    AuthzEngine,
    InstanceState,
    LeastPrivilegeReport,
    TaskInstance,
    Verdict,
    audit_least_privilege,
)
from .persistence import AuditLog, AuditRecord, load_policy, save_policy
from .config_system import ConfigManager

__all__ = [
    'ErrorCode',
    'TrbacError',
    'PolicyError',
    'AuthError',
    'AuthzError',
    'PersistenceError',
    'ValidationFailed',
    'DirectoryEntry',
    'Permission',
    'PolicyStore',
    'Role',
    'SodConstraint',
    'SodMode',
    'TaskDef',
    'Tenant',
    'User',
    'permitted_tasks',
    'resolve_effective_roles',
    'validate_policy',
    'AlertDispatcher',
    'AlertKind',
    'AlertRecord',
    'Authenticator',
    'CredentialRecord',
    'PendingRegistration',
    'Session',
    'AccessDecision',
    'AuthzEngine',
    'InstanceState',
    'LeastPrivilegeReport',
    'TaskInstance',
    'Verdict',
    'audit_least_privilege',
    'AuditLog',
    'AuditRecord',
    'load_policy',
    'save_policy',
    'ConfigManager',
]
