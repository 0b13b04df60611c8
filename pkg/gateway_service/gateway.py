#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Gateway TRBAC - Punto de aplicación de políticas
================================================

``GatewayService.handle_request`` recibe un ``RequestEnvelope`` ya extraído
del transporte y devuelve un ``ResponseEnvelope``. El servidor Flask
(``gateway_api``) solo traduce HTTP a sobres y viceversa, de modo que las
pruebas pueden ejercitar el flujo completo sin sockets.

Flujo por petición:

1. Ruta -> esquema pydantic; un cuerpo inválido nunca llega al motor.
2. Endpoints con sesión: token ``Authorization: Bearer`` -> ``Session``.
3. Authn / motor; las alertas producidas se despachan antes de responder.
4. Registro de auditoría y, si hubo mutación, guardado de instances.json.
"""

from __future__ import annotations

import ipaddress
import threading
from dataclasses import dataclass, field
from datetime import timedelta
from typing import Any, Callable, Dict, List, Optional, Tuple

from trbac_core.alerts import AlertDispatcher, AlertRecord, DeliveryReceipt, MailAlertSink, alert_kind_for, make_alert
from trbac_core.authn import Authenticator, Session, credential_table_at
from trbac_core.authz_engine import AuthzEngine
from trbac_core.config_system import ConfigManager
from trbac_core.errors import ErrorCode, TrbacError
from trbac_core.logs import LogFn, default_logger, short_token
from trbac_core.persistence import FilePolicyRepository, JsonDocumentFile, AuditLog, StorageLayout
from trbac_core.policy_model import Permission, PolicyStore, resolve_effective_roles
from trbac_core.utils import Clock, utc_now

from .schemas import (
    AccessIn,
    ActivateIn,
    CompleteIn,
    DelegateIn,
    LoginIn,
    MalformedBody,
    PasswordIn,
    RegisterIn,
    parse_body,
)

# Códigos de denegación del motor: 403 access-denied con la razón
_ENGINE_DENIALS = {
    ErrorCode.NOT_HOLDER,
    ErrorCode.TASK_NOT_ACTIVE,
    ErrorCode.USAGE_EXHAUSTED,
    ErrorCode.LOCATION_FORBIDDEN,
    ErrorCode.SOD_VIOLATION,
    ErrorCode.NO_ROLE_TASK_MAPPING,
    ErrorCode.NOT_SUPERIOR,
    ErrorCode.UNKNOWN_USER,
}

HTTP_STATUS: Dict[ErrorCode, int] = {
    ErrorCode.MALFORMED_REQUEST: 400,
    ErrorCode.BAD_CREDENTIALS: 401,
    ErrorCode.SESSION_EXPIRED: 401,
    ErrorCode.ACCESS_DENIED: 403,
    ErrorCode.DIRECTORY_MISMATCH: 403,
    ErrorCode.ACCOUNT_NOT_ACTIVATED: 403,
    ErrorCode.ROLE_NOT_ASSIGNED: 403,
    ErrorCode.LOCATION_FORBIDDEN: 403,
    ErrorCode.NOT_TENANT_ADMIN: 403,
    ErrorCode.NOT_FOUND: 404,
    ErrorCode.UNKNOWN_TENANT: 404,
    ErrorCode.ALREADY_REGISTERED: 409,
    ErrorCode.PENDING_EXPIRED: 410,
    ErrorCode.WEAK_PASSWORD: 422,
    ErrorCode.INTERNAL: 500,
}


@dataclass
class RequestEnvelope:
    method: str
    endpoint: str
    body: Any = None
    session_token: Optional[str] = None
    observed_location: Optional[str] = None
    remote_addr: Optional[str] = None


@dataclass
class ResponseEnvelope:
    status: int
    body: Dict[str, Any] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status < 400


class _RequestFailed(Exception):
    """Corta el manejo de una petición con una respuesta ya decidida"""

    def __init__(self, response: ResponseEnvelope):
        super().__init__(response.status)
        self.response = response


def error_response(code: ErrorCode, reason: str, **extra: Any) -> ResponseEnvelope:
    return ResponseEnvelope(HTTP_STATUS.get(code, 403), {"error": code.value, "reason": reason, **extra})


class GatewayService:
    """Orquesta authn, motor, alertas y auditoría para los endpoints /v1"""

    ROUTES: Tuple[Tuple[str, str, str], ...] = (
        ("POST", "/v1/register", "_register"),
        ("POST", "/v1/password", "_password"),
        ("POST", "/v1/login", "_login"),
        ("POST", "/v1/logout", "_logout"),
        ("POST", "/v1/tasks/activate", "_activate"),
        ("POST", "/v1/access", "_access"),
        ("POST", "/v1/tasks/complete", "_complete"),
        ("POST", "/v1/tasks/delegate", "_delegate"),
        ("GET", "/v1/alerts", "_alerts"),
        ("GET", "/v1/sessions/me", "_session_me"),
        ("GET", "/v1/health", "_health"),
    )

    def __init__(
        self,
        config: ConfigManager,
        store: Optional[PolicyStore] = None,
        clock: Clock = utc_now,
        logger: Optional[LogFn] = None,
        asynchronous_alerts: bool = True,
        mail_sink: Optional[MailAlertSink] = None,
    ):
        self.config = config
        self.clock = clock
        self.logger = logger or default_logger
        self.layout = StorageLayout(config.data_dir)

        self.repository = FilePolicyRepository(self.layout.policy_path)
        if store is None:
            store = self.repository.load()
        elif not self.repository.exists():
            self.repository.save(store)
        self.store = store
        self._policy_signature = self._policy_file_signature()

        self.authn = Authenticator(
            store,
            credentials=credential_table_at(self.layout.credentials_path),
            hash_iterations=config.get("auth.hash_iterations"),
            min_password_length=config.get("auth.min_password_length"),
            session_ttl=timedelta(minutes=config.get("session.ttl_minutes")),
            registration_ttl=timedelta(minutes=config.get("registration.ttl_minutes")),
            enforce_location_at_login=config.get("location.enforce_at_login"),
            clock=clock,
            logger=self.logger,
        )
        self.engine = AuthzEngine(store, clock=clock, logger=self.logger)
        self.instances_file = JsonDocumentFile(self.layout.instances_path, "instances")
        self.engine.restore(self.instances_file.load())
        self.audit = AuditLog(self.layout.audit_path, clock=clock, logger=self.logger)
        self.dispatcher = AlertDispatcher(
            self.layout.alerts_dir,
            self._sink_for,
            mail_sink=mail_sink or MailAlertSink(
                retries=config.get("alerts.mail.retries"),
                timeout=float(config.get("alerts.mail.timeout")),
            ),
            asynchronous=asynchronous_alerts,
            logger=self.logger,
        )
        self.zones = config.zone_networks()
        self._persist_lock = threading.Lock()
        self._reload_lock = threading.Lock()
        self._handlers: Dict[Tuple[str, str], Callable[[RequestEnvelope], ResponseEnvelope]] = {
            (method, path): getattr(self, name) for method, path, name in self.ROUTES
        }
        self._paths = {path for _, path, _ in self.ROUTES}

    # -------------------------------------------------------------------------
    # Ciclo de vida
    # -------------------------------------------------------------------------

    def start(self):
        self.dispatcher.start()
        self.logger(f"[Gateway] Iniciado con datos en {self.layout.data_dir}")

    def stop(self):
        self.dispatcher.stop()
        self.logger("[Gateway] Detenido")

    def refresh_policy(self) -> bool:
        """Recarga policy.json si cambió en disco (p.ej. editado con la CLI)"""
        signature = self._policy_file_signature()
        if signature is None or signature == self._policy_signature:
            return False
        with self._reload_lock:
            if signature == self._policy_signature:
                return False
            self._policy_signature = signature
            try:
                self.reload_policy()
            except TrbacError as exc:
                self.logger(f"[Gateway] policy.json cambió pero no se pudo cargar; se mantiene la anterior: {exc}",
                            "ERROR")
                return False
        return True

    def reload_policy(self, store: Optional[PolicyStore] = None) -> PolicyStore:
        """Recarga la política desde disco (o usa la dada) en authn y motor"""
        store = store or self.repository.load()
        self.store = store
        self.authn.reload(store)
        self.engine.reload(store)
        self.logger("[Gateway] Política recargada")
        return store

    # -------------------------------------------------------------------------
    # Entrada
    # -------------------------------------------------------------------------

    def handle_request(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        self.refresh_policy()
        method = envelope.method.upper()
        handler = self._handlers.get((method, envelope.endpoint))
        if handler is None:
            if envelope.endpoint in self._paths:
                return ResponseEnvelope(405, {"error": ErrorCode.MALFORMED_REQUEST.value,
                                              "reason": f"Método no soportado: {method}"})
            return error_response(ErrorCode.NOT_FOUND, f"Endpoint desconocido: {envelope.endpoint}")
        try:
            return handler(envelope)
        except _RequestFailed as failed:
            return failed.response
        except MalformedBody as exc:
            return error_response(ErrorCode.MALFORMED_REQUEST, str(exc))
        except Exception as exc:
            self.logger(f"[Gateway] Error interno en {envelope.endpoint}: {exc!r}", "ERROR")
            return error_response(ErrorCode.INTERNAL, "Error interno")

    def dispatch_alert(self, record: AlertRecord) -> DeliveryReceipt:
        return self.dispatcher.dispatch_alert(record)

    def observe_location(self, declared: Optional[str], envelope: RequestEnvelope) -> str:
        """Ubicación según ``location.mode``: declarada por el cliente o por zona de red"""
        if self.config.get("location.mode") == "declared" and declared:
            return declared
        if envelope.observed_location:
            return envelope.observed_location
        if envelope.remote_addr:
            try:
                addr = ipaddress.ip_address(envelope.remote_addr)
            except ValueError:
                addr = None
            if addr is not None:
                for network, location in self.zones:
                    if addr.version == network.version and addr in network:
                        return location
        return self.config.get("location.default")

    # -------------------------------------------------------------------------
    # Registro y login
    # -------------------------------------------------------------------------

    def _register(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        body = parse_body(RegisterIn, envelope.body)
        actor = f"{body.tenant}/{body.employee_id}"
        try:
            pending = self.authn.register_user(body.tenant, body.name, body.designation, body.employee_id)
        except TrbacError as exc:
            return self._failure(envelope, exc, actor, tenant=body.tenant)
        self._audit(envelope, actor, "ok", "ok", tenant=body.tenant, user=pending.user)
        return ResponseEnvelope(201, pending.to_dict())

    def _password(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        body = parse_body(PasswordIn, envelope.body)
        actor = f"registro:{short_token(body.registration_token)}"
        try:
            record = self.authn.set_password(body.registration_token, body.password)
        except TrbacError as exc:
            return self._failure(envelope, exc, actor)
        self._audit(envelope, f"{record.tenant}/{record.user}", "ok", "ok", tenant=record.tenant, user=record.user)
        return ResponseEnvelope(201, record.public_dict())

    def _login(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        body = parse_body(LoginIn, envelope.body)
        actor = f"{body.tenant}/{body.user}"
        location = self.observe_location(body.location, envelope)
        try:
            session = self.authn.authenticate(body.tenant, body.user, body.password, location, body.roles)
        except TrbacError as exc:
            return self._failure(envelope, exc, actor, tenant=body.tenant)
        self._audit(envelope, actor, "ok", "ok", tenant=body.tenant, user=body.user,
                    extra={"location": location})
        return ResponseEnvelope(200, session.to_dict())

    def _logout(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        session = self._session(envelope)
        self.authn.logout(session.token)
        self._audit(envelope, f"{session.tenant}/{session.user}", "ok", "ok", tenant=session.tenant, user=session.user)
        return ResponseEnvelope(200, {"status": "ok"})

    # -------------------------------------------------------------------------
    # Tareas
    # -------------------------------------------------------------------------

    def _activate(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        body = parse_body(ActivateIn, envelope.body)
        session = self._session(envelope)
        actor = f"{session.tenant}/{session.user}"
        try:
            instance = self.engine.activate_task(session, body.task, body.process_instance)
        except TrbacError as exc:
            return self._failure(envelope, exc, actor, tenant=session.tenant, user=session.user,
                                 extra={"task": body.task})
        self._persist_instances()
        self._audit(envelope, actor, "ok", "ok", instance=instance.id, tenant=session.tenant,
                    user=session.user, extra={"task": instance.task})
        return ResponseEnvelope(201, instance.to_dict())

    def _access(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        body = parse_body(AccessIn, envelope.body)
        session = self._session(envelope)
        actor = f"{session.tenant}/{session.user}"
        perm = Permission(body.operation, body.object)
        try:
            decision = self.engine.check_access(session, body.instance, perm)
        except TrbacError as exc:
            return self._failure(envelope, exc, actor, tenant=session.tenant, user=session.user,
                                 instance=body.instance)
        audit = dict(instance=body.instance, tenant=session.tenant, user=session.user,
                     operation=perm.operation, object=perm.object,
                     extra={"task": decision.task, "usage_after": decision.usage_after})
        if decision.permitted:
            self._persist_instances()
            self._audit(envelope, actor, "permit", decision.reason, **audit)
            return ResponseEnvelope(200, decision.to_dict())
        self._send_alerts(envelope, decision.alerts_emitted)
        self._audit(envelope, actor, "deny", decision.reason, **audit)
        return ResponseEnvelope(
            401 if decision.reason == ErrorCode.SESSION_EXPIRED.value else 403,
            {"error": ErrorCode.ACCESS_DENIED.value, "reason": decision.reason, "decision": decision.to_dict()},
        )

    def _complete(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        body = parse_body(CompleteIn, envelope.body)
        session = self._session(envelope)
        actor = f"{session.tenant}/{session.user}"
        try:
            instance = self.engine.complete_task(session, body.instance)
        except TrbacError as exc:
            return self._failure(envelope, exc, actor, tenant=session.tenant, user=session.user,
                                 instance=body.instance)
        self._persist_instances()
        self._audit(envelope, actor, "ok", "ok", instance=instance.id, tenant=session.tenant, user=session.user)
        return ResponseEnvelope(200, instance.to_dict())

    def _delegate(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        body = parse_body(DelegateIn, envelope.body)
        session = self._session(envelope)
        actor = f"{session.tenant}/{session.user}"
        try:
            instance = self.engine.delegate_task(session, body.instance, body.to_user)
        except TrbacError as exc:
            return self._failure(envelope, exc, actor, tenant=session.tenant, user=session.user,
                                 instance=body.instance, extra={"to_user": body.to_user})
        self._persist_instances()
        self._audit(envelope, actor, "ok", "ok", instance=instance.id, tenant=session.tenant,
                    user=session.user, extra={"to_user": body.to_user})
        return ResponseEnvelope(200, instance.to_dict())

    # -------------------------------------------------------------------------
    # Consultas
    # -------------------------------------------------------------------------

    def _alerts(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        session = self._session(envelope)
        tenant = self.store.tenants.get(session.tenant)
        effective = (
            resolve_effective_roles(self.store, session.tenant, session.user)
            if (session.tenant, session.user) in self.store.users else frozenset()
        )
        actor = f"{session.tenant}/{session.user}"
        if tenant is None or not (effective & tenant.admin_roles):
            alert = make_alert(session.tenant, alert_kind_for(ErrorCode.NOT_TENANT_ADMIN),
                               ErrorCode.NOT_TENANT_ADMIN, envelope.endpoint, self.clock, user=session.user)
            self._send_alerts(envelope, [alert])
            self._audit(envelope, actor, "deny", ErrorCode.NOT_TENANT_ADMIN.value, tenant=session.tenant,
                        user=session.user)
            return error_response(ErrorCode.NOT_TENANT_ADMIN, "Se requiere un rol administrador del tenant")
        self.dispatcher.flush(timeout=2.0)
        alerts = [a.to_dict() for a in self.dispatcher.read_alerts(session.tenant)]
        return ResponseEnvelope(200, {"tenant": session.tenant, "alerts": alerts})

    def _session_me(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        session = self._session(envelope)
        data = session.to_dict()
        data.pop("token", None)
        return ResponseEnvelope(200, data)

    def _health(self, envelope: RequestEnvelope) -> ResponseEnvelope:
        return ResponseEnvelope(200, {
            "status": "ok",
            "tenants": len(self.store.tenants),
            "instances": len(self.engine.list_instances()),
            "auth": self.authn.get_stats(),
            "alerts": self.dispatcher.get_stats(),
        })

    # -------------------------------------------------------------------------
    # Auxiliares
    # -------------------------------------------------------------------------

    def _session(self, envelope: RequestEnvelope) -> Session:
        """Sesión vigente del token o respuesta 401 (con alerta si había tenant)"""
        session = self.authn.lookup_session(envelope.session_token)
        if session is None:
            self._audit(envelope, f"token:{short_token(envelope.session_token)}", "deny",
                        ErrorCode.BAD_CREDENTIALS.value)
            raise _RequestFailed(error_response(ErrorCode.BAD_CREDENTIALS, "Sesión inexistente"))
        if session.is_expired(self.clock()):
            alert = make_alert(session.tenant, alert_kind_for(ErrorCode.SESSION_EXPIRED),
                               ErrorCode.SESSION_EXPIRED, envelope.endpoint, self.clock,
                               user=session.user, location=session.location)
            self._send_alerts(envelope, [alert])
            self._audit(envelope, f"{session.tenant}/{session.user}", "deny", ErrorCode.SESSION_EXPIRED.value,
                        tenant=session.tenant, user=session.user)
            raise _RequestFailed(error_response(ErrorCode.SESSION_EXPIRED, "La sesión ha expirado"))
        return session

    def _failure(self, envelope: RequestEnvelope, exc: TrbacError, actor: str,
                 tenant: Optional[str] = None, user: Optional[str] = None,
                 instance: Optional[str] = None, extra: Optional[Dict[str, Any]] = None) -> ResponseEnvelope:
        self._send_alerts(envelope, exc.alerts)
        self._audit(envelope, actor, "deny", exc.code.value, instance=instance, tenant=tenant, user=user,
                    extra=extra or {})
        if exc.code in _ENGINE_DENIALS and envelope.endpoint.startswith("/v1/tasks/"):
            return ResponseEnvelope(403, {"error": ErrorCode.ACCESS_DENIED.value, "reason": exc.code.value})
        return error_response(exc.code, exc.message)

    def _send_alerts(self, envelope: RequestEnvelope, alerts: List[AlertRecord]) -> None:
        for alert in alerts:
            self.dispatch_alert(alert.with_endpoint(envelope.endpoint))

    def _audit(self, envelope: RequestEnvelope, actor: str, verdict: str, reason: str, **fields: Any) -> None:
        try:
            self.audit.record(actor=actor, endpoint=envelope.endpoint, verdict=verdict, reason=reason, **fields)
        except TrbacError as exc:
            self.logger(f"[Gateway] No se pudo escribir la auditoría: {exc}", "ERROR")

    def _policy_file_signature(self) -> Optional[Tuple[int, int, int]]:
        try:
            st = self.layout.policy_path.stat()
        except OSError:
            return None
        return (st.st_mtime_ns, st.st_size, st.st_ino)

    def _persist_instances(self) -> None:
        with self._persist_lock:
            self.instances_file.save(self.engine.snapshot())

    def _sink_for(self, tenant: str) -> Optional[Dict[str, Any]]:
        """Descriptor del sink: config ``alerts.sinks`` tiene prioridad sobre la política"""
        tenant_obj = self.store.tenants.get(tenant)
        if tenant_obj is None:
            return None
        override = (self.config.get("alerts.sinks") or {}).get(tenant)
        return dict(override or tenant_obj.alert_sink)
