#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Alertas para los tenants
========================

Cada denegación produce un ``AlertRecord`` dirigido al tenant afectado:

- ``unauthorized-attempt``: fallos sin sesión (registro, login, sesión vencida)
- ``malicious-insider``: usuario autenticado denegado en el paso de autorización

El ``AlertDispatcher`` entrega los registros en un hilo propio, en orden de
llegada, a los sinks configurados del tenant. Un fallo de entrega incrementa
el contador de errores y queda en el log; nunca cambia una decisión.
"""

from __future__ import annotations

import json
import queue
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Union

import httpx

from .errors import ErrorCode, TrbacError
from .logs import LogFn, default_logger
from .utils import Clock, ensure_directory, to_iso, utc_now


class AlertKind(Enum):
    UNAUTHORIZED_ATTEMPT = "unauthorized-attempt"
    MALICIOUS_INSIDER = "malicious-insider"


@dataclass(frozen=True)
class AlertRecord:
    """Alerta para un tenant: quién lo intentó, dónde y por qué se rechazó"""
    tenant: str
    kind: AlertKind
    actor: Dict[str, Any]
    detail: Dict[str, Any]
    timestamp: str
    id: str = field(default_factory=lambda: uuid.uuid4().hex)

    @property
    def reason(self) -> str:
        return str(self.detail.get("reason", ""))

    def with_endpoint(self, endpoint: str) -> "AlertRecord":
        return AlertRecord(
            tenant=self.tenant,
            kind=self.kind,
            actor=dict(self.actor),
            detail={**self.detail, "endpoint": endpoint},
            timestamp=self.timestamp,
            id=self.id,
        )

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["kind"] = self.kind.value
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AlertRecord":
        return cls(
            tenant=data["tenant"],
            kind=AlertKind(data["kind"]),
            actor=dict(data.get("actor", {})),
            detail=dict(data.get("detail", {})),
            timestamp=data["timestamp"],
            id=data.get("id") or uuid.uuid4().hex,
        )


def make_alert(
    tenant: str,
    kind: AlertKind,
    reason: Union[ErrorCode, str],
    endpoint: str,
    clock: Clock = utc_now,
    **actor: Any,
) -> AlertRecord:
    """Construye una alerta; ``actor`` lleva la identidad declarada (nunca contraseñas)"""
    code = reason.value if isinstance(reason, ErrorCode) else reason
    return AlertRecord(
        tenant=tenant,
        kind=kind,
        actor={k: v for k, v in actor.items() if v is not None},
        detail={"reason": code, "endpoint": endpoint},
        timestamp=to_iso(clock()),
    )


def alert_kind_for(code: ErrorCode) -> AlertKind:
    """Una sesión vencida equivale a no estar autenticado"""
    if code == ErrorCode.SESSION_EXPIRED:
        return AlertKind.UNAUTHORIZED_ATTEMPT
    return AlertKind.MALICIOUS_INSIDER


@dataclass
class DeliveryReceipt:
    alert_id: str
    tenant: str
    status: str          # queued | delivered | failed | rejected
    sinks: List[str] = field(default_factory=list)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# =============================================================================
# SINKS
# =============================================================================

class SinkUnavailable(TrbacError):
    def __init__(self, message: str):
        super().__init__(ErrorCode.SINK_UNAVAILABLE, message)


class FileAlertSink:
    """alerts/<tenant>.log, una alerta JSON por línea"""

    def __init__(self, alerts_dir: Union[str, Path]):
        self.alerts_dir = Path(alerts_dir)
        self._lock = threading.Lock()

    def path_for(self, tenant: str) -> Path:
        return self.alerts_dir / f"{tenant}.log"

    def deliver(self, record: AlertRecord) -> None:
        line = json.dumps(record.to_dict(), sort_keys=True, ensure_ascii=False)
        with self._lock:
            try:
                ensure_directory(self.alerts_dir)
                with open(self.path_for(record.tenant), "a", encoding="utf-8") as f:
                    f.write(line + "\n")
            except OSError as exc:
                raise SinkUnavailable(f"No se pudo escribir el log de alertas de {record.tenant}: {exc}") from exc

    def read(self, tenant: str) -> List[AlertRecord]:
        path = self.path_for(tenant)
        if not path.exists():
            return []
        records = []
        with self._lock, open(path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    records.append(AlertRecord.from_dict(json.loads(line)))
                except (ValueError, KeyError):
                    continue
        return records


class MailAlertSink:
    """Cliente saliente hacia una pasarela de correo HTTP, con reintentos.

    Descriptor: ``{"kind": "mail", "url": "...", "to": ["sec@acme.example"]}``
    """

    def __init__(
        self,
        retries: int = 3,
        timeout: float = 2.0,
        backoff: float = 0.2,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        self.retries = retries
        self.timeout = timeout
        self.backoff = backoff
        self.transport = transport

    def deliver(self, record: AlertRecord, descriptor: Mapping[str, Any]) -> None:
        url = descriptor.get("url")
        if not url:
            raise SinkUnavailable(f"Sink de correo sin url para {record.tenant}")
        to = descriptor.get("to") or []
        payload = {
            "to": [to] if isinstance(to, str) else list(to),
            "subject": f"[TRBAC] {record.kind.value} en {record.tenant}",
            "alert": record.to_dict(),
        }
        last_error = ""
        with httpx.Client(timeout=self.timeout, transport=self.transport) as client:
            for attempt in range(self.retries + 1):
                try:
                    res = client.post(url, json=payload)
                    if res.status_code < 300:
                        return
                    last_error = f"http:{res.status_code}"
                except httpx.HTTPError as exc:
                    last_error = str(exc) or exc.__class__.__name__
                if attempt < self.retries:
                    time.sleep(self.backoff * (2 ** attempt))
        raise SinkUnavailable(f"Pasarela de correo no disponible para {record.tenant}: {last_error}")


# =============================================================================
# DESPACHADOR
# =============================================================================

SinkResolver = Callable[[str], Optional[Mapping[str, Any]]]


class AlertDispatcher:
    """Entrega asíncrona y ordenada de alertas.

    ``sink_resolver(tenant)`` devuelve el descriptor del sink del tenant o
    ``None`` si el tenant no existe. El log de alertas del tenant se escribe
    siempre; el correo es adicional cuando el descriptor es ``mail``.
    Con ``asynchronous=False`` la entrega ocurre dentro de ``dispatch_alert``.
    """

    def __init__(
        self,
        alerts_dir: Union[str, Path],
        sink_resolver: SinkResolver,
        mail_sink: Optional[MailAlertSink] = None,
        asynchronous: bool = True,
        logger: Optional[LogFn] = None,
    ):
        self.file_sink = FileAlertSink(alerts_dir)
        self.mail_sink = mail_sink or MailAlertSink()
        self.sink_resolver = sink_resolver
        self.asynchronous = asynchronous
        self.logger = logger or default_logger

        self._queue: "queue.Queue[Optional[tuple]]" = queue.Queue()
        self._lock = threading.Lock()
        self._running = False
        self._thread: Optional[threading.Thread] = None
        self._stats = {"dispatched": 0, "delivered": 0, "errors": 0, "rejected": 0}

    def start(self):
        """Inicia el hilo de entrega"""
        if self._running or not self.asynchronous:
            return
        self._running = True
        self._thread = threading.Thread(target=self._delivery_loop, daemon=True, name="alert-dispatcher")
        self._thread.start()
        self.logger("[AlertDispatcher] Despachador iniciado")

    def stop(self, timeout: float = 5.0):
        """Entrega lo pendiente y detiene el hilo"""
        if not self._running:
            return
        self._queue.put(None)
        if self._thread and self._thread.is_alive():
            self._thread.join(timeout=timeout)
        self._running = False
        self.logger("[AlertDispatcher] Despachador detenido")

    def dispatch_alert(self, record: AlertRecord) -> DeliveryReceipt:
        descriptor = self.sink_resolver(record.tenant)
        if descriptor is None:
            with self._lock:
                self._stats["rejected"] += 1
            self.logger(f"[AlertDispatcher] Alerta descartada, tenant inexistente: {record.tenant}", "WARNING")
            return DeliveryReceipt(record.id, record.tenant, "rejected", error=ErrorCode.UNKNOWN_TENANT.value)

        with self._lock:
            self._stats["dispatched"] += 1
        sinks = self._sink_names(descriptor)
        if self.asynchronous and self._running:
            self._queue.put((record, dict(descriptor)))
            return DeliveryReceipt(record.id, record.tenant, "queued", sinks)

        error = self._deliver(record, descriptor)
        return DeliveryReceipt(record.id, record.tenant, "failed" if error else "delivered", sinks, error)

    def flush(self, timeout: float = 5.0) -> bool:
        """Espera a que la cola se vacíe; False si vence el timeout"""
        if not self._running:
            return True
        deadline = time.monotonic() + timeout
        while self._queue.unfinished_tasks:
            if time.monotonic() >= deadline:
                return False
            time.sleep(0.01)
        return True

    def read_alerts(self, tenant: str) -> List[AlertRecord]:
        return self.file_sink.read(tenant)

    @property
    def error_count(self) -> int:
        with self._lock:
            return self._stats["errors"]

    def get_stats(self) -> Dict[str, int]:
        with self._lock:
            return dict(self._stats)

    # -------------------------------------------------------------------------

    @staticmethod
    def _sink_names(descriptor: Mapping[str, Any]) -> List[str]:
        names = ["log"]
        if descriptor.get("kind") == "mail":
            names.append("mail")
        return names

    def _deliver(self, record: AlertRecord, descriptor: Mapping[str, Any]) -> Optional[str]:
        errors = []
        try:
            self.file_sink.deliver(record)
        except SinkUnavailable as exc:
            errors.append(exc.message)
        if descriptor.get("kind") == "mail":
            try:
                self.mail_sink.deliver(record, descriptor)
            except SinkUnavailable as exc:
                errors.append(exc.message)
        with self._lock:
            if errors:
                self._stats["errors"] += 1
            else:
                self._stats["delivered"] += 1
        if errors:
            message = "; ".join(errors)
            self.logger(f"[AlertDispatcher] {ErrorCode.SINK_UNAVAILABLE.value}: {message}", "ERROR")
            return message
        return None

    def _delivery_loop(self):
        while True:
            item = self._queue.get()
            try:
                if item is None:
                    return
                record, descriptor = item
                self._deliver(record, descriptor)
            except Exception as e:
                with self._lock:
                    self._stats["errors"] += 1
                self.logger(f"[AlertDispatcher] Error en loop: {e}", "ERROR")
            finally:
                self._queue.task_done()
