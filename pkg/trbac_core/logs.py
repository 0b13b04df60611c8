#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Sistema de logging del gateway
==============================

``GatewayLogger`` replica en consola y escribe a ``logs/gateway.log`` con
rotación por tamaño.
Los componentes reciben un callable ``logger(msg, level="INFO")``; si no se
les pasa ninguno usan ``default_logger`` que delega en ``logging``.
"""

from __future__ import annotations

import logging
from datetime import datetime
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Callable, Optional

LogFn = Callable[..., None]

_LEVELS = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARN": logging.WARNING,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
}


def default_logger(message: str, level: str = "INFO") -> None:
    """Logger por defecto para componentes sin logger inyectado"""
    logging.getLogger("trbac").log(_LEVELS.get(level.upper().strip(), logging.INFO), message)


class GatewayLogger:
    """Consola + archivo rotativo para el proceso del gateway"""

    def __init__(
        self,
        logs_dir: Optional[Path] = None,
        level: str = "INFO",
        echo: bool = True,
        max_bytes: int = 1_000_000,
        backup_count: int = 5,
    ):
        self._echo = echo
        self._min_level = _LEVELS.get(level.upper(), logging.INFO)
        self._py_logger = logging.getLogger("trbac.gateway")
        self._py_logger.setLevel(self._min_level)
        if logs_dir is not None:
            try:
                logs_dir = Path(logs_dir)
                logs_dir.mkdir(parents=True, exist_ok=True)
                log_path = str((logs_dir / "gateway.log").resolve())
                # Evitar duplicados si se crean varios loggers en el mismo proceso
                if not any(
                    isinstance(h, RotatingFileHandler) and getattr(h, "baseFilename", "") == log_path
                    for h in self._py_logger.handlers
                ):
                    handler = RotatingFileHandler(
                        log_path, maxBytes=max_bytes, backupCount=backup_count, encoding="utf-8"
                    )
                    handler.setFormatter(logging.Formatter("%(message)s"))
                    self._py_logger.addHandler(handler)
            except OSError as exc:
                self._echo_line(f"[GatewayLogger] No se pudo abrir el log en disco: {exc}")

    def log(self, message: str, level: str = "INFO") -> None:
        """Registra un mensaje con timestamp"""
        lvl = _LEVELS.get(level.upper().strip(), logging.INFO)
        if lvl < self._min_level:
            return
        timestamp = datetime.now().strftime("%H:%M:%S")
        entry = f"[{timestamp}] [{level.upper()}] {message}"

        self._echo_line(entry)
        self._py_logger.log(lvl, entry)

    __call__ = log

    def _echo_line(self, entry: str) -> None:
        if self._echo:
            print(entry, flush=True)


def short_token(token: Optional[str]) -> str:
    """Prefijo de 8 caracteres para poder citar un token en los logs"""
    if not token:
        return "-"
    return f"{token[:8]}…"
