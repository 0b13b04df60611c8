#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Utilidades compartidas
======================

Tiempo en UTC, directorios y escritura atómica de JSON.
"""

import json
import os
import tempfile
import threading
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Callable, Optional, Union

Clock = Callable[[], datetime]

# =============================================================================
# UTILIDADES DE TIEMPO
# =============================================================================


def utc_now() -> datetime:
    """Fecha y hora actual en UTC (con zona)"""
    return datetime.now(timezone.utc)


def to_iso(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat()


def parse_iso(text: str) -> datetime:
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt


def parse_duration(text: str) -> timedelta:
    """Convierte '90', '30s', '15m', '12h' o '7d' en timedelta"""
    text = text.strip().lower()
    units = {"s": "seconds", "m": "minutes", "h": "hours", "d": "days"}
    if text and text[-1] in units:
        return timedelta(**{units[text[-1]]: float(text[:-1])})
    return timedelta(seconds=float(text))


class ManualClock:
    """Reloj controlable para simulaciones y pruebas"""

    def __init__(self, start: Optional[datetime] = None):
        self._now = start or datetime(2024, 1, 1, tzinfo=timezone.utc)
        self._lock = threading.Lock()

    def __call__(self) -> datetime:
        with self._lock:
            return self._now

    def advance(self, **kwargs) -> datetime:
        with self._lock:
            self._now += timedelta(**kwargs)
            return self._now


# =============================================================================
# UTILIDADES DE ARCHIVOS
# =============================================================================


def ensure_directory(path: Union[str, Path]) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def canonical_json(data: Any) -> str:
    """JSON con claves ordenadas: estable para fixtures y diffs"""
    return json.dumps(data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def atomic_write_text(text: str, file_path: Union[str, Path]) -> None:
    """Escribe a un temporal del mismo directorio y lo renombra encima.

    Un lector ve el documento viejo o el nuevo completo, nunca uno a medias.
    Si algo falla antes del rename el archivo original queda intacto.
    """
    file_path = Path(file_path)
    ensure_directory(file_path.parent)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{file_path.name}.", suffix=".tmp", dir=str(file_path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp_name, file_path)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def atomic_write_json(data: Any, file_path: Union[str, Path]) -> None:
    atomic_write_text(canonical_json(data), file_path)

