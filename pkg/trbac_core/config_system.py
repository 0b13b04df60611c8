#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Sistema de Configuración Centralizada
=====================================

Configuración del gateway por claves con punto (``session.ttl_minutes``).
Orden de precedencia: valores por defecto → archivo (``config.yaml``,
``config.yml`` o ``config.json``) → variables de entorno → cambios en runtime.
"""

import ipaddress
import json
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import yaml

from .logs import LogFn, default_logger


class ConfigSource(Enum):
    """Fuentes de configuración"""
    FILE = "file"
    ENV = "env"
    DEFAULT = "default"
    RUNTIME = "runtime"


@dataclass
class ConfigValue:
    """Valor de configuración con metadatos"""
    value: Any
    source: ConfigSource
    last_updated: float
    description: str = ""
    validation_rules: Optional[Dict[str, Any]] = None


# clave -> (valor, descripción, reglas)
_DEFAULTS: Dict[str, tuple] = {
    # Servidor
    "server.host": ("127.0.0.1", "Host del gateway", {"type": str}),
    "server.port": (8085, "Puerto del gateway", {"type": int, "min": 1, "max": 65535}),
    "server.debug": (False, "Modo debug de Flask", {"type": bool}),
    # Almacenamiento
    "storage.data_dir": ("data", "Directorio de policy.json, credentials.json, logs...", {"type": str}),
    # Sesiones y registro
    "session.ttl_minutes": (30, "Vida de una sesión (min)", {"type": int, "min": 1}),
    "registration.ttl_minutes": (10, "Vida de un registro pendiente (min)", {"type": int, "min": 1}),
    # Credenciales
    "auth.hash_iterations": (100_000, "Iteraciones PBKDF2-SHA256", {"type": int, "min": 1}),
    "auth.min_password_length": (8, "Longitud mínima de contraseña", {"type": int, "min": 1}),
    # Ubicación
    "location.mode": ("transport", "Origen de la ubicación", {"choices": ["transport", "declared"]}),
    "location.zone_map": ({}, "CIDR -> LocationId", {"type": dict}),
    "location.default": ("unknown", "Ubicación si ninguna zona coincide", {"type": str}),
    "location.enforce_at_login": (False, "Verificar ubicación también en el login", {"type": bool}),
    # Alertas
    "alerts.sinks": ({}, "Tenant -> descriptor de sink", {"type": dict}),
    "alerts.mail.retries": (3, "Reintentos del cliente de correo", {"type": int, "min": 0}),
    "alerts.mail.timeout": (2.0, "Timeout del cliente de correo (s)", {"type": (int, float), "min": 0}),
    # Logging
    "logging.level": ("INFO", "Nivel de logging", {"choices": ["DEBUG", "INFO", "WARNING", "ERROR"]}),
    "logging.max_file_size": (1_000_000, "Tamaño máximo del log rotativo (bytes)", {"type": int, "min": 1024}),
}

# Las claves con dict como valor no se aplanan al leer el archivo
_DICT_KEYS = {key for key, (value, _, _) in _DEFAULTS.items() if isinstance(value, dict)}

_ENV_MAPPINGS = {
    "TRBAC_SERVER_HOST": ("server.host", str),
    "TRBAC_SERVER_PORT": ("server.port", int),
    "TRBAC_DATA_DIR": ("storage.data_dir", str),
    "TRBAC_SESSION_TTL_MINUTES": ("session.ttl_minutes", int),
    "TRBAC_HASH_ITERATIONS": ("auth.hash_iterations", int),
    "TRBAC_LOCATION_MODE": ("location.mode", str),
    "TRBAC_LOGGING_LEVEL": ("logging.level", str),
}


class ConfigManager:
    """Gestor de configuración centralizada"""

    def __init__(
        self,
        config_dir: Union[str, Path, None] = "config",
        overrides: Optional[Dict[str, Any]] = None,
        use_env: bool = True,
        logger: Optional[LogFn] = None,
    ):
        self.config_dir = Path(config_dir) if config_dir is not None else None
        self.logger = logger or default_logger
        self._lock = threading.RLock()
        self._config: Dict[str, ConfigValue] = {}

        self._load_defaults()
        self._load_from_files()
        if use_env:
            self._load_from_env()
        for key, value in (overrides or {}).items():
            self.set(key, value, ConfigSource.RUNTIME)

    def _load_defaults(self):
        now = time.time()
        with self._lock:
            for key, (value, description, rules) in _DEFAULTS.items():
                self._config[key] = ConfigValue(
                    value=dict(value) if isinstance(value, dict) else value,
                    source=ConfigSource.DEFAULT,
                    last_updated=now,
                    description=description,
                    validation_rules=rules,
                )

    def _load_from_files(self):
        """Carga configuración desde archivos"""
        if self.config_dir is None:
            return
        for config_file in (
            self.config_dir / "config.json",
            self.config_dir / "config.yaml",
            self.config_dir / "config.yml",
        ):
            if not config_file.exists():
                continue
            try:
                with open(config_file, "r", encoding="utf-8") as f:
                    if config_file.suffix in (".yaml", ".yml"):
                        data = yaml.safe_load(f) or {}
                    else:
                        data = json.load(f)
                self._update_config_from_dict(data, ConfigSource.FILE)
                self.logger(f"[ConfigManager] Configuración cargada desde: {config_file}")
            except (OSError, ValueError, yaml.YAMLError) as e:
                self.logger(f"[ConfigManager] Error cargando {config_file}: {e}", "ERROR")

    def _load_from_env(self):
        for env_var, (key, cast) in _ENV_MAPPINGS.items():
            raw = os.getenv(env_var)
            if raw is None:
                continue
            try:
                self.set(key, cast(raw), ConfigSource.ENV)
            except ValueError as e:
                self.logger(f"[ConfigManager] Variable {env_var} ignorada: {e}", "WARNING")

    def _update_config_from_dict(self, data: Dict[str, Any], source: ConfigSource):
        """Actualiza configuración desde diccionario anidado"""
        def _flatten(d, parent_key=""):
            items = {}
            for k, v in d.items():
                new_key = f"{parent_key}.{k}" if parent_key else str(k)
                if isinstance(v, dict) and new_key not in _DICT_KEYS:
                    items.update(_flatten(v, new_key))
                else:
                    items[new_key] = v
            return items

        for key, value in _flatten(data).items():
            self.set(key, value, source)

    def get(self, key: str, default: Any = None) -> Any:
        with self._lock:
            if key in self._config:
                return self._config[key].value
            return default

    def set(self, key: str, value: Any, source: ConfigSource = ConfigSource.RUNTIME,
            description: str = "", validation_rules: Optional[Dict[str, Any]] = None):
        """Establece valor de configuración"""
        with self._lock:
            current = self._config.get(key)
            rules = validation_rules or (current.validation_rules if current else None)
            if rules:
                self._validate_value(key, value, rules)
            self._config[key] = ConfigValue(
                value=value,
                source=source,
                last_updated=time.time(),
                description=description or (current.description if current else ""),
                validation_rules=rules,
            )

    @staticmethod
    def _validate_value(key: str, value: Any, rules: Dict[str, Any]):
        if "type" in rules:
            expected = rules["type"]
            # bool es subclase de int: no aceptarlo donde se espera un número
            if isinstance(value, bool) and expected is not bool:
                raise ValueError(f"Configuración '{key}' debe ser de tipo {expected}, recibido bool")
            if not isinstance(value, expected):
                raise ValueError(f"Configuración '{key}' debe ser de tipo {expected}, recibido {type(value)}")
        if "min" in rules and value < rules["min"]:
            raise ValueError(f"Configuración '{key}' debe ser >= {rules['min']}")
        if "max" in rules and value > rules["max"]:
            raise ValueError(f"Configuración '{key}' debe ser <= {rules['max']}")
        if "choices" in rules and value not in rules["choices"]:
            raise ValueError(f"Configuración '{key}' debe ser uno de {rules['choices']}")

    # -------------------------------------------------------------------------
    # Accesos derivados
    # -------------------------------------------------------------------------

    @property
    def data_dir(self) -> Path:
        return Path(self.get("storage.data_dir"))

    def zone_networks(self) -> List[tuple]:
        """Tabla de zonas ordenada de la red más específica a la menos"""
        zones = []
        for cidr, location in (self.get("location.zone_map") or {}).items():
            try:
                zones.append((ipaddress.ip_network(str(cidr), strict=False), str(location)))
            except ValueError:
                self.logger(f"[ConfigManager] CIDR inválido en location.zone_map: {cidr}", "WARNING")
        zones.sort(key=lambda item: item[0].prefixlen, reverse=True)
        return zones
