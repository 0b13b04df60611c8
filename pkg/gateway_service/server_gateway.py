#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Servidor del Gateway TRBAC
==========================

Proceso HTTP del gateway. Configuración en ``config/config.yaml`` (o la
carpeta indicada con ``TRBAC_CONFIG_DIR``) más variables ``TRBAC_*``.

Uso:
    python -m gateway_service.server_gateway
"""

import logging
import os
from typing import Optional

from flask import Flask

try:
    from werkzeug.serving import WSGIRequestHandler as _WerkReq
except Exception:
    _WerkReq = None  # type: ignore

from trbac_core.config_system import ConfigManager
from trbac_core.logs import GatewayLogger
from trbac_core.persistence import StorageLayout

from .gateway import GatewayService
from .gateway_api import register_gateway_routes


def create_app(service: GatewayService, logger=None) -> Flask:
    """Aplicación Flask con las rutas /v1 del servicio"""
    app = Flask(__name__)
    register_gateway_routes(app, service, logger or service.logger)
    return app


def _silence_werkzeug(app: Flask) -> None:
    try:
        wl = logging.getLogger("werkzeug")
        wl.setLevel(logging.ERROR)
        wl.disabled = True
        app.logger.disabled = True
    except Exception:
        pass


def serve(config: ConfigManager, logger: Optional[GatewayLogger] = None) -> None:
    """Construye el servicio y atiende peticiones hasta Ctrl+C"""
    logger = logger or GatewayLogger(
        logs_dir=StorageLayout(config.data_dir).logs_dir,
        level=config.get("logging.level"),
        max_bytes=config.get("logging.max_file_size"),
    )
    service = GatewayService(config, logger=logger)
    service.start()
    app = create_app(service, logger)
    _silence_werkzeug(app)

    host = config.get("server.host")
    port = config.get("server.port")
    logger.log(f"Gateway escuchando en {host}:{port}")
    logger.log(f"Directorio de datos: {config.data_dir}")

    # Handler silencioso para no imprimir 'POST ... 200' en consola
    QuietHandler = None
    if _WerkReq is not None:
        class QuietHandler(_WerkReq):  # type: ignore
            def log(self, type, message, *args):
                pass

            def log_request(self, *args, **kwargs):
                pass

    try:
        app.run(
            host=host,
            port=port,
            debug=config.get("server.debug"),
            use_reloader=False,
            threaded=True,
            request_handler=QuietHandler if QuietHandler is not None else None,
        )
    finally:
        service.stop()


def main():
    config = ConfigManager(os.environ.get("TRBAC_CONFIG_DIR", "config"))
    serve(config)


if __name__ == "__main__":
    main()
