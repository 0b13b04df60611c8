#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Gateway API Endpoints
=====================

Registra en Flask las rutas /v1 del ``GatewayService``. Cada vista arma un
``RequestEnvelope`` (cuerpo JSON, token Bearer, dirección remota) y
devuelve el ``ResponseEnvelope`` como JSON.
"""

from typing import Optional

from flask import jsonify, request

from .gateway import GatewayService, RequestEnvelope


def _bearer_token() -> Optional[str]:
    header = request.headers.get("Authorization", "")
    scheme, _, token = header.partition(" ")
    if scheme.lower() != "bearer" or not token.strip():
        return None
    return token.strip()


def register_gateway_routes(app, service: GatewayService, logger):
    """
    Registra todos los endpoints del gateway.

    Args:
        app: Instancia de Flask
        service: GatewayService ya construido
        logger: Logger para mensajes
    """

    def handle():
        body = request.get_json(silent=True) if request.method == "POST" else {}
        envelope = RequestEnvelope(
            method=request.method,
            endpoint=request.path,
            body=body,
            session_token=_bearer_token(),
            remote_addr=request.remote_addr,
        )
        response = service.handle_request(envelope)
        if response.status >= 500:
            logger(f"[GatewayAPI] {request.method} {request.path} -> {response.status}", "ERROR")
        return jsonify(response.body), response.status

    methods_by_path = {}
    for method, path, _ in service.ROUTES:
        methods_by_path.setdefault(path, []).append(method)
    for path, methods in methods_by_path.items():
        endpoint = "gateway_" + path.strip("/").replace("/", "_")
        app.add_url_rule(path, endpoint, handle, methods=methods)

    @app.errorhandler(404)
    def not_found(_error):
        return jsonify({"error": "not-found", "reason": f"Endpoint desconocido: {request.path}"}), 404

    @app.errorhandler(405)
    def method_not_allowed(_error):
        return jsonify({"error": "malformed-request", "reason": f"Método no soportado: {request.method}"}), 405

    logger(f"[GatewayAPI] {len(service.ROUTES)} rutas registradas")
