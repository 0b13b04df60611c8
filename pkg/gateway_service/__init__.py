"""
Gateway Service - Punto de aplicación de políticas TRBAC
========================================================

- gateway: GatewayService.handle_request, independiente del transporte
- gateway_api: rutas Flask /v1
- server_gateway: proceso del servidor
"""

from .gateway import GatewayService, RequestEnvelope, ResponseEnvelope
from .server_gateway import create_app

__all__ = ['GatewayService', 'RequestEnvelope', 'ResponseEnvelope', 'create_app']
