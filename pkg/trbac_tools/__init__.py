"""
TRBAC Tools - Administración y verificación
===========================================

- cli: administración de la política, serve, auditoría y simulate
- generator: políticas aleatorias deterministas por semilla
- oracle: matriz de acceso por fuerza bruta, sin código compartido con el motor
- differential: motor vs oráculo con reducción de la secuencia divergente
"""

from .cli import cli_dispatch
from .differential import DivergenceReport, run_differential, run_many
from .generator import PolicyDims, generate_policy
from .oracle import OracleMatrix, OracleModel, OracleRequest, oracle_decide

__all__ = [
    'cli_dispatch',
    'DivergenceReport',
    'run_differential',
    'run_many',
    'PolicyDims',
    'generate_policy',
    'OracleMatrix',
    'OracleModel',
    'OracleRequest',
    'oracle_decide',
]
