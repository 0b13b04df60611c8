#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
CLI de Administración TRBAC
===========================

Gestión de la política en disco, arranque del gateway, auditoría de mínimo
privilegio y pruebas diferenciales.

Uso:
    python -m trbac_tools policy validate fixtures/sample.json
    python -m trbac_tools tenant add AcmeCo "Acme Corp"
    python -m trbac_tools audit least-privilege --window 7d
    python -m trbac_tools simulate --seed 7 --n 1000

Códigos de salida: 0 éxito, 1 error de dominio o divergencias, 2 uso.
"""

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, List, Optional, TextIO

from trbac_core.authn import Authenticator, credential_table_at
from trbac_core.authz_engine import audit_least_privilege, decisions_from_audit
from trbac_core.config_system import ConfigManager
from trbac_core.errors import TrbacError, ValidationFailed
from trbac_core.logs import default_logger
from trbac_core.persistence import AuditLog, StorageLayout, load_policy, policy_document, save_policy
from trbac_core.policy_model import (
    DirectoryEntry,
    Permission,
    PolicyStore,
    Role,
    SodConstraint,
    SodMode,
    TaskDef,
    Tenant,
    User,
)
from trbac_core.utils import canonical_json, parse_duration

from .differential import run_differential, run_many

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_USAGE = 2


def _permission(text: str) -> Permission:
    return Permission.parse(text)


def _duration(text: str):
    return parse_duration(text)


# =============================================================================
# PARSER
# =============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trbac", description="Administración del gateway TRBAC")
    parser.add_argument("--config-dir", default="config", help="Carpeta con config.yaml")
    parser.add_argument("--policy", default=None, help="Ruta de policy.json (por defecto <data_dir>/policy.json)")
    sub = parser.add_subparsers(dest="command", required=True)

    # policy ...
    policy = sub.add_parser("policy", help="Editar y validar la política").add_subparsers(dest="action", required=True)
    p = policy.add_parser("validate", help="Validar un archivo de política")
    p.add_argument("path", nargs="?", default=None)
    p.set_defaults(handler=cmd_policy_validate)
    p = policy.add_parser("show", help="Imprimir la política canónica")
    p.set_defaults(handler=cmd_policy_show)
    p = policy.add_parser("add-role")
    p.add_argument("tenant")
    p.add_argument("role")
    p.add_argument("--location", action="append", default=[], help="Ubicación permitida (repetible)")
    p.set_defaults(handler=cmd_add_role)
    p = policy.add_parser("add-task")
    p.add_argument("tenant")
    p.add_argument("task")
    p.add_argument("--limit", type=int, required=True)
    p.add_argument("--perm", type=_permission, action="append", required=True, help="operacion:objeto (repetible)")
    p.add_argument("--process", default=None)
    p.set_defaults(handler=cmd_add_task)
    p = policy.add_parser("grant-task")
    p.add_argument("tenant")
    p.add_argument("role")
    p.add_argument("task")
    p.set_defaults(handler=cmd_grant_task)
    p = policy.add_parser("set-hierarchy", help="Declarar SENIOR > JUNIOR")
    p.add_argument("tenant")
    p.add_argument("senior")
    p.add_argument("junior")
    p.set_defaults(handler=cmd_set_hierarchy)
    p = policy.add_parser("add-sod")
    p.add_argument("tenant")
    p.add_argument("id")
    p.add_argument("--process", required=True)
    p.add_argument("--tasks", nargs="+", required=True)
    p.add_argument("--mode", choices=[m.value for m in SodMode], default=SodMode.STATIC.value)
    p.set_defaults(handler=cmd_add_sod)
    p = policy.add_parser("add-location")
    p.add_argument("location")
    p.set_defaults(handler=cmd_add_location)

    # tenant ...
    tenant = sub.add_parser("tenant", help="Tenants y directorio").add_subparsers(dest="action", required=True)
    p = tenant.add_parser("add")
    p.add_argument("tenant")
    p.add_argument("name")
    p.add_argument("--mail-url", default=None, help="Endpoint HTTP del sink de correo")
    p.add_argument("--mail-to", action="append", default=[], help="Destinatario (repetible)")
    p.set_defaults(handler=cmd_tenant_add)
    p = tenant.add_parser("admin-role")
    p.add_argument("tenant")
    p.add_argument("role")
    p.set_defaults(handler=cmd_tenant_admin_role)
    directory = tenant.add_parser("directory").add_subparsers(dest="directory_action", required=True)
    p = directory.add_parser("add")
    p.add_argument("tenant")
    p.add_argument("employee_id")
    p.add_argument("name")
    p.add_argument("--designation", default="")
    p.set_defaults(handler=cmd_directory_add)

    # user ...
    user = sub.add_parser("user", help="Usuarios provisionados").add_subparsers(dest="action", required=True)
    p = user.add_parser("add")
    p.add_argument("tenant")
    p.add_argument("user")
    p.add_argument("employee_id")
    p.add_argument("--role", action="append", default=[])
    p.set_defaults(handler=cmd_user_add)
    p = user.add_parser("assign-role")
    p.add_argument("tenant")
    p.add_argument("user")
    p.add_argument("role")
    p.set_defaults(handler=cmd_user_assign_role)
    for name, active in (("disable", False), ("enable", True)):
        p = user.add_parser(name, help=f"{'Reactivar' if active else 'Desactivar'} la credencial")
        p.add_argument("tenant")
        p.add_argument("user")
        p.set_defaults(handler=cmd_user_set_active, active=active)

    # serve
    p = sub.add_parser("serve", help="Arrancar el gateway HTTP")
    p.set_defaults(handler=cmd_serve)

    # audit least-privilege
    audit = sub.add_parser("audit").add_subparsers(dest="action", required=True)
    p = audit.add_parser("least-privilege", help="Permisos alcanzables sin uso")
    p.add_argument("--window", type=_duration, required=True, help="p.ej. 30s, 15m, 12h, 7d")
    p.add_argument("--tenant", default=None)
    p.set_defaults(handler=cmd_least_privilege)

    # simulate
    p = sub.add_parser("simulate", help="Pruebas diferenciales motor vs oráculo")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seeds", type=int, default=1, help="Semillas consecutivas desde --seed")
    p.add_argument("--episode-length", type=int, default=None,
                   help="Partir la secuencia en episodios independientes (por defecto una sola)")
    p.add_argument("--workers", type=int, default=4)
    p.set_defaults(handler=cmd_simulate)
    return parser


# =============================================================================
# CONTEXTO
# =============================================================================

class CliContext:
    def __init__(self, args: argparse.Namespace, out: TextIO, err: TextIO):
        self.args = args
        self.out = out
        self.err = err
        self.config = ConfigManager(args.config_dir, logger=self._quiet)
        self.layout = StorageLayout(self.config.data_dir)
        self.policy_path = Path(args.policy) if args.policy else self.layout.policy_path

    @staticmethod
    def _quiet(message: str, level: str = "INFO") -> None:
        if level in ("WARNING", "ERROR"):
            default_logger(message, level)

    def print(self, text: str = "") -> None:
        self.out.write(text + "\n")

    def load_or_empty(self) -> PolicyStore:
        if not self.policy_path.exists():
            return PolicyStore()
        return load_policy(self.policy_path)

    def mutate(self, change: Callable[[PolicyStore], PolicyStore], summary: str) -> int:
        store = change(self.load_or_empty())
        save_policy(store, self.policy_path)
        self.print(summary)
        return EXIT_OK


# =============================================================================
# COMANDOS
# =============================================================================

def cmd_policy_validate(ctx: CliContext) -> int:
    path = Path(ctx.args.path) if ctx.args.path else ctx.policy_path
    try:
        load_policy(path)
    except ValidationFailed as exc:
        for diagnostic in exc.diagnostics:
            ctx.print(str(diagnostic))
        return EXIT_DOMAIN
    ctx.print("OK")
    return EXIT_OK


def cmd_policy_show(ctx: CliContext) -> int:
    ctx.out.write(canonical_json(policy_document(load_policy(ctx.policy_path))))
    return EXIT_OK


def cmd_add_role(ctx: CliContext) -> int:
    a = ctx.args
    role = Role(id=a.role, tenant=a.tenant, allowed_locations=frozenset(a.location))

    def change(store: PolicyStore) -> PolicyStore:
        store.tenant(a.tenant)
        existing = store.roles.get((a.tenant, a.role))
        if existing is not None:
            return store.with_role(replace(existing, allowed_locations=role.allowed_locations))
        return store.with_role(role)

    return ctx.mutate(change, f"Rol {a.tenant}/{a.role} guardado")


def cmd_add_task(ctx: CliContext) -> int:
    a = ctx.args
    task = TaskDef(id=a.task, tenant=a.tenant, usage_limit=a.limit, permissions=frozenset(a.perm), process=a.process)
    return ctx.mutate(lambda s: s.with_task(task), f"Tarea {a.tenant}/{a.task} guardada")


def cmd_grant_task(ctx: CliContext) -> int:
    a = ctx.args

    def change(store: PolicyStore) -> PolicyStore:
        store.task(a.tenant, a.task)
        return store.grant_task(a.tenant, a.role, a.task)

    return ctx.mutate(change, f"{a.tenant}/{a.role} otorga {a.task}")


def cmd_set_hierarchy(ctx: CliContext) -> int:
    a = ctx.args

    def change(store: PolicyStore) -> PolicyStore:
        store.role(a.tenant, a.junior)
        return store.add_junior(a.tenant, a.senior, a.junior)

    return ctx.mutate(change, f"{a.tenant}: {a.senior} > {a.junior}")


def cmd_add_sod(ctx: CliContext) -> int:
    a = ctx.args
    constraint = SodConstraint(
        id=a.id, tenant=a.tenant, process=a.process,
        conflicting_tasks=frozenset(a.tasks), mode=SodMode(a.mode),
    )
    return ctx.mutate(lambda s: s.with_sod(constraint), f"SoD {a.tenant}/{a.id} ({a.mode}) guardada")


def cmd_add_location(ctx: CliContext) -> int:
    return ctx.mutate(lambda s: s.with_location(ctx.args.location), f"Ubicación {ctx.args.location} guardada")


def cmd_tenant_add(ctx: CliContext) -> int:
    a = ctx.args
    sink = {"kind": "log"}
    if a.mail_url:
        sink = {"kind": "mail", "url": a.mail_url, "to": a.mail_to}

    def change(store: PolicyStore) -> PolicyStore:
        current = store.tenants.get(a.tenant)
        if current is None:
            return store.with_tenant(Tenant(id=a.tenant, name=a.name, alert_sink=sink))
        return store.with_tenant(replace(current, name=a.name, alert_sink=sink))

    return ctx.mutate(change, f"Tenant {a.tenant} guardado")


def cmd_tenant_admin_role(ctx: CliContext) -> int:
    a = ctx.args

    def change(store: PolicyStore) -> PolicyStore:
        current = store.tenant(a.tenant)
        store.role(a.tenant, a.role)
        return store.with_tenant(replace(current, admin_roles=current.admin_roles | {a.role}))

    return ctx.mutate(change, f"{a.role} administra {a.tenant}")


def cmd_directory_add(ctx: CliContext) -> int:
    a = ctx.args
    entry = DirectoryEntry(employee_id=a.employee_id, name=a.name, designation=a.designation)
    return ctx.mutate(lambda s: s.with_directory_entry(a.tenant, entry), f"Directorio {a.tenant}: {a.employee_id}")


def cmd_user_add(ctx: CliContext) -> int:
    a = ctx.args
    user = User(id=a.user, tenant=a.tenant, employee_id=a.employee_id, assigned_roles=frozenset(a.role))

    def change(store: PolicyStore) -> PolicyStore:
        store.tenant(a.tenant)
        return store.with_user(user)

    return ctx.mutate(change, f"Usuario {a.tenant}/{a.user} guardado")


def cmd_user_assign_role(ctx: CliContext) -> int:
    a = ctx.args

    def change(store: PolicyStore) -> PolicyStore:
        store.role(a.tenant, a.role)
        return store.assign_role(a.tenant, a.user, a.role)

    return ctx.mutate(change, f"{a.tenant}/{a.user} recibe {a.role}")


def cmd_user_set_active(ctx: CliContext) -> int:
    a = ctx.args
    store = load_policy(ctx.policy_path)
    authenticator = Authenticator(
        store, credential_table_at(ctx.layout.credentials_path), logger=CliContext._quiet,
    )
    authenticator.set_active(a.tenant, a.user, a.active)
    ctx.print(f"Credencial {a.tenant}/{a.user} {'activa' if a.active else 'desactivada'}")
    return EXIT_OK


def cmd_serve(ctx: CliContext) -> int:
    from gateway_service.server_gateway import serve

    serve(ctx.config)
    return EXIT_OK


def cmd_least_privilege(ctx: CliContext) -> int:
    a = ctx.args
    store = load_policy(ctx.policy_path)
    records = AuditLog(ctx.layout.audit_path, logger=CliContext._quiet).read()
    report = audit_least_privilege(store, decisions_from_audit(records), a.window)
    flagged = {key: perms for key, perms in report.flagged().items() if a.tenant in (None, key[0])}
    if not flagged:
        ctx.print("Sin permisos sin uso en la ventana")
    for (tenant, user), perms in sorted(flagged.items()):
        ctx.print(f"{tenant}/{user}: {', '.join(sorted(str(p) for p in perms))}")
    return EXIT_OK


def cmd_simulate(ctx: CliContext) -> int:
    a = ctx.args
    if a.n < 0 or a.seeds < 1 or (a.episode_length is not None and a.episode_length < 1):
        ctx.err.write("simulate: --n >= 0, --seeds >= 1, --episode-length >= 1\n")
        return EXIT_USAGE
    seeds = range(a.seed, a.seed + a.seeds)
    if a.seeds == 1:
        reports = [run_differential(a.seed, a.n, episode_length=a.episode_length)]
    else:
        reports = run_many(seeds, a.n, workers=a.workers, episode_length=a.episode_length)
    total = sum(len(r.divergences) for r in reports)
    for report in reports:
        ctx.print(f"seed={report.seed} operaciones={report.operations} divergencias={len(report.divergences)}")
        for divergence in report.divergences:
            ctx.print(json.dumps(divergence.to_dict(), sort_keys=True))
    ctx.print(f"Total: {total} divergencias en {len(reports)} semillas")
    return EXIT_OK if total == 0 else EXIT_DOMAIN


# =============================================================================
# ENTRADA
# =============================================================================

def cli_dispatch(argv: Optional[List[str]] = None, out: Optional[TextIO] = None,
                 err: Optional[TextIO] = None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    saved = sys.stderr
    sys.stderr = err
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    finally:
        sys.stderr = saved

    ctx = CliContext(args, out, err)
    try:
        return args.handler(ctx)
    except ValidationFailed as exc:
        for diagnostic in exc.diagnostics:
            err.write(f"{diagnostic}\n")
        return EXIT_DOMAIN
    except TrbacError as exc:
        err.write(f"{exc.code.value}: {exc.message}\n")
        return EXIT_DOMAIN


def main() -> None:
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
