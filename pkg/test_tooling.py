#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pruebas - Herramientas
======================

Generador de políticas, oráculo de fuerza bruta, pruebas diferenciales
motor vs oráculo (incluido un motor con un error de límite inyectado) y la
CLI de administración.
"""

import io
import json
import sys
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from conftest import SAMPLE_POLICY, quiet  # noqa: E402
from trbac_core.authz_engine import AuthzEngine  # noqa: E402
from trbac_core.errors import ErrorCode, ToolingError  # noqa: E402
from trbac_core.persistence import load_policy  # noqa: E402
from trbac_core.policy_model import Permission, resolve_effective_roles, validate_policy  # noqa: E402
from trbac_tools import cli_dispatch  # noqa: E402
from trbac_tools.differential import run_differential, run_many  # noqa: E402
from trbac_tools.generator import GENERATED_TENANT, PolicyDims, generate_policy  # noqa: E402
from trbac_tools.oracle import (  # noqa: E402
    OFF_MAP_LOCATION,
    OracleMatrix,
    OracleModel,
    OracleRequest,
    oracle_decide,
)


class OffByOneEngine(AuthzEngine):
    """Desactiva un uso tarde: permite usage_limit + 1 accesos"""

    def _is_exhausted(self, usage_count: int, usage_limit: int) -> bool:
        return usage_count > usage_limit


class LateExhaustionEngine(AuthzEngine):
    """Desactiva en el primer uso una vez que existen más de 40 instancias"""

    def _is_exhausted(self, usage_count: int, usage_limit: int) -> bool:
        return usage_count >= usage_limit or len(self._instances) > 40


# =============================================================================
# GENERADOR
# =============================================================================

def test_generator_is_deterministic():
    assert generate_policy(42) == generate_policy(42)
    assert generate_policy(42).to_dict() == generate_policy(42).to_dict()


@pytest.mark.parametrize("seed", range(100))
def test_generated_policies_are_valid(seed):
    assert validate_policy(generate_policy(seed)) == []


def test_generator_with_no_users():
    store = generate_policy(3, PolicyDims(users=0))
    assert store.users == {}
    assert validate_policy(store) == []


@pytest.mark.parametrize("dims", [
    PolicyDims(users=6),
    PolicyDims(roles=-1),
    PolicyDims(tasks=7),
    PolicyDims(sod=True),
])
def test_dims_out_of_range(dims):
    with pytest.raises(ToolingError) as info:
        generate_policy(0, dims)
    assert info.value.code == ErrorCode.DIMS_OUT_OF_RANGE


# =============================================================================
# ORÁCULO
# =============================================================================

@pytest.fixture
def sample_matrix(store):
    return OracleMatrix.build(store, "AcmeCo")


def test_oracle_matrix_effective_roles_agree(store, sample_matrix):
    for i, user in enumerate(sample_matrix.users):
        roles = {r for j, r in enumerate(sample_matrix.roles) if sample_matrix.effective[i, j]}
        assert roles == resolve_effective_roles(store, "AcmeCo", user)


@pytest.mark.parametrize("seed", range(20))
def test_oracle_effective_roles_on_generated_policies(seed):
    store = generate_policy(seed, PolicyDims(users=5, roles=4, tasks=6, locations=3, sod=2))
    matrix = OracleMatrix.build(store, GENERATED_TENANT)
    for i, user in enumerate(matrix.users):
        roles = {r for j, r in enumerate(matrix.roles) if matrix.effective[i, j]}
        assert roles == resolve_effective_roles(store, GENERATED_TENANT, user)


def test_oracle_access_decisions(sample_matrix):
    read = Permission("read", "db1")
    configure = Permission("configure", "vm1")

    def access(user, task, perm, location="HQ", **kw):
        kw.setdefault("state", "active")
        kw.setdefault("holder", user)
        return oracle_decide(sample_matrix, OracleRequest(
            kind="access", user=user, task=task, perm=perm, location=location, **kw))

    assert access("ada", "T1", read) == ("permit", "ok")
    assert access("bob", "T2", configure, "Remote") == ("deny", "location-forbidden")
    assert access("bob", "T2", configure, OFF_MAP_LOCATION) == ("deny", "location-forbidden")
    assert access("bob", "T2", read) == ("deny", "no-role-task-mapping")
    assert access("ada", "T1", read, holder="carol") == ("deny", "not-holder")
    assert access("ada", "T1", read, state="deactivated") == ("deny", "usage-exhausted")
    assert access("ada", "T1", read, expired=True, holder="carol") == ("deny", "session-expired")
    assert access("ada", "T1", read, sod_blocked=True) == ("deny", "sod-violation")


def test_oracle_access_table_is_total(sample_matrix):
    table = sample_matrix.access_table()
    m = sample_matrix
    assert len(table) == len(m.users) * len(m.tasks) * 3 * 2 * len(m.perms) * len(m.locations) * 2
    assert {verdict for verdict, _ in table.values()} == {"permit", "deny"}


def test_oracle_model_tracks_limit_and_sod(sample_matrix):
    model = OracleModel(sample_matrix)
    read = Permission("read", "db1")
    assert model.activate("ada", False, "T1", "p1") == ("ok", "ok")
    assert model.activate("ada", False, "T3", "p1") == ("deny", "sod-violation")
    verdicts = [model.access("ada", False, "HQ", 0, read)[0] for _ in range(4)]
    assert verdicts == ["permit", "permit", "permit", "deny"]
    assert model.instances[0].state == "deactivated"
    assert model.delegate("bob", False, 0, "carol") == ("deny", "task-not-active")
    assert model.complete("ada", False, 0) == ("ok", "ok")


def test_oracle_delegation(sample_matrix):
    model = OracleModel(sample_matrix)
    model.activate("ada", False, "T1", None)
    assert model.delegate("ada", False, 0, "carol") == ("deny", "not-superior")
    assert model.delegate("bob", False, 0, "carol") == ("ok", "ok")
    assert model.instances[0].holder == "carol"


# =============================================================================
# DIFERENCIAL
# =============================================================================

@pytest.mark.parametrize("seed", [0, 1, 7, 42])
def test_engine_matches_oracle(seed):
    report = run_differential(seed, 1000)
    assert report.ok, json.dumps(report.to_dict(), indent=2)[:4000]
    assert report.divergences == []


def test_zero_operations():
    report = run_differential(5, 0)
    assert report.ok
    assert report.operations == 0


def test_no_users_produces_empty_report():
    report = run_differential(5, 200, dims=PolicyDims(users=0))
    assert report.ok


def test_off_by_one_engine_is_caught():
    reports = run_many(range(5), 1000, workers=2, engine_factory=OffByOneEngine, logger=quiet)
    categories = {}
    for report in reports:
        for name, count in report.categories.items():
            categories[name] = categories.get(name, 0) + count
    assert "usage-exhausted" in categories
    divergence = next(d for r in reports for d in r.divergences if d.category == "usage-exhausted")
    assert divergence.operations
    assert divergence.operations[-1].kind == "access"


def test_long_history_defect_needs_the_whole_sequence():
    report = run_differential(0, 1000, engine_factory=LateExhaustionEngine)
    assert not report.ok
    assert report.divergences[0].step >= 40
    assert run_differential(0, 1000, engine_factory=LateExhaustionEngine, episode_length=50).ok


def test_every_divergence_is_reported():
    reports = run_many(range(5), 1000, workers=2, engine_factory=OffByOneEngine)
    assert any(len(r.divergences) > 1 for r in reports)
    for report in reports:
        steps = [d.step for d in report.divergences]
        assert steps == sorted(set(steps))
        for divergence in report.divergences:
            assert divergence.operations


def test_episode_length_must_be_positive():
    with pytest.raises(ValueError):
        run_differential(0, 10, episode_length=0)


def test_run_many_keeps_seed_order():
    reports = run_many([3, 1, 2], 100, workers=3)
    assert [r.seed for r in reports] == [3, 1, 2]


# =============================================================================
# CLI
# =============================================================================

def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = cli_dispatch(list(argv), out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.fixture
def cli(tmp_path):
    """run_cli con una carpeta de configuración cuyo data_dir vive en tmp_path"""
    config_dir = tmp_path / "config"
    config_dir.mkdir()
    data_dir = (tmp_path / "data").as_posix()
    (config_dir / "config.yaml").write_text(f"storage:\n  data_dir: \"{data_dir}\"\n", encoding="utf-8")

    def _run(*argv):
        return run_cli("--config-dir", str(config_dir), *argv)

    return _run


def test_cli_validate_ok(cli):
    code, out, _ = cli("policy", "validate", str(SAMPLE_POLICY))
    assert code == 0
    assert out.strip() == "OK"


def test_cli_validate_cycle(cli, tmp_path):
    document = json.loads(SAMPLE_POLICY.read_text(encoding="utf-8"))
    document["roles"][0]["juniors"] = ["Manager"]
    path = tmp_path / "cyclic.json"
    path.write_text(json.dumps(document), encoding="utf-8")
    code, out, _ = cli("policy", "validate", str(path))
    assert code == 1
    assert "hierarchy-cycle" in out


def test_cli_usage_error(cli):
    assert cli("policy", "frobnicate")[0] == 2
    assert run_cli()[0] == 2


def test_cli_builds_a_policy(cli, tmp_path):
    policy = str(tmp_path / "policy.json")
    base = ("--policy", policy)
    steps = [
        ("policy", "add-location", "HQ"),
        ("tenant", "add", "AcmeCo", "Acme Corporation", "--mail-url", "http://mail.test", "--mail-to", "sec@acme"),
        ("tenant", "directory", "add", "AcmeCo", "E1", "Ada"),
        ("policy", "add-task", "AcmeCo", "T1", "--limit", "2", "--perm", "read:db1"),
        ("policy", "add-role", "AcmeCo", "Clerk"),
        ("policy", "add-role", "AcmeCo", "Manager", "--location", "HQ"),
        ("policy", "grant-task", "AcmeCo", "Clerk", "T1"),
        ("policy", "set-hierarchy", "AcmeCo", "Manager", "Clerk"),
        ("tenant", "admin-role", "AcmeCo", "Manager"),
        ("user", "add", "AcmeCo", "ada", "E1", "--role", "Clerk"),
        ("user", "assign-role", "AcmeCo", "ada", "Manager"),
    ]
    for step in steps:
        code, _, err = cli(*base, *step)
        assert code == 0, (step, err)

    store = load_policy(policy)
    assert resolve_effective_roles(store, "AcmeCo", "ada") == {"Clerk", "Manager"}
    assert store.tenants["AcmeCo"].alert_sink["to"] == ["sec@acme"]
    assert store.tenants["AcmeCo"].admin_roles == {"Manager"}

    code, out, _ = cli(*base, "policy", "show")
    assert code == 0
    assert json.loads(out)["format_version"] == 1


def test_cli_rejects_invalid_change(cli, tmp_path):
    policy = str(tmp_path / "policy.json")
    base = ("--policy", policy)
    cli(*base, "tenant", "add", "AcmeCo", "Acme")
    code, _, err = cli(*base, "user", "add", "AcmeCo", "ada", "E404", "--role", "Ghost")
    assert code == 1
    assert "dangling-reference" in err or "unknown-employee" in err
    assert "ada" not in Path(policy).read_text(encoding="utf-8")


def test_cli_grant_unknown_task(cli, tmp_path):
    policy = str(tmp_path / "policy.json")
    base = ("--policy", policy)
    cli(*base, "tenant", "add", "AcmeCo", "Acme")
    code, _, err = cli(*base, "policy", "grant-task", "AcmeCo", "Clerk", "T9")
    assert code == 1
    assert err.startswith("unknown-task")


def test_cli_simulate(cli):
    code, out, _ = cli("simulate", "--seed", "7", "--n", "300")
    assert code == 0
    assert "seed=7" in out
    assert cli("simulate", "--n", "-1")[0] == 2
    assert cli("simulate", "--episode-length", "0")[0] == 2
    code, out, _ = cli("simulate", "--seed", "3", "--n", "200", "--episode-length", "25")
    assert code == 0
    assert "seed=3" in out


def test_cli_least_privilege_without_audit(cli, tmp_path):
    policy = tmp_path / "policy.json"
    policy.write_text(SAMPLE_POLICY.read_text(encoding="utf-8"), encoding="utf-8")
    code, out, _ = cli("--policy", str(policy),
                           "audit", "least-privilege", "--window", "7d")
    assert code == 0
    assert "AcmeCo/bob" in out


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
