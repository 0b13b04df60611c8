#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pruebas - Motor de Autorización
===============================

Activación, control de acceso con límite de usos, completado, delegación,
SoD dinámica, precedencia de razones de denegación y auditoría de mínimo
privilegio.
"""

import dataclasses
import sys
import threading
from datetime import timedelta
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from conftest import quiet  # noqa: E402
from trbac_core.alerts import AlertKind  # noqa: E402
from trbac_core.authn import Session  # noqa: E402
from trbac_core.authz_engine import (  # noqa: E402
    AccessDecision,
    AuthzEngine,
    DelegationRecord,
    InstanceState,
    Verdict,
    audit_least_privilege,
)
from trbac_core.errors import AuthzError, ErrorCode  # noqa: E402
from trbac_core.policy_model import Permission, TaskDef, resolve_effective_roles  # noqa: E402

T = "AcmeCo"
READ_DB1 = Permission("read", "db1")
WRITE_DB1 = Permission("write", "db1")
CONFIGURE_VM1 = Permission("configure", "vm1")


@pytest.fixture
def session_for(store, clock):
    """Sesión sintética: roles efectivos salvo que se indiquen"""

    def _session(user, location="HQ", roles=None, tenant=T, expired=False):
        now = clock()
        return Session(
            token=f"tok-{tenant}-{user}-{location}",
            user=user,
            tenant=tenant,
            active_roles=frozenset(roles) if roles is not None else resolve_effective_roles(store, tenant, user),
            location=location,
            issued_at=now - timedelta(minutes=1),
            expires_at=now - timedelta(seconds=1) if expired else now + timedelta(minutes=30),
        )

    return _session


def expect_denied(code, fn, *args):
    with pytest.raises(AuthzError) as info:
        fn(*args)
    assert info.value.code == code
    return info.value


# =============================================================================
# activate_task
# =============================================================================

def test_activate_creates_active_instance(engine, session_for, alerts):
    inst = engine.activate_task(session_for("ada"), "T1")
    assert inst.state == InstanceState.ACTIVE
    assert inst.holder == "ada"
    assert inst.usage_count == 0
    assert inst.usage_limit == 3
    assert inst.delegation_chain == ()
    assert alerts == []


def test_activate_without_mapping_alerts_tenant(engine, session_for, alerts):
    error = expect_denied(ErrorCode.NO_ROLE_TASK_MAPPING, engine.activate_task, session_for("ada"), "T2")
    assert [a.kind for a in alerts] == [AlertKind.MALICIOUS_INSIDER]
    assert error.alerts == list(alerts)
    assert engine.list_instances(T) == []


def test_activate_unknown_task(engine, session_for):
    expect_denied(ErrorCode.NO_ROLE_TASK_MAPPING, engine.activate_task, session_for("ada"), "T404")


def test_activate_with_role_subset(engine, session_for):
    bob_as_clerk = session_for("bob", roles=["Clerk"])
    expect_denied(ErrorCode.NO_ROLE_TASK_MAPPING, engine.activate_task, bob_as_clerk, "T2")
    assert engine.activate_task(bob_as_clerk, "T1").holder == "bob"


def test_activate_with_expired_session(engine, session_for, alerts):
    expect_denied(ErrorCode.SESSION_EXPIRED, engine.activate_task, session_for("ada", expired=True), "T1")
    assert [a.kind for a in alerts] == [AlertKind.UNAUTHORIZED_ATTEMPT]


def test_tasks_are_scoped_by_tenant(engine, session_for):
    inst = engine.activate_task(session_for("ada", tenant="Globex"), "T1")
    assert inst.usage_limit == 1
    assert engine.get_instance(T, inst.id) is None
    expect_denied(ErrorCode.NOT_FOUND, engine.check_access, session_for("ada"), inst.id, READ_DB1)


# =============================================================================
# check_access
# =============================================================================

def test_access_counts_until_limit(engine, session_for, alerts):
    session = session_for("ada")
    inst = engine.activate_task(session, "T1")
    decisions = [engine.check_access(session, inst.id, READ_DB1) for _ in range(4)]
    assert [d.verdict for d in decisions] == [Verdict.PERMIT] * 3 + [Verdict.DENY]
    assert [d.usage_after for d in decisions] == [1, 2, 3, 3]
    assert decisions[-1].reason == "usage-exhausted"
    assert engine.get_instance(T, inst.id).state == InstanceState.DEACTIVATED
    assert len(alerts) == 1


@pytest.mark.parametrize("limit", [1, 2, 3, 10])
def test_exact_usage_limit(store, clock, session_for, limit):
    store = store.with_task(TaskDef("TL", T, limit, frozenset({READ_DB1}))).grant_task(T, "Clerk", "TL")
    engine = AuthzEngine(store, clock=clock, logger=quiet)
    session = session_for("ada")
    inst = engine.activate_task(session, "TL")
    verdicts = [engine.check_access(session, inst.id, READ_DB1).verdict for _ in range(limit + 2)]
    assert verdicts.count(Verdict.PERMIT) == limit
    assert verdicts[:limit] == [Verdict.PERMIT] * limit


def test_concurrent_last_use_single_winner(engine, session_for):
    session = session_for("ada")
    inst = engine.activate_task(session, "T3")  # usage_limit 1
    barrier = threading.Barrier(16)
    results = []

    def attempt():
        barrier.wait()
        results.append(engine.check_access(session, inst.id, WRITE_DB1))

    threads = [threading.Thread(target=attempt) for _ in range(16)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sum(d.permitted for d in results) == 1
    assert {d.reason for d in results if not d.permitted} == {"usage-exhausted"}
    assert engine.get_instance(T, inst.id).usage_count == 1


def test_concurrent_access_never_exceeds_limit(engine, session_for):
    session = session_for("ada")
    inst = engine.activate_task(session, "T1")  # usage_limit 3
    results = []
    threads = [threading.Thread(target=lambda: results.append(engine.check_access(session, inst.id, READ_DB1)))
               for _ in range(20)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sum(d.permitted for d in results) == 3


def test_not_holder(engine, session_for, alerts):
    inst = engine.activate_task(session_for("ada"), "T1")
    decision = engine.check_access(session_for("carol"), inst.id, READ_DB1)
    assert decision.reason == "not-holder"
    assert len(decision.alerts_emitted) == 1
    assert alerts[0].kind == AlertKind.MALICIOUS_INSIDER
    assert engine.get_instance(T, inst.id).usage_count == 0


def test_permission_outside_task(engine, session_for):
    session = session_for("ada")
    inst = engine.activate_task(session, "T1")
    assert engine.check_access(session, inst.id, WRITE_DB1).reason == "no-role-task-mapping"


def test_location_rule(engine, session_for):
    inst = engine.activate_task(session_for("bob"), "T2")
    assert engine.check_access(session_for("bob", "Remote"), inst.id, CONFIGURE_VM1).reason == "location-forbidden"
    assert engine.check_access(session_for("bob", "HQ"), inst.id, CONFIGURE_VM1).permitted
    # T1 solo la otorga Clerk, sin restricción de ubicación
    t1 = engine.activate_task(session_for("bob"), "T1")
    assert engine.check_access(session_for("bob", "Remote"), t1.id, READ_DB1).permitted


def test_denial_precedence(engine, session_for):
    inst = engine.activate_task(session_for("bob"), "T2")
    # vencida gana sobre no-titular
    assert engine.check_access(session_for("carol", expired=True), inst.id, READ_DB1).reason == "session-expired"
    # no-titular gana sobre ubicación
    assert engine.check_access(session_for("carol", "Remote"), inst.id, CONFIGURE_VM1).reason == "not-holder"
    # ubicación gana sobre mapeo
    assert engine.check_access(session_for("bob", "Remote"), inst.id, READ_DB1).reason == "location-forbidden"
    engine.complete_task(session_for("bob"), inst.id)
    # completada gana sobre ubicación
    assert engine.check_access(session_for("bob", "Remote"), inst.id, CONFIGURE_VM1).reason == "task-not-active"


def test_deny_leaves_state_untouched(engine, session_for, alerts):
    session = session_for("ada")
    inst = engine.activate_task(session, "T1")
    engine.check_access(session, inst.id, READ_DB1)
    before = engine.snapshot()
    for perm in (WRITE_DB1, CONFIGURE_VM1):
        engine.check_access(session, inst.id, perm)
    engine.check_access(session_for("carol"), inst.id, READ_DB1)
    assert engine.snapshot() == before
    assert len(alerts) == 3


# =============================================================================
# SoD dinámica
# =============================================================================

def test_dynamic_sod_blocks_same_process_instance(engine, session_for, alerts):
    session = session_for("ada")
    engine.activate_task(session, "T1", "p1")
    expect_denied(ErrorCode.SOD_VIOLATION, engine.activate_task, session, "T3", "p1")
    assert alerts.reasons() == ["sod-violation"]
    assert engine.activate_task(session, "T3", "p2").process_instance == "p2"
    assert engine.activate_task(session, "T3").process_instance is None


def test_dynamic_sod_on_delegation(engine, session_for):
    a = engine.activate_task(session_for("ada"), "T1", "p1")
    c = engine.activate_task(session_for("carol"), "T3", "p1")
    expect_denied(ErrorCode.SOD_VIOLATION, engine.delegate_task, session_for("bob"), c.id, "ada")
    assert engine.get_instance(T, c.id).holder == "carol"
    expect_denied(ErrorCode.SOD_VIOLATION, engine.delegate_task, session_for("bob"), a.id, "carol")


def test_dynamic_sod_on_access_after_reload(store, clock, session_for):
    relaxed = dataclasses.replace(store, sod_constraints={})
    engine = AuthzEngine(relaxed, clock=clock, logger=quiet)
    session = session_for("ada")
    first = engine.activate_task(session, "T1", "p1")
    engine.activate_task(session, "T3", "p1")
    engine.reload(store)
    assert engine.check_access(session, first.id, READ_DB1).reason == "sod-violation"


# =============================================================================
# complete_task
# =============================================================================

def test_complete_revokes_everything(engine, session_for, store):
    session = session_for("ada")
    inst = engine.activate_task(session, "T1")
    done = engine.complete_task(session, inst.id)
    assert done.state == InstanceState.COMPLETED
    assert done.completed_at
    for user in ("ada", "bob", "carol"):
        for location in sorted(store.locations):
            for perm in (READ_DB1, WRITE_DB1, CONFIGURE_VM1):
                assert not engine.check_access(session_for(user, location), inst.id, perm).permitted
    expect_denied(ErrorCode.TASK_NOT_ACTIVE, engine.complete_task, session, inst.id)


def test_only_holder_completes(engine, session_for):
    inst = engine.activate_task(session_for("ada"), "T1")
    expect_denied(ErrorCode.NOT_HOLDER, engine.complete_task, session_for("carol"), inst.id)
    assert engine.get_instance(T, inst.id).state == InstanceState.ACTIVE


def test_complete_deactivated_instance(engine, session_for):
    session = session_for("ada")
    inst = engine.activate_task(session, "T3")
    engine.check_access(session, inst.id, WRITE_DB1)
    assert engine.get_instance(T, inst.id).state == InstanceState.DEACTIVATED
    assert engine.complete_task(session, inst.id).state == InstanceState.COMPLETED


# =============================================================================
# delegate_task
# =============================================================================

def test_delegation_moves_holder_and_keeps_usage(engine, session_for):
    ada = session_for("ada")
    inst = engine.activate_task(ada, "T1")
    engine.check_access(ada, inst.id, READ_DB1)
    moved = engine.delegate_task(session_for("bob"), inst.id, "carol")
    assert moved.holder == "carol"
    assert moved.usage_count == 1
    assert moved.usage_limit == 3
    assert [(d.from_user, d.to_user, d.by) for d in moved.delegation_chain] == [("ada", "carol", "Manager")]
    assert engine.check_access(ada, inst.id, READ_DB1).reason == "not-holder"
    carol = session_for("carol")
    verdicts = [engine.check_access(carol, inst.id, READ_DB1).verdict for _ in range(3)]
    assert verdicts == [Verdict.PERMIT, Verdict.PERMIT, Verdict.DENY]


def test_peer_cannot_delegate(engine, session_for, alerts):
    inst = engine.activate_task(session_for("ada"), "T1")
    expect_denied(ErrorCode.NOT_SUPERIOR, engine.delegate_task, session_for("ada"), inst.id, "carol")
    assert alerts.reasons() == ["not-superior"]
    assert engine.get_instance(T, inst.id).holder == "ada"


def test_delegate_to_unknown_user(engine, session_for):
    inst = engine.activate_task(session_for("ada"), "T1")
    expect_denied(ErrorCode.UNKNOWN_USER, engine.delegate_task, session_for("bob"), inst.id, "mallory")


def test_delegate_inactive_instance(engine, session_for):
    inst = engine.activate_task(session_for("ada"), "T1")
    engine.complete_task(session_for("ada"), inst.id)
    expect_denied(ErrorCode.TASK_NOT_ACTIVE, engine.delegate_task, session_for("bob"), inst.id, "carol")


def test_delegation_chain_round_trip():
    record = DelegationRecord("ada", "carol", "Manager", "2024-01-01T00:00:00+00:00")
    assert record.to_dict()["from"] == "ada"
    assert DelegationRecord.from_dict(record.to_dict()) == record


# =============================================================================
# ESTADO Y MÍNIMO PRIVILEGIO
# =============================================================================

def test_snapshot_restore_keeps_instances_and_involvement(engine, store, clock, session_for):
    session = session_for("ada")
    inst = engine.activate_task(session, "T1", "p1")
    engine.check_access(session, inst.id, READ_DB1)

    restored = AuthzEngine(store, clock=clock, logger=quiet)
    restored.restore(engine.snapshot())
    assert restored.get_instance(T, inst.id) == engine.get_instance(T, inst.id)
    assert restored.involvement() == engine.involvement()
    expect_denied(ErrorCode.SOD_VIOLATION, restored.activate_task, session, "T3", "p1")


def test_least_privilege_report(engine, store, clock, session_for):
    bob = session_for("bob")
    inst = engine.activate_task(bob, "T1")
    used = engine.check_access(bob, inst.id, READ_DB1)
    denied = engine.check_access(bob, inst.id, WRITE_DB1)

    report = audit_least_privilege(store, [used, denied], timedelta(days=1), now=clock())
    assert report.unused(T, "bob") == {WRITE_DB1, CONFIGURE_VM1}
    assert report.unused(T, "ada") == {READ_DB1, WRITE_DB1}
    assert report.unused("Globex", "ada") == {READ_DB1}
    assert (T, "bob") in report.flagged()


def test_least_privilege_window_excludes_old_use(engine, store, clock, session_for):
    bob = session_for("bob")
    inst = engine.activate_task(bob, "T1")
    used = engine.check_access(bob, inst.id, READ_DB1)
    later = clock.advance(days=2)
    report = audit_least_privilege(store, [used], timedelta(days=1), now=later)
    assert READ_DB1 in report.unused(T, "bob")


def test_least_privilege_ignores_foreign_decisions(store, clock):
    stray = AccessDecision(Verdict.PERMIT, "ok", 1, tenant="Globex", user="ada",
                           permission=WRITE_DB1, decided_at=clock())
    report = audit_least_privilege(store, [stray], timedelta(days=1), now=clock())
    assert report.unused(T, "ada") == {READ_DB1, WRITE_DB1}


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
