#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Pruebas - Modelo de Políticas
=============================

Resolución de roles efectivos, tareas permitidas y diagnósticos de
``validate_policy``.
"""

import sys
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

PROJECT_ROOT = Path(__file__).parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from trbac_core.errors import ErrorCode, PolicyError  # noqa: E402
from trbac_core.policy_model import (  # noqa: E402
    DiagnosticCode,
    DirectoryEntry,
    Permission,
    PolicyStore,
    Role,
    SodConstraint,
    SodMode,
    TaskDef,
    Tenant,
    User,
    is_valid_identifier,
    permitted_tasks,
    reachable_permissions,
    resolve_effective_roles,
    validate_policy,
)

T = "AcmeCo"


def chain_store(edges, assignments, grants=None):
    """Store mínimo: roles R0..Rn con las aristas senior->junior dadas"""
    roles = {r for edge in edges for r in edge} | {r for rs in assignments.values() for r in rs}
    roles |= set((grants or {}).keys())
    store = PolicyStore(locations=frozenset({"HQ"}))
    directory = frozenset(DirectoryEntry(f"E-{u}", u) for u in assignments)
    store = store.with_tenant(Tenant(T, "Acme", directory))
    tasks = {t for ts in (grants or {}).values() for t in ts}
    for task in sorted(tasks):
        store = store.with_task(TaskDef(task, T, 1, frozenset({Permission("read", f"obj-{task}")})))
    for role in sorted(roles):
        juniors = frozenset(j for s, j in edges if s == role)
        store = store.with_role(Role(role, T, juniors=juniors, granted_tasks=frozenset((grants or {}).get(role, ()))))
    for user, assigned in assignments.items():
        store = store.with_user(User(user, T, f"E-{user}", frozenset(assigned)))
    return store


def codes(store):
    return {d.code for d in validate_policy(store)}


# =============================================================================
# resolve_effective_roles
# =============================================================================

def test_junior_does_not_inherit_senior(sample_store):
    assert resolve_effective_roles(sample_store, T, "ada") == {"Clerk"}


def test_senior_inherits_junior(sample_store):
    assert resolve_effective_roles(sample_store, T, "bob") == {"Manager", "Clerk"}


def test_transitive_chain():
    store = chain_store([("Manager", "Supervisor"), ("Supervisor", "Clerk")], {"u": ["Manager"]})
    assert resolve_effective_roles(store, T, "u") == {"Manager", "Supervisor", "Clerk"}


def test_unknown_user_raises(sample_store):
    with pytest.raises(PolicyError) as info:
        resolve_effective_roles(sample_store, T, "mallory")
    assert info.value.code == ErrorCode.UNKNOWN_USER


def test_same_user_id_is_scoped_by_tenant(store):
    assert resolve_effective_roles(store, "Globex", "ada") == {"Analyst"}
    assert resolve_effective_roles(store, T, "ada") == {"Clerk"}


def _reachable_by_bfs(edges, start):
    seen, frontier = set(start), list(start)
    while frontier:
        role = frontier.pop()
        for senior, junior in edges:
            if senior == role and junior not in seen:
                seen.add(junior)
                frontier.append(junior)
    return seen


# Aristas solo de índice menor a mayor: jerarquía acíclica por construcción
dag_edges = st.sets(
    st.tuples(st.integers(0, 5), st.integers(0, 5)).filter(lambda e: e[0] < e[1]).map(
        lambda e: (f"R{e[0]}", f"R{e[1]}")
    ),
    max_size=12,
)


@settings(max_examples=80, deadline=None)
@given(edges=dag_edges, assigned=st.sets(st.integers(0, 5).map(lambda i: f"R{i}"), max_size=3))
def test_effective_roles_match_reachability(edges, assigned):
    store = chain_store(sorted(edges), {"u": sorted(assigned)})
    effective = resolve_effective_roles(store, T, "u")
    assert effective == _reachable_by_bfs(edges, assigned)
    assert set(assigned) <= effective


@settings(max_examples=60, deadline=None)
@given(edges=dag_edges, extra=st.tuples(st.integers(0, 4), st.integers(1, 5)).filter(lambda e: e[0] < e[1]),
       assigned=st.sets(st.integers(0, 5).map(lambda i: f"R{i}"), max_size=3))
def test_adding_an_edge_never_shrinks_effective_roles(edges, extra, assigned):
    before = chain_store(sorted(edges), {"u": sorted(assigned)})
    after = chain_store(sorted(edges | {(f"R{extra[0]}", f"R{extra[1]}")}), {"u": sorted(assigned)})
    assert resolve_effective_roles(before, T, "u") <= resolve_effective_roles(after, T, "u")


# =============================================================================
# permitted_tasks
# =============================================================================

def test_permitted_tasks_examples(sample_store):
    assert permitted_tasks(sample_store, T, []) == frozenset()
    assert permitted_tasks(sample_store, T, ["Clerk"]) == {"T1"}
    assert permitted_tasks(sample_store, T, ["Manager", "Clerk"]) == {"T1", "T2"}


def test_permitted_tasks_unknown_role(sample_store):
    with pytest.raises(PolicyError) as info:
        permitted_tasks(sample_store, T, ["Janitor"])
    assert info.value.code == ErrorCode.UNKNOWN_ROLE


@settings(max_examples=60, deadline=None)
@given(a=st.sets(st.sampled_from(["R0", "R1", "R2", "R3"])), b=st.sets(st.sampled_from(["R0", "R1", "R2", "R3"])))
def test_permitted_tasks_distributes_over_union(a, b):
    grants = {"R0": ["T0"], "R1": ["T1", "T2"], "R2": [], "R3": ["T2", "T3"]}
    store = chain_store([], {}, grants)
    assert permitted_tasks(store, T, a | b) == permitted_tasks(store, T, a) | permitted_tasks(store, T, b)


def test_reachable_permissions_follow_hierarchy(sample_store):
    assert reachable_permissions(sample_store, T, "bob") == {Permission("read", "db1"), Permission("configure", "vm1")}
    assert reachable_permissions(sample_store, T, "ada") == {Permission("read", "db1")}


# =============================================================================
# validate_policy
# =============================================================================

def test_sample_is_valid(sample_store, store):
    assert validate_policy(sample_store) == []
    assert validate_policy(store) == []


def test_cycle_names_both_roles(sample_store):
    cyclic = sample_store.add_junior(T, "Clerk", "Manager")
    diagnostics = [d for d in validate_policy(cyclic) if d.code == DiagnosticCode.HIERARCHY_CYCLE]
    assert len(diagnostics) == 1
    assert {"Manager", "Clerk"} <= set(diagnostics[0].subjects)


def test_static_sod_violation(sample_store):
    # bob alcanza T1 (vía Clerk) y T2 (Manager); T2 se mueve al proceso 'purchase'
    store = sample_store.with_task(TaskDef("T2", T, 2, frozenset({Permission("configure", "vm1")}), "purchase"))
    store = store.with_sod(SodConstraint("S", T, "purchase", frozenset({"T1", "T2"}), SodMode.STATIC))
    diagnostics = [d for d in validate_policy(store) if d.code == DiagnosticCode.STATIC_SOD_VIOLATION]
    assert [d for d in diagnostics if "bob" in d.subjects]
    assert not [d for d in diagnostics if "ada" in d.subjects]


def test_dynamic_sod_is_not_a_static_violation(store):
    assert DiagnosticCode.STATIC_SOD_VIOLATION not in codes(store)


def test_dangling_role_reference(sample_store):
    store = sample_store.assign_role(T, "ada", "Ghost")
    assert DiagnosticCode.DANGLING_REFERENCE in codes(store)


def test_invalid_usage_limit_and_empty_permissions(sample_store):
    store = sample_store.with_task(TaskDef("T9", T, 0, frozenset()))
    found = codes(store)
    assert DiagnosticCode.INVALID_USAGE_LIMIT in found
    assert DiagnosticCode.EMPTY_TASK_PERMISSIONS in found


def test_unknown_operation(sample_store):
    store = sample_store.with_task(TaskDef("T9", T, 1, frozenset({Permission("delete", "db1")})))
    assert DiagnosticCode.UNKNOWN_OPERATION in codes(store)


def test_employee_outside_directory(sample_store):
    store = sample_store.with_user(User("eve", T, "E404", frozenset({"Clerk"})))
    assert DiagnosticCode.UNKNOWN_EMPLOYEE in codes(store)


def test_sod_task_outside_process(sample_store):
    store = sample_store.with_sod(SodConstraint("S", T, "purchase", frozenset({"T1", "T2"}), SodMode.DYNAMIC))
    assert DiagnosticCode.MALFORMED_SOD in codes(store)


def test_one_diagnostic_per_violation(sample_store):
    store = sample_store.assign_role(T, "ada", "Ghost").assign_role(T, "carol", "Phantom")
    dangling = [d for d in validate_policy(store) if d.code == DiagnosticCode.DANGLING_REFERENCE]
    assert len(dangling) == 2


@pytest.mark.parametrize("value, ok", [
    ("Clerk", True), ("db-1.prod", True), ("", False), ("two words", False), ("a/b", False), (None, False),
])
def test_identifier_rules(value, ok):
    assert is_valid_identifier(value) is ok


def test_store_round_trips_through_dict(store):
    assert PolicyStore.from_dict(store.to_dict()) == store


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
