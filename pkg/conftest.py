#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Fixtures compartidas de las pruebas
===================================

Política de ejemplo (``fixtures/sample.json``), reloj manual, configuración
con pocas iteraciones de hash y un gateway con alertas síncronas.
"""

import sys
from datetime import timedelta
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).parent
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

from trbac_core.authn import Authenticator, CredentialTable  # noqa: E402
from trbac_core.authz_engine import AuthzEngine  # noqa: E402
from trbac_core.config_system import ConfigManager  # noqa: E402
from trbac_core.persistence import load_policy  # noqa: E402
from trbac_core.policy_model import (  # noqa: E402
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
from trbac_core.utils import ManualClock  # noqa: E402

SAMPLE_POLICY = PROJECT_ROOT / "fixtures" / "sample.json"
TEST_ITERATIONS = 1000
PASSWORD = "correct horse battery"

# employee_id y nombre de cada usuario del fixture
EMPLOYEES = {
    ("AcmeCo", "ada"): ("E42", "Ada"),
    ("AcmeCo", "bob"): ("E7", "Bob"),
    ("AcmeCo", "carol"): ("E43", "Carol"),
    ("Globex", "ada"): ("G1", "Ada"),
}


def quiet(message: str, level: str = "INFO") -> None:
    pass


class AlertCollector(list):
    """on_alert que guarda las alertas recibidas"""

    def __call__(self, alert):
        self.append(alert)

    def reasons(self):
        return [a.reason for a in self]


def enroll(authn: Authenticator, tenant: str, user: str, password: str = PASSWORD):
    employee_id, name = EMPLOYEES[(tenant, user)]
    pending = authn.register_user(tenant, name, "", employee_id)
    return authn.set_password(pending, password)


def extend_sample(store: PolicyStore) -> PolicyStore:
    """T3 en conflicto dinámico con T1 dentro de 'purchase', más un segundo tenant"""
    store = store.with_task(TaskDef("T3", "AcmeCo", 1, frozenset({Permission("write", "db1")}), "purchase"))
    store = store.grant_task("AcmeCo", "Clerk", "T3")
    store = store.with_sod(SodConstraint("S1", "AcmeCo", "purchase", frozenset({"T1", "T3"}), SodMode.DYNAMIC))
    store = store.with_tenant(Tenant("Globex", "Globex Inc", frozenset({DirectoryEntry("G1", "Ada", "Analyst")})))
    store = store.with_task(TaskDef("T1", "Globex", 1, frozenset({Permission("read", "db1")})))
    store = store.with_role(Role("Analyst", "Globex", granted_tasks=frozenset({"T1"})))
    return store.with_user(User("ada", "Globex", "G1", frozenset({"Analyst"})))


@pytest.fixture
def sample_store():
    return load_policy(SAMPLE_POLICY)


@pytest.fixture
def store(sample_store):
    return extend_sample(sample_store)


@pytest.fixture
def clock():
    return ManualClock()


@pytest.fixture
def alerts():
    return AlertCollector()


@pytest.fixture
def authn(store, clock, alerts):
    return Authenticator(
        store,
        credentials=CredentialTable(),
        hash_iterations=TEST_ITERATIONS,
        session_ttl=timedelta(minutes=30),
        clock=clock,
        on_alert=alerts,
        logger=quiet,
    )


@pytest.fixture
def engine(store, clock, alerts):
    return AuthzEngine(store, clock=clock, on_alert=alerts, logger=quiet)


@pytest.fixture
def login(authn):
    """Registra (si hace falta) y autentica: login(user, location="HQ", tenant="AcmeCo")"""
    enrolled = set()

    def _login(user, location="HQ", tenant="AcmeCo", roles=None):
        if (tenant, user) not in enrolled:
            enroll(authn, tenant, user)
            enrolled.add((tenant, user))
        return authn.authenticate(tenant, user, PASSWORD, location, roles)

    return _login


@pytest.fixture
def config(tmp_path):
    return ConfigManager(
        None,
        overrides={
            "storage.data_dir": str(tmp_path / "data"),
            "auth.hash_iterations": TEST_ITERATIONS,
            "location.mode": "declared",
        },
        use_env=False,
        logger=quiet,
    )


@pytest.fixture
def service(config, store, clock):
    from gateway_service.gateway import GatewayService

    svc = GatewayService(config, store=store, clock=clock, logger=quiet, asynchronous_alerts=False)
    svc.start()
    yield svc
    svc.stop()


@pytest.fixture
def client(service):
    from gateway_service.server_gateway import create_app

    app = create_app(service, quiet)
    app.testing = True
    return app.test_client()
