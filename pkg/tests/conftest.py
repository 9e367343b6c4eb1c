import json

import pytest


def pytest_runtest_logreport(report):
    # one visible pass/fail line per acceptance criterion
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[ACCEPTANCE] {name}: {outcome}", flush=True)

from codeteam.bots import load_builtin_botscript, load_botscript, run_scripted_session
from codeteam.model import ActionKind, Rhythm, Role, TRAINEE_ROLES
from codeteam.physiology import PhysioParams
from codeteam.scenario import (
    DEFAULT_FORMULARY,
    ScenarioDef,
    load_builtin_scenario,
)
from codeteam.session import Session, SessionConfig


@pytest.fixture(scope="session")
def megacode_scenario():
    return load_builtin_scenario("vf-megacode")


@pytest.fixture(scope="session")
def perfect_script():
    return load_builtin_botscript("vf-megacode-perfect")


@pytest.fixture(scope="session")
def megacode_log(megacode_scenario, perfect_script):
    return run_scripted_session(megacode_scenario, perfect_script, seed=42)


def make_scenario(**overrides) -> ScenarioDef:
    """A plain VF scenario with default physiology, for unit tests."""
    base = dict(
        id="test-vf",
        title="test scenario",
        initial_rhythm=Rhythm.VF,
        physio=PhysioParams(),
        formulary=DEFAULT_FORMULARY,
    )
    base.update(overrides)
    return ScenarioDef(**base)


def start_session(scenario: ScenarioDef, seed: int = 7, **cfg_overrides) -> Session:
    """Session with all four bots joined (Running phase)."""
    sess = Session(SessionConfig(scenario=scenario, seed=seed, **cfg_overrides))
    for role in TRAINEE_ROLES:
        result, _ = sess.join(f"bot:{role.value}", role)
        assert result.granted
    return sess


def client(role: Role) -> str:
    return f"bot:{role.value}"


def script_from_dict(doc: dict):
    return load_botscript(json.dumps(doc))


def drop_action(script_doc: dict, kind: ActionKind) -> dict:
    out = json.loads(json.dumps(script_doc))
    for role, entries in out["bots"].items():
        out["bots"][role] = [
            e for e in entries if e.get("action", {}).get("kind") != kind.value
        ]
    return out
