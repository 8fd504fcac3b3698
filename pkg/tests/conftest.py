"""Shared fixtures: the packaged cell and artifacts derived from it.

Program generation solves IK for every move target, so anything built
from the case scene is session-scoped and shared read-only.
"""

from __future__ import annotations

import pytest

from twincell import battery_pack
from twincell.allocation import balance
from twincell.program import default_motions, generate_program


@pytest.fixture(scope="session")
def scene():
    return battery_pack.load()


@pytest.fixture(scope="session")
def plan(scene):
    return balance(scene)


@pytest.fixture(scope="session")
def build(scene, plan):
    return generate_program(scene, plan, default_motions(scene, plan))


@pytest.fixture(scope="session")
def variation():
    return battery_pack.variation()


@pytest.fixture(scope="session")
def refined(scene):
    return battery_pack.refined_layout(scene)


@pytest.fixture(scope="session")
def refined_plan(refined):
    return balance(refined)


@pytest.fixture(scope="session")
def refined_build(refined, refined_plan):
    return generate_program(refined, refined_plan, default_motions(refined, refined_plan))
