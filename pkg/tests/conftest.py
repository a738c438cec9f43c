"""Shared fixtures: bundled-scenario trajectories are expensive, so they are
computed once per session and reused across module and acceptance tests."""

import pytest

from driftdiff.scenarios import load_bundled
from driftdiff.splitting import SplittingSchedule, run_splitting


def _run(name, dense=False, n_override=None):
    sc = load_bundled(name)
    sched = sc.build_schedule()
    if n_override is not None:
        sched = SplittingSchedule.make(sc.T, n_override, sc.steps_per_sub, sc.m,
                                       sc.epsilon, rk_steps=sc.rk_steps,
                                       newton_tol=sc.newton_tol)
    traj = run_splitting(sc.build_initial(), sc.build_drift(), sched,
                         q_list=sc.q_list, dense_output=dense)
    return sc, traj


@pytest.fixture(scope="session")
def rotation_run():
    """divfree-rotation-2d at its bundled n, densely sampled."""
    return _run("divfree-rotation-2d", dense=True)


@pytest.fixture(scope="session")
def rotation_run_2n():
    return _run("divfree-rotation-2d", dense=False, n_override=32)


@pytest.fixture(scope="session")
def pme_run():
    return _run("pme-2d", dense=True)


@pytest.fixture(scope="session")
def pme_run_2n():
    return _run("pme-2d", dense=False, n_override=16)


@pytest.fixture(scope="session")
def diffusion1d_run():
    return _run("diffusion-1d")


@pytest.fixture(scope="session")
def drift1d_run():
    return _run("drift-1d")


@pytest.fixture(scope="session")
def dplus_run():
    return _run("dplus-2d")


@pytest.fixture(scope="session")
def sclass_run():
    return _run("sclass-1d")


@pytest.fixture(scope="session")
def linear1d_run():
    return _run("linear-1d")
