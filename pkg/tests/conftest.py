"""Shared fixtures; also collects the acceptance verdicts and prints them
after the test summary."""

import pytest

VERDICTS: list[str] = []


def record(number: int, passed: bool, detail: str) -> bool:
    VERDICTS.append(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(VERDICTS):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def teleport_episode():
    """Episode 0 of the default WallNav TELEPORT suite at T=25, with the
    campaign world model: ``(spec, E, f, episode, cut_start)``."""
    import numpy as np

    from groundplan.harness import campaign as C
    from groundplan.harness.config import config_from_dict

    cfg = config_from_dict({"campaign": {"sources": ["TELEPORT"]}})
    spec, E, f = C.build_world_model(cfg)
    ep = C.episode_for(cfg, spec, 25, "TELEPORT", 0)
    changed = np.flatnonzero(np.any(ep.plan.frames != ep.oracle.frames, axis=1))
    return spec, E, f, ep, int(changed[0])
