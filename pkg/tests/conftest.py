import numpy as np
import pytest

from addressee.nn.model import ModelConfig
from addressee.synthgen import ScenarioConfig, generate

# Micro architecture used by gradient checks and other exact-math tests:
# small enough that finite differences over every parameter take seconds.
MICRO_CONFIG = dict(face_size=4, conv_channels=(1,), face_embed=3,
                    n_keypoints=2, pose_hidden=(3,), fused_dim=3, lstm_hidden=4)


@pytest.fixture(scope="session")
def micro_config() -> ModelConfig:
    return ModelConfig(**MICRO_CONFIG)


@pytest.fixture(scope="session")
def tiny_utterances():
    """24 short utterances; enough structure for IO/windowing/eval tests."""
    return list(generate(ScenarioConfig(n_utterances=24, seed=123,
                                        utterance_len_ms=(400, 2500))))


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)


# ---------------------------------------------------------------------------
# Acceptance gate reporting. Each test in test_acceptance.py records exactly
# one line through this fixture; the hook prints them after the run so the
# criterion verdicts survive into piped/tee'd output.

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance():
    def record(criterion: int, ok: bool, detail: str) -> None:
        verdict = "PASS" if ok else "FAIL"
        ACCEPTANCE_LINES.append(f"criterion {criterion:2d}: {verdict}  {detail}")
        assert ok, f"criterion {criterion}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.line(line)
