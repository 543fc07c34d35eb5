import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mbgcf import SyntheticSpec, generate_synthetic  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_synthetic():
    return generate_synthetic(SyntheticSpec(num_users=30, num_items=20, latent_dim=4,
                                            keep_fractions=(0.3, 0.08), seed=3))


@pytest.fixture
def toy_log(tmp_path):
    lines = []
    # 4 users x 5 items, 3 behaviors, enough events to survive a low threshold
    for u in range(4):
        for i in range(5):
            lines.append(f"u{u}\ti{i}\tclick")
            if (u + i) % 2 == 0:
                lines.append(f"u{u}\ti{i}\tcart")
            if (u + i) % 3 == 0:
                lines.append(f"u{u}\ti{i}\tpurchase")
    path = tmp_path / "events.tsv"
    path.write_text("\n".join(lines) + "\n")
    return path


def pytest_terminal_summary(terminalreporter):
    import gate

    if gate.LINES:
        terminalreporter.section("acceptance criteria")
        for line in gate.LINES:
            terminalreporter.write_line(line)
