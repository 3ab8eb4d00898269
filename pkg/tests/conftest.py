import os

import numpy as np
import pytest
import torch

from cycledeblur.data import make_toy_images
from cycledeblur.image import save_image

torch.set_num_threads(max(1, min(4, os.cpu_count() or 1)))

# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE_LINES = {}


def record_acceptance(number: int, passed: bool, detail: str) -> str:
    line = f"ACCEPTANCE {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def sharp_dir(tmp_path):
    d = tmp_path / "sharp"
    d.mkdir()
    for i, im in enumerate(make_toy_images(6, 72, seed=5)):
        save_image(im, d / f"scene{i:02d}.png")
    return d
