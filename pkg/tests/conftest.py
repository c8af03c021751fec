import numpy as np
import pytest
import torch

from stdnet.config import ModelConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gen():
    return torch.Generator().manual_seed(1234)


@pytest.fixture
def tiny_cfg():
    """Smallest configuration that exercises every code path."""
    return ModelConfig(scale=4, channels=4, depth_layers=2, rgb_layers=2, fuse_blocks=0, seed=3)


def randn(*shape, gen=None, dtype=torch.float64):
    return torch.randn(*shape, generator=gen, dtype=dtype)


@torch.no_grad()
def randomize_heads(module, gen=None, std=0.1):
    """Give zero-initialized conv layers random weights so every path carries signal."""
    for mod in module.modules():
        if isinstance(mod, torch.nn.Conv2d) and not mod.weight.any():
            mod.weight.copy_(torch.randn(mod.weight.shape, generator=gen, dtype=mod.weight.dtype) * std)
            mod.bias.copy_(torch.randn(mod.bias.shape, generator=gen, dtype=mod.bias.dtype) * std)
    return module



# one PASS/FAIL line per acceptance criterion, printed after the run
_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None and (report.when == "call" or report.failed):
        detail = dict(item.user_properties).get("detail", "")
        _criteria[marker.args[0]] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if _criteria:
        terminalreporter.section("acceptance criteria")
        for name, (status, detail) in _criteria.items():
            terminalreporter.write_line(f"{status}  {name}: {detail}")
