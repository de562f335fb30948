import numpy as np
import pytest
import torch

from integrated_cell.datagen import SyntheticCellSpec, generate_corpus
from integrated_cell.model import ModelConfig


@pytest.fixture
def tiny_config():
    return ModelConfig(image_size=8, latent_dim=4, n_classes=3, width=1 / 32,
                       output_batchnorm=False)


@pytest.fixture
def small_config():
    return ModelConfig(image_size=32, latent_dim=8, n_classes=4, width=0.125,
                       output_batchnorm=False)


@pytest.fixture(scope="session")
def small_corpus():
    images, records = generate_corpus(SyntheticCellSpec(n=64, n_classes=4, image_size=32, seed=3))
    labels = np.array([r["label"] for r in records])
    return torch.from_numpy(images), torch.from_numpy(labels), records


# -- acceptance-criterion reporting ------------------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when == "teardown" or (rep.when == "setup" and rep.passed):
        return
    n, title = marker.args
    entry = _CRITERIA.setdefault(n, {"title": title, "ok": True, "details": []})
    entry["ok"] &= rep.passed
    entry["details"] += [v for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        e = _CRITERIA[n]
        line = f"criterion {n}: {'PASS' if e['ok'] else 'FAIL'}  {e['title']}"
        if e["details"]:
            line += "  [" + "; ".join(e["details"]) + "]"
        terminalreporter.write_line(line)
