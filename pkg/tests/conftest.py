import pytest

from antgan import metrics as ME
from antgan import models as M
from antgan import phantoms as P
from antgan.trainer import TrainConfig

TINY = M.ArchScale(16, 4, 1)

# reference desk run: 64px phantoms, 200 + 200 samples, 2000 iterations
REFERENCE_DATA = dict(seed=1, n_normal=200, n_abnormal=200, size=64)
REFERENCE_TRAIN = dict(iterations=2000, seed=0, split_seed=0)
REFERENCE_VARIANTS = ("cyclegan", "shortcut", "full")


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    return P.make_phantoms(0, 6, 6, 16, tmp_path_factory.mktemp("tiny") / "tiny.antd")


@pytest.fixture
def tiny_cfg(tiny_dataset, tmp_path):
    return TrainConfig(scale=TINY, iterations=3, seed=0, dataset_path=str(tiny_dataset),
                       out_dir=str(tmp_path / "run"))


@pytest.fixture(scope="session")
def reference_dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("reference") / "phantoms.antd"
    return P.make_phantoms(out_path=path, **REFERENCE_DATA)


@pytest.fixture(scope="session")
def reference_run(reference_dataset, tmp_path_factory):
    """Train the three ablation variants once per session; returns (out_dir, reports)."""
    out = tmp_path_factory.mktemp("ablation")
    cfg = TrainConfig(dataset_path=str(reference_dataset), out_dir=str(out), **REFERENCE_TRAIN)
    reports = ME.ablate(cfg, REFERENCE_VARIANTS, out)
    return out, reports


# one PASS/FAIL line per acceptance criterion at the end of the run

_criteria = {}


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    for key, value in report.user_properties:
        if key == "criterion":
            title = value
            break
    else:
        return
    detail = dict(report.user_properties).get("detail", "")
    prev = _criteria.get(title)
    if report.when == "call" or report.failed:
        passed = report.passed and (prev is None or prev[0])
        _criteria[title] = (passed, detail or (prev[1] if prev else ""))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for title in sorted(_criteria, key=lambda t: int(t.split()[0])):
        passed, detail = _criteria[title]
        line = f"{'PASS' if passed else 'FAIL'}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
