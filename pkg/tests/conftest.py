import pytest

from protogen.model_adapter import TrainConfig, load_model, train_toy_model
from protogen.toydata import make_patch_dataset

TOY_SEED = 0

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, text): acceptance criterion line")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
        measured = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        if rep.outcome == "skipped" and isinstance(rep.longrepr, tuple):
            measured = measured or rep.longrepr[2]
        _criteria[mark.args[0]] = (status, mark.args[1], measured)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")

    def order(label):
        num = "".join(ch for ch in label if ch.isdigit())
        return (int(num) if num else 0, label)

    for label in sorted(_criteria, key=order):
        status, text, measured = _criteria[label]
        line = f"{status:4}  criterion {label:<3} {text}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    return make_patch_dataset(tmp_path_factory.mktemp("patches"), seed=TOY_SEED)


@pytest.fixture(scope="session")
def toy_model_path(toy_dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("toy-model") / "toy-cnn.pt"
    train_toy_model(toy_dataset, TrainConfig(seed=TOY_SEED, out_path=str(out)))
    return out


@pytest.fixture(scope="session")
def toy_model(toy_model_path):
    return load_model(toy_model_path)


@pytest.fixture(scope="session")
def random_toy():
    return load_model("toy-cnn", allow_random_init=True, seed=0)
