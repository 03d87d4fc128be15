import pytest

from msrc.config import parse_text
from msrc.synthetic import write_split

FAST = """
[data]
train_path = {train}
test_path = {test}
schema = synthetic
max_train = 0
max_test = 0

[window]
sw = 32
k = 3

[sae]
pretrain_epochs = 5
finetune_epochs = 5
batch_size = 32

[residual]
epochs = 5
channels = 4
group_width = 8

[run]
seed = 0
folds = 3
out_dir = {out}
"""


@pytest.fixture(scope="session")
def synthetic_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("synthetic")
    return write_split(d, n_train=640, n_test=320, d=8, seed=0)


@pytest.fixture
def fast_config_text(synthetic_files, tmp_path):
    train, test = synthetic_files
    return FAST.format(train=train, test=test, out=tmp_path / "out")


@pytest.fixture
def fast_config(fast_config_text):
    return parse_text(fast_config_text)


@pytest.fixture
def config_file(fast_config_text, tmp_path):
    p = tmp_path / "run.ini"
    p.write_text(fast_config_text)
    return p


# acceptance verdicts, one line per criterion in the terminal summary

_VERDICTS = {}


@pytest.fixture
def detail(request):
    """Attach a one-line measurement to the acceptance verdict of this test."""
    def note(text):
        request.node.user_properties.append(("detail", text))
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and not (rep.failed or rep.skipped)):
        return
    number, title = mark.args
    if rep.skipped:
        status = "SKIP"
        reason = rep.longrepr[2] if isinstance(rep.longrepr, tuple) else str(rep.longrepr)
        notes = [reason.removeprefix("Skipped: ")]
    else:
        status = "PASS" if rep.passed else "FAIL"
        notes = [v for k, v in item.user_properties if k == "detail"]
    _VERDICTS[number] = f"criterion {number} {status}: {title}" + (f" ({'; '.join(notes)})" if notes else "")


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        terminalreporter.write_line(_VERDICTS[number])
