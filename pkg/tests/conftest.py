import pytest

from chartnet.dataset import DatasetConfig, build_dataset, build_vocab


@pytest.fixture(scope="session")
def bar_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("bar_data")
    manifest = build_dataset(DatasetConfig(root=str(root), chart_type="bar", n_train=12, n_val=4, n_test=4,
                                           seed=3, render_resolution=224))
    return manifest, build_vocab(manifest)


@pytest.fixture(scope="session")
def pie_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("pie_data")
    manifest = build_dataset(DatasetConfig(root=str(root), chart_type="pie", n_train=12, n_val=4, n_test=4,
                                           seed=5, render_resolution=224))
    return manifest, build_vocab(manifest)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda ln: int(ln.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
