import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--full",
        action="store_true",
        default=False,
        help="also run the full-scale reference pipeline (hours; needs SPHEREREC_ML10M)",
    )


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "full_scale: full-dataset reference run, enabled by --full"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--full"):
        return
    skip = pytest.mark.skip(reason="full-scale reference run only with --full")
    for item in items:
        if "full_scale" in item.keywords:
            item.add_marker(skip)
