import pytest

from vlpnav.cli import main


@pytest.fixture(scope="session")
def mini_dataset(tmp_path_factory):
    """One shared 'mini' dataset directory for CLI-level tests."""
    out = tmp_path_factory.mktemp("data") / "mini"
    assert main(["simulate", "--scenario", "mini", "--out", str(out)]) == 0
    return out
