import shutil
import tempfile

import pytest

from fusesim import crypto
from fusesim.chain import ChainParams
from fusesim.common import Role


@pytest.fixture(scope="session")
def data_dir():
    """Fixture to create a temporary directory for scenario files."""
    data_dir = tempfile.mkdtemp()

    yield data_dir

    shutil.rmtree(data_dir)


@pytest.fixture(scope="session")
def output_dir():
    """Fixture to create a temporary directory for traces."""
    output_dir = tempfile.mkdtemp()

    yield output_dir

    shutil.rmtree(output_dir)


@pytest.fixture(scope="session")
def keys():
    """Deterministic key pairs for both parties."""
    return {role: crypto.keygen(0, role.label) for role in Role}


@pytest.fixture(scope="session")
def params():
    """Default chain parameters: d=10, t=12, max_bb=1."""
    return ChainParams()


@pytest.fixture(scope="session")
def params_bb2():
    """Chain parameters with a two-round inclusion bound."""
    return ChainParams(d=10, t=14, max_bb=2)
