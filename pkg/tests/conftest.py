import pytest

from helpers import make_cfg


@pytest.fixture
def cfg_slash22():
    return make_cfg(("10.0.0.0/22",))


@pytest.fixture
def cfg_sketch():
    # Above the exact-set cutoff (2^20 addresses) so destination counting
    # switches to the sketch path.
    return make_cfg(("10.0.0.0/11",))
