import pytest

from sensecomm.channel import FiberSpec
from sensecomm.config import ProbeScenario, ScenarioConfig, SimConfig
from sensecomm.txgen import TxConfig


@pytest.fixture
def desk_scenario():
    """Small co-propagation scenario used across integration tests: 10 km
    fiber, order-10 code with 512-chip ramps, probe power raised so the
    envelope-edge XPM phase step is ~1.5 rad."""
    return ScenarioConfig(
        tx=TxConfig(format="qpsk", sps=2),
        probe=ProbeScenario(code_order=10, ramp_len=512, peak_power_dbm=18.5),
        fiber=FiberSpec(length=10e3),
        event=None,
        sim=SimConfig(step=250.0, window_margin_chips=128, precision="single", seed=1),
    )
