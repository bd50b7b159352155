import numpy as np
import pytest

from cfdpad.backbone import ModelConfig, init_model, model_from_arrays

SMALL = ModelConfig(
    input_h=8,
    input_w=8,
    input_ch=1,
    feature_channels=4,
    embed_dim=5,
    embed_channels=3,
    generator_stages=((3, 2), (4, 1)),
)


@pytest.fixture
def small_config():
    return SMALL


@pytest.fixture
def small_model():
    return init_model(SMALL, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def linear_two_channel_model(w_live=(np.log(6.0), np.log(1.5))):
    """Two feature channels; E passes channel means straight through; C scores live by a weighted sum.

    With constant unit feature maps the live logit is ``w_live[0] + w_live[1]``
    and the spoof logit is 0.
    """
    cfg = ModelConfig(
        input_h=4, input_w=4, input_ch=1, feature_channels=2, embed_dim=2, embed_channels=2, generator_stages=((2, 1),)
    )
    e_conv = np.zeros((2, 2, 3, 3))
    e_conv[0, 0, 1, 1] = 1.0
    e_conv[1, 1, 1, 1] = 1.0
    c_w = np.array([list(w_live), [0.0, 0.0]])
    arrays = {
        "g.conv0.w": np.zeros((2, 1, 3, 3)),
        "g.conv0.b": np.ones(2),
        "e.conv.w": e_conv,
        "e.conv.b": np.zeros(2),
        "e.fc.w": np.eye(2),
        "e.fc.b": np.zeros(2),
        "c.fc.w": c_w,
        "c.fc.b": np.zeros(2),
    }
    return model_from_arrays(cfg, arrays)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
