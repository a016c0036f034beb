import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cineseg import kernels
from cineseg.dataio import PhantomParams
from cineseg.network import NetworkConfig, build

settings.register_profile(
    "default",
    deadline=None,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(params=kernels.BACKENDS)
def backend(request):
    prev = kernels.get_backend()
    kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(prev)


NOISE_FREE = PhantomParams(noise=(0.0, 0.0))


def oracle_network():
    """Hand-set depth-1 ReLU net that segments noise-free phantoms exactly.

    The blood pool is the only region with intensity in (0.3, 0.7): the
    first conv computes relu(x - 0.3) and relu(x - 0.7), the decoder keeps
    pixels where the first is positive and the second zero, and the head
    scales that up into a confident logit. Bottleneck and up path are zero.
    """
    net = build(NetworkConfig(depth=1, base_channels=2, activation="relu"))
    for _, p in net.named_parameters():
        p.data = np.zeros(p.shape)
    params = dict(net.named_parameters())
    w = params["enc0.conv0.weight"].data
    w[0, 0, 1, 1] = w[1, 0, 1, 1] = 1.0
    params["enc0.conv0.bias"].data = np.array([-0.3, -0.7])
    w = params["enc0.conv1.weight"].data
    w[0, 0, 1, 1] = w[1, 1, 1, 1] = 1.0
    w = params["dec0.conv0.weight"].data  # inputs: skip r0, skip r1, up, up
    w[0, 0, 1, 1] = 1.0
    w[0, 1, 1, 1] = -100.0
    params["dec0.conv0.bias"].data = np.array([-0.01, 0.0])
    params["dec0.conv1.weight"].data[0, 0, 1, 1] = 1.0
    params["head.weight"].data[0, 0, 0, 0] = 1000.0
    params["head.bias"].data = np.array([-1.0])
    return net
