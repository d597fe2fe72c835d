import numpy as np
import pytest

from grcn import gcn, synth
from grcn import rng as rngs
from grcn.graph import split_per_user


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_synth():
    spec = synth.SynthSpec(
        num_users=12,
        num_items=24,
        num_clusters=3,
        modalities={"visual": 6, "acoustic": 5},
        interactions_per_user=8,
        noise_fraction=0.25,
        seed=3,
    )
    data = synth.generate(spec)
    graph = split_per_user(data.graph, seed=rngs.stream(3, "split"))
    return data, graph


@pytest.fixture
def small_model(small_synth):
    data, graph = small_synth
    hyper = gcn.Hyperparams(
        embed_dim=8, proj_dim=8, routing_iters=2, modalities=("visual", "acoustic"), max_epochs=3
    )
    params = gcn.init_params(graph.num_users, graph.num_items, {"visual": 6, "acoustic": 5}, hyper, rngs.stream(0, "init"))
    return params, graph, data.features
