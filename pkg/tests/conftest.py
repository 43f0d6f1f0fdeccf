import numpy as np
import pytest

import pseudogames as pg


@pytest.fixture(scope="session")
def desk_linear_det():
    econ = pg.sample_random_economy(
        pg.EconomyConfig(utility="linear", transition="deterministic",
                         economy_id="desk-lin-det"),
        np.random.default_rng(2),
    )
    spec = pg.build_pseudo_game(econ)
    scheme = pg.EconomyScheme(econ)
    return econ, spec, scheme


@pytest.fixture(scope="session")
def desk_linear_stoch():
    econ = pg.sample_random_economy(
        pg.EconomyConfig(utility="linear", transition="stochastic",
                         economy_id="desk-lin-stoch"),
        np.random.default_rng(2),
    )
    spec = pg.build_pseudo_game(econ)
    scheme = pg.EconomyScheme(econ)
    return econ, spec, scheme


@pytest.fixture(scope="session")
def toy_single_step():
    """2-consumer, 2-commodity, asset-free single-spot-market economy."""
    econ = pg.sample_random_economy(
        pg.EconomyConfig(n_consumers=2, m_commodities=2, k_assets=0,
                         n_world_states=1, utility="linear",
                         transition="deterministic", init_mode="dirac",
                         economy_id="toy"),
        np.random.default_rng(11),
    )
    spec = pg.build_pseudo_game(econ)
    scheme = pg.EconomyScheme(econ)
    return econ, spec, scheme


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
