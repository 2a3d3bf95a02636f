import numpy as np
import pytest

from plumewatch.rtlut import AbsorptionModel, build_lut, default_grids


@pytest.fixture(scope="session")
def lut():
    """Default transmittance table from the shipped absorption model."""
    return build_lut(AbsorptionModel.from_file(), *default_grids())


@pytest.fixture(scope="session")
def clean_scene_200():
    """A hole-free 200x200 background scene for physics round trips."""
    from plumewatch import synth

    spec = synth.SiteSpec(site_id="phys", seed=4242, hole_probability=0.0)
    return synth.render_scene(spec, 0, shape=(200, 200))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
