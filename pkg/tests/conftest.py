import os

import pytest
from hypothesis import HealthCheck, settings

from formkie.synth import default_specs, generate_template

settings.register_profile(
    "default", deadline=None, max_examples=100, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", deadline=None, max_examples=300)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def templates():
    return [generate_template(s, seed=k) for k, s in enumerate(default_specs())]
