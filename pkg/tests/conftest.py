import pytest

from dmfevo import presets, synth_cohort
from dmfevo.dmf import default_ranges


@pytest.fixture(scope="session")
def ranges():
    return default_ranges()


@pytest.fixture(scope="session")
def small_cohort():
    """Noise-free 28-region cohort from the homogeneous generating point."""
    return synth_cohort(28, 4, 3, presets.default_truth(), 0.0, seed=42)


@pytest.fixture(scope="session")
def noisy_cohort():
    """28-region cohort with SC noise and planted behavior targets."""
    return synth_cohort(28, 4, 6, presets.default_truth(), 0.08, seed=1234)


@pytest.fixture(scope="session")
def subject(small_cohort):
    return small_cohort.subjects[0]


@pytest.fixture(scope="session")
def parcellation(small_cohort):
    return small_cohort.parcellation
