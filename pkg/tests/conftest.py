import pytest

from underloc.synth import Perturbation, generate_survey, write_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Two-pass 8-view survey with mild noise, written in interchange formats."""
    root = tmp_path_factory.mktemp("small_dataset")
    survey = generate_survey(
        seed=21,
        n_views=8,
        overlap_fraction=0.5,
        n_passes=2,
        perturbation=Perturbation(brightness_gain=0.85, additive_noise_sigma=2 / 255),
    )
    manifests = write_dataset(survey, root)
    return {"root": root, "survey": survey, "manifests": manifests}
