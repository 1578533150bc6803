import os

import pytest

from drums.phantom import jittered_spec, write_subject


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory):
    """A small two-coil dataset with one subject, both modalities."""
    root = tmp_path_factory.mktemp("data")
    spec = jittered_spec(0, grid=(32, 32), n_coils=2)
    write_subject(
        os.path.join(root, "subj00"),
        spec,
        modalities=("T1", "T2"),
        accelerations=(2, 4),
        acs_lines=8,
    )
    return str(root)
