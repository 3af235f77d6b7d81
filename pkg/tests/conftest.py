import pytest

from helpers import write_dataset


@pytest.fixture
def dataset_dir(tmp_path):
    root = tmp_path / "cameras"
    write_dataset(root)
    return root
