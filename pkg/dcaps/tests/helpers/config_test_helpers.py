"""
Helper functions for configuration and dataset fixtures in dcaps tests.
"""
import os
import tempfile
from pathlib import Path

import numpy as np
import yaml

from dcaps.data.toy import generate_toy_dataset, write_toy_dataset
from dcaps.network.config import tiny_config

TINY_SIZE = (8, 10)


def create_test_config_file(sections, config_version="1.0"):
    """
    Create a temporary YAML config file for testing.

    Args:
        sections: Dict like {"training": {"epochs": 2}, "global": {"threads": 1}}

    Returns:
        Tuple of (config_path, temp_dir) - caller should clean up temp_dir

    Example:
        config_path, temp_dir = create_test_config_file({
            "training": {"epochs": 1, "batch_size": 2}
        })
        # ... use config_path ...
        shutil.rmtree(temp_dir)
    """
    temp_dir = tempfile.mkdtemp()
    config_path = os.path.join(temp_dir, "test_config.yaml")

    config_data = {"dcaps": {"config_version": config_version}}
    config_data.update(sections)

    with open(config_path, 'w') as f:
        yaml.dump(config_data, f)

    return config_path, temp_dir


def write_tiny_dataset(out_dir, n_polyps=8, per_polyp=2, seed=0, size=TINY_SIZE, positive="mixed"):
    """
    Generate and write a small toy dataset; returns the manifest path.

    Example:
        manifest = write_tiny_dataset(tmp_path / "data")
    """
    dataset = generate_toy_dataset(n_polyps, per_polyp, seed, size=size, positive=positive)
    return write_toy_dataset(Path(out_dir), dataset)


def tiny_cli_args(height=TINY_SIZE[0], width=TINY_SIZE[1]):
    """
    ``--preset tiny`` plus the ``--set`` overrides that keep a CLI run fast.
    """
    return [
        "--preset", "tiny",
        "--set", f"data.height={height}",
        "--set", f"data.width={width}",
        "--set", "training.batch_size=4",
    ]


def random_images(rng, n, size=TINY_SIZE):
    """``n`` random ``H×W×3`` float images in [0, 1]."""
    return rng.uniform(0.0, 1.0, size=(n, size[0], size[1], 3))


def tiny_network_config(num_classes=1, routing=3):
    return tiny_config(*TINY_SIZE, num_classes=num_classes, routing=routing)


def assert_allclose_exact(actual, expected, atol=1e-12):
    """Tight comparison used for closed-form and oracle checks."""
    np.testing.assert_allclose(np.asarray(actual), np.asarray(expected), rtol=0, atol=atol)
