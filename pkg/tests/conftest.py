import os

# Cap BLAS fan-out before numpy loads: the test matrices are small enough
# that thread-pool synchronization would dominate the runtime.
os.environ.setdefault("OPENBLAS_NUM_THREADS", "2")
os.environ.setdefault("OMP_NUM_THREADS", "2")

import pathlib

import pytest

MNIST_DIR = pathlib.Path(os.environ.get("SASGP_MNIST_DIR", pathlib.Path(__file__).resolve().parent.parent / "data" / "mnist"))

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte.gz",
    "train_labels": "train-labels-idx1-ubyte.gz",
    "test_images": "t10k-images-idx3-ubyte.gz",
    "test_labels": "t10k-labels-idx1-ubyte.gz",
}


def mnist_paths() -> dict | None:
    paths = {k: MNIST_DIR / v for k, v in MNIST_FILES.items()}
    if all(p.exists() for p in paths.values()):
        return {k: str(v) for k, v in paths.items()}
    return None


@pytest.fixture(scope="session")
def mnist():
    paths = mnist_paths()
    if paths is None:
        pytest.skip(
            f"MNIST IDX files not found under {MNIST_DIR}; "
            "run scripts/fetch_mnist.py or set SASGP_MNIST_DIR"
        )
    return paths
