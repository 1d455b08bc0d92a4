"""Shared fixtures: synthetic image-classification data written as IDX files,
common task specs, and a per-criterion pass/fail line for the acceptance run."""

import os
import struct

import numpy as np
import pytest

from evoopt.tasks import BlobsSource, IdxSource, TaskSpec

IMAGE_SIDE = 28
N_CLASSES = 10
TEMPLATE_SEED = 2026
SAMPLE_SEED = 99
N_TRAIN = 12000
N_TEST = 2000


def _class_templates(seed):
    gy, gx = np.mgrid[0:IMAGE_SIDE, 0:IMAGE_SIDE]
    templates = []
    for c in range(N_CLASSES):
        rng = np.random.default_rng((seed, c))
        img = np.zeros((IMAGE_SIDE, IMAGE_SIDE))
        for _ in range(4):
            cy, cx = rng.uniform(6, 22, 2)
            width = rng.uniform(1.5, 3.0)
            img += np.exp(-(((gy - cy) ** 2 + (gx - cx) ** 2) / (2 * width * width)))
        templates.append(img / img.max())
    return templates


def _sample_images(templates, scales, n, rng):
    labels = rng.integers(0, N_CLASSES, n)
    images = np.zeros((n, IMAGE_SIDE, IMAGE_SIDE))
    for i, c in enumerate(labels):
        sy, sx = rng.integers(-3, 4, 2)
        img = np.roll(np.roll(templates[c], sy, axis=0), sx, axis=1)
        img = np.clip(img + 0.35 * rng.standard_normal((IMAGE_SIDE, IMAGE_SIDE)), 0.0, 1.0)
        images[i] = img * scales
    return np.round(images * 255).astype(np.uint8), labels.astype(np.uint8)


def write_idx_pair(images_path, labels_path, images, labels):
    """Write one IDX image/label file pair byte-by-byte per the format."""
    n = images.shape[0]
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, IMAGE_SIDE, IMAGE_SIDE))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())


@pytest.fixture(scope="session")
def synth_mnist_dir(tmp_path_factory):
    """Deterministic MNIST-shaped dataset (10 classes, 28x28, uint8 pixels)
    written as IDX files. Class templates are Gaussian-bump mixtures; samples
    add spatial jitter and pixel noise, and per-pixel intensity scales are
    log-uniform in [0.02, 1] so the loss surface is strongly anisotropic."""
    out = tmp_path_factory.mktemp("idxdata")
    templates = _class_templates(TEMPLATE_SEED)
    srng = np.random.default_rng((TEMPLATE_SEED, 101))
    scales = np.exp(srng.uniform(np.log(0.02), 0.0, IMAGE_SIDE * IMAGE_SIDE))
    scales = scales.reshape(IMAGE_SIDE, IMAGE_SIDE)
    rng = np.random.default_rng(SAMPLE_SEED)
    train_images, train_labels = _sample_images(templates, scales, N_TRAIN, rng)
    test_images, test_labels = _sample_images(templates, scales, N_TEST, rng)
    write_idx_pair(
        str(out / "train-images-idx3-ubyte"), str(out / "train-labels-idx1-ubyte"),
        train_images, train_labels,
    )
    write_idx_pair(
        str(out / "t10k-images-idx3-ubyte"), str(out / "t10k-labels-idx1-ubyte"),
        test_images, test_labels,
    )
    return str(out)


@pytest.fixture(scope="session")
def mnist_source(synth_mnist_dir):
    d = synth_mnist_dir
    return IdxSource(
        train_images=os.path.join(d, "train-images-idx3-ubyte"),
        train_labels=os.path.join(d, "train-labels-idx1-ubyte"),
        test_images=os.path.join(d, "t10k-images-idx3-ubyte"),
        test_labels=os.path.join(d, "t10k-labels-idx1-ubyte"),
    )


def mnist_task(source, steps, name="mnist"):
    return TaskSpec(
        name=name,
        source=source,
        hidden_width=64,
        batch_size=64,
        steps=steps,
        subset_size=2000,
    )


def blobs4_task(steps, name="blobs4"):
    """The four-class sigma=0.3 blobs problem used across the test suite."""
    return TaskSpec(
        name=name,
        source=BlobsSource(seed=7, n_per_class=250, d=2, classes=4, sigma=0.3),
        hidden_width=16,
        batch_size=64,
        steps=steps,
    )


def easy_blobs_task(steps, name="blobs2"):
    """Nearly separable two-class blobs (sigma=0.05)."""
    return TaskSpec(
        name=name,
        source=BlobsSource(seed=5, n_per_class=100, d=2, classes=2, sigma=0.05),
        hidden_width=16,
        batch_size=32,
        steps=steps,
    )


def pytest_runtest_logreport(report):
    # One visible pass/fail line per acceptance criterion.
    if report.when == "call" and "test_acceptance" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        outcome = "PASS" if report.passed else "FAIL"
        print(f"\n[acceptance] {name}: {outcome}", flush=True)
