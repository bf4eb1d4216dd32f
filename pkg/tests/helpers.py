import numpy as np

from mindctl.dataset import SampleSet


def make_toy_samples(n=200, seed=7, spread=2.0, n_classes=2):
    """Displaced 64-dimensional Gaussians, one cluster per label.

    Two classes sit at +-spread along every dimension; with more classes
    each label gets its own 12-wide block of shifted dimensions.
    """
    rng = np.random.default_rng(seed)
    labels = rng.integers(1, n_classes + 1, size=n)
    features = rng.normal(size=(n, 64))
    if n_classes == 2:
        features += np.where(labels[:, None] == 1, spread, -spread)
    else:
        for c in range(1, n_classes + 1):
            block = slice((c - 1) * 12, c * 12)
            features[labels == c, block] += 1.5 * spread
    return SampleSet(features, labels)
