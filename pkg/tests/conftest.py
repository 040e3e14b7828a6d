import numpy as np
import pytest

from glod.denoiser import AnalyticMixtureDenoiser, Condition, MixtureSpec
from glod.schedule import make_schedule


def single_gaussian(mean, std, schedule, cond=None):
    """Analytic backend for one isotropic Gaussian over an image-shaped mean."""
    mean = np.asarray(mean, dtype=np.float64)
    cmap = {cond: (0,)} if cond is not None else {}
    spec = MixtureSpec(np.ones(1), mean[None], np.array([std**2]), cmap)
    return AnalyticMixtureDenoiser(spec, schedule)


def log_density(x, spec, alpha_bar, idx=None):
    """Reference log p_t(x) of the noised mixture, written out component by component."""
    idx = range(spec.num_components) if idx is None else idx
    w = np.array([spec.weights[k] for k in idx])
    w = w / w.sum()
    D = x.size
    terms = []
    for wk, k in zip(w, idx):
        v = alpha_bar * spec.variances[k] + 1.0 - alpha_bar
        r = x - np.sqrt(alpha_bar) * spec.means[k]
        terms.append(np.log(wk) - 0.5 * D * np.log(2 * np.pi * v) - 0.5 * np.sum(r * r) / v)
    terms = np.array(terms)
    m = terms.max()
    return m + np.log(np.exp(terms - m).sum())


@pytest.fixture
def karras50():
    return make_schedule(50)


@pytest.fixture
def two_blob():
    """Two-component mixture on a 4x4x1 grid: bright left half or bright right half."""
    H = W = 4
    left = -0.5 * np.ones((H, W, 1))
    left[:, :2] = 0.8
    right = -0.5 * np.ones((H, W, 1))
    right[:, 2:] = 0.8
    a, b = Condition.token("blob", "left"), Condition.token("blob", "right")
    spec = MixtureSpec(np.array([0.5, 0.5]), np.stack([left, right]), np.array([0.04, 0.04]), {a: (0,), b: (1,)})
    return spec, a, b
