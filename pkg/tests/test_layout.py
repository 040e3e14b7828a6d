import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glod.composer import Box, Entry, LayerStack
from glod.denoiser import NULL, AnalyticMixtureDenoiser, Condition, MixtureSpec
from glod.errors import InvalidArgumentError
from glod.layout import (
    LayoutConfig,
    LayoutTarget,
    cell_basis,
    energy_gradient,
    evidence_maps,
    layout_control,
    layout_energy,
)
from glod.sampler import SamplerConfig, glod_sample
from glod.schedule import make_schedule

BLOB = Condition.token("blob")
LEFT = Box(0.0, 0.0, 0.5, 1.0)


def blob_world(H=8, W=8):
    """Blob on the left, blob on the right, or no blob; the blob condition allows either side."""

    def img(cols):
        m = np.full((H, W, 1), -0.5)
        if cols is not None:
            m[2:6, cols] = 0.8
        return m

    means = np.stack([img(slice(1, 4)), img(slice(4, 7)), img(None)])
    return MixtureSpec(np.full(3, 1 / 3), means, np.full(3, 0.01), {BLOB: (0, 1)})


@pytest.fixture
def world():
    s = make_schedule(50)
    return AnalyticMixtureDenoiser(blob_world(), s), s


def test_cell_basis_partitions_image():
    b = cell_basis((8, 6, 3), 8)
    assert b.shape == (48, 8, 6, 3)
    np.testing.assert_array_equal(b.sum(axis=0), 1.0)
    b = cell_basis((16, 16, 1), 8)
    assert b.shape == (64, 16, 16, 1) and np.all(b.sum(axis=(1, 2, 3)) == 4)


def test_identity_cases(world):
    d, s = world
    x = np.random.default_rng(0).standard_normal((8, 8, 1))
    tg = [LayoutTarget(BLOB, LEFT)]
    assert layout_control(x, 50, [], d, s) is x
    assert layout_control(x, 50, tg, d, s, LayoutConfig(enabled=False)) is x
    assert layout_control(x, 50, tg, d, s, LayoutConfig(step_scale=0.0)) is x
    # the stage only runs in the first 40% of steps (t = 50..31)
    assert layout_control(x, 30, tg, d, s) is x
    assert layout_control(x, 31, tg, d, s) is not x


def test_malformed_target(world):
    d, s = world
    with pytest.raises(InvalidArgumentError):
        LayoutTarget(BLOB, (0.5, 0.0, 0.2, 1.0))
    with pytest.raises(InvalidArgumentError):
        layout_control(np.zeros((8, 8, 1)), 50, [(BLOB, LEFT)], d, s)


def test_evidence_maps_normalized():
    rng = np.random.default_rng(1)
    p = {NULL: rng.standard_normal((4, 4, 2)), BLOB: rng.standard_normal((4, 4, 2))}
    p[Condition.token("same")] = p[NULL].copy()
    m = evidence_maps(p, [BLOB, Condition.token("same")])
    assert m.shape == (2, 4, 4)
    assert m[0].sum() == pytest.approx(1.0) and np.all(m[0] >= 0)
    np.testing.assert_array_equal(m[1], 0.0)


def test_energy_nonnegative_and_zero_when_evidence_inside():
    # a backend whose conditional guidance lives only in the left half
    s = make_schedule(20)
    left = np.zeros((4, 4, 1))
    left[:, :2] = 1.0
    spec = MixtureSpec(np.array([0.5, 0.5]), np.stack([left, np.zeros((4, 4, 1))]), np.array([0.1, 0.1]), {BLOB: (0,)})
    d = AnalyticMixtureDenoiser(spec, s)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((10, 4, 4, 1))
    e_left = layout_energy(x, 10, [LayoutTarget(BLOB, LEFT)], d)
    assert np.all(e_left >= 0)
    # guidance differs only where the means differ, so with constant right-half
    # values the energy vanishes
    x[..., 2:, :] = 0.3
    np.testing.assert_allclose(layout_energy(x, 10, [LayoutTarget(BLOB, LEFT)], d), 0.0, atol=1e-20)
    e_right = layout_energy(x, 10, [LayoutTarget(BLOB, Box(0.5, 0, 1, 1))], d)
    assert np.all(e_right > 0.5)


def test_energy_gradient_matches_directional_derivative(world):
    # oracle: derivative of the energy along an arbitrary cell-constant direction
    d, s = world
    rng = np.random.default_rng(3)
    x = 0.3 * rng.standard_normal((8, 8, 1))
    x[2:6, 4:7] += 0.5
    tg = [LayoutTarget(BLOB, LEFT)]
    cfg = LayoutConfig()
    g = energy_gradient(x, 45, tg, d, cfg)
    coeffs = rng.standard_normal(64)
    direction = np.einsum("n,nhwc->hwc", coeffs, cell_basis((8, 8, 1)))
    h = 1e-5
    fd = (layout_energy(x + h * direction, 45, tg, d) - layout_energy(x - h * direction, 45, tg, d)) / (2 * h)
    assert float(np.sum(g * direction)) == pytest.approx(float(fd), rel=1e-4, abs=1e-9)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.integers(31, 50), clip=st.floats(0.01, 2.0), k=st.integers(1, 4))
def test_bounded_update(seed, t, clip, k):
    s = make_schedule(50)
    d = AnalyticMixtureDenoiser(blob_world(), s)
    x = np.random.default_rng(seed).standard_normal((8, 8, 1)) * 3
    cfg = LayoutConfig(iterations=k, grad_clip=clip)
    out = layout_control(x, t, [LayoutTarget(BLOB, LEFT)], d, s, cfg)
    eta = cfg.step_scale * s.sigma[t]
    assert np.max(np.abs(out - x)) <= k * eta * clip * (1 + 1e-12)


def test_layout_control_lowers_energy(world):
    d, s = world
    rng = np.random.default_rng(4)
    x = rng.standard_normal((20, 8, 8, 1)) * 5
    tg = [LayoutTarget(BLOB, LEFT)]
    before = layout_energy(x, 45, tg, d)
    after = layout_energy(layout_control(x, 45, tg, d, s), 45, tg, d)
    assert after.mean() < before.mean()


def test_layout_control_batched_matches_single(world):
    d, s = world
    x = np.random.default_rng(5).standard_normal((3, 8, 8, 1))
    tg = [LayoutTarget(BLOB, LEFT)]
    batched = layout_control(x, 48, tg, d, s)
    for i in range(3):
        np.testing.assert_allclose(batched[i], layout_control(x[i], 48, tg, d, s), rtol=1e-12, atol=1e-12)


def left_fraction(x, d, s):
    r = d.responsibilities_at(x, s.alpha_bar[1])
    lab = r.argmax(-1)
    blob = lab != 2
    return float(np.mean(lab[blob] == 0)), float(blob.mean())


def test_layout_steers_blob_left_small_sample(world):
    d, s = world
    stack = LayerStack.of([Entry(BLOB, 1.0)])
    tg = (LayoutTarget(BLOB, LEFT),)
    on, _ = glod_sample(SamplerConfig(s, stack, (8, 8, 1), tg, LayoutConfig(), seed=1, num_chains=200), d)
    off, _ = glod_sample(SamplerConfig(s, stack, (8, 8, 1), tg, LayoutConfig(enabled=False), seed=1, num_chains=200), d)
    assert left_fraction(on, d, s)[0] > 0.8
    assert 0.35 < left_fraction(off, d, s)[0] < 0.65
