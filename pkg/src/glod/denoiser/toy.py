"""A small fully-connected noise predictor trained from scratch with numpy.

The network sees the flattened sample, sinusoidal time features and an
additive condition embedding; the null condition's embedding is a fixed zero
vector, so with conditioning dropout 1.0 the token rows are never updated
and stay equal to it.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from glod.denoiser.base import DenoiserBase
from glod.denoiser.condition import NULL, Condition
from glod.errors import InvalidArgumentError, UnknownConditionError
from glod.schedule import Schedule

log = logging.getLogger(__name__)

PARAM_NAMES = ("W1", "b1", "Wt", "W2", "b2", "W3", "b3", "Ws", "Wg", "E")


@dataclass
class TrainConfig:
    steps: int = 2000
    batch_size: int = 128
    lr: float = 2e-3
    hidden: int = 128
    time_features: int = 32
    cond_dropout: float = 0.1
    data_std: float = 0.5
    holdout_fraction: float = 0.2
    eval_repeats: int = 8
    seed: int = 0


def time_features(t, num_steps: int, dim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    angles = (1000.0 * t / num_steps) * freqs
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def preconditioning(alpha_bar, data_std: float):
    """``(c_in, c_skip, c_out)`` with ``eps = c_skip * x + c_out * F(c_in * x)``.

    ``c_skip * x`` is the best linear noise estimate for data of standard
    deviation ``data_std`` and ``c_out`` the standard deviation of what it
    leaves unexplained, so the network target has roughly unit scale at
    every noise level.
    """
    ab = np.asarray(alpha_bar, dtype=np.float64).reshape(-1, 1)
    v = ab * data_std**2 + (1.0 - ab)
    return 1.0 / np.sqrt(v), np.sqrt(1.0 - ab) / v, np.sqrt(ab) * data_std / np.sqrt(v)


class ToyMLPDenoiser(DenoiserBase):
    def __init__(self, params: dict[str, np.ndarray], vocab, schedule: Schedule, image_shape, report=None, data_std: float = 0.5):
        self.params = {k: np.array(params[k], dtype=np.float64) for k in PARAM_NAMES}
        for p in self.params.values():
            p.setflags(write=False)
        self.vocab = tuple(vocab)
        self._index = {c: i for i, c in enumerate(self.vocab)}
        self.schedule = schedule
        self.image_shape = tuple(int(n) for n in image_shape)
        self.report = dict(report or {})
        self.data_std = float(data_std)

    def knows(self, c: Condition) -> bool:
        return c.is_null or c in self._index

    def _cond_index(self, c: Condition) -> int:
        if c.is_null:
            return -1
        try:
            return self._index[c]
        except KeyError:
            raise UnknownConditionError(f"unknown condition {c}") from None

    def _embed(self, cidx: np.ndarray) -> np.ndarray:
        E = self.params["E"]
        out = np.zeros((len(cidx), E.shape[1]))
        tok = cidx >= 0
        out[tok] = E[cidx[tok]]
        return out

    def forward(self, x_t, t, cidx, keep=False):
        p = self.params
        tf = time_features(t, self.schedule.num_steps, p["Wt"].shape[0])
        if tf.shape[0] == 1 and x_t.shape[0] > 1:
            tf = np.broadcast_to(tf, (x_t.shape[0], tf.shape[1]))
        c_in, c_skip, c_out = preconditioning(self.schedule.alpha_bar[np.asarray(t)], self.data_std)
        flat = c_in * x_t
        z1 = flat @ p["W1"] + tf @ p["Wt"] + p["b1"] + self._embed(cidx)
        s1 = _sigmoid(z1)
        h1 = z1 * s1
        z2 = h1 @ p["W2"] + p["b2"]
        s2 = _sigmoid(z2)
        h2 = z2 * s2
        # per-pixel gain driven by time features: lets the net scale its input by noise level
        gain = tf @ p["Wg"]
        out = c_skip * x_t + c_out * (h2 @ p["W3"] + p["b3"] + flat @ p["Ws"] + flat * gain)
        if keep:
            return out, (flat, tf, z1, s1, h1, z2, s2, h2, c_out)
        return out

    def predict(self, x_t, t, c):
        x_t, t = self._check_input(x_t, t)
        lead = x_t.shape[:-3]
        flat = x_t.reshape(-1, int(np.prod(self.image_shape)))
        cidx = np.full(flat.shape[0], self._cond_index(c))
        return self.forward(flat, t, cidx).reshape(*lead, *self.image_shape)

    def backward(self, dout, cache, cidx) -> dict[str, np.ndarray]:
        p = self.params
        flat, tf, z1, s1, h1, z2, s2, h2, c_out = cache
        dout = dout * c_out
        g = {"W3": h2.T @ dout, "b3": dout.sum(0), "Ws": flat.T @ dout, "Wg": tf.T @ (dout * flat)}
        dz2 = (dout @ p["W3"].T) * s2 * (1.0 + z2 * (1.0 - s2))
        g["W2"] = h1.T @ dz2
        g["b2"] = dz2.sum(0)
        dz1 = (dz2 @ p["W2"].T) * s1 * (1.0 + z1 * (1.0 - s1))
        g["W1"] = flat.T @ dz1
        g["Wt"] = tf.T @ dz1
        g["b1"] = dz1.sum(0)
        dE = np.zeros_like(p["E"])
        tok = cidx >= 0
        np.add.at(dE, cidx[tok], dz1[tok])
        g["E"] = dE
        return g


def init_params(D: int, cfg: TrainConfig, vocab_size: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    H, F = cfg.hidden, cfg.time_features

    def dense(n_in, n_out):
        return rng.standard_normal((n_in, n_out)) * np.sqrt(2.0 / n_in)

    return {
        "W1": dense(D, H),
        "b1": np.zeros(H),
        "Wt": dense(F, H),
        "W2": dense(H, H),
        "b2": np.zeros(H),
        "W3": dense(H, D) * 0.1,
        "b3": np.zeros(D),
        "Ws": np.zeros((D, D)),
        "Wg": np.zeros((F, D)),
        "E": np.zeros((max(vocab_size, 1), H)),
    }


def denoising_loss(d, x0: np.ndarray, conds, seed: int, repeats: int = 8) -> float:
    """Mean squared noise-prediction error over random ``(t, noise)`` draws.

    Deterministic for a fixed ``seed``; the same draws are used for any
    denoiser, so losses of two models on one split are directly comparable.
    """
    rng = np.random.default_rng(seed)
    s = d.schedule
    x0 = np.asarray(x0, dtype=np.float64)
    conds = list(conds)
    total, count = 0.0, 0
    for _ in range(repeats):
        t = rng.integers(1, s.num_steps + 1, size=len(x0))
        noise = rng.standard_normal(x0.shape)
        ab = s.alpha_bar[t].reshape(-1, 1, 1, 1)
        x_t = np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * noise
        for i in range(len(x0)):
            err = d.predict(x_t[i], int(t[i]), conds[i]) - noise[i]
            total += float(np.sum(err**2))
            count += err.size
    return total / count


def train_toy(dataset, s: Schedule, cfg: TrainConfig | None = None) -> ToyMLPDenoiser:
    """Fit a :class:`ToyMLPDenoiser` to ``(x0, condition)`` pairs.

    The condition is swapped for the null condition with probability
    ``cfg.cond_dropout`` per example, so one network serves both the
    conditional and the unconditional prediction. The returned model's
    ``report`` holds held-out losses before and after training.
    """
    cfg = cfg or TrainConfig()
    dataset = list(dataset)
    if not dataset:
        raise InvalidArgumentError("empty dataset")
    if not 0.0 <= cfg.cond_dropout <= 1.0:
        raise InvalidArgumentError("cond_dropout must lie in [0, 1]")
    x0 = np.stack([np.asarray(x, dtype=np.float64) for x, _ in dataset])
    if x0.ndim != 4:
        raise InvalidArgumentError("samples must be (H, W, C) grids")
    conds = [c for _, c in dataset]
    vocab = sorted({c for c in conds if not c.is_null})
    index = {c: i for i, c in enumerate(vocab)}
    cidx_all = np.array([index.get(c, -1) for c in conds])

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(len(x0))
    n_hold = int(round(cfg.holdout_fraction * len(x0))) if len(x0) > 1 else 0
    n_hold = min(max(n_hold, 1 if len(x0) > 1 else 0), len(x0) - 1)
    hold, train = order[:n_hold], order[n_hold:]
    if n_hold == 0:
        hold = train

    D = int(np.prod(x0.shape[1:]))
    model = ToyMLPDenoiser(init_params(D, cfg, len(vocab), rng), vocab, s, x0.shape[1:], data_std=cfg.data_std)
    eval_seed = cfg.seed + 1
    heldout = (x0[hold], [conds[i] for i in hold])
    initial = denoising_loss(model, *heldout, seed=eval_seed, repeats=cfg.eval_repeats)

    params = {k: v.copy() for k, v in model.params.items()}
    m = {k: np.zeros_like(v) for k, v in params.items()}
    v2 = {k: np.zeros_like(v) for k, v in params.items()}
    b1, b2, eps = 0.9, 0.999, 1e-8
    xtr = x0[train].reshape(len(train), D)
    for step in range(1, cfg.steps + 1):
        lr = cfg.lr * min(1.0, 2.0 * (1.0 - (step - 1) / cfg.steps))
        pick = rng.integers(0, len(train), size=cfg.batch_size)
        t = rng.integers(1, s.num_steps + 1, size=cfg.batch_size)
        noise = rng.standard_normal((cfg.batch_size, D))
        ab = s.alpha_bar[t][:, None]
        x_t = np.sqrt(ab) * xtr[pick] + np.sqrt(1.0 - ab) * noise
        cidx = cidx_all[train][pick].copy()
        cidx[rng.random(cfg.batch_size) < cfg.cond_dropout] = -1
        model.params = params
        out, cache = model.forward(x_t, t, cidx, keep=True)
        dout = 2.0 * (out - noise) / out.size
        grads = model.backward(dout, cache, cidx)
        for k in params:
            m[k] = b1 * m[k] + (1 - b1) * grads[k]
            v2[k] = b2 * v2[k] + (1 - b2) * grads[k] ** 2
            mhat = m[k] / (1 - b1**step)
            vhat = v2[k] / (1 - b2**step)
            params[k] -= lr * mhat / (np.sqrt(vhat) + eps)
        if step % 500 == 0:
            log.debug("step %d loss %.5f", step, float(np.mean((out - noise) ** 2)))

    trained = ToyMLPDenoiser(params, vocab, s, x0.shape[1:], data_std=cfg.data_std)
    final = denoising_loss(trained, *heldout, seed=eval_seed, repeats=cfg.eval_repeats)
    trained.report = {
        "initial_heldout_mse": initial,
        "heldout_mse": final,
        "heldout_indices": [int(i) for i in hold],
        "config": asdict(cfg),
    }
    return trained


def two_color_dataset(n: int = 512, shape=(4, 4, 3), seed: int = 0, jitter: float = 0.05):
    """Bundled toy data: flat red or flat blue grids tagged with their color."""
    rng = np.random.default_rng(seed)
    colors = {
        Condition.token("color", "red"): np.array([0.8, -0.6, -0.6]),
        Condition.token("color", "blue"): np.array([-0.6, -0.6, 0.8]),
    }
    keys = list(colors)
    out = []
    for i in range(n):
        c = keys[i % 2]
        base = np.broadcast_to(colors[c][: shape[2]], shape)
        out.append((base + jitter * rng.standard_normal(shape), c))
    return out


__all__ = ["NULL", "ToyMLPDenoiser", "TrainConfig", "denoising_loss", "train_toy", "two_color_dataset"]
