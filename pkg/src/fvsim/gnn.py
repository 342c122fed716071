"""Attention-based spatial-temporal graph network for popularity forecasting.

The model takes the last tau chunks of per-view switching popularity as an
(N, tau) matrix and predicts the next ``horizon`` chunks.  Each block applies
temporal attention, a spatially-attended Chebyshev graph convolution, and a
width-3 temporal convolution with ReLU; a shared fully connected head plus a
per-view elementwise weight produce the forecast.  Training minimizes mean
absolute error with Adam.

Exact contraction orders (X is N x tau, features are scalar per view/chunk):

  spatial:   lhs = outer(X @ w1, w2)            # (N, tau)
             rhs = (w3 * X)^T                   # (tau, N)
             Y   = sigmoid(lhs @ rhs + bias) @ V  then row-softmax -> (N, N)
  temporal:  lhs = outer(X^T @ u1, u2)          # (tau, N)
             rhs = u3 * X                       # (N, tau)
             Z   = sigmoid(lhs @ rhs + bias) @ V  then row-softmax -> (tau, tau)
  conv:      sum_{m=1..M} s_m * ((T_m(Lt) ⊙ Y') @ (X @ Z'))
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, InsufficientHistory, NonFiniteValue, ShapeError
from .graph import ViewGraph

CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    tau: int = 10
    horizon: int = 1
    cheb_order: int = 2
    blocks: int = 2
    lr: float = 0.005
    batch_size: int = 32
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.tau < 1 or self.horizon < 1:
            raise ConfigError("tau and horizon must be >= 1")
        if self.cheb_order < 1 or self.blocks < 1:
            raise ConfigError("cheb_order and blocks must be >= 1")
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("lr > 0, batch_size >= 1, epochs >= 0 required")


def init_params(n_views: int, cfg: TrainConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Seeded parameter initialization.

    Attention biases start at zero, the temporal kernel near identity, and
    the output weights at one, so an untrained model is a mild smoother
    rather than noise.
    """
    n, tau = n_views, cfg.tau
    params: dict[str, np.ndarray] = {}
    for b in range(cfg.blocks):
        p = f"b{b}_"
        params[p + "sa_w1"] = rng.uniform(-0.5, 0.5, tau) / np.sqrt(tau)
        params[p + "sa_w2"] = rng.uniform(-0.5, 0.5, tau) / np.sqrt(tau)
        params[p + "sa_w3"] = rng.uniform(-0.5, 0.5, ())
        params[p + "sa_bias"] = np.zeros((n, n))
        params[p + "sa_v"] = np.eye(n) + rng.uniform(-0.1, 0.1, (n, n))
        params[p + "ta_w1"] = rng.uniform(-0.5, 0.5, n) / np.sqrt(n)
        params[p + "ta_w2"] = rng.uniform(-0.5, 0.5, n) / np.sqrt(n)
        params[p + "ta_w3"] = rng.uniform(-0.5, 0.5, ())
        params[p + "ta_bias"] = np.zeros((tau, tau))
        params[p + "ta_v"] = np.eye(tau) + rng.uniform(-0.1, 0.1, (tau, tau))
        params[p + "cheb"] = rng.uniform(-0.1, 0.1, cfg.cheb_order)
        params[p + "conv_w"] = np.array([0.0, 1.0, 0.0]) + rng.uniform(-0.05, 0.05, 3)
        # slightly positive biases keep the ReLUs alive at initialization;
        # a zero start can silence the whole head and kill every gradient
        params[p + "conv_b"] = np.full((), 0.01)
    params["fc_w"] = rng.uniform(-0.5, 0.5, (tau, cfg.horizon)) / np.sqrt(tau)
    params["fc_b"] = np.full(cfg.horizon, 0.05)
    params["out_w"] = np.ones((n, cfg.horizon))
    return params


class StGnn:
    """Stateful model: parameters, optimizer moments, and the view graph.

    Training and prediction rescale the history to unit mean magnitude and
    scale the outputs back, so convergence does not depend on the raw data
    scale (per-view popularity fractions can sit three orders of magnitude
    below one).  The scale is recomputed from whatever history is passed
    in, never stored, which keeps checkpoints and resumed runs equivalent.
    """

    def __init__(self, graph: ViewGraph, cfg: TrainConfig):
        self.graph = graph
        self.cfg = cfg
        self.params = init_params(graph.n_views, cfg, np.random.default_rng(cfg.seed))
        self.cheb_terms = graph.cheb_terms(cfg.cheb_order)
        self._adam_m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._adam_v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self._adam_t = 0
        self.trained = False

    # ---- forward ----

    def _vars(self) -> dict[str, ad.Var]:
        return {k: ad.Var(v) for k, v in self.params.items()}

    def _forward(self, x: np.ndarray, pv: dict[str, ad.Var]) -> ad.Var:
        n, tau = self.graph.n_views, self.cfg.tau
        if x.shape != (n, tau):
            raise ShapeError(f"input must be ({n}, {tau}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NonFiniteValue("input contains NaN or inf")
        h: ad.Var = ad.const(x)
        for b in range(self.cfg.blocks):
            p = f"b{b}_"
            # spatial attention, (N, N)
            a1 = ad.matmul(h, pv[p + "sa_w1"])
            lhs = ad.outer(a1, pv[p + "sa_w2"])
            rhs = ad.transpose(ad.scale(h, pv[p + "sa_w3"]))
            y = ad.matmul(
                ad.sigmoid(ad.add(ad.matmul(lhs, rhs), pv[p + "sa_bias"])),
                pv[p + "sa_v"],
            )
            yp = ad.row_softmax(y)
            # temporal attention, (tau, tau)
            b1 = ad.matmul(ad.transpose(h), pv[p + "ta_w1"])
            lhs_t = ad.outer(b1, pv[p + "ta_w2"])
            rhs_t = ad.scale(h, pv[p + "ta_w3"])
            z = ad.matmul(
                ad.sigmoid(ad.add(ad.matmul(lhs_t, rhs_t), pv[p + "ta_bias"])),
                pv[p + "ta_v"],
            )
            zp = ad.row_softmax(z)
            # temporally attended signal, then the attended graph convolution
            ht = ad.matmul(h, zp)
            conv = None
            for m, term in enumerate(self.cheb_terms):
                piece = ad.matmul(ad.mul(ad.const(term), yp), ht)
                piece = ad.scale(piece, ad.pick(pv[p + "cheb"], m))
                conv = piece if conv is None else ad.add(conv, piece)
            h = ad.relu(ad.conv1d_same(conv, pv[p + "conv_w"], pv[p + "conv_b"]))
        o = ad.relu(ad.add(ad.matmul(h, pv["fc_w"]), pv["fc_b"]))
        return ad.mul(pv["out_w"], o)

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Predicted (N, horizon) popularity block for one input window."""
        return self._forward(np.asarray(x, dtype=float), self._vars()).data

    def forward_with_params(self, x: np.ndarray, pv: dict[str, ad.Var]) -> ad.Var:
        return self._forward(np.asarray(x, dtype=float), pv)

    # ---- data ----

    def build_samples(self, history: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        """Sliding windows over a (chunks, N) popularity history.

        The sample predicting chunk u uses the tau chunks before u as input
        columns (left-padded with zeros when fewer exist) and chunks
        u..u+horizon-1 as the target.
        """
        hist = np.asarray(history, dtype=float)
        if hist.ndim != 2 or hist.shape[1] != self.graph.n_views:
            raise ShapeError(
                f"history must be (chunks, {self.graph.n_views}), got {hist.shape}"
            )
        h, n = hist.shape
        d, tau = self.cfg.horizon, self.cfg.tau
        if h < d + 1:
            raise InsufficientHistory(f"need at least {d + 1} chunks, got {h}")
        samples = []
        for u in range(1, h - d + 1):
            window = hist[max(0, u - tau) : u].T  # (N, <=tau)
            x = np.zeros((n, tau))
            x[:, tau - window.shape[1] :] = window
            target = hist[u : u + d].T  # (N, d)
            samples.append((x, target))
        return samples

    def input_window(self, history: np.ndarray) -> np.ndarray:
        """(N, tau) window of the most recent chunks, zero-padded on the left."""
        hist = np.asarray(history, dtype=float)
        n, tau = self.graph.n_views, self.cfg.tau
        window = hist[-tau:].T if hist.size else np.zeros((n, 0))
        x = np.zeros((n, tau))
        if window.shape[1]:
            x[:, tau - window.shape[1] :] = window
        return x

    @staticmethod
    def _history_scale(history: np.ndarray) -> float:
        hist = np.asarray(history, dtype=float)
        m = float(np.mean(np.abs(hist))) if hist.size else 0.0
        return m if m > 1e-12 else 1.0

    # ---- training ----

    def loss_and_grad(
        self, batch: list[tuple[np.ndarray, np.ndarray]]
    ) -> tuple[float, dict[str, np.ndarray]]:
        """Mean MAE over the batch and its gradient for every parameter."""
        pv = self._vars()
        total: ad.Var | None = None
        for x, target in batch:
            pred = self.forward_with_params(x, pv)
            err = ad.mean_abs(ad.sub(pred, ad.const(target)))
            total = err if total is None else ad.add(total, err)
        assert total is not None, "empty batch"
        loss = ad.scale(total, ad.const(1.0 / len(batch)))
        loss.backward()
        grads = {k: v.grad.copy() for k, v in pv.items()}
        return float(loss.data), grads

    def _adam_step(self, grads: dict[str, np.ndarray]) -> None:
        b1, b2, eps = 0.9, 0.999, 1e-8
        self._adam_t += 1
        t = self._adam_t
        for k, g in grads.items():
            self._adam_m[k] = b1 * self._adam_m[k] + (1 - b1) * g
            self._adam_v[k] = b2 * self._adam_v[k] + (1 - b2) * g * g
            m_hat = self._adam_m[k] / (1 - b1**t)
            v_hat = self._adam_v[k] / (1 - b2**t)
            self.params[k] = self.params[k] - self.cfg.lr * m_hat / (np.sqrt(v_hat) + eps)

    def evaluate_mae(self, samples: list[tuple[np.ndarray, np.ndarray]]) -> float:
        if not samples:
            raise InsufficientHistory("no samples to evaluate")
        return float(
            np.mean([np.mean(np.abs(self.forward(x) - t)) for x, t in samples])
        )

    def train_initial(self, history: np.ndarray) -> list[float]:
        """Full training pass; returns the training-set MAE after each epoch.

        The reported MAE is in the history's own units.
        """
        s = self._history_scale(history)
        samples = [(x / s, t / s) for x, t in self.build_samples(history)]
        rng = np.random.default_rng(self.cfg.seed + 1)
        epoch_mae = []
        for _ in range(self.cfg.epochs):
            order = rng.permutation(len(samples))
            for start in range(0, len(samples), self.cfg.batch_size):
                batch = [samples[i] for i in order[start : start + self.cfg.batch_size]]
                _, grads = self.loss_and_grad(batch)
                self._adam_step(grads)
            epoch_mae.append(self.evaluate_mae(samples) * s)
        self.trained = True
        return epoch_mae

    def observe(self, history: np.ndarray) -> float:
        """Online update after one new chunk: one step on the newest windows."""
        s = self._history_scale(history)
        samples = [(x / s, t / s) for x, t in self.build_samples(history)]
        batch = samples[-min(self.cfg.batch_size, len(samples)) :]
        loss, grads = self.loss_and_grad(batch)
        self._adam_step(grads)
        return loss * s

    def predict_next(self, history: np.ndarray) -> np.ndarray:
        """Forecast the next chunk's popularity vector from recent history."""
        s = self._history_scale(history)
        hist = np.asarray(history, dtype=float) / s
        return self.forward(self.input_window(hist))[:, 0] * s

    # ---- persistence ----

    def save(self, path) -> None:
        meta = {
            "version": CHECKPOINT_VERSION,
            "n_views": self.graph.n_views,
            "tau": self.cfg.tau,
            "horizon": self.cfg.horizon,
            "cheb_order": self.cfg.cheb_order,
            "blocks": self.cfg.blocks,
            "lr": self.cfg.lr,
            "batch_size": self.cfg.batch_size,
            "epochs": self.cfg.epochs,
            "seed": self.cfg.seed,
            "trained": self.trained,
            "adam_t": self._adam_t,
        }
        arrays = {"adjacency": self.graph.adjacency, "__meta__": np.frombuffer(
            json.dumps(meta).encode(), dtype=np.uint8
        )}
        for k, v in self.params.items():
            arrays["param_" + k] = v
            arrays["adam_m_" + k] = self._adam_m[k]
            arrays["adam_v_" + k] = self._adam_v[k]
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)

    @classmethod
    def load(cls, path) -> "StGnn":
        with np.load(path) as data:
            meta = json.loads(bytes(data["__meta__"]).decode())
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ConfigError(
                    f"unsupported checkpoint version {meta.get('version')}"
                )
            cfg = TrainConfig(
                tau=meta["tau"],
                horizon=meta["horizon"],
                cheb_order=meta["cheb_order"],
                blocks=meta["blocks"],
                lr=meta["lr"],
                batch_size=meta["batch_size"],
                epochs=meta["epochs"],
                seed=meta["seed"],
            )
            model = cls(ViewGraph(data["adjacency"]), cfg)
            for k in model.params:
                model.params[k] = data["param_" + k].copy()
                model._adam_m[k] = data["adam_m_" + k].copy()
                model._adam_v[k] = data["adam_v_" + k].copy()
            model._adam_t = meta["adam_t"]
            model.trained = meta["trained"]
        return model
