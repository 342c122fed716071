"""View-popularity measurement and prediction.

Popularity is measured per chunk from what sessions actually emitted:
x[i] is the fraction of all emitted frames that came from view i's constant
representation, x_hat[i] the fraction from its switching representation, so
sum(x) + sum(x_hat) == 1 whenever anything was emitted.

Predictors forecast the pair (p, p_hat) for chunk j from chunks before j:

* ``uniform``   - no information, equal mass everywhere.
* ``ppc-only``  - persistence: previous chunk's actuals.
* ``adaptive``  - persistence for the constant half, the graph network for
  the switching half (the default combined predictor).
* ``gnn-only``  - one network per half.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .gnn import StGnn, TrainConfig
from .graph import ViewGraph, path_graph
from .streams import CONSTANT, Frame


@dataclass(frozen=True)
class PopularityObservation:
    x: np.ndarray       # constant-view fractions, (N,)
    x_hat: np.ndarray   # switching-view fractions, (N,)
    empty: bool = False


@dataclass(frozen=True)
class PopularityPrediction:
    p: np.ndarray
    p_hat: np.ndarray
    cold_start: bool = False
    used_gnn: bool = False


class PopularitySeries:
    """Per-chunk observations collected during a run."""

    def __init__(self, n_views: int):
        self.n_views = n_views
        self.observations: list[PopularityObservation] = []

    def append(self, obs: PopularityObservation) -> None:
        if obs.x.shape != (self.n_views,) or obs.x_hat.shape != (self.n_views,):
            raise ShapeError("observation shape mismatch")
        self.observations.append(obs)

    def __len__(self) -> int:
        return len(self.observations)

    def x_history(self) -> np.ndarray:
        return np.array([o.x for o in self.observations]).reshape(-1, self.n_views)

    def x_hat_history(self) -> np.ndarray:
        return np.array([o.x_hat for o in self.observations]).reshape(-1, self.n_views)


def compute_actual_popularity(
    emitted_frames: list[Frame] | list[list[Frame]],
    chunk: int,
    n_views: int,
    frames_per_chunk: int,
) -> PopularityObservation:
    """Fractions of emitted frames per (view, representation) for one chunk."""
    if emitted_frames and isinstance(emitted_frames[0], list):
        flat = [f for log in emitted_frames for f in log]
    else:
        flat = emitted_frames  # type: ignore[assignment]
    x = np.zeros(n_views)
    x_hat = np.zeros(n_views)
    total = 0
    for f in flat:
        if f.pts // frames_per_chunk != chunk:
            continue
        total += 1
        if f.rep == CONSTANT:
            x[f.view - 1] += 1
        else:
            x_hat[f.view - 1] += 1
    if total == 0:
        return PopularityObservation(x=x, x_hat=x_hat, empty=True)
    return PopularityObservation(x=x / total, x_hat=x_hat / total, empty=False)


def ppc_predict(prev_x: np.ndarray | None, n_views: int) -> tuple[np.ndarray, bool]:
    """Previous-popularity-carryover: p_j = x_{j-1}.

    With no history yet, returns the uniform distribution and a cold-start
    flag.
    """
    if prev_x is None:
        return np.full(n_views, 1.0 / n_views), True
    prev_x = np.asarray(prev_x, dtype=float)
    if prev_x.shape != (n_views,):
        raise ShapeError(f"expected ({n_views},), got {prev_x.shape}")
    return prev_x.copy(), False


def precision_score(
    p: np.ndarray, p_hat: np.ndarray, x: np.ndarray, x_hat: np.ndarray
) -> float:
    """1 - sqrt(mean squared prediction error over both representations)."""
    arrays = [np.asarray(a, dtype=float) for a in (p, p_hat, x, x_hat)]
    n = arrays[0].shape[0]
    if any(a.shape != (n,) for a in arrays):
        raise ShapeError("all vectors must share shape (N,)")
    p, p_hat, x, x_hat = arrays
    mse = (np.sum((p - x) ** 2) + np.sum((p_hat - x_hat) ** 2)) / (2 * n)
    return 1.0 - math.sqrt(mse)


def _postprocess(
    p: np.ndarray, p_hat: np.ndarray, target_total: float
) -> tuple[np.ndarray, np.ndarray]:
    """Clamp negatives to zero, then rescale jointly to the target mass."""
    p = np.maximum(p, 0.0)
    p_hat = np.maximum(p_hat, 0.0)
    total = p.sum() + p_hat.sum()
    if total <= 0.0:
        n = p.shape[0]
        return np.full(n, target_total / (2 * n)), np.full(n, target_total / (2 * n))
    return p * (target_total / total), p_hat * (target_total / total)


class Predictor:
    """Base predictor; subclasses fill in the halves."""

    name = "base"

    def __init__(self, n_views: int):
        self.n_views = n_views

    def predict(self, series: PopularitySeries) -> PopularityPrediction:
        raise NotImplementedError

    def observe(self, series: PopularitySeries) -> None:
        """Called after each chunk's actuals are appended."""

    def _target_total(self, series: PopularitySeries) -> float:
        if len(series) == 0:
            return 1.0
        last = series.observations[-1]
        if last.empty:
            return 1.0
        return float(last.x.sum() + last.x_hat.sum())


class UniformPredictor(Predictor):
    name = "uniform"

    def predict(self, series: PopularitySeries) -> PopularityPrediction:
        n = self.n_views
        return PopularityPrediction(
            p=np.full(n, 0.5 / n), p_hat=np.full(n, 0.5 / n), cold_start=len(series) == 0
        )


class PpcPredictor(Predictor):
    """Persistence on both halves."""

    name = "ppc-only"

    def predict(self, series: PopularitySeries) -> PopularityPrediction:
        n = self.n_views
        if len(series) == 0:
            return PopularityPrediction(
                p=np.full(n, 0.5 / n), p_hat=np.full(n, 0.5 / n), cold_start=True
            )
        last = series.observations[-1]
        p, p_hat = _postprocess(last.x, last.x_hat, self._target_total(series))
        return PopularityPrediction(p=p, p_hat=p_hat)


class CombinedPredictor(Predictor):
    """Persistence for the constant half, the graph network for switching.

    The network first trains once ``initial_history`` chunks have been
    observed, then takes one online step per subsequent chunk.
    """

    name = "adaptive"

    def __init__(
        self,
        n_views: int,
        train_cfg: TrainConfig,
        graph: ViewGraph | None = None,
        initial_history: int = 10,
    ):
        super().__init__(n_views)
        self.initial_history = initial_history
        self.model = StGnn(graph or path_graph(n_views), train_cfg)

    def predict(self, series: PopularitySeries) -> PopularityPrediction:
        n = self.n_views
        if len(series) == 0:
            return PopularityPrediction(
                p=np.full(n, 0.5 / n), p_hat=np.full(n, 0.5 / n), cold_start=True
            )
        last = series.observations[-1]
        used_gnn = False
        if self.model.trained:
            p_hat_raw = self.model.predict_next(series.x_hat_history())
            used_gnn = True
        else:
            p_hat_raw = last.x_hat
        p, p_hat = _postprocess(last.x, p_hat_raw, self._target_total(series))
        return PopularityPrediction(p=p, p_hat=p_hat, used_gnn=used_gnn)

    def observe(self, series: PopularitySeries) -> None:
        if not self.model.trained:
            if len(series) >= self.initial_history:
                self.model.train_initial(series.x_hat_history())
        else:
            self.model.observe(series.x_hat_history())


class GnnOnlyPredictor(Predictor):
    """One network per half; persistence until both are trained."""

    name = "gnn-only"

    def __init__(
        self,
        n_views: int,
        train_cfg: TrainConfig,
        graph: ViewGraph | None = None,
        initial_history: int = 10,
    ):
        super().__init__(n_views)
        self.initial_history = initial_history
        g = graph or path_graph(n_views)
        self.model_const = StGnn(g, train_cfg)
        hat_cfg = TrainConfig(
            tau=train_cfg.tau,
            horizon=train_cfg.horizon,
            cheb_order=train_cfg.cheb_order,
            blocks=train_cfg.blocks,
            lr=train_cfg.lr,
            batch_size=train_cfg.batch_size,
            epochs=train_cfg.epochs,
            seed=train_cfg.seed + 1,
        )
        self.model_hat = StGnn(g, hat_cfg)

    def predict(self, series: PopularitySeries) -> PopularityPrediction:
        n = self.n_views
        if len(series) == 0:
            return PopularityPrediction(
                p=np.full(n, 0.5 / n), p_hat=np.full(n, 0.5 / n), cold_start=True
            )
        last = series.observations[-1]
        used_gnn = False
        if self.model_const.trained and self.model_hat.trained:
            p_raw = self.model_const.predict_next(series.x_history())
            p_hat_raw = self.model_hat.predict_next(series.x_hat_history())
            used_gnn = True
        else:
            p_raw, p_hat_raw = last.x, last.x_hat
        p, p_hat = _postprocess(p_raw, p_hat_raw, self._target_total(series))
        return PopularityPrediction(p=p, p_hat=p_hat, used_gnn=used_gnn)

    def observe(self, series: PopularitySeries) -> None:
        if not self.model_const.trained:
            if len(series) >= self.initial_history:
                self.model_const.train_initial(series.x_history())
                self.model_hat.train_initial(series.x_hat_history())
        else:
            self.model_const.observe(series.x_history())
            self.model_hat.observe(series.x_hat_history())


def make_predictor(
    scheme: str,
    n_views: int,
    train_cfg: TrainConfig | None = None,
    graph: ViewGraph | None = None,
    initial_history: int = 10,
) -> Predictor:
    train_cfg = train_cfg or TrainConfig()
    if scheme == "uniform":
        return UniformPredictor(n_views)
    if scheme == "ppc-only":
        return PpcPredictor(n_views)
    if scheme == "adaptive":
        return CombinedPredictor(n_views, train_cfg, graph, initial_history)
    if scheme == "gnn-only":
        return GnnOnlyPredictor(n_views, train_cfg, graph, initial_history)
    raise ConfigError(f"unknown scheme {scheme!r}")


def write_popularity_csv(
    observations: list[PopularityObservation],
    predictions: list[PopularityPrediction],
    precisions: list[float],
    path,
) -> None:
    """Per-chunk report: chunk,view,x,x_hat,p,p_hat,precision.

    The precision column repeats the chunk's score on every view row.
    """
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["chunk", "view", "x", "x_hat", "p", "p_hat", "precision"])
        for j, (obs, pred, prec) in enumerate(zip(observations, predictions, precisions)):
            for v in range(obs.x.shape[0]):
                writer.writerow(
                    [
                        j,
                        v + 1,
                        f"{obs.x[v]:.9f}",
                        f"{obs.x_hat[v]:.9f}",
                        f"{pred.p[v]:.9f}",
                        f"{pred.p_hat[v]:.9f}",
                        f"{prec:.9f}",
                    ]
                )
