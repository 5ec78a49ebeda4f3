"""Estimator façade over the three self-motion coordinate routes.

Constructor arguments are stored untouched (scikit-learn convention), fit
computes the derived state on trailing-underscore attributes, transform maps
joint configurations (K, n) to coordinate values (K, r), and jacobian
evaluates the row block J_ξ at a single configuration.  get_params /
set_params / clone come from the scikit-learn base class.

The maps() helper exposes a fitted model as a (value, jacobian) callable
pair, the shape the controllers and the kinematic loop consume.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .chains import TaskMap
from .charts import angle_chart, harmonic_parametrization
from .geometry import (
    Metric,
    plane_stack_eval,
    plane_stack_jacobian,
    plane_stack_normals,
)
from .growing import grown_coordinates
from .meshing import extract_level_curve, extract_level_surface
from .network import forward as network_value, input_jacobian
from .training import TrainingConfig, train
from .validation import ConfigError, as_batch, as_vector


def resolve_metric(metric, chain) -> Metric:
    """Accept a Metric, a kind string, or a callable q → A(q)."""
    if isinstance(metric, Metric):
        return metric
    if metric in (None, "euclidean"):
        return Metric.euclidean()
    if metric == "inertia":
        return Metric.inertia(chain)
    if callable(metric):
        return Metric.from_function(metric)
    raise ConfigError(f"unknown metric specification {metric!r}")


def _task(task_map) -> TaskMap:
    return task_map if isinstance(task_map, TaskMap) else TaskMap(task_map)


class PlaneStackCoordinates(BaseEstimator, TransformerMixin):
    """Affine coordinates from the orthogonal plane stack at a base point.

    fit(X) takes the base configuration q₀ as X (shape (n,) or (1, n)); the
    normals span null(J_x A⁻¹) there, so orthogonality is exact at q₀ and
    degrades with distance.
    """

    def __init__(self, chain=None, task_map="planar-xy", metric="euclidean"):
        self.chain = chain
        self.task_map = task_map
        self.metric = metric

    def fit(self, X, y=None):
        if self.chain is None:
            raise ConfigError("chain must be set before fitting")
        q0 = np.asarray(X, float).reshape(-1)
        self.stack_ = plane_stack_normals(
            self.chain, _task(self.task_map),
            resolve_metric(self.metric, self.chain), q0)
        self.n_features_in_ = q0.size
        return self

    def transform(self, X):
        check_is_fitted(self, "stack_")
        Q = as_batch(X, self.chain.n, "X")
        return plane_stack_eval(self.stack_, Q)

    def jacobian(self, q=None):
        """Constant row block N; q is accepted for interface uniformity."""
        check_is_fitted(self, "stack_")
        return plane_stack_jacobian(self.stack_)

    def maps(self):
        check_is_fitted(self, "stack_")
        stack = self.stack_
        return (lambda q: plane_stack_eval(stack, q),
                lambda q: plane_stack_jacobian(stack))


class GrownCoordinates(BaseEstimator, TransformerMixin):
    """Exact coordinates grown from a charted base leaf.

    fit(X) takes the task value x₀ selecting the leaf.  Transform pulls each
    query onto the leaf along the task-error gradient flow and reads the
    chart there, so values are constant along flow lines by construction.
    Charted growth covers the meshable cases: curves (n=2) with the angle
    chart and surfaces (n=3) with the harmonic disk chart.
    """

    def __init__(self, chain=None, task_map="planar-x", metric="euclidean",
                 grid_resolution=None, region="q1>=0"):
        self.chain = chain
        self.task_map = task_map
        self.metric = metric
        self.grid_resolution = grid_resolution
        self.region = region

    def fit(self, X, y=None):
        if self.chain is None:
            raise ConfigError("chain must be set before fitting")
        x0 = np.atleast_1d(np.asarray(X, float)).reshape(-1)
        tm = _task(self.task_map)
        n = self.chain.n
        if n == 2:
            res = 256 if self.grid_resolution is None else self.grid_resolution
            mesh = extract_level_curve(self.chain, tm, x0, grid_resolution=res)
            self.chart_ = angle_chart(mesh)
        elif n == 3:
            res = 96 if self.grid_resolution is None else self.grid_resolution
            mesh = extract_level_surface(self.chain, tm, x0,
                                         grid_resolution=res,
                                         region=self.region)
            self.chart_ = harmonic_parametrization(mesh)
        else:
            raise ConfigError("charted growth needs a 2- or 3-DoF chain")
        self.n_features_in_ = n
        return self

    def transform(self, X):
        check_is_fitted(self, "chart_")
        Q = as_batch(X, self.chain.n, "X")
        metric = resolve_metric(self.metric, self.chain)
        return np.atleast_2d(
            grown_coordinates(self.chart_, self.chain, metric, Q))

    def jacobian(self, q, step=1e-6):
        """Central-difference row block of the grown coordinates at q."""
        check_is_fitted(self, "chart_")
        q = as_vector(q, self.chain.n, "q")
        metric = resolve_metric(self.metric, self.chain)
        cols = []
        for i in range(q.size):
            e = np.zeros_like(q)
            e[i] = step
            hi = grown_coordinates(self.chart_, self.chain, metric, q + e)
            lo = grown_coordinates(self.chart_, self.chain, metric, q - e)
            cols.append((np.asarray(hi) - np.asarray(lo)) / (2.0 * step))
        return np.column_stack(cols)

    def maps(self):
        check_is_fitted(self, "chart_")
        metric = resolve_metric(self.metric, self.chain)
        value = lambda q: grown_coordinates(self.chart_, self.chain, metric, q)
        return value, self.jacobian


class LearnedCoordinates(BaseEstimator, TransformerMixin):
    """Network coordinates trained against the cosine-orthogonality loss.

    fit() ignores X: training configurations are drawn internally from the
    configured region.  The fitted state is the parameter bundle params_ and
    the per-step loss curve curve_.
    """

    def __init__(self, chain=None, task_map="planar-x", metric="euclidean",
                 widths=(256, 64), r=None, epochs=10, steps_per_epoch=50,
                 samples_per_epoch=10_000, batch_size=None,
                 learning_rate=1e-3, lr_decay=1.0, optimizer="adam",
                 lambda1=1000.0, lambda2=1.0, region="torus", center=None,
                 edge=None, sample_margin=1e-6, seed=0):
        self.chain = chain
        self.task_map = task_map
        self.metric = metric
        self.widths = widths
        self.r = r
        self.epochs = epochs
        self.steps_per_epoch = steps_per_epoch
        self.samples_per_epoch = samples_per_epoch
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.lr_decay = lr_decay
        self.optimizer = optimizer
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.region = region
        self.center = center
        self.edge = edge
        self.sample_margin = sample_margin
        self.seed = seed

    def _config(self) -> TrainingConfig:
        return TrainingConfig(
            lambda1=self.lambda1, lambda2=self.lambda2, epochs=self.epochs,
            steps_per_epoch=self.steps_per_epoch,
            samples_per_epoch=self.samples_per_epoch, region=self.region,
            center=self.center, edge=self.edge,
            sample_margin=self.sample_margin, metric=self.metric,
            learning_rate=self.learning_rate, lr_decay=self.lr_decay,
            optimizer=self.optimizer,
            batch_size=self.batch_size, widths=tuple(self.widths), r=self.r,
            seed=self.seed)

    def fit(self, X=None, y=None):
        if self.chain is None:
            raise ConfigError("chain must be set before fitting")
        self.params_, self.curve_ = train(self._config(), self.chain,
                                          _task(self.task_map))
        self.n_features_in_ = self.chain.n
        return self

    def transform(self, X):
        check_is_fitted(self, "params_")
        Q = as_batch(X, self.chain.n, "X")
        return network_value(self.params_, Q)

    def jacobian(self, q):
        check_is_fitted(self, "params_")
        return input_jacobian(self.params_, as_vector(q, self.chain.n, "q"))

    def maps(self):
        check_is_fitted(self, "params_")
        params = self.params_
        return (lambda q: network_value(params, q),
                lambda q: input_jacobian(params, q))
