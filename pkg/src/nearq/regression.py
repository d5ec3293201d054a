"""Regression backends for Q-function estimation.

Two designs are provided:

* ``interaction-linear``: least squares on the regressor list
  ``[1, X_0..X_{d-1}, A, A*X_0..A*X_{d-1}]`` where ``A`` is the numeric action
  label. With two actions coded -1/+1 this is the full treatment-covariate
  interaction model.
* ``per-action-kernel``: one RBF kernel ridge regressor per action
  (``Q(h, a) = model_a(h)``); the action never enters the kernel. Targets are
  centered per action (an unpenalized intercept), so predictions shrink toward
  the action's mean target rather than toward zero.

Both solve regularized normal equations through a symmetric positive definite
factorization, so fitting is deterministic: identical inputs give bitwise
identical parameters. Rank deficiency surfaces as a factorization failure and
is reported as :class:`RankDeficientError`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
import scipy.linalg

from .core import ActionSpace

MODE_LINEAR = "interaction-linear"
MODE_KERNEL = "per-action-kernel"

FORMAT_VERSION = 1


class RankDeficientError(ValueError):
    """Normal equations could not be factorized; the design is rank deficient."""


@dataclass(frozen=True)
class DesignSpec:
    """Choice of regression backend and its hyperparameters.

    ``kernel_bandwidth`` is the RBF exponent coefficient in
    ``exp(-bandwidth * ||u - v||^2)``; ``None`` resolves to ``1 / (d + 1)`` at
    fit time, with ``d`` the feature dimension (one slot reserved for the
    action). ``ridge`` is the L2 regularization weight added to the normal
    equations.
    """

    mode: str
    kernel_bandwidth: float | None = None
    ridge: float = 0.0

    def __post_init__(self):
        if self.mode not in (MODE_LINEAR, MODE_KERNEL):
            raise ValueError(f"unknown regression mode {self.mode!r}")
        if self.kernel_bandwidth is not None and not self.kernel_bandwidth > 0:
            raise ValueError("kernel_bandwidth must be positive")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")

    @staticmethod
    def interaction_linear(ridge: float = 0.0) -> "DesignSpec":
        return DesignSpec(MODE_LINEAR, ridge=ridge)

    @staticmethod
    def per_action_kernel(kernel_bandwidth: float | None = None, ridge: float = 1.0) -> "DesignSpec":
        return DesignSpec(MODE_KERNEL, kernel_bandwidth=kernel_bandwidth, ridge=ridge)


def _solve_spd(gram: np.ndarray, rhs: np.ndarray, context: str) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(gram, lower=True)
    except scipy.linalg.LinAlgError as err:
        raise RankDeficientError(
            f"rank-deficient design in {context}; refit with ridge > 0"
        ) from err
    return scipy.linalg.cho_solve(factor, rhs)


def _rbf(a: np.ndarray, b: np.ndarray, bandwidth: float) -> np.ndarray:
    sq = (a * a).sum(axis=1)[:, None] + (b * b).sum(axis=1)[None, :] - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-bandwidth * sq)


class FittedQ:
    """Immutable fitted Q-function.

    ``predict`` is defined for every action index of the model's action space,
    including actions never observed near the queried features.
    """

    mode: str

    def __init__(self, action_space: ActionSpace, n_features: int):
        self.action_space = action_space
        self.n_features = int(n_features)

    def _check_features(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise ValueError(
                f"feature matrix has shape {x.shape}, expected (*, {self.n_features})"
            )
        return x

    def _check_action(self, action_index: int) -> int:
        if not 0 <= action_index < self.action_space.size:
            raise ValueError(
                f"action index {action_index} outside 0..{self.action_space.size - 1}"
            )
        return int(action_index)

    def predict_matrix(self, features: np.ndarray, action_index: int) -> np.ndarray:
        """Predicted values for ``action_index`` at each feature row."""
        raise NotImplementedError

    def predict(self, features: np.ndarray, action_index: int) -> float:
        features = np.asarray(features, dtype=float)
        if features.ndim != 1:
            raise ValueError("predict expects a single feature vector")
        return float(self.predict_matrix(features[None, :], action_index)[0])

    def predict_all(self, features: np.ndarray) -> np.ndarray:
        """Value vector over the whole action space at one feature vector."""
        features = np.asarray(features, dtype=float)
        if features.ndim != 1:
            raise ValueError("predict_all expects a single feature vector")
        return self.predict_all_matrix(features[None, :])[0]

    def predict_all_matrix(self, features: np.ndarray) -> np.ndarray:
        """(n, K) value matrix over the whole action space."""
        cols = [self.predict_matrix(features, k) for k in range(self.action_space.size)]
        return np.column_stack(cols)

    def to_dict(self) -> dict:
        raise NotImplementedError


class InteractionLinearQ(FittedQ):
    mode = MODE_LINEAR

    def __init__(self, action_space: ActionSpace, coef: np.ndarray, n_features: int):
        super().__init__(action_space, n_features)
        coef = np.asarray(coef, dtype=float).copy()
        coef.setflags(write=False)
        self.coef = coef

    @property
    def intercept(self) -> float:
        return float(self.coef[0])

    @property
    def beta_features(self) -> np.ndarray:
        return self.coef[1 : 1 + self.n_features]

    @property
    def beta_action(self) -> float:
        return float(self.coef[1 + self.n_features])

    @property
    def beta_interaction(self) -> np.ndarray:
        return self.coef[2 + self.n_features :]

    def predict_matrix(self, features, action_index):
        x = self._check_features(features)
        label = self.action_space.label(self._check_action(action_index))
        return (
            self.intercept
            + x @ self.beta_features
            + label * self.beta_action
            + label * (x @ self.beta_interaction)
        )

    def to_dict(self):
        return {
            "format_version": FORMAT_VERSION,
            "mode": self.mode,
            "action_values": list(self.action_space.values),
            "n_features": self.n_features,
            "coef": self.coef.tolist(),
        }


class PerActionKernelQ(FittedQ):
    mode = MODE_KERNEL

    def __init__(
        self,
        action_space: ActionSpace,
        n_features: int,
        bandwidth: float,
        components: tuple,
        meta: Mapping | None = None,
    ):
        super().__init__(action_space, n_features)
        self.bandwidth = float(bandwidth)
        # components[k] is ("kernel", inputs, weights, mean) or ("constant", value)
        self.components = tuple(components)
        self.meta = MappingProxyType(dict(meta or {}))

    def predict_matrix(self, features, action_index):
        x = self._check_features(features)
        comp = self.components[self._check_action(action_index)]
        if comp[0] == "constant":
            return np.full(x.shape[0], comp[1], dtype=float)
        _, inputs, weights, mean = comp
        return _rbf(x, inputs, self.bandwidth) @ weights + mean

    def to_dict(self):
        comps = []
        for comp in self.components:
            if comp[0] == "constant":
                comps.append({"kind": "constant", "value": comp[1]})
            else:
                comps.append(
                    {
                        "kind": "kernel",
                        "inputs": comp[1].tolist(),
                        "weights": comp[2].tolist(),
                        "mean": comp[3],
                    }
                )
        return {
            "format_version": FORMAT_VERSION,
            "mode": self.mode,
            "action_values": list(self.action_space.values),
            "n_features": self.n_features,
            "bandwidth": self.bandwidth,
            "components": comps,
            "meta": dict(self.meta),
        }


def fit(
    spec: DesignSpec,
    features: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    action_space: ActionSpace,
) -> FittedQ:
    """Fit a Q-function regression minimizing ridge-regularized squared error."""
    x = np.asarray(features, dtype=float)
    a = np.asarray(actions, dtype=int)
    y = np.asarray(targets, dtype=float)
    if x.ndim != 2:
        raise ValueError("features must be a 2d matrix")
    n = x.shape[0]
    if n < 1:
        raise ValueError("need at least one training row")
    if a.shape != (n,) or y.shape != (n,):
        raise ValueError("features, actions and targets must have matching length")
    if a.min(initial=0) < 0 or a.max(initial=0) >= action_space.size:
        raise ValueError("action index outside the action space")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets contain non-finite values")

    if spec.mode == MODE_LINEAR:
        return _fit_interaction_linear(spec, x, a, y, action_space)
    return _fit_per_action_kernel(spec, x, a, y, action_space)


def _fit_interaction_linear(spec, x, a, y, action_space) -> InteractionLinearQ:
    labels = np.array([action_space.label(k) for k in a], dtype=float)
    design = np.hstack(
        [np.ones((x.shape[0], 1)), x, labels[:, None], x * labels[:, None]]
    )
    gram = design.T @ design
    if spec.ridge > 0:
        gram = gram + spec.ridge * np.eye(gram.shape[0])
    coef = _solve_spd(gram, design.T @ y, "interaction-linear fit")
    return InteractionLinearQ(action_space, coef, x.shape[1])


def _fit_per_action_kernel(spec, x, a, y, action_space) -> PerActionKernelQ:
    bandwidth = spec.kernel_bandwidth
    if bandwidth is None:
        bandwidth = 1.0 / (x.shape[1] + 1)
    components = []
    fallback = []
    for k in range(action_space.size):
        mask = a == k
        if not mask.any():
            # no data for this action anywhere: predict the global target mean
            components.append(("constant", float(y.mean())))
            fallback.append(k)
            continue
        xa = x[mask]
        ya = y[mask]
        mean = float(ya.mean())
        gram = _rbf(xa, xa, bandwidth)
        if spec.ridge > 0:
            gram = gram + spec.ridge * np.eye(gram.shape[0])
        weights = _solve_spd(gram, ya - mean, f"kernel fit for action {k}")
        xa = xa.copy()
        xa.setflags(write=False)
        weights.setflags(write=False)
        components.append(("kernel", xa, weights, mean))
    meta = {"mean_fallback_actions": tuple(fallback)} if fallback else {}
    return PerActionKernelQ(action_space, x.shape[1], bandwidth, tuple(components), meta)


# --- model serialization ------------------------------------------------------


def model_from_dict(payload: Mapping) -> FittedQ:
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {version!r}")
    space = ActionSpace(tuple(payload["action_values"]))
    if payload["mode"] == MODE_LINEAR:
        return InteractionLinearQ(space, np.asarray(payload["coef"], dtype=float), payload["n_features"])
    if payload["mode"] == MODE_KERNEL:
        comps = []
        for comp in payload["components"]:
            if comp["kind"] == "constant":
                comps.append(("constant", float(comp["value"])))
            else:
                comps.append(
                    (
                        "kernel",
                        np.asarray(comp["inputs"], dtype=float),
                        np.asarray(comp["weights"], dtype=float),
                        float(comp["mean"]),
                    )
                )
        return PerActionKernelQ(
            space, payload["n_features"], payload["bandwidth"], tuple(comps), payload.get("meta", {})
        )
    raise ValueError(f"unknown model mode {payload['mode']!r}")


def save_model(model: FittedQ, path: str | Path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path: str | Path) -> FittedQ:
    return model_from_dict(json.loads(Path(path).read_text()))
