"""Backward Q-learning over offline trajectories.

The final-stage model regresses the stage-T reward on stage-T features and
action. Earlier stages regress the pseudo-outcome, the observed stage reward
plus the best predicted value at the next stage, fitted in order T, T-1, .., 0.
Greedy policies pick the argmax action, lowest index on exact ties.

Patients whose trajectory ended before a stage contribute nothing to that
stage's fit. A patient whose trajectory ends exactly at stage t has no future
value to add, so their pseudo-outcome is the observed reward alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DatasetError, OfflineDataset
from .regression import DesignSpec, FittedQ, fit


class StageFitError(RuntimeError):
    """A stage (optionally a specific pseudo-outcome column) failed to fit."""

    def __init__(self, stage: int, column: int | None = None):
        self.stage = stage
        self.column = column
        where = f"stage {stage}" if column is None else f"stage {stage}, column {column}"
        super().__init__(f"regression failed at {where}")


@dataclass(frozen=True)
class QStack:
    """One fitted model per stage 0..T plus fit provenance.

    ``provenance[t]`` records what the stage-t targets were ("reward" at the
    final stage, otherwise "pseudo-outcome") and which stage's model supplied
    the future values.
    """

    models: tuple[FittedQ, ...]
    horizon: int
    action_spaces: tuple
    provenance: tuple[dict, ...]

    def __post_init__(self):
        if len(self.models) != self.horizon + 1:
            raise ValueError("need exactly one model per stage 0..horizon")


class GreedyPolicy:
    """Stagewise greedy rules over a sequence of fitted models, one per stage."""

    def __init__(self, models: tuple[FittedQ, ...], stack: QStack | None = None):
        self.models = tuple(models)
        self.stack = stack

    @property
    def horizon(self) -> int:
        return len(self.models) - 1

    def decide(self, t: int, features: np.ndarray) -> int:
        """Greedy action index at stage t; lowest index wins exact ties."""
        if not 0 <= t <= self.horizon:
            raise ValueError(f"stage {t} outside 0..{self.horizon}")
        return int(np.argmax(self.models[t].predict_all(features)))

    def decide_batch(self, t: int, features: np.ndarray) -> np.ndarray:
        if not 0 <= t <= self.horizon:
            raise ValueError(f"stage {t} outside 0..{self.horizon}")
        return np.argmax(self.models[t].predict_all_matrix(features), axis=1)

    def __call__(self, t: int, features: np.ndarray) -> np.ndarray:
        return self.decide_batch(t, features)


def fit_final_stage(dataset: OfflineDataset, spec: DesignSpec) -> FittedQ:
    """Fit the stage-T model on patients that reached the final stage."""
    t_final = dataset.horizon
    idx, feats, actions, rewards = dataset.stage_rows(t_final)
    if idx.size == 0:
        raise DatasetError(f"empty final stage: no patient reaches stage {t_final}")
    return fit(spec, feats, actions, rewards, dataset.action_spaces[t_final])


def pseudo_outcome_vector(dataset: OfflineDataset, t: int, next_model: FittedQ) -> np.ndarray:
    """Stage-t regression targets: reward plus best next-stage predicted value.

    Returns a length-N vector aligned with ``dataset.patients``. Entries are
    NaN for patients whose trajectory ended before stage t (absent from the
    stage-t fit). Patients ending exactly at stage t get their reward alone.
    """
    if not 0 <= t < dataset.horizon:
        raise ValueError(f"stage {t} has no future stage (horizon {dataset.horizon})")
    out = np.full(dataset.n_patients, np.nan)
    idx_t, _, _, rewards_t = dataset.stage_rows(t)
    out[idx_t] = rewards_t
    idx_next, feats_next, _, _ = dataset.stage_rows(t + 1)
    if idx_next.size:
        out[idx_next] += next_model.predict_all_matrix(feats_next).max(axis=1)
    return out


def backward_fit(dataset: OfflineDataset, spec: DesignSpec) -> QStack:
    """Fit all stage models backward from the final stage."""
    t_final = dataset.horizon
    models: list[FittedQ | None] = [None] * (t_final + 1)
    provenance: list[dict] = [dict() for _ in range(t_final + 1)]
    try:
        models[t_final] = fit_final_stage(dataset, spec)
    except Exception as err:
        raise StageFitError(t_final) from err
    provenance[t_final] = {"stage": t_final, "targets": "reward", "source_stage": None}
    for t in range(t_final - 1, -1, -1):
        targets = pseudo_outcome_vector(dataset, t, models[t + 1])
        idx, feats, actions, _ = dataset.stage_rows(t)
        try:
            models[t] = fit(spec, feats, actions, targets[idx], dataset.action_spaces[t])
        except Exception as err:
            raise StageFitError(t) from err
        provenance[t] = {"stage": t, "targets": "pseudo-outcome", "source_stage": t + 1}
    return QStack(tuple(models), t_final, dataset.action_spaces, tuple(provenance))


def greedy_action(stack: QStack, t: int, features: np.ndarray) -> int:
    """Argmax action of the stage-t model, lowest index on ties."""
    return GreedyPolicy(stack.models, stack).decide(t, features)


def greedy_policy(stack: QStack) -> GreedyPolicy:
    return GreedyPolicy(stack.models, stack)


# --- stack serialization ------------------------------------------------------


def stack_to_dict(stack: QStack) -> dict:
    return {
        "format_version": 1,
        "horizon": stack.horizon,
        "models": [m.to_dict() for m in stack.models],
        "provenance": list(stack.provenance),
    }


def stack_from_dict(payload: dict) -> QStack:
    from .regression import model_from_dict

    if payload.get("format_version") != 1:
        raise ValueError(f"unsupported stack format version {payload.get('format_version')!r}")
    models = tuple(model_from_dict(m) for m in payload["models"])
    return QStack(
        models=models,
        horizon=int(payload["horizon"]),
        action_spaces=tuple(m.action_space for m in models),
        provenance=tuple(dict(p) for p in payload["provenance"]),
    )
