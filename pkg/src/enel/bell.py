"""Bell-style scale-out runtime models.

A parametric Ernest-form fit ``theta0 + theta1/s + theta2 log s + theta3 s``
with non-negative coefficients competes against a piecewise-linear
interpolator; k-fold cross-validation picks the winner.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import nnls


@dataclass(frozen=True)
class ScaleoutSample:
    scaleout: int
    runtime: float

    def __post_init__(self):
        if self.scaleout < 1:
            raise ValueError(f"scale-out must be >= 1, got {self.scaleout}")
        if not self.runtime > 0:
            raise ValueError(f"runtime must be positive, got {self.runtime}")


def _arrays(samples) -> tuple[np.ndarray, np.ndarray]:
    pairs = [(s.scaleout, s.runtime) if isinstance(s, ScaleoutSample) else tuple(s) for s in samples]
    if not pairs:
        return np.zeros(0), np.zeros(0)
    s, t = np.array(pairs, dtype=float).T
    return s, t


def ernest_features(s) -> np.ndarray:
    s = np.atleast_1d(np.asarray(s, dtype=float))
    return np.column_stack([np.ones_like(s), 1.0 / s, np.log(s), s])


def fit_parametric(samples) -> np.ndarray:
    """Non-negative least-squares fit of the four Ernest coefficients."""
    s, t = _arrays(samples)
    if len(s) < 4 or len(np.unique(s)) < 2:
        raise ValueError(f"parametric fit needs >= 4 samples over >= 2 distinct scale-outs, got {len(s)}")
    X = ernest_features(s)
    # column scaling keeps the active-set solver well conditioned
    scale = np.linalg.norm(X, axis=0)
    theta, _ = nnls(X / scale, t)
    return theta / scale


@dataclass
class Interpolator:
    scaleouts: np.ndarray
    runtimes: np.ndarray

    def __call__(self, s) -> np.ndarray:
        return np.interp(np.asarray(s, dtype=float), self.scaleouts, self.runtimes)


def fit_nonparametric(samples) -> Interpolator:
    """Piecewise-linear interpolation over mean runtime per scale-out."""
    s, t = _arrays(samples)
    uniq = np.unique(s)
    if len(uniq) < 2:
        raise ValueError("non-parametric fit needs >= 2 distinct scale-outs")
    means = np.array([t[s == u].mean() for u in uniq])
    return Interpolator(uniq, means)


@dataclass
class BellModel:
    kind: str  # "parametric" | "nonparametric"
    theta: np.ndarray | None = None
    samples: list[tuple[int, float]] = field(default_factory=list)
    cv_errors: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "parametric":
            if self.theta is None or not np.all(np.isfinite(self.theta)):
                raise ValueError("parametric Bell model needs finite coefficients")
            self.theta = np.asarray(self.theta, dtype=float)
        elif self.kind == "nonparametric":
            self._interp = fit_nonparametric(self.samples)
        else:
            raise ValueError(f"unknown Bell model kind {self.kind!r}")

    def predict(self, s):
        if np.any(np.asarray(s) < 1):
            raise ValueError("scale-out must be >= 1")
        if self.kind == "parametric":
            out = ernest_features(s) @ self.theta
        else:
            out = self._interp(np.atleast_1d(s))
        out = np.maximum(out, 0.0)
        return float(out[0]) if np.ndim(s) == 0 else out

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.kind == "parametric":
            d["theta"] = self.theta.tolist()
        else:
            d["samples"] = [[int(s), float(t)] for s, t in self.samples]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "BellModel":
        if d["kind"] == "parametric":
            return cls("parametric", theta=np.array(d["theta"], dtype=float))
        return cls("nonparametric", samples=[tuple(x) for x in d["samples"]])

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "BellModel":
        return cls.from_dict(json.loads(text))


def predict(model: BellModel, s):
    return model.predict(s)


def _fit(kind: str, s: np.ndarray, t: np.ndarray) -> BellModel:
    pairs = list(zip(s.astype(int).tolist(), t.tolist()))
    if kind == "parametric":
        return BellModel("parametric", theta=fit_parametric(pairs))
    return BellModel("nonparametric", samples=pairs)


def cross_validated_error(kind: str, s: np.ndarray, t: np.ndarray, folds: int) -> float:
    """Mean absolute error over ``folds`` folds; sample ``i`` belongs to fold ``i % folds``."""
    fold_of = np.arange(len(s)) % folds
    errors = []
    for f in range(folds):
        test = fold_of == f
        if not test.any():
            continue
        try:
            m = _fit(kind, s[~test], t[~test])
        except ValueError:
            return np.inf
        errors.append(np.abs(m.predict(s[test]) - t[test]))
    return float(np.mean(np.concatenate(errors)))


def select_model(samples, folds: int = 5) -> BellModel:
    """Pick the model kind with the lower cross-validated MAE (ties: parametric)."""
    s, t = _arrays(samples)
    pairs = list(zip(s.astype(int).tolist(), t.tolist()))
    if len(s) < 5:
        for kind in ("parametric", "nonparametric"):
            try:
                return _fit(kind, s, t)
            except ValueError:
                pass
        raise ValueError(f"cannot fit any Bell model to {len(s)} samples")
    order = np.lexsort((t, s))  # deterministic fold assignment independent of input order
    s, t = s[order], t[order]
    errs = {kind: cross_validated_error(kind, s, t, folds) for kind in ("parametric", "nonparametric")}
    # errors equal up to round-off count as a tie
    tol = 1e-9 * float(np.mean(np.abs(t)))
    kind = "parametric" if errs["parametric"] <= errs["nonparametric"] + tol else "nonparametric"
    try:
        model = _fit(kind, s, t)
    except ValueError:
        kind = "nonparametric" if kind == "parametric" else "parametric"
        model = _fit(kind, s, t)
    model.cv_errors = errs
    if kind == "nonparametric":
        model.samples = pairs
    return model


class ComponentBell:
    """One Bell model per job component, refit from all completed runs.

    Serves both as the first-component bootstrap for initial allocation and
    as the per-component baseline controller's runtime model.
    """

    def __init__(self, folds: int = 5):
        self.folds = folds
        self.models: dict[int, BellModel] = {}

    def fit(self, runs: Sequence) -> "ComponentBell":
        samples: dict[int, list[tuple[int, float]]] = {}
        for job in runs:
            for comp in job.components:
                if comp.wall_time is None or comp.end_scaleout is None or comp.wall_time <= 0:
                    continue
                samples.setdefault(comp.index, []).append((int(comp.end_scaleout), float(comp.wall_time)))
        self.models = {}
        for k, smp in samples.items():
            try:
                self.models[k] = select_model(smp, self.folds)
            except ValueError:
                continue
        return self

    def predict(self, component: int, s):
        if component not in self.models:
            raise KeyError(f"no Bell model for component {component}")
        return self.models[component].predict(s)

    def remaining(self, from_component: int, n_components: int, s) -> np.ndarray:
        s = np.atleast_1d(s)
        total = np.zeros(len(s))
        for k in range(from_component, n_components):
            total += self.predict(k, s)
        return total
