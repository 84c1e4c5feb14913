"""Hierarchical logistic regression over lattice cells, fit by penalised
maximum likelihood with empirical-Bayes variance updates.

The linear predictor is additive over factors (plus an optional party
factor)::

    eta = b0 + sum_f a_f[level_f]

with independent normal priors a_f[l] ~ N(0, var_f) and b0 ~ N(0, v0).
The inner loop minimises the negative log posterior with damped Newton steps
(Armijo backtracking). The outer loop re-centres every factor to sum to zero,
folds the means into the intercept, and resets var_f to the clamped mean
squared effect.

Parameters are handled as a flat vector ``[b0, a_0..., a_1..., ...]``.
Observations are aggregated into unique (cell, party) patterns in sorted
order before any accumulation, which makes every fit independent of the
input order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import NonConvergence, ValidationError
from .lattice import PARTIES, CellLattice

_ARMIJO = 1e-4
_MIN_STEP = 1e-10


@dataclass(frozen=True, eq=False)
class Observations:
    """Binary outcomes with their lattice cell positions (and party codes)."""

    cells: np.ndarray
    y: np.ndarray
    party: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "cells", np.asarray(self.cells, dtype=np.int64).reshape(-1))
        object.__setattr__(self, "y", np.asarray(self.y, dtype=np.int64).reshape(-1))
        if self.party is not None:
            object.__setattr__(self, "party", np.asarray(self.party, dtype=np.int64).reshape(-1))
            if len(self.party) != len(self.cells):
                raise ValidationError("party codes and cells differ in length")
        if len(self.y) != len(self.cells):
            raise ValidationError("labels and cells differ in length")
        if len(self.y) and not np.all((self.y == 0) | (self.y == 1)):
            raise ValidationError("labels must be 0 or 1")

    def __len__(self):
        return len(self.y)

    def flipped(self) -> "Observations":
        return Observations(self.cells, 1 - self.y, self.party)


@dataclass(frozen=True)
class ModelSpec:
    lattice: CellLattice
    include_party: bool = False
    prior_variance: float | Sequence[float] = 1.0
    intercept_variance: float = 100.0
    grad_tol: float = 1e-6
    max_inner: int = 500
    max_outer: int = 10
    outer_tol: float = 1e-4
    variance_floor: float = 1e-4
    variance_cap: float = 25.0

    def __post_init__(self):
        for name in ("intercept_variance", "grad_tol", "outer_tol", "variance_floor", "variance_cap"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"{name} must be positive")
        if self.variance_floor > self.variance_cap:
            raise ValidationError("variance_floor exceeds variance_cap")
        if self.max_inner < 1 or self.max_outer < 1:
            raise ValidationError("iteration limits must be >= 1")
        v = np.broadcast_to(np.asarray(self.prior_variance, dtype=float), (len(self.sizes),))
        if np.any(~(v > 0)):
            raise ValidationError("prior variances must be positive")

    @property
    def factor_names(self) -> tuple[str, ...]:
        return self.lattice.names + (("party",) if self.include_party else ())

    @property
    def sizes(self) -> tuple[int, ...]:
        return self.lattice.shape + ((len(PARTIES),) if self.include_party else ())

    @property
    def n_params(self) -> int:
        return 1 + sum(self.sizes)

    @property
    def offsets(self) -> np.ndarray:
        return 1 + np.concatenate([[0], np.cumsum(self.sizes)]).astype(np.int64)

    def initial_variances(self) -> np.ndarray:
        v = np.broadcast_to(np.asarray(self.prior_variance, dtype=float), (len(self.sizes),))
        return np.clip(v, self.variance_floor, self.variance_cap)

    def unpack(self, params: np.ndarray) -> tuple[float, list[np.ndarray]]:
        params = np.asarray(params, dtype=float)
        if params.shape != (self.n_params,):
            raise ValidationError(f"expected {self.n_params} parameters, got shape {params.shape}")
        off = self.offsets
        return float(params[0]), [params[off[f]:off[f + 1]] for f in range(len(self.sizes))]


class _Design:
    """Observations collapsed to unique covariate patterns, sorted."""

    def __init__(self, obs: Observations, spec: ModelSpec):
        lattice = spec.lattice
        if len(obs) and (obs.cells.min() < 0 or obs.cells.max() >= lattice.size):
            raise ValidationError("observation cell outside the lattice")
        if spec.include_party:
            if obs.party is None:
                raise ValidationError("model includes party but observations carry no party codes")
            if len(obs) and (obs.party.min() < 0 or obs.party.max() >= len(PARTIES)):
                raise ValidationError("party code out of range")
            key = obs.cells * len(PARTIES) + obs.party
        else:
            key = obs.cells
        patterns, inverse = np.unique(key, return_inverse=True)
        self.n = np.bincount(inverse, minlength=len(patterns)).astype(float)
        self.s = np.bincount(inverse, weights=obs.y.astype(float), minlength=len(patterns))
        if spec.include_party:
            cells, party = np.divmod(patterns, len(PARTIES))
            levels = np.column_stack([lattice.levels(cells), party])
        else:
            levels = lattice.levels(patterns)
        self.levels = levels.astype(np.int64)
        self.sizes = spec.sizes
        self.offsets = spec.offsets
        self.cols = [self.offsets[f] + self.levels[:, f] for f in range(len(self.sizes))]
        self.v0 = spec.intercept_variance
        self.n_params = spec.n_params

    def eta(self, theta: np.ndarray) -> np.ndarray:
        out = np.full(len(self.n), theta[0])
        for col in self.cols:
            out += theta[col]
        return out

    def _precision(self, variances: np.ndarray) -> np.ndarray:
        prec = np.empty(self.n_params)
        prec[0] = 1.0 / self.v0
        for f, size in enumerate(self.sizes):
            prec[self.offsets[f]:self.offsets[f + 1]] = 1.0 / variances[f]
        return prec

    def value(self, theta, variances) -> float:
        eta = self.eta(theta)
        nll = np.sum(self.n * np.logaddexp(0.0, eta) - self.s * eta)
        return float(nll + 0.5 * np.sum(self._precision(variances) * theta * theta))

    def value_grad(self, theta, variances):
        eta = self.eta(theta)
        nll = np.sum(self.n * np.logaddexp(0.0, eta) - self.s * eta)
        prec = self._precision(variances)
        value = float(nll + 0.5 * np.sum(prec * theta * theta))
        r = self.n * _sigmoid(eta) - self.s
        grad = prec * theta
        grad[0] += r.sum()
        for col in self.cols:
            grad += np.bincount(col, weights=r, minlength=self.n_params)
        return value, grad

    def hessian(self, theta, variances) -> np.ndarray:
        p = _sigmoid(self.eta(theta))
        w = self.n * p * (1.0 - p)
        H = np.diag(self._precision(variances))
        H[0, 0] += w.sum()
        k = len(self.sizes)
        for f in range(k):
            lo, hi = self.offsets[f], self.offsets[f + 1]
            col_f = np.bincount(self.levels[:, f], weights=w, minlength=self.sizes[f])
            H[0, lo:hi] += col_f
            H[lo:hi, 0] += col_f
            H[lo:hi, lo:hi] += np.diag(col_f)
            for g in range(f + 1, k):
                lo_g, hi_g = self.offsets[g], self.offsets[g + 1]
                idx = self.levels[:, f] * self.sizes[g] + self.levels[:, g]
                block = np.bincount(idx, weights=w, minlength=self.sizes[f] * self.sizes[g])
                block = block.reshape(self.sizes[f], self.sizes[g])
                H[lo:hi, lo_g:hi_g] += block
                H[lo_g:hi_g, lo:hi] += block.T
        return H


def _sigmoid(x):
    # exp(-|x|) never overflows
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _variances_or_default(spec, variances):
    if variances is None:
        return spec.initial_variances()
    v = np.asarray(variances, dtype=float)
    if v.shape != (len(spec.sizes),) or np.any(~(v > 0)):
        raise ValidationError("need one positive variance per factor")
    return v


def neg_log_posterior(params, observations: Observations, spec: ModelSpec, variances=None) -> float:
    """Negative log posterior (up to a constant) at flat ``params``.

    ``variances`` defaults to the spec's initial per-factor prior variances.
    """
    spec.unpack(params)
    design = _Design(observations, spec)
    return design.value(np.asarray(params, dtype=float), _variances_or_default(spec, variances))


def gradient(params, observations: Observations, spec: ModelSpec, variances=None) -> np.ndarray:
    spec.unpack(params)
    design = _Design(observations, spec)
    return design.value_grad(np.asarray(params, dtype=float), _variances_or_default(spec, variances))[1]


@dataclass(frozen=True)
class ConvergenceReport:
    outer_iterations: int
    inner_iterations: int
    grad_norm: float
    converged: bool = True


@dataclass(frozen=True, eq=False)
class FittedModel:
    factor_names: tuple[str, ...]
    intercept: float
    effects: tuple[np.ndarray, ...]
    variances: tuple[float, ...]
    include_party: bool
    report: ConvergenceReport = field(default_factory=lambda: ConvergenceReport(0, 0, 0.0))

    @property
    def shape(self) -> tuple[int, ...]:
        n = len(self.effects) - (1 if self.include_party else 0)
        return tuple(len(a) for a in self.effects[:n])

    def linear_predictor(self, cell: Sequence[int], party: str | int | None = None) -> float:
        demo = self.effects[:-1] if self.include_party else self.effects
        if len(cell) != len(demo):
            raise ValidationError(f"cell key needs {len(demo)} indices")
        eta = self.intercept
        for a, lev in zip(demo, cell):
            if not 0 <= lev < len(a):
                raise ValidationError(f"level index {lev} out of range")
            eta += a[lev]
        if self.include_party:
            if party is None:
                raise ValidationError("model includes party; a party is required")
            k = PARTIES.index(party) if isinstance(party, str) else int(party)
            eta += self.effects[-1][k]
        elif party is not None:
            raise ValidationError("model has no party factor; party must be omitted")
        return float(eta)

    def predict_cell(self, cell: Sequence[int], party: str | int | None = None) -> float:
        return float(_sigmoid(np.array(self.linear_predictor(cell, party))))

    def predict_all(self) -> np.ndarray:
        """Probabilities for every lattice cell in canonical order.

        Shape ``(n_cells,)``, or ``(n_cells, 3)`` when the model includes party.
        """
        shape = self.shape
        eta = np.full(shape, self.intercept)
        for axis, a in enumerate(self.effects[: len(shape)]):
            view = [1] * len(shape)
            view[axis] = len(a)
            eta = eta + a.reshape(view)
        eta = eta.reshape(-1)
        if self.include_party:
            eta = eta[:, None] + self.effects[-1][None, :]
        return _sigmoid(eta)

    def to_dict(self) -> dict:
        return {
            "factor_names": list(self.factor_names),
            "include_party": self.include_party,
            "intercept": self.intercept,
            "effects": [a.tolist() for a in self.effects],
            "variances": list(self.variances),
            "convergence": {
                "outer_iterations": self.report.outer_iterations,
                "inner_iterations": self.report.inner_iterations,
                "grad_norm": self.report.grad_norm,
                "converged": self.report.converged,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        conv = d.get("convergence", {})
        return cls(
            factor_names=tuple(d["factor_names"]),
            intercept=float(d["intercept"]),
            effects=tuple(np.array(a, dtype=float) for a in d["effects"]),
            variances=tuple(float(v) for v in d["variances"]),
            include_party=bool(d["include_party"]),
            report=ConvergenceReport(
                int(conv.get("outer_iterations", 0)),
                int(conv.get("inner_iterations", 0)),
                float(conv.get("grad_norm", 0.0)),
                bool(conv.get("converged", True)),
            ),
        )

    @classmethod
    def from_json(cls, text: str) -> "FittedModel":
        return cls.from_dict(json.loads(text))


def _newton(design: _Design, theta, variances, spec: ModelSpec, trace=None):
    value, grad = design.value_grad(theta, variances)
    for it in range(spec.max_inner):
        gnorm = float(np.max(np.abs(grad)))
        if gnorm < spec.grad_tol:
            return theta, gnorm, it
        H = design.hessian(theta, variances)
        step = np.linalg.solve(H, -grad)
        slope = float(grad @ step)
        # allow for rounding in the objective once decreases get that small
        slack = 1e-13 * (1.0 + abs(value))
        t = 1.0
        while True:
            trial = theta + t * step
            new_value = design.value(trial, variances)
            if new_value <= value + _ARMIJO * t * slope + slack:
                break
            t *= 0.5
            if t < _MIN_STEP:
                raise NonConvergence("line search failed", grad_norm=gnorm, iterations=it)
        theta = trial
        value, grad = design.value_grad(theta, variances)
        if trace is not None:
            trace.append(value)
    gnorm = float(np.max(np.abs(grad)))
    if gnorm < spec.grad_tol:
        return theta, gnorm, spec.max_inner
    raise NonConvergence(
        f"gradient norm {gnorm:.3g} above tolerance after {spec.max_inner} iterations",
        grad_norm=gnorm,
        iterations=spec.max_inner,
    )


def _recenter(theta, spec: ModelSpec):
    theta = theta.copy()
    off = spec.offsets
    for f in range(len(spec.sizes)):
        block = theta[off[f]:off[f + 1]]
        m = block.mean()
        theta[off[f]:off[f + 1]] = block - m
        theta[0] += m
    return theta


def fit_map(observations: Observations, spec: ModelSpec, *, trace: list | None = None) -> FittedModel:
    """Penalised ML fit with empirical-Bayes variance updates.

    Raises NonConvergence when an inner solve cannot reach ``spec.grad_tol``.
    ``trace``, if given, collects the objective after every accepted step.
    """
    design = _Design(observations, spec)
    variances = spec.initial_variances()
    theta = np.zeros(spec.n_params)
    off = spec.offsets
    inner_total = 0
    gnorm = 0.0
    outer = 0
    for outer in range(1, spec.max_outer + 1):
        theta, gnorm, its = _newton(design, theta, variances, spec, trace)
        inner_total += its
        theta = _recenter(theta, spec)
        updated = np.array([
            np.clip(np.mean(theta[off[f]:off[f + 1]] ** 2), spec.variance_floor, spec.variance_cap)
            for f in range(len(spec.sizes))
        ])
        change = np.max(np.abs(updated - variances)) if len(updated) else 0.0
        variances = updated
        if change < spec.outer_tol:
            break
    b0, effects = spec.unpack(theta)
    return FittedModel(
        factor_names=spec.factor_names,
        intercept=b0,
        effects=tuple(a.copy() for a in effects),
        variances=tuple(float(v) for v in variances),
        include_party=spec.include_party,
        report=ConvergenceReport(outer, inner_total, gnorm, True),
    )


def predict_cell(model: FittedModel, cell: Sequence[int], party: str | int | None = None) -> float:
    return model.predict_cell(cell, party)
