"""scikit-learn style wrappers around the revealed-preference test and the policy optimizer.

Inputs may be a :class:`StochasticChoiceDataset`, an :class:`EstimatedModel`
(rationality test only) or an integer array of records with columns
``t, x, f, a, k`` (1-based ids).
"""

from __future__ import annotations

from typing import Any

import numpy as np
from numpy.typing import NDArray
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import (
    DatasetSchema,
    EstimatedModel,
    StochasticChoiceDataset,
    compute_posteriors,
    estimate_policy_prior,
)
from .niat import BIG_M, test_rational_inattention
from .policy import optimize_policy


def as_dataset(X: Any, schema: DatasetSchema | None = None) -> StochasticChoiceDataset:
    if isinstance(X, StochasticChoiceDataset):
        return X
    arr = check_array(X, dtype=np.int64, ensure_min_samples=1)
    if arr.shape[1] != 5:
        raise ValueError(f"records need 5 columns t,x,f,a,k; got {arr.shape[1]}")
    return StochasticChoiceDataset.from_array(arr, schema)


def as_model(X: Any, schema: DatasetSchema | None = None) -> EstimatedModel:
    if isinstance(X, EstimatedModel):
        return X if X.posteriors is not None else compute_posteriors(X)
    return compute_posteriors(estimate_policy_prior(as_dataset(X, schema)))


class RationalInattentionTest(BaseEstimator):
    """Fit = run the revealed-preference test; results are exposed as attributes.

    ``verdict_`` is one of ``rationalizable``, ``not-rationalizable`` or
    ``undecided``; ``utility_`` is the witness ``u[f, x, a]``.
    """

    def __init__(
        self,
        schema: DatasetSchema | None = None,
        node_limit: int = 20000,
        max_binaries: int = 64,
        big_m: float = BIG_M,
    ) -> None:
        self.schema = schema
        self.node_limit = node_limit
        self.max_binaries = max_binaries
        self.big_m = big_m

    def fit(self, X: Any, y: Any = None) -> "RationalInattentionTest":
        self.model_ = as_model(X, self.schema)
        self.result_ = test_rational_inattention(
            self.model_, self.node_limit, self.max_binaries, self.big_m
        )
        self.verdict_ = self.result_.verdict
        self.utility_ = self.result_.u
        return self


class PolicyOptimizer(BaseEstimator):
    """Variance-penalized policy improvement; ``fit(X, utility)``.

    ``predict`` maps query rows ``(k, f, x)`` (1-based) to the 1-based most
    probable action of the optimized policy (lowest id on ties);
    ``predict_proba`` returns the full action distribution, padded with
    zeros to the largest action set.
    """

    def __init__(
        self,
        lam_bar: float = 1.0,
        rationality: bool = False,
        w_max: float | None = None,
        schema: DatasetSchema | None = None,
    ) -> None:
        self.lam_bar = lam_bar
        self.rationality = rationality
        self.w_max = w_max
        self.schema = schema

    def fit(self, X: Any, utility: Any) -> "PolicyOptimizer":
        d = as_dataset(X, self.schema)
        self.result_ = optimize_policy(
            d, np.asarray(utility, dtype=float), self.lam_bar, self.rationality, self.w_max
        )
        self.policies_ = self.result_.policies
        self.flags_ = self.result_.flags
        return self

    def predict_proba(self, queries: Any) -> NDArray[np.float64]:
        check_is_fitted(self, "policies_")
        q = check_array(queries, dtype=np.int64)
        if q.shape[1] != 3:
            raise ValueError("queries need 3 columns k,f,x")
        A_max = max(p.shape[2] for p in self.policies_)
        out = np.zeros((q.shape[0], A_max))
        for i, (k, f, x) in enumerate(q):
            if not 1 <= k <= len(self.policies_):
                raise ValueError(f"problem id {k} out of range")
            pol = self.policies_[k - 1]
            if not (1 <= f <= pol.shape[0] and 1 <= x <= pol.shape[1]):
                raise ValueError(f"cell f={f}, x={x} out of range")
            row = pol[f - 1, x - 1]
            if np.isnan(row[0]):
                raise ValueError(f"cell k={k}, f={f}, x={x} was never observed")
            out[i, : row.size] = row
        return out

    def predict(self, queries: Any) -> NDArray[np.int64]:
        return np.argmax(self.predict_proba(queries), axis=1) + 1
