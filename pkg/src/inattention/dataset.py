"""Stochastic choice datasets and their plug-in estimates.

A dataset is a sequence of records ``(t, x, f, a, k)``: time, state, frame,
action and decision problem, all ids 1-based as they appear on disk.
Internally arrays are indexed 0-based.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

logger = logging.getLogger(__name__)

TAU_DEDUP = 1e-9
TAU_MATCH = 1e-9
CSV_HEADER = ("t", "x", "f", "a", "k")


class DatasetError(ValueError):
    """Base class for dataset ingestion and validation problems."""


class DatasetParseError(DatasetError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DatasetValidationError(DatasetError):
    pass


@dataclass(frozen=True)
class Observation:
    t: int
    x: int
    f: int
    a: int
    k: int


@dataclass(frozen=True)
class DatasetSchema:
    """Declared id ranges and optional human-readable labels."""

    state_count: int
    frame_count: int
    action_counts: tuple[int, ...]
    state_labels: tuple[str, ...] | None = None
    action_labels: tuple[str, ...] | None = None
    problem_labels: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "action_counts", tuple(int(a) for a in self.action_counts))
        if self.state_count < 1 or self.frame_count < 1 or not self.action_counts:
            raise DatasetValidationError("schema needs at least one state, frame and problem")
        if min(self.action_counts) < 1:
            raise DatasetValidationError("every decision problem needs at least one action")

    @property
    def problem_count(self) -> int:
        return len(self.action_counts)

    @property
    def max_actions(self) -> int:
        return max(self.action_counts)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "state_count": self.state_count,
            "frame_count": self.frame_count,
            "action_counts": list(self.action_counts),
        }
        for name in ("state_labels", "action_labels", "problem_labels"):
            value = getattr(self, name)
            if value is not None:
                out[name] = list(value)
        return out

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "DatasetSchema":
        def tup(v):
            return tuple(v) if v is not None else None

        return cls(
            state_count=int(d["state_count"]),
            frame_count=int(d["frame_count"]),
            action_counts=tuple(d["action_counts"]),
            state_labels=tup(d.get("state_labels")),
            action_labels=tup(d.get("action_labels")),
            problem_labels=tup(d.get("problem_labels")),
        )


# Encoding used for the YouTube commenting study: state = 14-day view count,
# action = 2-day comment volume x like/dislike sentiment, problem = category.
YOUTUBE_SCHEMA = DatasetSchema(
    state_count=2,
    frame_count=4,
    action_counts=(6, 6),
    state_labels=("viewcount above 10,000", "viewcount at most 10,000"),
    action_labels=(
        "low comments, negative sentiment",
        "low comments, neutral sentiment",
        "low comments, positive sentiment",
        "high comments, negative sentiment",
        "high comments, neutral sentiment",
        "high comments, positive sentiment",
    ),
    problem_labels=("Gaming", "other categories"),
)


@dataclass(frozen=True)
class StochasticChoiceDataset:
    t: NDArray[np.int64]
    x: NDArray[np.int64]
    f: NDArray[np.int64]
    a: NDArray[np.int64]
    k: NDArray[np.int64]
    schema: DatasetSchema

    def __post_init__(self) -> None:
        cols = {}
        for name in CSV_HEADER:
            arr = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            arr.setflags(write=False)
            cols[name] = arr
            object.__setattr__(self, name, arr)
        n = {len(v) for v in cols.values()}
        if len(n) != 1:
            raise DatasetValidationError("columns t, x, f, a, k must have equal length")
        _validate_ranges(cols, self.schema)

    @classmethod
    def from_observations(
        cls, observations: Iterable[Observation | Sequence[int]], schema: DatasetSchema | None = None
    ) -> "StochasticChoiceDataset":
        rows = [
            (o.t, o.x, o.f, o.a, o.k) if isinstance(o, Observation) else tuple(o)
            for o in observations
        ]
        arr = np.asarray(rows, dtype=np.int64).reshape(-1, 5)
        return cls.from_array(arr, schema)

    @classmethod
    def from_array(cls, arr: NDArray, schema: DatasetSchema | None = None) -> "StochasticChoiceDataset":
        arr = np.asarray(arr)
        if arr.ndim != 2 or arr.shape[1] != 5:
            raise DatasetValidationError(f"expected an (T, 5) array of t,x,f,a,k; got shape {arr.shape}")
        if not np.all(np.equal(np.mod(arr, 1), 0)):
            raise DatasetValidationError("ids must be integers")
        arr = arr.astype(np.int64)
        if schema is None:
            schema = infer_schema(arr)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3], arr[:, 4], schema)

    @property
    def T(self) -> int:
        return int(self.t.size)

    @property
    def T_k(self) -> tuple[int, ...]:
        return tuple(int(np.sum(self.k == kk)) for kk in range(1, self.schema.problem_count + 1))

    @property
    def state_count(self) -> int:
        return self.schema.state_count

    @property
    def frame_count(self) -> int:
        return self.schema.frame_count

    @property
    def problems(self) -> list[tuple[int, int]]:
        return [(i + 1, n) for i, n in enumerate(self.schema.action_counts)]

    @property
    def observations(self) -> list[Observation]:
        return [Observation(*map(int, row)) for row in self.to_array()]

    def to_array(self) -> NDArray[np.int64]:
        return np.column_stack([self.t, self.x, self.f, self.a, self.k])

    def select(self, mask: NDArray[np.bool_]) -> "StochasticChoiceDataset":
        arr = self.to_array()[np.asarray(mask, dtype=bool)]
        return StochasticChoiceDataset.from_array(arr, self.schema)

    def with_frames(self, frames: NDArray[np.int64], frame_count: int) -> "StochasticChoiceDataset":
        """Replace the frame column (1-based labels); records with label < 1 are dropped."""
        frames = np.asarray(frames, dtype=np.int64)
        if frames.shape != self.t.shape:
            raise DatasetValidationError("one frame label per record is required")
        keep = frames >= 1
        dropped = int(np.sum(~keep))
        if dropped:
            logger.info("dropping %d records without a confident frame", dropped)
        arr = self.to_array()
        arr[:, 2] = frames
        schema = replace(self.schema, frame_count=int(frame_count))
        return StochasticChoiceDataset.from_array(arr[keep], schema)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(self.to_array().tolist())
        return buf.getvalue()


def _validate_ranges(cols: dict[str, NDArray[np.int64]], schema: DatasetSchema) -> None:
    t, x, f, a, k = (cols[c] for c in CSV_HEADER)
    if t.size == 0:
        return
    if np.any(np.diff(t) <= 0):
        i = int(np.flatnonzero(np.diff(t) <= 0)[0]) + 1
        raise DatasetValidationError(f"t must be strictly increasing (record {i + 1}, t={t[i]})")
    if t.min() < 1:
        raise DatasetValidationError("t must be >= 1")
    checks = [
        ("x", x, schema.state_count),
        ("f", f, schema.frame_count),
        ("k", k, schema.problem_count),
    ]
    for name, col, hi in checks:
        bad = np.flatnonzero((col < 1) | (col > hi))
        if bad.size:
            i = int(bad[0])
            raise DatasetValidationError(f"record t={t[i]}: {name}={col[i]} outside 1..{hi}")
    limits = np.asarray(schema.action_counts)[k - 1]
    bad = np.flatnonzero((a < 1) | (a > limits))
    if bad.size:
        i = int(bad[0])
        raise DatasetValidationError(
            f"record t={t[i]}: a={a[i]} outside 1..{limits[i]} for problem k={k[i]}"
        )


def infer_schema(arr: NDArray[np.int64]) -> DatasetSchema:
    if arr.shape[0] == 0:
        raise DatasetValidationError("cannot infer a schema from an empty dataset")
    K = int(arr[:, 4].max())
    counts = []
    for kk in range(1, K + 1):
        sel = arr[arr[:, 4] == kk, 3]
        counts.append(int(sel.max()) if sel.size else 1)
    return DatasetSchema(int(arr[:, 1].max()), int(arr[:, 2].max()), tuple(counts))


def ingest(path: str | Path, schema: DatasetSchema | None = None) -> StochasticChoiceDataset:
    """Read a ``t,x,f,a,k`` CSV file into a validated dataset.

    Raises:
        DatasetParseError: malformed header or row (message carries the line).
        DatasetValidationError: ids outside the schema ranges.
    """
    text = Path(path).read_text(encoding="utf-8")
    return parse_csv(text, schema)


def parse_csv(text: str, schema: DatasetSchema | None = None) -> StochasticChoiceDataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetParseError("empty file", 1) from None
    header = [h.strip() for h in header]
    missing = [c for c in CSV_HEADER if c not in header]
    if missing:
        raise DatasetParseError(f"missing columns {missing}; header must contain t,x,f,a,k", 1)
    pos = [header.index(c) for c in CSV_HEADER]
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DatasetParseError(f"expected {len(header)} fields, found {len(row)}", lineno)
        try:
            rows.append([int(row[p]) for p in pos])
        except ValueError:
            raise DatasetParseError(f"non-integer field in {row!r}", lineno) from None
    arr = np.asarray(rows, dtype=np.int64).reshape(-1, 5)
    return StochasticChoiceDataset.from_array(arr, schema)


# --------------------------------------------------------------------------
# Estimated model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatedModel:
    """Prior, per-problem policies and (once computed) posterior structure.

    Arrays per problem ``k`` (0-based position in the tuples):

    - ``policies[k]``: ``(N, X, A_k)``, NaN rows mark unobserved ``(x, f)`` cells
    - ``posteriors[k]``: ``(N, A_k, X)``, NaN for zero-marginal actions
    - ``marginals[k]``: ``(N, A_k)``, action probabilities ``p_k(a, f)``
    - ``signal_of_action[k]``: ``(N, A_k)`` signal index, -1 when excluded
    - ``signal_sets[k][f]``: ``(S, X)`` distinct posteriors
    """

    schema: DatasetSchema
    prior: NDArray[np.float64]
    policies: tuple[NDArray[np.float64], ...]
    counts: tuple[NDArray[np.float64], ...] | None = None
    posteriors: tuple[NDArray[np.float64], ...] | None = None
    marginals: tuple[NDArray[np.float64], ...] | None = None
    signal_sets: tuple[tuple[NDArray[np.float64], ...], ...] | None = None
    signal_of_action: tuple[NDArray[np.int64], ...] | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def K(self) -> int:
        return self.schema.problem_count

    @property
    def N(self) -> int:
        return self.schema.frame_count

    @property
    def X(self) -> int:
        return self.schema.state_count

    def observed(self, k: int) -> NDArray[np.bool_]:
        """``(N, X)`` mask of cells with at least one observation in problem ``k``."""
        return ~np.isnan(self.policies[k][..., 0])

    def complete(self, k: int, f: int) -> bool:
        """All states observed for ``(k, f)``, so posteriors are defined."""
        return bool(np.all(self.observed(k)[f]))

    def require_posteriors(self) -> None:
        if self.posteriors is None:
            raise ValueError("posteriors not computed; call compute_posteriors first")

    def to_dict(self) -> dict[str, Any]:
        """Nested map keyed problem -> frame -> state/action, ids 1-based."""
        problems: dict[str, Any] = {}
        for k in range(self.K):
            frames: dict[str, Any] = {}
            for f in range(self.N):
                pol = self.policies[k][f]
                cell: dict[str, Any] = {
                    "policy": {
                        str(x + 1): (
                            None
                            if np.isnan(pol[x, 0])
                            else {str(a + 1): float(pol[x, a]) for a in range(pol.shape[1])}
                        )
                        for x in range(self.X)
                    }
                }
                if self.posteriors is not None and self.complete(k, f):
                    post = self.posteriors[k][f]
                    cell["marginal"] = {
                        str(a + 1): float(v) for a, v in enumerate(self.marginals[k][f])
                    }
                    cell["posterior"] = {
                        str(a + 1): (
                            None
                            if np.isnan(post[a, 0])
                            else {str(x + 1): float(post[a, x]) for x in range(self.X)}
                        )
                        for a in range(post.shape[0])
                    }
                    cell["signals"] = [
                        [float(v) for v in s] for s in self.signal_sets[k][f]
                    ]
                frames[str(f + 1)] = cell
            problems[str(k + 1)] = frames
        return {
            "schema": self.schema.to_dict(),
            "prior": {str(x + 1): float(v) for x, v in enumerate(self.prior)},
            "problems": problems,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EstimatedModel":
        """Rebuild prior and policies; posteriors are recomputed, not trusted."""
        schema = DatasetSchema.from_dict(d["schema"])
        prior = np.array([d["prior"][str(x + 1)] for x in range(schema.state_count)], dtype=float)
        policies = []
        for k, A in enumerate(schema.action_counts):
            pol = np.full((schema.frame_count, schema.state_count, A), np.nan)
            frames = d["problems"].get(str(k + 1), {})
            for f in range(schema.frame_count):
                cells = frames.get(str(f + 1), {}).get("policy", {})
                for x in range(schema.state_count):
                    row = cells.get(str(x + 1))
                    if row is not None:
                        pol[f, x] = [row[str(a + 1)] for a in range(A)]
            policies.append(pol)
        return compute_posteriors(cls(schema=schema, prior=prior, policies=tuple(policies)))


def estimate_policy_prior(d: StochasticChoiceDataset) -> EstimatedModel:
    """Maximum-likelihood prior and per-problem policies from raw counts.

    ``prior[x]`` is the overall state frequency; ``policies[k][f, x, a]`` is
    the action frequency within cell ``(x, f)`` of problem ``k``. Cells
    without observations are NaN (flagged, never imputed).
    """
    if d.T == 0:
        raise DatasetValidationError("cannot estimate from an empty dataset")
    s = d.schema
    prior = np.bincount(d.x - 1, minlength=s.state_count).astype(float) / d.T
    policies, counts = [], []
    for kk, A in enumerate(s.action_counts):
        sel = d.k == kk + 1
        c = np.zeros((s.frame_count, s.state_count, A))
        np.add.at(c, (d.f[sel] - 1, d.x[sel] - 1, d.a[sel] - 1), 1.0)
        tot = c.sum(axis=2, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            pol = np.where(tot > 0, c / np.where(tot > 0, tot, 1.0), np.nan)
        policies.append(pol)
        counts.append(c)
    notes = []
    for kk in range(s.problem_count):
        miss = np.argwhere(np.isnan(policies[kk][..., 0]))
        for f, x in miss:
            notes.append(f"unobserved cell k={kk + 1} f={f + 1} x={x + 1}")
    return EstimatedModel(
        schema=s, prior=prior, policies=tuple(policies), counts=tuple(counts), notes=tuple(notes)
    )


def dedup_posteriors(
    posts: NDArray[np.float64], valid: NDArray[np.bool_], tol: float = TAU_DEDUP
) -> tuple[NDArray[np.float64], NDArray[np.int64]]:
    """Group posterior rows whose sup-norm distance to a representative is <= tol.

    The representative is the first member, so any two merged rows differ by
    at most ``2 * tol``.
    """
    reps: list[NDArray[np.float64]] = []
    index = np.full(posts.shape[0], -1, dtype=np.int64)
    for a in range(posts.shape[0]):
        if not valid[a]:
            continue
        for s, r in enumerate(reps):
            if np.max(np.abs(posts[a] - r)) <= tol:
                index[a] = s
                break
        else:
            reps.append(posts[a].copy())
            index[a] = len(reps) - 1
    sig = np.array(reps) if reps else np.zeros((0, posts.shape[1]))
    return sig, index


def compute_posteriors(m: EstimatedModel, tol: float = TAU_DEDUP) -> EstimatedModel:
    """Fill in Bayes posteriors ``p_k(x | a, f)``, action marginals and signal sets."""
    posteriors, marginals, signal_sets, signal_idx = [], [], [], []
    notes = list(m.notes)
    mu = m.prior
    for k in range(m.K):
        pol = m.policies[k]
        N, X, A = pol.shape
        post = np.full((N, A, X), np.nan)
        marg = np.full((N, A), np.nan)
        sidx = np.full((N, A), -1, dtype=np.int64)
        sets = []
        for f in range(N):
            if not m.complete(k, f):
                sets.append(np.zeros((0, X)))
                continue
            joint = mu[:, None] * pol[f]  # (X, A)
            pa = joint.sum(axis=0)
            marg[f] = pa
            valid = pa > 0
            for a in np.flatnonzero(~valid):
                msg = f"action a={a + 1} has zero marginal in k={k + 1} f={f + 1}; excluded from signal set"
                notes.append(msg)
                warnings.warn(msg, stacklevel=2)
            post[f, valid] = (joint[:, valid] / pa[valid]).T
            sig, idx = dedup_posteriors(post[f], valid, tol)
            sets.append(sig)
            sidx[f] = idx
        posteriors.append(post)
        marginals.append(marg)
        signal_sets.append(tuple(sets))
        signal_idx.append(sidx)
    return replace(
        m,
        posteriors=tuple(posteriors),
        marginals=tuple(marginals),
        signal_sets=tuple(signal_sets),
        signal_of_action=tuple(signal_idx),
        notes=tuple(dict.fromkeys(notes)),
    )


def recover_attention_function(m: EstimatedModel, k: int, f: int) -> NDArray[np.float64]:
    """Revealed attention ``alpha_k(s | x)`` as an ``(S, X)`` array (columns sum to 1).

    ``k`` and ``f`` are 0-based positions.
    """
    m.require_posteriors()
    pol = m.policies[k][f]
    idx = m.signal_of_action[k][f]
    S = m.signal_sets[k][f].shape[0]
    alpha = np.zeros((S, m.X))
    for a, s in enumerate(idx):
        if s >= 0:
            alpha[s] += pol[:, a]
    return alpha


def recover_choice_function(m: EstimatedModel, k: int, f: int) -> NDArray[np.float64]:
    """Revealed choice ``eta_k(a | s)`` as an ``(A_k, S)`` array (columns sum to 1)."""
    m.require_posteriors()
    pa = m.marginals[k][f]
    idx = m.signal_of_action[k][f]
    S = m.signal_sets[k][f].shape[0]
    eta = np.zeros((pa.size, S))
    for s in range(S):
        members = idx == s
        eta[members, s] = pa[members] / pa[members].sum()
    return eta


def signal_probabilities(m: EstimatedModel, k: int, f: int) -> NDArray[np.float64]:
    """Unconditional probability of each revealed signal."""
    alpha = recover_attention_function(m, k, f)
    return alpha @ m.prior


def data_matching_residual(m: EstimatedModel, k: int, f: int) -> float:
    """Sup-norm gap between ``pi_k`` and ``sum_s alpha_k(s|x) eta_k(a|s)``."""
    alpha = recover_attention_function(m, k, f)
    eta = recover_choice_function(m, k, f)
    rebuilt = alpha.T @ eta.T  # (X, A)
    return float(np.max(np.abs(rebuilt - m.policies[k][f]))) if rebuilt.size else 0.0


def model_from_policies(
    prior: NDArray[np.float64],
    policies: Sequence[NDArray[np.float64]],
    schema: DatasetSchema | None = None,
) -> EstimatedModel:
    """Build an exact-probability model (population frequencies) and its posteriors."""
    prior = np.asarray(prior, dtype=float)
    pols = []
    for p in policies:
        p = np.asarray(p, dtype=float)
        if p.ndim == 2:
            p = p[None]
        pols.append(p)
    if schema is None:
        schema = DatasetSchema(prior.size, pols[0].shape[0], tuple(p.shape[2] for p in pols))
    if not math.isclose(prior.sum(), 1.0, abs_tol=1e-12):
        raise DatasetValidationError(f"prior sums to {prior.sum()!r}, not 1")
    for p in pols:
        ok = ~np.isnan(p[..., 0])
        if np.any(p[ok] < 0) or not np.allclose(p[ok].sum(axis=-1), 1.0, atol=1e-12):
            raise DatasetValidationError("policy rows must be probability vectors")
    return compute_posteriors(EstimatedModel(schema=schema, prior=prior, policies=tuple(pols)))
