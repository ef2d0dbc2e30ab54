"""Command-line pipeline: ingest, cluster frames, estimate, test, recover costs, optimize, report.

Exit status: 0 success, 1 a test verdict of not-rationalizable, 2 usage or
input error, 3 internal error. JSON outputs are written with sorted keys so
identical inputs and seeds give byte-identical files.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import re
import sys
import warnings
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .dataset import (
    YOUTUBE_SCHEMA,
    DatasetError,
    DatasetSchema,
    EstimatedModel,
    StochasticChoiceDataset,
    compute_posteriors,
    estimate_policy_prior,
    parse_csv,
)
from .frames import (
    Autoencoder,
    ClusteringError,
    TrainingConfig,
    TrainingDivergedError,
    dec_train,
    init_centers,
    pretrain,
    read_features,
    write_assignments,
    write_latent,
)
from .niat import NOT_RATIONALIZABLE, RATIONALIZABLE, UNDECIDED, compute_G, recover_information_cost, renyi_constrained_test, test_rational_inattention
from .policy import BoundPreconditionError, bernstein_bound, iw_statistics, optimize_policy
from .renyi import FORMS, JointDistribution, test_renyi_rationality
from .simulate import AgentSpec, gen_rational_agent, gen_renyi_agent, gen_violation, sample_dataset

logger = logging.getLogger("inattention")

EXIT_OK, EXIT_REJECTED, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# I/O helpers


def _clean(obj: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, NaN and infinities to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2) + "\n"


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input file not found: {path}")
    return p.read_text()


def _write_text(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _schema(arg: str | None) -> DatasetSchema | None:
    if arg is None:
        return None
    if arg == "youtube":
        return YOUTUBE_SCHEMA
    return DatasetSchema.from_dict(json.loads(_read_text(arg)))


def _parse(path: str, text: str, schema: DatasetSchema | None) -> StochasticChoiceDataset:
    try:
        return parse_csv(text, schema)
    except DatasetError as exc:
        name = "<stdin>" if path == "-" else path
        msg = re.sub(r"^line (\d+): ", r"\1: ", str(exc))
        raise DatasetError(f"{name}:{msg}") from None


def _load_input(path: str, schema: DatasetSchema | None) -> tuple[EstimatedModel, StochasticChoiceDataset | None]:
    """A dataset CSV or a model JSON (as written by ``estimate`` or ``simulate --exact``)."""
    text = _read_text(path)
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        if data.get("kind") != "model":
            raise UsageError(f"{path}: JSON input must be a model artifact (kind=model)")
        return EstimatedModel.from_dict(data), None
    d = _parse(path, text, schema)
    return compute_posteriors(estimate_policy_prior(d)), d


def _load_dataset(path: str, schema: DatasetSchema | None) -> StochasticChoiceDataset:
    text = _read_text(path)
    if text.lstrip().startswith("{"):
        raise UsageError(f"{path}: this command needs record-level data (CSV), not a model")
    return _parse(path, text, schema)


def _model_json(m: EstimatedModel) -> dict[str, Any]:
    return {"kind": "model", **m.to_dict()}


def _utility_from_json(data: dict[str, Any], schema: DatasetSchema) -> np.ndarray:
    """Witness utility from a test-niat artifact or a plain nested list ``[f][x][a]``."""
    if isinstance(data, list):
        return np.asarray(data, dtype=float)
    if "utility" in data and isinstance(data["utility"], list):
        return np.asarray(data["utility"], dtype=float)
    u = np.full((schema.frame_count, schema.state_count, schema.max_actions), np.nan)
    for f, fr in data.get("result", data).get("frames", {}).items():
        for x, row in fr.get("utility", {}).items():
            for a, v in row.items():
                u[int(f) - 1, int(x) - 1, int(a) - 1] = np.nan if v is None else v
    return u


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _parse_ints(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _probability(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"must lie in (0, 1), got {v}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {v}")
    return v


def _non_negative(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be non-negative, got {v}")
    return v


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(args: argparse.Namespace) -> int:
    d = _load_dataset(args.input, _schema(args.schema))
    summary = {
        "kind": "dataset-summary",
        "schema": d.schema.to_dict(),
        "T": d.T,
        "T_k": list(d.T_k),
    }
    if args.output:
        Path(args.output).write_text(d.to_csv())
    _write_text(args.summary, dumps(summary))
    return EXIT_OK


def cmd_estimate(args: argparse.Namespace) -> int:
    m, _ = _load_input(args.input, _schema(args.schema))
    for note in m.notes:
        logger.info(note)
    _write_text(args.output, dumps(_model_json(m)))
    return EXIT_OK


def cmd_cluster_frames(args: argparse.Namespace) -> int:
    t, X = read_features(args.features)
    cfg = TrainingConfig(args.learning_rate, args.momentum, args.batch_size, args.pretrain_epochs, args.seed)
    ae = Autoencoder(X.shape[1], args.latent_dim, (args.hidden,), "tanh", args.noise, seed=args.seed)
    ae, history = pretrain(X, ae, cfg, n_clusters=args.n_clusters)
    centers = init_centers(ae.encode(X), args.n_clusters, args.n_init, args.seed)
    res = dec_train(
        ae, X, centers, args.delta, args.delta_c, args.zeta, args.max_iter, args.full_batch, cfg
    )
    write_assignments(args.output, t, res)
    if args.latent_out:
        write_latent(args.latent_out, t, res.latent)
    summary: dict[str, Any] = {
        "kind": "frame-clustering",
        "n_clusters": args.n_clusters,
        "records": int(len(t)),
        "discarded": res.discarded,
        "converged": res.converged,
        "iterations": res.iterations,
        "refreshes": res.refreshes,
        "changed_history": res.changed_history,
        "pretrain_loss": [history[0], history[-1]],
        "frequencies": res.frequencies,
    }
    if args.dataset:
        d = _load_dataset(args.dataset, _schema(args.schema))
        frame_of = {int(tt): int(lab) for tt, lab in zip(t, res.labels)}
        missing = [int(tt) for tt in d.t if int(tt) not in frame_of]
        if missing:
            raise UsageError(f"feature file lacks records for t={missing[:5]}")
        labels = np.array([frame_of[int(tt)] for tt in d.t])
        keep = labels >= 0
        logger.info("dropped %d records below the confidence threshold", int((~keep).sum()))
        new = d.select(keep).with_frames(labels[keep] + 1, args.n_clusters)
        summary["dataset_dropped"] = int((~keep).sum())
        if args.dataset_out:
            Path(args.dataset_out).write_text(new.to_csv())
    _write_text(args.summary, dumps(summary))
    return EXIT_OK


def _verdict_exit(verdict: str) -> int:
    if verdict == NOT_RATIONALIZABLE:
        return EXIT_REJECTED
    if verdict == UNDECIDED:
        logger.warning("verdict undecided for at least one frame; see the notes in the output")
    return EXIT_OK


def cmd_test_niat(args: argparse.Namespace) -> int:
    m, _ = _load_input(args.input, _schema(args.schema))
    est = test_rational_inattention(m, args.node_limit, args.max_binaries, args.big_m)
    out = {"kind": "niat-result", "schema": m.schema.to_dict(), "result": est.to_dict()}
    _write_text(args.output, dumps(out))
    return _verdict_exit(est.verdict)


def cmd_test_renyi(args: argparse.Namespace) -> int:
    if not 0 < args.beta < 1:
        raise UsageError(
            f"beta = {args.beta:g} is not covered by the Rényi multiplier characterization, "
            "which requires 0 < beta < 1 (beta = 1 is the Shannon case; use test-niat)"
        )
    m, _ = _load_input(args.input, _schema(args.schema))
    if args.utility:
        u = _utility_from_json(json.loads(_read_text(args.utility)), m.schema)
        cells = []
        verdict = RATIONALIZABLE
        for k in range(m.K):
            A = m.schema.action_counts[k]
            for f in range(m.N):
                if not m.complete(k, f):
                    continue
                j = JointDistribution.from_policy(m.prior, m.policies[k][f])
                res = test_renyi_rationality(j, args.beta, u[f, :, :A], args.form, args.tol)
                cells.append({"k": k + 1, "f": f + 1, **res.to_dict()})
                if not res.accepts:
                    verdict = NOT_RATIONALIZABLE
        out = {"kind": "renyi-result", "schema": m.schema.to_dict(), "beta": args.beta,
               "form": args.form, "verdict": verdict, "cells": cells}
    else:
        est = renyi_constrained_test(m, args.beta, args.form, max_binaries=args.max_binaries)
        verdict = est.verdict
        out = {"kind": "renyi-result", "schema": m.schema.to_dict(), "beta": args.beta,
               "form": args.form, "verdict": verdict, "result": est.to_dict()}
    _write_text(args.output, dumps(out))
    return _verdict_exit(verdict)


def cmd_recover_cost(args: argparse.Namespace) -> int:
    m, _ = _load_input(args.input, _schema(args.schema))
    if args.utility:
        u = _utility_from_json(json.loads(_read_text(args.utility)), m.schema)
    else:
        est = test_rational_inattention(m, max_binaries=args.max_binaries)
        if est.verdict != RATIONALIZABLE:
            _write_text(args.output, dumps({"kind": "cost", "verdict": est.verdict, "frames": {}}))
            return _verdict_exit(est.verdict)
        u = est.u
    frames: dict[str, Any] = {}
    for f in range(m.N):
        if np.all(np.isnan(u[f])):
            continue
        G = compute_G(m, np.nan_to_num(u, nan=0.0), f)
        if not G.problems:
            continue
        anchor = None
        if args.anchor is not None:
            if args.anchor not in [k + 1 for k in G.problems]:
                raise UsageError(f"anchor problem {args.anchor} is not complete in frame {f + 1}")
            anchor = [k + 1 for k in G.problems].index(args.anchor)
        c = recover_information_cost(G, anchor)
        frames[str(f + 1)] = {
            "problems": [k + 1 for k in c.problems],
            "feasible": c.feasible,
            "cost": c.cost,
            "anchor": None if c.anchor is None else c.problems[c.anchor] + 1,
            "bounds": c.bounds,
            "G": G.values,
        }
    _write_text(args.output, dumps({"kind": "cost", "schema": m.schema.to_dict(), "frames": frames}))
    return EXIT_OK


def cmd_optimize_policy(args: argparse.Namespace) -> int:
    schema = _schema(args.schema)
    d = _load_dataset(args.input, schema)
    u = _utility_from_json(json.loads(_read_text(args.utility)), d.schema)
    if np.any(np.isnan(u)):
        raise UsageError("the utility has undefined entries (frames without a witness)")
    lam = args.lambda_bar
    if len(lam) not in (1, d.schema.problem_count):
        raise UsageError(f"--lambda-bar needs 1 or K={d.schema.problem_count} values")
    res = optimize_policy(d, u, lam if len(lam) > 1 else lam[0], args.rationality, args.w_max)
    bounds = []
    for st in iw_statistics(d, res.policies, u, w_max=args.w_max):
        try:
            rep = bernstein_bound(st, args.gamma, args.lam, args.rho)
            bounds.append(rep.to_dict())
        except BoundPreconditionError as exc:
            bounds.append({**st.to_dict(), "bound": None, "note": str(exc)})
    out = {
        "kind": "policy",
        "schema": d.schema.to_dict(),
        "result": res.to_dict(),
        "bounds": bounds,
        "note": "the penalized program is solved by projected gradient ascent, not as a MILP",
    }
    _write_text(args.output, dumps(out))
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    spec = AgentSpec(args.states, args.actions, args.frames)
    if args.kind in ("nias", "niac"):
        m = gen_violation(args.kind, args.seed, spec if args.custom_spec else None)
        _write_text(args.output, dumps(_model_json(m)))
        return EXIT_OK
    if args.kind == "renyi":
        agent = gen_renyi_agent(spec, args.beta, args.kappa_max, args.seed)
    else:
        agent = gen_rational_agent(spec, args.seed)
    if args.agent_out:
        Path(args.agent_out).write_text(dumps(agent.to_dict()))
    if args.exact:
        _write_text(args.output, dumps(_model_json(agent.exact_model())))
    else:
        d = sample_dataset(agent, args.T, args.seed)
        _write_text(args.output, d.to_csv())
    return EXIT_OK


def _labels(schema: dict[str, Any] | None, key: str, n: int, prefix: str) -> list[str]:
    given = (schema or {}).get(key)
    return list(given) if given else [f"{prefix}{i + 1}" for i in range(n)]


def cmd_report(args: argparse.Namespace) -> int:
    root = Path(args.artifacts)
    if not root.is_dir():
        raise UsageError(f"artifact directory not found: {root}")
    artifacts = []
    for p in sorted(root.glob("*.json")):
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError:
            continue
        if isinstance(data, dict) and "kind" in data:
            artifacts.append((p.name, data))
    if not artifacts:
        raise UsageError(f"no artifacts found in {root}")
    lines: list[str] = []
    rows: list[list[str]] = []
    for name, data in artifacts:
        kind = data["kind"]
        schema = data.get("schema")
        if kind == "niat-result":
            res = data["result"]
            lines.append(f"[{name}] rational inattention test: {res['verdict']}")
            n_states = (schema or {}).get("state_count", 0)
            for f, fr in sorted(res["frames"].items(), key=lambda t: int(t[0])):
                lines.append(f"  frame {f}: {fr['verdict']} (problems {fr['problems']})")
                util = fr.get("utility")
                if not util:
                    continue
                n_actions = max(len(r) for r in util.values())
                s_lab = _labels(schema, "state_labels", max(n_states, len(util)), "x")
                a_lab = _labels(schema, "action_labels", n_actions, "a")
                for x, row in sorted(util.items(), key=lambda t: int(t[0])):
                    cells = ", ".join(
                        f"{a_lab[int(a) - 1]}={v:.4f}" for a, v in sorted(row.items(), key=lambda t: int(t[0]))
                        if v is not None
                    )
                    lines.append(f"    {s_lab[int(x) - 1]}: {cells}")
                    for a, v in sorted(row.items(), key=lambda t: int(t[0])):
                        if v is not None:
                            rows.append([f, x, a, s_lab[int(x) - 1], a_lab[int(a) - 1], repr(float(v))])
        elif kind == "renyi-result":
            lines.append(f"[{name}] Rényi-cost test (beta={data['beta']}, {data['form']} form): {data['verdict']}")
        elif kind == "cost":
            lines.append(f"[{name}] information costs")
            for f, fr in sorted(data.get("frames", {}).items(), key=lambda t: int(t[0])):
                lines.append(f"  frame {f}: problems {fr['problems']} cost {fr['cost']}")
                if fr.get("bounds") is not None:
                    lines.append(f"    intervals {fr['bounds']}")
        elif kind == "policy":
            res = data["result"]
            lines.append(
                f"[{name}] optimized policy: objective {res['objective']:.6f} "
                f"(logging policy {res['baseline_objective']:.6f}) flags {res['flags']}"
            )
            for b in data.get("bounds", []):
                bound = b.get("bound")
                text = "n/a" if bound is None else f"{bound:.6f}"
                lines.append(f"  problem {b['k']}: value {b['value']:.6f} upper bound {text}")
        elif kind == "frame-clustering":
            lines.append(
                f"[{name}] frame clustering: {data['n_clusters']} frames, "
                f"{data['discarded']} of {data['records']} records discarded, converged={data['converged']}"
            )
        elif kind == "model":
            lines.append(f"[{name}] estimated model with {len(data['problems'])} problems")
        elif kind == "dataset-summary":
            lines.append(f"[{name}] dataset with T={data['T']} records")
    if args.csv:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["frame", "state", "action", "state_label", "action_label", "utility"])
        w.writerows(rows)
        Path(args.csv).write_text(buf.getvalue())
    _write_text(args.output, "\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser, input_name: str = "input") -> None:
    p.add_argument(input_name, nargs="?", default="-", help="input file, '-' for stdin (default)")
    p.add_argument("-o", "--output", default=None, help="output file (default stdout)")
    p.add_argument("--schema", default=None, help="schema JSON file, or 'youtube' for the built-in schema")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="inattention",
        description="Revealed-preference tests for rationally inattentive choice data.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", default=None, help="flat key=value file of option defaults")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    p = sub.add_parser("ingest", help="validate a t,x,f,a,k CSV")
    p.add_argument("input", help="dataset CSV, '-' for stdin")
    p.add_argument("-o", "--output", default=None, help="write the canonical CSV here")
    p.add_argument("--summary", default=None, help="summary JSON path (default stdout)")
    p.add_argument("--schema", default=None, help="schema JSON file, or 'youtube'")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("cluster-frames", help="learn discrete frames from feature vectors")
    p.add_argument("features", help="feature CSV t,v1,...,vd")
    p.add_argument("-o", "--output", required=True, help="frame assignment CSV t,frame,confidence")
    p.add_argument("--summary", default=None, help="summary JSON path (default stdout)")
    p.add_argument("--latent-out", default=None, help="latent vector CSV for external plotting")
    p.add_argument("--dataset", default=None, help="dataset CSV whose f column is replaced")
    p.add_argument("--dataset-out", default=None, help="where to write the relabelled dataset")
    p.add_argument("--schema", default=None)
    p.add_argument("--n-clusters", type=_positive_int, default=4)
    p.add_argument("--latent-dim", type=_positive_int, default=8)
    p.add_argument("--hidden", type=_positive_int, default=64)
    p.add_argument("--noise", type=_non_negative, default=0.1)
    p.add_argument("--learning-rate", type=float, default=1e-3)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=_positive_int, default=32)
    p.add_argument("--pretrain-epochs", type=int, default=100)
    p.add_argument("--n-init", type=_positive_int, default=10)
    p.add_argument("--delta", type=_probability, default=1e-3, help="label-change stopping threshold")
    p.add_argument("--delta-c", type=_probability, default=0.9, help="confidence threshold")
    p.add_argument("--zeta", type=_positive_int, default=140, help="target refresh interval")
    p.add_argument("--max-iter", type=_positive_int, default=20000)
    p.add_argument("--full-batch", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_cluster_frames)

    p = sub.add_parser("estimate", help="maximum-likelihood prior, policies and posteriors")
    _add_common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("test-niat", help="rational inattention test with a witness utility")
    _add_common(p)
    p.add_argument("--max-binaries", type=_positive_int, default=64)
    p.add_argument("--node-limit", type=_positive_int, default=20000)
    p.add_argument("--big-m", type=float, default=10.0)
    p.set_defaults(func=cmd_test_niat)

    p = sub.add_parser("test-renyi", help="test against a Rényi information cost")
    _add_common(p)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--form", choices=FORMS, default="printed")
    p.add_argument("--utility", default=None, help="known utility (test-niat output or [f][x][a] list)")
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-binaries", type=_positive_int, default=64)
    p.set_defaults(func=cmd_test_renyi)

    p = sub.add_parser("recover-cost", help="information costs consistent with the attention values")
    _add_common(p)
    p.add_argument("--utility", default=None, help="witness utility (test-niat output)")
    p.add_argument("--anchor", type=_positive_int, default=None, help="problem whose cost is fixed to 0")
    p.add_argument("--max-binaries", type=_positive_int, default=64)
    p.set_defaults(func=cmd_recover_cost)

    p = sub.add_parser("optimize-policy", help="variance-penalized policy improvement with bounds")
    _add_common(p)
    p.add_argument("--utility", required=True, help="utility (test-niat output or [f][x][a] list)")
    p.add_argument("--lambda-bar", type=_parse_floats, default=[1.0], help="one value or one per problem")
    p.add_argument("--w-max", type=float, default=None, help="cap on pi / pi_hat (default none)")
    p.add_argument("--rationality", action="store_true")
    p.add_argument("--gamma", type=_probability, default=0.05)
    p.add_argument("--rho", type=float, default=2.0, help="covering-number exponent")
    p.add_argument("--lambda", dest="lam", type=_non_negative, default=None, help="override the confidence coefficient")
    p.set_defaults(func=cmd_optimize_policy)

    p = sub.add_parser("simulate", help="synthetic agent: exact model JSON or sampled CSV")
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--kind", choices=("rational", "renyi", "nias", "niac"), default="rational")
    p.add_argument("--states", type=_positive_int, default=2)
    p.add_argument("--actions", type=_parse_ints, default=(2, 2))
    p.add_argument("--frames", type=_positive_int, default=1)
    p.add_argument("--T", type=_positive_int, default=1000)
    p.add_argument("--exact", action="store_true", help="emit population frequencies as a model")
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--kappa-max", type=_non_negative, default=0.1)
    p.add_argument("--agent-out", default=None, help="write the ground-truth agent JSON here")
    p.add_argument("--custom-spec", action="store_true", help="use the sizes above for violation fixtures")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize artifacts in a directory")
    p.add_argument("artifacts", help="directory of JSON artifacts")
    p.add_argument("-o", "--output", default=None)
    p.add_argument("--csv", default=None, help="witness utility table CSV for plotting")
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> None:
    """Install key=value config entries as defaults of the chosen subcommand."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", default=None)
    known, rest = pre.parse_known_args(argv)
    if known.config is None:
        return
    command = next((a for a in rest if not a.startswith("-")), None)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in sub_action.choices:
        return
    sub = sub_action.choices[command]
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help",)}
    defaults: dict[str, Any] = {}
    for lineno, raw in enumerate(_read_text(known.config).splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{known.config}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest not in actions:
            raise UsageError(f"{known.config}:{lineno}: unknown key {key!r} for {command}")
        act = actions[dest]
        if isinstance(act, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
                raise UsageError(f"{known.config}:{lineno}: {key} expects a boolean")
            defaults[dest] = value.lower() in ("true", "1", "yes")
        else:
            try:
                defaults[dest] = act.type(value) if act.type else value
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{known.config}:{lineno}: {key}: {exc}") from None
            if act.choices is not None and defaults[dest] not in act.choices:
                raise UsageError(f"{known.config}:{lineno}: {key} must be one of {list(act.choices)}")
    for dest in defaults:
        actions[dest].required = False
    sub.set_defaults(**defaults)


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
    except UsageError as exc:
        print(f"inattention: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="inattention: %(message)s",
        stream=sys.stderr,
    )
    if args.verbose:
        logging.captureWarnings(True)
    handler: Callable[[argparse.Namespace], int] = args.func
    try:
        with warnings.catch_warnings():
            if not args.verbose:
                warnings.simplefilter("ignore")
            return handler(args)
    except (UsageError, DatasetError, ClusteringError, TrainingDivergedError,
            json.JSONDecodeError, KeyError, ValueError) as exc:
        print(f"inattention: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"inattention: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
