"""Command-line entry point: ``ccnn {solve,train,sweep,gradcheck}``.

Exit codes: 0 success, 1 a check failed, 2 bad usage or input.
"""

import argparse
import dataclasses
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .constraints import ConstraintConfig, ConstraintSet
from .distributions import InvalidInputError, as_scores, softmax
from .dual_solver import SolverConfig, dual_gradient, dual_value, solve
from .loss import kl_divergence
from .oracle import bisection_oracle, grid_oracle, primal_descent_oracle, random_instance
from .scorer import LinearScorer, conv_scorer, gradient_check, linear_scorer, save_parameters
from .synthdata import generate, load_dataset, mean_iou
from .trainer import TrainConfig, metrics_csv, predict, train

SWEEP_PARAMS = ("a_fg", "a_bg", "b_bg", "b_small")
CHECK_KL_THRESHOLD = 1e-6


class UsageError(Exception):
    pass


def _emit(payload, out):
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _read_json(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {path}: {exc}") from exc


def _solver_config(d, args=None):
    d = dict(d or {})
    if args is not None:
        if args.max_iters is not None:
            d["max_iters"] = args.max_iters
        if args.tolerance is not None:
            d["tolerance"] = args.tolerance
    try:
        return SolverConfig(**d)
    except TypeError as exc:
        raise UsageError(f"bad solver config: {exc}") from exc


# --- solve ------------------------------------------------------------------


def run_oracle(scores, cs):
    """Pick the cheapest applicable reference solver; return ``(name, P)``."""
    if cs.k == 0:
        return "softmax", softmax(scores)
    if cs.k == 1:
        return "bisection", bisection_oracle(scores, cs)[0]
    if cs.k == 2:
        return "grid", grid_oracle(scores, cs, resolution=401)[0]
    return "primal_descent", primal_descent_oracle(scores, cs)


def cmd_solve(args):
    inst = _read_json(args.instance)
    try:
        scores = as_scores(inst["scores"])
        cs = ConstraintSet.from_list(inst.get("constraints", []), *scores.shape)
    except (KeyError, TypeError, InvalidInputError) as exc:
        raise UsageError(f"invalid instance: {exc}") from exc
    config = _solver_config(inst.get("solver"), args)
    p, state = solve(scores, cs, config)
    result = {
        "P": p.tolist(),
        "lambda": state.lam.tolist(),
        "dual_value": state.dual_values[-1],
        "iterations": state.iterations,
        "max_violation": state.max_violation,
        "converged": bool(state.converged),
        "config": dataclasses.asdict(config),
    }
    code = 0
    if args.check:
        name, p_ref = run_oracle(scores, cs)
        gap = kl_divergence(p, p_ref)
        result["check"] = {"oracle": name, "kl_gap": gap, "threshold": CHECK_KL_THRESHOLD}
        code = 0 if gap <= CHECK_KL_THRESHOLD else 1
    _emit(result, args.out)
    return code


# --- train ------------------------------------------------------------------

TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)} - {"solver", "constraint_cfg"}


def resolve_train_config(raw, seed=None):
    """Fill defaults into a raw train-config dict; returns a plain dict."""
    if not isinstance(raw, dict):
        raise UsageError("train config must be a JSON object")
    known = TRAIN_KEYS | {"solver", "constraints", "data", "scorer"}
    unknown = set(raw) - known
    if unknown:
        raise UsageError(f"unknown config keys: {sorted(unknown)}")
    cfg = {k: raw[k] for k in TRAIN_KEYS if k in raw}
    if seed is not None:
        cfg["seed"] = seed
    try:
        tc = TrainConfig(
            solver=_solver_config(raw.get("solver")),
            constraint_cfg=ConstraintConfig(**raw.get("constraints", {})),
            **cfg,
        )
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid train config: {exc}") from exc
    resolved = dataclasses.asdict(tc)
    resolved["mode"] = tc.mode.value
    resolved["constraints"] = resolved.pop("constraint_cfg")
    data = {"train_count": 200, "val_count": 100, "grid_side": 16, "m": 4, "noise_std": 0.5, "seed": tc.seed}
    data.update(raw.get("data", {}))
    scorer = {"kind": "linear"}
    scorer.update(raw.get("scorer", {}))
    if scorer["kind"] not in ("linear", "conv"):
        raise UsageError(f"unknown scorer kind {scorer['kind']!r}")
    resolved["data"] = data
    resolved["scorer"] = scorer
    return resolved


def build_train_config(resolved):
    d = dict(resolved)
    for key in ("data", "scorer"):
        d.pop(key)
    return TrainConfig(
        solver=SolverConfig(**d.pop("solver")),
        constraint_cfg=ConstraintConfig(**d.pop("constraints")),
        **d,
    )


def load_data(data):
    if "path" in data:
        train_set = load_dataset(data["path"])
        val_set = load_dataset(data["val_path"]) if data.get("val_path") else []
        return train_set, val_set
    try:
        train_set = generate(data["train_count"], data["grid_side"], data["m"], data["noise_std"], data["seed"])
        val_set = generate(
            data["val_count"], data["grid_side"], data["m"], data["noise_std"],
            [data["seed"], 1], first_id=data["train_count"],
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid data config: {exc}") from exc
    return train_set, val_set


def make_scorer(options, d, m, seed):
    if options["kind"] == "linear":
        return linear_scorer(d, m, seed)
    return conv_scorer(options.get("channels", 8), options.get("kernel_size", 3), m, seed, d=d)


def run_training(resolved):
    """Train from a resolved config dict; returns ``(state, summary)``."""
    tc = build_train_config(resolved)
    train_set, val_set = load_data(resolved["data"])
    # features carry one noisy indicator channel per label
    m = d = train_set[0].features.shape[-1]
    scorer = make_scorer(resolved["scorer"], d, m, tc.seed)
    state = train(train_set, tc, scorer=scorer, val=val_set)
    summary = {"config": resolved, "steps": state.step}
    for name, examples in (("train", train_set), ("val", val_set)):
        if examples:
            per_class, miou = mean_iou(predict(scorer, examples), np.stack([e.mask for e in examples]), m)
            summary[f"iou_{name}"] = miou
            summary[f"iou_{name}_per_class"] = [None if math.isnan(v) else v for v in per_class]
    return state, summary


def cmd_train(args):
    resolved = resolve_train_config(_read_json(args.config), seed=args.seed)
    state, summary = run_training(resolved)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(state.metrics))
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    save_parameters(out / "checkpoint.bin", state.scorer.get_params())
    sys.stdout.write(json.dumps({k: summary[k] for k in summary if k.startswith("iou_") and "per_class" not in k},
                                sort_keys=True) + "\n")
    return 0


# --- sweep ------------------------------------------------------------------


def _sweep_cell(job):
    resolved, param, value, seed = job
    cell = json.loads(json.dumps(resolved))
    cell["constraints"][param] = value
    cell["seed"] = seed
    cell["data"]["seed"] = seed
    try:
        _, summary = run_training(resolve_train_config(cell))
        return param, value, seed, summary.get("iou_val", summary["iou_train"]), None
    except Exception as exc:  # noqa: BLE001 - a failed cell is reported, not fatal
        return param, value, seed, None, f"{type(exc).__name__}: {exc}"


def _parse_values(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad value list {text!r}") from exc


def sweep(resolved, grid, seeds, workers=1):
    """Train every ``(param, value, seed)`` cell; returns ``(rows, summary)``.

    ``summary["averaged_std"]`` is the spread (population std) of the mean
    IoU across each parameter's values, averaged over the swept parameters.
    """
    jobs = [(resolved, p, v, s) for p, values in grid for v in values for s in seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sweep_cell, jobs))
    else:
        results = [_sweep_cell(j) for j in jobs]
    rows, failures = [], []
    for p, values in grid:
        for v in values:
            cell = [r for r in results if r[0] == p and r[1] == v]
            ok = [r[3] for r in cell if r[4] is None]
            failures += [{"param": p, "value": v, "seed": r[2], "error": r[4]} for r in cell if r[4]]
            rows.append({
                "param": p, "value": v, "runs": len(cell), "failures": len(cell) - len(ok),
                "mean_iou": float(np.mean(ok)) if ok else float("nan"),
                "std_iou": float(np.std(ok)) if ok else float("nan"),
            })
    per_param = {}
    for p, _ in grid:
        means = [r["mean_iou"] for r in rows if r["param"] == p]
        per_param[p] = float(np.std(means))
    summary = {
        "config": resolved,
        "seeds": list(seeds),
        "per_param_std": per_param,
        "averaged_std": float(np.mean(list(per_param.values()))),
        "mean_seed_std": float(np.mean([r["std_iou"] for r in rows])),
        "failed_runs": failures,
    }
    return rows, summary


def sweep_csv(rows):
    lines = ["param,value,mean_iou,std_iou,runs,failures"]
    for r in rows:
        lines.append(f"{r['param']},{r['value']!r},{r['mean_iou']!r},{r['std_iou']!r},{r['runs']},{r['failures']}")
    return "\n".join(lines) + "\n"


def cmd_sweep(args):
    if not args.param or len(args.param) != len(args.values):
        raise UsageError("give one --values list per --param")
    for p in args.param:
        if p not in SWEEP_PARAMS:
            raise UsageError(f"unknown sweep parameter {p!r}; choose from {SWEEP_PARAMS}")
    grid = [(p, _parse_values(v)) for p, v in zip(args.param, args.values)]
    seeds = [int(s) for s in args.seeds.split(",")]
    resolved = resolve_train_config(_read_json(args.config))
    for p, values in grid:
        for v in values:
            try:
                ConstraintConfig(**{**resolved["constraints"], p: v})
            except InvalidInputError as exc:
                raise UsageError(str(exc)) from exc
    workers = max(1, int(os.environ.get("CCNN_THREADS", "1")))
    rows, summary = sweep(resolved, grid, seeds, workers)
    text = sweep_csv(rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(text)
        (out / "sweep_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(text)
    sys.stderr.write(f"averaged std of mean IoU across values: {summary['averaged_std']:.6f}\n")
    return 1 if summary["failed_runs"] else 0


# --- gradcheck ----------------------------------------------------------------


class _SignFlippedLinear(LinearScorer):
    def backward(self, grad_scores):
        return -super().backward(grad_scores)


def dual_gradient_check(rng, h, instances=20):
    worst = 0.0
    for _ in range(instances):
        f, cs = random_instance(rng)
        lam = rng.uniform(0.1, 2.0, size=cs.k)
        g = dual_gradient(lam, f, cs)
        for j in range(cs.k):
            e = np.zeros(cs.k)
            e[j] = h
            fd = (dual_value(lam + e, f, cs) - dual_value(lam - e, f, cs)) / (2 * h)
            worst = max(worst, abs(fd - g[j]) / max(abs(g[j]), 1e-3))
    return worst


def cmd_gradcheck(args):
    rng = np.random.default_rng(args.seed)
    feats = rng.normal(size=(6, 6, 3))
    lin = (_SignFlippedLinear if args.corrupt_backward else LinearScorer)(3, 4, args.seed)
    conv = conv_scorer(4, 3, 4, args.seed, d=3)
    conv.w2 = rng.normal(scale=0.5, size=conv.w2.shape)
    report = {
        "config": {"h": args.h, "seed": args.seed, "probes": args.probes},
        "linear": {"error": gradient_check(lin, feats, args.probes, args.h, args.seed),
                   "threshold": args.threshold_linear},
        "conv": {"error": gradient_check(conv, feats, args.probes, args.h, args.seed),
                 "threshold": args.threshold_conv},
        "dual": {"error": dual_gradient_check(rng, args.h), "threshold": args.threshold_dual},
    }
    ok = all(report[k]["error"] <= report[k]["threshold"] for k in ("linear", "conv", "dual"))
    report["passed"] = ok
    _emit(report, args.out)
    return 0 if ok else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="ccnn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)

    p = sub.add_parser("solve", help="project a score matrix onto constraints")
    p.add_argument("instance")
    common(p)
    p.add_argument("--check", action="store_true", help="compare against a reference solver")
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--tolerance", type=float, default=None)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="train on a synthetic or JSON dataset")
    p.add_argument("config")
    common(p)
    p.set_defaults(func=cmd_train, out="run")

    p = sub.add_parser("sweep", help="line search over constraint bounds")
    p.add_argument("config")
    p.add_argument("--param", action="append", default=[])
    p.add_argument("--values", action="append", default=[])
    p.add_argument("--seeds", default="0")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.add_argument("--h", type=float, default=1e-5)
    p.add_argument("--probes", type=int, default=20)
    p.add_argument("--threshold-linear", type=float, default=1e-6)
    p.add_argument("--threshold-conv", type=float, default=1e-4)
    p.add_argument("--threshold-dual", type=float, default=1e-6)
    p.add_argument("--corrupt-backward", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (UsageError, InvalidInputError) as exc:
        sys.stderr.write(f"ccnn {args.command}: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())
