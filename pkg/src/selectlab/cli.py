"""Manifest-driven experiment runner.

    selectlab list
    selectlab run <manifest.json | bundled-name> [--jobs N] [--out DIR] [--seed S]

A manifest is JSON with a mandatory ``seed`` and a list of ``suites``; each
suite names a runner below plus its parameters and sweep axes.  The run
writes ``results.csv`` (one row per bound report), ``estimates.csv`` and
``manifest-echo.json``.  Exit status: 0 when every non-vacuous bound holds
with clean assumption flags, 2 on any violation or flag, 1 on a
configuration error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import numpy as np

from selectlab import __version__
from selectlab.agents import noisy_policy, optimal_policy, policy_from_dict
from selectlab.environments import EvaluationDistribution, FinitePOMDP, environment_from_dict
from selectlab.errors import ConfigurationError, LabError
from selectlab.goals import test_from_dict
from selectlab import scenarios
from selectlab import verifier as V

log = logging.getLogger("selectlab")

OUT_ENV = "SELECTLAB_OUT"
RESULT_COLUMNS = (
    "theorem", "seed", "gamma", "n", "K", "epsilon",
    "lhs", "rhs", "slack", "satisfied", "vacuous", "assumption_flags",
)
ESTIMATE_COLUMNS = ("cell", "theorem", "seed", "n", "K", "epsilon", "key", "estimate", "truth")


def fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return "%.12g" % float(x)
    return str(x)


# ---------------------------------------------------------------------------
# Cells: one unit of work each; the result carries rows, never live objects
# ---------------------------------------------------------------------------


def _row(report: V.BoundReport, seed: int, **axes: Any) -> dict[str, Any]:
    return {
        "theorem": report.theorem,
        "seed": seed,
        "gamma": axes.get("gamma"),
        "n": axes.get("n"),
        "K": axes.get("K"),
        "epsilon": axes.get("epsilon"),
        "lhs": report.lhs,
        "rhs": report.rhs,
        "slack": report.slack,
        "satisfied": report.satisfied,
        "vacuous": report.vacuous,
        "assumption_flags": ";".join(report.flags),
    }


def _policy(params: dict[str, Any], eps: float | None):
    if eps is not None:
        return noisy_policy(eps) if eps > 0 else optimal_policy()
    return policy_from_dict(params.get("policy", {"kind": "optimal"}))


def _env(spec: Any, seed: int):
    if isinstance(spec, str):
        spec = {"builder": spec}
    spec = dict(spec)
    if spec.get("builder", "").startswith("random_"):
        spec.setdefault("seed", seed)
    return environment_from_dict(spec)


def cell_lemma1(p: dict, seed: int):
    r = V.lemma1_identity(int(p.get("n_triples", 10_000)), seed)
    return [_row(r, seed)], []


def cell_thm1(p: dict, seed: int):
    mdp = _env(p["environment"], seed)
    eps = p.get("epsilon")
    n = int(p["n"])
    gammas = p["gamma"] if isinstance(p["gamma"], list) else [p["gamma"]]
    reports = V.verify_thm1_grid(mdp, _policy(p, eps), n, gammas)
    est = reports[0].details["estimate"]
    rows = [_row(r, seed, gamma=g, n=n, epsilon=eps) for r, g in zip(reports, gammas)]
    estimates = [
        {"key": f"{s},{a},{s2}", "estimate": est.table[s, a, s2], "truth": est.truth[s, a, s2], "n": n, "epsilon": eps}
        for s, a, s2 in itertools.product(*map(range, est.table.shape))
    ]
    return rows, estimates


def cell_cor1(p: dict, seed: int):
    mdp = _env(p["environment"], seed)
    eps = p.get("epsilon")
    r = V.verify_cor1(mdp, _policy(p, eps), int(p["n"]), p["gamma"], p["eps_cmp"], seed=seed, mode=p.get("mode", "random"))
    return [_row(r, seed, gamma=p["gamma"], n=int(p["n"]), epsilon=p["eps_cmp"])], []


def cell_cor2(p: dict, seed: int):
    return [_row(V.verify_cor2(), seed)], []


def cell_prop1(p: dict, seed: int):
    r = V.verify_prop1(p["p"], p["q"], int(p.get("depth", 3)))
    return [_row(r, seed)], []


def _evaluation(p: dict, seed: int) -> tuple[FinitePOMDP, EvaluationDistribution]:
    pomdp = _env(p["environment"], seed)
    if "tests" in p:
        ev = scenarios.pomdp_evaluation(pomdp, int(p.get("history_length", 1)), 1)
        tests = [(test_from_dict(t), float(t.get("weight", 1.0))) for t in p["tests"]]
        return pomdp, ev.with_tests(tests)
    family = tuple(p.get("family", ("singletons", "prefix", "complements")))
    return pomdp, scenarios.pomdp_evaluation(pomdp, int(p.get("history_length", 1)), int(p.get("test_depth", 2)), family)


def cell_thm4(p: dict, seed: int):
    pomdp, ev = _evaluation(p, seed)
    eps = p.get("epsilon")
    r = V.verify_thm4(pomdp, _policy(p, eps), ev, p["gamma"])
    return [_row(r, seed, gamma=p["gamma"], epsilon=eps)], []


def cell_thm5(p: dict, seed: int):
    pomdp, ev = _evaluation(p, seed)
    eps = p.get("epsilon")
    K = int(p["K"])
    r = V.verify_thm5(pomdp, _policy(p, eps), ev, None, K)
    return [_row(r, seed, K=K, epsilon=eps)], []


def cell_thm6(p: dict, seed: int):
    pomdp, tests, histories = scenarios.dyadic_instance(p.get("flip", 0.125))
    eps = p.get("epsilon")
    K = int(p["K"])
    reports = V.verify_thm6(pomdp, tests, histories, _policy(p, eps), K)
    rows = [_row(r, seed, K=K, epsilon=eps) for r in reports]
    estimates = []
    op = reports[-1].details.get("operators")
    if op is not None:
        for sig, B in sorted(op.B_hat.items()):
            for (i, j), b in np.ndenumerate(B):
                estimates.append({"key": f"B{sig[0]}{sig[1]}[{i},{j}]", "estimate": b, "truth": None, "K": K, "epsilon": eps})
    return rows, estimates


def cell_thm7_alias(p: dict, seed: int):
    inst = scenarios.alias_instance(p.get("high", 0.8))
    memory = scenarios.named_memory(p.get("memory", "constant"), inst.histories)
    r = V.verify_thm7(inst.pomdp, memory, p.get("resolver", "cell_optimal"), inst.pairs, inst.tests, p["gamma"])
    return [_row(r, seed, gamma=p["gamma"])], []


def cell_thm7_random(p: dict, seed: int):
    cfg = scenarios.random_pair_config(int(p["config_seed"]))
    r = V.verify_thm7(cfg.pomdp, cfg.memory, cfg.resolver, cfg.pairs, cfg.tests, cfg.gamma)
    return [_row(r, int(p["config_seed"]), gamma=cfg.gamma)], []


def cell_cor3(p: dict, seed: int):
    inst = scenarios.alias_instance(p.get("high", 0.8))
    memory = scenarios.named_memory(p.get("memory", "constant"), inst.histories)
    reports = V.verify_cor3(
        inst.pomdp, scenarios.alias_blocks(), memory, p.get("resolver", "cell_optimal"), inst.pairs, p["gamma"]
    )
    return [_row(r, seed, gamma=p["gamma"]) for r in reports], []


def cell_cor4(p: dict, seed: int):
    inst = scenarios.alias_instance(p.get("high", 0.8))
    regimes, labels = scenarios.alias_regimes()
    memory = scenarios.named_memory(p.get("memory", "constant"), inst.histories)
    r = V.verify_cor4(inst.pomdp, regimes, memory, p.get("resolver", "cell_optimal"), inst.pairs, labels, p["gamma"])
    return [_row(r, seed, gamma=p["gamma"])], []


def cell_cor5(p: dict, seed: int):
    pomdp, ev = _evaluation(p, seed)
    r = V.verify_cor5(pomdp, ev, None, p["gamma"], seed=seed)
    return [_row(r, seed, gamma=p["gamma"])], []


SUITES: dict[str, Callable[[dict, int], tuple[list, list]]] = {
    "lemma1": cell_lemma1,
    "thm1": cell_thm1,
    "cor1": cell_cor1,
    "cor2": cell_cor2,
    "prop1": cell_prop1,
    "thm4": cell_thm4,
    "thm5": cell_thm5,
    "thm6": cell_thm6,
    "thm7_alias": cell_thm7_alias,
    "thm7_random": cell_thm7_random,
    "cor3": cell_cor3,
    "cor4": cell_cor4,
    "cor5": cell_cor5,
}

# axes swept as a cartesian product; everything else is passed through
SWEEP_AXES = ("environment", "n", "K", "epsilon", "eps_cmp", "mode", "memory", "config_seed", "gamma", "flip")
# suites that consume the whole gamma list in one cell
GAMMA_LIST_SUITES = {"thm1"}


def expand_suite(index: int, suite: dict[str, Any]) -> list[tuple[str, str, dict[str, Any]]]:
    name = suite.get("suite")
    if name not in SUITES:
        raise ConfigurationError(f"unknown suite {name!r}; known: {sorted(SUITES)}")
    params = {k: v for k, v in suite.items() if k != "suite"}
    if "config_seeds" in params:
        start, count = params.pop("config_seeds")
        params["config_seed"] = list(range(start, start + count))
    axes = [a for a in SWEEP_AXES if isinstance(params.get(a), list) and not (a == "gamma" and name in GAMMA_LIST_SUITES)]
    cells = []
    for j, combo in enumerate(itertools.product(*(params[a] for a in axes))):
        cell = dict(params)
        cell.update(zip(axes, combo))
        cells.append((f"{index:03d}-{name}-{j:05d}", name, cell))
    return cells


def _run_cell(job: tuple[str, str, dict[str, Any], int]):
    cell_id, name, params, seed = job
    rows, estimates = SUITES[name](params, seed)
    for e in estimates:
        e.update(cell=cell_id, theorem=rows[0]["theorem"] if rows else name, seed=seed)
    return cell_id, rows, estimates


# ---------------------------------------------------------------------------
# Manifests
# ---------------------------------------------------------------------------


def bundled_manifests() -> dict[str, Any]:
    root = resources.files("selectlab") / "manifests"
    return {p.name[:-5]: p for p in sorted(root.iterdir(), key=lambda p: p.name) if p.name.endswith(".json")}


def load_manifest(ref: str) -> dict[str, Any]:
    bundled = bundled_manifests()
    try:
        if ref in bundled:
            text = bundled[ref].read_text()
        else:
            text = Path(ref).read_text()
        manifest = json.loads(text)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read manifest {ref!r}: {exc}") from None
    validate_manifest(manifest)
    return manifest


def _gammas(suite: dict[str, Any]) -> list[float]:
    g = suite.get("gamma", [])
    return list(g) if isinstance(g, list) else [g]


def validate_manifest(m: Any) -> None:
    if not isinstance(m, dict):
        raise ConfigurationError("manifest must be a JSON object")
    if not isinstance(m.get("seed"), int):
        raise ConfigurationError("manifest needs an integer 'seed'")
    suites = m.get("suites")
    if not isinstance(suites, list) or not suites:
        raise ConfigurationError("manifest needs a non-empty 'suites' list")
    for s in suites:
        if not isinstance(s, dict) or s.get("suite") not in SUITES:
            raise ConfigurationError(f"bad suite entry {s!r}")
        for g in _gammas(s):
            if not (isinstance(g, (int, float)) and 0.0 < g <= 0.5):
                raise ConfigurationError(f"gamma must lie in (0, 1/2], got {g!r} in suite {s['suite']!r}")
        for key in ("epsilon", "eps_cmp"):
            vals = s.get(key, [])
            for e in vals if isinstance(vals, list) else [vals]:
                if e is not None and not (0.0 <= e <= 1.0):
                    raise ConfigurationError(f"{key} must lie in [0, 1], got {e!r}")


def digest(manifest: dict[str, Any]) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# ---------------------------------------------------------------------------
# Runner
# ---------------------------------------------------------------------------


def _write_csv(path: Path, columns, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(r.get(c)) for c in columns])
    path.write_text(buf.getvalue())


def run(ref: str, out: str | None = None, jobs: int = 1, seed: int | None = None) -> int:
    try:
        manifest = load_manifest(ref)
        if seed is not None:
            manifest = {**manifest, "seed": seed}
        seed_ = manifest["seed"]
        name = manifest.get("name", Path(ref).stem)
        out_dir = Path(out or os.environ.get(OUT_ENV) or Path("out") / name)
        cells = [c for i, s in enumerate(manifest["suites"]) for c in expand_suite(i, s)]
        work = [(cid, nm, params, seed_) for cid, nm, params in cells]
        if jobs > 1 and len(work) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(_run_cell, work))
        else:
            results = [_run_cell(w) for w in work]
    except (LabError, ValueError, KeyError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1

    results.sort(key=lambda r: r[0])
    rows = [row for _, rs, _ in results for row in rs]
    estimates = [e for _, _, es in results for e in es]
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_csv(out_dir / "results.csv", RESULT_COLUMNS, rows)
    _write_csv(out_dir / "estimates.csv", ESTIMATE_COLUMNS, estimates)
    echo = {"manifest": manifest, "digest": digest(manifest), "version": __version__, "cells": len(cells)}
    (out_dir / "manifest-echo.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")

    bad = [r for r in rows if r["assumption_flags"] or not (r["vacuous"] or r["satisfied"])]
    n_vac = sum(r["vacuous"] for r in rows)
    print(f"{name}: {len(rows)} reports, {len(bad)} failing, {n_vac} vacuous -> {out_dir}")
    for r in bad:
        print(f"  FAIL {r['theorem']} lhs={fmt(r['lhs'])} rhs={fmt(r['rhs'])} flags={r['assumption_flags']}")
    return 2 if bad else 0


def list_suites() -> str:
    lines = []
    for name, path in bundled_manifests().items():
        m = json.loads(path.read_text())
        lines.append(f"{name:<20} [{m.get('anchor', '?')}] {m.get('description', '')}")
    return "\n".join(lines)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="selectlab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="list bundled manifests")
    runp = sub.add_parser("run", help="run a manifest (path or bundled name)")
    runp.add_argument("manifest")
    runp.add_argument("--jobs", type=int, default=1)
    runp.add_argument("--out", default=None, help=f"output directory (default: ${OUT_ENV} or out/<name>)")
    runp.add_argument("--seed", type=int, default=None, help="override the manifest seed")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    if args.command == "list":
        print(list_suites())
        return 0
    return run(args.manifest, args.out, max(1, args.jobs), args.seed)


if __name__ == "__main__":
    raise SystemExit(main())
