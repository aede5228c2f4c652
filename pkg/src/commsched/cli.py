"""Experiment orchestration: JSON config in, results.csv + manifest out.

Exit codes: 0 success, 1 config validation failure, 2 solver failure,
3 I/O failure. Worker count for Monte Carlo runs can be overridden with
the COMMSCHED_WORKERS environment variable.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .control import CostWeights, LinearSystem, design_controller
from .errors import CommschedError
from .estimation import NoiseModel
from .scenarios import scenario_library
from .simulator import (
    ConstantSigma,
    DistanceSigma,
    LinearAgent,
    Scenario,
    SimTrace,
    monte_carlo,
)

RESULT_COLUMNS = (
    "scenario",
    "strategy",
    "N",
    "gamma",
    "a",
    "seed",
    "j_mean",
    "j_stderr",
    "j_trace_mean",
    "grants",
    "ratio_r",
)

STRATEGY_NAMES = ("exhaustive", "greedy", "relaxed", "baseline")


class ParseError(ValueError):
    """Config is not valid JSON; message carries line/column."""


class ValidationError(ValueError):
    """Config is valid JSON but violates the schema."""


@dataclass
class RunConfig:
    scenario: str | dict
    strategy: str
    N: list[int]
    gamma: list[int]
    seed: int
    a: list[float] = field(default_factory=lambda: [1.0])
    runs: int | None = None
    T: int | None = None
    scenario_params: dict = field(default_factory=dict)


@dataclass
class ResultRow:
    scenario: str
    strategy: str
    N: int
    gamma: int
    a: float
    seed: int
    j_mean: float
    j_stderr: float
    j_trace_mean: float
    grants: tuple[float, ...]
    ratio_r: float

    def csv_values(self) -> list[str]:
        return [
            self.scenario,
            self.strategy,
            repr(self.N),
            repr(self.gamma),
            repr(float(self.a)),
            repr(self.seed),
            repr(float(self.j_mean)),
            repr(float(self.j_stderr)),
            repr(float(self.j_trace_mean)),
            ";".join(repr(float(g)) for g in self.grants),
            repr(float(self.ratio_r)),
        ]


_KNOWN_KEYS = {"scenario", "strategy", "N", "gamma", "a", "seed", "runs", "T", "scenario_params"}
_REQUIRED_KEYS = {"scenario", "strategy", "N", "gamma", "seed"}


def _require_sweep(raw: dict, key: str, kind) -> list:
    val = raw[key]
    if not isinstance(val, list):
        raise ValidationError(f"{key}: must be a list")
    if not val:
        raise ValidationError(f"{key}: empty sweep")
    out = []
    for item in val:
        if isinstance(item, bool) or not isinstance(item, (int, float)):
            raise ValidationError(f"{key}: entries must be numbers, got {item!r}")
        out.append(kind(item))
    return out


def parse_config(text: str) -> RunConfig:
    """Parse and validate a JSON experiment config."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}") from e
    if not isinstance(raw, dict):
        raise ValidationError("config: top level must be a JSON object")
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ValidationError(f"unknown key {sorted(unknown)[0]!r}")
    missing = _REQUIRED_KEYS - set(raw)
    if missing:
        raise ValidationError(f"missing required key {sorted(missing)[0]!r}")

    scenario = raw["scenario"]
    if isinstance(scenario, str):
        if scenario not in scenario_library():
            raise ValidationError(
                f"scenario: unknown name {scenario!r}; known: {sorted(scenario_library())}"
            )
    elif isinstance(scenario, dict):
        _validate_inline_scenario(scenario)
    else:
        raise ValidationError("scenario: must be a name or an inline definition object")

    strategy = raw["strategy"]
    if strategy not in STRATEGY_NAMES:
        raise ValidationError(f"strategy: must be one of {STRATEGY_NAMES}, got {strategy!r}")

    N = _require_sweep(raw, "N", int)
    if any(n < 1 for n in N):
        raise ValidationError("N: entries must be >= 1")
    gamma = _require_sweep(raw, "gamma", int)
    if any(g < 1 for g in gamma):
        raise ValidationError("gamma: entries must be >= 1")
    a = _require_sweep(raw, "a", float) if "a" in raw else [1.0]
    if any(x <= 0 for x in a):
        raise ValidationError("a: entries must be > 0")
    if a != [1.0] and not (isinstance(scenario, str) and scenario == "tuning2"):
        raise ValidationError("a: sweep other than [1] only applies to scenario 'tuning2'")

    seed = raw["seed"]
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ValidationError("seed: must be a non-negative integer")
    runs = raw.get("runs")
    if runs is not None and (isinstance(runs, bool) or not isinstance(runs, int) or runs < 1):
        raise ValidationError("runs: must be a positive integer")
    T = raw.get("T")
    if T is not None and (isinstance(T, bool) or not isinstance(T, int) or T < 2):
        raise ValidationError("T: must be an integer >= 2")
    params = raw.get("scenario_params", {})
    if not isinstance(params, dict):
        raise ValidationError("scenario_params: must be an object")
    return RunConfig(
        scenario=scenario,
        strategy=strategy,
        N=N,
        gamma=gamma,
        a=a,
        seed=seed,
        runs=runs,
        T=T,
        scenario_params=params,
    )


def _validate_inline_scenario(sc: dict) -> None:
    for key in ("agents", "sigma"):
        if key not in sc:
            raise ValidationError(f"scenario.{key}: required for inline definitions")
    if not isinstance(sc["agents"], list) or not sc["agents"]:
        raise ValidationError("scenario.agents: must be a non-empty list")
    for i, ag in enumerate(sc["agents"]):
        for key in ("A", "B", "C", "W", "V", "X0", "Q", "R"):
            if key not in ag:
                raise ValidationError(f"scenario.agents[{i}].{key}: required")
    sig = sc["sigma"]
    if not isinstance(sig, dict) or sig.get("kind") not in ("constant", "distance"):
        raise ValidationError("scenario.sigma.kind: must be 'constant' or 'distance'")


def _inline_agents(sc: dict) -> tuple[LinearAgent, ...]:
    agents = []
    for ag in sc["agents"]:
        system = LinearSystem(A=np.array(ag["A"]), B=np.array(ag["B"]), C=np.array(ag["C"]))
        weights = CostWeights(
            Q=np.array(ag["Q"]),
            R=np.atleast_2d(np.array(ag["R"])),
            S=np.array(ag["S"]) if "S" in ag else None,
        )
        noise = NoiseModel(W=np.array(ag["W"]), V=np.array(ag["V"]), X0=np.array(ag["X0"]))
        agents.append(LinearAgent(sys=system, noise=noise, design=design_controller(system, weights)))
    return tuple(agents)


def build_scenario(cfg: RunConfig, N: int, gamma: int, a: float) -> Scenario:
    """Materialize one sweep point."""
    if isinstance(cfg.scenario, dict):
        sc = cfg.scenario
        sig = sc["sigma"]
        if sig["kind"] == "constant":
            model = ConstantSigma(values=tuple(sig["values"]) if isinstance(sig.get("values", 1.0), list) else sig.get("values", 1.0))
        else:
            model = DistanceSigma(floor=float(sig.get("floor", 0.0)))
        return Scenario(
            name=str(sc.get("name", "inline")),
            agents=_inline_agents(sc),
            capacity=gamma,
            horizon=N,
            steps=cfg.T if cfg.T is not None else int(sc.get("T", 50)),
            runs=cfg.runs if cfg.runs is not None else int(sc.get("runs", 1)),
            seed=cfg.seed,
            sigma_model=model,
            strategy=cfg.strategy,
            loss_aware=bool(sc.get("loss_aware", True)),
        )
    factory = scenario_library()[cfg.scenario]
    kwargs = dict(N=N, gamma=gamma, seed=cfg.seed, strategy=cfg.strategy, **cfg.scenario_params)
    if cfg.scenario == "tuning2":
        kwargs["a"] = a
    if cfg.runs is not None:
        kwargs["runs"] = cfg.runs
    if cfg.T is not None:
        kwargs["T"] = cfg.T
    try:
        return factory(**kwargs)
    except TypeError as e:
        raise ValidationError(f"scenario_params: {e}") from e


def emit_trace(trace: SimTrace, path: str | Path) -> None:
    """Write one run's per-step records as CSV (LF endings, repr floats)."""
    T, M, n = trace.x.shape
    header = ["step", "agent", "delta", "s", "sigma", "stage_cost", "tr_gamma_E", "tr_P_X"]
    header += [f"x{j}" for j in range(n)] + [f"xhat{j}" for j in range(n)]
    lines = [",".join(header)]
    for k in range(T):
        for i in range(M):
            cells = [
                repr(int(k)),
                repr(int(i)),
                repr(int(trace.delta[k, i])),
                repr(int(trace.s[k, i])),
                repr(float(trace.sigma[k, i])),
                repr(float(trace.stage_cost[k, i])),
                repr(float(trace.tr_gamma_E[k, i])),
                repr(float(trace.tr_P_X[k, i])),
            ]
            cells += [repr(float(v)) for v in trace.x[k, i]]
            cells += [repr(float(v)) for v in trace.xhat[k, i]]
            lines.append(",".join(cells))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_trace(path: str | Path) -> dict[str, np.ndarray]:
    """Parse an emitted trace file back into column arrays."""
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln]
    header = lines[0].split(",")
    cols = {h: [] for h in header}
    for ln in lines[1:]:
        for h, cell in zip(header, ln.split(",")):
            cols[h].append(float(cell))
    return {h: np.array(v) for h, v in cols.items()}


def run_experiment(
    cfg: RunConfig, out_dir: str | Path, emit_traces: bool = False
) -> list[ResultRow]:
    """Execute the Cartesian (N, gamma, a) sweep and write artifacts.

    results.csv gets one row per sweep point, flushed as soon as it is
    computed; manifest.json records the config hash, seed, versions and
    wall-clock timings.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if emit_traces:
        (out / "traces").mkdir(exist_ok=True)
    rows: list[ResultRow] = []
    timings = []
    with open(out / "results.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(RESULT_COLUMNS) + "\n")
        fh.flush()
        for N in cfg.N:
            for gamma in cfg.gamma:
                for a in cfg.a:
                    sc = build_scenario(cfg, N, gamma, a)
                    t0 = time.perf_counter()
                    if emit_traces:
                        stats, traces = monte_carlo(sc, keep_traces=True)
                        for r, trace in enumerate(traces):
                            emit_trace(
                                trace,
                                out / "traces" / f"{sc.name}_N{N}_g{gamma}_a{a:g}_run{r}.csv",
                            )
                    else:
                        stats = monte_carlo(sc)
                    wall_ms = 1000.0 * (time.perf_counter() - t0)
                    row = ResultRow(
                        scenario=sc.name,
                        strategy=cfg.strategy,
                        N=N,
                        gamma=gamma,
                        a=a,
                        seed=cfg.seed,
                        j_mean=stats.j_mean,
                        j_stderr=stats.j_stderr,
                        j_trace_mean=stats.j_trace_mean,
                        grants=tuple(float(g) for g in stats.grant_counts),
                        ratio_r=stats.grant_ratio,
                    )
                    rows.append(row)
                    timings.append(
                        {"scenario": sc.name, "N": N, "gamma": gamma, "a": a, "wall_clock_ms": wall_ms}
                    )
                    fh.write(",".join(row.csv_values()) + "\n")
                    fh.flush()
    manifest = {
        "config_sha256": hashlib.sha256(
            json.dumps(_config_dict(cfg), sort_keys=True).encode()
        ).hexdigest(),
        "seed": cfg.seed,
        "versions": {
            "commsched": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
        "timings": timings,
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return rows


def _config_dict(cfg: RunConfig) -> dict:
    return {
        "scenario": cfg.scenario,
        "strategy": cfg.strategy,
        "N": cfg.N,
        "gamma": cfg.gamma,
        "a": cfg.a,
        "seed": cfg.seed,
        "runs": cfg.runs,
        "T": cfg.T,
        "scenario_params": cfg.scenario_params,
    }


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="commsched")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute an experiment sweep")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", default="results")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--runs", type=int, default=None)
    p_run.add_argument("--emit-traces", action="store_true")

    sub.add_parser("list-scenarios", help="print known scenario names")

    p_val = sub.add_parser("validate", help="check a config file")
    p_val.add_argument("--config", required=True)

    args = parser.parse_args(argv)

    if args.command == "list-scenarios":
        for name in sorted(scenario_library()):
            print(name)
        return 0

    try:
        text = Path(args.config).read_text(encoding="utf-8")
    except OSError as e:
        print(f"cannot read config: {e}", file=sys.stderr)
        return 3
    try:
        cfg = parse_config(text)
    except (ParseError, ValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1

    if args.command == "validate":
        print("config ok")
        return 0

    if args.seed is not None:
        cfg.seed = args.seed
    if args.runs is not None:
        cfg.runs = args.runs
    try:
        rows = run_experiment(cfg, args.out, emit_traces=args.emit_traces)
    except (ParseError, ValidationError) as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except CommschedError as e:
        print(f"solver failure: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"I/O failure: {e}", file=sys.stderr)
        return 3
    print(f"wrote {len(rows)} rows to {Path(args.out) / 'results.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
