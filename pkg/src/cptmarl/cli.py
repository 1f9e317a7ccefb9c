"""Command line entry point: ``cptmarl {generate,train,scenarios,check}``.

Runs are described by a JSON config file (schema in README.md).  One file,
together with the optional ``--seed``/``--workers``/``--out`` overrides,
fully determines every output byte.

Exit codes: 0 success, 1 invalid config or arguments, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checks
from .actor import VisitationError
from .cpt import CptParams
from .critic import InsufficientExploration
from .namg import GameSpec, generate_experiment
from .trainer import (SCENARIOS, LearningSchedule, TrainOptions, TrainingResult, run_scenarios,
                      scenario_params, train)

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2

_GAME_FIELDS = {"n_agents", "n_states", "n_actions", "discount", "initial_state", "reward_by_action"}
_TOP_FIELDS = {"seed", "game", "agents", "schedule", "options", "n_iters", "n_max", "n_runs",
               "workers", "out", "window", "scenarios"}


class ConfigError(ValueError):
    """Invalid run configuration; ``errors`` lists ``field: message`` strings."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    game: dict = field(default_factory=lambda: {"source": "generate"})
    agents: object = field(default_factory=lambda: {"scenario": 2})
    schedule: LearningSchedule = field(default_factory=LearningSchedule)
    options: TrainOptions = field(default_factory=TrainOptions)
    n_iters: int = 10_000
    n_max: int = 32
    n_runs: int = 1
    workers: int = 1
    out: str = "out"
    window: int = 200
    scenarios: tuple = (1, 2, 3, 4)

    def to_dict(self) -> dict:
        agents = self.agents
        if isinstance(agents, (list, tuple)):
            agents = [p.to_dict() for p in agents]
        return {
            "seed": self.seed,
            "game": dict(self.game),
            "agents": agents,
            "schedule": dataclasses.asdict(self.schedule),
            "options": dataclasses.asdict(self.options),
            "n_iters": self.n_iters,
            "n_max": self.n_max,
            "n_runs": self.n_runs,
            "workers": self.workers,
            "out": self.out,
            "window": self.window,
            "scenarios": list(self.scenarios),
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError(["<root>: expected a JSON object"])
        errors = [f"{k}: unknown field" for k in sorted(set(d) - _TOP_FIELDS)]
        kw = {}

        def integer(name, lo):
            if name not in d:
                return
            v = d[name]
            if isinstance(v, bool) or not isinstance(v, int) or v < lo:
                errors.append(f"{name}: expected an integer >= {lo}, got {v!r}")
            else:
                kw[name] = v

        integer("seed", 0)
        integer("n_iters", 1)
        integer("n_max", 1)
        integer("n_runs", 1)
        integer("workers", 1)
        integer("window", 1)
        if "out" in d:
            if isinstance(d["out"], str) and d["out"]:
                kw["out"] = d["out"]
            else:
                errors.append(f"out: expected a non-empty path string, got {d['out']!r}")

        if "game" in d:
            kw["game"] = _parse_game(d["game"], errors)
        if "agents" in d:
            kw["agents"] = _parse_agents(d["agents"], errors)
        for name, typ in (("schedule", LearningSchedule), ("options", TrainOptions)):
            if name in d:
                kw[name] = _parse_section(name, typ, d[name], errors)
        if "scenarios" in d:
            sc = d["scenarios"]
            if (not isinstance(sc, list) or not sc
                    or any(isinstance(s, bool) or s not in SCENARIOS for s in sc) or len(set(sc)) != len(sc)):
                errors.append(f"scenarios: expected distinct entries from {sorted(SCENARIOS)}, got {sc!r}")
            else:
                kw["scenarios"] = tuple(sc)
        if errors:
            raise ConfigError(errors)
        return cls(**kw)

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError([f"<root>: not valid JSON ({exc})"]) from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.loads(Path(path).read_text())

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def build_game(self, run: int = 0) -> GameSpec:
        """Game of run ``run``: generated from ``seed + run`` or loaded from file."""
        game = dict(self.game)
        source = game.pop("source")
        if source == "file":
            return GameSpec.load(game["path"])
        return generate_experiment(self.seed + run, **game)

    def agent_params(self, n_agents: int) -> list[CptParams]:
        if isinstance(self.agents, dict):
            return scenario_params(self.agents["scenario"], n_agents)
        if len(self.agents) != n_agents:
            raise ConfigError([f"agents: {len(self.agents)} parameter sets for a {n_agents}-agent game"])
        return list(self.agents)


def _parse_game(g, errors):
    if not isinstance(g, dict):
        errors.append("game: expected an object")
        return None
    source = g.get("source")
    if source == "file":
        extra = set(g) - {"source", "path"}
        if extra:
            errors.append(f"game: unknown fields {sorted(extra)} for a file source")
        if not isinstance(g.get("path"), str):
            errors.append("game.path: expected a path string")
        return dict(g)
    if source != "generate":
        errors.append(f"game.source: expected 'generate' or 'file', got {source!r}")
        return None
    extra = set(g) - _GAME_FIELDS - {"source"}
    for k in sorted(extra):
        errors.append(f"game.{k}: unknown field")
    if extra:
        return None
    try:
        generate_experiment(0, **{k: v for k, v in g.items() if k != "source"})
    except (TypeError, ValueError, IndexError) as exc:
        errors.append(f"game: {exc}")
    return dict(g)


def _parse_agents(a, errors):
    if isinstance(a, dict):
        if set(a) != {"scenario"} or a["scenario"] not in SCENARIOS or isinstance(a["scenario"], bool):
            errors.append(f"agents: expected {{'scenario': one of {sorted(SCENARIOS)}}} or a list, got {a!r}")
            return None
        return dict(a)
    if not isinstance(a, list) or not a:
        errors.append("agents: expected a non-empty list of parameter objects")
        return None
    out = []
    for i, p in enumerate(a):
        try:
            if not isinstance(p, dict):
                raise ValueError("expected an object")
            out.append(CptParams.from_dict(p))
        except (TypeError, ValueError) as exc:
            errors.append(f"agents[{i}]: {exc}")
    return out


def _parse_section(name, typ, d, errors):
    if not isinstance(d, dict):
        errors.append(f"{name}: expected an object")
        return None
    names = {f.name for f in dataclasses.fields(typ)}
    for k in sorted(set(d) - names):
        errors.append(f"{name}.{k}: unknown field")
    try:
        return typ(**{k: v for k, v in d.items() if k in names})
    except (TypeError, ValueError) as exc:
        errors.append(f"{name}: {exc}")
        return None


# -- outputs -----------------------------------------------------------------------------

def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v: float) -> str:
    return repr(float(v))


def trailing_mean(x: np.ndarray, window: int) -> np.ndarray:
    """Mean of the last ``window`` entries (fewer at the start) along axis 0."""
    c = np.cumsum(np.concatenate([np.zeros((1,) + x.shape[1:]), x]), axis=0)
    t = np.arange(1, x.shape[0] + 1)
    lo = np.maximum(t - window, 0)
    width = (t - lo).reshape((-1,) + (1,) * (x.ndim - 1))
    return (c[t] - c[lo]) / width


def write_train_outputs(out: Path, config: RunConfig, results: list[TrainingResult]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    S = results[0].value_trace.shape[2]
    rows = []
    for run, res in enumerate(results):
        for t in range(res.n_iters):
            for i in range(res.value_trace.shape[1]):
                rows.append([config.seed + run, t, i, *map(_fmt, res.value_trace[t, i]),
                             _fmt(res.td_errors[t, i]), _fmt(res.grad_norms[t, i])])
    _write_csv(out / "metrics.csv", ["seed", "iteration", "agent", *[f"V{s}" for s in range(S)],
                                     "td_error", "grad_norm"], rows)

    rows = []
    for run, res in enumerate(results):
        for i, pol in enumerate(res.policies):
            for s, a in np.ndindex(pol.shape):
                rows.append([config.seed + run, i, s, a, _fmt(pol[s, a])])
    _write_csv(out / "policy.csv", ["seed", "agent", "state", "action", "probability"], rows)

    # smoothed curve averaged over runs, truncated to the shortest run
    T = min(r.n_iters for r in results)
    smooth = np.mean([trailing_mean(r.value_trace[:T], config.window) for r in results], axis=0)
    rows = [[t, i, s, _fmt(smooth[t, i, s])] for t in range(T) for i in range(smooth.shape[1]) for s in range(S)]
    _write_csv(out / "value_curve.csv", ["iteration", "agent", "state", "smoothed_value"], rows)

    summary = {
        "config": config.to_dict(),
        "runs": [{"seed": config.seed + run, "n_iters": r.n_iters, "converged": r.converged,
                  "wall_clock": r.wall_clock, "final_values": [v.tolist() for v in r.values],
                  "final_policies": [p.tolist() for p in r.policies]} for run, r in enumerate(results)],
        "smoothing_window": config.window,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


def cmd_generate(seed: int, out_path) -> GameSpec:
    spec = generate_experiment(seed)
    spec.save(out_path)
    return spec


def cmd_train(config: RunConfig) -> list[TrainingResult]:
    results = []
    for run in range(config.n_runs):
        spec = config.build_game(run)
        results.append(train(spec, config.agent_params(spec.n_agents), config.schedule, config.n_iters,
                             config.n_max, config.seed + run, workers=config.workers, options=config.options))
    write_train_outputs(Path(config.out), config, results)
    return results


def cmd_scenarios(config: RunConfig):
    if config.game.get("source") != "generate":
        raise ConfigError(["game.source: scenarios need generated games ('generate')"])
    overrides = {k: v for k, v in config.game.items() if k != "source"}
    summary = run_scenarios(config.seed, config.n_runs, config.n_iters, config.n_max, config.schedule,
                            config.options, config.scenarios, config.workers, overrides)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    mean, std = summary.mean(), summary.std()
    n_agents = mean.shape[1]
    rows = []
    for j, sc in enumerate(summary.scenarios):
        params = scenario_params(sc, n_agents)
        for i, a in np.ndindex(mean.shape[1:]):
            rows.append([sc, i, a, _fmt(params[i].lam), _fmt(mean[j, i, a]), _fmt(std[j, i, a])])
    _write_csv(out / "scenarios.csv", ["scenario", "agent", "action", "lambda", "mean", "std"], rows)

    ordered = None
    chain = [sc for sc in (1, 3, 4) if sc in summary.scenarios]
    if len(chain) == 3:
        p = summary.p_conservative(0)[[summary.scenarios.index(sc) for sc in chain]]
        ordered = (np.diff(p, axis=0) >= 0).all(axis=0)
        _write_csv(out / "ordering.csv", ["seed", "p0_scenario1", "p0_scenario3", "p0_scenario4", "non_decreasing"],
                   [[sd, *map(_fmt, p[:, r]), int(ordered[r])] for r, sd in enumerate(summary.seeds)])
    (out / "summary.json").write_text(json.dumps({
        "config": config.to_dict(),
        "seeds": list(summary.seeds),
        "ordered_runs": None if ordered is None else int(ordered.sum()),
    }, indent=2) + "\n")
    return summary


def cmd_check(config: RunConfig) -> list[checks.CheckResult]:
    spec = config.build_game()
    results = [checks.estimator_consistency()]
    for params in (CptParams.conventional(), CptParams.risk_neutral()):
        results.append(checks.contraction(spec, params, seed=config.seed))
    results.append(checks.gradient_agreement(n_games=5, seed=config.seed))
    return results


# -- argument handling -------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cptmarl", description="Risk-sensitive multi-agent actor-critic runs.")
    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate", help="write a randomly generated game to a JSON file")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    for name, text in (("train", "train agents and write metrics, policies and a value curve"),
                       ("scenarios", "run the loss-aversion scenarios and summarise converged policies"),
                       ("check", "run the invariant checks")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--out")
    return parser


def _config_from(args) -> RunConfig:
    config = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {k: getattr(args, k) for k in ("seed", "workers", "out") if getattr(args, k) is not None}
    if changes:
        d = config.to_dict()
        d.update(changes)
        config = RunConfig.from_dict(d)
    return config


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "generate":
            if args.seed < 0:
                raise ConfigError([f"seed: expected an integer >= 0, got {args.seed}"])
            cmd_generate(args.seed, args.out)
            return EXIT_OK
        config = _config_from(args)
        if args.command == "train":
            cmd_train(config)
        elif args.command == "scenarios":
            cmd_scenarios(config)
        else:
            results = cmd_check(config)
            for r in results:
                print(r.line())
            return EXIT_OK if all(r.passed for r in results) else EXIT_RUNTIME
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except (VisitationError, InsufficientExploration, OSError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
