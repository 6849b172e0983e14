"""Config-driven experiment runner.

A run executes compile → train (once per group of identically compiled
components) → snapshot evaluation → bound verification → artifact emission.
Outputs carry no timestamps or machine state, so a rerun with the same
config and seed is byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .automata import (Always, Conjunction, Dfa, Eventually, compile_formula,
                       dump_dfa, load_dfa)
from .contracts import compile_contract, compile_no_communication
from .dp import (OracleUnavailableError, certified_policy_value,
                 global_value_iteration, verify_lower_bound)
from .envs import (GridWorldParams, RoomParams, TrafficParams, build_gridworld,
                   build_rooms, build_traffic)
from .evaluation import compare_bound, estimate_satisfaction
from .games import (LIMITED, NONE, UniformRandomPolicy, dump_network,
                    dump_trajectories, load_network, rollout_network)
from .learning import (DEFAULT_SNAPSHOT_INTERVAL, IndependentQLearner,
                       MinimaxQLearner, save_checkpoint)
from .randinst import InstanceSpec, generate_random_instance

MODES = ("limited", "none", "iql", "centralized-oracle")

_BUILDERS = {
    "gridworld": (GridWorldParams, build_gridworld, 14),
    "rooms": (RoomParams, build_rooms, 40),
    "traffic": (TrafficParams, build_traffic, 100),
}

_GAME_DUMP_LIMIT = 5000


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage={stage}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class ExperimentConfig:
    """Validated experiment description; the seed is mandatory."""
    environment: dict
    mode: str
    seed: int
    learner: dict = field(default_factory=dict)
    evaluation: dict = field(default_factory=dict)
    oracle: dict = field(default_factory=dict)
    contracts: list = None

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        missing = {"environment", "mode", "seed"} - set(data)
        if missing:
            raise ValueError(f"config missing fields: {sorted(missing)}")
        if data["mode"] not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        cfg = cls(environment=data["environment"], mode=data["mode"],
                  seed=int(data["seed"]), learner=dict(data.get("learner", {})),
                  evaluation=dict(data.get("evaluation", {})),
                  oracle=dict(data.get("oracle", {})),
                  contracts=data.get("contracts"))
        env = cfg.environment
        if "builder" in env:
            if env["builder"] not in _BUILDERS:
                raise ValueError(f"unknown builder {env['builder']!r}")
        elif "network" not in env:
            raise ValueError("environment needs a 'builder' or a 'network' file")
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return {"environment": self.environment, "mode": self.mode,
                "seed": self.seed, "learner": self.learner,
                "evaluation": self.evaluation, "oracle": self.oracle,
                "contracts": self.contracts}


def _build_environment(cfg: ExperimentConfig):
    env = cfg.environment
    if "builder" in env:
        params_cls, builder, default_horizon = _BUILDERS[env["builder"]]
        raw = dict(env.get("params", {}))
        for key, value in raw.items():
            if isinstance(value, list):
                raw[key] = tuple(tuple(v) if isinstance(v, list) else v
                                 for v in value) if any(
                    isinstance(v, list) for v in value) else tuple(value)
        params = params_cls(**raw)
        net, dfas = builder(params)
    else:
        net = load_network(env["network"])
        if "dfas" not in env:
            raise ValueError("file-based environments need 'dfas' paths")
        dfas = [load_dfa(p) for p in env["dfas"]]
        default_horizon = 20
    dfas = list(dfas)
    if cfg.contracts:
        for i, spec in enumerate(cfg.contracts):
            if spec is None:
                continue
            if "file" in spec:
                dfas[i] = load_dfa(spec["file"])
            elif "formula" in spec:
                dfas[i] = _formula_dfa(spec["formula"], net.components[i].alphabet)
            else:
                raise ValueError("contract override needs 'file' or 'formula'")
    horizon = int(cfg.evaluation.get("horizon", default_horizon))
    return net, dfas, horizon


def _formula_dfa(spec: dict, alphabet) -> Dfa:
    kind = spec["kind"]
    if kind == "conjunction":
        parts = [_parse_formula(p) for p in spec["operands"]]
        formula = Conjunction(tuple(parts))
    else:
        formula = _parse_formula(spec)
    return compile_formula(formula, alphabet,
                           horizon_cap=spec.get("horizon_cap"))


def _parse_formula(spec: dict):
    pred = frozenset(spec["labels"])
    horizon = spec.get("horizon")
    if spec["kind"] == "always":
        return Always(pred, horizon)
    if spec["kind"] == "eventually":
        return Eventually(pred, horizon)
    raise ValueError(f"unknown formula kind {spec['kind']!r}")


def _group_components(net):
    """Group components whose compiled games are shared; templates first."""
    groups = {}
    order = []
    for i, comp in enumerate(net.components):
        key = comp.template_key if comp.template_key is not None else ("#", i)
        if key not in groups:
            groups[key] = []
            order.append(key)
        groups[key].append(i)
    return [(key, groups[key]) for key in order]


def _child_seed(seed, *key):
    return int(np.random.SeedSequence(seed, spawn_key=key).generate_state(1)[0])


def run_experiment(cfg: ExperimentConfig, out_dir) -> dict:
    """Execute the full pipeline and write artifacts; returns the summary."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"config": cfg.to_dict(), "stages": []}

    def stage(name):
        summary["stages"].append(name)

    try:
        stage("build")
        net, dfas, horizon = _build_environment(cfg)
    except Exception as exc:
        _emit_failure(out, summary, "build", exc)
        raise StageError("build", exc) from exc

    samples = int(cfg.evaluation.get("samples", 1000))
    level = float(cfg.evaluation.get("level", 0.95))
    snapshot_interval = cfg.evaluation.get("snapshot_interval",
                                           DEFAULT_SNAPSHOT_INTERVAL)
    groups = _group_components(net)

    games = {}
    if cfg.mode in ("limited", "none"):
        try:
            stage("compile")
            for gk, (key, members) in enumerate(groups):
                rep = members[0]
                if cfg.mode == "limited":
                    games[key] = compile_contract(net, rep, dfas,
                                                  discount=float(
                                                      cfg.learner.get("discount", 1.0)))
                else:
                    games[key] = compile_no_communication(
                        net, rep, dfas,
                        discount=float(cfg.learner.get("discount", 1.0)))
        except Exception as exc:
            _emit_failure(out, summary, "compile", exc)
            raise StageError("compile", exc) from exc

    policies = [None] * net.n_components
    learners = {}
    curves = []
    try:
        stage("train")
        if cfg.mode in ("limited", "none"):
            lp = dict(cfg.learner)
            lp.pop("discount", None)
            for gk, (key, members) in enumerate(groups):
                learner = MinimaxQLearner(
                    seed=_child_seed(cfg.seed, 1, gk),
                    snapshot_interval=snapshot_interval, **lp)
                learner.fit(games[key])
                learners[key] = learner
                for i in members:
                    policies[i] = learner.policy_
        elif cfg.mode == "iql":
            lp = dict(cfg.learner)
            lp.setdefault("max_episode_length", horizon)
            learner = IndependentQLearner(seed=_child_seed(cfg.seed, 1), **lp)
            learner.fit(net, dfas)
            learners["iql"] = learner
            policies = list(learner.policies_)
        else:  # centralized-oracle
            result = global_value_iteration(
                net, dfas, horizon, extract=True,
                cap=int(cfg.oracle.get("state_cap", 1_000_000)))
            policies = list(result.policies)
    except Exception as exc:
        _emit_failure(out, summary, "train", exc)
        raise StageError("train", exc) from exc

    try:
        stage("evaluate")
        random_policies = [UniformRandomPolicy()] * net.n_components
        baseline = estimate_satisfaction(net, dfas, random_policies, horizon,
                                         samples, _child_seed(cfg.seed, 2), level)
        if cfg.mode in ("limited", "none"):
            snap_sets = _merge_snapshots(groups, learners)
            for step, snap_policies in snap_sets:
                per = [snap_policies[i] for i in range(net.n_components)]
                est = estimate_satisfaction(net, dfas, per, horizon, samples,
                                            _child_seed(cfg.seed, 3, step), level)
                curves.append((step, est))
        final = estimate_satisfaction(net, dfas, policies, horizon, samples,
                                      _child_seed(cfg.seed, 4), level)
        if not curves or curves[-1][1].to_json() != final.to_json():
            last_step = curves[-1][0] if curves else 0
            curves.append((max(last_step, _total_steps(learners)), final))
    except Exception as exc:
        _emit_failure(out, summary, "evaluate", exc)
        raise StageError("evaluate", exc) from exc

    bound_info = None
    oracle_report = None
    try:
        stage("verify")
        if cfg.mode in ("limited", "none"):
            per_bounds = []
            for i in range(net.n_components):
                key = _group_key(groups, i)
                game = games[key]
                per_bounds.append(certified_policy_value(
                    game, policies[i], horizon * game.plies_per_round))
            bound = float(np.prod(per_bounds))
            comparison = compare_bound(net, dfas, policies, horizon, samples,
                                       _child_seed(cfg.seed, 5), level,
                                       bound=bound,
                                       per_component_bounds=per_bounds)
            bound_info = comparison.to_json()
            if comparison.violation:
                raise RuntimeError(
                    "empirical confidence interval lies below the certified bound")
        if cfg.oracle.get("enabled", False):
            oracle_report = verify_lower_bound(
                net, dfas, horizon,
                state_cap=int(cfg.oracle.get("state_cap", 1_000_000))).to_json()
            if oracle_report["oracle_available"] and not oracle_report["bound_ok"]:
                raise RuntimeError("exact oracle found a bound violation")
    except Exception as exc:
        _emit_failure(out, summary, "verify", exc)
        raise StageError("verify", exc) from exc

    try:
        stage("emit")
        summary["baseline"] = baseline.to_json()
        summary["final"] = final.to_json()
        summary["curve_steps"] = [step for step, _ in curves]
        summary["bound"] = bound_info
        summary["oracle"] = oracle_report
        summary["groups"] = {str(key): members for key, members in groups}
        _write_artifacts(out, cfg, net, dfas, horizon, games, groups,
                         learners, policies, curves, baseline, summary)
    except Exception as exc:
        _emit_failure(out, summary, "emit", exc)
        raise StageError("emit", exc) from exc
    return summary


def _group_key(groups, i):
    for key, members in groups:
        if i in members:
            return key
    raise KeyError(i)


def _merge_snapshots(groups, learners):
    """Align per-group snapshot policies on the union of snapshot steps."""
    steps = sorted({step for key, _ in groups
                    for step, _ in learners[key].snapshots_})
    merged = []
    for step in steps:
        per = {}
        for key, members in groups:
            snaps = learners[key].snapshots_
            chosen = snaps[0][1]
            for s, pol in snaps:
                if s <= step:
                    chosen = pol
            for i in members:
                per[i] = chosen
        merged.append((step, per))
    return merged


def _total_steps(learners):
    return max((l.report_.steps for l in learners.values()
                if hasattr(l, "report_")), default=0)


def _emit_failure(out, summary, stage, exc):
    summary["failed_stage"] = stage
    summary["error"] = str(exc)
    _write_json(out / "summary.json", summary)


def _write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_artifacts(out, cfg, net, dfas, horizon, games, groups, learners,
                     policies, curves, baseline, summary):
    _write_json(out / "config.json", cfg.to_dict())
    with open(out / "curves.csv", "w") as fh:
        fh.write("step,estimate,ci_low,ci_high\n")
        for step, est in curves:
            fh.write(f"{step},{est.estimate:.6f},{est.ci_low:.6f},{est.ci_high:.6f}\n")
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(exist_ok=True)
    for gk, (key, members) in enumerate(groups):
        if key in learners and isinstance(learners[key], MinimaxQLearner):
            save_checkpoint(ckpt_dir / f"group{gk}.json", learners[key])
    if "iql" in learners:
        payload = {"policies": [p.to_dict() for p in learners["iql"].policies_]}
        _write_json(ckpt_dir / "iql.json", payload)
    games_dir = out / "games"
    for gk, (key, members) in enumerate(groups):
        game = games.get(key)
        if game is not None and game.n_states <= _GAME_DUMP_LIMIT:
            games_dir.mkdir(exist_ok=True)
            with open(games_dir / f"group{gk}.txt", "w") as fh:
                game.dump_text(fh)
    rng_seed = _child_seed(cfg.seed, 6)
    trajs = []
    for r in range(5):
        rng = np.random.default_rng(np.random.SeedSequence(rng_seed, spawn_key=(r,)))
        trajs.append(rollout_network(net, dfas, policies, horizon, rng))
    dump_trajectories(trajs, out / "trajectories.jsonl")
    _write_json(out / "summary.json", summary)


# -- random instance emission ----------------------------------------------------


def emit_random_instance(out_dir, spec: InstanceSpec, seed: int):
    """Write a generated instance as a network file plus automaton files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    net, dfas = generate_random_instance(spec, seed)
    dump_network(net, out / "network.json")
    paths = []
    for i, dfa in enumerate(dfas):
        path = out / f"dfa{i}.json"
        dump_dfa(dfa, path)
        with open(out / f"dfa{i}.txt", "w") as fh:
            fh.write(dfa.to_text())
        paths.append(str(path))
    config = {
        "environment": {"network": str(out / "network.json"), "dfas": paths},
        "mode": "limited",
        "seed": seed,
        "learner": {"episodes": 2000},
        "evaluation": {"samples": 500, "horizon": 12},
        "oracle": {"enabled": True, "state_cap": 1_000_000},
    }
    _write_json(out / "config.json", config)
    return out / "config.json"


# -- command-line interface --------------------------------------------------------


def _cmd_run(args):
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.oracle_cap is not None:
        cfg.oracle["state_cap"] = args.oracle_cap
    if args.snapshots is not None:
        cfg.evaluation["snapshot_interval"] = args.snapshots
    summary = run_experiment(cfg, args.out)
    final = summary["final"]
    print(f"final satisfaction estimate {final['estimate']:.4f} "
          f"[{final['ci_low']:.4f}, {final['ci_high']:.4f}]")
    if summary.get("bound"):
        print(f"certified bound {summary['bound']['bound']:.4f}")
    return 0


def _cmd_gen(args):
    spec = InstanceSpec(states=args.states, actions=args.actions,
                        labels=args.labels, dfa_states=args.dfa_states,
                        topology=args.topology)
    path = emit_random_instance(args.out, spec, args.seed)
    print(f"instance written; config at {path}")
    return 0


def _cmd_verify(args):
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    net, dfas, horizon = _build_environment(cfg)
    cap = args.oracle_cap or int(cfg.oracle.get("state_cap", 1_000_000))
    report = verify_lower_bound(net, dfas, horizon, state_cap=cap)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        _write_json(Path(args.out), report.to_json())
    if not report.oracle_available:
        print(f"oracle unavailable: {report.detail}")
        print("local bound per horizon: "
              + " ".join(f"{v:.6f}" for v in report.local_product_initial))
        return 0
    print(f"min slack {report.min_slack:.3e} at {report.min_slack_state}")
    print(f"composed value {report.composed_value:.6f} >= "
          f"bound {report.local_product_initial[-1]:.6f}: {report.composed_ok}")
    return 0 if (report.bound_ok and report.composed_ok) else 1


def _cmd_eval(args):
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    net, dfas, horizon = _build_environment(cfg)
    from .games import Policy
    with open(args.policies) as fh:
        payload = json.load(fh)
    policies = [Policy.from_dict(p) for p in payload["policies"]]
    est = estimate_satisfaction(net, dfas, policies, horizon,
                                int(cfg.evaluation.get("samples", 1000)),
                                _child_seed(cfg.seed, 4),
                                float(cfg.evaluation.get("level", 0.95)))
    print(f"satisfaction estimate {est.estimate:.4f} "
          f"[{est.ci_low:.4f}, {est.ci_high:.4f}]")
    if args.out:
        _write_json(Path(args.out), est.to_json())
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="contractrl",
        description="Assume-guarantee reinforcement learning toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a full experiment pipeline")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--oracle-cap", type=int, default=None)
    p_run.add_argument("--snapshots", type=int, default=None,
                       help="snapshot interval in training steps")
    p_run.set_defaults(func=_cmd_run)

    p_gen = sub.add_parser("gen", help="generate a random two-component instance")
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--states", type=int, default=3)
    p_gen.add_argument("--actions", type=int, default=2)
    p_gen.add_argument("--labels", type=int, default=2)
    p_gen.add_argument("--dfa-states", type=int, default=3)
    p_gen.add_argument("--topology", default="feedback",
                       choices=["feedback", "oneway", "independent"])
    p_gen.set_defaults(func=_cmd_gen)

    p_verify = sub.add_parser("verify", help="exact lower-bound verification")
    p_verify.add_argument("--config", required=True)
    p_verify.add_argument("--seed", type=int, default=None)
    p_verify.add_argument("--oracle-cap", type=int, default=None)
    p_verify.add_argument("--out", default=None)
    p_verify.set_defaults(func=_cmd_verify)

    p_eval = sub.add_parser("eval", help="evaluate stored policies")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--policies", required=True,
                        help="JSON file with a 'policies' list")
    p_eval.add_argument("--seed", type=int, default=None)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=_cmd_eval)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except StageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (ValueError, OSError, OracleUnavailableError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
