"""Command-line entry point: ``mcsforge <command> ...``.

Exit codes: 0 success, 2 configuration error, 3 numerical divergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .aht import (AhtAgent, AhtSchedule, EvalSuite, OracleMatrixAgent, UniformAgent, evaluate_robustness,
                  heuristic_pool, population_pool, t_confidence_interval, train_aht)
from .analysis import BehaviorProfile, behavior_profile, heuristic_pairs, population_pairs
from .approx import FORMAT_VERSION as CHECKPOINT_FORMAT_VERSION
from .config import (CONFIG_FORMAT_VERSION, ExperimentConfig, apply_overrides, config_from_dict, load_config,
                     published_config)
from .diversity import ReturnMatrix
from .envs import ConfigurationError, EnvId, EnvSpec
from .marl import Population, TrainSchedule, cross_play_matrix, metrics_from_csv, train_population
from .mcs_oracle import coverage_report, exact_return_matrix, policy_universe
from .plots import heatmap, line_plot

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_IO = 0, 2, 3, 4
MANIFEST_FORMAT_VERSION = 1
METRICS_FORMAT_VERSION = 1

log = logging.getLogger("mcsforge")


# ---------------------------------------------------------------------------
# manifests and paths


def output_root(explicit: str | None, cfg: ExperimentConfig | None = None) -> Path:
    if explicit:
        return Path(explicit)
    if cfg is not None and cfg.runtime.out_dir:
        return Path(cfg.runtime.out_dir)
    return Path(os.environ.get("MCSFORGE_OUT", "runs"))


def code_hash() -> str:
    """Git-style blob hashes of the package sources, folded into one digest."""
    pkg = Path(__file__).parent
    lines = []
    for path in sorted(pkg.glob("*.py")):
        data = path.read_bytes()
        blob = hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()
        lines.append(f"{blob} {path.name}\n")
    return hashlib.sha1("".join(lines).encode()).hexdigest()


def format_versions() -> dict:
    return {"manifest": MANIFEST_FORMAT_VERSION, "config": CONFIG_FORMAT_VERSION,
            "checkpoint": CHECKPOINT_FORMAT_VERSION, "metrics_csv": METRICS_FORMAT_VERSION}


def write_manifest(run_dir: Path, command: str, cfg: ExperimentConfig, seed: int, inputs=None) -> dict:
    manifest = {
        "command": command,
        "seed": int(seed),
        "config": cfg.to_dict(),
        "config_hash": cfg.content_hash(),
        "code_hash": code_hash(),
        "package_version": __version__,
        "format_versions": format_versions(),
        "inputs": [str(p) for p in (inputs or [])],
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (run_dir / "config.json").write_text(cfg.to_json())
    return manifest


def read_manifest(path) -> dict:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise ConfigurationError(f"manifest not found: {path}")
    data = json.loads(path.read_text())
    if data.get("format_versions", {}).get("manifest") != MANIFEST_FORMAT_VERSION:
        raise ConfigurationError(f"{path}: unsupported manifest format")
    return data


def _require(paths) -> list[Path]:
    out = []
    for p in paths:
        p = Path(p)
        if not p.exists():
            raise ConfigurationError(f"input path does not exist: {p}")
        out.append(p)
    return out


def _parse_seeds(text: str) -> list[int]:
    text = text.strip()
    if "," in text or text.startswith("["):
        return [int(s) for s in text.strip("[]").split(",") if s.strip()]
    n = int(text)
    if n < 1:
        raise ConfigurationError("--seeds needs a positive count or a comma-separated list")
    return list(range(n))


# ---------------------------------------------------------------------------
# config resolution


def _env_id(text) -> EnvId:
    try:
        return EnvId(text)
    except ValueError:
        raise ConfigurationError(f"unknown env id {text!r}") from None


def resolve_config(args) -> ExperimentConfig:
    defaults_env = getattr(args, "use_paper_defaults", None)
    method = getattr(args, "method", None)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        if method:
            try:
                data = json.loads(path.read_text())
            except json.JSONDecodeError as e:
                raise ConfigurationError(f"{path}: invalid JSON ({e})") from None
            data.setdefault("generation", {})["method"] = method
            cfg = config_from_dict(data, use_paper_defaults=defaults_env is not None)
        else:
            cfg = load_config(path, use_paper_defaults=defaults_env is not None)
        if defaults_env and _env_id(defaults_env) is not cfg.env_id:
            raise ConfigurationError(f"--use-paper-defaults {defaults_env} conflicts with config env {cfg.env.id}")
    elif defaults_env:
        cfg = published_config(_env_id(defaults_env), method or "lbrdiv")
    else:
        raise ConfigurationError("give --config FILE or --use-paper-defaults ENV")
    overrides = {}
    for flag, key in (("steps", "generation.total_steps"), ("K", "generation.K"), ("alpha", "generation.alpha"),
                      ("tau", "generation.tau"), ("aht_steps", "aht.total_steps"), ("episodes", "eval.episodes"),
                      ("checkpoint_every", "runtime.checkpoint_every"), ("workers", "runtime.workers")):
        v = getattr(args, flag, None)
        if v is not None:
            overrides[key] = v
    if getattr(args, "seeds", None) is not None:
        overrides["runtime.seeds"] = _parse_seeds(args.seeds)
    if getattr(args, "teammates", None):
        overrides["aht.teammates"] = args.teammates.split(",")
    return apply_overrides(cfg, overrides) if overrides else cfg


def train_schedule(cfg: ExperimentConfig) -> TrainSchedule:
    g = cfg.generation
    return TrainSchedule(total_steps=g.total_steps, n_threads=g.n_threads, t_update=g.t_update,
                         t_lagrange=g.t_lagrange, clip=g.clip, epochs=g.epochs, n_minibatches=g.n_minibatches,
                         w_ent=g.w_ent, gamma=g.gamma, lr_pi=g.lr_pi, lr_v=g.lr_v, lr_alpha=g.lr_alpha,
                         target_sync=g.target_sync, max_grad_norm=g.max_grad_norm, hidden=tuple(g.hidden),
                         metrics_every=cfg.runtime.metrics_every, teammate_update=g.teammate_update)


def aht_schedule(cfg: ExperimentConfig) -> AhtSchedule:
    a = cfg.aht
    return AhtSchedule(total_steps=a.total_steps, n_threads=a.n_threads, meta_episodes=a.meta_episodes,
                       clip=a.clip, epochs=a.epochs, n_minibatches=a.n_minibatches, w_ent=a.w_ent, gamma=a.gamma,
                       gae_lambda=a.gae_lambda, lr=a.lr, hidden=tuple(a.hidden), rep_dim=a.rep_dim, bptt=a.bptt,
                       reward_scale=a.reward_scale)


def _run_seeds(fn, cfg, seeds, *extra):
    if cfg.runtime.workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(cfg.runtime.workers) as pool:
            return list(pool.map(fn, [cfg] * len(seeds), seeds, *[[e] * len(seeds) for e in extra]))
    return [fn(cfg, s, *extra) for s in seeds]


# ---------------------------------------------------------------------------
# generate


def generate_one(cfg: ExperimentConfig, seed: int, root: str) -> str:
    g = cfg.generation
    run_dir = Path(root) / "generate" / f"{cfg.env.id}-{g.method}-seed{seed}"
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    write_manifest(run_dir, "generate", cfg, seed)
    sched = train_schedule(cfg)
    meta = {"env": asdict(cfg.env), "method": g.method, "seed": seed, "config_hash": cfg.content_hash()}
    every = cfg.runtime.checkpoint_every

    def callback(update, pop, A):
        step = update * sched.batch_size
        if every and step % every < sched.batch_size:
            (run_dir / "checkpoints" / f"population_{step:012d}.npz").write_bytes(pop.to_bytes({**meta, "step": step}))

    res = train_population(cfg.env.spec(), sched, g.K, seed, g.method, tau=g.tau,
                           alpha=g.alpha if g.alpha is not None else 0.0, callback=callback if every else None)
    (run_dir / "population.npz").write_bytes(res.population.to_bytes(meta))
    (run_dir / "metrics.csv").write_text(res.metrics_csv())
    from .diversity import lagrange_to_csv

    (run_dir / "multipliers.csv").write_text(lagrange_to_csv(res.multipliers))
    (run_dir / "counters.json").write_text(json.dumps(res.counters, indent=2, sort_keys=True))
    log.info("generate seed %d -> %s", seed, run_dir)
    return str(run_dir)


def cmd_generate(args) -> int:
    cfg = resolve_config(args)
    root = output_root(args.out, cfg)
    dirs = _run_seeds(generate_one, cfg, cfg.runtime.seeds, str(root))
    print("\n".join(dirs))
    return EXIT_OK


# ---------------------------------------------------------------------------
# cross-play and coverage


def load_population(path) -> tuple[Population, dict]:
    path = _require([path])[0]
    if path.is_dir():
        path = path / "population.npz"
        _require([path])
    return Population.from_bytes(path.read_bytes())


def cmd_xp_matrix(args) -> int:
    pop, meta = load_population(args.checkpoint)
    spec = EnvSpec(**meta["env"]) if "env" in meta else EnvSpec()
    R = cross_play_matrix(pop, spec, episodes=args.episodes, seed=args.seed, greedy=args.greedy)
    text = R.to_csv()
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
        Path(args.out).with_suffix(".svg").write_text(
            heatmap(R.values, [f"aht{k}" for k in range(pop.K)], [f"tm{k}" for k in range(pop.K)], "cross-play returns"))
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_mcs(args) -> int:
    spec = EnvSpec(id=_env_id(args.env).value, grid_dim=args.grid_dim)
    U = policy_universe(spec, args.kind)
    R = exact_return_matrix(U, episodes_per_cell=args.episodes, per_step=args.per_step)
    rep = coverage_report(U, R)
    out = output_root(args.out) / "mcs" / f"{spec.id}-{args.kind}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "coverage.txt").write_text(rep.to_text())
    (out / "coverage.csv").write_text(rep.to_csv())
    (out / "return_matrix.csv").write_text(R.to_csv())
    (out / "return_matrix.svg").write_text(heatmap(R.values, U.names, U.names, f"{spec.id} returns"))
    sys.stdout.write(rep.to_text())
    return EXIT_OK


# ---------------------------------------------------------------------------
# AHT training and evaluation


def _training_pool(cfg: ExperimentConfig, population_path):
    spec = cfg.env.spec()
    if cfg.aht.teammates == "population":
        if population_path is None:
            raise ConfigurationError("aht.teammates is 'population' but no --population checkpoint was given")
        pop, _ = load_population(population_path)
        return population_pool(pop)
    return heuristic_pool(spec, cfg.aht.teammates)


def train_aht_one(cfg: ExperimentConfig, seed: int, root: str, population_path=None) -> str:
    run_dir = Path(root) / "train-aht" / f"{cfg.env.id}-seed{seed}"
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    write_manifest(run_dir, "train-aht", cfg, seed, [population_path] if population_path else [])
    pool = _training_pool(cfg, population_path)
    res = train_aht(pool, cfg.env.spec(), aht_schedule(cfg), seed, checkpoint_every=cfg.runtime.checkpoint_every)
    meta = {"env": asdict(cfg.env), "seed": seed, "config_hash": cfg.content_hash()}
    (run_dir / "agent.npz").write_bytes(res.agent.to_bytes(meta))
    for step, data in res.checkpoints:
        (run_dir / "checkpoints" / f"agent_{step:012d}.npz").write_bytes(data)
    lines = ["steps,mean_episode_return,value_loss"] + [f"{s},{r!r},{v!r}" for s, r, v in res.curve]
    (run_dir / "curve.csv").write_text("\n".join(lines) + "\n")
    log.info("train-aht seed %d -> %s", seed, run_dir)
    return str(run_dir)


def cmd_train_aht(args) -> int:
    cfg = resolve_config(args)
    root = output_root(args.out, cfg)
    pops = args.population or [None]
    if len(pops) not in (1, len(cfg.runtime.seeds)):
        raise ConfigurationError("give one --population checkpoint, or one per seed")
    if pops[0] is not None:
        _require(pops)
    if len(pops) == 1:
        pops = pops * len(cfg.runtime.seeds)
    if cfg.runtime.workers > 1 and len(pops) > 1:
        with ProcessPoolExecutor(cfg.runtime.workers) as ex:
            dirs = list(ex.map(train_aht_one, [cfg] * len(pops), cfg.runtime.seeds, [str(root)] * len(pops), pops))
    else:
        dirs = [train_aht_one(cfg, s, str(root), p) for s, p in zip(cfg.runtime.seeds, pops)]
    print("\n".join(dirs))
    return EXIT_OK


def load_agent(path) -> tuple[AhtAgent, dict]:
    path = _require([path])[0]
    if path.is_dir():
        path = _require([path / "agent.npz"])[0]
    return AhtAgent.from_bytes(path.read_bytes())


def _agent_checkpoints(path: Path) -> list[Path]:
    d = path if path.is_dir() else path.parent
    return sorted((d / "checkpoints").glob("agent_*.npz"))


def cmd_eval(args) -> int:
    cfg = resolve_config(args) if (args.config or args.use_paper_defaults) else None
    if args.oracle or args.uniform:
        if cfg is None:
            raise ConfigurationError("scripted agents need --config or --use-paper-defaults for the environment")
        spec = cfg.env.spec()
        if args.oracle and cfg.env_id is not EnvId.RepeatedMatrix:
            raise ConfigurationError("the oracle agent exists for the matrix game only")
        agent = OracleMatrixAgent() if args.oracle else UniformAgent(spec.make().n_actions)
        agents = [agent] * len(cfg.runtime.seeds)
        paths = []
    else:
        if not args.agents:
            raise ConfigurationError("give --agents, --oracle or --uniform")
        paths = _require(args.agents)
        loaded = [load_agent(p) for p in paths]
        agents = [a for a, _ in loaded]
        if cfg is None:
            env_block = loaded[0][1].get("env", {"id": "RepeatedMatrix"})
            cfg = config_from_dict({"env": env_block})
        spec = cfg.env.spec()
    seeds = cfg.runtime.seeds if not paths else [1000 + k for k in range(len(agents))]
    if len(seeds) != len(agents):
        seeds = [1000 + k for k in range(len(agents))]
    suite = EvalSuite(spec, cfg.eval_suite_ids(), cfg.eval.episodes, cfg.aht.meta_episodes)
    out = output_root(args.out, cfg) / "eval" / (args.name or spec.id)
    out.mkdir(parents=True, exist_ok=True)
    rep = evaluate_robustness(agents, suite, seeds, greedy=cfg.eval.greedy)
    (out / "robustness.csv").write_text(rep.to_csv())
    (out / "robustness.json").write_text(rep.to_json())
    write_manifest(out, "eval", cfg, seeds[0], paths)
    # learning curve over matching checkpoints, one series per training seed
    series = [_agent_checkpoints(p) for p in paths]
    if series and all(series) and len({len(s) for s in series}) == 1:
        rows = ["step,mean,ci_low,ci_high,n"]
        xs, means, lo, hi = [], [], [], []
        for k in range(len(series[0])):
            ags = [AhtAgent.from_bytes(s[k].read_bytes()) for s in series]
            step = int(ags[0][1].get("steps", k))
            r = evaluate_robustness([a for a, _ in ags], suite, seeds, greedy=cfg.eval.greedy, checkpoint_step=step)
            ci = t_confidence_interval(r.per_seed_overall)
            rows.append(f"{step},{r.overall!r},{ci[0]!r},{ci[1]!r},{len(ags)}")
            xs.append(step)
            means.append(r.overall)
            lo.append(ci[0])
            hi.append(ci[1])
        (out / "curve.csv").write_text("\n".join(rows) + "\n")
        (out / "curve.svg").write_text(line_plot({"robustness": (xs, means)}, "robustness over training", "steps",
                                                 "mean episode return", bands={"robustness": (lo, hi)}))
    print(rep.to_json())
    return EXIT_OK


# ---------------------------------------------------------------------------
# analysis and plots


def metrics_plots(rows: list[dict]) -> dict:
    steps = [r["step"] for r in rows]
    returns = line_plot({"self-play": (steps, [r["sp_return"] for r in rows]),
                         "cross-play": (steps, [r["xp_return_mean"] for r in rows])},
                        "estimated returns", "steps", "return")
    alpha_cols = [k for k in rows[0] if k.startswith("alpha")] if rows else []
    mult = line_plot({k: (steps, [r[k] for r in rows]) for k in alpha_cols}, "Lagrange multipliers", "steps",
                     "value") if alpha_cols else None
    out = {"returns.svg": returns}
    if mult:
        out["multipliers.svg"] = mult
    return out


def cmd_analyze(args) -> int:
    if args.checkpoint:
        pop, meta = load_population(args.checkpoint)
        spec = EnvSpec(**meta.get("env", {}))
        pairs = population_pairs(pop, args.greedy)
        name = Path(args.checkpoint).stem if Path(args.checkpoint).is_file() else Path(args.checkpoint).name
    elif args.heuristics:
        if not args.env:
            raise ConfigurationError("--heuristics needs --env")
        spec = EnvSpec(id=_env_id(args.env).value)
        pairs = heuristic_pairs(spec, args.heuristics.split(","))
        pop, name = None, f"{args.env}-heuristics"
    else:
        raise ConfigurationError("give --checkpoint or --heuristics")
    out = output_root(args.out) / "analyze" / name
    out.mkdir(parents=True, exist_ok=True)
    prof = behavior_profile(pairs, spec, episodes=args.episodes, seed=args.seed)
    (out / "behavior_profile.csv").write_text(prof.to_csv())
    (out / "behavior_profile.svg").write_text(heatmap(prof.freqs, prof.names, prof.columns, "behaviour profile"))
    if pop is not None:
        R = cross_play_matrix(pop, spec, episodes=args.xp_episodes, seed=args.seed)
        (out / "xp_matrix.csv").write_text(R.to_csv())
        (out / "xp_matrix.svg").write_text(heatmap(R.values, [f"aht{k}" for k in range(pop.K)],
                                                   [f"tm{k}" for k in range(pop.K)], "cross-play returns"))
        run_dir = Path(args.checkpoint) if Path(args.checkpoint).is_dir() else Path(args.checkpoint).parent
        if (run_dir / "metrics.csv").exists():
            for fname, svg in metrics_plots(metrics_from_csv((run_dir / "metrics.csv").read_text())).items():
                (out / fname).write_text(svg)
    sys.stdout.write(prof.to_csv())
    return EXIT_OK


def cmd_plot(args) -> int:
    out = Path(args.out) if args.out else None
    written = []
    if args.metrics:
        src = _require([args.metrics])[0]
        target = out or src.parent
        target.mkdir(parents=True, exist_ok=True)
        for fname, svg in metrics_plots(metrics_from_csv(src.read_text())).items():
            (target / fname).write_text(svg)
            written.append(target / fname)
    if args.matrix:
        src = _require([args.matrix])[0]
        R = ReturnMatrix.from_csv(src.read_text())
        target = (out or src.parent) / (src.stem + ".svg")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(heatmap(R.values, title=src.stem))
        written.append(target)
    if args.profile:
        src = _require([args.profile])[0]
        prof = BehaviorProfile.from_csv(src.read_text())
        target = (out or src.parent) / (src.stem + ".svg")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(heatmap(prof.freqs, prof.names, prof.columns, "behaviour profile"))
        written.append(target)
    if args.curve:
        src = _require([args.curve])[0]
        lines = src.read_text().strip().splitlines()
        cols = lines[0].split(",")
        data = np.array([[float(v) for v in ln.split(",")] for ln in lines[1:]]).reshape(-1, len(cols))
        target = (out or src.parent) / (src.stem + ".svg")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(line_plot({cols[1]: (data[:, 0], data[:, 1])}, src.stem, cols[0], cols[1]))
        written.append(target)
    if not written:
        raise ConfigurationError("nothing to plot: give --metrics, --matrix, --profile or --curve")
    print("\n".join(map(str, written)))
    return EXIT_OK


def cmd_rerun(args) -> int:
    m = read_manifest(args.manifest)
    cfg = config_from_dict(m["config"])
    root = output_root(args.out, cfg)
    if m["command"] == "generate":
        print(generate_one(cfg, m["seed"], str(root)))
    elif m["command"] == "train-aht":
        print(train_aht_one(cfg, m["seed"], str(root), m["inputs"][0] if m["inputs"] else None))
    else:
        raise ConfigurationError(f"rerun supports generate and train-aht manifests, not {m['command']!r}")
    if m["code_hash"] != code_hash():
        log.warning("package sources changed since the original run; outputs may differ")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _config_args(p, gen=True, aht=False):
    p.add_argument("--config", help="JSON experiment config")
    p.add_argument("--use-paper-defaults", metavar="ENV", help="published defaults for ENV (includes baseline alpha)")
    p.add_argument("--seeds", help="count (4) or list (0,2,5)")
    p.add_argument("--out", help="output root (default: $MCSFORGE_OUT or ./runs)")
    p.add_argument("--workers", type=int)
    p.add_argument("--checkpoint-every", type=int, dest="checkpoint_every")
    if gen:
        p.add_argument("--method", choices=["lbrdiv", "brdiv", "lipo"])
        p.add_argument("--steps", type=int, help="generation total_steps")
        p.add_argument("--K", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--tau", type=float)
    if aht:
        p.add_argument("--aht-steps", type=int, dest="aht_steps")
        p.add_argument("--teammates", help="comma-separated heuristic ids instead of a population")
        p.add_argument("--episodes", type=int, help="evaluation meta-episodes per heuristic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcsforge", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="train teammate populations")
    _config_args(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("xp-matrix", help="Monte-Carlo cross-play matrix of a population")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--out", help="CSV path (default: stdout)")
    p.set_defaults(func=cmd_xp_matrix)

    p = sub.add_parser("mcs", help="minimal coverage sets of a curated policy universe")
    p.add_argument("--env", required=True)
    p.add_argument("--kind", default="default", choices=["default", "orders"])
    p.add_argument("--episodes", type=int, help="start states per cell for grid envs (default 256)")
    p.add_argument("--grid-dim", type=int, dest="grid_dim")
    p.add_argument("--per-step", action="store_true", dest="per_step")
    p.add_argument("--out")
    p.set_defaults(func=cmd_mcs)

    p = sub.add_parser("train-aht", help="train adaptive agents")
    _config_args(p, gen=False, aht=True)
    p.add_argument("--population", nargs="+", help="population checkpoint(s): one shared or one per seed")
    p.set_defaults(func=cmd_train_aht)

    p = sub.add_parser("eval", help="robustness against heuristic teammates")
    _config_args(p, gen=False, aht=True)
    p.add_argument("--agents", nargs="+", help="agent checkpoints or train-aht run directories")
    p.add_argument("--oracle", action="store_true", help="matrix-game best responder that knows the teammate")
    p.add_argument("--uniform", action="store_true", help="uniform random agent")
    p.add_argument("--name", help="output subdirectory name")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("analyze", help="behaviour profile, cross-play heatmap and metric plots")
    p.add_argument("--checkpoint")
    p.add_argument("--heuristics")
    p.add_argument("--env")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--xp-episodes", type=int, default=128, dest="xp_episodes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--greedy", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("plot", help="SVG plots from emitted CSV files")
    p.add_argument("--metrics")
    p.add_argument("--matrix")
    p.add_argument("--profile")
    p.add_argument("--curve")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("rerun", help="repeat a generate or train-aht run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_rerun)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse usage errors
        return EXIT_CONFIG if e.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigurationError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as e:
        print(f"numerical divergence: {e}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as e:
        print(f"I/O error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
