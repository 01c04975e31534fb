## Command-line entry point: dataset generation, training, evaluation, the Gumbel-scale experiment and plots.

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from pydantic import ValidationError

from config.config import Config, configure_logging
from qql import agents, data, envs, evalkit, plotting, trainer
from qql.agents import AblationFlags, TrainConfig
from qql.errors import QQLError, SchemaError
from qql.rng import make_stream

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2

DEFAULT_BETA_TOY_STDS = '0.1,0.3,0.5,1.0'


def _float_list(text: str) -> List[float]:
    try:
        return [float(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got '{text}'")


def _int_list(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'")


def _add_gen_data(subparsers) -> None:
    p = subparsers.add_parser('gen-data', help='Roll out a behavior policy into a JSONL dataset',
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument('--env', required=True, choices=envs.ENV_IDS, help='Environment id')
    p.add_argument('--behavior', default='uniform-random',
                   help="uniform-random, epsilon-optimal(eps) or gaussian-noisy-optimal(sigma)")
    p.add_argument('--n', type=int, default=10000, help='Number of transitions')
    p.add_argument('--seed', type=int, default=Config.DEFAULT_SEED, help='Master seed')
    p.add_argument('--out', required=True, type=Path, help='Output JSONL path (metadata goes next to it)')
    p.set_defaults(handler=cmd_gen_data)


def _add_train(subparsers) -> None:
    p = subparsers.add_parser('train', help='Train an agent on a dataset',
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument('--algo', required=True, choices=trainer.ALGOS, help='Algorithm')
    p.add_argument('--env', required=True, choices=envs.ENV_IDS, help='Environment id')
    p.add_argument('--data', required=True, type=Path, help='Dataset JSONL path')
    p.add_argument('--steps', type=int, default=Config.DEFAULT_STEPS, help='Total gradient steps')
    seeds = p.add_mutually_exclusive_group()
    seeds.add_argument('--seed', type=int, default=Config.DEFAULT_SEED, help='Seed of a single run')
    seeds.add_argument('--seeds', type=_int_list, default=None, help='Comma-separated seeds for a multi-seed run')
    p.add_argument('--lambda', dest='lam', type=float, default=Config.DEFAULT_LAMBDA,
                   help='Weight of the policy-action value term')
    p.add_argument('--zeta', type=float, default=Config.DEFAULT_ZETA, help='Policy constraint weight')
    p.add_argument('--beta', type=float, default=None,
                   help=f"XQL temperature (xql only; {Config.DEFAULT_XQL_BETA} when omitted)")
    p.add_argument('--beta-sweep', type=_float_list, default=None,
                   help='Comma-separated XQL temperatures, one run each (xql only)')
    p.add_argument('--no-vr', action='store_true', help='Disable value regularisation')
    p.add_argument('--no-ce', action='store_true', help='Disable the conservative level shift')
    p.add_argument('--out-dir', type=Path, default=Config.OUTPUT_DIR, help='Run output directory')
    p.add_argument('--config', type=Path, default=None,
                   help='JSON file of TrainConfig fields; explicit flags take precedence')
    p.add_argument('--workers', type=int, default=1, help='Parallel processes for --seeds')
    p.add_argument('--resume', type=Path, default=None, help='Continue from this checkpoint')
    p.set_defaults(handler=cmd_train)


def _add_eval(subparsers) -> None:
    p = subparsers.add_parser('eval', help='Evaluate a checkpoint',
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument('--ckpt', required=True, type=Path, help='Checkpoint path')
    p.add_argument('--env', required=True, choices=envs.ENV_IDS, help='Environment id')
    p.add_argument('--episodes', type=int, default=Config.EVAL_EPISODES, help='Evaluation episodes')
    p.add_argument('--seed', type=int, default=Config.DEFAULT_SEED, help='Evaluation seed')
    p.add_argument('--references', type=Path, default=None,
                   help='references.json to score against (computed on the fly when omitted)')
    p.set_defaults(handler=cmd_eval)


def _add_beta_toy(subparsers) -> None:
    p = subparsers.add_parser('beta-toy', help='Fit a Gumbel law to noisy bandit values per policy std',
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument('--stds', type=_float_list, default=_float_list(DEFAULT_BETA_TOY_STDS),
                   help='Comma-separated Gaussian policy stds')
    p.add_argument('--n-actions', type=int, default=5000, help='Sampled actions per std')
    p.add_argument('--beta', type=float, default=1.0, help='True Gumbel noise scale')
    p.add_argument('--seed', type=int, default=Config.DEFAULT_SEED, help='Master seed')
    p.add_argument('--out', type=Path, default=Path('beta_toy.csv'), help='Output CSV path')
    p.set_defaults(handler=cmd_beta_toy)


def _add_plot(subparsers) -> None:
    p = subparsers.add_parser('plot', help='SVG line charts of metric columns',
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument('--metrics', required=True, nargs='+', type=Path, help='Metric CSV files')
    p.add_argument('--columns', nargs='+', default=['loss_q'], help='Columns to plot')
    p.add_argument('--out', required=True, type=Path, help='SVG path (suffixed per column when several)')
    p.set_defaults(handler=cmd_plot)


def _add_references(subparsers) -> None:
    p = subparsers.add_parser('references', help='Random and expert reference returns per environment',
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument('--envs', nargs='+', choices=('grid5', 'pointmass'), default=['grid5', 'pointmass'],
                   help='Environments with an oracle')
    p.add_argument('--episodes', type=int, default=Config.REFERENCE_EPISODES, help='Episodes per policy')
    p.add_argument('--seed', type=int, default=Config.DEFAULT_SEED, help='Master seed')
    p.add_argument('--out', type=Path, default=Path(Config.REFERENCES_FILE), help='Output JSON path')
    p.set_defaults(handler=cmd_references)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='qql', description='Quantile Q-Learning offline RL toolkit',
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument('--log-level', default=Config.LOG_LEVEL,
                        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'], help='Logging level')
    subparsers = parser.add_subparsers(dest='command', required=True)
    _add_gen_data(subparsers)
    _add_train(subparsers)
    _add_eval(subparsers)
    _add_beta_toy(subparsers)
    _add_plot(subparsers)
    _add_references(subparsers)
    return parser


def cmd_gen_data(args: argparse.Namespace) -> int:
    env = envs.make_env(args.env)
    dataset = data.generate(env, args.behavior, args.n, args.seed)
    path = data.save(dataset, args.out)
    returns_per_step = sum(t.r for t in dataset.transitions) / dataset.count
    terminals = sum(t.terminal for t in dataset.transitions)
    print(f"Wrote {dataset.count} transitions ({dataset.behavior}) on {dataset.env_id} to {path}")
    print(f"  mean reward {returns_per_step:.4f}, terminal transitions {terminals}")
    return EXIT_OK


## Merge Config defaults, the optional JSON file and the explicit flags into one TrainConfig
def build_train_config(args: argparse.Namespace, explicit: Sequence[str]) -> TrainConfig:
    values = {}
    if args.config is not None:
        with open(args.config, 'r', encoding='utf-8') as f:
            try:
                values.update(json.load(f))
            except json.JSONDecodeError as e:
                raise SchemaError(f"Config file {args.config} is not valid JSON: {e}") from e
    if 'lambda' in values:
        values['lam'] = values.pop('lambda')
    # flags always win; unset flags only fill what the file left open
    flag_values = {'steps': args.steps, 'seed': args.seed, 'lam': args.lam, 'zeta': args.zeta}
    for key, value in flag_values.items():
        if key in explicit or key not in values:
            values[key] = value
    if args.beta is not None:
        values['beta'] = args.beta
    try:
        return TrainConfig(**values)
    except ValidationError as e:
        raise SchemaError(f"Invalid training configuration: {e}") from e


def _explicit_flags(argv: Sequence[str]) -> List[str]:
    names = {'--steps': 'steps', '--seed': 'seed', '--lambda': 'lam', '--zeta': 'zeta'}
    found = []
    for token in argv:
        flag = token.split('=', 1)[0]
        if flag in names:
            found.append(names[flag])
    return found


def cmd_train(args: argparse.Namespace) -> int:
    cfg = build_train_config(args, args.explicit)
    env = envs.make_env(args.env)
    dataset = data.load(args.data)
    flags = AblationFlags(value_regularization=not args.no_vr, conservative_estimation=not args.no_ce)

    if args.resume is not None:
        source = trainer.load_checkpoint(args.resume)
        if source['algo'] != args.algo:
            raise SchemaError(f"Checkpoint {args.resume} was trained with '{source['algo']}', not '{args.algo}'")
        if AblationFlags(**source['flags']) != flags:
            raise SchemaError(f"Checkpoint {args.resume} was trained with flags {source['flags']}, "
                              f"not {flags.model_dump()}")
        steps = cfg.steps if 'steps' in args.explicit else None
        report = trainer.resume(args.resume, dataset, env, args.out_dir, steps=steps, dataset_path=args.data)
        print(f"Resumed to step {report.steps}: final return {report.final_eval_mean:.4f} "
              f"+/- {report.final_eval_std:.4f}")
        return EXIT_OK

    if args.beta_sweep:
        reports = trainer.beta_sweep(cfg, dataset, env, args.beta_sweep, args.out_dir)
        for beta, report in reports.items():
            print(f"beta={beta:g}: final return {report.final_eval_mean:.4f}, best {report.best_eval_mean:.4f}")
        return EXIT_OK

    if args.seeds:
        result = trainer.multi_seed(cfg, args.algo, dataset, env, args.seeds, flags, args.out_dir,
                                    workers=args.workers, dataset_path=args.data)
        for report in result.runs:
            print(f"seed {report.seed}: final return {report.final_eval_mean:.4f}")
        for name, stats in sorted(result.aggregate.items()):
            print(f"  {name}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
        if result.failures:
            print(f"{len(result.failures)} seed(s) failed: {sorted(result.failures)}", file=sys.stderr)
            return EXIT_FAILURE
        return EXIT_OK

    report = trainer.train(cfg, args.algo, dataset, env, flags, args.out_dir, dataset_path=args.data)
    print(f"Trained {args.algo} for {report.steps} steps: final return {report.final_eval_mean:.4f} "
          f"+/- {report.final_eval_std:.4f} (best {report.best_eval_mean:.4f} at step {report.best_step})")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    document = trainer.load_checkpoint(args.ckpt)
    if document['env_id'] != args.env:
        raise SchemaError(f"Checkpoint was trained on '{document['env_id']}', not '{args.env}'")
    state = agents.state_from_dict(document)
    env = envs.make_env(args.env)
    mean, std, _ = evalkit.evaluate(env, lambda obs: agents.act(state, obs), args.episodes,
                                    make_stream(args.seed, 'eval'))
    print(f"Return: {mean:.4f} +/- {std:.4f} over {args.episodes} episodes")

    if not env.has_oracle:
        print('Normalized score: n/a (no expert reference for this environment)')
        return EXIT_OK
    if args.references is not None:
        references = evalkit.load_references(args.references)
        if args.env not in references:
            raise SchemaError(f"No references for '{args.env}' in {args.references}")
        ref = references[args.env]
    else:
        ref = evalkit.compute_references(env, seed=args.seed)
    score = evalkit.normalized_score(mean, ref.random_return, ref.expert_return)
    print(f"Normalized score: {score:.2f}")
    return EXIT_OK


def cmd_beta_toy(args: argparse.Namespace) -> int:
    rows = evalkit.beta_scale_experiment(args.seed, args.stds, args.n_actions, args.beta)
    path = evalkit.write_experiment_csv(rows, args.out)
    for row in rows:
        print(f"std={row.std:g}  loc={row.fit.location:.4f}  scale={row.fit.scale:.4f}  "
              f"ks={row.gof.ks_statistic:.4f}  p={row.gof.p_value:.3f}")
    print(f"Wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_plot(args: argparse.Namespace) -> int:
    for path in plotting.plot_metrics(args.metrics, args.columns, args.out):
        print(f"Wrote {path}")
    return EXIT_OK


def cmd_references(args: argparse.Namespace) -> int:
    references = {env_id: evalkit.compute_references(envs.make_env(env_id), args.episodes, args.seed)
                  for env_id in args.envs}
    path = evalkit.save_references(references, args.out)
    for env_id, ref in sorted(references.items()):
        print(f"{env_id}: random {ref.random_return:.4f}, expert {ref.expert_return:.4f}")
    print(f"Wrote {path}")
    return EXIT_OK


## Parse, dispatch and map failures to exit codes (0 ok, 1 runtime failure, 2 usage)
def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK

    if args.command == 'train':
        if args.beta is not None and args.algo != 'xql':
            print(f"error: --beta applies to --algo xql only; {args.algo} does not take a temperature",
                  file=sys.stderr)
            return EXIT_USAGE
        if args.beta_sweep and args.algo != 'xql':
            print('error: --beta-sweep applies to --algo xql only', file=sys.stderr)
            return EXIT_USAGE
        if args.resume is not None and (args.seeds or args.beta_sweep):
            print('error: --resume continues one run; it cannot be combined with --seeds or --beta-sweep',
                  file=sys.stderr)
            return EXIT_USAGE
        args.explicit = _explicit_flags(argv)

    configure_logging(args.log_level)
    try:
        return args.handler(args)
    except (QQLError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    except ValueError as e:
        # malformed flag values such as an unparsable behavior string
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
