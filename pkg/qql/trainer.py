## Seeded end-to-end training runs: dataset in, checkpoints and metrics out, with periodic evaluation.

import csv
import json
import logging
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path
from typing import Dict, List, Literal, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel

from config.config import Config
from qql import agents, envs, evalkit
from qql.agents import AblationFlags, AgentState, StepMetrics, TrainConfig
from qql.data import Dataset, content_hash, sample_batch_arrays
from qql.errors import NonFiniteGradientError, PreconditionError, SchemaError, TrainingDivergenceError
from qql.rng import from_state, get_state, make_indexed_stream, make_stream
from utils.validators import RecordValidator

logger = logging.getLogger(__name__)

Algo = Literal['qql', 'xql', 'bc']
ALGOS = ('qql', 'xql', 'bc')
METRIC_COLUMNS = [f.name for f in fields(StepMetrics)]
EVAL_COLUMNS = ['step', 'mean_return', 'std_return']
CHECKPOINT_FORMAT = 'qql-checkpoint/1'


## One evaluation point of a run
class EvalPoint(BaseModel):
    step: int
    mean_return: float
    std_return: float


## Outcome of a single seeded run
class RunReport(BaseModel):
    algo: str
    env_id: str
    seed: int
    steps: int
    out_dir: str
    evals: List[EvalPoint]
    final_eval_mean: float
    final_eval_std: float
    best_eval_mean: float
    best_step: int
    final_metrics: Optional[Dict[str, float]] = None


## Per-seed reports plus mean and sample std of each summary metric
class MultiSeedReport(BaseModel):
    runs: List[RunReport]
    failures: Dict[int, str]
    aggregate: Dict[str, Dict[str, float]]


## Mutable progress of a run that must survive a checkpoint
class _Progress(BaseModel):
    best_mean: float = float('-inf')
    best_step: int = -1
    evals: List[EvalPoint] = []


def _update(algo: str, state: AgentState, batch, cfg: TrainConfig, flags: AblationFlags, rng):
    if algo == 'qql':
        return agents.qql_update(state, batch, cfg, flags, rng)
    if algo == 'xql':
        return agents.xql_update(state, batch, cfg, cfg.beta, rng)
    return agents.bc_update(state, batch, cfg, rng)


## Serialise agent, RNG streams and run context into a checkpoint document
def save_checkpoint(path: Union[str, Path], state: AgentState, algo: str, cfg: TrainConfig,
                    flags: AblationFlags, rngs: Dict[str, np.random.Generator],
                    progress: Optional[Dict] = None) -> Path:
    path = Path(path)
    document = {
        'format': CHECKPOINT_FORMAT,
        'algo': algo,
        **agents.state_to_dict(state),
        'rng': {name: get_state(gen) for name, gen in rngs.items()},
        'config': cfg.model_dump(by_alias=True),
        'flags': flags.model_dump(),
        'progress': progress or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f)
    logger.info(f"Checkpoint written to {path} (step {state.step})")
    return path


## Read and validate a checkpoint document
def load_checkpoint(path: Union[str, Path]) -> Dict:
    with open(path, 'r', encoding='utf-8') as f:
        try:
            document = json.load(f)
        except json.JSONDecodeError as e:
            raise SchemaError(f"Checkpoint {path} is not valid JSON: {e}") from e
    errors = RecordValidator.validate_checkpoint(document)
    if errors:
        raise SchemaError(f"Checkpoint {path} is invalid: {errors[0]}")
    return document


def _write_manifest(out_dir: Path, algo: str, env, cfg: TrainConfig, flags: AblationFlags,
                    dataset_hash: Optional[str], resumed_from: Optional[str]) -> None:
    manifest = {
        'algo': algo,
        'env_id': env.spec.id,
        'seed': cfg.seed,
        'config': cfg.model_dump(by_alias=True),
        'flags': flags.model_dump(),
        'dataset_hash': dataset_hash,
        'resumed_from': resumed_from,
    }
    errors = RecordValidator.validate_manifest(manifest)
    if errors:
        raise SchemaError(f"Run manifest for {out_dir} is invalid: {errors[0]}")
    with open(out_dir / Config.MANIFEST_FILE, 'w', encoding='utf-8') as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write('\n')


def _evaluate(env, state: AgentState, cfg: TrainConfig, step: int) -> EvalPoint:
    # one stream per evaluation step
    rng = make_indexed_stream(cfg.seed, 'eval', step)
    mean, std, _ = evalkit.evaluate(env, lambda obs: agents.act(state, obs), cfg.eval_episodes, rng)
    logger.info(f"Evaluation at step {step}: return {mean:.4f} +/- {std:.4f}")
    return EvalPoint(step=step, mean_return=mean, std_return=std)


## Metric rows of an earlier run up to and including `step`
def _metric_history(run_dir: Path, step: int) -> List[Dict[str, str]]:
    path = run_dir / Config.METRICS_FILE
    if not path.exists():
        logger.warning(f"No {Config.METRICS_FILE} next to the checkpoint; resumed metrics start at step {step + 1}")
        return []
    with open(path, 'r', newline='', encoding='utf-8') as f:
        reader = csv.DictReader(f)
        if reader.fieldnames != METRIC_COLUMNS:
            raise SchemaError(f"{path} does not have the metric columns {METRIC_COLUMNS}")
        return [row for row in reader if int(row['step']) <= step]


def _run(cfg: TrainConfig, algo: str, dataset: Dataset, env, flags: AblationFlags, out_dir: Path,
         state: AgentState, rngs: Dict[str, np.random.Generator], progress: _Progress,
         dataset_hash: Optional[str], resumed_from: Optional[str] = None,
         history: Sequence[Dict[str, str]] = ()) -> RunReport:
    if algo not in ALGOS:
        raise PreconditionError(f"Unknown algorithm '{algo}'")
    if dataset.env_id != env.spec.id:
        raise SchemaError(f"Dataset was generated on '{dataset.env_id}', not '{env.spec.id}'")

    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, algo, env, cfg, flags, dataset_hash, resumed_from)
    logger.info(f"Training {algo} on {env.spec.id} for {cfg.steps} steps (seed {cfg.seed}) into {out_dir}")

    last_metrics: Optional[StepMetrics] = None
    ckpt_args = dict(algo=algo, cfg=cfg, flags=flags, rngs=rngs)
    with open(out_dir / Config.METRICS_FILE, 'w', newline='', encoding='utf-8') as metrics_file, \
            open(out_dir / Config.EVAL_FILE, 'w', newline='', encoding='utf-8') as eval_file:
        metrics_writer = csv.DictWriter(metrics_file, fieldnames=METRIC_COLUMNS)
        metrics_writer.writeheader()
        metrics_writer.writerows(history)
        eval_writer = csv.DictWriter(eval_file, fieldnames=EVAL_COLUMNS)
        eval_writer.writeheader()
        eval_writer.writerows(point.model_dump() for point in progress.evals)

        def record_eval(point: EvalPoint) -> None:
            progress.evals.append(point)
            eval_writer.writerow(point.model_dump())
            if point.mean_return > progress.best_mean:
                progress.best_mean = point.mean_return
                progress.best_step = point.step
                save_checkpoint(out_dir / Config.BEST_CKPT_FILE, state, progress=progress.model_dump(), **ckpt_args)

        if not progress.evals:
            record_eval(_evaluate(env, state, cfg, state.step))

        try:
            while state.step < cfg.steps:
                batch = sample_batch_arrays(dataset, cfg.batch_size, rngs['batch'])
                state, last_metrics = _update(algo, state, batch, cfg, flags, rngs['policy'])
                metrics_writer.writerow(last_metrics.as_row())
                if state.step % cfg.eval_interval == 0 or state.step == cfg.steps:
                    record_eval(_evaluate(env, state, cfg, state.step))
        except (TrainingDivergenceError, NonFiniteGradientError) as e:
            logger.error(f"Training diverged: {e}")
            metrics_file.flush()
            eval_file.flush()
            raise

    save_checkpoint(out_dir / Config.FINAL_CKPT_FILE, state, progress=progress.model_dump(), **ckpt_args)
    final = progress.evals[-1]
    return RunReport(
        algo=algo,
        env_id=env.spec.id,
        seed=cfg.seed,
        steps=state.step,
        out_dir=str(out_dir),
        evals=progress.evals,
        final_eval_mean=final.mean_return,
        final_eval_std=final.std_return,
        best_eval_mean=progress.best_mean,
        best_step=progress.best_step,
        final_metrics=last_metrics.as_row() if last_metrics else None,
    )


## Run cfg.steps updates of one algorithm and write metrics, evaluations, checkpoints and manifest
def train(config: TrainConfig, algo: Algo, dataset: Dataset, env, flags: AblationFlags = AblationFlags(),
          out_dir: Union[str, Path] = Config.OUTPUT_DIR, dataset_path: Optional[Union[str, Path]] = None) -> RunReport:
    state = agents.init_agent_state(env, config, config.seed)
    rngs = {'batch': make_stream(config.seed, 'batch'), 'policy': make_stream(config.seed, 'policy')}
    dataset_hash = content_hash(dataset_path) if dataset_path else None
    return _run(config, algo, dataset, env, flags, Path(out_dir), state, rngs, _Progress(), dataset_hash)


## Continue a run from a checkpoint up to `steps` total updates
def resume(ckpt_path: Union[str, Path], dataset: Dataset, env, out_dir: Union[str, Path],
           steps: Optional[int] = None, dataset_path: Optional[Union[str, Path]] = None) -> RunReport:
    document = load_checkpoint(ckpt_path)
    if document['env_id'] != env.spec.id:
        raise SchemaError(f"Checkpoint belongs to '{document['env_id']}', not '{env.spec.id}'")
    cfg = TrainConfig(**document['config'])
    if steps is not None:
        cfg = cfg.model_copy(update={'steps': steps})
    flags = AblationFlags(**document['flags'])
    state = agents.state_from_dict(document)
    rngs = {name: from_state(snapshot) for name, snapshot in document['rng'].items()}
    progress = _Progress(**document.get('progress', {}))
    dataset_hash = content_hash(dataset_path) if dataset_path else None
    # read before _run truncates the files when out_dir is the checkpoint's own directory
    history = _metric_history(Path(ckpt_path).parent, state.step)
    logger.info(f"Resuming {document['algo']} from {ckpt_path} at step {state.step}")
    return _run(cfg, document['algo'], dataset, env, flags, Path(out_dir), state, rngs, progress,
                dataset_hash, resumed_from=str(ckpt_path), history=history)


def _train_seed(args):
    config, algo, dataset, env_spec, flags, out_dir, dataset_path = args
    return train(config, algo, dataset, envs.make_env(env_spec), flags, out_dir, dataset_path)


def _mean_std(values: List[float]) -> Dict[str, float]:
    return {
        'mean': statistics.fmean(values),
        'std': statistics.stdev(values) if len(values) > 1 else 0.0,
    }


## Independent runs over several seeds and their aggregate (sample std, n - 1 denominator)
def multi_seed(config: TrainConfig, algo: Algo, dataset: Dataset, env, seeds: Sequence[int],
               flags: AblationFlags = AblationFlags(), out_dir: Union[str, Path] = Config.OUTPUT_DIR,
               workers: int = 1, dataset_path: Optional[Union[str, Path]] = None) -> MultiSeedReport:
    if not seeds:
        raise PreconditionError('multi_seed needs at least one seed')
    given = [int(s) for s in seeds]
    ordered = sorted(set(given))
    if len(ordered) != len(given):
        duplicates = sorted({s for s in given if given.count(s) > 1})
        raise PreconditionError(f"multi_seed got duplicate seeds {duplicates}")
    out_dir = Path(out_dir)
    jobs = [(config.model_copy(update={'seed': s}), algo, dataset, env.spec, flags, out_dir / f"seed_{s}", dataset_path)
            for s in ordered]

    runs: List[RunReport] = []
    failures: Dict[int, str] = {}
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [(job[0].seed, pool.submit(_train_seed, job)) for job in jobs]
            outcomes = []
            for seed, future in futures:
                try:
                    outcomes.append((seed, future.result(), None))
                except Exception as e:
                    outcomes.append((seed, None, e))
    else:
        outcomes = []
        for job in jobs:
            try:
                outcomes.append((job[0].seed, _train_seed(job), None))
            except Exception as e:
                outcomes.append((job[0].seed, None, e))

    for seed, report, error in outcomes:
        if error is not None:
            logger.warning(f"Seed {seed} failed: {error}")
            failures[seed] = str(error)
        else:
            runs.append(report)

    aggregate: Dict[str, Dict[str, float]] = {}
    if runs:
        aggregate['final_eval_mean'] = _mean_std([r.final_eval_mean for r in runs])
        aggregate['best_eval_mean'] = _mean_std([r.best_eval_mean for r in runs])
        metric_names = runs[0].final_metrics.keys() if runs[0].final_metrics else []
        for name in metric_names:
            if name != 'step':
                aggregate[name] = _mean_std([r.final_metrics[name] for r in runs if r.final_metrics])
    if failures:
        logger.warning(f"Aggregate computed over {len(runs)} of {len(jobs)} seeds")
    return MultiSeedReport(runs=runs, failures=failures, aggregate=aggregate)


## XQL runs over a grid of temperatures; reports keyed by beta
def beta_sweep(config: TrainConfig, dataset: Dataset, env, betas: Sequence[float],
               out_dir: Union[str, Path] = Config.OUTPUT_DIR) -> Dict[float, RunReport]:
    reports = {}
    for beta in betas:
        cfg = config.model_copy(update={'beta': float(beta)})
        reports[float(beta)] = train(cfg, 'xql', dataset, env, AblationFlags(), Path(out_dir) / f"beta_{beta:g}")
        logger.info(f"XQL beta={beta:g}: final return {reports[float(beta)].final_eval_mean:.4f}")
    return reports
