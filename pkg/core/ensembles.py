"""
Seeded ensemble runs behind the sweep, mutinfo and gradvar commands.

Every realization is one task keyed by (N, p, sample index). Its seed comes from
that key alone, tasks run through joblib in fixed order, and completed payloads
are stored in the run manifest so an interrupted run can resume.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from core import __version__
from core.circuits import build_circuit, sample_parameters
from core.config import ExperimentConfig
from core.entanglement import half_chain_entropy, mutual_information
from core.gradients import gradient_sample, variance_estimate
from core.observables import Observable
from core.storage import load_completed, save_task_results, start_run
from core.tables import EnsembleTable, table_columns
from core.trajectories import (
    BOOTSTRAP_TAG,
    ENTROPY_TAG,
    GRADVAR_TAG,
    MUTINFO_TAG,
    derive_seed,
    p_key,
    run_trajectory,
)

logger = logging.getLogger(__name__)

CHUNK_SIZE = 256
COMMAND_TAGS = {"sweep": ENTROPY_TAG, "mutinfo": MUTINFO_TAG, "gradvar": GRADVAR_TAG}


@dataclass(frozen=True)
class Task:
    n: int
    p: float
    index: int
    seed: int

    @property
    def key(self) -> str:
        return f"{self.n}:{p_key(self.p)}:{self.index}"


@dataclass
class EnsembleRun:
    table: EnsembleTable
    per_layer: Optional[pd.DataFrame] = None


def build_tasks(config: ExperimentConfig, tag: int) -> List[Task]:
    """Tasks ordered by (N, p, sample index)."""
    return [
        Task(int(n), float(p), k, derive_seed(config.base_seed, tag, int(n), p_key(p), k))
        for n in config.sizes
        for p in config.p_grid
        for k in range(config.samples)
    ]


def _realization(family: str, n: int, depth: int, p: float, seed: int, cnot_wrap: bool, per_layer: bool):
    rng = np.random.default_rng(seed)
    circuit = build_circuit(family, n, depth, sample_parameters(family, n, depth, rng), cnot_wrap=cnot_wrap)
    return run_trajectory(circuit, p, seed=int(rng.integers(0, 2**63 - 1)), per_layer=per_layer)


def entropy_task(family: str, n: int, depth: int, p: float, seed: int, cnot_wrap: bool = True,
                 per_layer: bool = False) -> dict:
    result = _realization(family, n, depth, p, seed, cnot_wrap, per_layer)
    payload = {"value": half_chain_entropy(result.final_state)}
    if per_layer:
        payload["layers"] = list(result.per_layer_entropy)
    return payload


def mutinfo_task(family: str, n: int, depth: int, p: float, seed: int, r_values: Sequence[int],
                 cnot_wrap: bool = True) -> dict:
    state = _realization(family, n, depth, p, seed, cnot_wrap, False).final_state
    return {"values": [mutual_information(state, 0, int(r)) for r in r_values]}


def gradvar_task(family: str, n: int, depth: int, p: float, seed: int, observable: str, l: int,
                 cnot_wrap: bool = True, estimator: str = "mixture") -> dict:
    value = gradient_sample(family, n, depth, p, seed, Observable.parse(observable), l, cnot_wrap, estimator)
    return {"value": value}


def run_tasks(command: str, tasks: List[Task], worker: Callable[[Task], tuple], threads: int = 1,
              db_path: Optional[str] = None, quiet: bool = False,
              chunk_size: int = CHUNK_SIZE) -> List[dict]:
    """
    Runs worker(task) -> (callable, args) for each task not yet in the manifest.
    Results come back in task order whatever the worker count.
    """
    done: Dict[str, dict] = load_completed(db_path, command) if db_path else {}
    pending = [t for t in tasks if t.key not in done]
    if len(pending) < len(tasks):
        logger.info("%s: %d of %d tasks already complete", command, len(tasks) - len(pending), len(tasks))
    with tqdm(total=len(tasks), initial=len(tasks) - len(pending), desc=command, unit="task",
              disable=quiet) as bar:
        for start in range(0, len(pending), chunk_size):
            chunk = pending[start:start + chunk_size]
            calls = [worker(t) for t in chunk]
            results = Parallel(n_jobs=threads)(delayed(fn)(*args) for fn, args in calls)
            if db_path:
                save_task_results(db_path, command, [(t.key, r) for t, r in zip(chunk, results)])
            done.update((t.key, r) for t, r in zip(chunk, results))
            bar.update(len(chunk))
    return [done[t.key] for t in tasks]


def _metadata(config: ExperimentConfig, command: str) -> dict:
    metadata = {
        "command": command,
        "family": config.family,
        "config_hash": config.config_hash(),
        "base_seed": config.base_seed,
        "depth": config.depth,
        "samples": config.samples,
        "tool_version": __version__,
    }
    if config.family == "hea":
        metadata["hea_cnot_wrap"] = config.hea_cnot_wrap
    for i, note in enumerate(config.notes):
        metadata[f"note_{i}"] = note
    return metadata


def _prepare(command: str, config: ExperimentConfig, db_path: Optional[str], resume: bool):
    if db_path:
        start_run(db_path, command, config.config_hash(), resume)
    return build_tasks(config, COMMAND_TAGS[command])


def _group(tasks: List[Task], results: List[dict]) -> Dict[Tuple[int, float], List[dict]]:
    cells: Dict[Tuple[int, float], List[dict]] = {}
    for task, result in zip(tasks, results):
        cells.setdefault((task.n, task.p), []).append(result)
    return cells


def _per_layer_frame(cells: Dict[Tuple[int, float], List[dict]]) -> pd.DataFrame:
    records = []
    for (n, p), results in sorted(cells.items()):
        layers = np.array([r["layers"] for r in results], dtype=float)
        std = layers.std(axis=0, ddof=1)
        for d in range(layers.shape[1]):
            records.append({
                "N": n, "p": p, "layer": d + 1,
                "mean": float(layers[:, d].mean()),
                "std": float(std[d]),
                "stderr": float(std[d] / math.sqrt(layers.shape[0])),
            })
    return pd.DataFrame.from_records(records, columns=["N", "p", "layer", "mean", "std", "stderr"])


def run_sweep(config: ExperimentConfig, db_path: Optional[str] = None, resume: bool = False,
              quiet: bool = False) -> EnsembleRun:
    """Half-chain entropy of R trajectories per (N, p)."""
    tasks = _prepare("sweep", config, db_path, resume)

    def worker(t: Task):
        return entropy_task, (config.family, t.n, config.depth, t.p, t.seed, config.hea_cnot_wrap, config.per_layer)

    results = run_tasks("sweep", tasks, worker, config.threads, db_path, quiet)
    cells = _group(tasks, results)
    samples = {key: [r["value"] for r in rs] for key, rs in cells.items()}
    table = EnsembleTable.from_samples("entropy", config.family, config.depth, samples,
                                       _metadata(config, "sweep"), keep_raw=True)
    per_layer = _per_layer_frame(cells) if config.per_layer else None
    return EnsembleRun(table, per_layer)


def run_mutinfo(config: ExperimentConfig, db_path: Optional[str] = None, resume: bool = False,
                quiet: bool = False) -> EnsembleRun:
    """Mutual information I(0, r) per (N, p, r); every r comes from the same trajectories."""
    r_values = config.r_values or tuple(range(1, min(config.sizes) // 2 + 1))
    tasks = _prepare("mutinfo", config, db_path, resume)

    def worker(t: Task):
        return mutinfo_task, (config.family, t.n, config.depth, t.p, t.seed, r_values, config.hea_cnot_wrap)

    results = run_tasks("mutinfo", tasks, worker, config.threads, db_path, quiet)
    samples = {}
    for (n, p), rs in _group(tasks, results).items():
        for j, r in enumerate(r_values):
            samples[(n, p, int(r))] = [res["values"][j] for res in rs]
    metadata = dict(_metadata(config, "mutinfo"), r_values=",".join(str(r) for r in r_values))
    table = EnsembleTable.from_samples("mutual_info", config.family, config.depth, samples, metadata, keep_raw=True)
    return EnsembleRun(table)


def run_gradvar(config: ExperimentConfig, db_path: Optional[str] = None, resume: bool = False,
                quiet: bool = False) -> EnsembleRun:
    """
    Variance over realizations of the per-branch gradient ∂<O>/∂θ_l. The mean column
    holds the sample variance; std and stderr hold its bootstrap standard error.
    """
    tasks = _prepare("gradvar", config, db_path, resume)

    def worker(t: Task):
        return gradvar_task, (config.family, t.n, config.depth, t.p, t.seed, config.observable,
                              config.param_index, config.hea_cnot_wrap, config.gradient_estimator)

    results = run_tasks("gradvar", tasks, worker, config.threads, db_path, quiet)
    records = []
    raw = {}
    for (n, p), rs in sorted(_group(tasks, results).items()):
        values = np.array([r["value"] for r in rs], dtype=float)
        rng = np.random.default_rng(derive_seed(config.base_seed, BOOTSTRAP_TAG, n, p_key(p)))
        estimate = variance_estimate(values, rng, k_boot=config.k_boot)
        raw[(n, p)] = values
        records.append({
            "family": config.family, "N": n, "p": p, "L": config.depth, "R": values.size,
            "mean": estimate.variance, "std": estimate.stderr, "stderr": estimate.stderr,
        })
    rows = pd.DataFrame.from_records(records, columns=table_columns("grad_variance"))
    metadata = dict(_metadata(config, "gradvar"), observable=config.observable,
                    param_index=config.param_index, estimator=config.gradient_estimator,
                    k_boot=config.k_boot)
    return EnsembleRun(EnsembleTable("grad_variance", rows, metadata, raw))
