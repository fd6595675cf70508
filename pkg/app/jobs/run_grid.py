# app/jobs/run_grid.py
# Paired experiment grid: one scenario per (neg_fraction, n_l, seed), every method trained
# on it. Results stream to <out>/results.csv as runs finish and the file is rewritten in
# canonical order at the end.

import json
import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple

from app.core.exceptions import GridResumeError, SslbError
from app.schemas.experiment import GridConfig, MethodId, RunResult
from app.schemas.scenario import ScenarioConfig
from app.services.datasets import ImageDataset
from app.services.reporting import append_result, read_results, sort_results, write_results
from app.services.scenario import Scenario, sample_scenario, write_manifest
from app.services.training import run_training

logger = logging.getLogger("sslb.grid")

RESULTS_FILE = "results.csv"
GRID_FILE = "grid.json"
MANIFEST_DIR = "manifests"


@dataclass(frozen=True)
class GridPaths:
    root: Path

    @property
    def results(self) -> Path:
        return self.root / RESULTS_FILE

    @property
    def grid(self) -> Path:
        return self.root / GRID_FILE

    @property
    def manifests(self) -> Path:
        return self.root / MANIFEST_DIR

    def manifest(self, neg_fraction: float, n_l: int, seed: int) -> Path:
        return self.manifests / f"neg{neg_fraction:g}_nl{n_l}_seed{seed}.txt"


def grid_cells(grid: GridConfig) -> List[Tuple[float, int, int]]:
    return [(nf, nl, seed) for nf in grid.neg_fractions for nl in grid.n_ls for seed in grid.seeds]


def check_resume(grid: GridConfig, out_dir: Path) -> List[RunResult]:
    """Finished runs of a prior grid in out_dir; GridResumeError unless its config matches."""
    paths = GridPaths(Path(out_dir))
    if not paths.grid.exists():
        raise GridResumeError(f"cannot resume: {paths.grid} not found")
    prior = json.loads(paths.grid.read_text(encoding="utf-8"))
    current = grid.compatibility_key()
    if prior != current:
        changed = sorted(k for k in set(prior) | set(current) if prior.get(k) != current.get(k))
        raise GridResumeError(f"cannot resume: prior grid differs in {', '.join(changed)}")
    return read_results(paths.results) if paths.results.exists() else []


def _run_one(scenario: Scenario, method: MethodId, seed: int, grid: GridConfig) -> RunResult:
    try:
        return run_training(scenario, method, grid.training.epochs, seed, grid.training)
    except SslbError as exc:
        logger.exception("Run %s seed=%s failed", method.value, seed)
        return RunResult(
            method=method,
            neg_fraction=scenario.config.neg_fraction,
            n_l=scenario.config.n_l,
            seed=seed,
            failed=True,
            error=f"{type(exc).__name__}: {exc}",
        )


def run_grid(
    grid: GridConfig,
    pos_pool: ImageDataset,
    neg_pool: ImageDataset,
    out_dir: Path,
    resume: bool = False,
) -> List[RunResult]:
    paths = GridPaths(Path(out_dir))
    paths.root.mkdir(parents=True, exist_ok=True)

    existing: List[RunResult] = []
    if resume:
        existing = check_resume(grid, paths.root)
        logger.info("Resuming grid in %s with %s finished runs", paths.root, len(existing))
    elif paths.results.exists():
        logger.warning("Replacing previous results in %s", paths.results)
        paths.results.unlink()
    paths.grid.write_text(json.dumps(grid.compatibility_key(), indent=2, sort_keys=True), encoding="utf-8")

    done = {r.key for r in existing}
    pending = []
    for nf, nl, seed in grid_cells(grid):
        todo = [m for m in grid.methods if (nf, nl, seed, m.value) not in done]
        if not todo:
            logger.info("Skipping finished cell neg_fraction=%s n_l=%s seed=%s", nf, nl, seed)
            continue
        config = ScenarioConfig(
            total_sample=grid.total_sample, val_fraction=grid.val_fraction, n_l=nl, neg_fraction=nf, seed=seed
        )
        scenario = sample_scenario(pos_pool, neg_pool, config)
        write_manifest(scenario, paths.manifest(nf, nl, seed))
        pending.extend((scenario, m, seed) for m in todo)

    total = len(pending)
    logger.info("Grid: %s runs to do, %s already finished, jobs=%s", total, len(existing), grid.jobs)
    finished: List[RunResult] = []
    with ThreadPoolExecutor(max_workers=grid.jobs) as pool:
        futures = [pool.submit(_run_one, scenario, method, seed, grid) for scenario, method, seed in pending]
        for count, future in enumerate(as_completed(futures), start=1):
            result = future.result()
            append_result(paths.results, result)
            finished.append(result)
            logger.info(
                "[%s/%s] %s neg_fraction=%s n_l=%s seed=%s best=%.4f%s",
                count, total, result.method.value, result.neg_fraction, result.n_l, result.seed,
                result.best_val_acc, " FAILED" if result.failed else "",
            )

    results = sort_results(existing + finished)
    write_results(paths.results, results)
    return results


def load_grid_results(out_dir: Path) -> Optional[List[RunResult]]:
    path = GridPaths(Path(out_dir)).results
    return read_results(path) if path.exists() else None
