"""Process-pool fan-out for independent tasks (replicates, folds, resamples).

Results come back in task order, so output never depends on scheduling.
"""
import os
from concurrent.futures import ProcessPoolExecutor


def resolve_workers(requested=None) -> int:
    env = os.environ.get("MWCLASS_WORKERS")
    if env:
        return max(1, int(env))
    if requested is None:
        return os.cpu_count() or 1
    return max(1, int(requested))


def map_tasks(fn, tasks, workers: int = 1):
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
