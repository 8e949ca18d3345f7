import numpy as np
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import wraps
from tqdm import tqdm

from qbm.config import settings

logging.basicConfig(level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
                    format="%(asctime)s %(levelname)s %(message)s")
logger = logging.getLogger("qbm")


def escalate(exceptions, tries=None, factor=4):
    """Re-run a quadrature with a larger subinterval ``limit`` when it fails.

    The wrapped function must accept a ``limit`` keyword. After ``tries``
    attempts the last exception propagates unchanged.
    """
    def decorator(f):
        @wraps(f)
        def wrapped(*args, **kwargs):
            mtries = tries or settings.QUAD_TRIES
            limit = kwargs.pop("limit", settings.QUAD_LIMIT)
            while mtries > 1:
                try:
                    return f(*args, limit=limit, **kwargs)
                except exceptions as e:
                    logger.warning("%s: %s; retrying with limit=%d (%d tries left)",
                                   f.__name__, e, limit * factor, mtries - 1)
                    mtries -= 1
                    limit *= factor
            return f(*args, limit=limit, **kwargs)
        return wrapped
    return decorator


def map_grid(func, grid, threads=None, desc=None):
    """Evaluate ``func`` at every grid point, in order, optionally on threads."""
    grid = list(np.atleast_1d(np.asarray(grid, dtype=float)))
    threads = threads or settings.THREADS
    disable = not settings.PROGRESS or len(grid) < 2
    if threads <= 1:
        return [func(t) for t in tqdm(grid, desc=desc, disable=disable)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(tqdm(pool.map(func, grid), total=len(grid), desc=desc, disable=disable))


def sym(m: np.ndarray):
    return 0.5 * (m + m.T)


def fmt17(x) -> str:
    return format(float(x), ".17g")


def time_grid(t_max, n_points, spacing="linear", t_min=None):
    if n_points == 1:
        return np.array([0.0])
    if spacing == "log":
        t_min = t_min or t_max * 1e-4
        return np.concatenate([[0.0], np.geomspace(t_min, t_max, n_points - 1)])
    return np.linspace(0.0, t_max, n_points)
