"""Order-preserving map over independent jobs, serial or in worker processes."""

from concurrent.futures import ProcessPoolExecutor


def parallel_map(fn, items, jobs=1):
    """``[fn(x) for x in items]``, spread over ``jobs`` processes when ``jobs > 1``.

    ``fn`` and the items must be picklable in the parallel case.  Results come
    back in input order, so the outcome never depends on ``jobs``.
    """
    items = list(items)
    if jobs is None or jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as ex:
        return list(ex.map(fn, items))
