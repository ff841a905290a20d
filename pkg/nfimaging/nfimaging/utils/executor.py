"""
Fan-out helper for independent per-frequency / per-position jobs.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed

from nfimaging import settings

logger = logging.getLogger(__name__)


def map_keyed(func, keys, threads=None, capture_errors=False):
    """
    Evaluate func(key) for every key and return {key: result} in the input
    order, independent of completion order.

    With capture_errors the failing keys map to the raised exception
    instead of aborting the remaining jobs.
    """
    keys = list(keys)
    threads = settings.THREADS if threads is None else threads
    results = {}

    if threads <= 1 or len(keys) <= 1:
        for key in keys:
            try:
                results[key] = func(key)
            except Exception as e:
                if not capture_errors:
                    raise
                logger.warning(f"Job {key!r} failed: {e}")
                results[key] = e
        return {key: results[key] for key in keys}

    with ThreadPoolExecutor(max_workers=threads) as executor:
        futures = {executor.submit(func, key): key for key in keys}
        for future in as_completed(futures):
            key = futures[future]
            try:
                results[key] = future.result()
            except Exception as e:
                if not capture_errors:
                    raise
                logger.warning(f"Job {key!r} failed: {e}")
                results[key] = e
    return {key: results[key] for key in keys}
