import hashlib
import threading
from collections import OrderedDict
from functools import wraps

import numpy as np

from ofbmlab.utils.logger import logger


def _freeze(value):
    """Turn an argument into a hashable cache-key component."""
    if isinstance(value, np.ndarray):
        digest = hashlib.sha1(np.ascontiguousarray(value).tobytes()).hexdigest()
        return ("ndarray", value.shape, value.dtype.str, digest)
    if hasattr(value, "cache_key"):
        return ("obj", type(value).__name__, value.cache_key)
    if isinstance(value, (list, tuple)):
        return tuple(_freeze(v) for v in value)
    if isinstance(value, dict):
        return tuple(sorted((k, _freeze(v)) for k, v in value.items()))
    return value


def array_cache(maxsize: int = 32):
    """
    A thread-safe LRU memoization decorator for pure numeric functions.

    Arrays are keyed by shape, dtype and a digest of their bytes; objects exposing
    ``cache_key`` are keyed by it. Cached arrays are returned as-is, so callers
    must treat results as read-only.
    """
    def decorator(func):
        cache: OrderedDict = OrderedDict()
        lock = threading.Lock()

        @wraps(func)
        def wrapper(*args, **kwargs):
            key = (_freeze(args), _freeze(kwargs))
            with lock:
                if key in cache:
                    cache.move_to_end(key)
                    logger.debug(f"Cache HIT for {func.__name__}")
                    return cache[key]

            logger.debug(f"Cache MISS for {func.__name__}. Computing...")
            result = func(*args, **kwargs)

            with lock:
                cache[key] = result
                cache.move_to_end(key)
                while len(cache) > maxsize:
                    cache.popitem(last=False)
            return result

        wrapper.cache_clear = cache.clear
        return wrapper
    return decorator
