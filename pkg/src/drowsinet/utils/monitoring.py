import logging
import os
import time
from functools import wraps

from langsmith.run_helpers import traceable

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def configure_logging(level: str = "WARNING"):
    """Route library logging to stderr on single lines."""
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, force=True)


def trace_node(node_name: str):
    """Decorator for tracing pipeline nodes and recording their wall-clock time."""
    def decorator(func):
        @traceable(name=f"drowsinet_{node_name}")
        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.time()
            result = func(*args, **kwargs)
            elapsed = time.time() - start_time

            if isinstance(result, dict):
                result["node_times"] = {**result.get("node_times", {}), node_name: elapsed}
                result["processing_time"] = (result.get("processing_time") or 0.0) + elapsed
            logger.info("node %s finished in %.1fs", node_name, elapsed)
            return result
        return wrapper
    return decorator


def setup_langsmith_env(project: str = "drowsinet") -> bool:
    """Enable LangSmith tracing when an API key is present; tracing stays optional."""
    if not os.getenv("LANGSMITH_API_KEY"):
        logger.info("LANGSMITH_API_KEY not set; tracing disabled")
        return False

    for var, default in {"LANGSMITH_TRACING": "true", "LANGSMITH_PROJECT": project}.items():
        if not os.getenv(var):
            os.environ[var] = default
    return True
