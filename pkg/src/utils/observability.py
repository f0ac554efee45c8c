"""
Observability for long-running numerical experiments.

- configure_logging: one stderr handler on the root logger
- ObservabilityManager: per-command W&B run (optional) plus in-process timing totals
- traceable: decorator timing solver and simulation entry points
"""

import functools
import logging
import math
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, Optional

from src.utils.config import (
    LOG_LEVEL,
    WANDB_API_KEY,
    WANDB_ENTITY,
    WANDB_MODE,
    WANDB_PROJECT,
)

logger = logging.getLogger(__name__)


def configure_logging(level: Optional[str] = None) -> None:
    """Install a single stderr handler on the root logger."""
    logging.basicConfig(
        level=getattr(logging, (level or LOG_LEVEL).upper(), logging.WARNING),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )


@dataclass
class TimingStats:
    """Accumulated wall time of one traced operation."""
    calls: int = 0
    failures: int = 0
    total_ms: float = 0.0
    max_ms: float = 0.0

    def add(self, latency_ms: float, success: bool) -> None:
        self.calls += 1
        self.failures += 0 if success else 1
        self.total_ms += latency_ms
        self.max_ms = max(self.max_ms, latency_ms)


class ObservabilityManager:
    """
    Collects timings for every traced call and, when W&B is configured, mirrors
    headline metrics and latencies into one run per CLI command.
    """

    def __init__(self, api_key: Optional[str] = WANDB_API_KEY, mode: str = WANDB_MODE):
        self.tracking_available = bool(api_key) and mode != "disabled"
        self.mode = mode
        self.wandb_run = None
        self.timings: Dict[str, TimingStats] = {}
        self._lock = threading.Lock()

    @property
    def wandb_enabled(self) -> bool:
        return self.wandb_run is not None

    def start_run(self, command: str, config: Dict[str, Any]) -> bool:
        """Open a W&B run tagged with the command and its resolved config; False when tracking is off."""
        if not self.tracking_available:
            logger.debug("ℹ️  W&B tracking disabled (set WANDB_API_KEY to enable)")
            return False
        if self.wandb_run is not None:
            return True
        try:
            import wandb

            self.wandb_run = wandb.init(
                project=WANDB_PROJECT,
                entity=WANDB_ENTITY,
                mode=self.mode,
                job_type=command,
                config=config,
                reinit=False,
            )
            logger.info(f"✅ W&B tracking enabled for project: {WANDB_PROJECT} ({command})")
        except ImportError:
            logger.warning("⚠️  wandb package not installed. Run: pip install wandb")
        except Exception as e:
            logger.warning(f"⚠️  Failed to initialize W&B: {e}")
        return self.wandb_enabled

    def record_latency(self, name: str, latency_ms: float, success: bool,
                       metadata: Optional[Dict[str, Any]] = None) -> None:
        with self._lock:
            self.timings.setdefault(name, TimingStats()).add(latency_ms, success)
        if self.wandb_enabled:
            metrics = {f"{name}_latency_ms": latency_ms, f"{name}_success": int(success)}
            metrics.update({f"{name}_{key}": val for key, val in (metadata or {}).items()})
            self.log_metrics(metrics)

    def log_metrics(self, values: Dict[str, Any], step: Optional[int] = None) -> None:
        """Forward the finite numeric entries of values to W&B."""
        if not self.wandb_enabled:
            return
        numeric = {
            key: float(val) for key, val in values.items()
            if isinstance(val, (int, float)) and not isinstance(val, bool) and math.isfinite(val)
        }
        if not numeric:
            return
        try:
            import wandb
            wandb.log(numeric, step=step)
        except Exception as e:
            logger.warning(f"Failed to log metrics to W&B: {e}")

    def timing_summary(self) -> Dict[str, Dict[str, float]]:
        return {
            name: {"calls": s.calls, "failures": s.failures, "total_ms": s.total_ms, "max_ms": s.max_ms}
            for name, s in sorted(self.timings.items())
        }

    def finish(self) -> None:
        """Log the timing totals and close the W&B run if one is open."""
        for name, stats in sorted(self.timings.items()):
            logger.info(f"ℹ️  {name}: {stats.calls} calls, {stats.total_ms:.1f} ms total")
        if self.wandb_run is None:
            return
        try:
            import wandb
            wandb.finish()
            logger.info("✅ W&B run finished")
        except Exception as e:
            logger.warning(f"Failed to finish W&B run: {e}")
        finally:
            self.wandb_run = None


_observability_manager: Optional[ObservabilityManager] = None


def get_observability_manager() -> ObservabilityManager:
    """Get or create the process-wide observability manager."""
    global _observability_manager
    if _observability_manager is None:
        _observability_manager = ObservabilityManager()
    return _observability_manager


def traceable(name: Optional[str] = None, metadata: Optional[Dict[str, Any]] = None):
    """
    Time every call of the decorated function.

    Usage:
        @traceable(name="solve_fixed_point")
        def solve_fixed_point(prior, law, opts):
            ...

    Args:
        name: Trace name (defaults to the function name)
        metadata: Extra fields sent to W&B with each latency
    """
    def decorator(func: Callable) -> Callable:
        trace_name = name or func.__name__

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            success = False
            try:
                result = func(*args, **kwargs)
                success = True
                return result
            finally:
                latency_ms = (time.perf_counter() - start_time) * 1000
                logger.debug(f"{trace_name} took {latency_ms:.1f} ms (success={success})")
                get_observability_manager().record_latency(trace_name, latency_ms, success, metadata)

        return wrapper
    return decorator
