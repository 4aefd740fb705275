"""
Worker pool for replica blocks

Replicas are cut into fixed blocks (the layout depends only on the block size,
never on the number of workers). Blocks run on a thread pool and their results
are returned in replica order, so reductions are identical for any worker count.
"""
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from config import REPLICA_BLOCK_SIZE, WORKERS

logger = logging.getLogger(__name__)


def split_blocks(replica_indices: Sequence[int], block_size: int = REPLICA_BLOCK_SIZE) -> List[np.ndarray]:
    """Contiguous blocks of replica indices"""
    indices = np.asarray(replica_indices, dtype=np.int64)
    if block_size < 1:
        raise ValueError(f"block size must be positive, got {block_size}")
    return [indices[i:i + block_size] for i in range(0, indices.size, block_size)]


class ReplicaPool:
    """Runs per-block work on threads and keeps block results in replica order"""

    def __init__(self, workers: int = WORKERS):
        self.workers = max(1, int(workers))
        self.status = "idle"
        self.blocks_done = 0
        self.blocks_total = 0
        self._lock = threading.Lock()

    def set_workers(self, workers: Optional[int]):
        """Override the worker count (None keeps the configured value)"""
        if workers is None:
            return
        if workers < 1:
            raise ValueError(f"worker count must be positive, got {workers}")
        self.workers = int(workers)

    def get_status(self) -> Dict[str, Any]:
        """Get current pool status"""
        return {
            "workers": self.workers,
            "status": self.status,
            "blocks_done": self.blocks_done,
            "blocks_total": self.blocks_total,
        }

    def map_blocks(self, fn: Callable[[np.ndarray], Any], replica_indices: Sequence[int],
                   block_size: int = REPLICA_BLOCK_SIZE) -> List[Any]:
        """Apply fn to every block of replica indices; results come back in block order"""
        blocks = split_blocks(replica_indices, block_size)
        self.status = "running"
        self.blocks_done = 0
        self.blocks_total = len(blocks)
        started = time.perf_counter()

        def run(block: np.ndarray) -> Any:
            result = fn(block)
            with self._lock:
                self.blocks_done += 1
                logger.debug(f"Replica block {block[0]}-{block[-1]} finished "
                             f"({self.blocks_done}/{self.blocks_total})")
            return result

        try:
            if self.workers == 1 or len(blocks) <= 1:
                results = [run(block) for block in blocks]
            else:
                with ThreadPoolExecutor(max_workers=self.workers) as executor:
                    results = list(executor.map(run, blocks))
        except Exception as e:
            self.status = "error"
            logger.error(f"Replica block failed: {e}")
            raise

        self.status = "idle"
        logger.info(f"Processed {len(blocks)} replica blocks on {self.workers} workers "
                    f"in {time.perf_counter() - started:.2f}s")
        return results


# Global pool instance
replica_pool = ReplicaPool()
