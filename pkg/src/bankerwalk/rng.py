"""Per-replica random streams.

Every replica of a Monte Carlo experiment owns a Philox (counter-based)
generator whose key is derived from ``(seed, purpose, replica)``.  A replica's
draws therefore never depend on how replicas are batched or spread over
worker processes.
"""
import numpy as np

MASK64 = (1 << 64) - 1

# purpose tags keep streams of different simulators disjoint under one seed
WALK = 0
SDE = 1
ENV = 2
UNFOLDED = 3


def stream_key(seed, replica, purpose=0):
    state = np.random.SeedSequence([int(seed) & MASK64, int(purpose), int(replica)])
    lo, hi = state.generate_state(2, dtype=np.uint64)
    return int(lo) | (int(hi) << 64)


def replica_generator(seed, replica=0, purpose=0):
    """Independent generator for one replica."""
    return np.random.Generator(np.random.Philox(key=stream_key(seed, replica, purpose)))


class BatchDraws:
    """Step-synchronous draws for a batch of replicas.

    All live replicas advance together, so the k-th call of :meth:`next`
    returns, for each live replica, the k-th block of ``width`` values of its
    own stream.  Buffers are refilled chunk-wise for the live replicas only.
    """

    def __init__(self, seed, replicas, width, purpose=0, kind="uniform", max_buffer=1 << 21):
        self.width = int(width)
        self.kind = kind
        self.max_buffer = max_buffer
        self._gens = [replica_generator(seed, r, purpose) for r in replicas]
        self._live = np.arange(len(self._gens))
        self._buf = None
        self._rows = None
        self._pos = 0
        self._len = 0

    def _draw(self, gen, size):
        if self.kind == "uniform":
            return gen.random((size, self.width))
        return gen.standard_normal((size, self.width))

    def _refill(self):
        n = max(len(self._live), 1)
        size = int(min(4096, max(16, self.max_buffer // (n * self.width))))
        self._buf = np.empty((len(self._live), size, self.width))
        for row, idx in enumerate(self._live):
            self._buf[row] = self._draw(self._gens[idx], size)
        self._rows = np.arange(len(self._live))
        self._pos = 0
        self._len = size

    def keep(self, mask):
        """Retire replicas whose entry in ``mask`` (aligned with live order) is False."""
        mask = np.asarray(mask, dtype=bool)
        self._live = self._live[mask]
        if self._rows is not None:
            self._rows = self._rows[mask]

    def next(self):
        if self._buf is None or self._pos >= self._len:
            self._refill()
        out = self._buf[self._rows, self._pos]
        self._pos += 1
        return out
