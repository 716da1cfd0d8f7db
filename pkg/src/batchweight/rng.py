"""Named, independently seeded random streams.

One experiment seed expands into a fixed registry of streams so that adding
a new consumer never shifts the draws seen by existing ones.  Stream states
are plain dicts (JSON-safe) for checkpointing.
"""

import numpy as np

# Registry order is part of the reproducibility contract: new streams get
# appended, never inserted.
STREAM_NAMES = ("init", "data-x", "data-y", "noise-x", "noise-y", "eval", "transform")


class RngStreams:
    """A family of independent PCG64 generators derived from one seed."""

    def __init__(self, seed):
        self.seed = int(seed)
        self._generators = {}
        for index, name in enumerate(STREAM_NAMES):
            ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(index,))
            self._generators[name] = np.random.Generator(np.random.PCG64(ss))

    def get(self, name):
        try:
            return self._generators[name]
        except KeyError:
            raise KeyError(f"unknown rng stream {name!r}; known: {STREAM_NAMES}")

    def state(self):
        """JSON-serializable snapshot of every stream's position."""
        return {name: gen.bit_generator.state for name, gen in self._generators.items()}

    def set_state(self, state):
        for name, st in state.items():
            self._generators[name].bit_generator.state = st
