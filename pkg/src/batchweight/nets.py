"""Network families: residual noise-conditioned generators, a two-branch
joint discriminator, marginal discriminators, and scalar weight networks.

All of them are plain containers of named parameter tensors whose forward
methods build autodiff graphs.  Discriminators and weight networks keep
every linear layer spectrally normalized; generators are left unnormalized
so their small-output-layer initialization keeps them near the identity.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ShapeError

LEAKY_SLOPE = 0.2
SPECTRAL_WARMUP_ITERATIONS = 30
GENERATOR_OUTPUT_SCALE = 0.1


@dataclass(frozen=True)
class GeneratorConfig:
    data_dim: int
    noise_dim: int = 8
    hidden_width: int = 32
    n_residual_blocks: int = 2


@dataclass(frozen=True)
class JointDiscConfig:
    data_dim: int
    branch_width: int = 24
    trunk_width: int = 48
    n_layers: int = 2


@dataclass(frozen=True)
class MarginalDiscConfig:
    data_dim: int
    width: int = 48
    n_layers: int = 3


@dataclass(frozen=True)
class WeightNetConfig:
    data_dim: int
    width: int = 32
    n_layers: int = 3


def orthogonal_matrix(rows, cols, rng):
    """Orthogonal (or column/row-orthonormal) init via QR with sign fixing."""
    n = max(rows, cols)
    a = rng.standard_normal((n, n))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    return q[:rows, :cols].copy()


class Linear:
    """A dense layer ``x @ W + b`` with optional spectral normalization."""

    def __init__(self, name, in_dim, out_dim, rng, spectral=False, weight_scale=1.0):
        self.name = name
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = ad.Tensor(
            weight_scale * orthogonal_matrix(in_dim, out_dim, rng),
            name=f"{name}.weight",
        )
        self.bias = ad.Tensor(np.zeros(out_dim), name=f"{name}.bias")
        self.spectral_state = None
        self._cached_tape = None
        self._cached_norm = None
        if spectral:
            self.spectral_state = ad.SpectralState(out_dim, rng)
            self.spectral_state.refresh(self.weight.data, SPECTRAL_WARMUP_ITERATIONS)

    def parameters(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]

    def spectral_step(self, n_iterations=1):
        if self.spectral_state is not None:
            self.spectral_state.refresh(self.weight.data, n_iterations)

    def effective_weight(self):
        if self.spectral_state is None:
            return self.weight
        # one normalization node per recorded graph, shared by repeated calls
        tape = ad.current_tape()
        if tape is not None and tape is self._cached_tape:
            return self._cached_norm
        node = ad.normalize_with_state(self.weight, self.spectral_state)
        if tape is not None:
            self._cached_tape = tape
            self._cached_norm = node
        return node

    def __call__(self, x):
        if x.data.ndim != 2 or x.data.shape[1] != self.in_dim:
            raise ShapeError(
                f"{self.name} expects (*, {self.in_dim}), got {x.data.shape}"
            )
        return ad.add(ad.matmul(x, self.effective_weight()), self.bias)


class _Network:
    """Shared bookkeeping for layered parameter containers."""

    def __init__(self, name):
        self.name = name
        self._layers = []

    def _add(self, layer):
        self._layers.append(layer)
        return layer

    def parameters(self):
        out = []
        for layer in self._layers:
            out.extend(layer.parameters())
        return out

    def spectral_step(self, n_iterations=1):
        for layer in self._layers:
            layer.spectral_step(n_iterations)

    def spectral_states(self):
        return [
            (layer.name, layer.spectral_state)
            for layer in self._layers
            if layer.spectral_state is not None
        ]


class Generator(_Network):
    """Noise-conditioned residual map with an additive skip from input to
    output, so zeroed output weights give the exact identity for any noise.
    """

    def __init__(self, name, config, rng):
        super().__init__(name)
        self.config = config
        d, h = config.data_dim, config.hidden_width
        self.in_layer = self._add(Linear(f"{name}.in", d, h, rng))
        self.embed = self._add(Linear(f"{name}.embed", config.noise_dim, h, rng))
        width = 2 * h
        self.blocks = []
        for b in range(config.n_residual_blocks):
            first = self._add(Linear(f"{name}.block{b}.a", width, width, rng))
            second = self._add(Linear(f"{name}.block{b}.b", width, width, rng))
            self.blocks.append((first, second))
        self.out_layer = self._add(
            Linear(f"{name}.out", width, d, rng, weight_scale=GENERATOR_OUTPUT_SCALE)
        )

    def forward(self, x, z):
        if x.data.shape[0] != z.data.shape[0]:
            raise ShapeError(
                f"{self.name}: batch sizes differ, x {x.data.shape} vs z {z.data.shape}"
            )
        h = ad.relu(self.in_layer(x))
        e = ad.relu(self.embed(z))
        u = ad.concat([h, e], axis=1)
        for first, second in self.blocks:
            u = ad.add(u, second(ad.relu(first(u))))
        return ad.add(x, self.out_layer(u))


class JointDiscriminator(_Network):
    """Critic on (x, y) pairs: per-input branches plus a concatenation trunk,
    merged at each of two levels, then a scalar head.  Spectrally normalized
    throughout.
    """

    def __init__(self, name, config, rng):
        super().__init__(name)
        self.config = config
        d, bw, tw = config.data_dim, config.branch_width, config.trunk_width
        self.x1 = self._add(Linear(f"{name}.x1", d, bw, rng, spectral=True))
        self.y1 = self._add(Linear(f"{name}.y1", d, bw, rng, spectral=True))
        self.t1 = self._add(Linear(f"{name}.t1", 2 * d, tw, rng, spectral=True))
        merged = 2 * bw + tw
        self.x2 = self._add(Linear(f"{name}.x2", bw, bw, rng, spectral=True))
        self.y2 = self._add(Linear(f"{name}.y2", bw, bw, rng, spectral=True))
        self.t2 = self._add(Linear(f"{name}.t2", merged, tw, rng, spectral=True))
        self.head = []
        width = merged
        for i in range(max(config.n_layers - 1, 0)):
            layer = self._add(Linear(f"{name}.head{i}", width, tw, rng, spectral=True))
            self.head.append(layer)
            width = tw
        self.head_out = self._add(Linear(f"{name}.out", width, 1, rng, spectral=True))

    def forward(self, x, y):
        if x.data.shape[0] != y.data.shape[0]:
            raise ShapeError(f"{self.name}: batch sizes differ")
        act = ad.leaky_relu
        l1x = act(self.x1(x), LEAKY_SLOPE)
        l1y = act(self.y1(y), LEAKY_SLOPE)
        l1t = act(self.t1(ad.concat([x, y], axis=1)), LEAKY_SLOPE)
        l2x = act(self.x2(l1x), LEAKY_SLOPE)
        l2y = act(self.y2(l1y), LEAKY_SLOPE)
        l2t = act(self.t2(ad.concat([l1x, l1t, l1y], axis=1)), LEAKY_SLOPE)
        h = ad.concat([l2x, l2t, l2y], axis=1)
        for layer in self.head:
            h = act(layer(h), LEAKY_SLOPE)
        return self.head_out(h)


class MarginalDiscriminator(_Network):
    """Scalar critic on single points; spectrally normalized MLP."""

    def __init__(self, name, config, rng):
        super().__init__(name)
        self.config = config
        self.hidden = []
        width = config.data_dim
        for i in range(max(config.n_layers - 1, 0)):
            layer = self._add(
                Linear(f"{name}.h{i}", width, config.width, rng, spectral=True)
            )
            self.hidden.append(layer)
            width = config.width
        self.out = self._add(Linear(f"{name}.out", width, 1, rng, spectral=True))

    def forward(self, x):
        h = x
        for layer in self.hidden:
            h = ad.leaky_relu(layer(h), LEAKY_SLOPE)
        return self.out(h)


class WeightNet(_Network):
    """Raw scalar logits for batch weighting; same body as a marginal critic.

    ``data_dim`` is the full input width, so a pair-consuming network is
    built with twice the point dimension.
    """

    def __init__(self, name, config, rng):
        super().__init__(name)
        self.config = config
        self.hidden = []
        width = config.data_dim
        for i in range(max(config.n_layers - 1, 0)):
            layer = self._add(
                Linear(f"{name}.h{i}", width, config.width, rng, spectral=True)
            )
            self.hidden.append(layer)
            width = config.width
        self.out = self._add(Linear(f"{name}.out", width, 1, rng, spectral=True))

    def forward(self, x):
        h = x
        for layer in self.hidden:
            h = ad.leaky_relu(layer(h), LEAKY_SLOPE)
        return self.out(h)

    def forward_pair(self, x, y):
        return self.forward(ad.concat([x, y], axis=1))

    def zero_(self):
        """Zero every parameter in place (frozen-uniform weighting)."""
        for _, tensor in self.parameters():
            tensor.data = np.zeros_like(tensor.data)
