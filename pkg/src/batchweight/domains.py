"""Synthetic source/target distribution pairs with known mode masses.

The continuous domains are Gaussian mixtures in the plane whose mode
masses and correspondence are known exactly, which makes every transfer
metric checkable.  The categorical side carries the exact density-ratio
and midpoint-mixture oracles that the learned batch weights are compared
against.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, SupportError

MASS_TOL = 1e-12

PRESET_NAMES = ("srmnist2d", "twoclass-skew", "balanced", "mnist-svhn-like")

_CIRCLE_RADIUS = 4.0
_MODE_SIGMA = 0.25
# Deterministic per-mode affine applied to target mode centers: a global
# rotation plus a mild radius scale cycling with the mode index, so the
# correct transfer is a known non-identity map while each source mode's
# nearest target mode is still its own counterpart.
_TARGET_ROTATION = 2.0 * np.pi * 0.035
_TARGET_SCALES = (1.09, 1.12, 1.15)


@dataclass(frozen=True)
class CategoricalPair:
    """Two strictly positive categorical measures on a shared support.

    ``p_joint[i]`` and ``q_joint[i]`` are the masses both joint measures put
    on the i-th matched pair; each vector sums to one.
    """

    p_joint: np.ndarray
    q_joint: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p_joint, dtype=np.float64)
        q = np.asarray(self.q_joint, dtype=np.float64)
        object.__setattr__(self, "p_joint", p)
        object.__setattr__(self, "q_joint", q)
        if p.ndim != 1 or p.shape != q.shape:
            raise ShapeError(f"mass vectors differ in shape: {p.shape} vs {q.shape}")
        for label, vec in (("p", p), ("q", q)):
            if (vec <= 0.0).any():
                raise SupportError(
                    f"{label} has a non-positive mass entry; the shared-support "
                    "assumption requires every cell to carry mass"
                )
            if abs(vec.sum() - 1.0) > MASS_TOL:
                raise ValueError(f"{label} sums to {vec.sum()!r}, expected 1")

    @property
    def support_size(self):
        return self.p_joint.shape[0]

    def swapped(self):
        return CategoricalPair(self.q_joint, self.p_joint)


def density_ratio_oracle(pair):
    """Exact per-cell density ratio w[i] = q[i] / p[i].

    This is the direction under which reweighting ``p`` by ``(1 + w) / 2``
    lands exactly on the midpoint mixture; its elementwise product with the
    swapped pair's ratio is one.
    """
    if (pair.p_joint <= 0.0).any() or (pair.q_joint <= 0.0).any():
        raise SupportError("density ratio undefined off the shared support")
    return pair.q_joint / pair.p_joint


def midpoint_oracle(pair):
    """Midpoint mixture M = (p + q) / 2, verified against both reweightings.

    Raises if ``p * (1 + w)/2`` or ``q * (1 + 1/w)/2`` strays from M by more
    than 1e-12, which would indicate a support or arithmetic defect.
    """
    w = density_ratio_oracle(pair)
    mid = 0.5 * (pair.p_joint + pair.q_joint)
    from_p = pair.p_joint * 0.5 * (1.0 + w)
    from_q = pair.q_joint * 0.5 * (1.0 + 1.0 / w)
    residual = max(np.abs(from_p - mid).max(), np.abs(from_q - mid).max())
    if residual > 1e-12:
        raise ValueError(f"midpoint identity residual {residual} exceeds 1e-12")
    return mid


@dataclass(frozen=True)
class GaussianMode:
    mass: float
    mean: np.ndarray
    cov: np.ndarray
    label: int

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        if not 0.0 < self.mass <= 1.0:
            raise ValueError(f"mode mass {self.mass} outside (0, 1]")
        if cov.shape != (mean.size, mean.size):
            raise ShapeError(f"cov shape {cov.shape} does not match mean {mean.shape}")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ValueError("covariance must be positive definite") from None
        object.__setattr__(self, "_chol", chol)


@dataclass(frozen=True)
class MixtureDomain:
    """A Gaussian mixture with labeled modes; immutable once built."""

    modes: tuple
    dimension: int

    def __post_init__(self):
        modes = tuple(self.modes)
        object.__setattr__(self, "modes", modes)
        if not modes:
            raise ValueError("a domain needs at least one mode")
        labels = [m.label for m in modes]
        if len(set(labels)) != len(labels):
            raise ValueError(f"mode labels must be unique, got {labels}")
        total = sum(m.mass for m in modes)
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"mode masses sum to {total!r}, expected 1")
        for m in modes:
            if m.mean.size != self.dimension:
                raise ShapeError(
                    f"mode {m.label} has dimension {m.mean.size}, domain says "
                    f"{self.dimension}"
                )

    @property
    def masses(self):
        return np.array([m.mass for m in self.modes])

    @property
    def labels(self):
        return np.array([m.label for m in self.modes], dtype=np.int64)

    @property
    def means(self):
        return np.stack([m.mean for m in self.modes])


@dataclass(frozen=True)
class LabeledBatch:
    """Sampled points with their generating mode labels.

    Labels exist for evaluation and logging only; no training path reads
    them.
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if self.points.ndim != 2 or self.points.shape[0] != self.labels.shape[0]:
            raise ShapeError(
                f"points {self.points.shape} and labels {self.labels.shape} disagree"
            )
        if self.points.shape[0] < 1:
            raise ValueError("a batch holds at least one sample")


@dataclass(frozen=True)
class DomainPair:
    """Source and target mixtures plus the ground-truth mode bijection."""

    source: MixtureDomain
    target: MixtureDomain
    correspondence: dict = field(default_factory=dict)

    def __post_init__(self):
        src = set(self.source.labels.tolist())
        tgt = set(self.target.labels.tolist())
        keys = set(self.correspondence)
        values = set(self.correspondence.values())
        if keys != src or values != tgt or len(values) != len(self.correspondence):
            raise ValueError("correspondence must be a bijection source -> target labels")

    def inverse_correspondence(self):
        return {v: k for k, v in self.correspondence.items()}

    def categorical(self):
        """The pair's mode masses as a CategoricalPair in sorted source-label
        order.

        Cell i couples the i-th source mode with its corresponding target
        mode, so the oracle ratio per cell is (target mass of the partner) /
        (source mass).
        """
        src_mass = {m.label: m.mass for m in self.source.modes}
        tgt_mass = {m.label: m.mass for m in self.target.modes}
        labels = sorted(src_mass)
        p = np.array([src_mass[lbl] for lbl in labels])
        q = np.array([tgt_mass[self.correspondence[lbl]] for lbl in labels])
        return CategoricalPair(p, q)


def sample_batch(domain, m, rng):
    """Draw m points: a mode by mass, then a Gaussian draw within it."""
    if m < 1:
        raise ValueError("batch size must be at least 1")
    idx = rng.choice(len(domain.modes), size=m, p=domain.masses)
    z = rng.standard_normal((m, domain.dimension))
    chols = np.stack([mode._chol for mode in domain.modes])
    means = domain.means
    points = means[idx] + np.einsum("nij,nj->ni", chols[idx], z)
    return LabeledBatch(points=points, labels=domain.labels[idx])


def mixture_density(domain, x):
    """Exact mixture density at a single point."""
    x = np.asarray(x, dtype=np.float64)
    return float(np.exp(mode_log_densities(domain, x[None, :])).sum(axis=1)[0])


def mode_log_densities(domain, points):
    """log(mass_k * N(x; mean_k, cov_k)) for every point and mode.

    Returns an (n, K) array; the evaluation classifier and the mixture
    density are both thin wrappers over it.
    """
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    out = np.empty((n, len(domain.modes)))
    for k, mode in enumerate(domain.modes):
        diff = points - mode.mean
        sol = np.linalg.solve(mode._chol, diff.T)
        maha = (sol * sol).sum(axis=0)
        logdet = 2.0 * np.log(np.diag(mode._chol)).sum()
        lognorm = -0.5 * (domain.dimension * np.log(2.0 * np.pi) + logdet)
        out[:, k] = np.log(mode.mass) + lognorm - 0.5 * maha
    return out


def _circle_means(n_modes):
    angles = 2.0 * np.pi * np.arange(n_modes) / n_modes
    return _CIRCLE_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _target_means(n_modes):
    src = _circle_means(n_modes)
    cos_r, sin_r = np.cos(_TARGET_ROTATION), np.sin(_TARGET_ROTATION)
    rot = np.array([[cos_r, -sin_r], [sin_r, cos_r]])
    scales = np.array([_TARGET_SCALES[k % len(_TARGET_SCALES)] for k in range(n_modes)])
    return scales[:, None] * (src @ rot.T)


def _mixture(masses, means):
    cov = (_MODE_SIGMA ** 2) * np.eye(2)
    modes = tuple(
        GaussianMode(mass=float(mass), mean=mean, cov=cov, label=k)
        for k, (mass, mean) in enumerate(zip(masses, means))
    )
    return MixtureDomain(modes=modes, dimension=2)


def make_preset(name):
    """Build one of the named source/target domain pairs.

    srmnist2d        uniform 10-mode source vs a target whose mode 0 carries
                     half the mass (remaining modes share the rest equally).
    twoclass-skew    two modes with masses [0.26, 0.74] vs [0.9, 0.1].
    balanced         identical uniform masses on both sides.
    mnist-svhn-like  uniform source vs a target with mode 1 at 0.2.

    Target mode centers sit at a deterministic affine perturbation of the
    source centers, so the correct transfer is non-trivial but each source
    mode's nearest target mode is its true counterpart.
    """
    if name == "srmnist2d":
        src_masses = np.full(10, 0.1)
        tgt_masses = np.array([0.5] + [1.0 / 18.0] * 9)
        n = 10
    elif name == "twoclass-skew":
        src_masses = np.array([0.26, 0.74])
        tgt_masses = np.array([0.9, 0.1])
        n = 2
    elif name == "balanced":
        src_masses = np.full(10, 0.1)
        tgt_masses = np.full(10, 0.1)
        n = 10
    elif name == "mnist-svhn-like":
        src_masses = np.full(10, 0.1)
        tgt_masses = np.full(10, 0.8 / 9.0)
        tgt_masses[1] = 0.2
        n = 10
    else:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    source = _mixture(src_masses, _circle_means(n))
    target = _mixture(tgt_masses, _target_means(n))
    return DomainPair(
        source=source, target=target, correspondence={k: k for k in range(n)}
    )


# --- structured-text serialization -------------------------------------------

def domain_to_config(domain):
    return {
        "dimension": domain.dimension,
        "modes": [
            {
                "mass": m.mass,
                "mean": m.mean.tolist(),
                "cov": m.cov.tolist(),
                "label": m.label,
            }
            for m in domain.modes
        ],
    }


def domain_from_config(cfg):
    modes = tuple(
        GaussianMode(
            mass=m["mass"],
            mean=np.array(m["mean"]),
            cov=np.array(m["cov"]),
            label=int(m["label"]),
        )
        for m in cfg["modes"]
    )
    return MixtureDomain(modes=modes, dimension=int(cfg["dimension"]))


def pair_to_config(pair):
    return {
        "source": domain_to_config(pair.source),
        "target": domain_to_config(pair.target),
        "correspondence": {str(k): v for k, v in pair.correspondence.items()},
    }


def pair_from_config(cfg):
    return DomainPair(
        source=domain_from_config(cfg["source"]),
        target=domain_from_config(cfg["target"]),
        correspondence={int(k): int(v) for k, v in cfg["correspondence"].items()},
    )
