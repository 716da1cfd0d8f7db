"""Quantitative evaluation of trained transfer runs: mode-matching accuracy,
pushforward mode masses, weight-trajectory smoothing, midpoint-match error,
mode-level cycle consistency, and fixed-noise sweeps.

Everything here is read-only over a frozen TrainState; labels are used only
to score, never to train.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .domains import mode_log_densities, sample_batch

DEFAULT_SMOOTHING = 0.99
DEFAULT_N_EVAL = 10000


def mode_assign(x, domain):
    """Label of the mode with the highest posterior mass at a single point.

    Ties resolve to the lowest label.
    """
    return int(assign_modes(np.asarray(x, dtype=np.float64)[None, :], domain)[0])


def assign_modes(points, domain):
    """Vectorized mode_assign over an (n, D) matrix."""
    labels = domain.labels
    order = np.argsort(labels, kind="stable")
    scores = mode_log_densities(domain, points)[:, order]
    return labels[order][np.argmax(scores, axis=1)]


def transfer_points(state, points, direction, rng):
    """Apply a trained generator to raw points with fresh bounded noise."""
    gen = state.networks["gen_xy" if direction == "xy" else "gen_yx"]
    z = rng.uniform(-1.0, 1.0, size=(points.shape[0], gen.config.noise_dim))
    return gen.forward(ad.constant(points), ad.constant(z)).data


def transfer_accuracy(state, pair, n, rng, direction="xy"):
    """Fraction of transferred samples landing in the corresponding mode."""
    if direction == "xy":
        src, dst = pair.source, pair.target
        mapping = pair.correspondence
    else:
        src, dst = pair.target, pair.source
        mapping = pair.inverse_correspondence()
    batch = sample_batch(src, n, rng)
    moved = transfer_points(state, batch.points, direction, rng)
    assigned = assign_modes(moved, dst)
    wanted = np.array([mapping[int(l)] for l in batch.labels])
    return float((assigned == wanted).mean())


def pushforward_masses(state, domain, target_domain, n, rng, direction="xy"):
    """Empirical per-mode frequencies of transferred samples.

    Returned in sorted target-label order; always sums to one.
    """
    batch = sample_batch(domain, n, rng)
    moved = transfer_points(state, batch.points, direction, rng)
    assigned = assign_modes(moved, target_domain)
    labels = np.sort(target_domain.labels)
    return np.array([(assigned == l).mean() for l in labels])


def cycle_mode_consistency(state, pair, n, rng, direction="yx"):
    """Fraction of round-trip samples keeping their original mode label.

    The default direction follows real target-side samples through
    gen_yx then gen_xy back into the target domain.
    """
    if direction == "yx":
        domain = pair.target
        first, second = "yx", "xy"
    else:
        domain = pair.source
        first, second = "xy", "yx"
    batch = sample_batch(domain, n, rng)
    out = transfer_points(state, batch.points, first, rng)
    back = transfer_points(state, out, second, rng)
    assigned = assign_modes(back, domain)
    return float((assigned == batch.labels).mean())


def ema(series, smoothing):
    """Exponential moving average, seeded at the first value.

    NaN entries (a mode missing from a logged batch) carry the previous
    smoothed value forward.
    """
    if len(series) == 0:
        raise ValueError("cannot smooth an empty series")
    if not 0.0 < smoothing < 1.0:
        raise ValueError("smoothing must lie in (0, 1)")
    out = np.empty(len(series))
    current = np.nan
    for i, value in enumerate(series):
        if np.isnan(current):
            current = value
        elif not np.isnan(value):
            current = smoothing * current + (1.0 - smoothing) * value
        out[i] = current
    return out


def weight_trajectories(log, smoothing=DEFAULT_SMOOTHING):
    """Smoothed per-mode weight series from a run log.

    Returns (steps, {column_name: smoothed array}) over every per-mode
    column (raw means and combined-weight shares, both domains).
    """
    if log.n_rows == 0:
        raise ValueError("run log is empty")
    steps = log.steps()
    series = {}
    for column in log.columns:
        if column.split("_mode_")[0] in ("wx", "wy", "mx", "my"):
            series[column] = ema(log.column(column), smoothing)
    return steps, series


def midpoint_match_error(log, pair, smoothing=DEFAULT_SMOOTHING):
    """Distance of the run's combined per-mode weights from the midpoint mixture.

    Compares the final smoothed combined-weight share of every mode with
    (source mass + corresponding target mass) / 2, on both sides; returns
    the sum of the two per-side maxima.
    """
    cat = pair.categorical()
    mid = 0.5 * (cat.p_joint + cat.q_joint)
    src_labels = sorted(pair.source.labels.tolist())
    tgt_labels = sorted(pair.target.labels.tolist())
    src_index = {l: i for i, l in enumerate(src_labels)}
    _, series = weight_trajectories(log, smoothing)
    err_x = max(
        abs(series[f"mx_mode_{l}"][-1] - mid[src_index[l]]) for l in src_labels
    )
    inverse = pair.inverse_correspondence()
    err_y = max(
        abs(series[f"my_mode_{l}"][-1] - mid[src_index[inverse[l]]]) for l in tgt_labels
    )
    return float(err_x + err_y)


def fixed_noise_sweep(state, domain, k_noise, k_source, rng, direction="xy"):
    """Grid of transferred points: one row per source sample, one column per
    shared noise vector.

    Returns (grid [k_source, k_noise, D], source points, source labels).
    """
    gen = state.networks["gen_xy" if direction == "xy" else "gen_yx"]
    batch = sample_batch(domain, k_source, rng)
    noises = rng.uniform(-1.0, 1.0, size=(k_noise, gen.config.noise_dim))
    grid = np.empty((k_source, k_noise, domain.dimension))
    for j in range(k_noise):
        z = np.repeat(noises[j][None, :], k_source, axis=0)
        grid[:, j, :] = gen.forward(ad.constant(batch.points), ad.constant(z)).data
    return grid, batch.points, batch.labels


@dataclass
class EvalReport:
    """Summary metrics for one trained run.

    Directional fields are NaN when the run has no generator for that
    direction (one-sided training).  Mass vectors are in sorted label order
    of the receiving domain.
    """

    transfer_accuracy_xy: float
    transfer_accuracy_yx: float
    pushforward_masses_xy: list
    pushforward_masses_yx: list
    midpoint_error: float
    cycle_mode_consistency: float
    cycle_mode_consistency_xy: float
    n_eval: int

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


def evaluate_state(state, pair=None, n_eval=DEFAULT_N_EVAL, rng=None, log=None,
                   smoothing=DEFAULT_SMOOTHING):
    """Compute the full EvalReport for a trained state."""
    if pair is None:
        pair = state.pair
    if rng is None:
        rng = state.streams.get("eval")
    two_sided = "gen_yx" in state.networks
    acc_xy = transfer_accuracy(state, pair, n_eval, rng, "xy")
    masses_xy = pushforward_masses(state, pair.source, pair.target, n_eval, rng, "xy")
    if two_sided:
        acc_yx = transfer_accuracy(state, pair, n_eval, rng, "yx")
        masses_yx = pushforward_masses(state, pair.target, pair.source, n_eval, rng, "yx")
        cyc = cycle_mode_consistency(state, pair, n_eval, rng, "yx")
        cyc_xy = cycle_mode_consistency(state, pair, n_eval, rng, "xy")
    else:
        acc_yx = float("nan")
        masses_yx = np.array([])
        cyc = float("nan")
        cyc_xy = float("nan")
    if log is not None and log.n_rows > 0 and log.src_labels:
        mid_err = midpoint_match_error(log, pair, smoothing)
    else:
        mid_err = float("nan")
    return EvalReport(
        transfer_accuracy_xy=acc_xy,
        transfer_accuracy_yx=acc_yx,
        pushforward_masses_xy=masses_xy.tolist(),
        pushforward_masses_yx=masses_yx.tolist(),
        midpoint_error=mid_err,
        cycle_mode_consistency=cyc,
        cycle_mode_consistency_xy=cyc_xy,
        n_eval=n_eval,
    )
