"""Training procedures: one-sided batch weighting, two-sided batch weighting
through a joint discriminator, the unweighted Wasserstein baseline, and the
cycle-consistency baseline.

Every run is a deterministic function of (config, seed): batches, noise and
initialization come from named RNG streams, updates follow a fixed order,
and the whole mutable state (parameters, optimizer moments, power-iteration
vectors, RNG positions, step counter) round-trips through checkpoints
bit-exactly.
"""

import os

import numpy as np

from . import autodiff as ad
from . import nets as net_mod
from .config import config_to_dict
from .domains import make_preset, pair_from_config, sample_batch
from .errors import ConfigError, ShapeError, TrainingAborted
from .rng import RngStreams
from .weighting import (
    ClipSchedule,
    batch_softmax,
    clip_weights,
    compose_weights,
    midpoint_factor,
    uniform_weights,
)

ALGORITHMS = ("one_sided", "jd_bw", "wgan_baseline", "cycle_baseline")

CHECKPOINT_DIRNAME = "checkpoints"
RUNLOG_FILENAME = "runlog.csv"


class DomainBatchSource:
    """Draws labeled batches from a mixture domain with its own stream."""

    def __init__(self, domain, rng):
        self.domain = domain
        self.rng = rng

    @property
    def dimension(self):
        return self.domain.dimension

    @property
    def label_set(self):
        return sorted(self.domain.labels.tolist())

    def sample(self, m):
        batch = sample_batch(self.domain, m, self.rng)
        return batch.points, batch.labels


class ArrayBatchSource:
    """Resamples rows of a fixed data matrix (no labels available)."""

    def __init__(self, array, rng):
        self.array = np.asarray(array, dtype=np.float64)
        if self.array.ndim != 2:
            raise ShapeError(f"expected a 2-d sample matrix, got {self.array.shape}")
        self.rng = rng

    @property
    def dimension(self):
        return self.array.shape[1]

    @property
    def label_set(self):
        return []

    def sample(self, m):
        idx = self.rng.integers(0, self.array.shape[0], size=m)
        return self.array[idx], None


class RunLog:
    """Per-logged-step records of losses and per-mode batch-weight stats.

    For every mode label the log carries the mean raw weight over that
    mode's batch members (``wx_mode_*`` / ``wy_mode_*``, NaN when the mode
    missed the batch) and the mode's share of the batch's total effective
    loss multiplier (``mx_mode_*`` / ``my_mode_*``) — the per-class combined
    batch weight whose trajectories the weight-dynamics analysis consumes.
    """

    def __init__(self, src_labels=(), tgt_labels=()):
        self.src_labels = list(src_labels)
        self.tgt_labels = list(tgt_labels)
        self.columns = ["step", "loss_minus", "loss_plus", "disc_gap"]
        self.columns += [f"wx_mode_{k}" for k in self.src_labels]
        self.columns += [f"wy_mode_{k}" for k in self.tgt_labels]
        self.columns += [f"mx_mode_{k}" for k in self.src_labels]
        self.columns += [f"my_mode_{k}" for k in self.tgt_labels]
        self.columns += ["clip_bound"]
        self.rows = []

    def append(self, step, loss_minus, loss_plus, disc_gap,
               wx, wy, mx, my, clip_bound):
        row = [float(step), loss_minus, loss_plus, disc_gap]
        row += [wx.get(k, float("nan")) for k in self.src_labels]
        row += [wy.get(k, float("nan")) for k in self.tgt_labels]
        row += [mx.get(k, float("nan")) for k in self.src_labels]
        row += [my.get(k, float("nan")) for k in self.tgt_labels]
        row += [clip_bound]
        self.rows.append(row)

    @property
    def n_rows(self):
        return len(self.rows)

    def column(self, name):
        idx = self.columns.index(name)
        return np.array([row[idx] for row in self.rows])

    def steps(self):
        return self.column("step").astype(int)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(",".join(self.columns) + "\n")
            for row in self.rows:
                fh.write(",".join(_format_cell(c, v) for c, v in zip(self.columns, row)))
                fh.write("\n")

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            header = fh.readline().strip()
            if not header:
                raise ValueError(f"{path} has no header row")
            log = cls.__new__(cls)
            log.columns = header.split(",")
            log.src_labels = [c[len("wx_mode_"):] for c in log.columns if c.startswith("wx_mode_")]
            log.tgt_labels = [c[len("wy_mode_"):] for c in log.columns if c.startswith("wy_mode_")]
            log.rows = []
            for line in fh:
                line = line.strip()
                if line:
                    log.rows.append([float(v) for v in line.split(",")])
        return log


def _format_cell(column, value):
    if column == "step":
        return str(int(value))
    return repr(float(value))


def _per_mode_weight_stats(raw, multipliers, labels, label_list):
    """Mean raw weight and effective-multiplier share per mode label."""
    means, shares = {}, {}
    if labels is None or not label_list:
        return means, shares
    raw = raw.ravel()
    mult = multipliers.ravel()
    total = mult.sum()
    for lbl in label_list:
        members = labels == lbl
        count = int(members.sum())
        means[lbl] = float(raw[members].mean()) if count else float("nan")
        shares[lbl] = float(mult[members].sum() / total) if total > 0 else float("nan")
    return means, shares


class TrainState:
    """All mutable training state: networks, optimizers, RNG, step counter."""

    def __init__(self, config, pair, sources, streams, networks, adam, weighted):
        self.config = config
        self.pair = pair
        self.src, self.tgt = sources
        self.streams = streams
        self.networks = networks          # ordered dict-like: name -> net
        self.net_order = list(networks)
        self.adam = adam
        self.weighted = weighted
        self.step = 0
        self.freeze = frozenset(config.train.freeze)
        self.clip_schedule = ClipSchedule(
            initial_ratio_bound=config.weight.clip_ratio,
            relax_factor=config.weight.relax_factor,
            relax_every=config.weight.relax_every,
        )
        self._slices = {}
        offset = 0
        for name in self.net_order:
            size = sum(t.data.size for _, t in networks[name].parameters())
            self._slices[name] = slice(offset, offset + size)
            offset += size

    def all_params(self):
        out = []
        for name in self.net_order:
            out.extend(self.networks[name].parameters())
        return out

    def net_slice(self, name):
        return self._slices[name]

    def net_param_vector(self, name):
        return np.concatenate(
            [t.data.ravel() for _, t in self.networks[name].parameters()]
        )

    def set_net_param_vector(self, name, flat):
        offset = 0
        for _, t in self.networks[name].parameters():
            size = t.data.size
            t.data = flat[offset:offset + size].reshape(t.data.shape)
            offset += size

    def weight_net_names(self):
        return [n for n in self.net_order if n.startswith("wnet")]

    def param_names(self, *net_names):
        out = []
        for name in net_names:
            out.extend(p for p, _ in self.networks[name].parameters())
        return out

    def spectral_step_all(self):
        for net in self.networks.values():
            net.spectral_step(1)

    def noise(self, stream, m):
        return self.streams.get(stream).uniform(-1.0, 1.0, size=(m, self.config.nets.noise_dim))


def _adam_for(net, lr, beta1=0.5, beta2=0.999):
    slices = []
    offset = 0
    for pname, t in net.parameters():
        slices.append((pname, slice(offset, offset + t.data.size)))
        offset += t.data.size
    return ad.AdamState(offset, lr=lr, beta1=beta1, beta2=beta2, param_slices=slices)


def resolve_pair(config):
    if config.domain is not None:
        return pair_from_config(config.domain)
    return make_preset(config.preset)


def build_state(config, pair=None, sources=None):
    """Construct networks, optimizers and RNG streams for one run."""
    config.validate()
    if config.algorithm not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {config.algorithm!r}")
    streams = RngStreams(config.seed)
    if sources is None:
        if pair is None:
            pair = resolve_pair(config)
        sources = (
            DomainBatchSource(pair.source, streams.get("data-x")),
            DomainBatchSource(pair.target, streams.get("data-y")),
        )
    dim = sources[0].dimension
    if sources[1].dimension != dim:
        raise ShapeError("source and target dimensions differ")
    nc = config.nets
    init = streams.get("init")
    gen_cfg = net_mod.GeneratorConfig(
        data_dim=dim, noise_dim=nc.noise_dim,
        hidden_width=nc.gen_hidden, n_residual_blocks=nc.gen_blocks,
    )
    networks = {}
    networks["gen_xy"] = net_mod.Generator("gen_xy", gen_cfg, init)
    algo = config.algorithm
    if algo != "one_sided":
        networks["gen_yx"] = net_mod.Generator("gen_yx", gen_cfg, init)
    if algo in ("jd_bw", "wgan_baseline"):
        networks["disc"] = net_mod.JointDiscriminator(
            "disc",
            net_mod.JointDiscConfig(
                data_dim=dim, branch_width=nc.joint_branch,
                trunk_width=nc.joint_trunk, n_layers=nc.joint_layers,
            ),
            init,
        )
    elif algo == "one_sided":
        networks["disc"] = net_mod.MarginalDiscriminator(
            "disc",
            net_mod.MarginalDiscConfig(
                data_dim=dim, width=nc.marginal_width, n_layers=nc.marginal_layers
            ),
            init,
        )
    else:
        for name in ("disc_x", "disc_y"):
            networks[name] = net_mod.MarginalDiscriminator(
                name,
                net_mod.MarginalDiscConfig(
                    data_dim=dim, width=nc.marginal_width, n_layers=nc.marginal_layers
                ),
                init,
            )
    weighted = algo in ("one_sided", "jd_bw")
    if weighted:
        wcfg = net_mod.WeightNetConfig(
            data_dim=dim, width=nc.weight_width, n_layers=nc.weight_layers
        )
        strategy = config.weight.strategy
        if strategy == "composite":
            networks["wnet_x"] = net_mod.WeightNet("wnet_x", wcfg, init)
            networks["wnet_y"] = net_mod.WeightNet("wnet_y", wcfg, init)
        elif strategy == "concat":
            pair_cfg = net_mod.WeightNetConfig(
                data_dim=2 * dim, width=nc.weight_width, n_layers=nc.weight_layers
            )
            networks["wnet"] = net_mod.WeightNet("wnet", pair_cfg, init)
        else:
            networks["wnet"] = net_mod.WeightNet("wnet", wcfg, init)
        if config.weight.zero_init:
            for name in networks:
                if name.startswith("wnet"):
                    networks[name].zero_()
    adam = {}
    for name, net in networks.items():
        if name.startswith("gen"):
            lr = config.train.lr_g
        elif name.startswith("disc"):
            lr = config.train.lr_d
        else:
            lr = config.train.lr_w
        adam[name] = _adam_for(net, lr)
    return TrainState(config, pair, sources, streams, networks, adam,
                      weighted=(algo == "jd_bw"))


def _check_finite(step, value, name):
    if not np.isfinite(value):
        raise TrainingAborted(step, name)


def _update(state, name, grad_segment, ascent=False):
    vec = state.net_param_vector(name)
    grads = -grad_segment if ascent else grad_segment
    state.set_net_param_vector(name, ad.adam_step(state.adam[name], vec, grads))


# --- loss graph builders ------------------------------------------------------

def _joint_graph(state, x, y, zx, zy, step, extras):
    """Two-sided loss: gap between the weighted x-side and y-side pair scores.

    The discriminator scores both sides' pairs in one stacked call; the gap
    is the stacked scores against (f_x, -f_y) factors.  The separate loss
    values land in `extras` as raw numbers for logging.
    """
    cfg = state.config
    m = x.shape[0]
    xt, yt = ad.constant(x, "x"), ad.constant(y, "y")
    zxt, zyt = ad.constant(zx, "zx"), ad.constant(zy, "zy")

    def fn(xt, yt, zxt, zyt):
        gx = state.networks["gen_xy"].forward(xt, zxt)
        gy = state.networks["gen_yx"].forward(yt, zyt)
        if state.weighted:
            w_x, w_y = compose_weights(cfg.weight.strategy, state.networks,
                                       xt, gx, yt, gy)
            w_x = clip_weights(w_x, state.clip_schedule, step)
            w_y = clip_weights(w_y, state.clip_schedule, step)
        else:
            w_x = uniform_weights(m)
            w_y = uniform_weights(m)
        f_x = midpoint_factor(w_x)
        f_y = midpoint_factor(w_y)
        scores = state.networks["disc"].forward(
            ad.concat([xt, gy], axis=0), ad.concat([gx, yt], axis=0)
        )
        factors = ad.concat([f_x, ad.scale(f_y, -1.0)], axis=0)
        gap = ad.tensor_sum(ad.mul(scores, factors))
        loss_minus = float((scores.data[:m] * f_x.data).sum())
        loss_plus = float((scores.data[m:] * f_y.data).sum())
        extras.update(loss_minus=loss_minus, loss_plus=loss_plus,
                      w_x=w_x, w_y=w_y, f_x=f_x, f_y=f_y)
        return gap

    graph = ad.ParameterGraph(state.all_params(), fn)
    graph.forward(xt, yt, zxt, zyt)
    return graph


def _one_sided_graph(state, x, y, zx, step, output, extras):
    """One-sided loss: weighted generated-side score vs 1/m-weighted targets."""
    m = x.shape[0]
    xt, yt = ad.constant(x, "x"), ad.constant(y, "y")
    zxt = ad.constant(zx, "zx")

    def fn(xt, yt, zxt):
        gx = state.networks["gen_xy"].forward(xt, zxt)
        w = batch_softmax(state.networks["wnet"].forward(xt), "sum_one")
        w = clip_weights(w, state.clip_schedule, step)
        scores = state.networks["disc"].forward(ad.concat([gx, yt], axis=0))
        extras["loss_minus"] = float((scores.data[:m] * w.values).sum())
        extras["loss_plus"] = float(scores.data[m:].mean())
        extras["w"] = w
        if output == "loss_minus":
            return ad.tensor_sum(ad.mul(ad.slice_rows(scores, 0, m), w.tensor))
        factors = ad.concat(
            [w.tensor, ad.constant(np.full((m, 1), -1.0 / m))], axis=0
        )
        return ad.tensor_sum(ad.mul(scores, factors))

    graph = ad.ParameterGraph(state.all_params(), fn)
    graph.forward(xt, yt, zxt)
    return graph


def _cycle_gen_graph(state, x, y, zx, zy, zcx, zcy, extras):
    cfg = state.config.cycle
    xt, yt = ad.constant(x, "x"), ad.constant(y, "y")
    zs = [ad.constant(z) for z in (zx, zy, zcx, zcy)]

    def fn(xt, yt, zxt, zyt, zcxt, zcyt):
        gen_xy, gen_yx = state.networks["gen_xy"], state.networks["gen_yx"]
        gx = gen_xy.forward(xt, zxt)
        gy = gen_yx.forward(yt, zyt)
        back_x = gen_yx.forward(gx, zcxt)
        back_y = gen_xy.forward(gy, zcyt)
        adv = ad.add(
            ad.tensor_mean(state.networks["disc_y"].forward(gx)),
            ad.tensor_mean(state.networks["disc_x"].forward(gy)),
        )
        rec = ad.add(_mean_l1(back_x, xt), _mean_l1(back_y, yt))
        extras.update(adv=adv, rec=rec)
        return ad.add(ad.scale(adv, cfg.adv_weight), ad.scale(rec, cfg.cycle_weight))

    graph = ad.ParameterGraph(state.all_params(), fn)
    graph.forward(xt, yt, *zs)
    return graph


def _cycle_disc_graph(state, x, y, zx, zy):
    xt, yt = ad.constant(x, "x"), ad.constant(y, "y")
    zxt, zyt = ad.constant(zx), ad.constant(zy)

    def fn(xt, yt, zxt, zyt):
        gx = state.networks["gen_xy"].forward(xt, zxt)
        gy = state.networks["gen_yx"].forward(yt, zyt)
        disc_x, disc_y = state.networks["disc_x"], state.networks["disc_y"]
        gap_y = ad.sub(ad.tensor_mean(disc_y.forward(gx)), ad.tensor_mean(disc_y.forward(yt)))
        gap_x = ad.sub(ad.tensor_mean(disc_x.forward(gy)), ad.tensor_mean(disc_x.forward(xt)))
        return ad.add(gap_y, gap_x)

    graph = ad.ParameterGraph(state.all_params(), fn)
    graph.forward(xt, yt, zxt, zyt)
    return graph


def _mean_l1(a, b):
    return ad.tensor_mean(ad.tensor_sum(ad.absolute(ad.sub(a, b)), axis=1))


# --- run drivers ----------------------------------------------------------------

class _RunContext:
    """File-output plumbing shared by all drivers."""

    def __init__(self, state, out_dir, eval_hook):
        self.state = state
        self.out_dir = out_dir
        self.eval_hook = eval_hook
        if out_dir is not None:
            os.makedirs(os.path.join(out_dir, CHECKPOINT_DIRNAME), exist_ok=True)

    def maybe_checkpoint(self, step):
        every = self.state.config.train.checkpoint_every
        if self.out_dir is not None and every > 0 and step % every == 0:
            path = os.path.join(self.out_dir, CHECKPOINT_DIRNAME, f"step_{step:08d}.ckpt")
            save_state(self.state, path)

    def maybe_eval(self, step):
        every = self.state.config.eval.eval_every
        if self.eval_hook is not None and every > 0 and step % every == 0:
            self.eval_hook(self.state, step)

    def finalize(self, log):
        if self.out_dir is not None:
            log.to_csv(os.path.join(self.out_dir, RUNLOG_FILENAME))
            save_state(self.state, os.path.join(self.out_dir, CHECKPOINT_DIRNAME, "final.ckpt"))


def _log_step(state, log, step, loss_minus, loss_plus, disc_gap,
              raw_x, mult_x, labels_x, raw_y, mult_y, labels_y):
    wx, mx = _per_mode_weight_stats(raw_x, mult_x, labels_x, log.src_labels)
    wy, my = _per_mode_weight_stats(raw_y, mult_y, labels_y, log.tgt_labels)
    log.append(step, loss_minus, loss_plus, disc_gap, wx, wy, mx, my,
               state.clip_schedule.bound(step))


def _run_joint(state, log, ctx):
    tr = state.config.train
    train_g = "generator" not in state.freeze
    train_d = "discriminator" not in state.freeze
    train_w = state.weighted and "weights" not in state.freeze
    for step in range(state.step + 1, tr.n_steps + 1):
        state.spectral_step_all()
        x, labels_x = state.src.sample(tr.m)
        y, labels_y = state.tgt.sample(tr.m)
        zx = state.noise("noise-x", tr.m)
        zy = state.noise("noise-y", tr.m)
        extras = {}
        graph = _joint_graph(state, x, y, zx, zy, step, extras)
        lm = extras["loss_minus"]
        lp = extras["loss_plus"]
        _check_finite(step, lm, "loss_minus")
        _check_finite(step, lp, "loss_plus")
        grad = graph.backward(np.ones(()))
        if train_g:
            _update(state, "gen_xy", grad[state.net_slice("gen_xy")])
            _update(state, "gen_yx", grad[state.net_slice("gen_yx")])
        if train_w:
            scale = 2.0 * float(graph.output.data)
            for name in state.weight_net_names():
                _update(state, name, scale * grad[state.net_slice(name)])
        disc_gap = lm - lp
        disc_params = state.param_names("disc")
        if train_d:
            for _ in range(tr.d_steps):
                state.networks["disc"].spectral_step(1)
                xd, _ = state.src.sample(tr.m)
                yd, _ = state.tgt.sample(tr.m)
                zxd = state.noise("noise-x", tr.m)
                zyd = state.noise("noise-y", tr.m)
                extras_d = {}
                graph_d = _joint_graph(state, xd, yd, zxd, zyd, step, extras_d)
                _check_finite(step, extras_d["loss_minus"], "loss_minus")
                _check_finite(step, extras_d["loss_plus"], "loss_plus")
                grad_d = graph_d.backward(np.ones(()), wrt=disc_params)
                _update(state, "disc", grad_d[state.net_slice("disc")], ascent=True)
                disc_gap = extras_d["loss_minus"] - extras_d["loss_plus"]
        state.step = step
        if step % tr.log_every == 0:
            _log_step(state, log, step, lm, lp, disc_gap,
                      extras["w_x"].values, extras["f_x"].data, labels_x,
                      extras["w_y"].values, extras["f_y"].data, labels_y)
        ctx.maybe_checkpoint(step)
        ctx.maybe_eval(step)


def _run_one_sided(state, log, ctx):
    tr = state.config.train
    m = tr.m
    train_g = "generator" not in state.freeze
    train_d = "discriminator" not in state.freeze
    train_w = "weights" not in state.freeze
    for step in range(state.step + 1, tr.n_steps + 1):
        state.spectral_step_all()
        x, labels_x = state.src.sample(m)
        y, labels_y = state.tgt.sample(m)
        zx = state.noise("noise-x", m)
        extras = {}
        graph = _one_sided_graph(state, x, y, zx, step, "loss_minus", extras)
        lm = extras["loss_minus"]
        lp = extras["loss_plus"]
        _check_finite(step, lm, "loss_minus")
        _check_finite(step, lp, "loss_plus")
        grad = graph.backward(np.ones(()))
        if train_g:
            _update(state, "gen_xy", grad[state.net_slice("gen_xy")])
        if train_w:
            _update(state, "wnet", 2.0 * (lm - lp) * grad[state.net_slice("wnet")])
        disc_gap = lm - lp
        disc_params = state.param_names("disc")
        if train_d:
            for _ in range(tr.d_steps):
                state.networks["disc"].spectral_step(1)
                xd, _ = state.src.sample(m)
                yd, _ = state.tgt.sample(m)
                zxd = state.noise("noise-x", m)
                extras_d = {}
                graph_d = _one_sided_graph(state, xd, yd, zxd, step, "gap", extras_d)
                _check_finite(step, extras_d["loss_minus"], "loss_minus")
                _check_finite(step, extras_d["loss_plus"], "loss_plus")
                grad_d = graph_d.backward(np.ones(()), wrt=disc_params)
                _update(state, "disc", grad_d[state.net_slice("disc")], ascent=True)
                disc_gap = extras_d["loss_minus"] - extras_d["loss_plus"]
        state.step = step
        if step % tr.log_every == 0:
            # mean-one scale for comparability across conventions
            raw = extras["w"].values * m
            uniform = np.ones((m, 1))
            _log_step(state, log, step, lm, lp, disc_gap,
                      raw, raw, labels_x, uniform, uniform, labels_y)
        ctx.maybe_checkpoint(step)
        ctx.maybe_eval(step)


def _run_cycle(state, log, ctx):
    tr = state.config.train
    m = tr.m
    train_g = "generator" not in state.freeze
    train_d = "discriminator" not in state.freeze
    uniform = np.ones((m, 1))
    for step in range(state.step + 1, tr.n_steps + 1):
        state.spectral_step_all()
        x, labels_x = state.src.sample(m)
        y, labels_y = state.tgt.sample(m)
        zx = state.noise("noise-x", m)
        zy = state.noise("noise-y", m)
        zcx = state.noise("noise-y", m)
        zcy = state.noise("noise-x", m)
        extras = {}
        graph = _cycle_gen_graph(state, x, y, zx, zy, zcx, zcy, extras)
        adv = float(extras["adv"].data)
        rec = float(extras["rec"].data)
        _check_finite(step, adv, "adversarial_loss")
        _check_finite(step, rec, "cycle_loss")
        grad = graph.backward(np.ones(()))
        if train_g:
            _update(state, "gen_xy", grad[state.net_slice("gen_xy")])
            _update(state, "gen_yx", grad[state.net_slice("gen_yx")])
        disc_gap = float("nan")
        if train_d:
            for _ in range(tr.d_steps):
                state.networks["disc_x"].spectral_step(1)
                state.networks["disc_y"].spectral_step(1)
                xd, _ = state.src.sample(m)
                yd, _ = state.tgt.sample(m)
                zxd = state.noise("noise-x", m)
                zyd = state.noise("noise-y", m)
                graph_d = _cycle_disc_graph(state, xd, yd, zxd, zyd)
                gap = float(graph_d.output.data)
                _check_finite(step, gap, "disc_gap")
                grad_d = graph_d.backward(
                    np.ones(()), wrt=state.param_names("disc_x", "disc_y"))
                _update(state, "disc_x", grad_d[state.net_slice("disc_x")], ascent=True)
                _update(state, "disc_y", grad_d[state.net_slice("disc_y")], ascent=True)
                disc_gap = gap
        state.step = step
        if step % tr.log_every == 0:
            _log_step(state, log, step,
                      adv, state.config.cycle.cycle_weight * rec, disc_gap,
                      uniform, uniform, labels_x, uniform, uniform, labels_y)
        ctx.maybe_checkpoint(step)
        ctx.maybe_eval(step)


_DRIVERS = {
    "one_sided": _run_one_sided,
    "jd_bw": _run_joint,
    "wgan_baseline": _run_joint,
    "cycle_baseline": _run_cycle,
}


def train(config, pair=None, sources=None, out_dir=None, resume_from=None,
          eval_hook=None):
    """Run the configured algorithm; returns (TrainState, RunLog).

    With `out_dir` set, the run log, periodic checkpoints and a final
    checkpoint are written there (also on a non-finite-loss abort, before
    the exception propagates).  `resume_from` restores a checkpoint and
    continues the exact trajectory.
    """
    state = build_state(config, pair=pair, sources=sources)
    if resume_from is not None:
        load_state(state, resume_from)
    log = RunLog(state.src.label_set, state.tgt.label_set)
    ctx = _RunContext(state, out_dir, eval_hook)
    try:
        _DRIVERS[config.algorithm](state, log, ctx)
    finally:
        ctx.finalize(log)
    return state, log


def train_one_sided(config, **kwargs):
    if config.algorithm != "one_sided":
        raise ConfigError("config.algorithm must be 'one_sided'")
    return train(config, **kwargs)


def train_jd_bw(config, **kwargs):
    if config.algorithm != "jd_bw":
        raise ConfigError("config.algorithm must be 'jd_bw'")
    return train(config, **kwargs)


def train_wgan_baseline(config, **kwargs):
    if config.algorithm != "wgan_baseline":
        raise ConfigError("config.algorithm must be 'wgan_baseline'")
    return train(config, **kwargs)


def train_cycle_baseline(config, **kwargs):
    if config.algorithm != "cycle_baseline":
        raise ConfigError("config.algorithm must be 'cycle_baseline'")
    return train(config, **kwargs)


# --- checkpointing ----------------------------------------------------------------

def state_tensors(state):
    out = {}
    for name, tensor in state.all_params():
        out[f"param.{name}"] = tensor.data
    for net_name in state.net_order:
        adam = state.adam[net_name]
        out[f"adam.{net_name}.first_moment"] = adam.first_moment
        out[f"adam.{net_name}.second_moment"] = adam.second_moment
    for net_name in state.net_order:
        for layer_name, ss in state.networks[net_name].spectral_states():
            out[f"sn.{layer_name}.u"] = ss.u
            if ss.v is not None:
                out[f"sn.{layer_name}.v"] = ss.v
    return out


def save_state(state, path):
    meta = {
        "algorithm": state.config.algorithm,
        "adam_steps": {name: state.adam[name].step_count for name in state.net_order},
        "config": config_to_dict(state.config),
    }
    ad.save_checkpoint(path, state_tensors(state), step_count=state.step,
                       rng_state=state.streams.state(), meta=meta)


def load_state(state, path):
    """Restore a checkpoint into a freshly built state, verifying shapes."""
    tensors, header = ad.load_checkpoint(path)
    for name, tensor in state.all_params():
        key = f"param.{name}"
        if key not in tensors:
            raise ShapeError(f"checkpoint is missing tensor {key}")
        if tensors[key].shape != tensor.data.shape:
            raise ShapeError(
                f"checkpoint tensor {key} has shape {tensors[key].shape}, "
                f"expected {tensor.data.shape}"
            )
        tensor.data = tensors[key]
    for net_name in state.net_order:
        adam = state.adam[net_name]
        adam.first_moment = tensors[f"adam.{net_name}.first_moment"]
        adam.second_moment = tensors[f"adam.{net_name}.second_moment"]
        adam.step_count = int(header["meta"]["adam_steps"][net_name])
        for layer_name, ss in state.networks[net_name].spectral_states():
            ss.u = tensors[f"sn.{layer_name}.u"]
            vkey = f"sn.{layer_name}.v"
            if vkey in tensors:
                ss.v = tensors[vkey]
    state.streams.set_state(header["rng_state"])
    state.step = int(header["step_count"])
    return state
