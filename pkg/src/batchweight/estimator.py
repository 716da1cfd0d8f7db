"""Scikit-learn style front end for unpaired domain transfer.

`DomainTransfer` hides the preset/config machinery: fit on two sample
matrices (one per domain), then `transform` carries points from the source
domain to the target domain and `inverse_transform` goes the other way.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import autodiff as ad
from .config import ExperimentConfig
from .training import ArrayBatchSource, train
from .rng import RngStreams


class DomainTransfer(TransformerMixin, BaseEstimator):
    """Unpaired domain transfer trained adversarially with batch weights.

    Parameters
    ----------
    algorithm : {"jd_bw", "wgan_baseline", "cycle_baseline", "one_sided"}
        Training procedure.  The default trains two generators against a
        joint discriminator with two-sided batch weighting, which tolerates
        mode-mass imbalance between the domains.
    n_steps : int
        Generator steps.
    batch_size : int
        Minibatch size per domain per step.
    weight_strategy : {"composite", "concat", "one_sided"}
        How weight-network logits are composed into batch weights.
    d_steps : int
        Discriminator updates per generator update.
    lr_generator, lr_discriminator, lr_weight : float
        Adam learning rates for the three network groups.
    hidden_width : int
        Generator hidden width; discriminator/weight-net widths scale off it.
    noise_dim : int
        Dimension of the bounded noise the generators consume.
    clip_ratio : float
        Initial bound on the max/min batch-weight ratio.
    random_state : int
        Seed for all streams (initialization, sampling, noise).

    Attributes
    ----------
    state_ : TrainState
        Trained networks and optimizer state.
    log_ : RunLog
        Loss history of the fit.

    Examples
    --------
    >>> import numpy as np
    >>> est = DomainTransfer(n_steps=50, batch_size=32, random_state=0)
    >>> X = np.random.default_rng(0).normal(size=(200, 2))
    >>> Y = X + 3.0
    >>> moved = est.fit(X, Y).transform(X)
    >>> moved.shape
    (200, 2)
    """

    def __init__(self, algorithm="jd_bw", n_steps=2000, batch_size=128,
                 weight_strategy="composite", d_steps=5, lr_generator=1e-4,
                 lr_discriminator=2e-4, lr_weight=1e-4, hidden_width=32,
                 noise_dim=8, clip_ratio=3.0, random_state=0):
        self.algorithm = algorithm
        self.n_steps = n_steps
        self.batch_size = batch_size
        self.weight_strategy = weight_strategy
        self.d_steps = d_steps
        self.lr_generator = lr_generator
        self.lr_discriminator = lr_discriminator
        self.lr_weight = lr_weight
        self.hidden_width = hidden_width
        self.noise_dim = noise_dim
        self.clip_ratio = clip_ratio
        self.random_state = random_state

    def _config(self):
        cfg = ExperimentConfig(algorithm=self.algorithm, seed=self.random_state)
        cfg.train.m = self.batch_size
        cfg.train.n_steps = self.n_steps
        cfg.train.d_steps = self.d_steps
        cfg.train.lr_g = self.lr_generator
        cfg.train.lr_d = self.lr_discriminator
        cfg.train.lr_w = self.lr_weight
        cfg.weight.strategy = self.weight_strategy
        cfg.weight.clip_ratio = self.clip_ratio
        cfg.nets.gen_hidden = self.hidden_width
        cfg.nets.noise_dim = self.noise_dim
        return cfg.validate()

    def fit(self, X, Y):
        """Train transfer networks on unpaired samples from both domains.

        Parameters
        ----------
        X : array-like of shape (n_source, d)
            Samples from the source domain.
        Y : array-like of shape (n_target, d)
            Samples from the target domain (same dimension as X; they are
            unpaired, so the row counts may differ).
        """
        X = check_array(X, dtype=np.float64)
        Y = check_array(Y, dtype=np.float64)
        if X.shape[1] != Y.shape[1]:
            raise ValueError(
                f"X and Y must share a feature dimension, got {X.shape[1]} "
                f"and {Y.shape[1]}"
            )
        config = self._config()
        streams = RngStreams(config.seed)
        sources = (
            ArrayBatchSource(X, streams.get("data-x")),
            ArrayBatchSource(Y, streams.get("data-y")),
        )
        self.state_, self.log_ = train(config, sources=sources)
        self.n_features_in_ = X.shape[1]
        return self

    def _apply(self, gen_name, X):
        check_is_fitted(self, "state_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"expected {self.n_features_in_} features, got {X.shape[1]}"
            )
        gen = self.state_.networks[gen_name]
        rng = RngStreams(self.random_state).get("transform")
        z = rng.uniform(-1.0, 1.0, size=(X.shape[0], gen.config.noise_dim))
        return gen.forward(ad.constant(X), ad.constant(z)).data

    def transform(self, X):
        """Carry source-domain points into the target domain."""
        return self._apply("gen_xy", X)

    def inverse_transform(self, Y):
        """Carry target-domain points back into the source domain."""
        check_is_fitted(self, "state_")
        if "gen_yx" not in self.state_.networks:
            raise ValueError("one_sided training fits no target-to-source generator")
        return self._apply("gen_yx", Y)
