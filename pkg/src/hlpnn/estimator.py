"""Scikit-learn style front end for the hierarchical location model."""

from __future__ import annotations

from dataclasses import asdict, fields, replace

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .config import FEATURE_SETS, ConfigError, ModelConfig, TrainConfig
from .geo import build_bias, evaluate
from .model import HLPNNNetwork, collate
from .optim import make_rng
from .tensor import no_grad
from .text import assemble_user, build_category_table, build_vocab, load_pretrained_embeddings
from .training import run_training
from .validation import check_city_labels, check_users

_MODEL_KEYS = [f.name for f in fields(ModelConfig)]
_TRAIN_KEYS = [f.name for f in fields(TrainConfig)]


class HLPNNClassifier(ClassifierMixin, BaseEstimator):
    """Predict a user's home city, constrained by a predicted region.

    ``registry`` (a CityRegistry) fixes the label space. Every other
    parameter mirrors ModelConfig / TrainConfig; ``network_embeddings`` is an
    optional NetworkEmbeddings used when ``features`` includes the mention
    network, and ``pretrained_embeddings`` an optional word-vector file.

    ``fit`` takes a sequence of UserRecords (or schema dicts). Dev users
    drive learning-rate reduction and best-epoch selection; without them the
    model trains for ``max_epochs`` at the initial rate.
    """

    def __init__(
        self,
        registry=None,
        *,
        word_dim=300,
        char_dim=50,
        filter_sizes=(3, 4, 5),
        filters_per_size=100,
        n_heads=10,
        n_layers=3,
        ff_dim=2400,
        lambda_init=1.0,
        alpha=1.0,
        max_tweets=20,
        max_tokens=30,
        max_chars=20,
        word_min_count=10,
        char_min_count=5,
        dropout_lstm_in=0.3,
        dropout_encoder=0.1,
        features="all",
        use_char_cnn=True,
        use_word_attention=True,
        use_field_attention=True,
        use_encoders=True,
        use_country_supervision=True,
        clamp_lambda=False,
        layer_norm_eps=1e-5,
        dtype="float64",
        batch_size=64,
        lr_initial=1e-4,
        lr_reduced=1e-5,
        extra_epochs_after_reduction=3,
        max_epochs=10,
        seed=0,
        eval_every=1,
        clip_value=1.0,
        adam_beta1=0.9,
        adam_beta2=0.999,
        adam_eps=1e-8,
        network_embeddings=None,
        pretrained_embeddings=None,
    ):
        self.registry = registry
        self.word_dim = word_dim
        self.char_dim = char_dim
        self.filter_sizes = filter_sizes
        self.filters_per_size = filters_per_size
        self.n_heads = n_heads
        self.n_layers = n_layers
        self.ff_dim = ff_dim
        self.lambda_init = lambda_init
        self.alpha = alpha
        self.max_tweets = max_tweets
        self.max_tokens = max_tokens
        self.max_chars = max_chars
        self.word_min_count = word_min_count
        self.char_min_count = char_min_count
        self.dropout_lstm_in = dropout_lstm_in
        self.dropout_encoder = dropout_encoder
        self.features = features
        self.use_char_cnn = use_char_cnn
        self.use_word_attention = use_word_attention
        self.use_field_attention = use_field_attention
        self.use_encoders = use_encoders
        self.use_country_supervision = use_country_supervision
        self.clamp_lambda = clamp_lambda
        self.layer_norm_eps = layer_norm_eps
        self.dtype = dtype
        self.batch_size = batch_size
        self.lr_initial = lr_initial
        self.lr_reduced = lr_reduced
        self.extra_epochs_after_reduction = extra_epochs_after_reduction
        self.max_epochs = max_epochs
        self.seed = seed
        self.eval_every = eval_every
        self.clip_value = clip_value
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.network_embeddings = network_embeddings
        self.pretrained_embeddings = pretrained_embeddings

    @classmethod
    def from_configs(cls, model_cfg, train_cfg, registry, network_embeddings=None,
                     pretrained_embeddings=None):
        return cls(registry, network_embeddings=network_embeddings,
                   pretrained_embeddings=pretrained_embeddings,
                   **asdict(model_cfg), **asdict(train_cfg))

    def model_config(self):
        return ModelConfig(**{k: getattr(self, k) for k in _MODEL_KEYS})

    def train_config(self):
        return TrainConfig(**{k: getattr(self, k) for k in _TRAIN_KEYS})

    # -- encoding -------------------------------------------------------------
    def _network_rows(self, users):
        cfg = self.config_
        width = 2 * cfg.word_dim
        rows = np.zeros((len(users), width))
        emb = self.network_embeddings
        if emb is None or "network" not in FEATURE_SETS[cfg.features]:
            return rows
        if emb.dim != width:
            raise ConfigError(f"network embeddings have dim {emb.dim}, model needs {width}")
        for i, u in enumerate(users):
            rows[i] = emb.lookup(u.user_id)
        return rows

    def _encode(self, users):
        cfg = self.config_
        return [
            assemble_user(u, self.vocab_, cfg.max_tweets, self.language_table_,
                          self.timezone_table_, cfg.max_tokens, cfg.max_chars)
            for u in users
        ]

    def _min_chars(self):
        return max(self.config_.filter_sizes) if self.config_.use_char_cnn else 1

    def _batch(self, encoded, net_rows, idx, cities=None):
        gold_country = gold_city = None
        if cities is not None:
            gold_city = cities[idx]
            gold_country = self.registry.city_country[gold_city]
        return collate([encoded[i] for i in idx], net_rows[idx], self.config_,
                       self._min_chars(), gold_country, gold_city)

    # -- fitting ----------------------------------------------------------------
    def fit(self, X, y=None, dev_users=None, dev_y=None):
        if self.registry is None:
            raise ConfigError("a CityRegistry is required")
        users = check_users(X)
        if not users:
            raise ConfigError("training split is empty")
        cities = check_city_labels(y, users, self.registry)
        self.config_ = cfg = self.model_config()
        tcfg = self.train_config()
        rng = make_rng(tcfg.seed)

        self.vocab_ = build_vocab(users, cfg.word_min_count, cfg.char_min_count)
        self.language_table_ = build_category_table(u.user_language for u in users)
        self.timezone_table_ = build_category_table(u.time_zone for u in users)
        word_init = None
        if self.pretrained_embeddings is not None:
            word_init, _ = load_pretrained_embeddings(self.pretrained_embeddings, self.vocab_,
                                                      cfg.word_dim, rng)
        self.network_ = HLPNNNetwork(
            cfg, self.vocab_.n_words, self.vocab_.n_chars, len(self.language_table_),
            len(self.timezone_table_), build_bias(self.registry), rng, word_init,
        )
        self.classes_ = np.array([c.city_id for c in self.registry.cities])

        encoded = self._encode(users)
        net_rows = self._network_rows(users)
        dev_eval = None
        if dev_users is not None:
            dev_users = check_users(dev_users)
            if dev_y is not None:
                dev_users = [replace(u, gold_city=c) for u, c in zip(dev_users, dev_y)]
            dev_enc = self._encode(dev_users)
            dev_rows = self._network_rows(dev_users)

            def dev_eval():
                return self._evaluate_encoded(dev_users, dev_enc, dev_rows)

        self.run_record_ = run_training(
            self.network_, encoded, tcfg, cfg.effective_alpha, rng,
            make_batch=lambda idx: self._batch(encoded, net_rows, idx, cities),
            dev_eval=dev_eval, clamp_lambda=cfg.clamp_lambda,
        )
        return self

    # -- inference ----------------------------------------------------------------
    def _outputs(self, encoded, net_rows):
        p_co, p_ci = [], []
        with no_grad():
            for start in range(0, len(encoded), self.batch_size):
                idx = np.arange(start, min(start + self.batch_size, len(encoded)))
                out = self.network_.forward(self._batch(encoded, net_rows, idx))
                p_co.append(out.p_co.data)
                p_ci.append(out.p_ci().data)
        if not p_co:
            return np.zeros((0, self.registry.n_countries)), np.zeros((0, self.registry.n_cities))
        return np.concatenate(p_co), np.concatenate(p_ci)

    def _probabilities(self, X):
        check_is_fitted(self, "network_")
        users = check_users(X)
        return self._outputs(self._encode(users), self._network_rows(users))

    def predict_proba(self, X):
        """City probabilities, columns ordered as ``classes_``."""
        return self._probabilities(X)[1]

    def predict_country_proba(self, X):
        return self._probabilities(X)[0]

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def _evaluate_encoded(self, users, encoded, net_rows):
        _, p_ci = self._outputs(encoded, net_rows)
        predicted = list(self.classes_[np.argmax(p_ci, axis=1)])
        return evaluate(predicted, [u.latitude for u in users], [u.longitude for u in users],
                        [u.gold_city for u in users], self.registry)

    def evaluate(self, X):
        """MetricsReport against the users' own coordinates and gold cities."""
        check_is_fitted(self, "network_")
        users = check_users(X)
        return self._evaluate_encoded(users, self._encode(users), self._network_rows(users))

