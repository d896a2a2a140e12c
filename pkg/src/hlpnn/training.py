"""Training loop, learning-rate schedule, and experiment drivers."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .config import ConfigError
from .optim import Adam, clip_gradients

log = logging.getLogger(__name__)


class PlateauSchedule:
    """Drop the learning rate once dev accuracy stops improving, then finish.

    After the first epoch whose dev accuracy does not exceed the best so far,
    the rate becomes ``lr_reduced`` and exactly ``extra_epochs`` more epochs
    run. ``max_epochs`` is a hard cap.
    """

    def __init__(self, lr_initial, lr_reduced, extra_epochs=3, max_epochs=10):
        self.lr = lr_initial
        self.lr_reduced = lr_reduced
        self.extra_epochs = extra_epochs
        self.max_epochs = max_epochs
        self.epoch = 0
        self.best = -np.inf
        self.reduced_at = None
        self.done = False

    def end_epoch(self, dev_accuracy):
        """Record one finished epoch; returns True when it set a new best."""
        self.epoch += 1
        improved = dev_accuracy is not None and dev_accuracy > self.best
        if improved:
            self.best = dev_accuracy
        elif dev_accuracy is not None and self.reduced_at is None:
            self.reduced_at = self.epoch
            self.lr = self.lr_reduced
        if self.epoch >= self.max_epochs:
            self.done = True
        if self.reduced_at is not None and self.epoch >= self.reduced_at + self.extra_epochs:
            self.done = True
        return improved


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    city_loss: float
    country_loss: float
    lr: float
    lambda_value: float
    dev: dict | None
    wall_time: float


@dataclass
class RunRecord:
    epochs: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    best_epoch: int | None = None

    @property
    def n_reductions(self):
        lrs = [e.lr for e in self.epochs]
        return sum(1 for a, b in zip(lrs, lrs[1:]) if b != a)

    def to_jsonl(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.epochs:
                fh.write(json.dumps(asdict(e), sort_keys=True) + "\n")


def make_batches(t_used, batch_size, rng):
    """Index batches of users with similar tweet counts, in shuffled order."""
    t_used = np.asarray(t_used)
    order = np.lexsort((rng.random(len(t_used)), t_used))
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def run_training(net, encoded, train_cfg, alpha, rng, make_batch, dev_eval=None,
                 clamp_lambda=False):
    """Adam + clipping over ``encoded`` users; returns a RunRecord.

    ``make_batch(indices)`` builds a model Batch for training users;
    ``dev_eval()`` returns a MetricsReport. The best-dev parameters are
    restored at the end.
    """
    if len(encoded) == 0:
        raise ConfigError("training split is empty")
    params = net.parameters()
    opt = Adam(params, train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps)
    sched = PlateauSchedule(train_cfg.lr_initial, train_cfg.lr_reduced,
                            train_cfg.extra_epochs_after_reduction, train_cfg.max_epochs)
    record = RunRecord()
    best_state = None
    t_used = [u.t_used for u in encoded]
    lam = net.params["lambda"]
    while not sched.done:
        start = time.perf_counter()
        lr = sched.lr
        totals = np.zeros(3)
        seen = 0
        for idx in make_batches(t_used, train_cfg.batch_size, rng):
            batch = make_batch(idx)
            opt.zero_grad()
            out = net.forward(batch, training=True, rng=rng)
            loss, city, country = net.loss(out, batch, alpha)
            loss.backward()
            clip_gradients(params, -train_cfg.clip_value, train_cfg.clip_value)
            opt.step(lr)
            if clamp_lambda and lam.data < 0:
                lam.data[...] = 0.0
            record.step_losses.append(loss.item())
            totals += len(idx) * np.array([loss.item(), city.item(), country.item()])
            seen += len(idx)
        dev = None
        if dev_eval is not None and (sched.epoch + 1) % train_cfg.eval_every == 0:
            dev = dev_eval()
        improved = sched.end_epoch(None if dev is None else dev.accuracy)
        if improved or dev_eval is None:
            best_state = net.state_dict()
            record.best_epoch = sched.epoch
        totals /= seen
        record.epochs.append(EpochRecord(
            epoch=sched.epoch, train_loss=float(totals[0]), city_loss=float(totals[1]),
            country_loss=float(totals[2]), lr=lr, lambda_value=float(lam.data),
            dev=None if dev is None else dev.to_dict(),
            wall_time=time.perf_counter() - start,
        ))
        log.info("epoch %d loss %.4f lr %.1e dev_acc %s", sched.epoch, totals[0], lr,
                 "-" if dev is None else f"{dev.accuracy:.4f}")
    if best_state is not None:
        net.load_state_dict(best_state)
    return record


def train(model_cfg, train_cfg, train_users, dev_users, registry, embeddings=None,
          pretrained=None):
    """Fit a classifier from config objects; returns (classifier, RunRecord)."""
    from .estimator import HLPNNClassifier

    clf = HLPNNClassifier.from_configs(model_cfg, train_cfg, registry,
                                       network_embeddings=embeddings,
                                       pretrained_embeddings=pretrained)
    clf.fit(train_users, dev_users=dev_users)
    return clf, clf.run_record_


ABLATIONS = {
    "full": {},
    "no_char_cnn": {"use_char_cnn": False},
    "no_word_attention": {"use_word_attention": False},
    "no_field_attention": {"use_field_attention": False},
    "no_encoders": {"use_encoders": False},
    "no_country": {"use_country_supervision": False},
}


def run_ablation(model_cfg, train_cfg, train_users, dev_users, eval_users, registry,
                 variants=None, seeds=(0, 1, 2), embeddings=None):
    """Train each variant (one flag toggled) per seed; returns {variant: [report, ...]}."""
    variants = variants or list(ABLATIONS)
    results = {}
    for name in variants:
        overrides = ABLATIONS[name] if isinstance(name, str) else name
        key = name if isinstance(name, str) else json.dumps(name, sort_keys=True)
        results[key] = []
        for seed in seeds:
            cfg = replace(model_cfg, **overrides)
            clf, _ = train(cfg, replace(train_cfg, seed=seed), train_users, dev_users,
                           registry, embeddings)
            results[key].append(clf.evaluate(eval_users))
    return results


def ablation_table(results):
    rows = []
    for name, reports in results.items():
        rows.append({
            "variant": name,
            "accuracy": float(np.mean([r.accuracy for r in reports])),
            "acc161": float(np.mean([r.acc161 for r in reports])),
            "median_km": float(np.mean([r.median_km for r in reports])),
            "mean_km": float(np.mean([r.mean_km for r in reports])),
            "per_seed_mean_km": [r.mean_km for r in reports],
        })
    return rows


def run_alpha_sweep(model_cfg, train_cfg, train_users, dev_users, eval_users, registry,
                    alphas=(0.0, 1.0, 5.0, 20.0), seeds=(0, 1, 2, 3, 4), embeddings=None):
    """Relative country error per (alpha, seed); rows are dicts alpha/seed/rce/accuracy."""
    rows = []
    for alpha in alphas:
        for seed in seeds:
            cfg = replace(model_cfg, alpha=float(alpha), use_country_supervision=True)
            clf, _ = train(cfg, replace(train_cfg, seed=seed), train_users, dev_users,
                           registry, embeddings)
            rep = clf.evaluate(eval_users)
            rows.append({"alpha": float(alpha), "seed": seed,
                         "rce": rep.relative_country_error, "accuracy": rep.accuracy})
    return rows


def write_sweep_csv(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=["alpha", "seed", "rce", "accuracy"],
                           lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in ("alpha", "seed", "rce", "accuracy")})

