"""Binary checkpoints for fitted classifiers.

Layout::

    b"HLPNN1\\n"                      magic, 7 bytes
    uint64 little-endian             length H of the JSON header
    H bytes                          UTF-8 JSON header
    tensor payloads                  raw little-endian arrays, header order

The header records ``config_hash``, ``seed``, the estimator parameters,
vocabularies, categorical tables, the city registry, network-embedding ids
and, per tensor, ``name``, ``shape`` and ``dtype``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict

import numpy as np

from .config import ModelConfig, TrainConfig, config_hash
from .geo import City, CityRegistry
from .graph import NetworkEmbeddings
from .model import HLPNNNetwork
from .optim import make_rng
from .text import Vocabulary

MAGIC = b"HLPNN1\n"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable or inconsistent checkpoint file."""


def save_checkpoint(clf, path):
    cfg = clf.config_
    tcfg = clf.train_config()
    tensors = [(name, p.data) for name, p in clf.network_.params.items()]
    emb = clf.network_embeddings
    if emb is not None:
        tensors.append(("network.vectors", np.asarray(emb.vectors, dtype=np.float64)))
    header = {
        "format_version": FORMAT_VERSION,
        "config_hash": config_hash(cfg, tcfg),
        "seed": tcfg.seed,
        "model": asdict(cfg),
        "train": asdict(tcfg),
        "vocab": {
            "words": clf.vocab_.word_to_id,
            "chars": clf.vocab_.char_to_id,
            "word_min_count": clf.vocab_.word_min_count,
            "char_min_count": clf.vocab_.char_min_count,
        },
        "languages": clf.language_table_,
        "timezones": clf.timezone_table_,
        "registry": [[c.city_id, c.country_id, c.lat, c.lon] for c in clf.registry.cities],
        "network_ids": None if emb is None else list(emb.ids),
        "tensors": [
            {"name": n, "shape": list(a.shape), "dtype": a.dtype.str.lstrip("<>=|")}
            for n, a in tensors
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for _, a in tensors:
            fh.write(np.ascontiguousarray(a, dtype=a.dtype.newbyteorder("<")).tobytes())


def read_checkpoint(path):
    """Return (header, {name: array})."""
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise CheckpointError(f"{path}: not an HLPNN1 checkpoint")
        (size,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(size).decode("utf-8"))
        arrays = {}
        for spec in header["tensors"]:
            dtype = np.dtype("<" + spec["dtype"])
            count = int(np.prod(spec["shape"], dtype=np.int64))
            raw = fh.read(count * dtype.itemsize)
            if len(raw) != count * dtype.itemsize:
                raise CheckpointError(f"{path}: truncated tensor {spec['name']}")
            arrays[spec["name"]] = np.frombuffer(raw, dtype=dtype).reshape(spec["shape"]).copy()
    return header, arrays


def load_checkpoint(path):
    """Rebuild a fitted HLPNNClassifier."""
    from .estimator import HLPNNClassifier
    from .geo import build_bias

    header, arrays = read_checkpoint(path)
    cfg = ModelConfig(**header["model"])
    tcfg = TrainConfig(**header["train"])
    if config_hash(cfg, tcfg) != header["config_hash"]:
        raise CheckpointError(f"{path}: config hash mismatch")
    registry = CityRegistry([City(*row) for row in header["registry"]])
    emb = None
    if header["network_ids"] is not None:
        emb = NetworkEmbeddings(header["network_ids"], arrays.pop("network.vectors"))
    clf = HLPNNClassifier.from_configs(cfg, tcfg, registry, network_embeddings=emb)
    v = header["vocab"]
    clf.config_ = cfg
    clf.vocab_ = Vocabulary(v["words"], v["chars"], word_min_count=v["word_min_count"],
                            char_min_count=v["char_min_count"])
    clf.language_table_ = header["languages"]
    clf.timezone_table_ = header["timezones"]
    clf.classes_ = np.array([c.city_id for c in registry.cities])
    net = HLPNNNetwork(cfg, clf.vocab_.n_words, clf.vocab_.n_chars, len(clf.language_table_),
                       len(clf.timezone_table_), build_bias(registry), make_rng(0))
    net.load_state_dict(arrays)
    clf.network_ = net
    return clf
