"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numpy as np

from .text import UserRecord, parse_user


def check_users(X):
    """Coerce ``X`` into a list of UserRecord.

    Accepts UserRecords or dicts in the dataset JSON schema.
    """
    if isinstance(X, (UserRecord, dict, str)):
        raise TypeError("expected a sequence of users, got a single item")
    users = []
    for i, item in enumerate(X):
        if isinstance(item, UserRecord):
            users.append(item)
        elif isinstance(item, dict):
            users.append(parse_user(item, i + 1))
        else:
            raise TypeError(f"item {i} is {type(item).__name__}, expected UserRecord or dict")
    return users


def check_city_labels(y, users, registry):
    """City indices for ``y`` (or the users' gold cities when ``y`` is None)."""
    if y is None:
        y = [u.gold_city for u in users]
    y = list(y)
    if len(y) != len(users):
        raise ValueError(f"got {len(users)} users but {len(y)} labels")
    missing = [u.user_id for u, c in zip(users, y) if c is None]
    if missing:
        raise ValueError(f"users without a gold city: {missing[:5]}")
    return np.array([registry.city_idx(c) for c in y], dtype=np.int64)
