"""Seeded synthetic worlds: regions, cities, users, and mention edges."""

from __future__ import annotations

import os
import string
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .geo import City, CityRegistry, haversine
from .optim import make_rng
from .text import UserRecord, write_dataset


class GenerationError(ValueError):
    """The requested world cannot be generated."""


@dataclass
class WorldSpec:
    n_countries: int = 3
    cities_per_country: int = 4
    vocab_size: int = 400
    location_words_per_city: int = 6
    noise_word_rate: float = 0.2
    tweets_per_user: tuple = (2, 6)
    tokens_per_tweet: tuple = (4, 10)
    n_users: int = 2000
    mention_intra_city_prob: float = 0.8
    mentions_per_user: tuple = (0, 3)
    country_words_per_country: int = 0
    country_word_rate: float = 0.0
    char_noise_rate: float = 0.0
    dev_fraction: float = 0.1
    test_fraction: float = 0.1
    min_separation_km: float = 300.0
    seed: int = 0

    def __post_init__(self):
        self.tweets_per_user = tuple(self.tweets_per_user)
        self.tokens_per_tweet = tuple(self.tokens_per_tweet)
        self.mentions_per_user = tuple(self.mentions_per_user)
        for name in ("noise_word_rate", "country_word_rate", "char_noise_rate"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise GenerationError(f"{name} must be in [0, 1)")
        if not 0.0 <= self.mention_intra_city_prob <= 1.0:
            raise GenerationError("mention_intra_city_prob must be in [0, 1]")
        for name in ("n_countries", "cities_per_country", "vocab_size",
                     "location_words_per_city", "n_users"):
            if getattr(self, name) < 1:
                raise GenerationError(f"{name} must be positive")
        if self.dev_fraction + self.test_fraction >= 1.0:
            raise GenerationError("dev and test fractions leave no training users")


@dataclass
class World:
    registry: CityRegistry
    train: list
    dev: list
    test: list
    edges: list  # (src, dst, count)
    city_words: dict
    country_words: dict


def _words(rng, n, taken):
    letters = np.array(list(string.ascii_lowercase))
    out = []
    while len(out) < n:
        w = "".join(rng.choice(letters, size=int(rng.integers(5, 9))))
        if w not in taken:
            taken.add(w)
            out.append(w)
    return out


def _place_cities(spec, rng):
    centers = []
    cities = []
    max_tries = 20000
    for k in range(spec.n_countries):
        for _ in range(max_tries):
            lat, lon = rng.uniform(-45, 45), rng.uniform(-170, 170)
            if all(haversine(lat, lon, a, b) >= 2500.0 for a, b in centers):
                centers.append((lat, lon))
                break
        else:
            raise GenerationError("cannot place region centers far enough apart")
        clat, clon = centers[-1]
        for j in range(spec.cities_per_country):
            for _ in range(max_tries):
                lat = float(np.clip(clat + rng.uniform(-9, 9), -60, 60))
                lon = float(np.clip(clon + rng.uniform(-9, 9), -180, 180))
                if all(haversine(lat, lon, c.lat, c.lon) >= spec.min_separation_km for c in cities):
                    cities.append(City(f"c{k}_{j}", f"R{k}", round(lat, 4), round(lon, 4)))
                    break
            else:
                raise GenerationError(
                    f"cannot fit {spec.cities_per_country} cities {spec.min_separation_km} km apart"
                )
    return CityRegistry(cities)


def _corrupt(word, rng):
    letters = string.ascii_lowercase
    chars = list(word)
    if len(chars) > 1 and rng.random() < 0.5:
        i = int(rng.integers(len(chars) - 1))
        chars[i], chars[i + 1] = chars[i + 1], chars[i]
    else:
        i = int(rng.integers(len(chars)))
        chars[i] = letters[int(rng.integers(26))]
    return "".join(chars)


def generate(spec):
    """Build a World. Identical specs give identical worlds."""
    rng = make_rng(spec.seed)
    registry = _place_cities(spec, rng)
    taken = set()
    city_words = {c.city_id: _words(rng, spec.location_words_per_city, taken)
                  for c in registry.cities}
    country_words = {k: _words(rng, spec.country_words_per_country, taken)
                     for k in registry.countries}
    noise = _words(rng, spec.vocab_size, taken)
    languages = [f"lang{k}" for k in range(registry.n_countries)]
    zones = [f"tz{k}" for k in range(registry.n_countries)]

    def token(city, signal_rate):
        if rng.random() >= signal_rate:
            w = noise[int(rng.integers(len(noise)))]
        elif spec.country_word_rate and rng.random() < spec.country_word_rate:
            pool = country_words[city.country_id]
            w = pool[int(rng.integers(len(pool)))]
        else:
            pool = city_words[city.city_id]
            w = pool[int(rng.integers(len(pool)))]
        if spec.char_noise_rate and rng.random() < spec.char_noise_rate:
            w = _corrupt(w, rng)
        return w

    def text(city, n_tokens, signal_rate):
        return " ".join(token(city, signal_rate) for _ in range(n_tokens))

    n = spec.n_users
    width = len(str(n))
    ids = [f"u{i:0{width}d}" for i in range(n)]
    assigned = rng.integers(registry.n_cities, size=n)
    signal = 1.0 - spec.noise_word_rate
    tweets_lo, tweets_hi = spec.tweets_per_user
    tok_lo, tok_hi = spec.tokens_per_tweet
    all_tweets = []
    for i in range(n):
        city = registry.cities[assigned[i]]
        k = int(rng.integers(tweets_lo, tweets_hi + 1))
        all_tweets.append([text(city, int(rng.integers(tok_lo, tok_hi + 1)), signal)
                           for _ in range(k)])

    by_city = {}
    for i, c in enumerate(assigned):
        by_city.setdefault(int(c), []).append(i)
    edges = Counter()
    m_lo, m_hi = spec.mentions_per_user
    for i in range(n):
        for _ in range(int(rng.integers(m_lo, m_hi + 1))):
            if rng.random() < spec.mention_intra_city_prob:
                peers = by_city[int(assigned[i])]
                j = peers[int(rng.integers(len(peers)))]
            else:
                j = int(rng.integers(n))
            if j == i:
                continue
            edges[(ids[i], ids[j])] += 1
            if all_tweets[i]:
                t = int(rng.integers(len(all_tweets[i])))
                all_tweets[i][t] += f" @{ids[j]}"

    users = []
    for i in range(n):
        city = registry.cities[assigned[i]]
        k = registry.country_index[city.country_id]
        lang = languages[k] if rng.random() < 0.5 else languages[int(rng.integers(len(languages)))]
        zone = zones[k] if rng.random() < 0.5 else zones[int(rng.integers(len(zones)))]
        users.append(UserRecord(
            user_id=ids[i],
            tweets=all_tweets[i],
            description=text(city, int(rng.integers(2, 6)), signal / 2),
            profile_location=text(city, int(rng.integers(1, 3)), signal / 2),
            name=text(city, 2, signal / 2),
            user_language=lang,
            time_zone=zone,
            latitude=city.lat,
            longitude=city.lon,
            gold_city=city.city_id,
        ))

    order = rng.permutation(n)
    n_dev = int(round(n * spec.dev_fraction))
    n_test = int(round(n * spec.test_fraction))
    dev = [users[i] for i in order[:n_dev]]
    test = [users[i] for i in order[n_dev:n_dev + n_test]]
    train = [users[i] for i in order[n_dev + n_test:]]
    edge_list = [(s, d, c) for (s, d), c in edges.items()]
    return World(registry, train, dev, test, edge_list, city_words, country_words)


def write_world(world, out_dir):
    """Write cities.tsv, train/dev/test.jsonl and edges.tsv into ``out_dir``."""
    os.makedirs(out_dir, exist_ok=True)
    world.registry.to_tsv(os.path.join(out_dir, "cities.tsv"))
    for split in ("train", "dev", "test"):
        write_dataset(getattr(world, split), os.path.join(out_dir, f"{split}.jsonl"))
    with open(os.path.join(out_dir, "edges.tsv"), "w", encoding="utf-8") as fh:
        for s, d, c in world.edges:
            fh.write(f"{s}\t{d}\t{c}\n")
    return out_dir
