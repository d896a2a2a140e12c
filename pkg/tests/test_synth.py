import filecmp
import math
from collections import Counter, defaultdict

import numpy as np
import pytest

from hlpnn.geo import build_bias, haversine
from hlpnn.synth import GenerationError, WorldSpec, generate, write_world
from hlpnn.text import load_dataset


def words(text):
    return [w for w in text.split() if not w.startswith("@")]


def naive_bayes_accuracy(train, test):
    """Unigram multinomial naive Bayes with add-one smoothing over tweet words."""
    counts = defaultdict(Counter)
    prior = Counter()
    for u in train:
        prior[u.gold_city] += 1
        for t in u.tweets:
            counts[u.gold_city].update(words(t))
    vocab = set().union(*counts.values())
    totals = {c: sum(counts[c].values()) for c in counts}
    n = sum(prior.values())
    hits = 0
    for u in test:
        toks = [w for t in u.tweets for w in words(t)]
        best = max(counts, key=lambda c: math.log(prior[c] / n) + sum(
            math.log((counts[c][w] + 1) / (totals[c] + len(vocab))) for w in toks))
        hits += best == u.gold_city
    return hits / len(test)


@pytest.fixture(scope="module")
def default_world():
    return generate(WorldSpec(seed=5))


def test_registry_shape_and_bias_columns(default_world):
    reg = default_world.registry
    assert (reg.n_countries, reg.n_cities) == (3, 12)
    np.testing.assert_array_equal(build_bias(reg).sum(axis=0), -2.0)


def test_city_separation_and_latitude_band(default_world):
    cities = default_world.registry.cities
    for i, a in enumerate(cities):
        assert abs(a.lat) <= 60
        for b in cities[i + 1:]:
            assert haversine(a.lat, a.lon, b.lat, b.lon) >= 300.0


def test_users_sit_exactly_at_their_city(default_world):
    centres = {c.city_id: c for c in default_world.registry.cities}
    for u in default_world.train + default_world.dev + default_world.test:
        c = centres[u.gold_city]
        assert haversine(u.latitude, u.longitude, c.lat, c.lon) == 0.0


def test_split_sizes_and_disjoint_ids(default_world):
    w = default_world
    assert (len(w.train), len(w.dev), len(w.test)) == (1600, 200, 200)
    ids = [u.user_id for u in w.train + w.dev + w.test]
    assert len(set(ids)) == len(ids)


def test_zero_noise_tweets_are_all_city_words():
    w = generate(WorldSpec(noise_word_rate=0.0, n_users=200, seed=2))
    for u in w.train:
        own = set(w.city_words[u.gold_city])
        assert all(t in own for tweet in u.tweets for t in words(tweet))


def test_metadata_signal_is_weaker_than_tweets(default_world):
    def signal_rate(field):
        hit = tot = 0
        for u in default_world.train:
            own = set(default_world.city_words[u.gold_city])
            toks = [t for x in field(u) for t in words(x)]
            hit += sum(t in own for t in toks)
            tot += len(toks)
        return hit / tot

    tweets = signal_rate(lambda u: u.tweets)
    meta = signal_rate(lambda u: [u.description, u.profile_location, u.name])
    assert tweets == pytest.approx(0.8, abs=0.02)
    assert meta == pytest.approx(0.4, abs=0.03)


def test_mentions_prefer_same_city(default_world):
    w = default_world
    city = {u.user_id: u.gold_city for u in w.train + w.dev + w.test}
    same = sum(c for s, d, c in w.edges if city[s] == city[d])
    total = sum(c for _, _, c in w.edges)
    # intra-city draws plus random draws that land in the same city by chance
    expected = 0.8 + 0.2 / 12
    assert same / total == pytest.approx(expected, abs=0.03)


def test_mentions_appear_in_tweets(default_world):
    u = next(u for u in default_world.train if any("@" in t for t in u.tweets))
    targets = {d for s, d, _ in default_world.edges if s == u.user_id}
    mentioned = {t[1:] for tweet in u.tweets for t in tweet.split() if t.startswith("@")}
    assert mentioned == targets


@pytest.mark.parametrize("noise", [0.0, 0.2])
def test_naive_bayes_oracle_learns_the_world(noise):
    w = generate(WorldSpec(noise_word_rate=noise, seed=11))
    assert naive_bayes_accuracy(w.train, w.test) >= 0.95


def test_char_noise_changes_words_but_keeps_length():
    clean = generate(WorldSpec(n_users=100, seed=4))
    noisy = generate(WorldSpec(n_users=100, char_noise_rate=0.5, seed=4))
    vocab = set().union(*map(set, clean.city_words.values()))
    toks = [t for u in noisy.train for tweet in u.tweets for t in words(tweet)]
    unknown = [t for t in toks if t not in vocab]
    assert 0 < len(unknown) < len(toks)


def test_same_seed_identical_world_and_files(tmp_path):
    spec = WorldSpec(n_users=150, seed=9)
    a = write_world(generate(spec), tmp_path / "a")
    b = write_world(generate(spec), tmp_path / "b")
    names = ["cities.tsv", "train.jsonl", "dev.jsonl", "test.jsonl", "edges.tsv"]
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert match == names and not mismatch and not errors
    other = write_world(generate(WorldSpec(n_users=150, seed=10)), tmp_path / "c")
    assert not filecmp.cmp(a / "train.jsonl", other / "train.jsonl", shallow=False)


def test_written_splits_load_back(tmp_path):
    w = generate(WorldSpec(n_users=50, seed=1))
    write_world(w, tmp_path)
    assert list(load_dataset(tmp_path / "dev.jsonl")) == w.dev


def test_infeasible_separation_is_generation_error():
    with pytest.raises(GenerationError):
        generate(WorldSpec(cities_per_country=3, min_separation_km=5000.0, n_users=10))


@pytest.mark.parametrize("bad", [dict(noise_word_rate=1.0), dict(n_users=0),
                                 dict(mention_intra_city_prob=1.5),
                                 dict(dev_fraction=0.5, test_fraction=0.5)])
def test_invalid_spec_rejected(bad):
    with pytest.raises(GenerationError):
        WorldSpec(**bad)
