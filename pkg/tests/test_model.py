import numpy as np
import pytest

from nknn.core import BOS, EOS, PAD, UNK, ConfigError
from nknn.model import SyntheticATModel, SyntheticModelConfig, SyntheticNATModel


CONFIG = SyntheticModelConfig(seed=5)


def test_at_step_deterministic():
    a, b = SyntheticATModel(CONFIG), SyntheticATModel(CONFIG)
    h1, p1 = a.step([4, 5, 6], [60])
    h2, p2 = b.step([4, 5, 6], [60])
    assert h1.tobytes() == h2.tobytes() and p1.tobytes() == p2.tobytes()


def test_nat_passes_deterministic():
    a, b = SyntheticNATModel(CONFIG), SyntheticNATModel(CONFIG)
    assert a.first_pass([4, 5], 2)[0].vectors.tobytes() == b.first_pass([4, 5], 2)[0].vectors.tobytes()
    assert a.second_pass([4, 5], [60, 61])[0].vectors.tobytes() == b.second_pass([4, 5], [60, 61])[0].vectors.tobytes()


def test_distributions_are_valid():
    at, nat = SyntheticATModel(CONFIG), SyntheticNATModel(CONFIG)
    dists = [at.step([4, 5, 6], [])[1], *nat.first_pass([4, 5, 6], 3)[1], *nat.second_pass([4, 5], [60, 61])[1]]
    for p in dists:
        assert p.shape == (CONFIG.vocab_size,)
        assert abs(p.sum() - 1.0) < 1e-12
        assert p[PAD] == p[BOS] == p[UNK] == 0.0


def test_distinct_contexts_give_distinct_states():
    at = SyntheticATModel(CONFIG)
    rng = np.random.default_rng(0)
    seen = set()
    for _ in range(1000):
        src = tuple(int(x) for x in rng.integers(4, 54, size=rng.integers(2, 8)))
        prefix = tuple(int(x) for x in rng.integers(54, 104, size=rng.integers(0, 4)))
        seen.add((src, prefix))
    states = {at.step(s, p)[0].tobytes() for s, p in seen}
    assert len(states) == len(seen)


def test_second_pass_differs_from_first():
    nat = SyntheticNATModel(CONFIG)
    first = nat.first_pass([4, 5, 6], 3)[0].vectors
    second = nat.second_pass([4, 5, 6], [60, 61, 62])[0].vectors
    assert not np.array_equal(first, second)


def test_second_pass_depends_on_candidate():
    nat = SyntheticNATModel(CONFIG)
    a = nat.second_pass([4, 5, 6], [60, 61, 62])[0].vectors
    b = nat.second_pass([4, 5, 6], [60, 70, 62])[0].vectors
    assert not np.array_equal(a, b)


def test_at_emits_eos_after_source():
    at = SyntheticATModel(CONFIG)
    _, p = at.step([4, 5], [at.lexicon(4), at.lexicon(5)])
    assert int(np.argmax(p)) == EOS


def test_fingerprints():
    assert SyntheticATModel(CONFIG).fingerprint == SyntheticATModel(SyntheticModelConfig(seed=5)).fingerprint
    assert SyntheticATModel(CONFIG).fingerprint != SyntheticNATModel(CONFIG).fingerprint
    assert SyntheticATModel(CONFIG).fingerprint != SyntheticATModel(SyntheticModelConfig(seed=6)).fingerprint


def test_config_round_trip(tmp_path):
    CONFIG.save(tmp_path / "m.json")
    assert SyntheticModelConfig.load(tmp_path / "m.json") == CONFIG


def test_config_rejects_unknown_and_nested(tmp_path):
    with pytest.raises(ConfigError):
        SyntheticModelConfig.from_dict({"bogus": 1})
    (tmp_path / "m.json").write_text('{"dim": {"a": 1}}')
    with pytest.raises(ConfigError):
        SyntheticModelConfig.load(tmp_path / "m.json")


def test_config_validation():
    with pytest.raises(ConfigError):
        SyntheticModelConfig(dim=1)
    with pytest.raises(ConfigError):
        SyntheticModelConfig(noise_scale=-1.0)


def test_empty_inputs():
    with pytest.raises(ValueError):
        SyntheticATModel(CONFIG).step([], [])
    with pytest.raises(ValueError):
        SyntheticNATModel(CONFIG).first_pass([4], 0)
    with pytest.raises(ValueError):
        SyntheticNATModel(CONFIG).second_pass([4], [])
