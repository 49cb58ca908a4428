from dataclasses import fields

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcclens.config import Config, ConfigError, describe


def test_empty_file_gives_defaults():
    assert Config.loads("") == Config()


def test_round_trip_defaults(tmp_path):
    c = Config()
    assert Config.loads(c.dumps()) == c
    c.save(tmp_path / "c.ini")
    assert Config.load(tmp_path / "c.ini") == c


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), pop=st.integers(2, 60), p=st.floats(0, 1), lr=st.floats(1e-6, 1.0),
       hidden=st.lists(st.integers(1, 128), max_size=3), out=st.text("abc/_-.", min_size=1, max_size=12))
def test_round_trip_property(seed, pop, p, lr, hidden, out):
    c = Config(seed=seed, pair_population=pop, unsafe_mutation=p, train_lr=lr, hidden=tuple(hidden),
               output_dir=out.strip() or "x")
    text = c.dumps()
    assert Config.loads(text) == c
    assert Config.loads(text).dumps() == text


def test_partial_file_and_overrides():
    c = Config.loads("[run]\nseed = 7\n[search.pair]\npopulation = 10\n")
    assert c.seed == 7 and c.pair_population == 10 and c.pair_iterations == 100
    c2 = c.override(["search.pair.iterations=5", "model.hidden=8,4"])
    assert c2.pair_iterations == 5 and c2.hidden == (8, 4)


@pytest.mark.parametrize("text", [
    "[run]\nseed = x\n",
    "[run]\nbogus = 1\n",
    "[search.pair]\ncrossover = 1.5\n",
    "[search.pair]\npopulation = 1\n",
    "[retrain]\nS = 200\n",
    "not an ini",
])
def test_invalid_configurations(text):
    with pytest.raises(ConfigError):
        Config.loads(text)


def test_bad_override_and_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        Config().override(["run.seed"])
    with pytest.raises(ConfigError):
        Config().override(["nope.key=1"])
    with pytest.raises(ConfigError):
        Config.load(tmp_path / "missing.ini")


def test_environment_overrides():
    c = Config().with_environment({"RCCLENS_OUTPUT_DIR": "/tmp/x", "RCCLENS_WORKERS": "3", "OTHER": "1"})
    assert c.output_dir == "/tmp/x" and c.workers == 3
    assert Config().with_environment({}) == Config()
    with pytest.raises(ConfigError):
        Config().with_environment({"RCCLENS_WORKERS": "many"})


def test_describe_lists_every_key():
    text = describe()
    for f in fields(Config):
        assert f"  {f.metadata['key']} = " in text
