"""Ring buffer semantics, sampling statistics, and trajectory files."""

import numpy as np
import pytest

from opirl.errors import ContractError, DimensionError, ParseError, SchemaError
from opirl.replay import (Episode, InitialStateBuffer, ReplayBuffer, Transition,
                          load_trajectories, save_trajectories)
from opirl.seeding import component_rng


def make_transition(i: float, obs_dim=2, act_dim=1) -> Transition:
    return Transition(np.full(obs_dim, i), np.full(act_dim, i / 10), float(i),
                      np.full(obs_dim, i + 1), False, False)


def test_push_to_empty():
    buf = ReplayBuffer(4, 2, 1)
    buf.push(make_transition(1))
    assert buf.size == 1


def test_ring_keeps_last_capacity_entries():
    buf = ReplayBuffer(3, 2, 1)
    for i in range(5):
        buf.push(make_transition(i))
    snap = buf.all_transitions()
    assert buf.size == 3
    assert [s[0] for s in snap.states] == [2.0, 3.0, 4.0]  # insertion order


def test_push_dimension_mismatch():
    buf = ReplayBuffer(4, 2, 1)
    with pytest.raises(DimensionError):
        buf.push(make_transition(1, obs_dim=3))
    with pytest.raises(DimensionError):
        buf.push(make_transition(1, act_dim=2))


def test_sample_empty_buffer():
    buf = ReplayBuffer(4, 2, 1)
    with pytest.raises(ContractError):
        buf.sample(1, component_rng(0, "s"))


def test_sample_single_element_repeats():
    buf = ReplayBuffer(4, 2, 1)
    buf.push(make_transition(7))
    batch = buf.sample(5, component_rng(0, "s"))
    assert len(batch) == 5
    assert np.all(batch.states == 7.0)


def test_sample_uniformity_chi_square():
    buf = ReplayBuffer(10, 2, 1)
    for i in range(10):
        buf.push(make_transition(i))
    rng = component_rng(1, "chi")
    n = 100_000
    batch = buf.sample(n, rng)
    counts = np.bincount(batch.states[:, 0].astype(int), minlength=10)
    sigma = np.sqrt(n * 0.1 * 0.9)
    assert np.all(np.abs(counts - n * 0.1) < 3 * sigma)


def test_sampling_deterministic_given_rng():
    buf = ReplayBuffer(16, 2, 1)
    for i in range(16):
        buf.push(make_transition(i))
    a = buf.sample(8, component_rng(2, "det"))
    b = buf.sample(8, component_rng(2, "det"))
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.actions, b.actions)


def test_interleaved_push_sample_reproducible():
    def run():
        buf = ReplayBuffer(8, 2, 1)
        rng = component_rng(3, "inter")
        seen = []
        for i in range(20):
            buf.push(make_transition(i))
            if i >= 3:
                seen.append(buf.sample(2, rng).states.copy())
        return np.concatenate(seen)

    assert np.array_equal(run(), run())


def test_initial_state_buffer():
    buf = InitialStateBuffer(2, 1)
    with pytest.raises(ContractError):
        buf.sample(1, component_rng(0, "i"))
    buf.push([0.1, 0.2], [0.5])
    with pytest.raises(DimensionError):
        buf.push([0.1], [0.5])
    obs, acts = buf.sample(3, component_rng(0, "i"))
    assert obs.shape == (3, 2) and acts.shape == (3, 1)


# -- trajectory files -------------------------------------------------------------


def sample_episodes(n=3, steps=4, obs_dim=2, act_dim=1, seed=0):
    rng = component_rng(seed, "episodes")
    out = []
    for _ in range(n):
        out.append(Episode(
            rng.standard_normal((steps + 1, obs_dim)),
            rng.uniform(-1, 1, (steps, act_dim)),
            rng.standard_normal(steps),
            bool(rng.integers(2)),
        ))
    return out


def test_roundtrip_exact(tmp_path):
    path = tmp_path / "demos.jsonl"
    episodes = sample_episodes()
    save_trajectories(path, episodes, "line-1d")
    loaded, header = load_trajectories(path)
    assert header["env_id"] == "line-1d"
    assert header["format_version"] == 1
    assert len(loaded) == len(episodes)
    for a, b in zip(episodes, loaded):
        assert np.array_equal(a.observations, b.observations)
        assert np.array_equal(a.actions, b.actions)
        assert np.array_equal(a.rewards, b.rewards)
        assert a.terminated == b.terminated


def test_save_empty_refused(tmp_path):
    with pytest.raises(ContractError):
        save_trajectories(tmp_path / "x.jsonl", [], "line-1d")


def test_truncated_file_is_parse_error(tmp_path):
    path = tmp_path / "demos.jsonl"
    save_trajectories(path, sample_episodes(), "line-1d")
    text = path.read_text()
    path.write_text(text[: len(text) * 2 // 3])
    with pytest.raises(ParseError, match="line"):
        load_trajectories(path)


def test_dimension_mismatch_vs_header(tmp_path):
    path = tmp_path / "demos.jsonl"
    save_trajectories(path, sample_episodes(), "line-1d")
    lines = path.read_text().splitlines()
    lines[0] = lines[0].replace('"obs_dim":2', '"obs_dim":3')
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(SchemaError):
        load_trajectories(path)


def test_header_only_file(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text('{"format_version":1,"obs_dim":2,"act_dim":1,"env_id":"x"}\n')
    with pytest.raises(ParseError):
        load_trajectories(path)


def test_episode_length_validation():
    with pytest.raises(DimensionError):
        Episode(np.zeros((3, 2)), np.zeros((3, 1)), np.zeros(3), False)
    with pytest.raises(DimensionError):
        Episode(np.zeros((4, 2)), np.zeros((3, 1)), np.zeros(2), False)
