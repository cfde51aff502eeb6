from __future__ import annotations

import struct

import numpy as np
import pytest

from conftest import toy_dataset
from ddn.dataset import Dataset, SequenceExample, dataset_from_bytes, dataset_to_bytes, read_dataset, write_dataset
from ddn.errors import FormatError, UsageError, ValidationError


def test_round_trip_is_bit_exact(tmp_path):
    d = toy_dataset(5, horizon=3)
    path = tmp_path / "x.dds"
    write_dataset(d, path)
    back = read_dataset(path)
    assert back.split == "x" and len(back) == 5
    for a, b in zip(d.sequences, back.sequences):
        assert a.observations.tobytes() == b.observations.tobytes()
        assert a.actions.tolist() == b.actions.tolist()
    assert dataset_to_bytes(back) == path.read_bytes()


def test_hand_built_file_parses():
    raw = struct.pack("<4sIIII", b"DDS1", 1, 2, 3, 1)
    raw += struct.pack("<I", 2) + struct.pack("<4f", 1.0, 2.0, 3.0, 4.0) + struct.pack("<I", 2)
    d = dataset_from_bytes(raw)
    assert (d.feature_dim, d.num_actions) == (2, 3)
    np.testing.assert_array_equal(d.sequences[0].observations, [[1.0, 2.0], [3.0, 4.0]])
    assert d.sequences[0].actions.tolist() == [2]


def test_bad_action_id_names_the_sequence():
    d = toy_dataset(3)
    d.sequences[2].actions[0] = 4
    with pytest.raises(ValidationError, match="sequence 2"):
        dataset_to_bytes(d)


def test_mismatched_lengths_rejected():
    d = Dataset(6, 4, [SequenceExample(np.zeros((3, 6), np.float32), np.array([0]))])
    with pytest.raises(ValidationError):
        d.validate()


def test_bad_magic_version_and_truncation():
    raw = dataset_to_bytes(toy_dataset(2))
    with pytest.raises(FormatError) as e:
        dataset_from_bytes(b"XXXX" + raw[4:])
    assert e.value.offset == 0
    with pytest.raises(FormatError) as e:
        dataset_from_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    assert e.value.offset == 4
    with pytest.raises(FormatError):
        dataset_from_bytes(raw[:-1])
    with pytest.raises(FormatError) as e:
        dataset_from_bytes(raw + b"\0\0")
    assert e.value.offset == len(raw)
    with pytest.raises(FormatError):
        dataset_from_bytes(raw[:10])


def test_stack_and_horizon_filter():
    a = toy_dataset(3, horizon=2)
    b = toy_dataset(2, horizon=3, seed=1)
    d = Dataset(6, 4, a.sequences + b.sequences)
    assert d.horizons() == [2, 3]
    assert len(d.with_horizon(3)) == 2
    obs, acts = d.stack([0, 1])
    assert obs.shape == (2, 3, 6) and acts.shape == (2, 2)
    with pytest.raises(UsageError):
        d.stack([0, 4])
    with pytest.raises(UsageError):
        d.stack([])
