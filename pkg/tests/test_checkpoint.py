import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uavtwin.ppo import MLPShape, init_network
from uavtwin.ppo.checkpoint import (
    MAGIC,
    CheckpointError,
    dumps_checkpoint,
    load_checkpoint,
    loads_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def net():
    return init_network(MLPShape(hidden_layers=2, width=8), 5)


def test_round_trip_is_bit_exact(net, tmp_path):
    path = tmp_path / "policy.ckpt"
    save_checkpoint(net, path)
    back = load_checkpoint(path, net.shape)
    assert back.shape == net.shape
    assert list(back.params) == list(net.params)
    assert back.flat().tobytes() == net.flat().tobytes()
    assert dumps_checkpoint(back) == path.read_bytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 12), st.integers(0, 2**32 - 1))
def test_round_trip_property(layers, width, seed):
    n = init_network(MLPShape(hidden_layers=layers, width=width), seed)
    assert loads_checkpoint(dumps_checkpoint(n)).flat().tobytes() == n.flat().tobytes()


def _data_start(blob):
    hlen = int.from_bytes(blob[len(MAGIC) : len(MAGIC) + 4], "big")
    return len(MAGIC) + 4 + hlen


def test_corrupted_weight_byte_is_located(net):
    blob = bytearray(dumps_checkpoint(net))
    k = _data_start(blob) + 100  # inside trunk.0.weight (3x8 doubles)
    blob[k] ^= 0x40
    with pytest.raises(CheckpointError) as err:
        loads_checkpoint(bytes(blob))
    assert err.value.offset == _data_start(blob)
    assert "trunk.0.weight" in str(err.value) and f"byte {err.value.offset}" in str(err.value)
    lo, hi = str(err.value).split("(bytes ")[1].split(")")[0].split("..")
    assert int(lo) <= k <= int(hi)


@pytest.mark.parametrize("where", range(0, 40, 3))
def test_any_single_byte_flip_is_rejected(net, where):
    blob = bytearray(dumps_checkpoint(net))
    k = int(np.linspace(0, len(blob) - 1, 40)[where])
    blob[k] ^= 0x01
    with pytest.raises(CheckpointError):
        loads_checkpoint(bytes(blob))


def test_flipped_digest_is_reported_at_the_trailer(net):
    blob = bytearray(dumps_checkpoint(net))
    blob[-1] ^= 0xFF
    with pytest.raises(CheckpointError, match="digest") as err:
        loads_checkpoint(bytes(blob))
    assert err.value.offset == len(blob) - 32


def test_shape_mismatch_is_reported(net):
    with pytest.raises(CheckpointError, match="shape mismatch"):
        loads_checkpoint(dumps_checkpoint(net), MLPShape(hidden_layers=2, width=16))


def test_truncated_and_foreign_files(net):
    blob = dumps_checkpoint(net)
    with pytest.raises(CheckpointError):
        loads_checkpoint(blob[:-40])
    with pytest.raises(CheckpointError, match="magic"):
        loads_checkpoint(b"not a checkpoint at all, definitely" + blob)
    with pytest.raises(CheckpointError, match="too short"):
        loads_checkpoint(b"")
