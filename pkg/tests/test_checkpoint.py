import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unlearn_forge import checkpoint
from unlearn_forge.errors import ArtifactNotFoundError, InvalidInputError
from unlearn_forge.nn import MlpArchitecture, init_params


@given(st.lists(st.integers(1, 6), min_size=2, max_size=4), st.sampled_from(["relu", "tanh"]),
       st.integers(0, 2**32))
def test_round_trip_is_bit_exact(widths, activation, seed):
    arch = MlpArchitecture(tuple(widths), activation, seed)
    params = init_params(arch)
    params = {k: v * np.pi + 1e-300 for k, v in params.items()}
    back, arch2 = checkpoint.loads(checkpoint.dumps(params, arch))
    assert arch2.layer_widths == arch.layer_widths and arch2.activation == activation
    assert list(back) == list(params)
    for k in params:
        assert back[k].tobytes() == params[k].tobytes()


def test_header_layout():
    arch = MlpArchitecture((2, 1), "tanh")
    blob = checkpoint.dumps(init_params(arch), arch)
    assert blob[:4] == b"UFCK"
    assert struct.unpack("<5I", blob[4:24]) == (1, 2, 2, 1, 1)
    name_len = struct.unpack("<I", blob[24:28])[0]
    assert blob[28:28 + name_len] == b"layer0.weight"


def test_special_values_survive(tmp_path):
    arch = MlpArchitecture((1, 2))
    params = {"layer0.weight": np.array([[-0.0, 5e-324]]), "layer0.bias": np.array([[np.inf, -np.inf]])}
    path = checkpoint.save(tmp_path / "m.ufck", params, arch)
    back, _ = checkpoint.load(path)
    assert back["layer0.weight"].tobytes() == params["layer0.weight"].tobytes()
    assert np.signbit(back["layer0.weight"][0, 0])


@pytest.mark.parametrize("mutate, message", [
    (lambda b: b"XXXX" + b[4:], "magic"),
    (lambda b: b[:4] + struct.pack("<I", 9) + b[8:], "version"),
    (lambda b: b[:-3], "truncated"),
])
def test_corrupt_files_are_rejected(mutate, message):
    arch = MlpArchitecture((3, 2))
    blob = checkpoint.dumps(init_params(arch), arch)
    with pytest.raises(InvalidInputError, match=message):
        checkpoint.loads(mutate(blob))


def test_layout_mismatch_is_rejected():
    arch = MlpArchitecture((3, 2))
    with pytest.raises(InvalidInputError):
        checkpoint.dumps(init_params(MlpArchitecture((3, 4))), arch)


def test_missing_file(tmp_path):
    with pytest.raises(ArtifactNotFoundError):
        checkpoint.load(tmp_path / "absent.ufck")
