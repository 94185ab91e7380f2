import numpy as np
import pytest

from engine.params import CheckpointError, ParamVector


def make_params():
    return ParamVector([("W1", np.arange(6.0).reshape(2, 3)), ("b1", np.array([0.5, -0.25])),
                        ("scalar", np.array(3.0))])


def test_file_round_trip_is_bit_identical(tmp_path):
    params = make_params()
    path = params.save(tmp_path / "nested" / "theta.pvec")
    loaded = ParamVector.load(path)
    assert loaded == params
    assert loaded.names == ["W1", "b1", "scalar"]


def test_header_layout():
    data = make_params().to_bytes()
    assert data[:4] == b"PVEC"
    assert int.from_bytes(data[4:6], "little") == 1
    assert int.from_bytes(data[6:10], "little") == 3


def test_corrupt_files_are_rejected():
    data = make_params().to_bytes()
    with pytest.raises(CheckpointError):
        ParamVector.from_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError):
        ParamVector.from_bytes(data[:-3])
    with pytest.raises(CheckpointError):
        ParamVector.from_bytes(data + b"\x00")


def test_entries_are_immutable():
    params = make_params()
    with pytest.raises(ValueError):
        params["b1"][0] = 1.0


def test_arithmetic():
    params = make_params()
    doubled = params + params
    np.testing.assert_array_equal(doubled["W1"], 2 * params["W1"])
    stepped = params.axpy(-0.5, params)
    np.testing.assert_array_equal(stepped["b1"], 0.5 * params["b1"])
    assert (params - params).flatten().tolist() == [0.0] * params.size


def test_flatten_unflatten():
    params = make_params()
    assert params.size == 9
    assert params.unflatten(params.flatten()) == params
    with pytest.raises(ValueError):
        params.unflatten(np.zeros(4))


def test_replace_checks_shape():
    params = make_params()
    with pytest.raises(ValueError):
        params.replace("b1", np.zeros(3))
    replaced = params.replace("b1", np.zeros(2))
    np.testing.assert_array_equal(replaced["b1"], [0.0, 0.0])
    np.testing.assert_array_equal(params["b1"], [0.5, -0.25])


def test_equality_is_bitwise():
    params = make_params()
    assert params != params.replace("scalar", np.array(3.0 + 1e-15))
