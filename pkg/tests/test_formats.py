import struct

import numpy as np
import pytest

from bitgear.binarization import build_tables
from bitgear.formats import (FormatError, decode_cache, decode_checkpoint, decode_model, encode_cache,
                             encode_checkpoint, encode_model, load_model, save_model)
from bitgear.training import TeacherCache


def table(d, L, M=3, N=4, seed=0):
    rng = np.random.default_rng(seed)
    return build_tables([rng.normal(size=(M + N, d)) for _ in range(L + 1)], M, np.linspace(0.2, 1, L + 1))


@pytest.mark.parametrize("d,L", [(1, 0), (63, 1), (64, 2), (65, 3), (256, 2)])
def test_model_round_trip(tmp_path, d, L):
    t = table(d, L)
    path = tmp_path / "m.bgr"
    save_model(path, t)
    back = load_model(path)
    assert (back.num_users, back.num_items, back.d, back.L) == (t.num_users, t.num_items, d, L)
    np.testing.assert_array_equal(back.scalers, t.scalers)
    np.testing.assert_array_equal(back.codes, t.codes)
    np.testing.assert_array_equal(back.layer_weights, t.layer_weights)
    assert encode_model(back) == path.read_bytes()


def test_model_layout():
    t = table(64, 1, M=1, N=1)
    buf = encode_model(t)
    assert buf[:4] == b"BGR1"
    assert struct.unpack_from("<6I", buf, 4) == (1, 1, 1, 64, 1, 64)
    # node 0: two f32 scalers then two u64 words
    assert struct.unpack_from("<2f", buf, 28) == tuple(t.scalers[0].tolist())
    assert struct.unpack_from("<2Q", buf, 36) == tuple(int(x) for x in t.codes[0, :, 0])
    assert len(buf) == 28 + 2 * (8 + 16) + 8
    assert struct.unpack_from("<2f", buf, len(buf) - 8) == tuple(t.layer_weights.tolist())


def test_model_rejects_bad_input():
    buf = encode_model(table(8, 1))
    with pytest.raises(FormatError, match="magic"):
        decode_model(b"XXXX" + buf[4:])
    with pytest.raises(FormatError, match="version"):
        decode_model(buf[:4] + struct.pack("<I", 2) + buf[8:])
    with pytest.raises(FormatError):
        decode_model(buf[:-1])
    with pytest.raises(FormatError):
        decode_model(buf[:10])


def test_checkpoint_round_trip():
    base = np.random.default_rng(1).normal(size=(5, 3)).astype(np.float32).astype(np.float64)
    buf = encode_checkpoint(base)
    assert buf[:4] == b"BGT1" and struct.unpack_from("<3I", buf, 4) == (1, 5, 3)
    np.testing.assert_array_equal(decode_checkpoint(buf), base)
    with pytest.raises(FormatError):
        decode_checkpoint(b"BGT1" + struct.pack("<3I", 9, 5, 3) + buf[16:])


def test_cache_round_trip():
    items = np.random.default_rng(2).integers(0, 50, size=(4, 3, 5))
    buf = encode_cache(TeacherCache(items))
    assert buf[:4] == b"BGC1" and struct.unpack_from("<4I", buf, 4) == (1, 4, 3, 5)
    np.testing.assert_array_equal(decode_cache(buf).items, items)
    with pytest.raises(FormatError, match="magic"):
        decode_cache(b"BGR1" + buf[4:])
