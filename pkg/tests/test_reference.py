import numpy as np
import pytest

from fedsa.errors import ConfigError, FormatError
from fedsa.reference import ReferenceLibrary


def test_nearest_earliest_wins_ties():
    lib = ReferenceLibrary()
    lib.add(np.zeros(2), 0.80)
    lib.add(np.ones(2), 0.90)
    lib.add(2 * np.ones(2), 0.90)
    w, acc = lib.nearest(0.91)
    assert acc == 0.90 and w.tolist() == [1.0, 1.0]
    assert lib.nearest(0.85)[1] == 0.80


def test_empty_library():
    with pytest.raises(ConfigError):
        ReferenceLibrary().nearest(0.5)


def test_round_trip(tmp_path, gen):
    lib = ReferenceLibrary()
    for acc in (0.1, 0.512345678901234567, 0.9):
        lib.add(gen.standard_normal(7), acc)
    lib.save(tmp_path / "lib")
    back = ReferenceLibrary.load(tmp_path / "lib")
    assert len(back) == 3
    for (a, x), (b, y) in zip(lib.checkpoints, back.checkpoints):
        assert a.tobytes() == b.tobytes() and x == y


def test_size_mismatch(tmp_path):
    lib = ReferenceLibrary([(np.zeros(4), 0.5)])
    lib.save(tmp_path)
    (tmp_path / "ckpt0000.f64").write_bytes(np.zeros(3).tobytes())
    with pytest.raises(FormatError):
        ReferenceLibrary.load(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(ConfigError):
        ReferenceLibrary.load(tmp_path)
