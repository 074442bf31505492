import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from planefield_lab.errors import FormatError
from planefield_lab.formats import (dumps, read_checkpoint, read_field_samples, read_jiggling, read_mesh,
                                    sample_pair, write_field_samples, write_jiggling, write_mesh)
from planefield_lab.presets import make_pair
from planefield_lab.triangulation import LatticeSpec, jiggle, kuhn_triangulation


def roundtrip(writer, reader, obj):
    return reader(io.StringIO(dumps(writer, obj)))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_field_samples_roundtrip_exactly(seed, count):
    pair = make_pair("twisting", 4, 0.3)
    pts = np.random.default_rng(seed).normal(size=(count, 4)) * 10.0 ** np.random.default_rng(seed).integers(-8, 8)
    x, f, w = sample_pair(pair, pts)
    x2, f2, w2 = roundtrip(lambda t, o: write_field_samples(t, *o), read_field_samples, (x, f, w))
    assert np.array_equal(x, x2) and np.array_equal(f, f2) and np.array_equal(w, w2)


def test_mesh_and_jiggling_roundtrip():
    base = kuhn_triangulation(LatticeSpec(3, 2, [(-1.0, 1.0)] * 3))
    jig, cx = jiggle(base, 0.05, 4)
    again = roundtrip(write_mesh, read_mesh, cx)
    assert np.array_equal(again.vertices, cx.vertices) and np.array_equal(again.simplices, cx.simplices)
    assert np.array_equal(again.orientation, cx.orientation)
    j2 = roundtrip(write_jiggling, read_jiggling, jig)
    assert np.array_equal(j2.displacement, jig.displacement) and j2.seed == 4 and j2.epsilon == jig.epsilon


@pytest.mark.parametrize("text", [
    "",
    "4\n",
    "4 2\n0 0 0 0 | 1 0 0 0 0 1 0 0\n",
    "4 2\n0 0 0 | 1 0 0 0 0 1 0 0 | " + " ".join(["0"] * 16) + "\n",
    "4 2\n0 0 0 x | 1 0 0 0 0 1 0 0 | " + " ".join(["0"] * 16) + "\n",
    "4 5\n",
])
def test_field_sample_errors(text):
    with pytest.raises(FormatError):
        read_field_samples(io.StringIO(text))


@pytest.mark.parametrize("text", [
    "DIM 2\nVERTS 1\n0 0\nCELLS 1\n0 0 3\n",
    "DIM 2\nVERTS 3\n0 0\n",
    "DIM 2\nPOINTS 1\n",
])
def test_mesh_errors(text):
    with pytest.raises(FormatError):
        read_mesh(io.StringIO(text))


def test_jiggling_errors():
    with pytest.raises(FormatError):
        read_jiggling(io.StringIO("SEED 1\n0 0 0\n"))
    with pytest.raises(FormatError):
        read_jiggling(io.StringIO("EPSILON 0.1\n1 0 0\n"))


def test_checkpoint_errors():
    with pytest.raises(FormatError):
        read_checkpoint(io.StringIO("PLANEFIELD-STATE 2\n"))
    with pytest.raises(FormatError):
        read_checkpoint(io.StringIO("PLANEFIELD-STATE 1\nMESH x\nDIM 2\n"))
