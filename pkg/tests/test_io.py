import json
import os
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from neurodyn import io
from neurodyn.denoise import DaeConfig, init_dae
from neurodyn.errors import ContractError
from neurodyn.multitask import MtlConfig, init_mtl
from neurodyn.plrnn import init_params
from neurodyn.sigproc import Recording


def _rec(C=2, T=5, seed=0, names=None):
    data = np.random.default_rng(seed).normal(size=(C, T))
    return Recording.from_array(data, 160.0, names or [f"ch{c}" for c in range(C)])


def _same(a, b):
    return (a.channel_names == b.channel_names and a.sample_rate_hz == b.sample_rate_hz
            and a.data.tobytes() == b.data.tobytes())


class TestNdts:
    def test_layout(self):
        rec = Recording.from_array(np.array([[1.0, 2.0], [3.0, 4.0]]), 250.0, ["Cz", "Pz"])
        buf = io.encode_recording(rec)
        expected = (b"NDTS" + struct.pack("<I", 1) + struct.pack("<I", 2) + struct.pack("<Q", 2)
                    + struct.pack("<d", 250.0) + b"\x02\x00Cz" + b"\x02\x00Pz"
                    + struct.pack("<4d", 1.0, 2.0, 3.0, 4.0))
        assert buf == expected

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 4), st.integers(1, 50), st.integers(0, 2**31))
    def test_roundtrip_bit_exact(self, C, T, seed):
        rec = _rec(C, T, seed, names=[f"é{c}" for c in range(C)])
        assert _same(io.decode_recording(io.encode_recording(rec)), rec)

    def test_special_values(self):
        data = np.array([[np.nan, np.inf, -0.0, 5e-324]])
        buf = io.encode_recording(Recording(("x",), 1.0, data, {}))
        out = io.decode_recording(buf).data
        assert out.tobytes() == data.tobytes()

    def test_file_roundtrip(self, tmp_path):
        rec = _rec()
        io.write_recording(tmp_path / "a.ndts", rec)
        assert _same(io.read_recording(tmp_path / "a.ndts"), rec)

    def test_bad_magic(self):
        buf = b"XXXX" + io.encode_recording(_rec())[4:]
        with pytest.raises(io.FormatError):
            io.decode_recording(buf)

    @pytest.mark.parametrize("cut", [6, 20, 27, 30, -1])
    def test_truncated(self, cut):
        buf = io.encode_recording(_rec())
        with pytest.raises(io.FormatError):
            io.decode_recording(buf[:cut])

    def test_bad_version(self):
        buf = bytearray(io.encode_recording(_rec()))
        buf[4] = 2
        with pytest.raises(io.FormatError):
            io.decode_recording(bytes(buf))


class TestCsv:
    def test_roundtrip(self, tmp_path):
        rec = _rec(3, 7)
        io.write_csv(tmp_path / "a.csv", rec)
        back = io.load_recording(tmp_path / "a.csv", rate=160.0)
        assert _same(back, rec)
        assert (tmp_path / "a.csv").read_text().splitlines()[0] == "ch0,ch1,ch2"

    def test_needs_rate(self, tmp_path):
        io.write_csv(tmp_path / "a.csv", _rec())
        with pytest.raises(ContractError):
            io.read_csv(tmp_path / "a.csv", None)

    def test_malformed(self, tmp_path):
        (tmp_path / "b.csv").write_text("a,b\n1,2\n3\n")
        with pytest.raises(io.FormatError):
            io.read_csv(tmp_path / "b.csv", 100)
        (tmp_path / "c.csv").write_text("a\nfoo\n")
        with pytest.raises(io.FormatError):
            io.read_csv(tmp_path / "c.csv", 100)
        (tmp_path / "d.csv").write_text("a\n")
        with pytest.raises(io.FormatError):
            io.read_csv(tmp_path / "d.csv", 100)


class TestNdck:
    def test_layout(self):
        buf = io.encode_checkpoint({"w": np.array([[1.0, 2.0]])})
        expected = (b"NDCK" + struct.pack("<II", 1, 1) + struct.pack("<H", 1) + b"w" + struct.pack("<B", 2)
                    + struct.pack("<2Q", 1, 2) + struct.pack("<2d", 1.0, 2.0))
        assert buf == expected

    def test_roundtrip_ranks(self):
        t = {"s": np.array(3.5), "v": np.arange(4.0), "m": np.ones((2, 3)), "t": np.zeros((2, 0, 1))}
        back = io.decode_checkpoint(io.encode_checkpoint(t))
        assert list(back) == list(t)
        for k in t:
            assert back[k].shape == t[k].shape and back[k].tobytes() == t[k].tobytes()

    def test_truncation_and_trailing(self):
        buf = io.encode_checkpoint({"w": np.ones(3)})
        for cut in (8, 14, len(buf) - 1):
            with pytest.raises(io.FormatError):
                io.decode_checkpoint(buf[:cut])
        with pytest.raises(io.FormatError):
            io.decode_checkpoint(buf + b"\x00")
        with pytest.raises(io.FormatError):
            io.decode_checkpoint(b"NDTS" + buf[4:])

    def test_sidecar(self, tmp_path):
        io.write_checkpoint(tmp_path / "m.ndck", {"a": np.ones(2)}, {"seed": 3})
        tensors, meta = io.read_checkpoint(tmp_path / "m.ndck")
        assert meta == {"seed": 3} and np.array_equal(tensors["a"], np.ones(2))
        os.unlink(io.meta_path(tmp_path / "m.ndck"))
        assert io.read_checkpoint(tmp_path / "m.ndck")[1] == {}


class TestModelCheckpoints:
    def test_plrnn(self, tmp_path):
        p = init_params("clipped_shallow", 3, 8, 2, np.random.default_rng(0))
        io.save_plrnn(tmp_path / "p.ndck", p, {"seed": 0})
        back, meta = io.load_plrnn(tmp_path / "p.ndck")
        assert back.variant == p.variant and meta["seed"] == 0
        for k, v in p.arrays().items():
            assert back.arrays()[k].tobytes() == v.tobytes()

    def test_dae_and_mtl(self, tmp_path):
        d = init_dae(2, DaeConfig(latent_channels=2, hidden_channels=3), np.random.default_rng(0))
        io.save_dae(tmp_path / "d.ndck", d)
        assert io.load_dae(tmp_path / "d.ndck")[0] == d
        m = init_mtl(2, MtlConfig.toy(), np.random.default_rng(0))
        io.save_mtl(tmp_path / "m.ndck", m)
        assert io.load_mtl(tmp_path / "m.ndck")[0] == m

    def test_kind_mismatch(self, tmp_path):
        d = init_dae(1, DaeConfig(latent_channels=2, hidden_channels=3))
        io.save_dae(tmp_path / "d.ndck", d)
        with pytest.raises(io.FormatError):
            io.load_mtl(tmp_path / "d.ndck")


class TestJson:
    def test_plain_conversion(self):
        obj = {"a": np.float64(1.5), "b": np.arange(3), "c": (1, 2), "d": float("inf")}
        assert json.loads(io.dumps_json(obj)) == {"a": 1.5, "b": [0, 1, 2], "c": [1, 2], "d": "inf"}

    def test_atomic_write_leaves_no_temp(self, tmp_path):
        io.atomic_write_json(tmp_path / "r.json", {"x": 1})
        assert os.listdir(tmp_path) == ["r.json"]
        assert io.read_json(tmp_path / "r.json") == {"x": 1}

    def test_failed_write_keeps_old_file(self, tmp_path):
        target = tmp_path / "r.json"
        io.atomic_write_json(target, {"x": 1})
        with pytest.raises(TypeError):
            io.atomic_write_json(target, {"x": object()})
        assert io.read_json(target) == {"x": 1}
        assert os.listdir(tmp_path) == ["r.json"]
