import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from bernoulli_ad import io
from bernoulli_ad.codec import BinaryAutoencoder, BitplaneCodec
from bernoulli_ad.config import DEFAULTS, RunConfig
from bernoulli_ad.denoiser import Architecture, ConvDenoiser
from bernoulli_ad.schedule import build_schedule

shapes = array_shapes(min_dims=0, max_dims=4, min_side=0, max_side=7)


@settings(max_examples=80)
@given(arrays(np.float64, shapes, elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_float_round_trip(arr):
    back = io.tensor_from_bytes(io.tensor_to_bytes(arr, "float64"))
    assert back.shape == arr.shape
    assert back.tobytes() == arr.astype("<f8").tobytes()


@settings(max_examples=80)
@given(arrays(np.uint8, shapes, elements=st.integers(0, 1)))
def test_bit_round_trip(arr):
    data = io.tensor_to_bytes(arr, "bits")
    back = io.tensor_from_bytes(data)
    assert back.shape == arr.shape and np.array_equal(back, arr)
    header = 4 + 4 + 8 * arr.ndim
    assert len(data) == header + (arr.size + 7) // 8


def test_header_layout():
    data = io.tensor_to_bytes(np.zeros((2, 3)), "float64")
    assert data[:4] == b"BDT1"
    assert data[4] == io.TAG_F64 and data[5] == 2
    assert int.from_bytes(data[8:16], "little") == 2
    assert int.from_bytes(data[16:24], "little") == 3
    assert len(data) == 24 + 6 * 8


@pytest.mark.parametrize("blob", [b"", b"XXXX" + bytes(10), io.tensor_to_bytes(np.ones(4))[:-1]])
def test_malformed_rejected(blob):
    with pytest.raises(io.FormatError):
        io.tensor_from_bytes(blob)


def test_bits_rejects_non_binary():
    with pytest.raises(ValueError):
        io.tensor_to_bytes(np.array([0, 2]), "bits")


def test_file_round_trip_leaves_no_temp(tmp_path):
    arr = np.arange(12.0).reshape(3, 4) / 11
    io.write_tensor(tmp_path / "sub" / "a.bdt", arr)
    assert np.array_equal(io.read_tensor(tmp_path / "sub" / "a.bdt"), arr)
    assert [p.name for p in (tmp_path / "sub").iterdir()] == ["a.bdt"]


def test_pgm_round_trip(tmp_path):
    img = np.linspace(0, 1, 20).reshape(4, 5)
    io.write_pgm(tmp_path / "x.pgm", img)
    raw = (tmp_path / "x.pgm").read_bytes()
    assert raw.startswith(b"P5\n5 4\n255\n")
    back = io.read_pgm(tmp_path / "x.pgm")
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_pgm_per_channel(tmp_path):
    paths = io.write_image_pgms(tmp_path / "img", np.zeros((3, 4, 4)))
    assert len(paths) == 3 and all(p.exists() for p in paths)


def test_kv_round_trip():
    d = {"a.b": 1, "c": "x y", "d": 0.25, "e": True}
    parsed = io.parse_kv(io.format_kv(d))
    assert parsed == {k: str(v) for k, v in d.items()}


def test_kv_ignores_comments_rejects_garbage():
    assert io.parse_kv("# note\n\nk = v\n") == {"k": "v"}
    with pytest.raises(io.FormatError):
        io.parse_kv("no equals sign here")


class TestRunConfig:
    def test_defaults_carry_reference_values(self):
        cfg = RunConfig()
        assert cfg["schedule.T"] == 1000
        assert cfg["train.learning_rate"] == 1e-4 and cfg["train.batch_size"] == 32
        assert cfg["inference.L"] == 200 and cfg["inference.P"] == 0.5

    def test_text_round_trip(self):
        cfg = RunConfig()
        cfg.update_from({"inference.P": "0.7", "denoiser.recenter": "false", "seed": "9"})
        back = RunConfig.from_text(cfg.to_text())
        assert back == cfg
        assert back["inference.P"] == 0.7 and back["denoiser.recenter"] is False

    def test_unknown_key_rejected(self):
        with pytest.raises(io.FormatError):
            RunConfig.from_text("inference.Q = 3\n")

    def test_bad_value_rejected(self):
        with pytest.raises(io.FormatError):
            RunConfig.from_text("schedule.T = many\n")

    def test_builders(self):
        cfg = RunConfig()
        assert cfg.schedule() == build_schedule("linear", 1000)
        assert isinstance(cfg.codec(), BitplaneCodec)
        cfg["codec.kind"] = "learned"
        assert isinstance(cfg.codec(), BinaryAutoencoder)
        assert cfg.inference_config().L == 200
        assert cfg.architecture(4).channels == 4
        assert set(cfg) == set(DEFAULTS)


def test_checkpoint_round_trip(tmp_path):
    den = ConvDenoiser(Architecture(channels=2, width=4, n_blocks=1, emb_dim=4), seed=1,
                       zero_output=False)
    sched = build_schedule("cosine", 50)
    io.save_checkpoint(tmp_path / "ckpt", den, sched, iteration=7, seed=3)
    den2, sched2, meta = io.load_checkpoint(tmp_path / "ckpt")
    assert sched2 == sched and sched2.kind == "cosine"
    assert np.array_equal(den2.params, den.params)
    assert meta["iteration"] == "7" and meta["seed"] == "3"
    z = np.ones((1, 2, 4, 4), np.uint8)
    assert np.array_equal(den.predict(z, 5), den2.predict(z, 5))
    # overwriting is atomic and leaves no staging directories behind
    io.save_checkpoint(tmp_path / "ckpt", den, sched, iteration=8)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ckpt"]


@pytest.mark.parametrize("codec", [BitplaneCodec(bits=3, factor=2),
                                   BinaryAutoencoder(latent_channels=4, factor=2, width=4,
                                                     iterations=2, batch_size=2)])
def test_codec_round_trip(tmp_path, codec):
    X = np.random.default_rng(0).random((4, 1, 8, 8))
    codec.fit(X)
    io.save_codec(tmp_path / "c", codec)
    back = io.load_codec(tmp_path / "c")
    assert type(back) is type(codec)
    assert np.array_equal(back.encode(X), codec.encode(X))
    assert tuple(back.image_shape_) == tuple(codec.image_shape_)
