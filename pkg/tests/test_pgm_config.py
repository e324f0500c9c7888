import numpy as np
import pytest

from grfuse.config import RunConfig, load_config
from grfuse.errors import ConfigError, FormatError
from grfuse.pgm import load_pgm, save_pgm


class TestPgm:
    def test_direct_mapping(self, tmp_path):
        path = tmp_path / "t.pgm"
        path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
        img = load_pgm(str(path))
        assert np.array_equal(img, np.array([[0, 128 / 255], [1.0, 64 / 255]]))

    def test_round_trip_exact(self, tmp_path, rng):
        img = rng.random((9, 13))
        p = tmp_path / "r.pgm"
        save_pgm(img, str(p))
        loaded = load_pgm(str(p))
        q = np.floor(img * 255 + 0.5) / 255.0
        assert np.array_equal(loaded, q)
        p2 = tmp_path / "r2.pgm"
        save_pgm(loaded, str(p2))
        assert p.read_bytes() == p2.read_bytes()

    def test_all_zero_and_one_payloads(self, tmp_path):
        p = tmp_path / "z.pgm"
        save_pgm(np.zeros((3, 4)), str(p))
        assert p.read_bytes().endswith(bytes(12))
        save_pgm(np.ones((3, 4)), str(p))
        assert p.read_bytes().endswith(bytes([255] * 12))

    def test_comment_header(self, tmp_path):
        plain = tmp_path / "a.pgm"
        commented = tmp_path / "b.pgm"
        payload = bytes(range(6))
        plain.write_bytes(b"P5\n3 2\n255\n" + payload)
        commented.write_bytes(b"P5\n# made by hand\n3 2 # extents\n255\n" + payload)
        assert np.array_equal(load_pgm(str(plain)), load_pgm(str(commented)))

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.pgm"
        p.write_bytes(b"P2\n2 2\n255\n0 1 2 3")
        with pytest.raises(FormatError, match="magic"):
            load_pgm(str(p))

    def test_wrong_maxval(self, tmp_path):
        p = tmp_path / "m.pgm"
        p.write_bytes(b"P5\n2 2\n65535\n" + bytes(8))
        with pytest.raises(FormatError, match="maxval"):
            load_pgm(str(p))

    def test_truncated_payload_reports_offset(self, tmp_path):
        p = tmp_path / "t.pgm"
        p.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(FormatError, match="byte"):
            load_pgm(str(p))


class TestConfig:
    def test_empty_file_all_defaults(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("")
        assert load_config(str(p)) == RunConfig()

    def test_learning_rate_parse(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("learning_rate = 0.0001\n")
        assert load_config(str(p)).learning_rate == 1e-4

    def test_bad_value_names_line(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("learning_rate = banana\n")
        with pytest.raises(ConfigError, match=":1:"):
            load_config(str(p))

    def test_unknown_key_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("steps = 5\nlerning_rate = 0.1\n")
        with pytest.raises(ConfigError, match=":2:.*lerning_rate"):
            load_config(str(p))

    def test_comments_and_blanks(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# full line comment\n\nsteps = 7  # trailing comment\n")
        assert load_config(str(p)).steps == 7

    def test_divisibility_validated(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("image_size = 30\nblock_side = 8\n")
        with pytest.raises(ConfigError, match="divisible"):
            load_config(str(p))

    def test_zero_lr_rejected(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("learning_rate = 0\n")
        with pytest.raises(ConfigError, match="learning_rate"):
            load_config(str(p))

    def test_precision_values(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("precision = f64\n")
        assert load_config(str(p)).dtype == np.float64
        p.write_text("precision = f16\n")
        with pytest.raises(ConfigError):
            load_config(str(p))
