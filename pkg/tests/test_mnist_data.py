import gzip
import struct

import numpy as np
import pytest

from blitnet.mnist_data import (
    IMAGE_MAGIC,
    LABEL_MAGIC,
    DigitStream,
    IdxFormatError,
    binarize,
    load_idx_images,
    load_idx_labels,
    save_idx_images,
    save_idx_labels,
)


@pytest.fixture
def small_set(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, (12, 28, 28)).astype(np.uint8)
    labels = rng.integers(0, 10, 12).astype(np.uint8)
    img_path = tmp_path / "imgs-idx3-ubyte"
    lab_path = tmp_path / "labs-idx1-ubyte"
    save_idx_images(img_path, images)
    save_idx_labels(lab_path, labels)
    return images, labels, img_path, lab_path


class TestIdxRoundTrip:
    def test_images_byte_exact(self, small_set, tmp_path):
        images, _, img_path, _ = small_set
        loaded = load_idx_images(img_path)
        assert np.array_equal(loaded, images)
        again = tmp_path / "again-idx3-ubyte"
        save_idx_images(again, loaded)
        assert again.read_bytes() == img_path.read_bytes()

    def test_labels_byte_exact(self, small_set, tmp_path):
        _, labels, _, lab_path = small_set
        loaded = load_idx_labels(lab_path)
        assert np.array_equal(loaded, labels)
        again = tmp_path / "again-idx1-ubyte"
        save_idx_labels(again, loaded)
        assert again.read_bytes() == lab_path.read_bytes()

    def test_gzip_sniffing(self, small_set, tmp_path):
        images, labels, img_path, lab_path = small_set
        gz_img = tmp_path / "imgs-idx3-ubyte.gz"
        save_idx_images(gz_img, images)
        assert gz_img.read_bytes()[:2] == b"\x1f\x8b"
        assert np.array_equal(load_idx_images(gz_img), images)
        gz_lab = tmp_path / "labs-idx1-ubyte.gz"
        save_idx_labels(gz_lab, labels)
        assert np.array_equal(load_idx_labels(gz_lab), labels)


class TestIdxErrors:
    def test_wrong_record_type_for_images(self, small_set):
        # a label file (magic 0x801) passed to the image loader
        _, _, _, lab_path = small_set
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx_images(lab_path)

    def test_wrong_record_type_for_labels(self, small_set):
        _, _, img_path, _ = small_set
        with pytest.raises(IdxFormatError, match="magic"):
            load_idx_labels(img_path)

    def test_truncated_images_reports_offset(self, small_set, tmp_path):
        _, _, img_path, _ = small_set
        data = img_path.read_bytes()
        cut = tmp_path / "cut-idx3-ubyte"
        cut.write_bytes(data[:200])
        with pytest.raises(IdxFormatError, match="byte"):
            load_idx_images(cut)

    def test_count_mismatch(self, small_set):
        _, _, img_path, lab_path = small_set
        with pytest.raises(IdxFormatError, match="count"):
            load_idx_images(img_path, expected_count=60000)
        with pytest.raises(IdxFormatError, match="count"):
            load_idx_labels(lab_path, expected_count=11)

    def test_out_of_range_label(self, tmp_path):
        path = tmp_path / "bad-idx1-ubyte"
        path.write_bytes(struct.pack(">II", LABEL_MAGIC, 3) + bytes([3, 12, 1]))
        with pytest.raises(IdxFormatError, match="out of range"):
            load_idx_labels(path)

    def test_trailing_garbage(self, small_set, tmp_path):
        _, _, img_path, _ = small_set
        path = tmp_path / "pad-idx3-ubyte"
        path.write_bytes(img_path.read_bytes() + b"x")
        with pytest.raises(IdxFormatError, match="trailing"):
            load_idx_images(path)


class TestBinarize:
    def test_extremes(self):
        assert binarize(np.array([0], dtype=np.uint8))[0] == 0
        assert binarize(np.array([255], dtype=np.uint8))[0] == 1

    def test_boundary_inclusive(self):
        assert binarize(np.array([128], dtype=np.uint8))[0] == 1
        assert binarize(np.array([127], dtype=np.uint8))[0] == 0

    def test_all_zero_image(self):
        img = np.zeros((28, 28), dtype=np.uint8)
        assert binarize(img).sum() == 0

    def test_idempotent(self):
        rng = np.random.default_rng(1)
        img = rng.integers(0, 256, (5, 28, 28)).astype(np.uint8)
        once = binarize(img)
        assert np.array_equal(binarize(once, threshold=1), once)


class TestDigitStream:
    def make(self, n=10):
        rng = np.random.default_rng(2)
        return DigitStream((rng.random((n, 784)) < 0.2).astype(np.uint8),
                           rng.integers(0, 10, n))

    def test_cursor_and_exhaustion(self):
        s = self.make(3)
        for _ in range(3):
            img, lab = s.next()
            assert img.shape == (784,)
        with pytest.raises(StopIteration):
            s.next()
        s.reset()
        s.next()

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            DigitStream(np.zeros((3, 784), dtype=np.uint8), np.zeros(2))

    def test_rejects_unbinarized(self):
        with pytest.raises(ValueError):
            DigitStream(np.full((2, 784), 7, dtype=np.uint8), np.zeros(2))

    def test_seeded_shuffle_deterministic(self):
        s = self.make(50)
        a = s.shuffled(seed=9)
        b = s.shuffled(seed=9)
        assert np.array_equal(a.images, b.images)
        assert np.array_equal(a.labels, b.labels)
        c = s.shuffled(seed=10)
        assert not np.array_equal(a.labels, c.labels)

    def test_tiled_covers_total(self):
        s = self.make(7)
        t = s.tiled(20)
        assert len(t) == 20
        assert np.array_equal(t.images[:7], s.images)
        assert np.array_equal(t.images[7:14], s.images)
        t2 = s.tiled(20, seed=3)
        assert len(t2) == 20
        assert sorted(t2.labels[:7].tolist()) == sorted(s.labels.tolist())
