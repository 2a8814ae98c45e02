"""Binary tensor format and store directory round-trips."""

import json
import struct

import numpy as np
import pytest

from refrank.store import (
    StoreFormatError,
    load_store,
    read_tensor,
    validate_store,
    write_store,
    write_tensor,
)

from conftest import build_store


class TestTensorFile:
    def test_round_trip_float32(self, tmp_path):
        array = np.random.default_rng(1).normal(size=(5, 3)).astype(np.float32)
        path = tmp_path / "t.embt"
        write_tensor(path, array)
        back = read_tensor(path)
        assert back.dtype == np.float32
        np.testing.assert_array_equal(back, array)

    def test_round_trip_uint8_rank3(self, tmp_path):
        array = (np.arange(24, dtype=np.uint8)).reshape(2, 3, 4)
        path = tmp_path / "m.mask"
        write_tensor(path, array)
        np.testing.assert_array_equal(read_tensor(path), array)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "t.embt"
        path.write_bytes(b"NOPE" + b"\x00" * 20)
        with pytest.raises(StoreFormatError, match="magic"):
            read_tensor(path)

    def test_bad_version_rejected(self, tmp_path):
        path = tmp_path / "t.embt"
        header = b"EMBT" + struct.pack("<III", 9, 0, 1) + struct.pack("<Q", 0)
        path.write_bytes(header)
        with pytest.raises(StoreFormatError, match="version 9"):
            read_tensor(path)

    def test_truncated_payload_rejected(self, tmp_path):
        array = np.ones((4, 4), dtype=np.float32)
        path = tmp_path / "t.embt"
        write_tensor(path, array)
        data = path.read_bytes()
        path.write_bytes(data[:-8])
        with pytest.raises(StoreFormatError, match="payload"):
            read_tensor(path)


class TestStoreRoundTrip:
    def test_bit_identical_round_trip(self, tmp_path, tiny_store):
        root = write_store(tiny_store, tmp_path / "store")
        back = load_store(root)
        np.testing.assert_array_equal(back.image_embeddings, tiny_store.image_embeddings)
        np.testing.assert_array_equal(back.caption_embeddings, tiny_store.caption_embeddings)
        np.testing.assert_array_equal(
            back.synthetic_caption_embeddings, tiny_store.synthetic_caption_embeddings)
        np.testing.assert_array_equal(back.image_tokens, tiny_store.image_tokens)
        np.testing.assert_array_equal(back.image_token_mask, tiny_store.image_token_mask)
        np.testing.assert_array_equal(back.query_tokens, tiny_store.query_tokens)
        assert back.items == tiny_store.items
        assert back.dim == tiny_store.dim
        assert back.token_dim == tiny_store.token_dim
        assert back.normalized["image_embeddings"] is True

    def test_multivector_round_trip(self, tmp_path):
        store = build_store(multivector_rows=4)
        back = load_store(write_store(store, tmp_path / "store"))
        assert back.uses_multivector
        np.testing.assert_array_equal(back.image_multivector, store.image_multivector)

    def test_caption_lookup(self, tiny_store):
        assert tiny_store.caption_row("cap001_1") == 3
        assert tiny_store.caption_owner("cap001_1").item_id == "item001"
        with pytest.raises(KeyError, match="unknown caption_id"):
            tiny_store.caption_row("capXXX")


class TestLoadErrors:
    def test_dimension_mismatch_names_both_values(self, tmp_path, tiny_store):
        root = write_store(tiny_store, tmp_path / "store")
        manifest = json.loads((root / "manifest.json").read_text())
        manifest["dim"] = 512
        for role in ("image_embeddings", "caption_embeddings",
                     "synthetic_caption_embeddings"):
            manifest["tensors"][role]["shape"][-1] = 512
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(StoreFormatError) as err:
            load_store(root)
        assert "512" in str(err.value) and "4" in str(err.value)

    def test_non_finite_cites_file_and_row(self, tmp_path, tiny_store):
        root = write_store(tiny_store, tmp_path / "store")
        mat = read_tensor(root / "image_embeddings.embt")
        mat[2, 1] = np.nan
        write_tensor(root / "image_embeddings.embt", mat)
        with pytest.raises(StoreFormatError) as err:
            load_store(root)
        assert "image_embeddings.embt" in str(err.value)
        assert "row 2" in str(err.value)

    def test_missing_file_rejected(self, tmp_path, tiny_store):
        root = write_store(tiny_store, tmp_path / "store")
        (root / "query_tokens.embt").unlink()
        with pytest.raises(StoreFormatError, match="missing file"):
            load_store(root)

    def test_dangling_item_row_rejected(self, tmp_path, tiny_store):
        root = write_store(tiny_store, tmp_path / "store")
        manifest = json.loads((root / "manifest.json").read_text())
        manifest["items"][0]["image_row"] = 99
        (root / "manifest.json").write_text(json.dumps(manifest))
        with pytest.raises(StoreFormatError, match="image_row 99 out of range"):
            load_store(root)


class TestValidateStore:
    def test_clean_store_passes(self, tiny_store):
        assert validate_store(tiny_store).ok

    def test_zero_caption_item_flagged(self, tiny_store):
        bad = tiny_store.items[1]
        object.__setattr__(bad, "captions", ())
        object.__setattr__(bad, "caption_row_count", 0)
        report = validate_store(tiny_store)
        assert any("caption count" in v for v in report.violations)

    def test_out_of_range_caption_block_flagged(self, tiny_store):
        bad = tiny_store.items[2]
        object.__setattr__(bad, "caption_row_start", 100)
        report = validate_store(tiny_store)
        assert any("out of range" in v for v in report.violations)

    def test_zero_norm_row_flagged(self, tiny_store):
        tiny_store.image_embeddings[1] = 0.0
        report = validate_store(tiny_store)
        assert any("zero-norm row 1" in v for v in report.violations)

    def test_nan_flagged(self, tiny_store):
        tiny_store.caption_embeddings[0, 0] = np.inf
        report = validate_store(tiny_store)
        assert any("non-finite" in v for v in report.violations)

    def test_mask_shape_mismatch_flagged(self, tiny_store):
        tiny_store.image_token_mask = tiny_store.image_token_mask[:, :1]
        report = validate_store(tiny_store)
        assert any("mask shape" in v for v in report.violations)

    def test_duplicate_item_id_flagged(self):
        store = build_store()
        object.__setattr__(store.items[2], "item_id", "item000")
        report = validate_store(store)
        assert any("duplicate" in v for v in report.violations)
