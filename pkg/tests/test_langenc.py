import numpy as np
import pytest
import torch

from deskagent.langenc import (
    D_LANG,
    N_BUCKETS,
    EmptyText,
    LangEncoder,
    TrainableLangEncoder,
    load_table,
    make_table,
    save_table,
    token_bucket,
    tokenize,
)


def test_tokenize_normalizes():
    assert tokenize("Open the Drawer!") == ["open", "the", "drawer"]
    assert tokenize("  turn   on, the RED light. ") == \
        ["turn", "on", "the", "red", "light"]


def test_token_bucket_stable_across_processes():
    # sha1-based: values are fixed for all time, not per-run
    assert token_bucket("drawer") == token_bucket("drawer")
    assert 0 <= token_bucket("drawer") < N_BUCKETS


def test_encoder_deterministic_and_normalized():
    enc = LangEncoder()
    a = enc.encode("open the drawer")
    b = enc.encode("open the drawer")
    assert np.array_equal(a.vector, b.vector)
    assert a.vector.shape == (D_LANG,)
    assert np.linalg.norm(a.vector) == pytest.approx(1.0, abs=1e-6)
    assert a.source_text == "open the drawer"


def test_encoding_is_order_invariant_but_content_sensitive():
    enc = LangEncoder()
    # bag of words: word order does not matter, words do
    assert np.allclose(enc.encode("drawer the open").vector,
                       enc.encode("open the drawer").vector)
    assert not np.allclose(enc.encode("close the drawer").vector,
                           enc.encode("open the drawer").vector)


def test_empty_text_rejected():
    enc = LangEncoder()
    with pytest.raises(EmptyText):
        enc.encode("")
    with pytest.raises(EmptyText):
        enc.encode("  ,.  ")


def test_table_round_trip(tmp_path):
    table = make_table()
    path = tmp_path / "table.npy"
    save_table(str(path), table)
    assert np.array_equal(load_table(str(path)), table)


def test_trainable_encoder_matches_frozen_at_init():
    frozen = LangEncoder()
    trainable = TrainableLangEncoder()
    text = "turn on the green light"
    with torch.no_grad():
        out = trainable([text])[0].numpy()
    assert np.allclose(out, frozen.encode(text).vector, atol=1e-6)


def test_trainable_encoder_has_gradients():
    trainable = TrainableLangEncoder()
    out = trainable(["open the drawer"]).sum()
    out.backward()
    assert trainable.table.grad is not None
    assert float(trainable.table.grad.abs().sum()) > 0
