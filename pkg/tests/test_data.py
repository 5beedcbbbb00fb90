import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from archlab.data import (
    BatchBuilder,
    ObjectiveKind,
    PackedBatch,
    TokenCorpus,
    Vocab,
    apply_spans,
    check_pair,
    corrupt_spans,
    corrupted_lengths,
    decorrupt,
    detokenize,
    dump_batch,
    join_documents,
    load_batch,
    make_mlm_batch,
    pack_flm,
    pack_plm,
    raw_length_for_budget,
    read_corpus,
    synthetic_pattern_corpus,
    token_accounting,
    tokenize,
    write_corpus,
)
from archlab.data.prompts import RenderTooLong, prompt_batch, with_empty_encoder

VOCAB = Vocab()


def test_byte_round_trip():
    text = "héllo, wörld"
    assert detokenize(tokenize(text)).decode() == text


def test_detokenize_rejects_specials():
    with pytest.raises(ValueError):
        detokenize([VOCAB.eos_id])
    assert detokenize([VOCAB.eos_id, 2 + ord("a")], skip_special=True) == b"a"


def test_vocab_layout():
    assert VOCAB.sentinel(0) == 512 - 64
    assert VOCAB.is_sentinel(VOCAB.sentinel(63))
    with pytest.raises(ValueError):
        VOCAB.sentinel(64)
    with pytest.raises(ValueError):
        Vocab(size=300)


def test_join_documents_terminates_with_eos():
    s = join_documents(["ab", "c"])
    assert s.tolist() == [2 + 97, 2 + 98, 1, 2 + 99, 1]


def test_corpus_file_round_trip(tmp_path):
    docs = synthetic_pattern_corpus(5, 0)
    write_corpus(docs, tmp_path / "c.txt")
    assert read_corpus(tmp_path / "c.txt") == docs


def test_heldout_split():
    c = TokenCorpus.from_documents(synthetic_pattern_corpus(100, 0))
    assert c.heldout.size == round(c.n_tokens * 0.02)
    with pytest.raises(ValueError):
        TokenCorpus.from_documents([])


def test_objective_parse_and_pairs():
    assert ObjectiveKind.parse({"name": "MLM", "mask_rate": 0.2}).mask_rate == 0.2
    with pytest.raises(ValueError):
        ObjectiveKind.parse("CLM")
    check_pair("ND", "PLM")
    with pytest.raises(ValueError):
        check_pair("CD", "PLM")


def test_flm_fraction_and_shift():
    s = np.arange(2, 2 + 33)
    b = pack_flm(s, 8, 4)
    assert token_accounting(b)["fraction"] == 1.0
    assert np.array_equal(b.target_ids.reshape(-1), s[1:33])
    with pytest.raises(ValueError, match="insufficient"):
        pack_flm(s[:10], 8, 4)


def test_flm_end_of_stream_gets_eos():
    b = pack_flm(np.arange(2, 10), 4, 2)
    assert b.target_ids[-1, -1] == VOCAB.eos_id


@pytest.mark.parametrize("ed", [False, True])
def test_plm_rows_train_exactly_half(ed):
    rng = np.random.default_rng(0)
    pairs = [(rng.integers(2, 200, 17), rng.integers(2, 200, 17)) for _ in range(50)]
    b = pack_plm(pairs, 16, rng, encoder_decoder=ed)
    assert b.loss_mask.sum(axis=1).tolist() == [16] * 50
    assert token_accounting(b)["fraction"] == 0.5
    assert np.all(b.prefix_lens.sum(axis=1) == 16)


def test_plm_no_loss_on_prefix():
    rng = np.random.default_rng(1)
    pairs = [(rng.integers(2, 200, 9), rng.integers(2, 200, 9)) for _ in range(20)]
    b = pack_plm(pairs, 8, rng)
    for r in range(20):
        pa, pb = b.prefix_lens[r]
        assert not b.loss_mask[r, :pa].any() and b.loss_mask[r, pa:8].all()
        assert not b.loss_mask[r, 8 : 8 + pb].any() and b.loss_mask[r, 8 + pb :].all()


def test_plm_split_is_uniform():
    rng = np.random.default_rng(2)
    pairs = [(np.arange(2, 19), np.arange(2, 19))] * 2000
    splits = pack_plm(pairs, 16, rng).prefix_lens[:, 0]
    assert splits.min() == 1 and splits.max() == 16
    assert abs(splits.mean() - 8.5) < 0.2


def test_corrupted_lengths_at_626():
    assert raw_length_for_budget(626) == 569
    assert corrupted_lengths(569) == (512, 114)


def test_apply_spans_layout():
    toks = list(range(2, 12))
    sc = apply_spans(toks, [(1, 2), (5, 1)], VOCAB)
    s0, s1, s2 = (VOCAB.sentinel(k) for k in range(3))
    assert sc.corrupted_input == [2, s0, 5, 6, s1, 8, 9, 10, 11]
    assert sc.targets == [s0, 3, 4, s1, 7, s2]
    with pytest.raises(ValueError, match="adjacent"):
        apply_spans(toks, [(1, 2), (3, 1)], VOCAB)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(2, 257), min_size=8, max_size=200), st.integers(0, 2**32 - 1))
def test_decorrupt_inverts_corruption(tokens, seed):
    sc = corrupt_spans(tokens, 0.15, 3.0, VOCAB, np.random.default_rng(seed))
    assert decorrupt(sc.corrupted_input, sc.targets, VOCAB) == tokens
    sentinels = [t for t in sc.corrupted_input if VOCAB.is_sentinel(t)]
    assert sentinels == sorted(set(sentinels))
    assert sum(n for _, n in sc.spans) == sc.n_masked


def test_corrupt_too_short():
    with pytest.raises(ValueError):
        corrupt_spans([2, 3, 4], 0.15, 3.0, VOCAB, np.random.default_rng(0))


@pytest.mark.parametrize("arch", ["CD", "ND", "ED"])
def test_mlm_batch_trains_only_targets(arch):
    rng = np.random.default_rng(0)
    exs = [corrupt_spans(rng.integers(2, 200, 40), 0.15, 3.0, VOCAB, rng) for _ in range(3)]
    b = make_mlm_batch(exs, arch, 64)
    for r, ex in enumerate(exs):
        trained = b.target_ids[r][b.loss_mask[r]].tolist()
        assert trained == ex.targets[1:] + [VOCAB.eos_id]
    if arch == "ND":
        assert b.prefix_lens[:, 0].tolist() == [len(e.corrupted_input) for e in exs]
    with pytest.raises(ValueError, match="overflows"):
        make_mlm_batch(exs, arch, 20)


@pytest.mark.parametrize("arch,objective", [(a, o) for a in ("CD", "ND", "ED") for o in ("FLM", "PLM", "MLM")
                                             if (a, o) != ("CD", "PLM")])
def test_builder_batches(arch, objective):
    stream = join_documents(synthetic_pattern_corpus(20, 0))
    bb = BatchBuilder(stream, objective, arch, 32, 4, VOCAB)
    a = bb.sample(np.random.default_rng(5))
    b = bb.sample(np.random.default_rng(5))
    assert np.array_equal(a.input_ids, b.input_ids)
    assert a.tokens_seen() <= 4 * 32
    fixed = bb.fixed_batches(2)
    assert len(fixed) == 2 and fixed[0].objective == objective


def test_batch_dump_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    exs = [corrupt_spans(rng.integers(2, 200, 40), 0.15, 3.0, VOCAB, rng) for _ in range(2)]
    b = make_mlm_batch(exs, "ED", 64)
    dump_batch(b, tmp_path / "b.jsonl")
    c = load_batch(tmp_path / "b.jsonl")
    for name in ("input_ids", "target_ids", "loss_mask", "segment_ids", "encoder_ids", "encoder_segments"):
        assert np.array_equal(getattr(b, name), getattr(c, name))


def test_batch_rejects_loss_on_padding():
    with pytest.raises(ValueError, match="padding"):
        PackedBatch([[2, 0]], [[3, 0]], [[True, True]], [[0, -1]], "FLM")


@pytest.mark.parametrize("arch", ["CD", "ND", "ED"])
def test_prompt_batch_trains_answer_and_eos(arch):
    pairs = [([2, 3, 4], [5, 6]), ([7], [8, 9, 10])]
    b = prompt_batch(pairs, arch)
    for r, (_, a) in enumerate(pairs):
        assert b.target_ids[r][b.loss_mask[r]].tolist() == a + [VOCAB.eos_id]
    with pytest.raises(RenderTooLong):
        prompt_batch(pairs, arch, seq_len=3)


def test_empty_encoder_routing():
    b = with_empty_encoder(pack_flm(np.arange(2, 20), 4, 2))
    assert b.encoder_ids.tolist() == [[VOCAB.eos_id]] * 2
    assert b.tokens_seen() == 8 + 2
    packed = PackedBatch([[2, 3, 4, 0]], [[3, 4, 5, 0]], [[1, 1, 1, 0]], [[0, 0, 1, -1]], "FLM")
    assert with_empty_encoder(packed).encoder_segments.tolist() == [[0, 1]]
    with pytest.raises(ValueError):
        with_empty_encoder(b)
