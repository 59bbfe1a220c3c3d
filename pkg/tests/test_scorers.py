import json
import math
import random
import string

import pytest

from beecurate.records import LossRecord, RecordError, SampleRecord, read_samples, write_losses
from beecurate.scorers import (
    START,
    TOY_SCORER_ID,
    UNK,
    BigramModel,
    import_external_losses,
    score_dataset,
    score_sample,
    train_bigram,
)


def sample(answer, sid="s1"):
    return SampleRecord(id=sid, question="q", answer=answer)


def corpus(*answers):
    return [sample(a, sid=f"s{i}") for i, a in enumerate(answers)]


class TestTrainBigram:
    def test_single_answer_tally(self):
        model = train_bigram(corpus("aa"))
        assert model.alphabet == ("a", START, UNK)
        assert model.counts == {(START, "a"): 1, ("a", "a"): 1}
        assert model.context_totals == {START: 1, "a": 1}

    def test_training_is_deterministic(self):
        data = corpus("hello", "world", "hello again")
        assert train_bigram(data) == train_bigram(data)

    def test_two_answer_hand_tally(self):
        model = train_bigram(corpus("ab", "ba"))
        assert model.counts[("a", "b")] == 1
        assert model.counts[("b", "a")] == 1
        assert model.counts[(START, "a")] == 1
        assert model.counts[(START, "b")] == 1
        assert model.context_totals == {START: 2, "a": 1, "b": 1}

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            train_bigram([])

    def test_context_totals_consistency(self):
        model = train_bigram(corpus("the cat", "the hat", "a cat sat"))
        for context in model.alphabet:
            total = sum(c for (a, _), c in model.counts.items() if a == context)
            assert model.context_totals.get(context, 0) == total

    def test_smoothed_distributions_sum_to_one(self):
        model = train_bigram(corpus("mississippi", "delta", "12,345.67"))
        for context in model.alphabet:
            total = sum(model.prob(context, b) for b in model.alphabet)
            assert total == pytest.approx(1.0, abs=1e-12)
            for b in model.alphabet:
                assert 0.0 < model.prob(context, b) <= 1.0


class TestScoreSample:
    def test_smoothing_keeps_loss_positive_on_trained_answer(self):
        # Corpus of just "aa": unsmoothed the loss would be zero; add-one
        # smoothing gives -ln((c+1)/(c+3)) = ln 2 per position.
        model = train_bigram(corpus("aa"))
        record = score_sample(model, sample("aaaa"))
        assert record.loss == pytest.approx(math.log(2.0), rel=1e-15)
        assert record.loss > 0.0

    def test_zero_count_model_gives_ln_v_exactly(self):
        # With no counts anywhere every smoothed probability is uniform.
        model = BigramModel(alphabet=("a", "b", "c", START, UNK), counts={}, context_totals={})
        assert score_sample(model, sample("a")).loss == math.log(5)
        assert score_sample(model, sample("cb")).loss == math.log(5)

    def test_two_answer_corpus_scored_by_hand(self):
        # From the hand tally: P(a|start) = 2/6, P(b|a) = 2/5 with V = 4.
        model = train_bigram(corpus("ab", "ba"))
        record = score_sample(model, sample("ab"))
        expected = -(math.log(2 / 6) + math.log(2 / 5)) / 2
        assert record.loss == pytest.approx(expected, rel=1e-15)

    def test_unknown_characters_use_unk(self):
        model = train_bigram(corpus("ab"))
        v = model.vocab_size  # {a, b, start, unk}
        assert v == 4
        # "zz": P(unk|start) = 1/(1+4), then P(unk|unk) = 1/4 (unseen context).
        record = score_sample(model, sample("zz"))
        expected = -(math.log(1 / 5) + math.log(1 / 4)) / 2
        assert record.loss == pytest.approx(expected, rel=1e-15)

    def test_scorer_id_and_bounds(self):
        model = train_bigram(corpus("some answer", "another answer"))
        record = score_sample(model, sample("some answer"))
        assert record.scorer_id == TOY_SCORER_ID
        assert 0.0 <= record.loss
        assert math.isfinite(record.loss)

    def test_training_corpus_losses_bounded_by_ln_v_here(self):
        data = corpus("abcd", "bcda", "cdab", "dabc")
        model = train_bigram(data)
        bound = math.log(model.vocab_size)
        for s in data:
            assert score_sample(model, s).loss <= bound


class TestScoreDataset:
    def test_empty_input(self):
        model = train_bigram(corpus("x"))
        assert score_dataset([], model) == []

    def test_order_matches_input(self):
        data = corpus("alpha", "beta", "gamma")
        model = train_bigram(data)
        records = score_dataset(data, model)
        assert [r.sample_id for r in records] == [s.id for s in data]

    def test_rescoring_is_bit_identical(self):
        rng = random.Random(21)
        data = [
            sample(
                "".join(rng.choice(string.ascii_lowercase + " .,") for _ in range(rng.randint(3, 80))),
                sid=f"s{i}",
            )
            for i in range(100)
        ]
        model = train_bigram(data)
        first = score_dataset(data, model)
        second = score_dataset(data, model)
        assert first == second
        assert [r.loss for r in first] == [r.loss for r in second]

    def test_parallel_scoring_matches_serial(self):
        data = corpus(*(f"answer text number {i}" for i in range(40)))
        model = train_bigram(data)
        assert score_dataset(data, model, workers=4) == score_dataset(data, model, workers=1)

    def test_toy_dataset_losses_within_ln_v(self, toy_samples_path):
        # Regression property of the bundled corpus (verified once, frozen).
        data = read_samples(toy_samples_path)
        model = train_bigram(data)
        bound = math.log(model.vocab_size)
        records = score_dataset(data, model)
        assert all(0.0 <= r.loss <= bound for r in records)


class TestImportExternalLosses:
    def make_file(self, tmp_path, records):
        path = tmp_path / "ext_losses.jsonl"
        write_losses(records, path, header="external evaluator v1")
        return path

    def test_exact_cover_accepted_verbatim(self, tmp_path):
        records = [
            LossRecord(sample_id=f"s{i}", loss=0.5 + i, scorer_id="ext-model") for i in range(5)
        ]
        path = self.make_file(tmp_path, records)
        assert import_external_losses(path, {f"s{i}" for i in range(5)}) == records

    def test_missing_id_named(self, tmp_path):
        records = [LossRecord(sample_id="s1", loss=1.0, scorer_id="ext")]
        path = self.make_file(tmp_path, records)
        with pytest.raises(RecordError, match="s7"):
            import_external_losses(path, {"s1", "s7"})

    def test_unknown_id_named(self, tmp_path):
        records = [
            LossRecord(sample_id="s1", loss=1.0, scorer_id="ext"),
            LossRecord(sample_id="intruder", loss=1.0, scorer_id="ext"),
        ]
        path = self.make_file(tmp_path, records)
        with pytest.raises(RecordError, match="intruder"):
            import_external_losses(path, {"s1"})

    def test_duplicate_id_named(self, tmp_path):
        path = tmp_path / "ext_losses.jsonl"
        path.write_text(
            json.dumps({"sample_id": "s1", "loss": 1.0, "scorer_id": "ext-a"})
            + "\n"
            + json.dumps({"sample_id": "s1", "loss": 2.0, "scorer_id": "ext-b"})
            + "\n"
        )
        with pytest.raises(RecordError, match="s1"):
            import_external_losses(path, {"s1"})

    def test_non_finite_loss_named(self, tmp_path):
        path = tmp_path / "ext_losses.jsonl"
        path.write_text(json.dumps({"sample_id": "s1", "loss": 1e999, "scorer_id": "ext"}) + "\n")
        with pytest.raises(RecordError):
            import_external_losses(path, {"s1"})
