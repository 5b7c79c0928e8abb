import pytest

from nertrainer.conll import (
    Block,
    MalformedTags,
    format_conll,
    parse_conll,
    read_weights,
    strict_runs,
    tolerant_runs,
)

SAMPLE = "alice\tB-person\nmet\tO\nbob\tB-person\n\nrivers\tO\nflow\tO\n"


class TestConll:
    def test_parse(self):
        blocks = parse_conll(SAMPLE)
        assert len(blocks) == 2
        assert blocks[0].tokens == ("alice", "met", "bob")
        assert blocks[0].tags == ("B-person", "O", "B-person")
        assert blocks[1].tags == ("O", "O")

    def test_round_trip(self):
        assert format_conll(parse_conll(SAMPLE)) == SAMPLE

    def test_empty(self):
        assert parse_conll("") == []
        assert format_conll([]) == ""

    def test_missing_tab_rejected(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_conll("alice B-person\n")

    def test_block_length_mismatch(self):
        with pytest.raises(ValueError, match="equal length"):
            Block(("a", "b"), ("O",))


class TestWeights:
    def test_read(self, tmp_path):
        path = tmp_path / "w"
        path.write_text("1\n5\n1.5\n\n")
        assert read_weights(path) == [1.0, 5.0, 1.5]

    def test_nonpositive_rejected(self, tmp_path):
        path = tmp_path / "w"
        path.write_text("1\n0\n")
        with pytest.raises(ValueError, match="positive"):
            read_weights(path)

    def test_non_number_rejected(self, tmp_path):
        path = tmp_path / "w"
        path.write_text("five\n")
        with pytest.raises(ValueError, match="not a number"):
            read_weights(path)


class TestStrictRuns:
    def test_runs(self):
        tags = ("O", "B-a", "I-a", "B-b", "O", "B-a")
        assert strict_runs(tags) == [(1, 2, "a"), (3, 3, "b"), (5, 5, "a")]

    def test_orphan_continuation_rejected(self):
        with pytest.raises(MalformedTags, match="position 0"):
            strict_runs(("I-a", "O"))

    def test_class_switch_rejected(self):
        with pytest.raises(MalformedTags):
            strict_runs(("B-a", "I-b"))

    def test_unknown_tag_rejected(self):
        with pytest.raises(MalformedTags, match="unknown tag"):
            strict_runs(("B-a", "X"))

    def test_empty_class_rejected(self):
        with pytest.raises(MalformedTags):
            strict_runs(("B-",))


class TestTolerantRuns:
    def test_valid_sequence_matches_strict(self):
        tags = ("O", "B-a", "I-a", "B-b", "O")
        assert tolerant_runs(tags) == strict_runs(tags)

    def test_orphan_continuation_dropped(self):
        assert tolerant_runs(("I-a", "I-a", "O")) == []

    def test_fresh_start_after_orphan(self):
        assert tolerant_runs(("I-a", "B-a")) == [(1, 1, "a")]

    def test_class_switch_poisons_new_run_only(self):
        assert tolerant_runs(("B-a", "I-b", "I-b")) == [(0, 0, "a")]

    def test_unknown_tags_act_as_outside(self):
        assert tolerant_runs(("B-a", "X", "I-a")) == [(0, 0, "a")]
        assert tolerant_runs(("B-", "I-")) == []

    def test_trailing_run_emitted(self):
        assert tolerant_runs(("O", "B-a", "I-a")) == [(1, 2, "a")]
