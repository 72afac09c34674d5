"""Ingestion, filtering, splitting, and windowing behavior."""

import json
import os

import numpy as np
import pytest

from clrec import corpus


def test_ingest_binarizes_and_keeps_earliest_duplicate():
    records = [
        ("u1", "a", 5, 10),
        ("u1", "a", 3, 20),
        ("u1", "b", 1, 15),
    ]
    log = corpus.ingest(records)
    assert log.duplicates_removed == 1
    assert [(i.user, i.item, i.timestamp) for i in log.interactions] == [
        ("u1", "a", 10.0),
        ("u1", "b", 15.0),
    ]


def test_ingest_duplicate_with_equal_timestamps_keeps_first_input_occurrence():
    records = [("u", "x", 1, 7), ("u", "x", 1, 7)]
    log = corpus.ingest(records)
    assert len(log.interactions) == 1
    assert log.duplicates_removed == 1


def test_ingest_earliest_duplicate_wins_even_when_input_order_is_reversed():
    records = [("u", "x", 1, 50), ("u", "y", 1, 10), ("u", "x", 1, 5)]
    log = corpus.ingest(records)
    kept = {(i.item, i.timestamp) for i in log.interactions if i.user == "u"}
    assert kept == {("x", 5.0), ("y", 10.0)}


def test_ingest_skips_malformed_records_and_counts_them():
    records = [
        ("u1", "a", 1, 10),
        ("u1", "b", 1),            # wrong arity
        ("u2", "c", 1, "not-a-ts"),
        ("", "d", 1, 5),           # empty user
        ("u3", "e", 1, 30),
    ]
    log = corpus.ingest(records)
    assert log.skipped_records == 3
    assert len(log.interactions) == 2


def test_ingest_empty_input_raises():
    with pytest.raises(ValueError):
        corpus.ingest([])


def test_index_maps_are_contiguous_one_based_in_first_appearance_order():
    records = [("bob", "y", 1, 1), ("alice", "x", 1, 2), ("bob", "x", 1, 3)]
    log = corpus.ingest(records)
    assert log.user_index == {"bob": 1, "alice": 2}
    assert log.item_index == {"y": 1, "x": 2}


def _naive_core(pairs, min_count):
    """Reference filter: literal repeated scans until nothing changes."""
    pairs = list(pairs)
    while True:
        from collections import Counter
        users = Counter(u for u, _ in pairs)
        pairs2 = [(u, i) for u, i in pairs if users[u] >= min_count]
        items = Counter(i for _, i in pairs2)
        pairs3 = [(u, i) for u, i in pairs2 if items[i] >= min_count]
        if len(pairs3) == len(pairs):
            return pairs3
        pairs = pairs3
        if not pairs:
            return pairs


class TestFiveCore:
    def test_cascading_removal_matches_naive_reference(self):
        # u8 falls below 5 first; losing it drops item "f" below 5, which
        # then pushes u9 under the threshold. The seven core users keep
        # every remaining item at count 7 so the cascade stops there.
        records = []
        t = 0
        layout = {f"u{n}": ["a", "b", "c", "d", "e"] for n in range(1, 8)}
        layout["u8"] = ["f", "g"]
        layout["u9"] = ["a", "b", "c", "d", "f"]
        for user, items in layout.items():
            for item in items:
                records.append((user, item, 1, t))
                t += 1
        log = corpus.ingest(records)
        filtered = corpus.five_core_filter(log)
        got = {(i.user, i.item) for i in filtered.interactions}
        want = set(_naive_core([(i.user, i.item) for i in log.interactions], 5))
        assert got == want
        assert want  # the core survives
        assert "u8" not in filtered.user_index
        assert "u9" not in filtered.user_index
        assert "f" not in filtered.item_index

    def test_random_instances_match_naive_reference(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            n_users, n_items = int(rng.integers(5, 15)), int(rng.integers(5, 15))
            records = []
            t = 0
            for u in range(n_users):
                for i in rng.choice(n_items, size=int(rng.integers(1, n_items)), replace=False):
                    records.append((f"u{u}", f"i{i}", 1, t))
                    t += 1
            log = corpus.ingest(records)
            want = set(_naive_core([(i.user, i.item) for i in log.interactions], 3))
            if not want:
                with pytest.raises(ValueError):
                    corpus.five_core_filter(log, min_count=3)
                continue
            filtered = corpus.five_core_filter(log, min_count=3)
            assert {(i.user, i.item) for i in filtered.interactions} == want

    def test_everything_filtered_raises(self):
        log = corpus.ingest([("u", "a", 1, 0), ("u", "b", 1, 1)])
        with pytest.raises(ValueError):
            corpus.five_core_filter(log)

    def test_survivor_counts_all_meet_threshold(self):
        rng = np.random.default_rng(11)
        records = []
        t = 0
        for u in range(30):
            for i in rng.choice(40, size=int(rng.integers(2, 12)), replace=False):
                records.append((f"u{u}", f"i{i}", 1, t))
                t += 1
        filtered = corpus.five_core_filter(corpus.ingest(records), min_count=4)
        from collections import Counter
        users = Counter(i.user for i in filtered.interactions)
        items = Counter(i.item for i in filtered.interactions)
        assert all(c >= 4 for c in users.values())
        assert all(c >= 4 for c in items.values())


def test_build_sequences_sorts_chronologically_with_stable_ties():
    records = [
        ("u", "late", 1, 30),
        ("u", "tie_first", 1, 10),
        ("u", "tie_second", 1, 10),
        ("u", "early", 1, 5),
    ]
    log = corpus.ingest(records)
    seqs = corpus.build_sequences(log)
    assert len(seqs) == 1
    names = {v: k for k, v in log.item_index.items()}
    assert [names[i] for i in seqs[0].items] == ["early", "tie_first", "tie_second", "late"]


def test_leave_one_out_holds_out_last_two_items():
    seqs = [
        corpus.UserSequence(user=1, items=(4, 2, 9, 7)),
        corpus.UserSequence(user=2, items=(1, 3)),  # too short, excluded
        corpus.UserSequence(user=3, items=(5, 6, 8)),
    ]
    split = corpus.leave_one_out_split(seqs, num_items=9)
    assert split.users == [1, 3]
    assert split.excluded_users == 1
    assert split.train[1] == [4, 2]
    assert split.valid[1] == 9
    assert split.test[1] == 7
    assert split.train[3] == [5]
    assert split.full_sequence(1) == [4, 2, 9, 7]


def test_leave_one_out_with_no_usable_users_raises():
    seqs = [corpus.UserSequence(user=1, items=(1, 2))]
    with pytest.raises(ValueError):
        corpus.leave_one_out_split(seqs, num_items=2)


class TestMakeWindow:
    def test_short_sequence_left_pads(self):
        win = corpus.make_window([5, 9], 4)
        assert win.ids.tolist() == [0, 0, 5, 9]
        assert win.true_length == 2

    def test_long_sequence_keeps_most_recent_tail(self):
        win = corpus.make_window([1, 2, 3, 4, 5], 3)
        assert win.ids.tolist() == [3, 4, 5]
        assert win.true_length == 3

    def test_newest_item_is_always_in_the_final_slot(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(1, 30))
            seq = [int(x) for x in rng.integers(1, 100, size=n)]
            length = int(rng.integers(1, 30))
            win = corpus.make_window(seq, length)
            assert win.ids[-1] == seq[-1]
            assert win.ids.shape == (length,)

    def test_invalid_inputs_raise(self):
        with pytest.raises(ValueError):
            corpus.make_window([], 5)
        with pytest.raises(ValueError):
            corpus.make_window([1], 0)


def test_stats_match_hand_count():
    seqs = [
        corpus.UserSequence(user=1, items=(1, 2, 3)),
        corpus.UserSequence(user=2, items=(2, 3, 4, 5, 1)),
    ]
    stats = corpus.compute_stats(seqs, num_items=5)
    assert stats["users"] == 2
    assert stats["items"] == 5
    assert stats["actions"] == 8
    assert stats["avg_length"] == pytest.approx(4.0)
    assert stats["density"] == pytest.approx(8 / 10)


def _tiny_log():
    # 7 users over a 7-item catalog, 5 items each in a cyclic layout, so
    # every user and every item sits exactly at the 5-core threshold.
    records = []
    t = 0
    for u in range(7):
        for i in range(5):
            records.append((f"u{u}", f"i{(u + i) % 7}", 1, t))
            t += 1
    return corpus.five_core_filter(corpus.ingest(records))


def test_dataset_directory_round_trip(tmp_path):
    log = _tiny_log()
    seqs = corpus.build_sequences(log)
    out = str(tmp_path / "ds")
    corpus.save_dataset(out, log, seqs)

    loaded = corpus.load_dataset(out)
    assert loaded.user_index == log.user_index
    assert loaded.item_index == log.item_index
    assert loaded.sequences == seqs
    with open(os.path.join(out, "stats.json")) as fh:
        assert json.load(fh) == loaded.stats


def test_save_dataset_rerun_is_byte_identical(tmp_path):
    log = _tiny_log()
    seqs = corpus.build_sequences(log)
    out = str(tmp_path / "ds")
    corpus.save_dataset(out, log, seqs)
    first = {f: open(os.path.join(out, f), "rb").read() for f in sorted(os.listdir(out))}
    corpus.save_dataset(out, log, seqs)
    second = {f: open(os.path.join(out, f), "rb").read() for f in sorted(os.listdir(out))}
    assert first == second


def test_read_raw_file_delimiters(tmp_path):
    path = tmp_path / "raw.txt"
    path.write_text("u1::i1::5::100\nu1::i2::3::200\n")
    records = corpus.read_raw_file(str(path), "::")
    assert records == [("u1", "i1", "5", "100"), ("u1", "i2", "3", "200")]

    path2 = tmp_path / "raw2.txt"
    path2.write_text("u1 i1 100\n\nu2 i2 200\n")
    records = corpus.read_raw_file(str(path2))
    assert records == [("u1", "i1", 1, "100"), ("u2", "i2", 1, "200")]
