import numpy as np
import pytest

from rallycast.court import CourtSpec, validate_rally
from rallycast.dataset import (
    CSV_HEADER,
    FilterPolicy,
    ParseError,
    PlayerStyle,
    SynthConfig,
    default_player_styles,
    filter_training,
    parse_dataset,
    split,
    synthesize_dataset,
    write_dataset,
)

from conftest import make_rally


def _write(tmp_path, rows, name="data.csv"):
    path = tmp_path / name
    path.write_text("\n".join([CSV_HEADER] + rows) + "\n", encoding="utf-8")
    return path


def _row(match="m1", rally="r1", ball_round=1, player="A", type_name="short service", lx=2.0, ly=8.0, px=3.0, py=3.0):
    return f"{match},{rally},{ball_round},{player},{type_name},{lx},{ly},{px},{py}"


def test_parse_single_rally(tmp_path, vocab):
    rows = [
        _row(ball_round=1, player="A", type_name="short service"),
        _row(ball_round=2, player="B", type_name="net shot"),
        _row(ball_round=3, player="A", type_name="smash"),
        _row(ball_round=4, player="B", type_name="drive"),
        _row(ball_round=5, player="A", type_name="clear"),
        _row(ball_round=6, player="B", type_name="lob"),
    ]
    rallies, meta, rejects = parse_dataset(_write(tmp_path, rows), vocab)
    assert rejects == []
    assert len(rallies) == 1 and len(rallies[0]) == 6
    assert meta.n_matches == 1 and meta.n_rallies == 1 and meta.n_players == 2
    assert meta.rally_length_histogram == {6: 1}
    assert meta.strokes_per_player == {"m1:A": 3, "m1:B": 3}
    assert [s.round_index for s in rallies[0].strokes] == [1, 2, 3, 4, 5, 6]


def test_parse_orders_shuffled_rows(tmp_path, vocab):
    ordered = [
        _row(ball_round=1, player="A", type_name="short service"),
        _row(ball_round=2, player="B", type_name="net shot", lx=1.5),
        _row(ball_round=3, player="A", type_name="smash", lx=4.4),
    ]
    a, _, _ = parse_dataset(_write(tmp_path, ordered, "a.csv"), vocab)
    b, _, _ = parse_dataset(_write(tmp_path, [ordered[2], ordered[0], ordered[1]], "b.csv"), vocab)
    assert a == b


def test_parse_rejects_rally_with_round_gap(tmp_path, vocab):
    rows = [
        _row(ball_round=1),
        _row(ball_round=2, player="B", type_name="net shot"),
        _row(ball_round=4, player="B", type_name="smash"),
    ]
    path = _write(tmp_path, rows)
    rallies, meta, rejects = parse_dataset(path, vocab)
    assert rallies == []
    assert len(rejects) == 3
    assert any("gap at 3" in r.reason for r in rejects)
    report = path.with_name(path.name + ".rejects.csv")
    assert report.exists()
    assert "gap at 3" in report.read_text()


def test_parse_rejects_unknown_type_row(tmp_path, vocab):
    rows = [_row(ball_round=k, player="AB"[(k + 1) % 2], type_name=t) for k, t in
            enumerate(["short service", "net shot", "smash", "drive", "clear", "lob",
                       "net shot", "smash", "drive", "clear", "lob"], start=1)]
    rows.append(_row(rally="r2", ball_round=1, type_name="banana"))
    rallies, _, rejects = parse_dataset(_write(tmp_path, rows), vocab)
    assert len(rallies) == 1
    assert len(rejects) == 1 and "banana" in rejects[0].reason


def test_parse_fails_above_malformed_threshold(tmp_path, vocab):
    rows = [_row()] + ["garbage,row"] * 2
    with pytest.raises(ParseError) as err:
        parse_dataset(_write(tmp_path, rows), vocab)
    assert "line 3" in str(err.value)


def test_parse_missing_file(tmp_path, vocab):
    with pytest.raises(FileNotFoundError):
        parse_dataset(tmp_path / "nope.csv", vocab)


def test_parse_write_round_trip_bytes(tmp_path, vocab):
    rallies = synthesize_dataset(SynthConfig(n_rallies=12, seed=5, vocab=vocab))
    path = tmp_path / "corpus.csv"
    write_dataset(rallies, vocab, path)
    original = path.read_bytes()
    parsed, _, rejects = parse_dataset(path, vocab)
    assert rejects == []
    out = tmp_path / "rewritten.csv"
    write_dataset(parsed, vocab, out)
    assert out.read_bytes() == original


def test_parse_mirror_even_rounds(tmp_path, vocab):
    court = CourtSpec()
    rows = [
        _row(ball_round=1, lx=2.0, ly=8.0, px=3.0, py=3.0),
        _row(ball_round=2, player="B", type_name="net shot", lx=2.0, ly=5.0, px=3.0, py=10.0),
    ]
    rallies, _, _ = parse_dataset(_write(tmp_path, rows), vocab, court, mirror="even")
    s1, s2 = rallies[0].strokes
    assert s1.landing == (2.0, 8.0)  # odd rounds untouched
    assert s2.landing == (court.width_m - 2.0, court.length_m - 5.0)
    assert s2.player_location == (court.width_m - 3.0, court.length_m - 10.0)


# ---------------------------------------------------------------------------
# filtering
# ---------------------------------------------------------------------------

def test_filter_drops_short_rally(vocab):
    short = make_rally([0, 2, 3, 4], rally_id="short")
    ok = make_rally([0, 2, 3, 4, 5], rally_id="ok")
    kept, dropped = filter_training([short, ok], FilterPolicy(max_rally_length=None, max_match_total_rounds=None))
    assert [r.rally_id for r in kept] == ["ok"]
    assert dropped[0].rally.rally_id == "short" and "below minimum" in dropped[0].reason


def test_filter_drops_heavy_match(vocab):
    heavy = [make_rally([0] + [2] * 11, rally_id=f"h{i}", match_id="big") for i in range(10)]  # 120 strokes
    light = make_rally([0, 2, 3, 4, 5], rally_id="l", match_id="small")
    kept, dropped = filter_training(heavy + [light], FilterPolicy(max_match_total_rounds=100))
    assert [r.rally_id for r in kept] == ["l"]
    assert all("total strokes" in d.reason for d in dropped)


def test_filter_partitions_and_is_idempotent(vocab):
    rng = np.random.default_rng(2)
    rallies = []
    for i in range(30):
        n = int(rng.integers(3, 40))
        rallies.append(make_rally([0] + [2] * (n - 1), rally_id=f"r{i}", match_id=f"m{i % 4}"))
    policy = FilterPolicy()
    kept, dropped = filter_training(rallies, policy)
    assert len(kept) + len(dropped) == len(rallies)
    assert {id(r) for r in kept} | {id(d.rally) for d in dropped} == {id(r) for r in rallies}
    kept2, dropped2 = filter_training(kept, policy)
    assert kept2 == kept and dropped2 == []


def test_filter_policy_floor():
    with pytest.raises(ValueError):
        FilterPolicy(min_rally_length=3)


# ---------------------------------------------------------------------------
# splitting
# ---------------------------------------------------------------------------

def test_split_deterministic_and_partitions(vocab):
    rallies = [make_rally([0, 2, 3, 4, 5], rally_id=f"r{i}") for i in range(10)]
    t1, v1 = split(rallies, 0.8, seed=7)
    t2, v2 = split(rallies, 0.8, seed=7)
    assert t1 == t2 and v1 == v2
    assert len(t1) == 8 and len(v1) == 2
    assert sorted(r.rally_id for r in t1 + v1) == sorted(r.rally_id for r in rallies)
    t3, _ = split(rallies, 0.8, seed=8)
    assert t3 != t1  # different seed shuffles differently


def test_split_single_rally_ceil_rule(vocab, caplog):
    rallies = [make_rally([0, 2, 3, 4, 5])]
    with caplog.at_level("WARNING"):
        train, val = split(rallies, 0.5, seed=1)
    assert len(train) == 1 and val == []
    assert any("validation split is empty" in r.message for r in caplog.records)


def test_split_by_match_keeps_matches_whole(vocab):
    rallies = [make_rally([0, 2, 3, 4, 5], rally_id=f"r{i}", match_id=f"m{i % 3}") for i in range(12)]
    train, val = split(rallies, 0.6, seed=2, by_match=True)
    train_matches = {r.match_id for r in train}
    val_matches = {r.match_id for r in val}
    assert train_matches.isdisjoint(val_matches)
    assert len(train) + len(val) == 12


def test_split_errors(vocab):
    with pytest.raises(ValueError):
        split([], 0.5, seed=0)
    with pytest.raises(ValueError):
        split([make_rally([0, 2, 3, 4, 5])], 1.0, seed=0)


# ---------------------------------------------------------------------------
# synthesis
# ---------------------------------------------------------------------------

def test_synthetic_corpus_is_valid_across_seeds(vocab):
    for seed in range(5):
        rallies = synthesize_dataset(SynthConfig(n_rallies=40, seed=seed, vocab=vocab))
        assert len(rallies) == 40
        for rally in rallies:
            assert len(rally) >= 5
            assert validate_rally(rally, vocab, strict_serve=True) == []


def test_synthetic_corpus_deterministic(vocab):
    cfg = SynthConfig(n_rallies=25, seed=9, vocab=vocab)
    a = synthesize_dataset(cfg)
    b = synthesize_dataset(cfg)
    assert a == b


def test_synthetic_disjoint_styles_differ(vocab):
    v = vocab.size
    non_serve = [i for i in range(v) if not vocab.is_serve(i)]
    half = len(non_serve) // 2
    means = np.tile([[3.0, 10.0]], (v, 1))
    covs = np.tile(np.diag([0.3**2, 0.5**2]), (v, 1, 1))

    def style(preferred):
        prefs = np.zeros(v)
        prefs[list(vocab.serve_ids)] = 1.0
        for t in preferred:
            prefs[t] = 1.0
        return PlayerStyle(prefs, means, covs)

    styles = {"p1": style(non_serve[:half]), "p2": style(non_serve[half:])}
    rallies = synthesize_dataset(SynthConfig(n_rallies=500, seed=4, vocab=vocab, player_styles=styles))
    hist = {"p1": np.zeros(v), "p2": np.zeros(v)}
    for r in rallies:
        for s in r.strokes:
            if s.round_index == 1:
                continue
            hist[r.name_of(s.player)][s.shot_type] += 1
    p = hist["p1"] / hist["p1"].sum()
    q = hist["p2"] / hist["p2"].sum()
    assert 0.5 * np.abs(p - q).sum() > 0.3  # total-variation distance


def test_synthetic_rejects_degenerate_covariance(vocab):
    styles = default_player_styles(vocab)
    bad = styles["alice"]
    covs = bad.landing_cov.copy()
    covs[0] = 0.0
    styles["alice"] = PlayerStyle(bad.preferences, bad.landing_mean, covs)
    with pytest.raises(ValueError, match="degenerate covariance"):
        synthesize_dataset(SynthConfig(n_rallies=5, seed=0, vocab=vocab, player_styles=styles))


def test_synthetic_lengths_geometric_floor(vocab):
    rallies = synthesize_dataset(SynthConfig(n_rallies=300, mean_length=6.0, seed=1, vocab=vocab))
    lengths = np.array([len(r) for r in rallies])
    assert lengths.min() >= 5
    assert abs(lengths.mean() - 6.0) < 0.75
