import math

import numpy as np
import pytest

from rallycast.court import (
    CourtSpec,
    Player,
    ShotType,
    ShotTypeVocab,
    Stroke,
    ZONE_OUT,
    coord_to_zone,
    denormalize_coord,
    normalize_coord,
    validate_rally,
)

from conftest import make_rally

REQUIRED_TYPE_NAMES = ["long service", "short service", "net shot", "smash", "drive", "defensive shot"]


def test_default_vocab_contents(vocab):
    assert [e.type_id for e in vocab.entries] == list(range(vocab.size))
    for name in REQUIRED_TYPE_NAMES:
        vocab.id_of(name)
    serves = [e.name for e in vocab.entries if e.is_serve]
    assert sorted(serves) == ["long service", "short service"]
    assert vocab.size == 10


def test_vocab_lookup_case_insensitive(vocab):
    assert vocab.id_of("SMASH") == vocab.id_of("smash")
    with pytest.raises(KeyError):
        vocab.id_of("banana")


def test_vocab_rejects_bad_ids_and_duplicate_names():
    with pytest.raises(ValueError):
        ShotTypeVocab((ShotType(0, "a", True), ShotType(2, "b", False)))
    with pytest.raises(ValueError):
        ShotTypeVocab((ShotType(0, "a", True), ShotType(1, "A", False)))


def test_validate_rally_accepts_valid(vocab):
    rally = make_rally([vocab.id_of("short service"), 3, 4])
    assert validate_rally(rally, vocab, strict_serve=True) == []


def test_validate_rally_flags_broken_alternation(vocab):
    rally = make_rally([0, 3, 4])
    bad = Stroke(2, Player.A, 3, (2.0, 8.0), (3.0, 3.0))
    rally = type(rally)(
        rally_id=rally.rally_id,
        match_id=rally.match_id,
        player_a=rally.player_a,
        player_b=rally.player_b,
        strokes=(rally.strokes[0], bad, rally.strokes[2]),
    )
    violations = validate_rally(rally, vocab)
    assert len(violations) == 1
    assert violations[0].stroke_index == 2
    assert violations[0].rule == "alternation"


def test_validate_rally_strict_serve_after_open(vocab):
    rally = make_rally([vocab.id_of("short service"), 3, vocab.id_of("long service")])
    violations = validate_rally(rally, vocab, strict_serve=True)
    assert [(v.stroke_index, v.rule) for v in violations] == [(3, "serve_after_open")]
    assert validate_rally(rally, vocab, strict_serve=False) == []


def test_validate_rally_round_index_and_nonfinite(vocab):
    strokes = (
        Stroke(1, Player.A, 0, (2.0, 8.0), (3.0, 3.0)),
        Stroke(3, Player.B, 3, (2.0, float("nan")), (3.0, 3.0)),
    )
    rally = make_rally([0])
    rally = type(rally)("r", "m", "a", "b", strokes)
    rules = {v.rule for v in validate_rally(rally, vocab)}
    assert "round_index" in rules
    assert "nonfinite" in rules


def test_alternation_property(vocab):
    rng = np.random.default_rng(11)
    for _ in range(50):
        n = int(rng.integers(1, 8))
        pattern = [Player.A if rng.random() < 0.5 else Player.B for _ in range(n)]
        strokes = tuple(
            Stroke(k + 1, p, 3 if k else 0, (2.0, 8.0), (3.0, 3.0)) for k, p in enumerate(pattern)
        )
        rally = make_rally([0])
        rally = type(rally)("r", "m", "a", "b", strokes)
        ok = all(p is (Player.A if k % 2 == 0 else Player.B) for k, p in enumerate(pattern))
        has_alt_violation = any(v.rule == "alternation" for v in validate_rally(rally, vocab))
        assert has_alt_violation == (not ok)


# ---------------------------------------------------------------------------
# zones
# ---------------------------------------------------------------------------

def test_zone_center_is_five(court):
    center = (court.width_m / 2, 3 * court.length_m / 4)
    assert coord_to_zone(center, court, Player.B) == 5
    assert coord_to_zone((court.width_m / 2, court.length_m / 4), court, Player.A) == 5


def test_zone_out_of_bounds(court):
    assert coord_to_zone((3.0, court.length_m + 1.0), court, Player.B) == ZONE_OUT
    assert coord_to_zone((3.0, 1.0), court, Player.B) == ZONE_OUT  # other half
    assert coord_to_zone((-0.1, 10.0), court, Player.B) == ZONE_OUT
    with pytest.raises(ValueError):
        coord_to_zone((float("inf"), 1.0), court, Player.B)


def _centroids(court, side):
    """Enumerate the 9 cell centroids from the declared grid boundaries."""
    w, l = court.width_m, court.length_m
    half = l / 2
    points = []
    for row in range(3):
        depth = l / 12 + row * (l / 6)
        for col in range(3):
            left = w / 6 + col * (w / 3)
            if side is Player.B:
                points.append((w - left, half + depth))
            else:
                points.append((left, half - depth))
    return points


@pytest.mark.parametrize("side", [Player.A, Player.B])
def test_zone_centroids_enumerate_one_to_nine(court, side):
    for i, p in enumerate(_centroids(court, side)):
        assert coord_to_zone(p, court, side) == i + 1


def test_zone_boundary_ties_go_to_lower_id():
    # exact thirds avoid float noise on the boundaries
    court = CourtSpec(width_m=6.0, length_m=12.0)
    # depth exactly l/6, receiver-left exactly w/3 -> row 0, col 0 -> zone 1
    assert coord_to_zone((4.0, 8.0), court, Player.B) == 1
    assert coord_to_zone((4.0 - 1e-9, 8.0), court, Player.B) == 2  # just past the column boundary
    assert coord_to_zone((4.0, 8.0 + 1e-9), court, Player.B) == 4  # just past the row boundary
    # net line and baseline belong to the half
    assert coord_to_zone((3.0, 6.0), court, Player.B) == 2
    assert coord_to_zone((3.0, 12.0), court, Player.B) == 8


def test_zone_partition_property(court):
    rng = np.random.default_rng(7)
    xs = rng.uniform(0.0, court.width_m, size=10_000)
    ys = rng.uniform(court.length_m / 2, court.length_m, size=10_000)
    zones = np.array([coord_to_zone((x, y), court, Player.B) for x, y in zip(xs, ys)])
    assert zones.min() >= 1 and zones.max() <= 9


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def test_normalize_reference_points(court):
    assert normalize_coord((court.mean_x, court.mean_y), court) == (0.0, 0.0)
    nx, ny = normalize_coord((court.mean_x + court.std_x, court.mean_y), court)
    assert math.isclose(nx, 1.0, abs_tol=1e-15) and ny == 0.0


def test_normalize_round_trip(court):
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = (float(rng.uniform(-5, 15)), float(rng.uniform(-5, 25)))
        q = denormalize_coord(normalize_coord(p, court), court)
        assert abs(q[0] - p[0]) < 1e-12 and abs(q[1] - p[1]) < 1e-12


def test_zero_std_rejected():
    with pytest.raises(ValueError):
        CourtSpec(std_x=0.0)


def test_vocab_file_round_trip(tmp_path, vocab):
    from rallycast.court import load_vocab, save_vocab

    path = tmp_path / "vocab.csv"
    save_vocab(vocab, path)
    assert load_vocab(path) == vocab
    with pytest.raises(FileNotFoundError):
        load_vocab(tmp_path / "missing.csv")
