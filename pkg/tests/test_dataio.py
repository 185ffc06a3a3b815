import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dgdetect.dataio import (DatasetManifest, Embedding, ImageBuffer, Label, LandmarkSet,
                             TrialPair, check_references, format_embeddings, format_landmarks,
                             format_pairs, load_embeddings, load_image, load_landmarks,
                             load_manifest, load_pairs, parse_embeddings, parse_landmarks,
                             parse_pairs, peek_embedding_dim, save_image, write_embeddings,
                             write_landmarks, write_pairs)
from dgdetect.errors import DataFormatError, ReferentialError


def test_zero_vector_embedding(tmp_path):
    f = tmp_path / "e.emb"
    f.write_text("emb-v1 dim=4\nimgA subj1 0 0 0 0\n")
    (e,) = load_embeddings(f, 4)
    assert e.image_id == "imgA" and e.subject_id == "subj1"
    assert e.dim == 4 and np.all(e.values == 0)


def test_dimension_mismatch_names_line(tmp_path):
    f = tmp_path / "e.emb"
    f.write_text("emb-v1 dim=512\na s " + " ".join(["0.5"] * 512) + "\n"
                 "b s " + " ".join(["0.5"] * 511) + "\n")
    with pytest.raises(DataFormatError, match="dimension mismatch") as exc:
        load_embeddings(f, 512)
    assert exc.value.line == 3


def test_header_dimension_must_match_expected(tmp_path):
    f = tmp_path / "e.emb"
    f.write_text("emb-v1 dim=3\na s 1 2 3\n")
    with pytest.raises(DataFormatError, match="dimension mismatch"):
        load_embeddings(f, 4)
    assert len(load_embeddings(f, None)) == 1
    assert peek_embedding_dim(f) == 3


@pytest.mark.parametrize("bad", ["nan", "inf", "-inf"])
def test_non_finite_rejected(bad):
    with pytest.raises(DataFormatError, match="non-finite"):
        parse_embeddings(f"emb-v1 dim=2\na s 1 {bad}\n")


def test_non_numeric_and_duplicates():
    with pytest.raises(DataFormatError, match="non-numeric"):
        parse_embeddings("emb-v1 dim=2\na s 1 x\n")
    with pytest.raises(DataFormatError, match="duplicate") as exc:
        parse_embeddings("emb-v1 dim=1\na s 1\na t 2\n")
    assert exc.value.line == 3


def test_missing_or_bad_header():
    with pytest.raises(DataFormatError):
        parse_embeddings("")
    with pytest.raises(DataFormatError):
        parse_embeddings("emb-v2 dim=3\n")


def test_record_count_equals_lines_minus_header():
    body = "".join(f"id{i} s{i % 7} {i} {-i}\n" for i in range(50))
    t = parse_embeddings("emb-v1 dim=2\n" + body, 2)
    assert len(t) == 50
    assert [e.image_id for e in t] == [f"id{i}" for i in range(50)]


def test_embeddings_are_immutable():
    e = Embedding("a", "s", [1.0, 2.0])
    with pytest.raises(ValueError):
        e.values[0] = 3.0


finite = st.floats(allow_nan=False, allow_infinity=False, width=64)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(finite, min_size=3, max_size=3), min_size=1, max_size=20))
def test_embedding_round_trip(rows):
    embs = [Embedding(f"img{i}", f"s{i % 3}", r) for i, r in enumerate(rows)]
    text = format_embeddings(embs, 3, ["# made by test"])
    again = parse_embeddings(text, 3)
    assert format_embeddings(again, 3, again.comments) == text
    for a, b in zip(embs, again):
        assert np.array_equal(a.values, b.values)


def test_write_load_write_byte_identical(tmp_path, rng):
    embs = [Embedding(f"i{k}", f"s{k}", rng.standard_normal(16)) for k in range(10)]
    f1, f2 = tmp_path / "a.emb", tmp_path / "b.emb"
    write_embeddings(f1, embs, 16, ["# header"])
    write_embeddings(f2, load_embeddings(f1, 16))
    assert f1.read_bytes() == f2.read_bytes()


def test_landmarks_parse():
    (s,) = parse_landmarks("lmk-v1 n=3\nimg 10.5 20.25 1 2 3 4\n", 3)
    assert s.count == 3
    assert s.points[0].tolist() == [10.5, 20.25]


def test_landmark_errors():
    with pytest.raises(DataFormatError, match="count mismatch"):
        parse_landmarks("lmk-v1 n=3\nimg 1 2 3 4\n", 3)
    with pytest.raises(DataFormatError, match="non-numeric") as exc:
        parse_landmarks("lmk-v1 n=2\nimg 1 2 3 y\n", 2)
    assert exc.value.line == 2


def test_landmark_round_trip(tmp_path, rng):
    sets = [LandmarkSet(f"im{k}", rng.uniform(0, 255, (68, 2))) for k in range(5)]
    f1, f2 = tmp_path / "a.lmk", tmp_path / "b.lmk"
    write_landmarks(f1, sets, 68)
    write_landmarks(f2, load_landmarks(f1, 68))
    assert f1.read_bytes() == f2.read_bytes()
    assert format_landmarks(load_landmarks(f1), 68) == f1.read_text()


def test_landmark_bounds():
    s = LandmarkSet("a", [[0, 0], [9, 9]])
    s.check_bounds(10, 10)
    with pytest.raises(DataFormatError):
        s.check_bounds(9, 9)


def test_pairs():
    (p,) = parse_pairs("a,b,mated\n")
    assert p == TrialPair("a", "b", Label.MATED)
    with pytest.raises(DataFormatError, match="unknown label"):
        parse_pairs("a,b,spoof\n")
    with pytest.raises(DataFormatError, match="3 fields"):
        parse_pairs("a,b\n")


def test_pair_file_scale(tmp_path):
    f = tmp_path / "p.csv"
    f.write_text("".join(f"r{i},p{i},doppelganger\n" for i in range(389)))
    pairs = load_pairs(f)
    assert len(pairs) == 389
    assert all(p.label is Label.DOPPELGANGER for p in pairs)


def test_786_pairs_resolve(tmp_path):
    emb = [Embedding(f"r{i}", f"a{i}", [0.0, 1.0]) for i in range(786)]
    emb += [Embedding(f"p{i}", f"b{i}", [1.0, 0.0]) for i in range(786)]
    pairs = [TrialPair(f"r{i}", f"p{i}", Label.DOPPELGANGER) for i in range(786)]
    write_embeddings(tmp_path / "e.emb", emb, 2)
    write_pairs(tmp_path / "p.csv", pairs)
    (tmp_path / "m.txt").write_text("dim=2\nembeddings=e.emb\npairs=p.csv\n")
    index, loaded = load_manifest(tmp_path / "m.txt").load()
    assert len(loaded) == 786 and len(index) == 1572


def test_pairs_round_trip(tmp_path):
    text = "# c\na,b,mated\nc,d,nonmated\ne,f,doppelganger\n"
    pairs = parse_pairs(text)
    assert format_pairs(pairs, pairs.comments) == text


def test_referential_integrity():
    idx = {"a": Embedding("a", "s1", [1.0]), "b": Embedding("b", "s1", [1.0]),
           "c": Embedding("c", "s2", [1.0])}
    check_references([TrialPair("a", "b", Label.MATED)], idx)
    with pytest.raises(ReferentialError, match="no embedding"):
        check_references([TrialPair("a", "zz", Label.MATED)], idx)
    with pytest.raises(ReferentialError, match="different subjects"):
        check_references([TrialPair("a", "c", Label.MATED)], idx)
    with pytest.raises(ReferentialError, match="same subject"):
        check_references([TrialPair("a", "b", Label.DOPPELGANGER)], idx)


def test_manifest_errors(tmp_path):
    (tmp_path / "m.txt").write_text("embeddings=missing.emb\n")
    with pytest.raises(DataFormatError, match="does not exist"):
        load_manifest(tmp_path / "m.txt")
    (tmp_path / "m.txt").write_text("colour=blue\n")
    with pytest.raises(DataFormatError, match="unknown manifest key"):
        load_manifest(tmp_path / "m.txt")
    (tmp_path / "e.emb").write_text("emb-v1 dim=1\na s 1\n")
    (tmp_path / "p.csv").write_text("a,b,mated\n")
    m = DatasetManifest([tmp_path / "e.emb"], [tmp_path / "p.csv"], dim=1)
    with pytest.raises(ReferentialError):
        m.load()


def test_png_round_trip(tmp_path, rng):
    img = ImageBuffer(rng.integers(0, 256, (12, 17, 3), dtype=np.uint8))
    save_image(tmp_path / "x.png", img)
    back = load_image(tmp_path / "x.png")
    assert back.width == 17 and back.height == 12
    assert np.array_equal(back.pixels, img.pixels)
    assert back.pixels.size == back.width * back.height * back.channels


def test_non_rgb_png_rejected(tmp_path):
    from PIL import Image

    Image.new("L", (4, 4)).save(tmp_path / "g.png")
    with pytest.raises(DataFormatError, match="RGB"):
        load_image(tmp_path / "g.png")
