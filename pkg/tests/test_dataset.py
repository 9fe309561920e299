import warnings
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from echoview.dataset import (
    DuplicateFrameError,
    EchoSplitError,
    Manifest,
    ManifestFormatError,
    PGMError,
    SubjectSplitError,
    UnknownViewError,
    batch_iter,
    load_frames,
    load_manifest,
    paper_shaped_spec,
    read_pgm,
    split_folds,
    subsample_per_class,
    synth_generate,
    uniform_spec,
    write_manifest,
    write_pgm,
)
from echoview.dataset.pgm import decode_pgm, encode_pgm
from echoview.dataset.synth import PAPER_SUBJECTS, echo_style, render_frame
from echoview.labels import ALL_LABELS, NUM_CLASSES, ViewLabel, as_index

from helpers import detect_view, make_manifest, random_manifest

HEADER = "path,subject_id,echo_id,frame_index,view,contrast,split\n"


# ---- labels


def test_thirteen_labels_with_stable_indices():
    assert NUM_CLASSES == 13 == len(ALL_LABELS)
    assert [l.index for l in ALL_LABELS] == list(range(13))
    assert ViewLabel.from_index(3) is ViewLabel.C_PLAX
    assert as_index(ViewLabel.NC_SAX) == 12


def test_only_valid_combinations_exist():
    assert ViewLabel.from_parts("rv", False) is ViewLabel.NC_RV
    for view in ("5ch", "rv", "ssn"):
        with pytest.raises(ValueError):
            ViewLabel.from_parts(view, True)
    with pytest.raises(ValueError):
        ViewLabel.from_index(13)


# ---- PGM


def test_pgm_round_trip(tmp_path, rng):
    img = rng.integers(0, 256, size=(7, 5)).astype(np.uint8)
    write_pgm(tmp_path / "a.pgm", img)
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), img)


def test_pgm_comments_and_errors():
    assert decode_pgm(b"P5\n# note\n2 1\n255\n\x01\x02").tolist() == [[1, 2]]
    with pytest.raises(PGMError):
        decode_pgm(b"P2\n2 1\n255\n1 2")
    with pytest.raises(PGMError):
        decode_pgm(b"P5\n0 3\n255\n")
    with pytest.raises(PGMError):
        decode_pgm(b"P5\n2 2\n255\n\x00")
    with pytest.raises(PGMError):
        decode_pgm(b"P5\n1 1\n65535\n\x00\x00")
    assert encode_pgm(np.zeros((1, 1), np.uint8)).startswith(b"P5")


# ---- manifest loading


def write_csv(path, rows):
    path.write_text(HEADER + "".join(r + "\n" for r in rows))
    return path


def test_load_valid_manifest(tmp_path):
    p = write_csv(tmp_path / "m.csv", [
        "a/0.pgm,s1,e1,0,plax,1,train",
        "a/1.pgm,s1,e1,1,plax,1,train",
        "b/0.pgm,s2,e2,0,rv,0,test",
    ])
    m = load_manifest(p)
    assert len(m) == 3
    assert m.records[0].label is ViewLabel.C_PLAX
    assert m.resolve(m.records[2]).endswith("b/0.pgm")


def test_unknown_view_names_row(tmp_path):
    p = write_csv(tmp_path / "m.csv", ["a/0.pgm,s1,e1,0,2ch,0,train", "a/1.pgm,s1,e2,0,6ch,0,train"])
    with pytest.raises(UnknownViewError, match=r"row 3.*6ch"):
        load_manifest(p)


def test_invalid_contrast_combo_rejected(tmp_path):
    with pytest.raises(UnknownViewError):
        load_manifest(write_csv(tmp_path / "m.csv", ["a,s,e,0,rv,1,train"]))


def test_echo_spanning_splits_rejected(tmp_path):
    p = write_csv(tmp_path / "m.csv", ["a,s1,e1,0,sax,0,train", "b,s1,e1,1,sax,0,test"])
    with pytest.raises(EchoSplitError, match="row 3"):
        load_manifest(p)


def test_subject_spanning_splits_rejected(tmp_path):
    p = write_csv(tmp_path / "m.csv", ["a,s1,e1,0,sax,0,train", "b,s1,e2,0,sax,0,test"])
    with pytest.raises(SubjectSplitError):
        load_manifest(p)


def test_duplicate_frame_rejected(tmp_path):
    p = write_csv(tmp_path / "m.csv", ["a,s1,e1,0,sax,0,train", "b,s1,e1,0,sax,0,train"])
    with pytest.raises(DuplicateFrameError):
        load_manifest(p)


def test_bad_header_rejected(tmp_path):
    (tmp_path / "m.csv").write_text("path,view\na,2ch\n")
    with pytest.raises(ManifestFormatError):
        load_manifest(tmp_path / "m.csv")


def test_write_then_load_round_trip(tmp_path):
    m = make_manifest({ViewLabel.C_4CH: 2}, {ViewLabel.NC_SSN: 1})
    write_manifest(m, tmp_path / "m.csv")
    assert load_manifest(tmp_path / "m.csv").records == m.records


# ---- split_folds


def test_even_manifest_gives_ten_validation_echos():
    m = make_manifest({l: 10 for l in list(ViewLabel)[:10]})
    for fold in split_folds(m):
        assert len(fold.val_echos) == 10


def test_split_determinism_and_partition():
    m = make_manifest({l: 5 + l.index for l in ViewLabel})
    a, b = split_folds(m, seed=4), split_folds(m, seed=4)
    assert a == b
    echos = set(m.echo_labels())
    seen_train = set()
    for fold in a:
        assert set(fold.train_echos) | set(fold.val_echos) == echos
        assert not set(fold.train_echos) & set(fold.val_echos)
        seen_train |= set(fold.train_echos)
    assert seen_train == echos


def test_split_stratifies_per_class():
    m = make_manifest({ViewLabel.C_2CH: 50, ViewLabel.NC_RV: 30, ViewLabel.NC_SSN: 20})
    for fold in split_folds(m):
        c = Counter(m.echo_labels()[e] for e in fold.val_echos)
        assert c == {ViewLabel.C_2CH: 5, ViewLabel.NC_RV: 3, ViewLabel.NC_SSN: 2}


def test_validation_duty_rotates():
    m = make_manifest({ViewLabel.C_2CH: 40})
    folds = split_folds(m)
    hits = Counter(e for f in folds for e in f.val_echos)
    assert max(hits.values()) == 1  # 8 windows of 4 over 40 echos never overlap


def test_singleton_class_pinned_with_warning():
    m = make_manifest({ViewLabel.C_2CH: 20, ViewLabel.NC_RV: 1})
    with pytest.warns(UserWarning, match="rv"):
        folds = split_folds(m)
    for f in folds:
        assert "train-rv-0" in f.train_echos


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_split_discipline_property(seed):
    rng = np.random.default_rng(seed)
    m = random_manifest(rng)
    train_echos = set(m.select("train").echo_labels())
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        folds = split_folds(m, seed=int(rng.integers(1000)))
    assert len(folds) == 8
    for f in folds:
        assert abs(len(f.val_echos) - 0.1 * len(train_echos)) <= 1
        assert set(f.train_echos) | set(f.val_echos) == train_echos
        assert not set(f.train_echos) & set(f.val_echos)


# ---- subsampling


def test_subsample_keeps_small_classes_whole():
    m = make_manifest({ViewLabel.NC_RV: 42, ViewLabel.C_2CH: 80})
    s = subsample_per_class(m, 50, seed=1)
    counts = s.class_counts()
    assert counts[ViewLabel.NC_RV] == 42 and counts[ViewLabel.C_2CH] == 50


def test_subsample_one_per_class_and_determinism():
    m = make_manifest({l: 3 for l in ViewLabel}, frames=3)
    s = subsample_per_class(m, 1, seed=2)
    assert len(s.echos()) == 13
    assert all(len(recs) == 3 for recs in s.echos().values())
    assert s.records == subsample_per_class(m, 1, seed=2).records


def test_subsample_restricted_to_split():
    m = make_manifest({ViewLabel.C_2CH: 10}, {ViewLabel.C_2CH: 5})
    s = subsample_per_class(m, 2, split="train")
    assert len(s.select("train").echos()) == 2
    assert len(s.select("test").echos()) == 5


# ---- batch_iter


def test_batch_sizes_and_coverage():
    m = make_manifest({ViewLabel.C_2CH: 65}, frames=2)
    batches = list(batch_iter(m, 64, epoch_seed=3))
    assert [len(b) for b in batches] == [64, 64, 2]
    flat = [rec for b in batches for rec, _ in b]
    assert sorted(flat, key=lambda r: (r.echo_id, r.frame_index)) == sorted(m.records, key=lambda r: (r.echo_id, r.frame_index))
    assert all(label is rec.label for b in batches for rec, label in b)


def test_batch_order_deterministic_per_seed():
    m = make_manifest({ViewLabel.C_2CH: 20})
    order = lambda s: [r.echo_id for b in batch_iter(m, 8, s) for r, _ in b]
    assert order(1) == order(1)
    assert order(1) != order(2)


def test_batch_iter_rejects_bad_input():
    with pytest.raises(ValueError):
        list(batch_iter(make_manifest({ViewLabel.C_2CH: 2}), 1))
    with pytest.raises(ValueError):
        list(batch_iter(Manifest((), ""), 4))


# ---- synthetic generator


def test_synth_counts(tmp_path):
    m = synth_generate(tmp_path, uniform_spec(2), frames_per_echo=(4, 4), image_size=32, seed=1)
    assert len(m.echos()) == 26
    assert len(list(tmp_path.glob("images/*/*.pgm"))) == 104
    assert load_manifest(tmp_path / "manifest.csv").records == m.records


def test_synth_is_bitwise_reproducible(tmp_path):
    spec = {ViewLabel.C_SAX: (1, 1), ViewLabel.NC_5CH: (1, 0)}
    for d in ("a", "b"):
        synth_generate(tmp_path / d, spec, frames_per_echo=(2, 3), image_size=32, seed=9)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_paper_shaped_ratio():
    spec = paper_shaped_spec(1.0)
    assert spec[ViewLabel.C_2CH][0] == 711 and spec[ViewLabel.C_PLAX][0] == 85
    small = paper_shaped_spec(0.1)
    assert small[ViewLabel.C_PLAX][0] == round(8.5)
    assert abs(small[ViewLabel.C_2CH][0] / small[ViewLabel.C_PLAX][0] - 711 / 85) < 1.0
    assert set(PAPER_SUBJECTS) == set(ViewLabel)


def test_synth_subjects_never_cross_splits(tmp_path):
    m = synth_generate(tmp_path, uniform_spec(3), frames_per_echo=(1, 1), image_size=32)
    train = {r.subject_id for r in m.records if r.split == "train"}
    test = {r.subject_id for r in m.records if r.split == "test"}
    assert not train & test


@pytest.mark.parametrize("size", [64, 96])
def test_classes_recoverable_by_detector(size):
    errors = []
    for label in ViewLabel:
        for j in range(12):
            style = echo_style(5, "train", label, j)
            for f in (0, 5, 11):
                got = detect_view(render_frame(label, size, style, f, None))
                if got != (label.view, label.contrast):
                    errors.append((label, j, f, got))
    assert errors == []


def test_load_frames(tiny_dataset):
    m = load_manifest(tiny_dataset / "manifest.csv")
    fs = load_frames(m, 32)
    assert fs.images.shape == (len(m), 1, 32, 32)
    assert fs.images.dtype == np.float32
    assert fs.images.min() >= 0 and fs.images.max() <= 1
    tr = fs.select_split("train")
    assert all(r.split == "train" for r in tr.records)
    one = tr.select_echos([tr.records[0].echo_id])
    assert len(one) == 4 and set(one.ids) <= set(fs.ids)
