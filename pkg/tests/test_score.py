import json

import pytest
from hypothesis import given, strategies as st

from nsinger.errors import InvalidIndexError, OutOfRangeError, ParseError, ValidationError
from nsinger.score import (CODAS, N_CODAS, N_NUCLEI, N_ONSETS, N_PHONEMES, NUCLEI, ONSETS,
                           JamoTriple, NoteEvent, Score, compose_hangul, decompose_hangul,
                           dumps_score, g2p, load_score, loads_score, phoneme_ids_of, save_score)


def test_decompose_block_base():
    assert decompose_hangul(0xAC00) == JamoTriple(0, 0, None)
    assert decompose_hangul("가").letters == ["ㄱ", "ㅏ"]


def test_decompose_han_by_arithmetic():
    t = decompose_hangul("한")
    assert (0xD55C - 0xAC00) == (18 * 21 + 0) * 28 + 4
    assert t == JamoTriple(18, 0, 3)
    assert t.coda_code == 4
    assert t.letters == ["ㅎ", "ㅏ", "ㄴ"]


def test_decompose_block_last():
    t = decompose_hangul("힣")
    assert (t.onset, t.nucleus, t.coda_code) == (18, 20, 27)


@pytest.mark.parametrize("cp", [0xABFF, 0xD7A4, ord("a"), ord("ㄱ")])
def test_decompose_out_of_range(cp):
    with pytest.raises(OutOfRangeError):
        decompose_hangul(cp)


def test_compose_examples():
    assert compose_hangul(JamoTriple(0, 0, None)) == 0xAC00
    assert compose_hangul(JamoTriple(18, 0, 3)) == 0xD55C


@pytest.mark.parametrize("triple", [(19, 0, None), (0, 21, None), (0, 0, 27), (-1, 0, None)])
def test_compose_invalid_index(triple):
    with pytest.raises(InvalidIndexError):
        compose_hangul(JamoTriple(*triple))


def test_exhaustive_round_trip():
    for cp in range(0xAC00, 0xD7A4):
        assert compose_hangul(decompose_hangul(cp)) == cp


@given(st.integers(0, N_ONSETS - 1), st.integers(0, N_NUCLEI - 1),
       st.one_of(st.none(), st.integers(0, N_CODAS - 1)))
def test_triple_round_trip(on, nu, co):
    t = JamoTriple(on, nu, co)
    assert decompose_hangul(compose_hangul(t)) == t


def test_jamo_tables():
    assert (len(ONSETS), len(NUCLEI), len(CODAS)) == (19, 21, 27)


def test_phoneme_ids_examples():
    assert phoneme_ids_of(decompose_hangul("가")) == [1, 20]
    assert phoneme_ids_of(decompose_hangul("한")) == [19, 20, 44]


def test_phoneme_id_ranges_partition_vocabulary():
    seen = {}
    for on in range(N_ONSETS):
        seen.setdefault(phoneme_ids_of(JamoTriple(on, 0))[0], "onset")
    for nu in range(N_NUCLEI):
        seen.setdefault(phoneme_ids_of(JamoTriple(0, nu))[1], "nucleus")
    for co in range(N_CODAS):
        seen.setdefault(phoneme_ids_of(JamoTriple(0, 0, co))[2], "coda")
    assert sorted(seen) == list(range(1, N_PHONEMES))
    assert [k for k, v in seen.items() if v == "onset"] == list(range(1, 20))
    assert [k for k, v in seen.items() if v == "nucleus"] == list(range(20, 41))
    assert [k for k, v in seen.items() if v == "coda"] == list(range(41, 68))


@given(st.integers(0xAC00, 0xD7A3))
def test_phoneme_ids_length_and_no_silence(cp):
    ids = phoneme_ids_of(decompose_hangul(cp))
    assert len(ids) in (2, 3)
    assert 0 not in ids
    assert all(0 < i < N_PHONEMES for i in ids)


def test_g2p_skips_whitespace():
    assert g2p("가 한") == [1, 20, 19, 20, 44]


def test_note_event_validation():
    with pytest.raises(ValidationError):
        NoteEvent.note("가", 69, 0)
    with pytest.raises(ValidationError):
        NoteEvent.note("a", 69, 4)
    with pytest.raises(ValidationError):
        NoteEvent.note("가", 128, 4)
    with pytest.raises(ValidationError):
        NoteEvent.rest(0)


def test_score_validation():
    with pytest.raises(ValidationError):
        Score(())
    with pytest.raises(ValidationError):
        Score((NoteEvent.rest(3),), sample_rate_hz=0)
    with pytest.raises(ValidationError):
        Score((NoteEvent.rest(3),), hop_length_samples=-1)


def test_total_frames_and_spans(han_score):
    assert han_score.total_frames == 18
    assert [(s, e) for s, e, _ in han_score.spans()] == [(0, 8), (8, 12), (12, 18)]


def test_save_load_round_trip(tmp_path, han_score):
    save_score(han_score, tmp_path / "s.json")
    assert load_score(tmp_path / "s.json") == han_score


def test_file_format_keys(han_score):
    doc = json.loads(dumps_score(han_score))
    assert set(doc) == {"sample_rate_hz", "hop_length_samples", "events"}
    assert doc["events"][0] == {"kind": "syllable", "text": "한", "midi": 69, "frames": 8}
    assert doc["events"][1] == {"kind": "rest", "frames": 4}


def test_zero_duration_event_is_validation_error():
    text = json.dumps({"sample_rate_hz": 24000, "hop_length_samples": 240,
                       "events": [{"kind": "syllable", "text": "가", "midi": 60, "frames": 0}]})
    with pytest.raises(ValidationError):
        loads_score(text)


def test_non_hangul_is_validation_error():
    text = json.dumps({"sample_rate_hz": 24000, "hop_length_samples": 240,
                       "events": [{"kind": "syllable", "text": "x", "midi": 60, "frames": 4}]})
    with pytest.raises(ValidationError):
        loads_score(text)


def test_syntax_error_reports_line():
    with pytest.raises(ParseError) as info:
        loads_score('{\n  "sample_rate_hz": 24000,\n  "events": [\n}')
    assert info.value.line == 4


def test_rest_with_pitch_rejected():
    text = json.dumps({"sample_rate_hz": 24000, "hop_length_samples": 240,
                       "events": [{"kind": "rest", "midi": 60, "frames": 4}]})
    with pytest.raises(ValidationError):
        loads_score(text)
