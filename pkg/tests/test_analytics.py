import json
import os

import numpy as np
import pandas as pd
import pytest

from ad_detection.detector import AdSpan, DetectionResult, Validation
from keywords.category_grouper import CategoryAssignment
from LLM_interaction.embeddings import HashEmbedder
from text_extractor.captions import TranscriptKind
from text_extractor.manifest import CorpusManifest, ManifestRecord
from utils.analytics import (
    PrevalenceRow,
    alignment_score,
    alignment_table,
    cross_tab,
    percent,
    prevalence_frame,
    prevalence_table,
    prevalence_wide,
)
from utils.errors import EmptyKeywordSet, MalformedInput, SpanOutOfRange, UnknownVideoId
from utils.evaluate_segments import (
    GoldSpan,
    corpus_metrics,
    evaluate_corpus,
    format_metrics,
    interval_iou,
    load_gold,
    overlap_seconds,
    segment_level_metrics,
    time_level_metrics,
    union_intervals,
)
from utils.reports import ReportSet, emit_reports

GEN, MAN = TranscriptKind.GENERATED, TranscriptKind.MANUAL
# channel -> ((collected generated, detected generated), (collected manual, detected manual))
COLLECTED_AND_DETECTED = {
    "3Blue1Brown": ((9, 0), (49, 3)),
    "DamiLee": ((48, 14), (9, 7)),
    "Fireship": ((47, 10), (0, 0)),
    "Johnny Harris": ((48, 42), (44, 41)),
    "PBS Space Time": ((44, 20), (48, 27)),
    "SciShow": ((47, 23), (28, 23)),
}
EXPECTED_WIDE = {
    "3Blue1Brown": ["-", "3", "0%", "6%"],
    "DamiLee": ["14", "7", "29%", "78%"],
    "Fireship": ["10", "-", "21%", "-"],
    "Johnny Harris": ["42", "41", "88%", "93%"],
    "PBS Space Time": ["20", "27", "45%", "56%"],
    "SciShow": ["23", "23", "49%", "82%"],
    "Total": ["109", "101", "45%", "57%"],
}
AD_CATEGORY_COUNTS = {"Education": 58, "Media": 36, "Product": 89, "Various": 21}
CONTENT_CATEGORIES = ["Architecture", "Biology", "Geopolitics", "Nature", "Physics", "Space", "Technology", "Various"]


def ad_detection(video_id: str, has_ad: bool) -> DetectionResult:
    spans = [AdSpan(10.0, 40.0, "sponsored by", (2, 3, 4), Validation.VALIDATED)] if has_ad else []
    return DetectionResult(video_id, spans)


def collection_fixture() -> tuple[dict[str, DetectionResult], CorpusManifest]:
    records, detections = [], {}
    for channel, per_kind in COLLECTED_AND_DETECTED.items():
        for kind, (collected, detected) in zip((GEN, MAN), per_kind):
            for i in range(collected):
                video_id = f"{channel}-{kind.value}-{i}"
                records.append(ManifestRecord(video_id, channel, kind, "json", f"{video_id}.json"))
                detections[video_id] = ad_detection(video_id, i < detected)
    return detections, CorpusManifest(records)


# --------------- Prevalence ---------------- #
@pytest.mark.parametrize("detected, collected, expected", [
    (109, 243, 45), (101, 178, 57), (42, 48, 88), (0, 9, 0), (1, 8, 13), (0, 0, None),
])
def test_percent_rounds_half_up(detected, collected, expected):
    assert percent(detected, collected) == expected


def test_prevalence_table_matches_collection():
    detections, manifest = collection_fixture()
    rows = prevalence_table(detections, manifest)
    totals = {r.kind: r for r in rows if r.channel == "Total"}
    assert (totals[GEN].detected, totals[GEN].collected, totals[GEN].prevalence) == (109, 243, 45)
    assert (totals[MAN].detected, totals[MAN].collected, totals[MAN].prevalence) == (101, 178, 57)
    assert not any(r.channel == "Fireship" and r.kind is MAN for r in rows)
    assert totals[GEN].ad_seconds == pytest.approx(109 * 30.0)


def test_prevalence_wide_layout():
    detections, manifest = collection_fixture()
    wide = prevalence_wide(prevalence_table(detections, manifest)).set_index("Channel")
    assert list(wide.columns) == ["Detected (Generated)", "Detected (Manual)", "Prevalence (Generated)",
                                  "Prevalence (Manual)"]
    for channel, cells in EXPECTED_WIDE.items():
        assert list(wide.loc[channel]) == cells


def test_prevalence_frame_keeps_missing_prevalence_empty():
    frame = prevalence_frame([PrevalenceRow("Fireship", MAN, 0, 0), PrevalenceRow("Fireship", GEN, 10, 47)])
    assert pd.isna(frame.loc[0, "prevalence"])
    assert frame.loc[1, "prevalence"] == 21


def test_prevalence_row_bounds():
    with pytest.raises(ValueError):
        PrevalenceRow("SciShow", GEN, 5, 4)


def test_prevalence_unknown_video():
    _, manifest = collection_fixture()
    with pytest.raises(UnknownVideoId):
        prevalence_table({"ghost": ad_detection("ghost", True)}, manifest)


def test_rejected_spans_do_not_count_as_ads():
    manifest = CorpusManifest([ManifestRecord("vid1", "SciShow", GEN, "json", "vid1.json")])
    rejected = DetectionResult("vid1", [AdSpan(500.0, 505.0, "ghost", (), Validation.REJECTED)])
    rows = prevalence_table({"vid1": rejected}, manifest)
    assert rows[0].detected == 0


# --------------- Cross-tab ---------------- #
def cross_tab_fixture() -> tuple[CategoryAssignment, dict[str, DetectionResult]]:
    assignment = CategoryAssignment()
    detections = {}
    index = 0
    for ad_category, count in AD_CATEGORY_COUNTS.items():
        for i in range(count):
            video_id = f"vid{index}"
            if ad_category == "Product" and i < 40:
                content = "Mathematics"
            else:
                content = CONTENT_CATEGORIES[index % len(CONTENT_CATEGORIES)]
            assignment.video_content[video_id] = content
            assignment.video_ad[video_id] = ad_category
            detections[video_id] = ad_detection(video_id, True)
            index += 1
    return assignment, detections


def test_cross_tab_marginals():
    assignment, detections = cross_tab_fixture()
    table = cross_tab(assignment, detections)
    frame = table.frame()
    assert table.total() == 204
    for ad_category, count in AD_CATEGORY_COUNTS.items():
        assert frame.loc["Total", ad_category] == count
    assert frame.loc["Total", "Total"] == 204


def test_cross_tab_mathematics_mass_in_product():
    assignment, detections = cross_tab_fixture()
    frame = cross_tab(assignment, detections).frame()
    assert frame.loc["Mathematics", "Product"] == frame.loc["Mathematics", "Total"] == 40


def test_cross_tab_skips_videos_without_ads_and_lists_uncategorized():
    assignment = CategoryAssignment(video_content={"vid1": "Physics", "vid2": "Physics"}, video_ad={"vid1": "Media"})
    detections = {"vid1": ad_detection("vid1", True), "vid2": ad_detection("vid2", True),
                  "vid3": ad_detection("vid3", False)}
    table = cross_tab(assignment, detections)
    assert [(c.content_category, c.ad_category, c.count) for c in table.cells] == [("Physics", "Media", 1)]
    assert table.uncategorized == ["vid2"]


def test_cross_tab_without_ads_is_empty():
    table = cross_tab(CategoryAssignment(), {"vid1": ad_detection("vid1", False)})
    assert table.cells == []
    assert table.frame().empty


# --------------- Alignment ---------------- #
def test_alignment_score_identity():
    vectors = np.array([[1.0, 0.0], [0.0, 1.0]])
    score = alignment_score(["a", "b"], vectors, ["a", "b"], vectors)
    assert score.jaccard == 1.0
    assert score.centroid_cosine == pytest.approx(1.0)


def test_alignment_score_disjoint_orthogonal():
    score = alignment_score(["brilliant"], np.array([[1.0, 0.0]]), ["black hole"], np.array([[0.0, 1.0]]))
    assert score.jaccard == 0.0
    assert score.centroid_cosine == pytest.approx(0.0, abs=1e-12)


def test_alignment_score_partial_overlap():
    embedder = HashEmbedder()
    ad, content = ["a", "b"], ["b", "c"]
    score = alignment_score(ad, embedder.embed_batch(ad), content, embedder.embed_batch(content))
    assert score.jaccard == pytest.approx(1 / 3)
    with pytest.raises(EmptyKeywordSet):
        alignment_score([], np.zeros((0, 2)), ["b"], np.array([[1.0, 0.0]]))


def test_alignment_table_rows():
    keywords = pd.DataFrame([
        ["vid1", "ad", "brilliant", 0.9],
        ["vid1", "content", "prime number", 0.8],
        ["vid1", "content", "brilliant", 0.7],
        ["vid2", "content", "black hole", 0.9],
    ], columns=["video_id", "section", "phrase", "score"])
    assignment = CategoryAssignment(video_content={"vid1": "Mathematics", "vid2": "Space"},
                                    video_ad={"vid1": "Education"})
    table = alignment_table(keywords, assignment, HashEmbedder())
    assert list(table["level"]) == ["video", "category_pair"]
    video = table.iloc[0]
    assert video["video_id"] == "vid1"
    assert video["jaccard"] == pytest.approx(0.5)
    assert table.iloc[1]["content_category"] == "Mathematics"
    assert table.iloc[1]["videos"] == 1


# --------------- Detection metrics ---------------- #
def test_time_level_worked_example():
    m = time_level_metrics([(20.0, 50.0)], [(10.0, 40.0)], 60.0)
    assert (m.precision, m.recall, m.f1) == pytest.approx((2 / 3, 2 / 3, 2 / 3))


def test_time_level_conventions():
    same = time_level_metrics([(10.0, 40.0)], [(10.0, 40.0)], 60.0)
    assert (same.precision, same.recall, same.f1) == (1.0, 1.0, 1.0)
    assert (lambda m: (m.precision, m.recall, m.f1))(time_level_metrics([], [], 60.0)) == (1.0, 1.0, 1.0)
    assert (lambda m: (m.precision, m.recall, m.f1))(time_level_metrics([], [(10.0, 40.0)], 60.0)) == (1.0, 0.0, 0.0)
    assert (lambda m: (m.precision, m.recall, m.f1))(time_level_metrics([(10.0, 40.0)], [], 60.0)) == (0.0, 1.0, 0.0)


def test_time_level_rejects_out_of_range_spans():
    with pytest.raises(SpanOutOfRange):
        time_level_metrics([(50.0, 70.0)], [], 60.0)
    with pytest.raises(SpanOutOfRange):
        time_level_metrics([], [(-1.0, 5.0)], 60.0)


def test_segment_level_iou_threshold():
    assert interval_iou((20.0, 50.0), (10.0, 40.0)) == pytest.approx(0.5)
    matched = segment_level_metrics([(20.0, 50.0)], [(10.0, 40.0)], 0.5)
    assert (matched.precision, matched.recall, matched.f1) == (1.0, 1.0, 1.0)
    missed = segment_level_metrics([(20.0, 50.0)], [(10.0, 40.0)], 0.6)
    assert (missed.precision, missed.recall, missed.f1) == (0.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        segment_level_metrics([], [], 0.0)


def test_segment_level_is_one_to_one():
    m = segment_level_metrics([(10.0, 40.0), (12.0, 38.0)], [(10.0, 40.0)], 0.5)
    assert m.precision == 0.5
    assert m.recall == 1.0


def test_interval_helpers():
    assert union_intervals([(5.0, 10.0), (0.0, 6.0), (20.0, 30.0)]) == [(0.0, 10.0), (20.0, 30.0)]
    assert overlap_seconds([(0.0, 10.0), (20.0, 30.0)], [(5.0, 25.0)]) == pytest.approx(10.0)


def test_corpus_metrics_are_micro_averaged():
    a = time_level_metrics([(0.0, 10.0)], [(0.0, 10.0)], 100.0)
    b = time_level_metrics([(0.0, 30.0)], [(0.0, 10.0)], 100.0)
    total = corpus_metrics([a, b])
    assert total.precision == pytest.approx(20 / 40)
    assert total.recall == 1.0
    with pytest.raises(ValueError):
        corpus_metrics([])


def test_load_gold_and_evaluate_corpus(tmp_path):
    path = tmp_path / "gold.jsonl"
    path.write_text(json.dumps({"video_id": "vid1", "spans": [{"start": 10, "end": 40}]}) + "\n"
                    + json.dumps({"video_id": "vid2", "spans": []}) + "\n"
                    + json.dumps({"video_id": "vid3", "spans": [{"start": 0, "end": 5}]}) + "\n", encoding="utf-8")
    gold = load_gold(str(path))
    assert gold["vid1"] == [GoldSpan("vid1", 10.0, 40.0)]
    frame = evaluate_corpus({"vid1": [(20.0, 50.0)], "vid2": []}, gold, {"vid1": 60.0, "vid2": 60.0})
    assert list(frame["video_id"]) == ["vid1", "vid2", "ALL"]
    assert frame.iloc[-1]["segment_f1"] == 1.0
    assert frame.iloc[-1]["time_precision"] == pytest.approx(2 / 3)


@pytest.mark.parametrize("line", [
    '{"video_id": "vid1", "spans": [{"start": 10, "end": 5}]}',
    '{"video_id": "vid1", "spans": [{"start": 0, "end": 10}, {"start": 5, "end": 20}]}',
    '{"video_id": "vid1"}',
    'not json',
])
def test_load_gold_rejects_bad_records(tmp_path, line):
    path = tmp_path / "gold.jsonl"
    path.write_text(line + "\n", encoding="utf-8")
    with pytest.raises(MalformedInput):
        load_gold(str(path))


def test_format_metrics():
    text = format_metrics(segment_level_metrics([(20.0, 50.0)], [(10.0, 40.0)], 0.5))
    assert text.startswith("Segment-level metrics at IoU 0.50")
    assert "F1-score:  1.000" in text


# --------------- Reports ---------------- #
def test_emit_reports_writes_every_table(tmp_path):
    detections, manifest = collection_fixture()
    assignment, ad_detections = cross_tab_fixture()
    reports = ReportSet(prevalence_table(detections, manifest), cross_tab(assignment, ad_detections),
                        pd.DataFrame(columns=["level", "video_id"]))
    written = emit_reports(reports, str(tmp_path), summary={"model_id": "mock"})
    names = sorted(os.path.basename(p) for p in written)
    assert names == ["alignment.csv", "alignment.md", "cross_tab.csv", "cross_tab.md", "eval.csv", "eval.md",
                     "prevalence.csv", "prevalence.md", "summary.json"]
    summary = json.loads((tmp_path / "summary.json").read_text(encoding="utf-8"))
    assert summary["model_id"] == "mock"
    assert "| Johnny Harris" in (tmp_path / "prevalence.md").read_text(encoding="utf-8")

    first = {n: (tmp_path / n).read_bytes() for n in names}
    emit_reports(reports, str(tmp_path), summary={"model_id": "mock"})
    assert {n: (tmp_path / n).read_bytes() for n in names} == first
    with pytest.raises(ValueError):
        emit_reports(reports, str(tmp_path), formats=("pdf",))
