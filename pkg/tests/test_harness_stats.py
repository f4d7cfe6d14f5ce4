import pytest

from aioguiprobe.harness.harness_stats import (
    bold_best,
    heat_buckets,
    heat_is_monotone,
    markdown_table,
    summarize,
    union_coverage,
)


HEAT = {1: 500, 2: 150, 3: 60, 4: 25, 5: 12, 6: 3}


def test_heat_bucket_edges() -> None:
    trials = [(1, True), (2, True), (3, False), (4, True), (5, False), (6, False), (6, False)]
    buckets = heat_buckets(HEAT, trials)
    assert [b.label for b in buckets] == [">= 300", "100-300", "50-100", "20-50", "10-20", "< 10"]
    assert [b.functions for b in buckets] == [1, 1, 1, 1, 1, 1]
    assert [b.trials for b in buckets] == [1, 1, 1, 1, 1, 2]
    assert [b.success_rate for b in buckets] == [1.0, 1.0, 0.0, 1.0, 0.0, 0.0]


def test_heat_bucket_boundaries_and_unknown_functions() -> None:
    buckets = heat_buckets({1: 300, 2: 100, 3: 99}, [(1, True), (2, True), (3, True), (42, False)])
    assert buckets[0].functions == 1  # 300 is hot
    assert buckets[1].functions == 1  # 100 belongs to 100-300
    assert buckets[2].functions == 1
    # never fired during training
    assert buckets[-1].trials == 1 and buckets[-1].successes == 0


def test_heat_scale() -> None:
    buckets = heat_buckets(HEAT, [(2, True), (6, True)], scale=0.01)
    # edges shrink to 3, 1, 0.5, 0.2, 0.1
    assert buckets[0].trials == 2
    assert buckets[0].label == ">= 300"


def test_flagged_buckets() -> None:
    trials = [(5, True), (5, False), (5, False), (6, True), (6, True), (6, False)]
    buckets = {b.label: b for b in heat_buckets(HEAT, trials)}
    assert buckets["10-20"].success_rate == pytest.approx(1 / 3)
    assert buckets["10-20"].flagged
    assert buckets["< 10"].flagged
    assert not buckets[">= 300"].flagged  # empty


def test_monotone() -> None:
    assert heat_is_monotone(heat_buckets(HEAT, [(1, True), (3, True), (5, False), (6, False)]))
    assert not heat_is_monotone(heat_buckets(HEAT, [(1, False), (6, True)]))


def test_union_coverage() -> None:
    assert union_coverage([(1, False), (1, True), (2, False), (2, False), (3, True)]) == {1: True, 2: False, 3: True}


def test_summarize() -> None:
    summary = summarize([(True, 10), (False, 200), (True, 30), (True, 20)])
    assert summary.targets == 4
    assert summary.covered == 3
    assert summary.events_mean == pytest.approx(20.0)
    assert summary.success_rate == pytest.approx(0.75)
    assert summary.success_pretty == "75.0 %"
    empty = summarize([])
    assert empty.events_mean is None and empty.success_rate is None and empty.success_pretty == "N/A"


def test_bold_best() -> None:
    assert bold_best([3.0, 5.0, None]) == ["3", "**5**", "N/A"]
    assert bold_best([3.0, 5.0], higher_is_better=False) == ["**3**", "5"]
    assert bold_best([4.0, 4.0]) == ["4", "4"]
    assert bold_best([4.0]) == ["4"]
    assert bold_best([0.5, 0.25], fmt="{:.0%}") == ["**50%**", "25%"]


def test_markdown_table() -> None:
    assert markdown_table(["a", "b"], [["1", "2"]]) == "| a | b |\n|---|---|\n| 1 | 2 |\n"
