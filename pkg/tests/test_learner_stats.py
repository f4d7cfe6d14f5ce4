import pytest

from aioguiprobe.learner.learner_stats import TrainingStatistics


def test_loss_window() -> None:
    stats = TrainingStatistics(window=4)
    assert stats.summary().loss_mean is None
    assert stats.summary().loss_pretty == "N/A"

    for loss in [100.0, 1.0, 2.0, 3.0, 4.0]:
        stats.update_loss(loss)
    summary = stats.summary()
    assert summary.steps == 5
    # 100 fell out of the window
    assert summary.loss_mean == pytest.approx(2.5)
    assert summary.loss_quantiles == pytest.approx([1.3, 2.5, 3.7])
    assert summary.loss_pretty == "2.5"


def test_duplicate_losses_leave_the_window_once() -> None:
    stats = TrainingStatistics(window=2)
    for loss in [1.0, 1.0, 5.0]:
        stats.update_loss(loss)
    assert stats.summary().loss_mean == pytest.approx(3.0)


def test_heat() -> None:
    stats = TrainingStatistics()
    stats.update_heat([3, 4])
    stats.update_heat(frozenset({3}))
    stats.merge_heat({4: 2, 9: 1})
    assert stats.heat == {3: 2, 4: 3, 9: 1}
    assert stats.summary(top=2).hottest == [(4, 3), (3, 2)]
