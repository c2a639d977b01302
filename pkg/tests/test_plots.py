from msdnet import plots
from msdnet.trainer import EpochMetrics


def test_anytime_figure(tmp_path):
    rows = [
        {"budget": 1e5, "accuracy": "", "classifier": "", "status": "no-prediction"},
        {"budget": 2e5, "accuracy": 0.8, "classifier": 1, "status": "ok"},
        {"budget": 4e5, "accuracy": 0.9, "classifier": 2, "status": "ok"},
    ]
    path = tmp_path / "anytime.png"
    plots.anytime_curve_figure(rows, path)
    assert path.stat().st_size > 0


def test_budgeted_figure(tmp_path):
    rows = [
        {"realized_avg_flops": 2e5, "accuracy": 0.8},
        {"realized_avg_flops": 5e5, "accuracy": 0.92},
    ]
    path = tmp_path / "budgeted.png"
    plots.budgeted_curve_figure(rows, path)
    assert path.stat().st_size > 0


def test_ablation_figure(tmp_path):
    rows = [
        {"variant": "full", "classifier": 1, "flops": 1e5, "accuracy": 0.8, "seed": 0},
        {"variant": "full", "classifier": 2, "flops": 3e5, "accuracy": 0.9, "seed": 0},
        {"variant": "no-dense", "classifier": 1, "flops": 1e5, "accuracy": 0.75, "seed": 0},
        {"variant": "no-dense", "classifier": 2, "flops": 3e5, "accuracy": 0.85, "seed": 0},
    ]
    path = tmp_path / "ablation.png"
    plots.ablation_figure(rows, path)
    assert path.stat().st_size > 0


def test_training_curves_figure(tmp_path):
    history = [
        EpochMetrics(epoch=0, lr=0.1, train_loss=0.9, val_accuracy=[0.6, 0.7]),
        EpochMetrics(epoch=1, lr=0.1, train_loss=0.5, val_accuracy=[0.7, 0.8]),
    ]
    path = tmp_path / "train.png"
    plots.training_curves_figure(history, 2, path)
    assert path.stat().st_size > 0
