import pytest

from unimom.backtest import make_folds, run_backtest
from unimom.config import RunConfig
from unimom.data import synthesize_panel


def tiny_run_config(**overrides) -> RunConfig:
    base = dict(
        seed=11,
        grid_budget=1,
        grid_domains={"lstm_layers": [1], "lstm_hidden": [8], "n_experts": [2],
                      "task_layers": [2], "task_hidden": [8]},
        enforce_grid_domains=False,
        sequence_length=10,
        batch_days=30,
        first_train_years=3,
        max_epochs=2,
        patience=1,
        jobs=1,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def tiny_panel():
    return synthesize_panel(seed=3, n_assets=6, years=5)


@pytest.fixture(scope="session")
def tiny_rc():
    return tiny_run_config()


@pytest.fixture(scope="session")
def tiny_report(tiny_panel, tiny_rc):
    schedule = make_folds(tiny_panel.calendar, tiny_rc.first_train_years,
                          tiny_rc.val_fraction)
    return run_backtest(tiny_panel, schedule, tiny_rc)
