"""Multi-horizon momentum portfolio construction and backtesting."""

from .autodiff import Tape, Tensor
from .backtest import (BacktestReport, Fold, TrainSpec, grid_search,
                       make_folds, run_backtest, train_model)
from .config import RunConfig
from .data import (Asset, PricePanel, ReturnPanel, load_panel, log_returns,
                   save_panel, simple_returns, synthesize_panel)
from .features import FeaturePanel, momentum_features, trailing_vol
from .losses import (BatchWindow, SoftCapParams, rmse_loss, sharpe_loss,
                     soft_cap_value, soft_capped_sharpe, total_loss)
from .metrics import MetricSummary, summarize
from .model import MmoeConfig, MmoeModel, init_model, load_model, save_model
from .portfolio import (AllocationSeries, StrategyReturns, WeightPanel,
                        apply_costs, combo_tsmom, eqwt_combine,
                        max_sharpe_simplex, mvo_combine, task_portfolio_return,
                        tsmom_weights, unified_return)
from .report import emit_report, write_run_outputs
from .targets import TargetPanel, build_targets, forward_tsmom

__version__ = "0.1.0"
