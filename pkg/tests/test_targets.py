import math

import numpy as np
import pytest

from unimom.data import Asset, PricePanel, synthesize_panel, trading_calendar
from unimom.targets import HORIZONS, TARGET_CLIP, build_targets, forward_tsmom


def panel_from_prices(prices):
    prices = np.asarray(prices, dtype=np.float64)
    cal = trading_calendar(2000, math.ceil(prices.shape[0] / 252) + 1)[:prices.shape[0]]
    assets = [Asset(f"A{j}") for j in range(prices.shape[1])]
    return PricePanel(assets, cal, prices, np.ones(prices.shape, dtype=bool))


def test_constant_future_prices_give_zero():
    panel = panel_from_prices(np.full((80, 1), 42.0))
    sl = forward_tsmom(panel, 20)
    assert sl.valid[:60, 0].all()
    assert np.all(sl.target[sl.valid] == 0.0)


def test_sign_flipped_future_negates():
    panel = synthesize_panel(seed=31, n_assets=1, years=1)
    flipped = PricePanel(panel.assets, panel.calendar,
                         100.0 * 100.0 / panel.prices, panel.valid.copy())
    a = forward_tsmom(panel, 20)
    b = forward_tsmom(flipped, 20)
    assert np.array_equal(a.valid, b.valid)
    unclipped = np.abs(a.target[a.valid]) < TARGET_CLIP
    assert np.allclose(a.target[a.valid][unclipped],
                       -b.target[b.valid][unclipped], atol=1e-9)


def test_steady_gain_floors_then_clips():
    logp = 0.01 * np.arange(40)
    panel = panel_from_prices(100 * np.exp(logp)[:, None])
    sl = forward_tsmom(panel, 20)
    # zero dispersion in the forward window: vol floored, ratio clipped
    assert sl.target[0, 0] == TARGET_CLIP


def test_invalid_horizon_rejected():
    panel = panel_from_prices(np.full((200, 1), 10.0))
    with pytest.raises(ValueError, match="horizon"):
        forward_tsmom(panel, 21)


def test_recompute_from_raw_prices():
    panel = synthesize_panel(seed=33, n_assets=2, years=1)
    s = 20
    sl = forward_tsmom(panel, s)
    for t, j in [(0, 0), (57, 1), (120, 0)]:
        assert sl.valid[t, j]
        legs = np.diff(np.log(panel.prices[t:t + s + 1, j]))
        expected = np.clip(legs.sum() / max(legs.std(), 1e-8),
                           -TARGET_CLIP, TARGET_CLIP)
        assert np.isclose(sl.target[t, j], expected, rtol=1e-12)


def test_tail_dates_masked():
    panel = synthesize_panel(seed=34, n_assets=1, years=1)
    for s in HORIZONS:
        sl = forward_tsmom(panel, s)
        assert not sl.valid[-s:, 0].any()
        assert sl.valid[:-s, 0].all()


def test_depends_only_on_forward_window():
    panel = synthesize_panel(seed=35, n_assets=1, years=1)
    s = 20
    t = 100
    base = forward_tsmom(panel, s).target[t, 0]

    past = panel.prices.copy()
    past[:t] *= 1.7  # prices strictly before the anchor
    changed_past = forward_tsmom(
        PricePanel(panel.assets, panel.calendar, past, panel.valid.copy()), s)
    assert changed_past.target[t, 0] == base

    future = panel.prices.copy()
    future[t + s + 1:] *= 1.7  # prices after the forward window
    changed_far = forward_tsmom(
        PricePanel(panel.assets, panel.calendar, future, panel.valid.copy()), s)
    assert changed_far.target[t, 0] == base

    inside = panel.prices.copy()
    inside[t + 3] *= 1.1  # a price inside (t, t+s]
    changed_inside = forward_tsmom(
        PricePanel(panel.assets, panel.calendar, inside, panel.valid.copy()), s)
    assert changed_inside.target[t, 0] != base


def test_build_targets_stacks_all_horizons():
    panel = synthesize_panel(seed=36, n_assets=2, years=1)
    tp = build_targets(panel)
    assert tp.targets.shape == (panel.n_dates, 2, 3)
    for k, s in enumerate(HORIZONS):
        sl = forward_tsmom(panel, s)
        assert np.array_equal(tp.targets[:, :, k], sl.target)
        assert np.array_equal(tp.valid[:, :, k], sl.valid)
