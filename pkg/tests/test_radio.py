import math

import numpy as np
import pandas as pd
import pytest

from error_handling import ExperimentIOError, IncompleteTraceError, PreconditionError
from radio import (INFEASIBLE, RadioParams, SnrTrace, effective_throughput, generate_trace, load_trace,
                   path_loss, rb_cost, save_trace, spectral_efficiency, theoretical_throughput)


class TestSpectralEfficiency:
    def test_below_floor_is_zero(self):
        assert spectral_efficiency(-15.0) == 0.0

    def test_at_ceiling_is_capped(self):
        assert spectral_efficiency(23.0) == pytest.approx(4.4, rel=1e-12)

    def test_shannon_branch(self):
        assert spectral_efficiency(0.0) == pytest.approx(0.6, rel=1e-12)

    def test_floor_boundary_uses_shannon_branch(self):
        expected = 0.6 * math.log2(1.0 + 10.0 ** -1.0)
        assert spectral_efficiency(-10.0) == pytest.approx(expected, rel=1e-12)

    def test_theoretical_throughput_scales_by_rb_bandwidth(self):
        assert theoretical_throughput(30.0) == pytest.approx(4.4 * 0.18)


class TestEffectiveThroughput:
    def test_proportional_fair_share(self):
        shares = effective_throughput(1, 1, [(1, 1.0), (2, 3.0)], 28)
        assert shares[1] == pytest.approx(7.0)
        assert shares[2] == pytest.approx(63.0)

    def test_single_client_gets_the_whole_budget(self):
        shares = effective_throughput(1, 1, [(5, 0.5)], 28)
        assert shares[5] == pytest.approx(14.0)

    def test_all_dead_links(self):
        assert effective_throughput(1, 1, [(1, 0.0), (2, 0.0)], 28) == {1: 0.0, 2: 0.0}

    def test_negative_throughput_rejected(self):
        with pytest.raises(PreconditionError):
            effective_throughput(1, 1, [(1, -1.0)], 28)


class TestRbCost:
    def test_exact_multiple(self):
        assert rb_cost(3.0, 1.0) == 3

    def test_rounds_up(self):
        assert rb_cost(2.5, 1.0) == 3

    def test_float_noise_on_exact_fit(self):
        assert rb_cost(0.792, 0.792) == 1

    def test_float_noise_below_a_multiple(self):
        # 0.3 / 0.1 evaluates to 2.9999999999999996
        assert rb_cost(0.3, 0.1) == 3

    def test_tiny_excess_still_costs_an_extra_block(self):
        assert rb_cost(3.0000000001, 1.0) == 4

    @pytest.mark.parametrize("thr", [0.1, 0.0792, 0.1188, 0.3, 0.7, 0.792])
    def test_granted_blocks_carry_the_bitrate(self, thr):
        for bitrate in [0.3, 1.5, 1.7, 2.2, 2.6, 3.0, 3.5, 3.8, 4.3, 4.5, 5.0]:
            rbs = rb_cost(bitrate, thr)
            assert rbs * thr >= bitrate
            assert (rbs - 1) * thr < bitrate

    def test_dead_link_is_infeasible(self):
        assert rb_cost(1.0, 0.0) == INFEASIBLE


class TestGeometry:
    def test_reference_distance(self):
        params = RadioParams()
        assert path_loss(np.array([1000.0]), params)[0] == pytest.approx(128.1)

    def test_ten_times_farther(self):
        params = RadioParams()
        assert path_loss(np.array([10000.0]), params)[0] == pytest.approx(128.1 + 37.6)

    def test_minimum_distance_clamp(self):
        params = RadioParams()
        assert path_loss(np.array([0.0]), params)[0] == pytest.approx(path_loss(np.array([1.0]), params)[0])

    def test_generated_trace_is_seeded(self, make_scenario):
        cfg = make_scenario()
        first = generate_trace(cfg, 7)
        again = generate_trace(cfg, 7)
        other = generate_trace(cfg, 8)
        assert first.grid.shape == (cfg.num_clients, cfg.num_servers, cfg.num_slots)
        np.testing.assert_array_equal(first.grid, again.grid)
        assert not np.array_equal(first.grid, other.grid)

    def test_invalid_params(self):
        with pytest.raises(PreconditionError):
            RadioParams(snr_min=5.0, snr_max=5.0)


class TestSnrTrace:
    def test_best_server_tie_goes_to_lowest_id(self, flat_trace):
        assert flat_trace(1, 3, 2).best_server(1, 1) == 1

    def test_best_server_argmax(self):
        grid = np.zeros((1, 2, 1))
        grid[0, :, 0] = [5.0, 9.0]
        assert SnrTrace(grid).best_server(1, 1) == 2


class TestLoadTrace:
    def _write(self, path, rows):
        pd.DataFrame(rows, columns=['client', 'server', 'slot', 'snr_db']).to_csv(path, index=False)

    def test_complete_trace(self, tmp_path, flat_trace):
        path = tmp_path / "trace.csv"
        save_trace(flat_trace(2, 2, 3, 12.5), path)
        trace = load_trace(path)
        assert trace.grid.shape == (2, 2, 3)
        assert trace.snr(2, 1, 3) == 12.5

    def test_missing_row_is_named(self, tmp_path):
        path = tmp_path / "trace.csv"
        rows = [(c, k, t, 1.0) for c in (1, 2) for k in (1, 2) for t in (1, 2)]
        rows.remove((2, 1, 2, 1.0))
        self._write(path, rows)
        with pytest.raises(IncompleteTraceError) as excinfo:
            load_trace(path)
        assert excinfo.value.missing == (2, 1, 2)

    def test_duplicates_keep_last(self, tmp_path):
        path = tmp_path / "trace.csv"
        rows = [(1, 1, 1, 3.0), (1, 1, 2, 4.0), (1, 1, 1, 9.0)]
        self._write(path, rows)
        trace = load_trace(path)
        assert trace.snr(1, 1, 1) == 9.0
        assert trace.duplicate_rows == 1

    def test_wrong_header(self, tmp_path):
        path = tmp_path / "trace.csv"
        pd.DataFrame({'a': [1], 'b': [2]}).to_csv(path, index=False)
        with pytest.raises(ExperimentIOError):
            load_trace(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ExperimentIOError):
            load_trace(tmp_path / "nope.csv")
