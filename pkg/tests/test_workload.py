import pytest

from error_handling import ConfigError, PreconditionError
from model import BitrateLadder, ScenarioConfig, Video, VideoCatalog
from workload import (build_arrival_plan, curves_for_catalog, load_arrival_plan, make_curves,
                      retention_at, save_arrival_plan)

CURVE_IDS = ['RC1', 'RC2', 'RC3', 'RC4', 'RC5']


class TestRetentionCurves:
    def test_catalogue(self):
        assert set(make_curves()) == {'LINEAR', *CURVE_IDS}

    def test_endpoints(self):
        for curve in make_curves(num_chunks=54).values():
            assert retention_at(curve, 1) == pytest.approx(1.0)
            assert retention_at(curve, 54) == pytest.approx(0.0)

    def test_linear_midpoint(self):
        curve = make_curves(num_chunks=5)['LINEAR']
        assert retention_at(curve, 3) == pytest.approx(0.5)

    def test_non_increasing(self):
        for curve in make_curves(num_chunks=20).values():
            values = [retention_at(curve, i) for i in range(1, 21)]
            assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_pointwise_order(self):
        curves = make_curves(num_chunks=30)
        for index in range(1, 31):
            values = [retention_at(curves[c], index) for c in CURVE_IDS]
            assert all(b <= a + 1e-12 for a, b in zip(values, values[1:]))

    def test_terminal_retention(self):
        curve = make_curves(num_chunks=10, terminal=0.2)['RC2']
        assert retention_at(curve, 10) == pytest.approx(0.2)
        assert retention_at(curve, 1) == pytest.approx(1.0)

    def test_single_chunk_video(self):
        assert retention_at(make_curves(num_chunks=1)['RC5'], 1) == 1.0

    @pytest.mark.parametrize("index", [0, 55])
    def test_out_of_range(self, index):
        with pytest.raises(PreconditionError):
            retention_at(make_curves(num_chunks=54)['LINEAR'], index)

    def test_curves_sized_per_video(self, make_scenario):
        curves = curves_for_catalog(make_scenario())
        assert curves[1].num_chunks == 8
        assert curves[2].curve_id == 'RC3'


class TestArrivalPlan:
    def test_bounds(self, make_scenario):
        cfg = make_scenario(num_clients=50)
        plan = build_arrival_plan(cfg, 3)
        assert len(plan) == 50
        for arrival, video, departure in zip(plan.arrivals, plan.videos, plan.departures):
            duration = cfg.catalog.get(video).duration
            assert 0 <= arrival <= 10
            assert arrival < departure <= cfg.num_slots
            assert departure <= arrival + duration
            assert departure >= min(cfg.num_slots, arrival + 10)

    def test_seeded(self, make_scenario):
        cfg = make_scenario(num_clients=20)
        assert build_arrival_plan(cfg, 5).to_frame().equals(build_arrival_plan(cfg, 5).to_frame())

    def test_popularity_one_video(self, make_scenario):
        cfg = make_scenario(num_clients=30, videos=[
            {"id": 1, "duration": 40, "popularity": 1.0, "min_watch": 10},
            {"id": 2, "duration": 40, "popularity": 0.0, "min_watch": 10},
        ])
        assert set(build_arrival_plan(cfg, 1).videos) == {1}

    def test_min_watch_longer_than_video(self):
        cfg = ScenarioConfig(
            num_clients=2, num_servers=1, num_slots=50, ladder=BitrateLadder((1.0, 2.0)),
            catalog=VideoCatalog((Video(1, 20.0, popularity=1.0, min_watch=30.0),)),
            cache_size=20.0, buffer_cap=5.0)
        with pytest.raises(ConfigError):
            build_arrival_plan(cfg, 1)

    def test_export_and_replay(self, make_scenario, tmp_path):
        plan = build_arrival_plan(make_scenario(), 9)
        path = tmp_path / "plan.csv"
        save_arrival_plan(plan, path)
        replayed = load_arrival_plan(path)
        assert replayed.arrivals == plan.arrivals
        assert replayed.departures == plan.departures
