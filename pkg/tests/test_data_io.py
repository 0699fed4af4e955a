"""Parsing, currency conversion, synthetic scenarios, and CSV round trips."""

import io
import math
from datetime import datetime

import numpy as np
import pytest

from meterflow.data_io import (
    ConfigError,
    CsvFormatError,
    MissingRateError,
    PaymentRecord,
    RateSchedule,
    Scenario,
    load_config,
    parse_datetime,
    parse_ground_truth,
    parse_payments,
    payments_to_observations,
    read_trajectory_csv,
    scenario_from_config,
    simulate_scenario,
    to_minutes,
    write_payments_csv,
    write_trajectory_csv,
    write_truth_csv,
)
from meterflow.estimators import trajectory_quantiles
from meterflow.queue_core import build_sample_path
from meterflow.state_model import ModelParams

EPOCH = datetime(2012, 1, 3, 9, 0, 0)
MS = 0.001 / 60.0


class TestParseDatetime:
    def test_single_digit_fields_and_centiseconds(self):
        # transaction logs write month/day without zero padding
        ts = parse_datetime("2012-1-03 15:35:46.46")
        assert ts == datetime(2012, 1, 3, 15, 35, 46, 460000)

    def test_iso_forms(self):
        assert parse_datetime("2012-01-03T09:00:00") == EPOCH
        assert parse_datetime(" 2012-01-03 09:00:00 ") == EPOCH

    def test_garbage_rejected(self):
        with pytest.raises(ValueError):
            parse_datetime("Jan 3 2012")


class TestParsePayments:
    def test_log_style_row(self):
        fh = io.StringIO(
            "block_id,date,amount\n468022,2012-1-03 15:35:46.46,1.25\n"
        )
        recs = parse_payments(fh)
        assert recs == [
            PaymentRecord("468022", datetime(2012, 1, 3, 15, 35, 46, 460000), 1.25)
        ]

    def test_sorted_by_block_then_time(self):
        fh = io.StringIO(
            "block_id,date,amount\n"
            "B2,2012-01-03 10:00:00,1.0\n"
            "B1,2012-01-03 11:00:00,2.0\n"
            "B1,2012-01-03 10:30:00,3.0\n"
        )
        recs = parse_payments(fh)
        assert [(r.block_id, r.amount) for r in recs] == [
            ("B1", 3.0), ("B1", 2.0), ("B2", 1.0)
        ]

    def test_exact_duplicates_dropped(self):
        row = "B1,2012-01-03 10:00:00,1.25\n"
        fh = io.StringIO("block_id,date,amount\n" + row + row + row)
        assert len(parse_payments(fh)) == 1

    def test_bad_header(self):
        with pytest.raises(CsvFormatError) as exc:
            parse_payments(io.StringIO("date,amount\n"))
        assert exc.value.errors[0][0] == 1

    def test_errors_carry_line_numbers(self):
        fh = io.StringIO(
            "block_id,date,amount\n"
            "B1,2012-01-03 10:00:00,1.0\n"
            "B1,not-a-date,1.0\n"
            "B1,2012-01-03 10:05:00,-2.0\n"
        )
        with pytest.raises(CsvFormatError) as exc:
            parse_payments(fh)
        assert [ln for ln, _ in exc.value.errors] == [3, 4]

    def test_stops_after_ten_errors(self):
        body = "".join(f"B1,bad,{k}\n" for k in range(15))
        with pytest.raises(CsvFormatError) as exc:
            parse_payments(io.StringIO("block_id,date,amount\n" + body))
        assert len(exc.value.errors) == 10

    def test_blank_lines_ignored(self):
        fh = io.StringIO(
            "block_id,date,amount\n\nB1,2012-01-03 10:00:00,1.0\n\n"
        )
        assert len(parse_payments(fh)) == 1


class TestRateSchedule:
    def test_from_config_and_lookup(self):
        sched = RateSchedule.from_config({"B1": [["09:00", "18:00", 2.0]]})
        assert sched.rate_at("B1", datetime(2012, 1, 3, 12, 0)) == 2.0
        # window is half open on the right
        assert sched.rate_at("B1", datetime(2012, 1, 3, 18, 0)) is None
        assert sched.rate_at("B1", datetime(2012, 1, 3, 8, 59, 59)) is None
        assert sched.rate_at("B9", datetime(2012, 1, 3, 12, 0)) is None

    def test_piecewise_rates(self):
        sched = RateSchedule.from_config(
            {"B1": [["09:00", "12:00", 2.0], ["12:00", "18:00", 3.5]]}
        )
        assert sched.rate_at("B1", datetime(2012, 1, 3, 11, 59, 59)) == 2.0
        assert sched.rate_at("B1", datetime(2012, 1, 3, 12, 0)) == 3.5

    def test_overlap_rejected(self):
        with pytest.raises(ValueError):
            RateSchedule({"B1": [(540.0, 720.0, 2.0), (700.0, 1080.0, 3.0)]})

    def test_bad_windows_rejected(self):
        with pytest.raises(ValueError):
            RateSchedule({"B1": [(540.0, 1500.0, 2.0)]})
        with pytest.raises(ValueError):
            RateSchedule({"B1": [(540.0, 1080.0, 0.0)]})


class TestPaymentsToObservations:
    SCHED = RateSchedule.from_config({"B1": [["09:00", "18:00", 2.0]]})

    def recs(self, *rows):
        return [PaymentRecord("B1", ts, amt) for ts, amt in rows]

    def test_dollar_conversion(self):
        # $1.25 at $2/hour buys 37.5 minutes; 10 elapsed since window start
        recs = self.recs((datetime(2012, 1, 3, 9, 10), 1.25))
        obs = payments_to_observations(
            recs, self.SCHED, "B1", (EPOCH, datetime(2012, 1, 3, 18, 0))
        )
        assert len(obs) == 1
        assert obs[0].meter_balance == 27.5
        assert obs[0].pay_time == to_minutes(recs[0].timestamp, EPOCH)

    def test_balance_folds_across_payments(self):
        recs = self.recs(
            (datetime(2012, 1, 3, 10, 0), 1.0),
            (datetime(2012, 1, 3, 10, 30), 2.0),
        )
        obs = payments_to_observations(
            recs, self.SCHED, "B1",
            (datetime(2012, 1, 3, 9, 50), datetime(2012, 1, 3, 18, 0)),
        )
        # $1 buys 30 min, 10 burned by pay time; $2 adds 60, 30 burned in gap
        assert [(o.pay_time, o.meter_balance) for o in obs] == [
            (10.0, 20.0), (40.0, 50.0)
        ]

    def test_window_and_block_filtering(self):
        recs = self.recs(
            (datetime(2012, 1, 3, 8, 0), 1.0),
            (datetime(2012, 1, 3, 10, 0), 1.0),
            (datetime(2012, 1, 3, 19, 0), 1.0),
        ) + [PaymentRecord("B2", datetime(2012, 1, 3, 10, 0), 1.0)]
        obs = payments_to_observations(
            recs, self.SCHED, "B1", (EPOCH, datetime(2012, 1, 3, 18, 0))
        )
        assert len(obs) == 1

    def test_zero_amount_rows_dropped(self):
        recs = self.recs(
            (datetime(2012, 1, 3, 10, 0), 0.0),
            (datetime(2012, 1, 3, 11, 0), 1.0),
        )
        obs = payments_to_observations(
            recs, self.SCHED, "B1", (EPOCH, datetime(2012, 1, 3, 18, 0))
        )
        assert len(obs) == 1
        assert obs[0].pay_time == 120.0

    def test_shared_instant_nudged_forward(self):
        ts = datetime(2012, 1, 3, 10, 0)
        recs = self.recs((ts, 1.0), (ts, 2.0))
        with pytest.warns(UserWarning):
            obs = payments_to_observations(
                recs, self.SCHED, "B1", (EPOCH, datetime(2012, 1, 3, 18, 0))
            )
        assert obs[0].pay_time == 60.0
        assert obs[1].pay_time == 60.0 + MS

    def test_minutes_unit_skips_rate_table(self):
        recs = self.recs((datetime(2012, 1, 3, 10, 0), 25.0))
        obs = payments_to_observations(
            recs, None, "B1",
            (datetime(2012, 1, 3, 9, 50), datetime(2012, 1, 3, 18, 0)),
            amount_unit="minutes",
        )
        assert obs[0].meter_balance == 15.0

    def test_missing_rate(self):
        recs = self.recs((datetime(2012, 1, 3, 19, 0), 1.0))
        with pytest.raises(MissingRateError):
            payments_to_observations(
                recs, self.SCHED, "B1", (EPOCH, datetime(2012, 1, 3, 20, 0))
            )

    def test_bad_window_and_unit(self):
        with pytest.raises(ValueError):
            payments_to_observations([], self.SCHED, "B1", (EPOCH, EPOCH))
        with pytest.raises(ValueError):
            payments_to_observations(
                [], self.SCHED, "B1", (EPOCH, datetime(2012, 1, 3, 18, 0)),
                amount_unit="hours",
            )


class TestParseGroundTruth:
    def test_reads_and_uses_earliest_epoch(self):
        fh = io.StringIO(
            "block_id,time,occupied,capacity\n"
            "B1,2012-01-03 09:10:00,3,7\n"
            "B1,2012-01-03 09:00:00,2,7\n"
        )
        by_block, epoch = parse_ground_truth(fh)
        assert epoch == EPOCH
        gt = by_block["B1"]
        assert list(gt.snapshot_times) == [0.0, 10.0]
        assert list(gt.occupied) == [2, 3]
        assert list(gt.capacity) == [7, 7]

    def test_explicit_epoch(self):
        fh = io.StringIO(
            "block_id,time,occupied,capacity\nB1,2012-01-03 09:30:00,1,4\n"
        )
        by_block, epoch = parse_ground_truth(fh, epoch=EPOCH)
        assert epoch == EPOCH
        assert list(by_block["B1"].snapshot_times) == [30.0]

    def test_blocks_split(self):
        fh = io.StringIO(
            "block_id,time,occupied,capacity\n"
            "B2,2012-01-03 09:00:00,1,4\n"
            "B1,2012-01-03 09:00:00,2,7\n"
        )
        by_block, _ = parse_ground_truth(fh)
        assert sorted(by_block) == ["B1", "B2"]

    def test_overfull_snapshot_rejected(self):
        fh = io.StringIO(
            "block_id,time,occupied,capacity\nB1,2012-01-03 09:00:00,8,7\n"
        )
        with pytest.raises(CsvFormatError) as exc:
            parse_ground_truth(fh)
        assert exc.value.errors[0][0] == 2

    def test_header_only(self):
        by_block, epoch = parse_ground_truth(
            io.StringIO("block_id,time,occupied,capacity\n")
        )
        assert by_block == {} and epoch is None


class TestSimulateScenario:
    THETA = ModelParams(0.752, 5.0, 0.8, 7)

    def test_full_compliance_pays_every_arrival(self):
        sc = Scenario(theta=ModelParams(0.752, 5.0, 1.0, 7), num_payments=40, seed=3)
        res = simulate_scenario(sc)
        assert len(res.observations) == 40
        assert len(res.true_path.arrivals) == 40
        assert np.array_equal(res.payer_index, np.arange(40))
        assert np.all(res.amounts > 0)

    def test_nonpayer_count_matches_compliance(self):
        # extra arrivals before the 10th payment average K(1-p)/p
        extras = []
        for seed in range(200):
            sc = Scenario(theta=self.THETA, num_payments=10, seed=seed)
            res = simulate_scenario(sc)
            extras.append(len(res.true_path.arrivals) - 10)
        se = math.sqrt(10 * 0.2 / 0.8**2 / 200)
        assert abs(np.mean(extras) - 10 * 0.2 / 0.8) < 3 * se

    def test_observation_times_strictly_increase(self):
        res = simulate_scenario(Scenario(theta=self.THETA, num_payments=40, seed=11))
        times = [o.pay_time for o in res.observations]
        assert all(b > a for a, b in zip(times, times[1:]))
        assert all(o.meter_balance >= 0 for o in res.observations)

    def test_truth_grid(self):
        res = simulate_scenario(Scenario(theta=self.THETA, num_payments=40, seed=11))
        t = np.asarray(res.truth.snapshot_times)
        assert t[0] == 0.0
        assert np.allclose(np.diff(t), 5.0)
        assert t[-1] <= res.observations[-1].pay_time < t[-1] + 5.0
        assert np.all(np.asarray(res.truth.occupied) <= 7)

    def test_same_seed_bitwise_identical(self):
        sc = Scenario(theta=self.THETA, num_payments=40, seed=17)
        r1, r2 = simulate_scenario(sc), simulate_scenario(sc)
        assert r1.observations == r2.observations
        assert np.array_equal(r1.true_path.arrivals, r2.true_path.arrivals)
        assert np.array_equal(r1.true_path.departures, r2.true_path.departures)
        assert np.array_equal(r1.amounts, r2.amounts)

    def test_bad_payment_count(self):
        with pytest.raises(ValueError):
            Scenario(theta=self.THETA, num_payments=0, seed=1)


class TestConfig:
    GOOD = {
        "lambda": 0.752, "mean_parking": 5.0, "compliance": 0.8,
        "spaces": 7, "num_payments": 40, "seed": 4711,
    }

    def test_load_json_and_toml(self, tmp_path):
        j = tmp_path / "c.json"
        j.write_text('{"lambda": 0.5}')
        assert load_config(j) == {"lambda": 0.5}
        t = tmp_path / "c.toml"
        t.write_text('mean_parking = 5.0\n')
        assert load_config(t) == {"mean_parking": 5.0}

    def test_unparseable_config(self, tmp_path):
        j = tmp_path / "c.json"
        j.write_text("{nope")
        with pytest.raises(ConfigError):
            load_config(j)

    def test_scenario_defaults(self):
        sc = scenario_from_config(dict(self.GOOD))
        assert sc.theta == ModelParams(0.752, 5.0, 0.8, 7)
        assert sc.block_id == "B1"
        assert sc.origin == EPOCH
        assert sc.seed == 4711

    def test_scenario_overrides(self):
        cfg = dict(self.GOOD, origin="2013-06-01 08:00:00", block_id="X9")
        sc = scenario_from_config(cfg)
        assert sc.origin == datetime(2013, 6, 1, 8, 0)
        assert sc.block_id == "X9"

    def test_missing_field_named(self):
        cfg = dict(self.GOOD)
        del cfg["mean_parking"]
        with pytest.raises(ConfigError, match="mean_parking"):
            scenario_from_config(cfg)

    def test_invalid_values_wrapped(self):
        with pytest.raises(ConfigError):
            scenario_from_config(dict(self.GOOD, **{"lambda": -1.0}))
        with pytest.raises(ConfigError):
            scenario_from_config(dict(self.GOOD, origin="whenever"))


class TestCsvRoundTrips:
    def test_payments_round_trip(self, tmp_path):
        f = tmp_path / "pay.csv"
        write_payments_csv(f, "B1", [12.25, 47.5], [2.5, 0.75], EPOCH)
        recs = parse_payments(f)
        assert [r.amount for r in recs] == [2.5, 0.75]
        assert [to_minutes(r.timestamp, EPOCH) for r in recs] == [12.25, 47.5]

    def test_truth_round_trip(self, tmp_path):
        res = simulate_scenario(
            Scenario(theta=ModelParams(0.752, 5.0, 1.0, 7), num_payments=20, seed=5)
        )
        f = tmp_path / "truth.csv"
        write_truth_csv(f, "B1", res.truth, EPOCH)
        by_block, epoch = parse_ground_truth(f)
        assert epoch == EPOCH
        gt = by_block["B1"]
        assert np.array_equal(gt.occupied, res.truth.occupied)
        assert np.array_equal(gt.capacity, res.truth.capacity)
        # stamps are stored at microsecond grain
        assert np.allclose(gt.snapshot_times, res.truth.snapshot_times, atol=1e-6)

    def test_trajectory_round_trip(self, tmp_path):
        p1 = build_sample_path(([1.0, 2.0], [10.0, 10.0], 3))
        p2 = build_sample_path(([0.5, 1.0], [4.0, 0.5], 3))
        band = trajectory_quantiles([p1, p2], [0.0, 2.5, 8.0])
        f = tmp_path / "band.csv"
        write_trajectory_csv(f, band, EPOCH)
        back, epoch = read_trajectory_csv(f)
        assert epoch == EPOCH
        assert np.allclose(back.eval_times, band.eval_times, atol=1e-6)
        for lv in (0.05, 0.25, 0.5, 0.75, 0.95):
            assert np.array_equal(back.quantiles[lv], band.quantiles[lv])
        assert np.array_equal(back.mean, back.quantiles[0.5])
        assert back.capacity == int(np.ceil(band.quantiles[0.95].max()))

    def test_trajectory_requires_rows(self, tmp_path):
        f = tmp_path / "band.csv"
        f.write_text("time,q05,q25,q50,q75,q95\n")
        with pytest.raises(CsvFormatError):
            read_trajectory_csv(f)
