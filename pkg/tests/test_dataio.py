import numpy as np
import pytest

from treepolicy.dataio import (
    DayProfile,
    NormalizationStats,
    RunConfig,
    build_profiles,
    dump_profiles,
    generate_synthetic_days,
    load_config,
    load_profiles,
    parse_config,
    parse_profiles,
    save_profiles,
    square_wave_prices,
)
from treepolicy.errors import ConfigError, ProfileError


def make_csv(days=1, rows_per_day=24):
    lines = ["hour,price,demand,pv"]
    for d in range(days):
        for h in range(rows_per_day):
            lines.append(f"{h},{0.1 + 0.01 * d},{1.0 + h * 0.1},{0.5}")
    return "\n".join(lines) + "\n"


class TestProfileParsing:
    def test_single_well_formed_day(self):
        days = parse_profiles(make_csv())
        assert len(days) == 1
        assert days[0].label == "day000"
        assert days[0].demand_kw[3] == pytest.approx(1.3)

    def test_two_days_in_file_order(self):
        days = parse_profiles(make_csv(days=2))
        assert len(days) == 2
        assert days[0].prices_eur_per_kwh[0] == pytest.approx(0.10)
        assert days[1].prices_eur_per_kwh[0] == pytest.approx(0.11)

    def test_short_day_names_the_day(self):
        with pytest.raises(ProfileError, match="day000.*23 of 24"):
            parse_profiles(make_csv(rows_per_day=23))

    def test_wrong_column_count_names_line(self):
        text = "hour,price,demand,pv\n0,1,2\n"
        with pytest.raises(ProfileError, match="line 2"):
            parse_profiles(text)

    def test_unparsable_row_names_line(self):
        text = "hour,price,demand,pv\n0,abc,2,3\n"
        with pytest.raises(ProfileError, match="line 2"):
            parse_profiles(text)

    def test_hour_must_cycle(self):
        text = "hour,price,demand,pv\n5,0.1,1,0\n"
        with pytest.raises(ProfileError, match="cycle"):
            parse_profiles(text)

    def test_negative_demand_rejected(self):
        text = "hour,price,demand,pv\n0,0.1,-1,0\n"
        with pytest.raises(ProfileError, match="non-negative"):
            parse_profiles(text)

    def test_missing_header_rejected(self):
        with pytest.raises(ProfileError, match="header"):
            parse_profiles("a,b,c,d\n0,1,2,3\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ProfileError, match="cannot read"):
            load_profiles(str(tmp_path / "nope.csv"))

    def test_round_trip_is_identity(self, tmp_path):
        rng = np.random.default_rng(0)
        days = generate_synthetic_days(3, square_wave_prices(0.05, 0.25, 8, 20), rng)
        path = str(tmp_path / "profiles.csv")
        save_profiles(days, path)
        back = load_profiles(path)
        assert len(back) == len(days)
        for a, b in zip(days, back):
            np.testing.assert_array_equal(a.prices_eur_per_kwh, b.prices_eur_per_kwh)
            np.testing.assert_array_equal(a.demand_kw, b.demand_kw)
            np.testing.assert_array_equal(a.pv_kw, b.pv_kw)

    def test_fuzz_never_panics(self):
        rng = np.random.default_rng(1234)
        header = b"hour,price,demand,pv\n"
        for i in range(300):
            blob = bytes(rng.integers(0, 256, size=rng.integers(0, 400)))
            if i % 3 == 0:
                blob = header + blob
            try:
                parse_profiles(blob)
            except ProfileError:
                pass


class TestSquareWave:
    def test_default_window_counts(self):
        prices = square_wave_prices(0.05, 0.25, 8, 20)
        assert int(np.sum(prices == 0.25)) == 12
        assert int(np.sum(prices == 0.05)) == 12

    def test_degenerate_full_window(self):
        prices = square_wave_prices(0.05, 0.25, 0, 24)
        assert np.all(prices == 0.25)

    def test_equal_prices_rejected(self):
        with pytest.raises(ConfigError):
            square_wave_prices(0.25, 0.25, 8, 20)

    def test_inverted_bounds_rejected(self):
        with pytest.raises(ConfigError):
            square_wave_prices(0.05, 0.25, 20, 8)


class TestNormalization:
    def stats(self):
        return NormalizationStats(0.05, 0.25, 0.0, 4.0, 0.0, 3.0)

    def test_lower_corner_all_zero(self):
        v = self.stats().normalize(0, 0.0, 0.05, 0.0, 0.0, 24, 10.0)
        np.testing.assert_array_equal(v, np.zeros(5))

    def test_upper_corner_all_one(self):
        v = self.stats().normalize(23, 10.0, 0.25, 4.0, 3.0, 24, 10.0)
        np.testing.assert_array_equal(v, np.ones(5))

    def test_price_midpoint_lands_in_slot(self):
        v = self.stats().normalize(0, 0.0, 0.15, 0.0, 0.0, 24, 10.0)
        assert v[2] == pytest.approx(0.5)

    def test_out_of_range_clipped(self):
        v = self.stats().normalize(0, 0.0, 0.50, 9.0, 0.0, 24, 10.0)
        assert v[2] == 1.0 and v[3] == 1.0

    def test_degenerate_feature_maps_to_zero(self):
        s = NormalizationStats(0.1, 0.1, 0.0, 1.0, 0.0, 0.0)
        v = s.normalize(0, 0.0, 0.1, 0.5, 0.0, 24, 10.0)
        assert v[2] == 0.0 and v[4] == 0.0

    def test_monotone_in_every_raw_field(self):
        s = self.stats()
        rng = np.random.default_rng(3)
        for _ in range(200):
            lo = [rng.integers(0, 23), rng.uniform(0, 9), rng.uniform(0.05, 0.24),
                  rng.uniform(0, 3.9), rng.uniform(0, 2.9)]
            hi = [lo[0] + 1, lo[1] + rng.uniform(0, 1), lo[2] + rng.uniform(0, 0.01),
                  lo[3] + rng.uniform(0, 0.1), lo[4] + rng.uniform(0, 0.1)]
            a = s.normalize(lo[0], lo[1], lo[2], lo[3], lo[4], 24, 10.0)
            b = s.normalize(hi[0], hi[1], hi[2], hi[3], hi[4], 24, 10.0)
            assert np.all(b >= a - 1e-12)

    def test_dict_round_trip(self):
        s = self.stats()
        assert NormalizationStats.from_dict(s.to_dict()) == s


class TestSyntheticGenerator:
    def test_shapes_and_positivity(self):
        rng = np.random.default_rng(7)
        days = generate_synthetic_days(5, square_wave_prices(0.05, 0.25, 8, 20), rng)
        assert len(days) == 5
        for d in days:
            assert len(d.demand_kw) == 24
            assert np.all(d.demand_kw >= 0) and np.all(d.pv_kw >= 0)
            assert d.pv_kw.max() > 0.5          # midday bell present
            assert d.pv_kw[0] == 0.0            # nothing at night

    def test_pv_disabled(self):
        rng = np.random.default_rng(7)
        days = generate_synthetic_days(2, square_wave_prices(0.05, 0.25, 8, 20), rng,
                                       pv_enabled=False)
        for d in days:
            assert np.all(d.pv_kw == 0.0)

    def test_seeded_determinism(self):
        a = build_profiles(RunConfig(days=3))
        b = build_profiles(RunConfig(days=3))
        for x, y in zip(a, b):
            np.testing.assert_array_equal(x.demand_kw, y.demand_kw)

    def test_day_profile_validates_length(self):
        with pytest.raises(ProfileError):
            DayProfile(np.zeros(23), np.zeros(23), np.zeros(23), "short")


class TestRunConfig:
    def test_empty_config_is_valid(self):
        cfg = parse_config("")
        assert cfg == RunConfig()

    def test_comments_and_blank_lines(self):
        cfg = parse_config("# comment\n\nepisodes=12\n")
        assert cfg.episodes == 12

    def test_unknown_key_lists_valid_keys(self):
        with pytest.raises(ConfigError, match="valid keys.*battery_capacity_kwh"):
            parse_config("nonsense=1\n")

    def test_bad_value_reports_line(self):
        with pytest.raises(ConfigError, match="line 1"):
            parse_config("episodes=abc\n")

    def test_text_round_trip(self):
        cfg = RunConfig(episodes=123, seeds=(5, 6), price_low=0.01, pv_enabled=False)
        again = parse_config(cfg.to_text())
        assert again == cfg

    def test_tuple_and_bool_parsing(self):
        cfg = parse_config("seeds=7,8,9\npv_enabled=false\naction_levels=-1,-0.5,0,0.5,1\n")
        assert cfg.seeds == (7, 8, 9)
        assert cfg.pv_enabled is False

    def test_depth_guard(self):
        with pytest.raises(ConfigError):
            RunConfig(student_depth=4)

    def test_temperature_guard(self):
        with pytest.raises(ConfigError):
            RunConfig(temperature=0.0)

    def test_price_mode_guard(self):
        with pytest.raises(ConfigError):
            RunConfig(price_mode="stochastic")

    def test_file_mode_requires_path(self):
        with pytest.raises(ConfigError, match="profile_path"):
            build_profiles(RunConfig(price_mode="file"))

    def test_load_config_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "none.cfg"))

    def test_profiles_from_file_mode(self, tmp_path):
        rng = np.random.default_rng(0)
        days = generate_synthetic_days(2, square_wave_prices(0.05, 0.25, 8, 20), rng)
        path = str(tmp_path / "p.csv")
        save_profiles(days, path)
        got = build_profiles(RunConfig(price_mode="file", profile_path=path))
        assert len(got) == 2


def test_dump_profiles_uses_full_precision():
    rng = np.random.default_rng(0)
    days = generate_synthetic_days(1, square_wave_prices(0.05, 0.25, 8, 20), rng)
    text = dump_profiles(days)
    back = parse_profiles(text)
    np.testing.assert_array_equal(back[0].demand_kw, days[0].demand_kw)
