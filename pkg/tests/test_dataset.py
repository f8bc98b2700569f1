import datetime as dt

import numpy as np
import pytest

from fleetlife.dataset import (
    CLEANING_RULES,
    CleaningConfig,
    CsvSchema,
    PredictionWindow,
    add_months,
    at_risk_mask,
    clean,
    load_csv,
    resolved_mask,
    restrict_to_window,
    rolling_windows,
    write_csv,
)
from fleetlife.exceptions import (
    EmptyInputError,
    EmptyResultError,
    EmptyRiskSetError,
    ParameterError,
    RowParseError,
    SchemaError,
)

HEADER = "id,warm_hours,event,production_date,install_date,last_log_date,ink_volume,color,position\n"


def write(tmp_path, rows, header=HEADER, name="fleet.csv"):
    p = tmp_path / name
    p.write_text(header + "".join(r + "\n" for r in rows), encoding="utf-8")
    return p


ROWS = [
    "a,100,0,2020-01-01,2020-02-01,2020-03-01,50,K,front",
    "b,200,1,2020-01-01,2020-02-01,2020-04-01,300,C,rear",
    "c,300,0,2020-01-01,2020-02-01,2020-05-01,90,K,rear",
]


def test_load_three_rows(tmp_path):
    ds = load_csv(write(tmp_path, ROWS))
    assert len(ds) == 3
    assert list(ds.ids) == ["a", "b", "c"]
    assert ds.censoring_rate == pytest.approx(2 / 3)
    np.testing.assert_allclose(ds.column("ink_volume_per_hour"), [0.5, 1.5, 0.3])
    # 100 h over 29 days in service
    assert ds.column("daily_hours")[0] == pytest.approx(100 / 29)
    assert ds.record(1).event == 1
    assert ds.record(0).install_date == dt.date(2020, 2, 1)


def test_event_value_two_is_row_error(tmp_path):
    rows = ROWS[:1] + ["b,200,2,2020-01-01,2020-02-01,2020-04-01,300,C,rear"]
    with pytest.raises(RowParseError) as info:
        load_csv(write(tmp_path, rows))
    assert [r for r, _ in info.value.rows] == [2]
    assert "event='2'" in info.value.rows[0][1]


def test_row_errors_collected(tmp_path):
    rows = [
        "a,-1,0,2020-01-01,2020-02-01,2020-03-01,50,K,front",
        "b,10,1,2020-13-01,2020-02-01,2020-04-01,300,C,rear",
        "a,10,0,2020-01-01,2020-02-01,2020-01-15,90,K,rear",
    ]
    with pytest.raises(RowParseError) as info:
        load_csv(write(tmp_path, rows))
    got = dict(info.value.rows)
    assert set(got) == {1, 2, 3}
    assert "warm_hours" in got[1] and "ISO date" in got[2]
    assert "duplicate id" in got[3] and "last_log_date precedes install_date" in got[3]


def test_one_hot_first_appearance_order(tmp_path):
    colors = ["M", "K", "M", "Y", "C"]
    rows = [f"u{i},10,0,2020-01-01,2020-02-01,2020-03-01,5,{c},front" for i, c in enumerate(colors)]
    ds = load_csv(write(tmp_path, rows))
    assert ds.categorical_groups["color"] == ("color_M", "color_K", "color_Y", "color_C")
    np.testing.assert_array_equal(ds.column("color_M"), [1, 0, 1, 0, 0])
    assert "color_M" not in ds.design_columns()
    assert "color_M" in ds.design_columns(drop_reference=False)


def test_missing_column_and_empty(tmp_path):
    with pytest.raises(SchemaError):
        load_csv(write(tmp_path, ["a,1"], header="id,warm_hours\n"))
    with pytest.raises(EmptyInputError):
        load_csv(write(tmp_path, [], name="empty.csv"))
    (tmp_path / "blank.csv").write_text("", encoding="utf-8")
    with pytest.raises(EmptyInputError):
        load_csv(tmp_path / "blank.csv")


def test_missing_covariate_dropped_or_imputed(tmp_path):
    rows = ROWS + ["d,100,0,2020-01-01,2020-02-01,2020-03-01,,K,front"]
    assert len(load_csv(write(tmp_path, rows))) == 3
    ds = load_csv(write(tmp_path, rows, name="b.csv"), CsvSchema(impute_missing=True))
    assert len(ds) == 4
    assert ds.column("ink_volume_per_hour")[3] == pytest.approx(np.mean([0.5, 1.5, 0.3]))


def test_custom_schema(tmp_path):
    header = "serial,hours,failed,made,installed,seen,temp\n"
    rows = ["x,10,1,2020-01-01,2020-01-02,2020-01-05,31.5"]
    schema = CsvSchema(id="serial", time="hours", event="failed", production_date="made", install_date="installed",
                       last_log_date="seen", numeric=("temp",), categorical=(), per_hour=(), daily_hours=False)
    ds = load_csv(write(tmp_path, rows, header=header), schema)
    assert ds.feature_names == ("temp", "storage_flag")
    assert ds.column("temp")[0] == 31.5


def test_write_csv_round_trip(tmp_path):
    src = write(tmp_path, ROWS)
    ds = load_csv(src)
    write_csv(ds, tmp_path / "out.csv")
    again = load_csv(tmp_path / "out.csv")
    np.testing.assert_array_equal(again.X, ds.X)
    np.testing.assert_array_equal(again.time, ds.time)
    write_csv(again, tmp_path / "out2.csv")
    assert (tmp_path / "out.csv").read_bytes() == (tmp_path / "out2.csv").read_bytes()


def _clean_rows():
    return [
        # 13 h/day over 10 days
        "over,130,0,2020-01-01,2020-01-01,2020-01-11,10,K,front",
        # installed 2 years after production: kept and flagged
        "stored,100,0,2018-01-01,2020-01-01,2020-03-01,10,K,front",
        # failure after 50 h: dead on arrival
        "doa,50,1,2020-01-01,2020-01-01,2020-01-20,10,K,front",
        "fine,500,1,2020-01-01,2020-01-01,2020-06-01,10,K,rear",
    ]


def test_clean_rules(tmp_path):
    ds = load_csv(write(tmp_path, _clean_rows()))
    out, report = clean(ds, CleaningConfig())
    assert list(out.ids) == ["stored", "fine"]
    assert report.removed == {"usage": 0, "daily_hours": 1, "dead_on_arrival": 1, "old": 0}
    assert report.storage_flagged == 1
    np.testing.assert_array_equal(out.column("storage_flag"), [1, 0])
    assert report.n_input == 4 and report.n_output == 2
    assert sum(report.removed.values()) + len(out) == len(ds)
    text = report.to_text()
    assert "daily_hours" in text and "records kept: 2" in text
    report.to_csv(tmp_path / "rep.csv")
    assert (tmp_path / "rep.csv").read_text().splitlines()[0] == "rule,count"


def test_clean_first_rule_wins_and_usage_threshold(tmp_path):
    ds = load_csv(write(tmp_path, _clean_rows()))
    out, report = clean(ds, CleaningConfig(max_usage_thresholds={"warm_hours": 120}))
    # 'over' breaks both usage and daily_hours; it is charged to usage only; 'fine' breaks usage
    assert report.removed["usage"] == 2 and report.removed["daily_hours"] == 0
    assert list(out.ids) == ["stored"]
    with pytest.raises(ParameterError):
        clean(ds, CleaningConfig(max_usage_thresholds={"nope": 1.0}))


def test_clean_min_production_date(tmp_path):
    ds = load_csv(write(tmp_path, _clean_rows()))
    _, report = clean(ds, CleaningConfig(min_production_date="2019-01-01"))
    assert report.removed["old"] == 1


def test_clean_fixed_point_and_idempotent(small_fleet):
    _, cleaned, _, _ = small_fleet
    again, report = clean(cleaned, CleaningConfig())
    assert all(v == 0 for v in report.removed.values()) and report.storage_flagged == 0
    np.testing.assert_array_equal(again.X, cleaned.X)
    np.testing.assert_array_equal(again.ids, cleaned.ids)


def test_clean_everything_removed(tmp_path):
    ds = load_csv(write(tmp_path, _clean_rows()[2:3]))
    with pytest.raises(EmptyResultError):
        clean(ds, CleaningConfig())


@pytest.mark.parametrize("kwargs", [{"max_daily_hours": 0}, {"doa_max_time": -1}, {"max_usage_thresholds": {"a": 0}}])
def test_cleaning_config_positive(kwargs):
    with pytest.raises(ParameterError):
        CleaningConfig(**kwargs)


def test_cleaning_config_from_file(tmp_path):
    p = tmp_path / "clean.cfg"
    p.write_text("max_daily_hours = 10\ndoa_max_time = 50  # hours\n[max_usage]\nink_volume = 1000\n")
    cfg = CleaningConfig.from_file(p)
    assert cfg.max_daily_hours == 10 and cfg.doa_max_time == 50
    assert cfg.max_usage_thresholds == {"ink_volume": 1000.0}


def test_clean_dataset_immutable(tmp_path):
    ds = load_csv(write(tmp_path, ROWS))
    with pytest.raises(ValueError):
        ds.time[0] = 5.0
    with pytest.raises(Exception):
        ds.time = np.zeros(3)


# windows ---------------------------------------------------------------


def test_rolling_windows_six():
    ws = rolling_windows("2021-05-01")
    assert len(ws) == 6
    assert ws[0] == PredictionWindow(dt.date(2021, 5, 1), dt.date(2022, 5, 1))
    assert ws[-1] == PredictionWindow(dt.date(2023, 11, 1), dt.date(2024, 11, 1))
    assert add_months(dt.date(2021, 1, 31), 1) == dt.date(2021, 2, 28)


def test_window_validation():
    with pytest.raises(ParameterError):
        PredictionWindow("2022-01-01", "2021-01-01")
    with pytest.raises(ParameterError):
        PredictionWindow("2022-01-01", "2022-01-01")
    assert PredictionWindow("2021-01-01", "2021-01-31").span_days == 30


def _window_ds(tmp_path):
    rows = [
        # failed before t0
        "early,100,1,2019-01-01,2019-01-01,2020-06-01,10,K,front",
        # alive at t0, fails inside the window after 400 days of 1 h/day
        "mid,400,1,2019-01-01,2020-01-01,2021-02-04,10,K,front",
        # censored inside the window
        "gone,200,0,2019-01-01,2020-01-01,2021-03-01,10,K,front",
        # alive past t1
        "late,900,0,2019-01-01,2020-01-01,2022-06-01,10,K,front",
        # installed after t0
        "new,10,0,2019-01-01,2021-03-01,2021-04-01,1,K,front",
    ]
    return load_csv(write(tmp_path, rows))


def test_restrict_to_window(tmp_path):
    ds = _window_ds(tmp_path)
    w = PredictionWindow("2021-01-01", "2022-01-01")
    train, truth = restrict_to_window(ds, w)
    assert list(train.ids) == ["early", "mid", "gone", "late"]
    np.testing.assert_array_equal(train.event, [1, 0, 0, 0])
    assert train.last_log_date.max() <= w.t0_np
    # 'mid': 366 of 400 in-service days elapsed at t0
    assert train.time[1] == pytest.approx(400 * 366 / 400)
    # counters scale with exposure, so the per-hour rate is unchanged
    assert train.raw["ink_volume"][1] == pytest.approx(10 * 366 / 400)
    assert list(truth.ids) == ["mid", "gone", "late"]
    np.testing.assert_array_equal(truth.event, [1, 0, 0])
    np.testing.assert_allclose(truth.entry_time, train.time[1:])
    np.testing.assert_array_equal(resolved_mask(truth, w), [True, False, True])
    np.testing.assert_array_equal(at_risk_mask(train, w), [False, True, True, True])


def test_restrict_never_leaks_events(small_fleet):
    _, cleaned, _, _ = small_fleet
    for w in rolling_windows("2021-05-01"):
        train, truth = restrict_to_window(cleaned, w)
        assert train.last_log_date.max() <= w.t0_np
        assert np.all(train.install_date < w.t0_np)
        failed_later = np.isin(train.ids, truth.ids[truth.event == 1])
        assert not np.any(train.event[failed_later] == 1)


def test_restrict_empty_risk_set(tmp_path):
    ds = _window_ds(tmp_path)
    with pytest.raises(EmptyRiskSetError):
        restrict_to_window(ds, PredictionWindow("2010-01-01", "2011-01-01"))
