//! Resolution of relative date/time expressions into exact local datetimes.
//!
//! The grammar is closed: every accepted phrase maps to one [`DatePart`] and
//! one [`TimePart`]. The canonical forms are listed in
//! `grammar/time_expr.grammar`, and [`render`] produces them.
//!
//! Weeks are Monday-start calendar weeks. `"N weeks later, Fri"` is the
//! Friday of the calendar week N weeks after the current one, so an
//! expression issued on Wednesday 2024-08-28 with `"1 week later, Fri"`
//! lands on 2024-09-06. `"next Fri"` is an alias for the same expression.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, NaiveTime, Timelike, Weekday};

/// Canonical grammar, one rule per line.
pub const GRAMMAR: &str = include_str!("../grammar/time_expr.grammar");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DatePart {
    Now,
    Today,
    Tomorrow,
    DayAfterTomorrow,
    ExplicitDate(NaiveDate),
    /// First date strictly after today falling on the weekday.
    NextWeekday(Weekday),
    /// The weekday inside the current Monday-start week.
    ThisWeekday(Weekday),
    /// The weekday inside the Monday-start week `n` weeks ahead (`n >= 1`).
    WeeksLaterWeekday(u32, Weekday),
    /// `n >= 1` days after today.
    DaysLater(u32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Period {
    Morning,
    Noon,
    Evening,
}

impl Period {
    pub fn clock(self) -> NaiveTime {
        let hour = match self {
            Period::Morning => 8,
            Period::Noon => 12,
            Period::Evening => 18,
        };
        NaiveTime::from_hms_opt(hour, 0, 0).expect("valid hour")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TimePart {
    Unspecified,
    Explicit(NaiveTime),
    NamedPeriod(Period),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TimeExpr {
    pub date: DatePart,
    pub time: TimePart,
}

impl TimeExpr {
    pub const fn new(date: DatePart, time: TimePart) -> Self {
        Self { date, time }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum TemporalError {
    #[error("unrecognized {part} expression `{text}`")]
    UnrecognizedExpression { part: &'static str, text: String },
    #[error("resolved time {resolved} is before the current time {current}")]
    PastDatetime { resolved: NaiveDateTime, current: NaiveDateTime },
    #[error("date out of supported range")]
    OutOfRange,
}

const WEEKDAYS: [(Weekday, &str, &str); 7] = [
    (Weekday::Mon, "mon", "monday"),
    (Weekday::Tue, "tue", "tuesday"),
    (Weekday::Wed, "wed", "wednesday"),
    (Weekday::Thu, "thu", "thursday"),
    (Weekday::Fri, "fri", "friday"),
    (Weekday::Sat, "sat", "saturday"),
    (Weekday::Sun, "sun", "sunday"),
];

fn parse_weekday(word: &str) -> Option<Weekday> {
    match word.trim_end_matches('.') {
        "tues" => Some(Weekday::Tue),
        "thur" | "thurs" => Some(Weekday::Thu),
        word => WEEKDAYS.iter().find(|(_, short, long)| word == *short || word == *long).map(|(wd, _, _)| *wd),
    }
}

pub fn weekday_abbrev(wd: Weekday) -> &'static str {
    match wd {
        Weekday::Mon => "Mon",
        Weekday::Tue => "Tue",
        Weekday::Wed => "Wed",
        Weekday::Thu => "Thu",
        Weekday::Fri => "Fri",
        Weekday::Sat => "Sat",
        Weekday::Sun => "Sun",
    }
}

fn parse_count(word: &str) -> Option<u32> {
    let n = match word {
        "a" | "one" => 1,
        "two" => 2,
        "three" => 3,
        "four" => 4,
        "five" => 5,
        "six" => 6,
        "seven" => 7,
        "eight" => 8,
        _ => word.parse().ok()?,
    };
    (n >= 1).then_some(n)
}

fn normalize(text: &str) -> String {
    let lowered = text.trim().trim_end_matches(['.', '!', '?']).to_lowercase();
    let spaced = lowered.replace(',', " , ");
    let words: Vec<&str> = spaced.split_whitespace().collect();
    words.join(" ").replace(" ,", ",")
}

fn parse_date_text(raw: &str) -> Option<DatePart> {
    let text = normalize(raw);
    let text = text.strip_prefix("on ").unwrap_or(&text);
    let words: Vec<&str> = text.split([' ', ',']).filter(|w| !w.is_empty()).collect();
    match words.as_slice() {
        [] => Some(DatePart::Today),
        ["now"] | ["right", "now"] | ["immediately"] | ["asap"] => Some(DatePart::Now),
        ["today"] | ["tonight"] => Some(DatePart::Today),
        ["tomorrow"] => Some(DatePart::Tomorrow),
        ["day", "after", "tomorrow"] | ["the", "day", "after", "tomorrow"] => Some(DatePart::DayAfterTomorrow),
        ["next", wd] | ["next", "week", wd] => parse_weekday(wd).map(|w| DatePart::WeeksLaterWeekday(1, w)),
        ["this", wd] => parse_weekday(wd).map(DatePart::ThisWeekday),
        ["coming", wd] | ["this", "coming", wd] => parse_weekday(wd).map(DatePart::NextWeekday),
        [n, "week" | "weeks", "later", wd] | ["in", n, "week" | "weeks", wd] => {
            let n = parse_count(n)?;
            parse_weekday(wd).map(|w| DatePart::WeeksLaterWeekday(n, w))
        }
        [n, "day" | "days", "later"] | ["in", n, "day" | "days"] => parse_count(n).map(DatePart::DaysLater),
        [single] => parse_weekday(single)
            .map(DatePart::NextWeekday)
            .or_else(|| parse_iso_date(single).map(DatePart::ExplicitDate)),
        _ => None,
    }
}

fn parse_iso_date(text: &str) -> Option<NaiveDate> {
    let mut parts = text.split(['-', '/']);
    let y: i32 = parts.next()?.parse().ok()?;
    let m: u32 = parts.next()?.parse().ok()?;
    let d: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || !(1000..=9999).contains(&y) {
        return None;
    }
    NaiveDate::from_ymd_opt(y, m, d)
}

fn parse_clock(text: &str) -> Option<NaiveTime> {
    let (clock, meridiem) = if let Some(rest) = text.strip_suffix("am") {
        (rest.trim(), Some(false))
    } else if let Some(rest) = text.strip_suffix("pm") {
        (rest.trim(), Some(true))
    } else {
        (text, None)
    };
    let mut parts = clock.split(':');
    let h: u32 = parts.next()?.trim().parse().ok()?;
    let m: u32 = match parts.next() {
        Some(p) => p.parse().ok()?,
        None if meridiem.is_some() => 0,
        None => return None,
    };
    let s: u32 = match parts.next() {
        Some(p) => p.parse().ok()?,
        None => 0,
    };
    if parts.next().is_some() {
        return None;
    }
    let h = match meridiem {
        None => h,
        Some(_) if !(1..=12).contains(&h) => return None,
        Some(false) => h % 12,
        Some(true) => h % 12 + 12,
    };
    NaiveTime::from_hms_opt(h, m, s)
}

fn parse_time_text(raw: &str) -> Option<TimePart> {
    let text = normalize(raw);
    let text = text.strip_prefix("at ").unwrap_or(&text);
    let text = text.strip_prefix("around ").unwrap_or(text);
    match text {
        "" => Some(TimePart::Unspecified),
        "morning" | "in the morning" => Some(TimePart::NamedPeriod(Period::Morning)),
        "noon" | "midday" | "at noon" => Some(TimePart::NamedPeriod(Period::Noon)),
        "evening" | "in the evening" | "tonight" => Some(TimePart::NamedPeriod(Period::Evening)),
        other => parse_clock(other).map(TimePart::Explicit),
    }
}

/// Parses the `(date, time)` argument pair of a time-tool call.
pub fn parse_time_expr(date_text: &str, time_text: &str) -> Result<TimeExpr, TemporalError> {
    let date = parse_date_text(date_text)
        .ok_or_else(|| TemporalError::UnrecognizedExpression { part: "date", text: date_text.to_string() })?;
    let time = parse_time_text(time_text)
        .ok_or_else(|| TemporalError::UnrecognizedExpression { part: "time", text: time_text.to_string() })?;
    Ok(TimeExpr { date, time })
}

/// Canonical `(date, time)` text for an expression.
pub fn render(expr: &TimeExpr) -> (String, String) {
    let date = match expr.date {
        DatePart::Now => "now".to_string(),
        DatePart::Today => "today".to_string(),
        DatePart::Tomorrow => "tomorrow".to_string(),
        DatePart::DayAfterTomorrow => "day after tomorrow".to_string(),
        DatePart::ExplicitDate(d) => format!("{}", d.format("%Y-%m-%d")),
        DatePart::NextWeekday(w) => format!("coming {}", weekday_abbrev(w)),
        DatePart::ThisWeekday(w) => format!("this {}", weekday_abbrev(w)),
        DatePart::WeeksLaterWeekday(1, w) => format!("1 week later, {}", weekday_abbrev(w)),
        DatePart::WeeksLaterWeekday(n, w) => format!("{n} weeks later, {}", weekday_abbrev(w)),
        DatePart::DaysLater(1) => "1 day later".to_string(),
        DatePart::DaysLater(n) => format!("{n} days later"),
    };
    let time = match expr.time {
        TimePart::Unspecified => String::new(),
        TimePart::Explicit(t) => format!("{}", t.format("%H:%M:%S")),
        TimePart::NamedPeriod(Period::Morning) => "morning".to_string(),
        TimePart::NamedPeriod(Period::Noon) => "noon".to_string(),
        TimePart::NamedPeriod(Period::Evening) => "evening".to_string(),
    };
    (date, time)
}

fn week_start(date: NaiveDate) -> NaiveDate {
    date - Duration::days(i64::from(date.weekday().num_days_from_monday()))
}

fn add_days(date: NaiveDate, days: i64) -> Result<NaiveDate, TemporalError> {
    date.checked_add_signed(Duration::days(days)).ok_or(TemporalError::OutOfRange)
}

/// Resolves an expression against the query's issue time.
///
/// An unspecified clock time means "now" for `Now`/`Today` and 08:00:00
/// otherwise. Scheduled (non-`Now`/`Today`) results that precede
/// `current` are rejected with [`TemporalError::PastDatetime`].
pub fn resolve_time(expr: &TimeExpr, current: NaiveDateTime) -> Result<NaiveDateTime, TemporalError> {
    let today = current.date();
    let date = match expr.date {
        DatePart::Now | DatePart::Today => today,
        DatePart::Tomorrow => add_days(today, 1)?,
        DatePart::DayAfterTomorrow => add_days(today, 2)?,
        DatePart::ExplicitDate(d) => d,
        DatePart::NextWeekday(w) => {
            let ahead =
                (7 + i64::from(w.num_days_from_monday()) - i64::from(today.weekday().num_days_from_monday())) % 7;
            add_days(today, if ahead == 0 { 7 } else { ahead })?
        }
        DatePart::ThisWeekday(w) => add_days(week_start(today), i64::from(w.num_days_from_monday()))?,
        DatePart::WeeksLaterWeekday(n, w) => {
            add_days(week_start(today), 7 * i64::from(n) + i64::from(w.num_days_from_monday()))?
        }
        DatePart::DaysLater(n) => add_days(today, i64::from(n))?,
    };
    let immediate = matches!(expr.date, DatePart::Now | DatePart::Today);
    let clock = match expr.time {
        TimePart::Explicit(t) => t,
        TimePart::NamedPeriod(p) => p.clock(),
        TimePart::Unspecified if immediate => current.time().with_nanosecond(0).unwrap_or(current.time()),
        TimePart::Unspecified => Period::Morning.clock(),
    };
    let resolved = date.and_time(clock);
    if !immediate && resolved < current {
        return Err(TemporalError::PastDatetime { resolved, current });
    }
    Ok(resolved)
}

impl fmt::Display for TimeExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (d, t) = render(self);
        if t.is_empty() {
            f.write_str(&d)
        } else {
            write!(f, "{d} {t}")
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timefmt;
    use proptest::prelude::*;

    fn dt(s: &str) -> NaiveDateTime {
        timefmt::parse(s).unwrap()
    }

    fn hms(h: u32, m: u32, s: u32) -> NaiveTime {
        NaiveTime::from_hms_opt(h, m, s).unwrap()
    }

    #[test]
    fn parses_weeks_later_weekday() {
        let e = parse_time_expr("1 week later, Fri", "18:00:00").unwrap();
        assert_eq!(e, TimeExpr::new(DatePart::WeeksLaterWeekday(1, Weekday::Fri), TimePart::Explicit(hms(18, 0, 0))));
    }

    #[test]
    fn empty_inputs_default_to_today_unspecified() {
        assert_eq!(parse_time_expr("", "").unwrap(), TimeExpr::new(DatePart::Today, TimePart::Unspecified));
    }

    #[test]
    fn nonsense_is_unrecognized() {
        let err = parse_time_expr("purple elephant", "18:00").unwrap_err();
        assert!(matches!(err, TemporalError::UnrecognizedExpression { part: "date", .. }));
        let err = parse_time_expr("today", "teatime").unwrap_err();
        assert!(matches!(err, TemporalError::UnrecognizedExpression { part: "time", .. }));
    }

    #[test]
    fn next_weekday_normalizes_to_one_week_later() {
        let e = parse_time_expr("next Friday", "6 pm").unwrap();
        assert_eq!(e.date, DatePart::WeeksLaterWeekday(1, Weekday::Fri));
        assert_eq!(e.time, TimePart::Explicit(hms(18, 0, 0)));
    }

    #[test]
    fn resolves_paper_example() {
        let e = parse_time_expr("1 week later, Fri", "18:00:00").unwrap();
        let r = resolve_time(&e, dt("2024-08-28 12:00:00")).unwrap();
        assert_eq!(timefmt::format(&r), "2024-09-06 18:00:00");
    }

    #[test]
    fn now_is_identity() {
        let e = TimeExpr::new(DatePart::Now, TimePart::Unspecified);
        assert_eq!(resolve_time(&e, dt("2024-05-06 09:00:00")).unwrap(), dt("2024-05-06 09:00:00"));
    }

    // Day-count oracle: days in February 2024 computed from the leap rule.
    fn days_in_month(y: i32, m: u32) -> u32 {
        let leap = (y % 4 == 0 && y % 100 != 0) || y % 400 == 0;
        [31, if leap { 29 } else { 28 }, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31][m as usize - 1]
    }

    #[test]
    fn tomorrow_crosses_leap_day() {
        assert_eq!(days_in_month(2024, 2), 29);
        let e = parse_time_expr("tomorrow", "08:30:00").unwrap();
        let r = resolve_time(&e, dt("2024-02-28 20:00:00")).unwrap();
        assert_eq!(r, dt("2024-02-29 08:30:00"));
    }

    #[test]
    fn unspecified_and_named_clock_defaults() {
        let now = dt("2024-05-06 09:15:00");
        let today = TimeExpr::new(DatePart::Today, TimePart::Unspecified);
        assert_eq!(resolve_time(&today, now).unwrap(), now);
        let tomorrow = TimeExpr::new(DatePart::Tomorrow, TimePart::Unspecified);
        assert_eq!(resolve_time(&tomorrow, now).unwrap(), dt("2024-05-07 08:00:00"));
        for (p, h) in [(Period::Morning, 8), (Period::Noon, 12), (Period::Evening, 18)] {
            let e = TimeExpr::new(DatePart::Tomorrow, TimePart::NamedPeriod(p));
            assert_eq!(resolve_time(&e, now).unwrap().hour(), h);
        }
    }

    #[test]
    fn past_scheduled_times_are_rejected() {
        // Wednesday; Monday of this week is already past.
        let now = dt("2024-08-28 12:00:00");
        let e = TimeExpr::new(DatePart::ThisWeekday(Weekday::Mon), TimePart::Unspecified);
        assert!(matches!(resolve_time(&e, now), Err(TemporalError::PastDatetime { .. })));
        let e = TimeExpr::new(DatePart::ThisWeekday(Weekday::Fri), TimePart::Unspecified);
        assert_eq!(resolve_time(&e, now).unwrap(), dt("2024-08-30 08:00:00"));
        let e =
            TimeExpr::new(DatePart::ExplicitDate(NaiveDate::from_ymd_opt(2024, 1, 1).unwrap()), TimePart::Unspecified);
        assert!(matches!(resolve_time(&e, now), Err(TemporalError::PastDatetime { .. })));
        // Today with an earlier clock is still serviceable.
        let e = TimeExpr::new(DatePart::Today, TimePart::Explicit(hms(7, 0, 0)));
        assert!(resolve_time(&e, now).is_ok());
    }

    #[test]
    fn accepts_informal_variants() {
        let cases = [
            (
                ("the day after tomorrow", "noon"),
                TimeExpr::new(DatePart::DayAfterTomorrow, TimePart::NamedPeriod(Period::Noon)),
            ),
            (("in 3 days", "7:05am"), TimeExpr::new(DatePart::DaysLater(3), TimePart::Explicit(hms(7, 5, 0)))),
            (
                ("two weeks later, Monday", "12 am"),
                TimeExpr::new(DatePart::WeeksLaterWeekday(2, Weekday::Mon), TimePart::Explicit(hms(0, 0, 0))),
            ),
            (
                ("2024-7-28", "19:00"),
                TimeExpr::new(
                    DatePart::ExplicitDate(NaiveDate::from_ymd_opt(2024, 7, 28).unwrap()),
                    TimePart::Explicit(hms(19, 0, 0)),
                ),
            ),
            (
                ("Thurs", "in the evening"),
                TimeExpr::new(DatePart::NextWeekday(Weekday::Thu), TimePart::NamedPeriod(Period::Evening)),
            ),
        ];
        for ((d, t), want) in cases {
            assert_eq!(parse_time_expr(d, t).unwrap(), want, "{d:?} {t:?}");
        }
        assert!(parse_time_expr("0 days later", "").is_err());
        assert!(parse_time_expr("", "13 pm").is_err());
        assert!(parse_time_expr("", "25:00").is_err());
    }

    /// Instantiates each grammar rule with sample values and checks the
    /// constructor it names.
    #[test]
    fn grammar_file_rules_parse_to_their_constructors() {
        let mut checked = 0;
        for line in GRAMMAR.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (pattern, ctor) = line.split_once("->").expect("rule has an arrow");
            let (pattern, ctor) = (pattern.trim(), ctor.trim());
            let sample = pattern
                .replace("<n>", "2")
                .replace("<weekday>", "Fri")
                .replace("<YYYY-MM-DD>", "2030-01-02")
                .replace("<HH:MM:SS>", "18:30:00");
            let (kind, body) = pattern.split_once(':').expect("rule is date: or time:");
            let sample = sample.split_once(':').unwrap().1.trim().trim_matches('"').to_string();
            let expr = match kind.trim() {
                "date" => parse_time_expr(&sample, "").unwrap(),
                "time" => parse_time_expr("", &sample).unwrap(),
                other => panic!("unknown rule kind {other} in {body}"),
            };
            let shown = match kind.trim() {
                "date" => format!("{:?}", expr.date),
                _ => format!("{:?}", expr.time),
            };
            let want_head = ctor.split('(').next().unwrap();
            assert!(shown.starts_with(want_head), "{line}: got {shown}");
            checked += 1;
        }
        assert!(checked >= 14);
    }

    fn weekday_strategy() -> impl Strategy<Value = Weekday> {
        (0u8..7).prop_map(|i| WEEKDAYS[i as usize].0)
    }

    fn date_part_strategy() -> impl Strategy<Value = DatePart> {
        prop_oneof![
            Just(DatePart::Now),
            Just(DatePart::Today),
            Just(DatePart::Tomorrow),
            Just(DatePart::DayAfterTomorrow),
            (0i64..3000)
                .prop_map(|d| DatePart::ExplicitDate(NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + Duration::days(d))),
            weekday_strategy().prop_map(DatePart::NextWeekday),
            weekday_strategy().prop_map(DatePart::ThisWeekday),
            (1u32..9, weekday_strategy()).prop_map(|(n, w)| DatePart::WeeksLaterWeekday(n, w)),
            (1u32..400).prop_map(DatePart::DaysLater),
        ]
    }

    fn time_part_strategy() -> impl Strategy<Value = TimePart> {
        prop_oneof![
            Just(TimePart::Unspecified),
            (0u32..24, 0u32..60, 0u32..60).prop_map(|(h, m, s)| TimePart::Explicit(hms(h, m, s))),
            Just(TimePart::NamedPeriod(Period::Morning)),
            Just(TimePart::NamedPeriod(Period::Noon)),
            Just(TimePart::NamedPeriod(Period::Evening)),
        ]
    }

    fn current_strategy() -> impl Strategy<Value = NaiveDateTime> {
        (0i64..365, 0u32..86400).prop_map(|(d, s)| {
            (NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + Duration::days(d))
                .and_time(NaiveTime::from_num_seconds_from_midnight_opt(s, 0).unwrap())
        })
    }

    proptest! {
        #[test]
        fn render_then_parse_round_trips(date in date_part_strategy(), time in time_part_strategy()) {
            let expr = TimeExpr::new(date, time);
            let (d, t) = render(&expr);
            prop_assert_eq!(parse_time_expr(&d, &t).unwrap(), expr);
        }

        #[test]
        fn weeks_later_lands_on_requested_weekday(n in 1u32..=8, w in weekday_strategy(), now in current_strategy()) {
            let e = TimeExpr::new(DatePart::WeeksLaterWeekday(n, w), TimePart::Unspecified);
            prop_assert_eq!(resolve_time(&e, now).unwrap().weekday(), w);
        }

        #[test]
        fn resolution_is_deterministic(date in date_part_strategy(), time in time_part_strategy(), now in current_strategy()) {
            let e = TimeExpr::new(date, time);
            prop_assert_eq!(resolve_time(&e, now), resolve_time(&e, now));
        }

        #[test]
        fn shifting_now_by_a_week_shifts_weekday_results(n in 1u32..=8, w in weekday_strategy(), now in current_strategy()) {
            for date in [DatePart::NextWeekday(w), DatePart::WeeksLaterWeekday(n, w)] {
                let e = TimeExpr::new(date, TimePart::NamedPeriod(Period::Evening));
                if let Ok(a) = resolve_time(&e, now) {
                    let b = resolve_time(&e, now + Duration::days(7)).unwrap();
                    prop_assert_eq!(b - a, Duration::days(7));
                }
            }
        }
    }
}
