//! POI database, current-location lookup, candidate selection and route
//! pricing.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use chrono::{Duration, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::model::{Coord, DialogSession, Poi, Price};
use crate::text;

pub const EARTH_RADIUS_KM: f64 = 6371.0;
pub const DETOUR_FACTOR: f64 = 1.3;
pub const MAX_CANDIDATES: usize = 5;
pub const CURRENT_LOCATION_RADIUS_KM: f64 = 0.3;
pub const MIN_ROUTE_KM: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GeoError {
    #[error("empty POI query")]
    EmptyQuery,
    #[error("no POI matches `{0}`")]
    NoMatch(String),
    #[error("session has no device location")]
    NoLocationFix,
    #[error("`{0}` matches more than one candidate")]
    AmbiguousSelection(String),
    #[error("`{0}` is not among the candidates")]
    NotInCandidates(String),
    #[error("start and end are the same place")]
    ZeroLengthRoute,
    #[error("duplicate POI id {0}")]
    DuplicateId(u64),
    #[error("POI {0} has coordinates out of range")]
    CoordinateOutOfRange(u64),
    #[error("malformed POI record on line {line}: {message}")]
    MalformedRecord { line: usize, message: String },
    #[error("no tariffs configured")]
    NoTariffs,
}

/// Great-circle distance in kilometers.
pub fn haversine_km(a: Coord, b: Coord) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlng = (b.lng - a.lng).to_radians();
    let s = libm::sin(dlat / 2.0);
    let t = libm::sin(dlng / 2.0);
    let h = s * s + libm::cos(lat1) * libm::cos(lat2) * t * t;
    2.0 * EARTH_RADIUS_KM * libm::asin(libm::sqrt(h.min(1.0)))
}

/// Lexical relevance of a display name to a query: 2.0 for an exact
/// (case-insensitive) match, otherwise the Jaccard overlap of token sets.
pub fn lexical_score(query: &str, display_name: &str) -> f64 {
    if query.trim().eq_ignore_ascii_case(display_name.trim()) {
        return 2.0;
    }
    let q = text::token_set(query);
    let n = text::token_set(display_name);
    let inter = text::intersection_len(&q, &n);
    if inter == 0 {
        return 0.0;
    }
    inter as f64 / (q.len() + n.len() - inter) as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredPoi {
    pub poi: Poi,
    pub score: f64,
}

/// Immutable POI store with a token index over display names.
#[derive(Clone, Debug, Default)]
pub struct PoiDatabase {
    entries: Vec<Poi>,
    by_id: BTreeMap<u64, usize>,
    name_index: BTreeMap<String, Vec<usize>>,
}

impl PoiDatabase {
    pub fn new(entries: Vec<Poi>) -> Result<Self, GeoError> {
        let mut by_id = BTreeMap::new();
        let mut name_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, poi) in entries.iter().enumerate() {
            if !poi.coord().in_range() {
                return Err(GeoError::CoordinateOutOfRange(poi.id));
            }
            if by_id.insert(poi.id, i).is_some() {
                return Err(GeoError::DuplicateId(poi.id));
            }
            for token in text::token_set(&poi.display_name) {
                name_index.entry(token).or_default().push(i);
            }
        }
        Ok(Self { entries, by_id, name_index })
    }

    /// One JSON object per line with `display_name`, `lat`, `lng`, `id`.
    /// Blank lines and `#` comments are skipped.
    pub fn from_jsonl(source: &str) -> Result<Self, GeoError> {
        let mut entries = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let poi: Poi = serde_json::from_str(line)
                .map_err(|e| GeoError::MalformedRecord { line: i + 1, message: e.to_string() })?;
            entries.push(poi);
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[Poi] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: u64) -> Option<&Poi> {
        self.by_id.get(&id).map(|&i| &self.entries[i])
    }

    /// Every entry sharing at least one name token with the query, scored
    /// and ranked, capped at [`MAX_CANDIDATES`].
    pub fn search(&self, name: &str, near: Option<Coord>) -> Result<Vec<ScoredPoi>, GeoError> {
        if name.trim().is_empty() {
            return Err(GeoError::EmptyQuery);
        }
        let mut hits: Vec<usize> =
            text::token_set(name).iter().filter_map(|t| self.name_index.get(t)).flatten().copied().collect();
        hits.sort_unstable();
        hits.dedup();
        if hits.is_empty() {
            return Err(GeoError::NoMatch(name.to_string()));
        }
        let mut scored: Vec<(ScoredPoi, f64)> = hits
            .into_iter()
            .map(|i| {
                let poi = &self.entries[i];
                let dist = near.map_or(0.0, |c| haversine_km(c, poi.coord()));
                (ScoredPoi { poi: poi.clone(), score: lexical_score(name, &poi.display_name) }, dist)
            })
            .collect();
        scored.sort_by(|(a, da), (b, db)| {
            b.score.total_cmp(&a.score).then(da.total_cmp(db)).then(a.poi.id.cmp(&b.poi.id))
        });
        scored.truncate(MAX_CANDIDATES);
        Ok(scored.into_iter().map(|(s, _)| s).collect())
    }

    /// POIs within 300 m of `device`, nearest first (ties by id), at most five.
    pub fn near(&self, device: Coord) -> Vec<Poi> {
        let mut within: Vec<(f64, &Poi)> = self
            .entries
            .iter()
            .map(|p| (haversine_km(device, p.coord()), p))
            .filter(|(d, _)| *d <= CURRENT_LOCATION_RADIUS_KM)
            .collect();
        within.sort_by(|(da, a), (db, b)| da.total_cmp(db).then(a.id.cmp(&b.id)));
        within.into_iter().take(MAX_CANDIDATES).map(|(_, p)| p.clone()).collect()
    }
}

/// Ranked POI list for a name query.
pub fn poi_search(db: &PoiDatabase, name: &str, near: Option<&Poi>) -> Result<Vec<Poi>, GeoError> {
    Ok(db.search(name, near.map(Poi::coord))?.into_iter().map(|s| s.poi).collect())
}

pub fn get_current_location(db: &PoiDatabase, session: &DialogSession) -> Result<Vec<Poi>, GeoError> {
    session.device.map(|d| db.near(d)).ok_or(GeoError::NoLocationFix)
}

/// Picks the single candidate whose name equals `selected_name`
/// (case-insensitive) or, failing that, uniquely contains it.
pub fn poi_select(candidates: &[Poi], selected_name: &str) -> Result<Poi, GeoError> {
    let wanted = selected_name.trim();
    if wanted.is_empty() {
        return Err(GeoError::NotInCandidates(selected_name.to_string()));
    }
    let exact: Vec<&Poi> = candidates.iter().filter(|p| p.display_name.trim().eq_ignore_ascii_case(wanted)).collect();
    let pool = if exact.is_empty() {
        candidates.iter().filter(|p| text::contains_ci(&p.display_name, wanted)).collect()
    } else {
        exact
    };
    match pool.as_slice() {
        [one] => Ok((*one).clone()),
        [] => Err(GeoError::NotInCandidates(wanted.to_string())),
        _ => Err(GeoError::AmbiguousSelection(wanted.to_string())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tariff {
    pub car_type: String,
    pub base: f64,
    pub per_km: f64,
    pub per_min: f64,
}

impl Tariff {
    pub fn new(car_type: impl Into<String>, base: f64, per_km: f64, per_min: f64) -> Self {
        Self { car_type: car_type.into(), base, per_km, per_min }
    }

    pub fn price(&self, distance_km: f64, duration_min: f64) -> Price {
        Price::from_units(self.base + self.per_km * distance_km + self.per_min * duration_min)
    }
}

/// Car-type fare table. Quote order follows table order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TariffTable {
    pub tariffs: Vec<Tariff>,
}

impl TariffTable {
    pub fn new(tariffs: Vec<Tariff>) -> Result<Self, GeoError> {
        if tariffs.is_empty() {
            return Err(GeoError::NoTariffs);
        }
        Ok(Self { tariffs })
    }

    pub fn car_types(&self) -> impl Iterator<Item = &str> {
        self.tariffs.iter().map(|t| t.car_type.as_str())
    }

    pub fn get(&self, car_type: &str) -> Option<&Tariff> {
        self.tariffs.iter().find(|t| t.car_type.eq_ignore_ascii_case(car_type))
    }
}

impl Default for TariffTable {
    fn default() -> Self {
        Self {
            tariffs: alloc::vec![
                Tariff::new("Express", 10.0, 2.0, 0.5),
                Tariff::new("Premier", 14.0, 2.8, 0.6),
                Tariff::new("Luxe", 20.0, 4.0, 0.8),
                Tariff::new("Taxi", 13.0, 2.3, 0.4),
            ],
        }
    }
}

/// Average road speed by departure hour.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpeedSchedule {
    pub peak_kmh: f64,
    pub offpeak_kmh: f64,
    /// Half-open `[from, to)` hour windows.
    pub peak_hours: Vec<(u32, u32)>,
}

impl Default for SpeedSchedule {
    fn default() -> Self {
        Self { peak_kmh: 25.0, offpeak_kmh: 40.0, peak_hours: alloc::vec![(7, 10), (17, 20)] }
    }
}

impl SpeedSchedule {
    pub fn kmh_at(&self, depart: NaiveDateTime) -> f64 {
        let h = depart.hour();
        if self.peak_hours.iter().any(|&(from, to)| (from..to).contains(&h)) {
            self.peak_kmh
        } else {
            self.offpeak_kmh
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quote {
    pub car_type: String,
    pub price: Price,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoutePlan {
    /// Kilometers.
    pub distance: f64,
    /// Minutes, a whole number of seconds.
    pub duration: f64,
    pub quotes: Vec<Quote>,
    #[serde(with = "crate::timefmt")]
    pub depart_time: NaiveDateTime,
    #[serde(with = "crate::timefmt")]
    pub arrive_time: NaiveDateTime,
}

impl RoutePlan {
    pub fn quote(&self, car_type: &str) -> Option<&Quote> {
        self.quotes.iter().find(|q| q.car_type.eq_ignore_ascii_case(car_type))
    }

    pub fn cheapest(&self) -> Option<&Quote> {
        self.quotes.iter().min_by_key(|q| q.price)
    }
}

/// Great-circle route estimator with a detour factor, hour-dependent speed
/// and a per-car-type tariff.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutePlanner {
    pub detour_factor: f64,
    pub speed: SpeedSchedule,
    pub tariffs: TariffTable,
}

impl Default for RoutePlanner {
    fn default() -> Self {
        Self { detour_factor: DETOUR_FACTOR, speed: SpeedSchedule::default(), tariffs: TariffTable::default() }
    }
}

impl RoutePlanner {
    pub fn new(tariffs: TariffTable) -> Self {
        Self { tariffs, ..Self::default() }
    }

    pub fn plan_route(
        &self,
        start: &Poi,
        via: Option<&Poi>,
        end: &Poi,
        depart: NaiveDateTime,
    ) -> Result<RoutePlan, GeoError> {
        if start.id == end.id {
            return Err(GeoError::ZeroLengthRoute);
        }
        let great_circle = match via {
            Some(v) => haversine_km(start.coord(), v.coord()) + haversine_km(v.coord(), end.coord()),
            None => haversine_km(start.coord(), end.coord()),
        };
        if great_circle < MIN_ROUTE_KM {
            return Err(GeoError::ZeroLengthRoute);
        }
        let distance = self.detour_factor * great_circle;
        let seconds = libm::round(distance / self.speed.kmh_at(depart) * 3600.0) as i64;
        let duration = seconds as f64 / 60.0;
        let quotes = self
            .tariffs
            .tariffs
            .iter()
            .map(|t| Quote { car_type: t.car_type.clone(), price: t.price(distance, duration) })
            .collect();
        Ok(RoutePlan {
            distance,
            duration,
            quotes,
            depart_time: depart,
            arrive_time: depart + Duration::seconds(seconds),
        })
    }
}

pub fn plan_route(start: &Poi, via: Option<&Poi>, end: &Poi, depart: NaiveDateTime) -> Result<RoutePlan, GeoError> {
    RoutePlanner::default().plan_route(start, via, end, depart)
}
