//! Seeded synthetic game-day scenario.
//!
//! A stadium sits at the center of a 1.5-mile-radius study area gridded at
//! 3 arc-seconds. Around it, a fixed set of venues receives check-ins
//! following a piecewise-linear daily shape that ramps toward kickoff, dips
//! while the game is on and recovers after. Tweets come from the stadium
//! (peaking during the game), from around venues and from the background.
//! A night-time baseline population raster with an exact integer total
//! completes the scenario.
//!
//! Everything is a pure function of the seed: the layout (venues, baseline)
//! uses ChaCha stream 0 and day `d` uses stream `d + 1`, so a day's counts do
//! not depend on how many days are generated.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};

use crate::analytics::ScenarioSpec;
use crate::batch::{write_descriptors, ViewDescriptor};
use crate::formats::write_events_ndjson;
use crate::model::{meters_per_degree_lat, meters_per_degree_lon, BoundingBox, GeoEvent, GridSpec, RasterGrid, Source, TimeWindow};
use crate::store::ReferenceStore;

pub const STADIUM_LAT: f64 = 35.955;
pub const STADIUM_LON: f64 = -83.925;
/// 1.5 miles.
pub const STUDY_RADIUS_M: f64 = 2414.016;
pub const STADIUM_HALF_WIDTH_M: f64 = 200.0;
pub const DEFAULT_KICKOFF: i64 = 1_383_408_000;
pub const BIN_WIDTH: i64 = 1800;
pub const BINS_PER_DAY: usize = 48;
pub const DAY: i64 = 86_400;
pub const STADIUM_VENUE: &str = "stadium";
pub const BASELINE_NAME: &str = "baseline_night";
pub const GAME_HOURS: &str = "game-hours";
pub const NON_GAME_HOURS: &str = "non-game-hours";

/// Relative check-in rate of ordinary venues, hours from kickoff.
const VENUE_SHAPE: &[(f64, f64)] = &[
    (-12.0, 0.0),
    (-9.0, 0.0),
    (-8.0, 0.08),
    (-4.0, 0.45),
    (-2.0, 1.0),
    (-1.0, 0.7),
    (0.0, 0.15),
    (3.5, 0.15),
    (4.5, 0.75),
    (6.0, 0.55),
    (9.0, 0.2),
    (10.0, 0.0),
    (12.0, 0.0),
];

const STADIUM_CHECKIN_SHAPE: &[(f64, f64)] = &[
    (-12.0, 0.0),
    (-6.0, 0.05),
    (-2.0, 0.3),
    (-0.5, 1.0),
    (3.5, 0.9),
    (4.5, 0.1),
    (6.0, 0.0),
    (12.0, 0.0),
];

const STADIUM_TWEET_SHAPE: &[(f64, f64)] = &[
    (-12.0, 0.01),
    (-3.0, 0.05),
    (-1.0, 0.4),
    (0.0, 1.0),
    (3.5, 1.0),
    (4.5, 0.2),
    (6.0, 0.03),
    (12.0, 0.01),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamedayConfig {
    pub seed: u64,
    pub days: usize,
    pub kickoff: i64,
    /// People attending the event; the modeled population added on top of
    /// the baseline.
    pub attendance: f64,
    pub baseline_total: u64,
    pub n_venues: usize,
    /// Expected check-ins per day summed over ordinary venues.
    pub venue_checkins_per_day: f64,
    pub stadium_checkins_per_day: f64,
    /// Expected stadium tweets per half hour at the height of the game.
    pub stadium_tweet_peak: f64,
    pub background_tweets_per_day: f64,
    /// Venue tweets per venue check-in.
    pub venue_tweet_ratio: f64,
}

impl Default for GamedayConfig {
    fn default() -> Self {
        GamedayConfig {
            seed: 7,
            days: 1,
            kickoff: DEFAULT_KICKOFF,
            attendance: 95_000.0,
            baseline_total: 40_000,
            n_venues: 95,
            venue_checkins_per_day: 20_000.0,
            stadium_checkins_per_day: 6_000.0,
            stadium_tweet_peak: 400.0,
            background_tweets_per_day: 1_500.0,
            venue_tweet_ratio: 0.5,
        }
    }
}

impl GamedayConfig {
    pub fn with_seed(seed: u64) -> Self {
        GamedayConfig {
            seed,
            ..Default::default()
        }
    }

    /// Window of day `day`: twelve hours either side of that day's kickoff.
    pub fn day_window(&self, day: usize) -> TimeWindow {
        let k = self.kickoff + day as i64 * DAY;
        TimeWindow::new(k - DAY / 2, k + DAY / 2).expect("non-empty")
    }

    pub fn full_window(&self) -> TimeWindow {
        let first = self.day_window(0);
        TimeWindow::new(first.start, first.start + self.days.max(1) as i64 * DAY).expect("non-empty")
    }

    /// Non-game hours run from the start of day 0 until an hour before
    /// kickoff; game hours from then until four hours after kickoff.
    pub fn scenarios(&self) -> Vec<ScenarioSpec> {
        let w = self.day_window(0);
        vec![
            ScenarioSpec::relative(NON_GAME_HOURS, self.kickoff, w.start - self.kickoff, -3600).expect("valid"),
            ScenarioSpec::relative(GAME_HOURS, self.kickoff, -3600, 4 * 3600).expect("valid"),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Venue {
    pub venue_id: String,
    pub lat: f64,
    pub lon: f64,
    /// Share of the ordinary-venue check-in volume.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub grid: GridSpec,
    pub stadium_bbox: BoundingBox,
    pub venues: Vec<Venue>,
    pub baseline: RasterGrid,
}

fn interpolate(knots: &[(f64, f64)], x: f64) -> f64 {
    for pair in knots.windows(2) {
        let ((x0, y0), (x1, y1)) = (pair[0], pair[1]);
        if x >= x0 && x <= x1 {
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    0.0
}

/// Per-bin relative rates of a shape over one day, sampled at bin midpoints.
fn shape_bins(knots: &[(f64, f64)]) -> Vec<f64> {
    (0..BINS_PER_DAY)
        .map(|b| interpolate(knots, -12.0 + (b as f64 + 0.5) * BIN_WIDTH as f64 / 3600.0))
        .collect()
}

/// The analytic arrival-rate curve of ordinary venues, scaled to peak 1.
pub fn true_unit_curve() -> Vec<f64> {
    let s = shape_bins(VENUE_SHAPE);
    let max = s.iter().cloned().fold(0.0, f64::max);
    s.into_iter().map(|v| v / max).collect()
}

fn offset(lat: f64, lon: f64, north_m: f64, east_m: f64) -> (f64, f64) {
    (lat + north_m / meters_per_degree_lat(), lon + east_m / meters_per_degree_lon(lat))
}

fn poisson(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Venue positions, weights and the baseline raster; depends only on the seed.
pub fn layout(cfg: &GamedayConfig) -> Layout {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0);
    let bbox = BoundingBox::square_degrees_around(STADIUM_LAT, STADIUM_LON, STUDY_RADIUS_M).expect("valid bbox");
    let grid = GridSpec::three_arc_second(bbox).expect("valid grid");
    let stadium_bbox = BoundingBox::around(STADIUM_LAT, STADIUM_LON, STADIUM_HALF_WIDTH_M).expect("valid bbox");
    let keep_out = BoundingBox::around(STADIUM_LAT, STADIUM_LON, STADIUM_HALF_WIDTH_M + 150.0).expect("valid bbox");

    // Venues keep 60 m clear of the grid edge so jittered tweets stay inside.
    let margin_lat = 60.0 / meters_per_degree_lat();
    let margin_lon = 60.0 / meters_per_degree_lon(STADIUM_LAT);
    let inner = BoundingBox::new(
        grid.bbox.min_lat + margin_lat,
        grid.bbox.min_lon + margin_lon,
        grid.bbox.max_lat - margin_lat,
        grid.bbox.max_lon - margin_lon,
    )
    .expect("valid bbox");

    let popularity = LogNormal::new(0.0, 0.75).expect("valid lognormal");
    let mut venues = Vec::with_capacity(cfg.n_venues);
    while venues.len() < cfg.n_venues {
        let r = STUDY_RADIUS_M * 0.95 * rng.random::<f64>().sqrt();
        let theta = 2.0 * PI * rng.random::<f64>();
        let (lat, lon) = offset(STADIUM_LAT, STADIUM_LON, r * theta.sin(), r * theta.cos());
        if !inner.contains(lat, lon) || keep_out.contains(lat, lon) {
            continue;
        }
        venues.push(Venue {
            venue_id: format!("venue-{:03}", venues.len() + 1),
            lat,
            lon,
            weight: popularity.sample(&mut rng),
        });
    }
    let wsum: f64 = venues.iter().map(|v| v.weight).sum();
    for v in &mut venues {
        v.weight /= wsum;
    }

    let baseline = baseline_raster(&grid, &stadium_bbox, cfg.baseline_total, &mut rng);
    Layout {
        grid,
        stadium_bbox,
        venues,
        baseline,
    }
}

/// Smooth two-hub residential surface with cell-level noise, thinned inside
/// the stadium, rounded to integers summing exactly to `total`.
fn baseline_raster(grid: &GridSpec, stadium: &BoundingBox, total: u64, rng: &mut ChaCha8Rng) -> RasterGrid {
    let hubs = [
        (offset(STADIUM_LAT, STADIUM_LON, 900.0, -600.0), 800.0, 1.0),
        (offset(STADIUM_LAT, STADIUM_LON, -1000.0, 1200.0), 500.0, 0.5),
    ];
    let mut weights = Vec::with_capacity(grid.len());
    for r in 0..grid.nrows {
        for c in 0..grid.ncols {
            let (lat, lon) = grid.cell_center(r, c);
            let mut w = 0.3;
            for &((hlat, hlon), sigma, amp) in &hubs {
                let dn = (lat - hlat) * meters_per_degree_lat();
                let de = (lon - hlon) * meters_per_degree_lon(lat);
                w += amp * (-(dn * dn + de * de) / (2.0 * sigma * sigma)).exp();
            }
            w *= rng.random_range(0.8..1.2);
            if stadium.contains(lat, lon) {
                w *= 0.05;
            }
            weights.push(w);
        }
    }
    let values = largest_remainder(&weights, total);
    RasterGrid::from_values(*grid, values, crate::model::DEFAULT_NODATA).expect("valid baseline")
}

/// Integer apportionment of `total` proportional to `weights`.
fn largest_remainder(weights: &[f64], total: u64) -> Vec<f64> {
    let wsum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut out: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take((total - assigned) as usize) {
        out[i] += 1;
    }
    out.into_iter().map(|v| v as f64).collect()
}

/// Check-ins per venue per half-hour bin for one day, stadium included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayCheckins {
    pub day: usize,
    pub venues: BTreeMap<String, Vec<u64>>,
}

fn day_rng(cfg: &GamedayConfig, day: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(day as u64 + 1);
    rng
}

fn draw_checkins(cfg: &GamedayConfig, layout: &Layout, day: usize, rng: &mut ChaCha8Rng) -> DayCheckins {
    let day_factor = rng.random_range(0.75..1.25);
    let venue_shape = shape_bins(VENUE_SHAPE);
    let vsum: f64 = venue_shape.iter().sum();
    let stadium_shape = shape_bins(STADIUM_CHECKIN_SHAPE);
    let ssum: f64 = stadium_shape.iter().sum();
    let mut venues = BTreeMap::new();
    for v in &layout.venues {
        let scale = cfg.venue_checkins_per_day * v.weight * day_factor / vsum;
        venues.insert(
            v.venue_id.clone(),
            venue_shape.iter().map(|s| poisson(rng, scale * s)).collect(),
        );
    }
    let scale = cfg.stadium_checkins_per_day * day_factor / ssum;
    venues.insert(
        STADIUM_VENUE.to_string(),
        stadium_shape.iter().map(|s| poisson(rng, scale * s)).collect(),
    );
    DayCheckins { day, venues }
}

/// Check-in counts of day `day` without generating events; identical to the
/// counts [`generate`] produces for that day.
pub fn sample_day_checkins(cfg: &GamedayConfig, layout: &Layout, day: usize) -> DayCheckins {
    draw_checkins(cfg, layout, day, &mut day_rng(cfg, day))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub events: u64,
    pub per_source: BTreeMap<String, u64>,
    pub per_scenario: BTreeMap<String, u64>,
    pub per_scenario_source: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: GamedayConfig,
    pub grid: GridSpec,
    pub stadium: (f64, f64),
    pub stadium_bbox: BoundingBox,
    pub window: TimeWindow,
    pub bin_width: i64,
    pub scenarios: Vec<ScenarioSpec>,
    pub venues: Vec<Venue>,
    pub baseline_name: String,
    pub baseline_sum: f64,
    /// Analytic per-bin rate curve of ordinary venues, peak 1.
    pub true_unit_curve: Vec<f64>,
    pub checkins: Vec<DayCheckins>,
    pub totals: Totals,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub manifest: Manifest,
    pub events: Vec<GeoEvent>,
    pub baseline: RasterGrid,
    pub descriptors: Vec<ViewDescriptor>,
}

fn uniform_ts(rng: &mut ChaCha8Rng, window: &TimeWindow, bin: usize) -> i64 {
    window.start + bin as i64 * BIN_WIDTH + rng.random_range(0..BIN_WIDTH)
}

fn jitter(rng: &mut ChaCha8Rng, lat: f64, lon: f64, meters: f64) -> (f64, f64) {
    offset(lat, lon, rng.random_range(-meters..meters), rng.random_range(-meters..meters))
}

fn uniform_in(rng: &mut ChaCha8Rng, b: &BoundingBox) -> (f64, f64) {
    (rng.random_range(b.min_lat..b.max_lat), rng.random_range(b.min_lon..b.max_lon))
}

fn day_events(cfg: &GamedayConfig, layout: &Layout, day: usize) -> (DayCheckins, Vec<GeoEvent>) {
    let mut rng = day_rng(cfg, day);
    let checkins = draw_checkins(cfg, layout, day, &mut rng);
    let window = cfg.day_window(day);
    let mut raw: Vec<(Source, i64, f64, f64, Option<String>)> = Vec::new();

    let venue_pos: BTreeMap<&str, (f64, f64)> = layout
        .venues
        .iter()
        .map(|v| (v.venue_id.as_str(), (v.lat, v.lon)))
        .chain(std::iter::once((STADIUM_VENUE, (STADIUM_LAT, STADIUM_LON))))
        .collect();
    for (venue, bins) in &checkins.venues {
        let (lat, lon) = venue_pos[venue.as_str()];
        for (b, &n) in bins.iter().enumerate() {
            for _ in 0..n {
                let ts = uniform_ts(&mut rng, &window, b);
                raw.push((Source::Checkin, ts, lat, lon, Some(venue.clone())));
            }
        }
    }

    for v in &layout.venues {
        for (b, &n) in checkins.venues[&v.venue_id].iter().enumerate() {
            let tweets = poisson(&mut rng, n as f64 * cfg.venue_tweet_ratio);
            for _ in 0..tweets {
                let ts = uniform_ts(&mut rng, &window, b);
                let (lat, lon) = jitter(&mut rng, v.lat, v.lon, 40.0);
                raw.push((Source::Tweet, ts, lat, lon, None));
            }
        }
    }

    for (b, s) in shape_bins(STADIUM_TWEET_SHAPE).into_iter().enumerate() {
        for _ in 0..poisson(&mut rng, cfg.stadium_tweet_peak * s) {
            let ts = uniform_ts(&mut rng, &window, b);
            let (lat, lon) = uniform_in(&mut rng, &layout.stadium_bbox);
            raw.push((Source::Tweet, ts, lat, lon, None));
        }
    }

    let per_bin = cfg.background_tweets_per_day / BINS_PER_DAY as f64;
    for b in 0..BINS_PER_DAY {
        for _ in 0..poisson(&mut rng, per_bin) {
            let ts = uniform_ts(&mut rng, &window, b);
            let (lat, lon) = uniform_in(&mut rng, &layout.grid.bbox);
            raw.push((Source::Tweet, ts, lat, lon, None));
        }
    }

    raw.sort_by(|a, b| a.1.cmp(&b.1));
    let events = raw
        .into_iter()
        .enumerate()
        .map(|(i, (source, ts, lat, lon, venue_id))| GeoEvent {
            event_id: format!("gd{day}-{i:06}"),
            source,
            ts,
            lat,
            lon,
            venue_id,
            attributes: BTreeMap::new(),
        })
        .collect();
    (checkins, events)
}

/// View descriptors for the scenario: the whole multi-day window with venue
/// bins, and one view per scenario, plus per scenario and source.
pub fn descriptors(cfg: &GamedayConfig, layout: &Layout) -> Vec<ViewDescriptor> {
    let mut venues: Vec<String> = layout.venues.iter().map(|v| v.venue_id.clone()).collect();
    venues.push(STADIUM_VENUE.to_string());
    let mut out = vec![ViewDescriptor::new("gameday", layout.grid, cfg.full_window()).with_venue_bins(BIN_WIDTH, venues)];
    for s in cfg.scenarios() {
        let base = ViewDescriptor::new(&s.name, layout.grid, cfg.day_window(0)).with_scenario(s.clone());
        for source in [Source::Tweet, Source::Checkin] {
            let mut d = base.clone().with_source(source);
            d.name = scenario_view(&s.name, source);
            out.push(d);
        }
        out.push(base);
    }
    out
}

/// Name of the per-source view of a scenario, e.g. `game-hours.tweet`.
pub fn scenario_view(scenario: &str, source: Source) -> String {
    format!("{scenario}.{source}")
}

pub fn generate(cfg: &GamedayConfig) -> Scenario {
    let layout = layout(cfg);
    let mut events = Vec::new();
    let mut checkins = Vec::new();
    for day in 0..cfg.days.max(1) {
        let (c, e) = day_events(cfg, &layout, day);
        checkins.push(c);
        events.extend(e);
    }

    let scenarios = cfg.scenarios();
    let mut totals = Totals {
        events: events.len() as u64,
        per_source: BTreeMap::new(),
        per_scenario: scenarios.iter().map(|s| (s.name.clone(), 0)).collect(),
        per_scenario_source: BTreeMap::new(),
    };
    for e in &events {
        *totals.per_source.entry(e.source.to_string()).or_insert(0) += 1;
        if let Some(s) = scenarios.iter().find(|s| s.window.contains(e.ts)) {
            *totals.per_scenario.get_mut(&s.name).expect("seeded") += 1;
            *totals
                .per_scenario_source
                .entry(scenario_view(&s.name, e.source))
                .or_insert(0) += 1;
        }
    }

    let manifest = Manifest {
        config: cfg.clone(),
        grid: layout.grid,
        stadium: (STADIUM_LAT, STADIUM_LON),
        stadium_bbox: layout.stadium_bbox,
        window: cfg.full_window(),
        bin_width: BIN_WIDTH,
        scenarios,
        venues: layout.venues.clone(),
        baseline_name: BASELINE_NAME.to_string(),
        baseline_sum: layout.baseline.sum(),
        true_unit_curve: true_unit_curve(),
        checkins,
        totals,
    };
    Scenario {
        descriptors: descriptors(cfg, &layout),
        manifest,
        events,
        baseline: layout.baseline,
    }
}

impl Scenario {
    /// Write `events.ndjson`, `manifest.json`, `views.json` and the baseline
    /// under `reference/`. The directory can then serve as an engine data
    /// directory.
    pub fn write(&self, out: &Path) -> io::Result<()> {
        fs::create_dir_all(out)?;
        write_events_ndjson(&self.events, BufWriter::new(File::create(out.join("events.ndjson"))?))?;
        fs::write(
            out.join("manifest.json"),
            serde_json::to_vec_pretty(&self.manifest).map_err(io::Error::other)?,
        )?;
        write_descriptors(out.join("views.json"), &self.descriptors).map_err(io::Error::other)?;
        let reference_dir = out.join("reference");
        for ext in ["asc", "meta.json"] {
            let p = reference_dir.join(format!("{BASELINE_NAME}.{ext}"));
            if p.exists() {
                fs::remove_file(p)?;
            }
        }
        let refs = ReferenceStore::open(&reference_dir).map_err(io::Error::other)?;
        let meta = BTreeMap::from([
            ("kind".to_string(), "night-time baseline population".to_string()),
            ("total".to_string(), self.manifest.config.baseline_total.to_string()),
            ("seed".to_string(), self.manifest.config.seed.to_string()),
        ]);
        refs.register(BASELINE_NAME, self.baseline.clone(), meta)
            .map_err(io::Error::other)?;
        Ok(())
    }
}
