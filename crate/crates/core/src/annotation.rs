//! Ratings: simulated raters, CSV import/export and mean aggregation.
//!
//! Every judgment is an integer on the 0..=10 scale or missing. The CSV
//! schema is fixed:
//!
//! ```text
//! rater_id,walk_id,step_index,video_id,topic_relatedness,happiness,sadness
//! r1,17,5,v000123,2,3,
//! ```
//!
//! An empty cell is a missing judgment. Lines starting with `#` before the
//! header carry provenance and are ignored on import.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::auditor::AnnotationSample;
use crate::catalog::{Catalog, VideoId, SCALE_MAX};
use crate::provenance::Provenance;
use crate::rng::RandomStream;

pub const CSV_HEADER: [&str; 7] = [
    "rater_id",
    "walk_id",
    "step_index",
    "video_id",
    "topic_relatedness",
    "happiness",
    "sadness",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    TopicRelatedness,
    Happiness,
    Sadness,
}

impl Measure {
    pub const ALL: [Measure; 3] = [Measure::TopicRelatedness, Measure::Happiness, Measure::Sadness];

    pub fn column(self) -> &'static str {
        match self {
            Measure::TopicRelatedness => "topic_relatedness",
            Measure::Happiness => "happiness",
            Measure::Sadness => "sadness",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Measure::TopicRelatedness => "Topic relatedness",
            Measure::Happiness => "Happiness",
            Measure::Sadness => "Sadness",
        }
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RatingRecord {
    pub rater_id: String,
    pub walk_id: u32,
    pub step_index: u8,
    pub video_id: VideoId,
    pub topic_relatedness: Option<u8>,
    pub happiness: Option<u8>,
    pub sadness: Option<u8>,
}

impl RatingRecord {
    pub fn value(&self, measure: Measure) -> Option<u8> {
        match measure {
            Measure::TopicRelatedness => self.topic_relatedness,
            Measure::Happiness => self.happiness,
            Measure::Sadness => self.sadness,
        }
    }

    fn value_mut(&mut self, measure: Measure) -> &mut Option<u8> {
        match measure {
            Measure::TopicRelatedness => &mut self.topic_relatedness,
            Measure::Happiness => &mut self.happiness,
            Measure::Sadness => &mut self.sadness,
        }
    }
}

/// A simulated rater: `rating = clamp(round(latent + bias + N(0, noise_sd)), 0, 10)`,
/// with each judgment independently skipped with probability `missing_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaterProfile {
    pub rater_id: String,
    #[serde(default)]
    pub bias: f64,
    #[serde(default)]
    pub noise_sd: f64,
    #[serde(default)]
    pub missing_rate: f64,
}

impl RaterProfile {
    pub fn new(rater_id: &str, bias: f64, noise_sd: f64, missing_rate: f64) -> Self {
        Self {
            rater_id: rater_id.to_string(),
            bias,
            noise_sd,
            missing_rate,
        }
    }

    pub fn noiseless(rater_id: &str) -> Self {
        Self::new(rater_id, 0.0, 0.0, 0.0)
    }

    pub fn validate(&self, index: usize) -> Result<(), AnnotationError> {
        let bad = |key: &str, reason: String| {
            Err(AnnotationError::InvalidProfile {
                key: format!("annotation.raters[{index}].{key}"),
                reason,
            })
        };
        if self.rater_id.is_empty() || self.rater_id.contains([',', '"', '\n']) {
            return bad("rater_id", format!("`{}` is not a valid id", self.rater_id));
        }
        if !self.bias.is_finite() {
            return bad("bias", "must be finite".into());
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad("noise_sd", format!("{} must be finite and >= 0", self.noise_sd));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return bad("missing_rate", format!("{} must lie in [0, 1)", self.missing_rate));
        }
        Ok(())
    }
}

/// Three raters with unit noise and small opposite biases.
pub fn default_profiles() -> Vec<RaterProfile> {
    vec![
        RaterProfile::new("r1", -0.25, 1.0, 0.0),
        RaterProfile::new("r2", 0.0, 1.0, 0.0),
        RaterProfile::new("r3", 0.25, 1.0, 0.0),
    ]
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotationError {
    #[error("at least two rater profiles are required, got {0}")]
    TooFewRaters(usize),
    #[error("duplicate rater id `{0}`")]
    DuplicateRater(String),
    #[error("invalid rater profile `{key}`: {reason}")]
    InvalidProfile { key: String, reason: String },
    #[error("annotation sample is empty")]
    EmptySample,
    #[error("sampled video {0} is not in the catalog")]
    UnknownVideo(VideoId),
    #[error("ratings header mismatch: expected `{}`, found `{found}`", CSV_HEADER.join(","))]
    Schema { found: String },
    #[error("ratings row {row}, field `{field}`: {reason}")]
    Field {
        row: u64,
        field: &'static str,
        reason: String,
    },
    #[error("ratings row {row}: duplicate key (rater {rater}, walk {walk}, step {step})")]
    DuplicateKey {
        row: u64,
        rater: String,
        walk: u32,
        step: u8,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn rate(latent: f64, profile: &RaterProfile, stream: &mut RandomStream) -> Option<u8> {
    let noise: f64 = stream.sample(StandardNormal);
    let skip: f64 = stream.random();
    if skip < profile.missing_rate {
        return None;
    }
    let raw = latent + profile.bias + profile.noise_sd * noise;
    Some(raw.round().clamp(0.0, SCALE_MAX) as u8)
}

/// Rate every slot of the sample with every profile.
///
/// Records come out rater by rater, slots in sample order. Deleted slots get
/// a record with every judgment missing. Topic relatedness is rated against
/// the walk's seed topic (latent `10 * affinity[topic]`).
pub fn simulate_ratings(
    sample: &AnnotationSample,
    catalog: &Catalog,
    profiles: &[RaterProfile],
    stream: &mut RandomStream,
) -> Result<Vec<RatingRecord>, AnnotationError> {
    if profiles.len() < 2 {
        return Err(AnnotationError::TooFewRaters(profiles.len()));
    }
    let mut seen = HashSet::new();
    for (i, p) in profiles.iter().enumerate() {
        p.validate(i)?;
        if !seen.insert(p.rater_id.as_str()) {
            return Err(AnnotationError::DuplicateRater(p.rater_id.clone()));
        }
    }
    if sample.is_empty() {
        return Err(AnnotationError::EmptySample);
    }

    let mut out = Vec::with_capacity(sample.len() * profiles.len());
    for profile in profiles {
        for slot in &sample.slots {
            let mut rec = RatingRecord {
                rater_id: profile.rater_id.clone(),
                walk_id: slot.walk_id,
                step_index: slot.step_index,
                video_id: slot.video_id,
                topic_relatedness: None,
                happiness: None,
                sadness: None,
            };
            if !slot.deleted {
                let v = catalog
                    .get(slot.video_id)
                    .ok_or(AnnotationError::UnknownVideo(slot.video_id))?;
                let latents = [
                    (Measure::TopicRelatedness, SCALE_MAX * v.topic_affinity[slot.topic.index()]),
                    (Measure::Happiness, v.latent_happiness),
                    (Measure::Sadness, v.latent_sadness),
                ];
                for (measure, latent) in latents {
                    *rec.value_mut(measure) = rate(latent, profile, stream);
                }
            }
            out.push(rec);
        }
    }
    Ok(out)
}

fn parse_cell(
    raw: &str,
    row: u64,
    field: &'static str,
) -> Result<Option<u8>, AnnotationError> {
    if raw.is_empty() {
        return Ok(None);
    }
    let err = |reason: String| AnnotationError::Field { row, field, reason };
    let v: i64 = raw
        .trim()
        .parse()
        .map_err(|_| err(format!("`{raw}` is not an integer")))?;
    if !(0..=10).contains(&v) {
        return Err(err(format!("{v} outside the 0..10 scale")));
    }
    Ok(Some(v as u8))
}

/// Parse ratings CSV from any reader. Row numbers in errors are file line
/// numbers (the header is line 1 when no provenance line precedes it).
pub fn read_ratings<R: Read>(input: R) -> Result<Vec<RatingRecord>, AnnotationError> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .has_headers(true)
        .flexible(false)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(AnnotationError::Schema {
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut out = Vec::new();
    let mut keys = HashSet::new();
    for result in reader.records() {
        let rec = result?;
        let row = rec.position().map_or(0, |p| p.line());
        let rater_id = rec[0].to_string();
        if rater_id.is_empty() {
            return Err(AnnotationError::Field {
                row,
                field: "rater_id",
                reason: "empty".into(),
            });
        }
        let walk_id: u32 = rec[1].parse().map_err(|_| AnnotationError::Field {
            row,
            field: "walk_id",
            reason: format!("`{}` is not a walk id", &rec[1]),
        })?;
        let step_index: u8 = rec[2]
            .parse()
            .ok()
            .filter(|s| *s <= 10)
            .ok_or_else(|| AnnotationError::Field {
                row,
                field: "step_index",
                reason: format!("`{}` is not a step in 0..10", &rec[2]),
            })?;
        let video_id: VideoId = rec[3].parse().map_err(|reason| AnnotationError::Field {
            row,
            field: "video_id",
            reason,
        })?;
        let record = RatingRecord {
            topic_relatedness: parse_cell(&rec[4], row, "topic_relatedness")?,
            happiness: parse_cell(&rec[5], row, "happiness")?,
            sadness: parse_cell(&rec[6], row, "sadness")?,
            rater_id,
            walk_id,
            step_index,
            video_id,
        };
        if !keys.insert((record.rater_id.clone(), walk_id, step_index)) {
            return Err(AnnotationError::DuplicateKey {
                row,
                rater: record.rater_id,
                walk: walk_id,
                step: step_index,
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn load_ratings(path: &Path) -> Result<Vec<RatingRecord>, AnnotationError> {
    read_ratings(std::fs::File::open(path)?)
}

/// Write ratings CSV, optionally preceded by a `#` provenance line.
pub fn write_ratings<W: Write>(
    records: &[RatingRecord],
    mut out: W,
    provenance: Option<&Provenance>,
) -> Result<(), AnnotationError> {
    if let Some(p) = provenance {
        writeln!(out, "{}", p.header_line("ratings"))?;
    }
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    writer.write_record(CSV_HEADER)?;
    let cell = |v: Option<u8>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in records {
        writer.write_record([
            r.rater_id.clone(),
            r.walk_id.to_string(),
            r.step_index.to_string(),
            r.video_id.to_string(),
            cell(r.topic_relatedness),
            cell(r.happiness),
            cell(r.sadness),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Key of one aggregated cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellKey {
    pub walk_id: u32,
    pub step_index: u8,
    pub measure: Measure,
}

/// Unrounded mean over raters of every present judgment, per
/// `(walk, step, measure)`. Cells without any present value are omitted.
pub fn aggregate_mean(records: &[RatingRecord]) -> BTreeMap<CellKey, f64> {
    let mut acc: BTreeMap<CellKey, (u32, u32)> = BTreeMap::new();
    for r in records {
        for measure in Measure::ALL {
            if let Some(v) = r.value(measure) {
                let e = acc
                    .entry(CellKey {
                        walk_id: r.walk_id,
                        step_index: r.step_index,
                        measure,
                    })
                    .or_default();
                e.0 += u32::from(v);
                e.1 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(k, (sum, n))| (k, f64::from(sum) / f64::from(n)))
        .collect()
}
