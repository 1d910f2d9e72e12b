//! Domain types and the synthetic video catalog.
//!
//! Views follow a heavy-tailed distribution (log-normal by default, Pareto
//! optionally), likes are a bounded per-video fraction of views, every video
//! has one dominant topic with decaying off-topic affinities, and two latent
//! emotion scores on the 0..10 rating scale.
//!
//! # File format
//!
//! A catalog file is a provenance header line, a column line and one
//! tab-separated record per video:
//!
//! ```text
//! #walkaudit-catalog\tversion=..\tconfig_hash=..\tseed=..\tn_videos=..
//! #id\tchannel_id\tviews\tlikes\taff0\t...\taff8\thappiness\tsadness\tdeleted
//! v000000\tc00012\t10523\t140\t0.81\t...\t2.25\t3.5\t0
//! ```
//!
//! Reals use Rust's shortest round-trip formatting so write/read is lossless.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Beta, Distribution, LogNormal, Pareto};
use serde::{Deserialize, Serialize};

use crate::provenance::{HeaderError, Provenance};
use crate::rng::RandomStream;

/// Number of topics in every catalog.
pub const NUM_TOPICS: usize = 9;

/// Upper bound of the rating scale shared by latent emotions and ratings.
pub const SCALE_MAX: f64 = 10.0;

/// Smallest catalog that leaves headroom for 11-step walks without repeats.
pub const MIN_VIDEOS: usize = 20;

const DEFAULT_TOPIC_LABELS: [&str; NUM_TOPICS] = [
    "asylum and refugees",
    "US trade conflict",
    "impact of digitalization",
    "protection against crime",
    "climate change and energy transformation",
    "social policy",
    "affordable housing",
    "school and education policy",
    "elderly care",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicId(pub u8);

impl TopicId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TopicId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topic {
    pub id: TopicId,
    pub label: String,
}

/// The nine default topics, ids 0..8.
pub fn default_topics() -> Vec<Topic> {
    DEFAULT_TOPIC_LABELS
        .iter()
        .enumerate()
        .map(|(i, label)| Topic {
            id: TopicId(i as u8),
            label: (*label).to_string(),
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VideoId(pub u32);

impl fmt::Display for VideoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{:06}", self.0)
    }
}

impl FromStr for VideoId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('v')
            .and_then(|n| n.parse::<u32>().ok())
            .map(VideoId)
            .ok_or_else(|| format!("`{s}` is not a video id (expected v<digits>)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ChannelId(pub u32);

impl fmt::Display for ChannelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{:05}", self.0)
    }
}

impl FromStr for ChannelId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        s.strip_prefix('c')
            .and_then(|n| n.parse::<u32>().ok())
            .map(ChannelId)
            .ok_or_else(|| format!("`{s}` is not a channel id (expected c<digits>)"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: VideoId,
    pub channel_id: ChannelId,
    pub views: u64,
    pub likes: u64,
    pub topic_affinity: [f64; NUM_TOPICS],
    pub latent_happiness: f64,
    pub latent_sadness: f64,
    /// Removed from the platform after the walks were collected.
    pub deleted: bool,
}

impl Video {
    /// Topic with the largest affinity; ties go to the lowest id.
    pub fn dominant_topic(&self) -> TopicId {
        let mut best = 0;
        for t in 1..NUM_TOPICS {
            if self.topic_affinity[t] > self.topic_affinity[best] {
                best = t;
            }
        }
        TopicId(best as u8)
    }

    fn check(&self) -> Result<(), String> {
        if self.likes > self.views {
            return Err(format!("{}: likes {} exceed views {}", self.id, self.likes, self.views));
        }
        if let Some(a) = self
            .topic_affinity
            .iter()
            .find(|a| !(0.0..=1.0).contains(*a))
        {
            return Err(format!("{}: affinity {a} outside [0,1]", self.id));
        }
        for (name, v) in [
            ("happiness", self.latent_happiness),
            ("sadness", self.latent_sadness),
        ] {
            if !(0.0..=SCALE_MAX).contains(&v) {
                return Err(format!("{}: latent {name} {v} outside [0,10]", self.id));
            }
        }
        Ok(())
    }
}

/// Distribution family for view counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ViewsModel {
    LogNormal { mu: f64, sigma: f64 },
    Pareto { scale: f64, shape: f64 },
}

impl Default for ViewsModel {
    fn default() -> Self {
        ViewsModel::LogNormal { mu: 9.2, sigma: 2.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CatalogConfig {
    pub n_videos: usize,
    #[serde(default)]
    pub views: ViewsModel,
    /// Beta shape parameters of the per-video like rate.
    #[serde(default = "defaults::like_rate_alpha")]
    pub like_rate_alpha: f64,
    #[serde(default = "defaults::like_rate_beta")]
    pub like_rate_beta: f64,
    /// Like rates are clamped to `(0, like_rate_max]`; must not exceed 1.
    #[serde(default = "defaults::like_rate_max")]
    pub like_rate_max: f64,
    #[serde(default = "defaults::dominant_affinity_min")]
    pub dominant_affinity_min: f64,
    #[serde(default = "defaults::dominant_affinity_max")]
    pub dominant_affinity_max: f64,
    /// Off-topic affinity is `dominant * decay^ring_distance * U(0,1)`.
    #[serde(default = "defaults::off_topic_decay")]
    pub off_topic_decay: f64,
    /// Latent happiness is `10 * Beta(alpha, beta)` before coupling.
    #[serde(default = "defaults::happiness_alpha")]
    pub happiness_alpha: f64,
    #[serde(default = "defaults::happiness_beta")]
    pub happiness_beta: f64,
    #[serde(default = "defaults::sadness_alpha")]
    pub sadness_alpha: f64,
    #[serde(default = "defaults::sadness_beta")]
    pub sadness_beta: f64,
    /// Mixes latent happiness towards the video's views percentile; 0 keeps
    /// emotions independent of popularity.
    #[serde(default)]
    pub happiness_popularity_coupling: f64,
    /// Fraction of videos marked deleted after the walks.
    #[serde(default)]
    pub deleted_fraction: f64,
    /// Number of distinct channels; defaults to `max(1, n_videos / 8)`.
    #[serde(default)]
    pub n_channels: Option<usize>,
}

mod defaults {
    pub fn like_rate_alpha() -> f64 {
        2.0
    }
    pub fn like_rate_beta() -> f64 {
        150.0
    }
    pub fn like_rate_max() -> f64 {
        0.1
    }
    pub fn dominant_affinity_min() -> f64 {
        0.75
    }
    pub fn dominant_affinity_max() -> f64 {
        1.0
    }
    pub fn off_topic_decay() -> f64 {
        0.3
    }
    pub fn happiness_alpha() -> f64 {
        1.5
    }
    pub fn happiness_beta() -> f64 {
        5.0
    }
    pub fn sadness_alpha() -> f64 {
        1.5
    }
    pub fn sadness_beta() -> f64 {
        5.0
    }
}

impl CatalogConfig {
    pub fn with_videos(n_videos: usize) -> Self {
        Self {
            n_videos,
            views: ViewsModel::default(),
            like_rate_alpha: defaults::like_rate_alpha(),
            like_rate_beta: defaults::like_rate_beta(),
            like_rate_max: defaults::like_rate_max(),
            dominant_affinity_min: defaults::dominant_affinity_min(),
            dominant_affinity_max: defaults::dominant_affinity_max(),
            off_topic_decay: defaults::off_topic_decay(),
            happiness_alpha: defaults::happiness_alpha(),
            happiness_beta: defaults::happiness_beta(),
            sadness_alpha: defaults::sadness_alpha(),
            sadness_beta: defaults::sadness_beta(),
            happiness_popularity_coupling: 0.0,
            deleted_fraction: 0.0,
            n_channels: None,
        }
    }

    pub fn validate(&self) -> Result<(), CatalogError> {
        let bad = |key: &str, reason: String| {
            Err(CatalogError::InvalidConfig {
                key: format!("catalog.{key}"),
                reason,
            })
        };
        if self.n_videos < MIN_VIDEOS {
            return bad(
                "n_videos",
                format!("{} is below the minimum of {MIN_VIDEOS}", self.n_videos),
            );
        }
        match self.views {
            ViewsModel::LogNormal { mu, sigma } => {
                if !mu.is_finite() {
                    return bad("views.mu", format!("{mu} is not finite"));
                }
                if !(sigma.is_finite() && sigma > 0.0) {
                    return bad("views.sigma", format!("{sigma} must be finite and positive"));
                }
            }
            ViewsModel::Pareto { scale, shape } => {
                if !(scale.is_finite() && scale > 0.0) {
                    return bad("views.scale", format!("{scale} must be finite and positive"));
                }
                if !(shape.is_finite() && shape > 0.0) {
                    return bad("views.shape", format!("{shape} must be finite and positive"));
                }
            }
        }
        for (key, v) in [
            ("like_rate_alpha", self.like_rate_alpha),
            ("like_rate_beta", self.like_rate_beta),
            ("happiness_alpha", self.happiness_alpha),
            ("happiness_beta", self.happiness_beta),
            ("sadness_alpha", self.sadness_alpha),
            ("sadness_beta", self.sadness_beta),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(key, format!("{v} must be finite and positive"));
            }
        }
        if !(self.like_rate_max > 0.0 && self.like_rate_max <= 1.0) {
            return bad(
                "like_rate_max",
                format!(
                    "{} must lie in (0, 1]; larger rates would produce likes > views",
                    self.like_rate_max
                ),
            );
        }
        let (lo, hi) = (self.dominant_affinity_min, self.dominant_affinity_max);
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(
                "dominant_affinity_min",
                format!("need 0 < min <= max <= 1, got min={lo} max={hi}"),
            );
        }
        if !(0.0..1.0).contains(&self.off_topic_decay) {
            return bad(
                "off_topic_decay",
                format!("{} must lie in [0, 1)", self.off_topic_decay),
            );
        }
        if !(0.0..=1.0).contains(&self.happiness_popularity_coupling) {
            return bad(
                "happiness_popularity_coupling",
                format!("{} must lie in [0, 1]", self.happiness_popularity_coupling),
            );
        }
        if !(0.0..1.0).contains(&self.deleted_fraction) {
            return bad(
                "deleted_fraction",
                format!("{} must lie in [0, 1)", self.deleted_fraction),
            );
        }
        if self.n_channels == Some(0) {
            return bad("n_channels", "must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CatalogError {
    #[error("invalid catalog config `{key}`: {reason}")]
    InvalidConfig { key: String, reason: String },
    #[error("catalog file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Header(#[from] HeaderError),
    #[error("catalog is empty")]
    Empty,
    #[error("duplicate video id {0}")]
    DuplicateId(VideoId),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Immutable collection of videos plus the topic set.
#[derive(Clone, Debug, PartialEq)]
pub struct Catalog {
    videos: Vec<Video>,
    by_id: HashMap<VideoId, usize>,
    topics: Vec<Topic>,
    generation_seed: u64,
}

impl Catalog {
    /// Build a catalog from explicit videos, checking every invariant.
    pub fn from_videos(
        videos: Vec<Video>,
        topics: Vec<Topic>,
        generation_seed: u64,
    ) -> Result<Self, CatalogError> {
        if videos.is_empty() {
            return Err(CatalogError::Empty);
        }
        let mut by_id = HashMap::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            v.check()
                .map_err(|reason| CatalogError::Parse { line: i + 1, reason })?;
            if by_id.insert(v.id, i).is_some() {
                return Err(CatalogError::DuplicateId(v.id));
            }
        }
        Ok(Self {
            videos,
            by_id,
            topics,
            generation_seed,
        })
    }

    pub fn videos(&self) -> &[Video] {
        &self.videos
    }

    pub fn topics(&self) -> &[Topic] {
        &self.topics
    }

    pub fn generation_seed(&self) -> u64 {
        self.generation_seed
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn get(&self, id: VideoId) -> Option<&Video> {
        self.by_id.get(&id).map(|&i| &self.videos[i])
    }

    /// Position of `id` in [`Catalog::videos`].
    pub fn position(&self, id: VideoId) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn is_deleted(&self, id: VideoId) -> bool {
        self.get(id).is_some_and(|v| v.deleted)
    }

    /// The platform as it was while walks were collected: videos that were
    /// deleted afterwards are still online.
    pub fn as_of_walk_time(&self) -> Catalog {
        let mut c = self.clone();
        for v in &mut c.videos {
            v.deleted = false;
        }
        c
    }

    pub fn write_to<W: Write>(&self, mut out: W, provenance: &Provenance) -> std::io::Result<()> {
        writeln!(out, "{}", provenance.header_line("catalog"))?;
        let aff_cols: Vec<String> = (0..NUM_TOPICS).map(|t| format!("aff{t}")).collect();
        writeln!(
            out,
            "#id\tchannel_id\tviews\tlikes\t{}\thappiness\tsadness\tdeleted",
            aff_cols.join("\t")
        )?;
        for v in &self.videos {
            write!(out, "{}\t{}\t{}\t{}", v.id, v.channel_id, v.views, v.likes)?;
            for a in &v.topic_affinity {
                write!(out, "\t{a}")?;
            }
            writeln!(
                out,
                "\t{}\t{}\t{}",
                v.latent_happiness,
                v.latent_sadness,
                u8::from(v.deleted)
            )?;
        }
        Ok(())
    }

    /// Parse a catalog file. The generation seed is taken from the header.
    pub fn read_from<R: BufRead>(input: R) -> Result<(Self, Provenance), CatalogError> {
        let mut lines = input.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l?,
            None => return Err(CatalogError::Empty),
        };
        let provenance = Provenance::parse_header("catalog", &header)?;
        let mut videos = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if line.starts_with('#') || line.is_empty() {
                continue;
            }
            videos.push(parse_video(&line).map_err(|reason| CatalogError::Parse {
                line: lineno,
                reason,
            })?);
        }
        let catalog = Catalog::from_videos(videos, default_topics(), provenance.seed)?;
        Ok((catalog, provenance))
    }
}

fn parse_video(line: &str) -> Result<Video, String> {
    let fields: Vec<&str> = line.split('\t').collect();
    let expected = 4 + NUM_TOPICS + 3;
    if fields.len() != expected {
        return Err(format!("expected {expected} fields, found {}", fields.len()));
    }
    fn num<T: FromStr>(s: &str, name: &str) -> Result<T, String> {
        s.parse::<T>()
            .map_err(|_| format!("field `{name}`: cannot parse `{s}`"))
    }
    let mut topic_affinity = [0.0; NUM_TOPICS];
    for (t, slot) in topic_affinity.iter_mut().enumerate() {
        *slot = num(fields[4 + t], &format!("aff{t}"))?;
    }
    let deleted = match fields[4 + NUM_TOPICS + 2] {
        "0" => false,
        "1" => true,
        other => return Err(format!("field `deleted`: expected 0 or 1, found `{other}`")),
    };
    Ok(Video {
        id: fields[0].parse()?,
        channel_id: fields[1].parse()?,
        views: num(fields[2], "views")?,
        likes: num(fields[3], "likes")?,
        topic_affinity,
        latent_happiness: num(fields[4 + NUM_TOPICS], "happiness")?,
        latent_sadness: num(fields[4 + NUM_TOPICS + 1], "sadness")?,
        deleted,
    })
}

/// Largest view count the generator will emit.
const MAX_VIEWS: f64 = 1e13;

/// Synthesize a catalog; a pure function of `(config, seed)`.
pub fn generate_catalog(config: &CatalogConfig, seed: u64) -> Result<Catalog, CatalogError> {
    config.validate()?;
    let n = config.n_videos;
    let mut rng = RandomStream::from_seed(seed);

    let like_rate = Beta::new(config.like_rate_alpha, config.like_rate_beta)
        .expect("validated beta parameters");
    let happiness = Beta::new(config.happiness_alpha, config.happiness_beta)
        .expect("validated beta parameters");
    let sadness =
        Beta::new(config.sadness_alpha, config.sadness_beta).expect("validated beta parameters");
    let n_channels = config.n_channels.unwrap_or((n / 8).max(1)) as u32;

    let mut videos = Vec::with_capacity(n);
    for i in 0..n {
        let raw_views = match config.views {
            ViewsModel::LogNormal { mu, sigma } => LogNormal::new(mu, sigma)
                .expect("validated log-normal parameters")
                .sample(&mut rng),
            ViewsModel::Pareto { scale, shape } => Pareto::new(scale, shape)
                .expect("validated pareto parameters")
                .sample(&mut rng),
        };
        let views = raw_views.round().clamp(0.0, MAX_VIEWS) as u64;
        let rate: f64 = like_rate.sample(&mut rng);
        let rate = rate.clamp(f64::MIN_POSITIVE, config.like_rate_max);
        let likes = ((views as f64) * rate).round() as u64;
        let likes = likes.min(views);

        let channel_id = ChannelId(rng.random_range(0..n_channels));

        let dominant = rng.random_range(0..NUM_TOPICS);
        let peak = if config.dominant_affinity_min < config.dominant_affinity_max {
            rng.random_range(config.dominant_affinity_min..=config.dominant_affinity_max)
        } else {
            config.dominant_affinity_max
        };
        let mut topic_affinity = [0.0; NUM_TOPICS];
        for (t, slot) in topic_affinity.iter_mut().enumerate() {
            let u: f64 = rng.random();
            *slot = if t == dominant {
                peak
            } else {
                let d = t.abs_diff(dominant);
                let ring = d.min(NUM_TOPICS - d) as i32;
                peak * config.off_topic_decay.powi(ring) * u
            };
        }

        let h: f64 = happiness.sample(&mut rng);
        let s: f64 = sadness.sample(&mut rng);
        videos.push(Video {
            id: VideoId(i as u32),
            channel_id,
            views,
            likes,
            topic_affinity,
            latent_happiness: (SCALE_MAX * h).clamp(0.0, SCALE_MAX),
            latent_sadness: (SCALE_MAX * s).clamp(0.0, SCALE_MAX),
            deleted: false,
        });
    }

    let coupling = config.happiness_popularity_coupling;
    if coupling > 0.0 {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|&i| (videos[i].views, i));
        for (rank, &i) in order.iter().enumerate() {
            let pct = rank as f64 / (n - 1) as f64;
            let v = &mut videos[i];
            v.latent_happiness = ((1.0 - coupling) * v.latent_happiness + coupling * SCALE_MAX * pct)
                .clamp(0.0, SCALE_MAX);
        }
    }

    let n_deleted = (config.deleted_fraction * n as f64).round() as usize;
    if n_deleted > 0 {
        for i in index::sample(&mut rng, n, n_deleted) {
            videos[i].deleted = true;
        }
    }

    Catalog::from_videos(videos, default_topics(), seed)
}
