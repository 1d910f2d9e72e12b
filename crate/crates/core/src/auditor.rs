//! The random-walk audit protocol.
//!
//! One walk: pick a topic uniformly, search it, pick one of the top ten
//! results uniformly, "watch" it for a random dwell time, then ten times pick
//! one of the top ten recommendations uniformly. Every choice and the
//! metadata visible at that moment are recorded.
//!
//! Walk `i` of an audit draws only from the stream derived from
//! `(master_seed, "walk", i, attempt)`, so an audit is identical under any
//! thread count or execution order.
//!
//! # Audit log
//!
//! ```text
//! #walkaudit-audit\tversion=..\tconfig_hash=..\tseed=<master>\tn_walks=..\t...\tretries=-
//! #walk_id\ttopic\tstep_index\tchosen_rank\tvideo_id\tviews\tlikes\tdwell_seconds
//! 0\t4\t0\t7\tv001234\t10523\t140\t37
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, TopicId, VideoId, NUM_TOPICS};
use crate::platform::{PlatformDriver, PlatformError, RankedList};
use crate::provenance::{HeaderError, Provenance};
use crate::rng::RandomStream;

/// Results requested from search and from every recommendation call.
pub const LIST_SIZE: usize = 10;
/// Recommendation hops after the initial video.
pub const HOPS: usize = 10;
/// Steps in a complete walk: the initial video plus every hop.
pub const WALK_STEPS: usize = HOPS + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StepRecord {
    /// 0 is the initial video from search, 1..=10 the recommendation hops.
    pub step_index: u8,
    /// 1-based rank within the list the video was chosen from.
    pub chosen_rank: u8,
    pub video_id: VideoId,
    pub views_snapshot: u64,
    pub likes_snapshot: u64,
    pub dwell_seconds: u32,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RandomWalk {
    pub walk_id: u32,
    pub topic: TopicId,
    pub steps: Vec<StepRecord>,
    /// Derivation path of the stream that produced the walk.
    pub master_seed_path: String,
}

impl RandomWalk {
    pub fn step(&self, index: u8) -> Option<&StepRecord> {
        self.steps.iter().find(|s| s.step_index == index)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkOptions {
    #[serde(default = "default_dwell_min")]
    pub dwell_min: u32,
    #[serde(default = "default_dwell_max")]
    pub dwell_max: u32,
    /// Extra attempts (each with a fresh derived stream) for a failed walk.
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
}

fn default_dwell_min() -> u32 {
    10
}

fn default_dwell_max() -> u32 {
    60
}

fn default_max_retries() -> u32 {
    3
}

impl Default for WalkOptions {
    fn default() -> Self {
        Self {
            dwell_min: default_dwell_min(),
            dwell_max: default_dwell_max(),
            max_retries: default_max_retries(),
        }
    }
}

impl WalkOptions {
    pub fn validate(&self) -> Result<(), AuditError> {
        if self.dwell_min > self.dwell_max {
            return Err(AuditError::InvalidOptions(format!(
                "audit.dwell_min ({}) exceeds audit.dwell_max ({})",
                self.dwell_min, self.dwell_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WalkError {
    #[error("dead end at step {step}: empty result list")]
    DeadEnd { step: u8 },
    #[error("platform error at step {step}: {source}")]
    Platform { step: u8, source: PlatformError },
    #[error("no topics to choose from")]
    NoTopics,
}

impl WalkError {
    pub fn step(&self) -> Option<u8> {
        match self {
            WalkError::DeadEnd { step } | WalkError::Platform { step, .. } => Some(*step),
            WalkError::NoTopics => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AuditError {
    #[error("n_walks must be at least 1")]
    NoWalks,
    #[error("invalid audit options: {0}")]
    InvalidOptions(String),
    #[error(
        "{failed} of {n_walks} walks failed on their first attempt (limit 10%); \
         first failure: walk {first_walk}: {first_error}"
    )]
    Degenerate {
        failed: usize,
        n_walks: usize,
        first_walk: u32,
        first_error: WalkError,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// A walk that failed on every attempt.
#[derive(Clone, Debug, PartialEq)]
pub struct WalkFailure {
    pub walk_id: u32,
    pub attempts: u32,
    pub last_error: WalkError,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditRun {
    pub walks: Vec<RandomWalk>,
    pub master_seed: u64,
    pub n_requested: usize,
    pub options: WalkOptions,
    pub topics: Vec<TopicId>,
    pub per_topic_counts: BTreeMap<TopicId, usize>,
    /// `(walk_id, attempt)` for walks that needed more than one attempt.
    pub retried: Vec<(u32, u32)>,
    pub failures: Vec<WalkFailure>,
}

impl AuditRun {
    pub fn total_steps(&self) -> usize {
        self.walks.iter().map(|w| w.steps.len()).sum()
    }

    /// Every step record at `step_index`, in walk order.
    pub fn steps_at(&self, step_index: u8) -> impl Iterator<Item = &StepRecord> {
        self.walks.iter().filter_map(move |w| w.step(step_index))
    }

    pub fn walk(&self, walk_id: u32) -> Option<&RandomWalk> {
        self.walks.iter().find(|w| w.walk_id == walk_id)
    }

    fn recount(&mut self) {
        let mut counts: BTreeMap<TopicId, usize> = self.topics.iter().map(|&t| (t, 0)).collect();
        for w in &self.walks {
            *counts.entry(w.topic).or_default() += 1;
        }
        self.per_topic_counts = counts;
    }

    pub fn write_to<W: Write>(&self, mut out: W, provenance: &Provenance) -> std::io::Result<()> {
        let retries = if self.retried.is_empty() {
            "-".to_string()
        } else {
            self.retried
                .iter()
                .map(|(w, a)| format!("{w}:{a}"))
                .collect::<Vec<_>>()
                .join(",")
        };
        let provenance = Provenance {
            seed: self.master_seed,
            ..provenance.clone()
        }
        .with("n_walks", self.n_requested)
        .with("dwell", format!("{}-{}", self.options.dwell_min, self.options.dwell_max))
        .with("max_retries", self.options.max_retries)
        .with("retries", retries);
        writeln!(out, "{}", provenance.header_line("audit"))?;
        writeln!(
            out,
            "#walk_id\ttopic\tstep_index\tchosen_rank\tvideo_id\tviews\tlikes\tdwell_seconds"
        )?;
        for w in &self.walks {
            for s in &w.steps {
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    w.walk_id,
                    w.topic,
                    s.step_index,
                    s.chosen_rank,
                    s.video_id,
                    s.views_snapshot,
                    s.likes_snapshot,
                    s.dwell_seconds
                )?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<(Self, Provenance), AuditLogError> {
        let mut lines = input.lines().enumerate();
        let header = match lines.next() {
            Some((_, l)) => l?,
            None => {
                return Err(AuditLogError::Line {
                    line: 1,
                    reason: "empty file".into(),
                })
            }
        };
        let provenance = Provenance::parse_header("audit", &header)?;
        let header_err = |reason: String| AuditLogError::Line { line: 1, reason };
        let n_requested: usize = provenance
            .get("n_walks")
            .ok_or_else(|| header_err("missing n_walks".into()))?
            .parse()
            .map_err(|_| header_err("n_walks is not an integer".into()))?;
        let (dmin, dmax) = provenance
            .get("dwell")
            .and_then(|d| d.split_once('-'))
            .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
            .ok_or_else(|| header_err("missing or malformed dwell".into()))?;
        let max_retries: u32 = provenance
            .get("max_retries")
            .and_then(|r| r.parse().ok())
            .ok_or_else(|| header_err("missing or malformed max_retries".into()))?;
        let mut retried = Vec::new();
        match provenance.get("retries") {
            Some("-") | None => {}
            Some(list) => {
                for item in list.split(',') {
                    let parsed = item
                        .split_once(':')
                        .and_then(|(w, a)| Some((w.parse().ok()?, a.parse().ok()?)));
                    retried.push(
                        parsed.ok_or_else(|| header_err(format!("malformed retry `{item}`")))?,
                    );
                }
            }
        }

        let mut walks: Vec<RandomWalk> = Vec::new();
        for (i, line) in lines {
            let line = line?;
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| AuditLogError::Line {
                line: lineno,
                reason,
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 8 {
                return Err(err(format!("expected 8 fields, found {}", f.len())));
            }
            fn num<T: std::str::FromStr>(s: &str, name: &str) -> Result<T, String> {
                s.parse()
                    .map_err(|_| format!("field `{name}`: cannot parse `{s}`"))
            }
            let walk_id: u32 = num(f[0], "walk_id").map_err(err)?;
            let topic: u8 = num(f[1], "topic").map_err(err)?;
            if topic as usize >= NUM_TOPICS {
                return Err(err(format!("topic {topic} out of range")));
            }
            let step = StepRecord {
                step_index: num(f[2], "step_index").map_err(err)?,
                chosen_rank: num(f[3], "chosen_rank").map_err(err)?,
                video_id: f[4].parse().map_err(err)?,
                views_snapshot: num(f[5], "views").map_err(err)?,
                likes_snapshot: num(f[6], "likes").map_err(err)?,
                dwell_seconds: num(f[7], "dwell_seconds").map_err(err)?,
            };
            if step.chosen_rank == 0 || step.chosen_rank as usize > LIST_SIZE {
                return Err(err(format!("chosen_rank {} out of 1..=10", step.chosen_rank)));
            }
            match walks.last_mut() {
                Some(w) if w.walk_id == walk_id => {
                    if w.topic != TopicId(topic) {
                        return Err(err(format!("walk {walk_id} changes topic")));
                    }
                    if step.step_index as usize != w.steps.len() {
                        return Err(err(format!(
                            "walk {walk_id}: expected step {}, found {}",
                            w.steps.len(),
                            step.step_index
                        )));
                    }
                    w.steps.push(step);
                }
                last => {
                    if let Some(prev) = last {
                        if prev.steps.len() != WALK_STEPS {
                            return Err(err(format!(
                                "walk {} has {} steps, expected {WALK_STEPS}",
                                prev.walk_id,
                                prev.steps.len()
                            )));
                        }
                        if walk_id <= prev.walk_id {
                            return Err(err(format!("walk ids out of order at {walk_id}")));
                        }
                    }
                    if step.step_index != 0 {
                        return Err(err(format!("walk {walk_id} does not start at step 0")));
                    }
                    let attempt = retried
                        .iter()
                        .find(|(w, _)| *w == walk_id)
                        .map_or(0, |(_, a)| *a);
                    walks.push(RandomWalk {
                        walk_id,
                        topic: TopicId(topic),
                        steps: vec![step],
                        master_seed_path: RandomStream::derive(
                            provenance.seed,
                            "walk",
                            u64::from(walk_id),
                            attempt,
                        )
                        .path()
                        .to_string(),
                    });
                }
            }
        }
        if let Some(last) = walks.last() {
            if last.steps.len() != WALK_STEPS {
                return Err(AuditLogError::Line {
                    line: 0,
                    reason: format!(
                        "final walk {} has {} steps, expected {WALK_STEPS}",
                        last.walk_id,
                        last.steps.len()
                    ),
                });
            }
        }
        let mut run = AuditRun {
            walks,
            master_seed: provenance.seed,
            n_requested,
            options: WalkOptions {
                dwell_min: dmin,
                dwell_max: dmax,
                max_retries,
            },
            topics: (0..NUM_TOPICS as u8).map(TopicId).collect(),
            per_topic_counts: BTreeMap::new(),
            retried,
            failures: Vec::new(),
        };
        run.recount();
        Ok((run, provenance))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AuditLogError {
    #[error("audit log line {line}: {reason}")]
    Line { line: usize, reason: String },
    #[error(transparent)]
    Header(#[from] HeaderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn pick(list: &RankedList, stream: &mut RandomStream) -> (u8, VideoId, u64, u64) {
    let i = stream.random_range(0..list.len());
    let e = &list.entries[i];
    (e.rank as u8, e.video_id, e.views, e.likes)
}

/// Run one walk. `topics` must be non-empty.
pub fn run_walk(
    driver: &dyn PlatformDriver,
    topics: &[TopicId],
    options: &WalkOptions,
    walk_id: u32,
    stream: &mut RandomStream,
) -> Result<RandomWalk, WalkError> {
    if topics.is_empty() {
        return Err(WalkError::NoTopics);
    }
    let topic = topics[stream.random_range(0..topics.len())];
    let mut steps = Vec::with_capacity(WALK_STEPS);

    let results = driver
        .search(topic, LIST_SIZE)
        .map_err(|source| WalkError::Platform { step: 0, source })?;
    if results.is_empty() {
        return Err(WalkError::DeadEnd { step: 0 });
    }
    let (rank, mut current, views, likes) = pick(&results, stream);
    steps.push(StepRecord {
        step_index: 0,
        chosen_rank: rank,
        video_id: current,
        views_snapshot: views,
        likes_snapshot: likes,
        dwell_seconds: stream.random_range(options.dwell_min..=options.dwell_max),
    });

    for hop in 1..=HOPS as u8 {
        let recs = driver
            .recommend(current, LIST_SIZE, stream)
            .map_err(|source| WalkError::Platform { step: hop, source })?;
        if recs.is_empty() {
            return Err(WalkError::DeadEnd { step: hop });
        }
        let (rank, next, views, likes) = pick(&recs, stream);
        current = next;
        steps.push(StepRecord {
            step_index: hop,
            chosen_rank: rank,
            video_id: current,
            views_snapshot: views,
            likes_snapshot: likes,
            dwell_seconds: stream.random_range(options.dwell_min..=options.dwell_max),
        });
    }

    Ok(RandomWalk {
        walk_id,
        topic,
        steps,
        master_seed_path: stream.path().to_string(),
    })
}

struct WalkOutcome {
    walk: Result<RandomWalk, WalkError>,
    attempts: u32,
    first_error: Option<WalkError>,
}

fn walk_with_retries(
    driver: &dyn PlatformDriver,
    topics: &[TopicId],
    options: &WalkOptions,
    master_seed: u64,
    walk_id: u32,
) -> WalkOutcome {
    let mut first_error = None;
    let mut attempt = 0;
    loop {
        let mut stream = RandomStream::derive(master_seed, "walk", u64::from(walk_id), attempt);
        match run_walk(driver, topics, options, walk_id, &mut stream) {
            Ok(walk) => {
                return WalkOutcome {
                    walk: Ok(walk),
                    attempts: attempt + 1,
                    first_error,
                }
            }
            Err(e) => {
                if first_error.is_none() {
                    first_error = Some(e.clone());
                }
                if attempt >= options.max_retries {
                    return WalkOutcome {
                        walk: Err(e),
                        attempts: attempt + 1,
                        first_error,
                    };
                }
                attempt += 1;
            }
        }
    }
}

/// Run `n_walks` independent walks, optionally on `threads` worker threads.
///
/// Aborts when more than 10% of walks fail on their first attempt. Walks that
/// fail every retry below that limit are listed in [`AuditRun::failures`].
pub fn run_audit(
    driver: &dyn PlatformDriver,
    topics: &[TopicId],
    n_walks: usize,
    master_seed: u64,
    options: &WalkOptions,
    threads: Option<usize>,
) -> Result<AuditRun, AuditError> {
    use rayon::prelude::*;

    if n_walks == 0 {
        return Err(AuditError::NoWalks);
    }
    options.validate()?;
    let work = || -> Vec<WalkOutcome> {
        (0..n_walks as u32)
            .into_par_iter()
            .map(|i| walk_with_retries(driver, topics, options, master_seed, i))
            .collect()
    };
    let outcomes = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| AuditError::ThreadPool(e.to_string()))?
            .install(work),
        None => work(),
    };

    let failed_first: Vec<(u32, &WalkError)> = outcomes
        .iter()
        .enumerate()
        .filter_map(|(i, o)| o.first_error.as_ref().map(|e| (i as u32, e)))
        .collect();
    if failed_first.len() * 10 > n_walks {
        let (first_walk, first_error) = failed_first[0];
        return Err(AuditError::Degenerate {
            failed: failed_first.len(),
            n_walks,
            first_walk,
            first_error: first_error.clone(),
        });
    }

    let mut run = AuditRun {
        walks: Vec::with_capacity(n_walks),
        master_seed,
        n_requested: n_walks,
        options: options.clone(),
        topics: topics.to_vec(),
        per_topic_counts: BTreeMap::new(),
        retried: Vec::new(),
        failures: Vec::new(),
    };
    for (i, o) in outcomes.into_iter().enumerate() {
        match o.walk {
            Ok(walk) => {
                if o.attempts > 1 {
                    run.retried.push((i as u32, o.attempts - 1));
                }
                run.walks.push(walk);
            }
            Err(last_error) => run.failures.push(WalkFailure {
                walk_id: i as u32,
                attempts: o.attempts,
                last_error,
            }),
        }
    }
    run.recount();
    Ok(run)
}

/// Which walks and steps go to the raters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleDesign {
    #[serde(default = "default_walks_per_topic")]
    pub walks_per_topic: usize,
    #[serde(default = "default_step_indices")]
    pub step_indices: Vec<u8>,
}

fn default_walks_per_topic() -> usize {
    3
}

fn default_step_indices() -> Vec<u8> {
    vec![0, 5, 10]
}

impl Default for SampleDesign {
    fn default() -> Self {
        Self {
            walks_per_topic: default_walks_per_topic(),
            step_indices: default_step_indices(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AnnotationSlot {
    pub walk_id: u32,
    pub topic: TopicId,
    pub step_index: u8,
    pub video_id: VideoId,
    /// Video no longer available to raters; kept in the sample but not rated.
    pub deleted: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnnotationSample {
    pub slots: Vec<AnnotationSlot>,
    pub design: SampleDesign,
}

impl AnnotationSample {
    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn ratable(&self) -> impl Iterator<Item = &AnnotationSlot> {
        self.slots.iter().filter(|s| !s.deleted)
    }

    pub fn ratable_count(&self) -> usize {
        self.ratable().count()
    }

    /// Flag the slots at the given positions as deleted.
    pub fn flag_deleted(&mut self, positions: &[usize]) {
        for &p in positions {
            if let Some(slot) = self.slots.get_mut(p) {
                slot.deleted = true;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SampleError {
    #[error("topics with fewer than {needed} walks: {}", format_shortfall(.shortfall))]
    InsufficientWalks {
        needed: usize,
        shortfall: Vec<(TopicId, usize)>,
    },
    #[error("step index {0} outside 0..=10")]
    StepOutOfRange(u8),
    #[error("walks_per_topic must be at least 1")]
    ZeroWalks,
}

fn format_shortfall(s: &[(TopicId, usize)]) -> String {
    s.iter()
        .map(|(t, n)| format!("topic {t} has {n}"))
        .collect::<Vec<_>>()
        .join(", ")
}

/// Sample `walks_per_topic` walks per topic uniformly without replacement
/// and take the given steps of each. Slots whose video is deleted in
/// `catalog` are kept and flagged.
pub fn select_for_annotation(
    audit: &AuditRun,
    design: &SampleDesign,
    catalog: &Catalog,
    stream: &mut RandomStream,
) -> Result<AnnotationSample, SampleError> {
    if design.walks_per_topic == 0 {
        return Err(SampleError::ZeroWalks);
    }
    let mut steps = design.step_indices.clone();
    steps.sort_unstable();
    steps.dedup();
    if let Some(&bad) = steps.iter().find(|&&s| s as usize > HOPS) {
        return Err(SampleError::StepOutOfRange(bad));
    }

    let mut by_topic: BTreeMap<TopicId, Vec<&RandomWalk>> =
        audit.topics.iter().map(|&t| (t, Vec::new())).collect();
    for w in &audit.walks {
        by_topic.entry(w.topic).or_default().push(w);
    }
    let shortfall: Vec<(TopicId, usize)> = by_topic
        .iter()
        .filter(|(_, ws)| ws.len() < design.walks_per_topic)
        .map(|(&t, ws)| (t, ws.len()))
        .collect();
    if !shortfall.is_empty() {
        return Err(SampleError::InsufficientWalks {
            needed: design.walks_per_topic,
            shortfall,
        });
    }

    let mut slots = Vec::new();
    for (&topic, walks) in &by_topic {
        let mut chosen = index::sample(stream, walks.len(), design.walks_per_topic).into_vec();
        chosen.sort_unstable();
        for i in chosen {
            let walk = walks[i];
            for &s in &steps {
                let rec = walk.step(s).expect("complete walks have every step");
                slots.push(AnnotationSlot {
                    walk_id: walk.walk_id,
                    topic,
                    step_index: s,
                    video_id: rec.video_id,
                    deleted: catalog.is_deleted(rec.video_id),
                });
            }
        }
    }
    Ok(AnnotationSample {
        slots,
        design: SampleDesign {
            walks_per_topic: design.walks_per_topic,
            step_indices: steps,
        },
    })
}
