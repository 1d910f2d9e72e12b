//! The simulated platform: a search endpoint and a recommendation endpoint.
//!
//! The real ranking function of an audited platform is unknowable; the
//! scoring rule here is a modelling choice with a known ground truth:
//!
//! ```text
//! score(c) = w_pop * popularity(c) + w_topic * cosine(source, c) + w_emo * emotion_match(c)
//! popularity(c) = (ln(1 + views_c) / ln(1 + max_views)) ^ popularity_exponent
//! emotion_match(c) = latent_happiness / 10   (target "happy")
//!                  = latent_sadness / 10     (target "sad")
//!                  = 0                       (no target)
//! ```
//!
//! Weights per policy kind: `PopularityWeighted` is `(1, 0, 0)`, `TopicSimilar`
//! is `(0, topic_weight, 0)`, `EmotionTilted` is `(0, 0, emotion_weight)` and
//! `Composite` uses `component_weights`. `Uniform` skips scoring and samples
//! k candidates without replacement.

use std::cmp::Ordering;
use std::fmt;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, TopicId, VideoId, NUM_TOPICS, SCALE_MAX};
use crate::rng::RandomStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Uniform,
    PopularityWeighted,
    TopicSimilar,
    EmotionTilted,
    Composite,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmotionTarget {
    Happy,
    Sad,
    #[default]
    None,
}

/// Convex weights of the popularity, topic and emotion signals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentWeights {
    pub popularity: f64,
    pub topic: f64,
    pub emotion: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecommendationPolicy {
    pub kind: PolicyKind,
    #[serde(default = "default_exponent")]
    pub popularity_exponent: f64,
    #[serde(default = "default_unit")]
    pub topic_weight: f64,
    #[serde(default)]
    pub emotion_target: EmotionTarget,
    #[serde(default = "default_unit")]
    pub emotion_weight: f64,
    #[serde(default)]
    pub component_weights: Option<ComponentWeights>,
}

fn default_exponent() -> f64 {
    2.0
}

fn default_unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PlatformError {
    #[error("invalid policy `{key}`: {reason}")]
    InvalidPolicy { key: String, reason: String },
    #[error("need {needed} eligible videos, only {available} available")]
    InsufficientCandidates { needed: usize, available: usize },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("unknown video {0}")]
    UnknownVideo(VideoId),
    #[error("unknown topic {0}")]
    UnknownTopic(TopicId),
    #[error("score for {0} is NaN")]
    NanScore(VideoId),
}

impl RecommendationPolicy {
    fn base(kind: PolicyKind) -> Self {
        Self {
            kind,
            popularity_exponent: default_exponent(),
            topic_weight: 1.0,
            emotion_target: EmotionTarget::None,
            emotion_weight: 1.0,
            component_weights: None,
        }
    }

    pub fn uniform() -> Self {
        Self::base(PolicyKind::Uniform)
    }

    pub fn popularity(exponent: f64) -> Self {
        Self {
            popularity_exponent: exponent,
            ..Self::base(PolicyKind::PopularityWeighted)
        }
    }

    pub fn topic_similar(topic_weight: f64) -> Self {
        Self {
            topic_weight,
            ..Self::base(PolicyKind::TopicSimilar)
        }
    }

    pub fn emotion_tilted(target: EmotionTarget, emotion_weight: f64) -> Self {
        Self {
            emotion_target: target,
            emotion_weight,
            ..Self::base(PolicyKind::EmotionTilted)
        }
    }

    pub fn composite(weights: ComponentWeights, exponent: f64, target: EmotionTarget) -> Self {
        Self {
            popularity_exponent: exponent,
            emotion_target: target,
            component_weights: Some(weights),
            topic_weight: weights.topic,
            emotion_weight: weights.emotion,
            ..Self::base(PolicyKind::Composite)
        }
    }

    pub fn validate(&self) -> Result<(), PlatformError> {
        let bad = |key: &str, reason: String| {
            Err(PlatformError::InvalidPolicy {
                key: format!("policy.{key}"),
                reason,
            })
        };
        if !(self.popularity_exponent.is_finite() && self.popularity_exponent >= 0.0) {
            return bad(
                "popularity_exponent",
                format!("{} must be finite and >= 0", self.popularity_exponent),
            );
        }
        if !(0.0..=1.0).contains(&self.topic_weight) {
            return bad("topic_weight", format!("{} must lie in [0, 1]", self.topic_weight));
        }
        if !(0.0..=1.0).contains(&self.emotion_weight) {
            return bad(
                "emotion_weight",
                format!("{} must lie in [0, 1]", self.emotion_weight),
            );
        }
        if self.kind == PolicyKind::Composite {
            let Some(w) = self.component_weights else {
                return bad("component_weights", "required for kind = composite".into());
            };
            for (name, v) in [
                ("popularity", w.popularity),
                ("topic", w.topic),
                ("emotion", w.emotion),
            ] {
                if !(v.is_finite() && v >= 0.0) {
                    return bad(
                        &format!("component_weights.{name}"),
                        format!("{v} must be finite and >= 0"),
                    );
                }
            }
            let sum = w.popularity + w.topic + w.emotion;
            if (sum - 1.0).abs() > 1e-9 {
                return bad("component_weights", format!("weights sum to {sum}, not 1"));
            }
        }
        Ok(())
    }

    /// `(w_pop, w_topic, w_emo)` used by the scoring rule.
    pub fn weights(&self) -> (f64, f64, f64) {
        match self.kind {
            PolicyKind::Uniform => (0.0, 0.0, 0.0),
            PolicyKind::PopularityWeighted => (1.0, 0.0, 0.0),
            PolicyKind::TopicSimilar => (0.0, self.topic_weight, 0.0),
            PolicyKind::EmotionTilted => (0.0, 0.0, self.emotion_weight),
            PolicyKind::Composite => {
                let w = self.component_weights.unwrap_or(ComponentWeights {
                    popularity: 1.0,
                    topic: 0.0,
                    emotion: 0.0,
                });
                (w.popularity, w.topic, w.emotion)
            }
        }
    }
}

/// What a ranked list was computed for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryContext {
    Topic(TopicId),
    Source(VideoId),
}

/// One entry of a result page, with the metadata visible on the page at
/// request time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankedEntry {
    pub rank: usize,
    pub video_id: VideoId,
    pub views: u64,
    pub likes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
    pub query_context: QueryContext,
}

impl RankedList {
    fn from_positions(catalog: &Catalog, positions: &[usize], query_context: QueryContext) -> Self {
        let entries = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| {
                let v = &catalog.videos()[p];
                RankedEntry {
                    rank: i + 1,
                    video_id: v.id,
                    views: v.views,
                    likes: v.likes,
                }
            })
            .collect();
        Self {
            entries,
            query_context,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<VideoId> {
        self.entries.iter().map(|e| e.video_id).collect()
    }
}

/// The two calls an audit makes against a platform. A live-site adapter
/// would implement this trait; only the simulator ships.
pub trait PlatformDriver: Sync {
    fn search(&self, topic: TopicId, k: usize) -> Result<RankedList, PlatformError>;

    fn recommend(
        &self,
        source: VideoId,
        k: usize,
        stream: &mut RandomStream,
    ) -> Result<RankedList, PlatformError>;
}

/// Top-`k` non-deleted videos by affinity to `topic`; ties by ascending id.
/// Popularity plays no role.
pub fn search(catalog: &Catalog, topic: TopicId, k: usize) -> Result<RankedList, PlatformError> {
    if k == 0 {
        return Err(PlatformError::ZeroK);
    }
    if topic.index() >= NUM_TOPICS {
        return Err(PlatformError::UnknownTopic(topic));
    }
    let mut pool: Vec<usize> = (0..catalog.len())
        .filter(|&i| !catalog.videos()[i].deleted)
        .collect();
    if pool.len() < k {
        return Err(PlatformError::InsufficientCandidates {
            needed: k,
            available: pool.len(),
        });
    }
    let t = topic.index();
    let videos = catalog.videos();
    let order = |a: &usize, b: &usize| {
        videos[*b].topic_affinity[t]
            .total_cmp(&videos[*a].topic_affinity[t])
            .then(videos[*a].id.cmp(&videos[*b].id))
    };
    if pool.len() > k {
        pool.select_nth_unstable_by(k - 1, order);
        pool.truncate(k);
    }
    pool.sort_by(order);
    Ok(RankedList::from_positions(
        catalog,
        &pool,
        QueryContext::Topic(topic),
    ))
}

/// Per-catalog quantities the scoring rule reuses on every call.
#[derive(Clone, Debug)]
struct ScoreCache {
    log_popularity: Vec<f64>,
    unit_affinity: Vec<[f64; NUM_TOPICS]>,
}

impl ScoreCache {
    fn new(catalog: &Catalog) -> Self {
        let max_log = catalog
            .videos()
            .iter()
            .map(|v| (v.views as f64).ln_1p())
            .fold(0.0, f64::max);
        let log_popularity = catalog
            .videos()
            .iter()
            .map(|v| {
                if max_log > 0.0 {
                    (v.views as f64).ln_1p() / max_log
                } else {
                    0.0
                }
            })
            .collect();
        let unit_affinity = catalog
            .videos()
            .iter()
            .map(|v| {
                let norm = v.topic_affinity.iter().map(|a| a * a).sum::<f64>().sqrt();
                let mut u = [0.0; NUM_TOPICS];
                if norm > 0.0 {
                    for (dst, a) in u.iter_mut().zip(&v.topic_affinity) {
                        *dst = a / norm;
                    }
                }
                u
            })
            .collect();
        Self {
            log_popularity,
            unit_affinity,
        }
    }
}

/// Rank candidates for `source` under `policy`.
///
/// Equal scores are ordered by a shuffle drawn from `stream`, so the result
/// is a deterministic function of the stream state.
pub fn recommend(
    catalog: &Catalog,
    source: VideoId,
    policy: &RecommendationPolicy,
    k: usize,
    stream: &mut RandomStream,
) -> Result<RankedList, PlatformError> {
    recommend_cached(catalog, &ScoreCache::new(catalog), source, policy, k, stream)
}

fn recommend_cached(
    catalog: &Catalog,
    cache: &ScoreCache,
    source: VideoId,
    policy: &RecommendationPolicy,
    k: usize,
    stream: &mut RandomStream,
) -> Result<RankedList, PlatformError> {
    if k == 0 {
        return Err(PlatformError::ZeroK);
    }
    let src = catalog
        .position(source)
        .ok_or(PlatformError::UnknownVideo(source))?;
    let videos = catalog.videos();
    let candidates: Vec<usize> = (0..videos.len())
        .filter(|&i| i != src && !videos[i].deleted)
        .collect();
    if candidates.len() < k {
        return Err(PlatformError::InsufficientCandidates {
            needed: k,
            available: candidates.len(),
        });
    }
    let context = QueryContext::Source(source);

    if policy.kind == PolicyKind::Uniform {
        let picked: Vec<usize> = index::sample(stream, candidates.len(), k)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        return Ok(RankedList::from_positions(catalog, &picked, context));
    }

    let (w_pop, w_topic, w_emo) = policy.weights();
    let exponent = policy.popularity_exponent;
    let src_aff = &cache.unit_affinity[src];
    let mut scored = Vec::with_capacity(candidates.len());
    for &c in &candidates {
        let mut score = 0.0;
        if w_pop != 0.0 {
            score += w_pop * cache.log_popularity[c].powf(exponent);
        }
        if w_topic != 0.0 {
            let cos: f64 = src_aff
                .iter()
                .zip(&cache.unit_affinity[c])
                .map(|(a, b)| a * b)
                .sum();
            score += w_topic * cos;
        }
        if w_emo != 0.0 {
            let v = &videos[c];
            let m = match policy.emotion_target {
                EmotionTarget::Happy => v.latent_happiness / SCALE_MAX,
                EmotionTarget::Sad => v.latent_sadness / SCALE_MAX,
                EmotionTarget::None => 0.0,
            };
            score += w_emo * m;
        }
        if score.is_nan() {
            return Err(PlatformError::NanScore(videos[c].id));
        }
        scored.push((score, c));
    }

    let by_score_desc = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
        b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
    };
    // Keep the top k plus every candidate tied with the k-th score.
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, by_score_desc);
        let cutoff = scored[k - 1].0;
        let (head, tail) = scored.split_at_mut(k);
        let mut keep: Vec<(f64, usize)> = head.to_vec();
        keep.extend(tail.iter().filter(|s| s.0 == cutoff).copied());
        scored = keep;
    }
    scored.sort_by(by_score_desc);

    let mut start = 0;
    while start < scored.len() {
        let mut end = start + 1;
        while end < scored.len() && scored[end].0 == scored[start].0 {
            end += 1;
        }
        if end - start > 1 {
            scored[start..end].shuffle(stream);
        }
        start = end;
    }
    let picked: Vec<usize> = scored.iter().take(k).map(|s| s.1).collect();
    Ok(RankedList::from_positions(catalog, &picked, context))
}

/// Simulated platform: an immutable catalog plus a ground-truth policy.
#[derive(Clone)]
pub struct PlatformSim {
    catalog: Catalog,
    policy: RecommendationPolicy,
    cache: ScoreCache,
}

impl fmt::Debug for PlatformSim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PlatformSim")
            .field("videos", &self.catalog.len())
            .field("policy", &self.policy)
            .finish()
    }
}

impl PlatformSim {
    pub fn new(catalog: Catalog, policy: RecommendationPolicy) -> Result<Self, PlatformError> {
        policy.validate()?;
        let cache = ScoreCache::new(&catalog);
        Ok(Self {
            catalog,
            policy,
            cache,
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn policy(&self) -> &RecommendationPolicy {
        &self.policy
    }
}

impl PlatformDriver for PlatformSim {
    fn search(&self, topic: TopicId, k: usize) -> Result<RankedList, PlatformError> {
        search(&self.catalog, topic, k)
    }

    fn recommend(
        &self,
        source: VideoId,
        k: usize,
        stream: &mut RandomStream,
    ) -> Result<RankedList, PlatformError> {
        recommend_cached(&self.catalog, &self.cache, source, &self.policy, k, stream)
    }
}
