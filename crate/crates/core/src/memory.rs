//! Contribution scoring, region filtering and memory path retracing.
//!
//! A fragment's contribution is `alpha * c_rel + beta * c_bp`, where `c_rel`
//! is its cosine to the original question and `c_bp` is its weighted mean
//! cosine to every other fragment. Peer `j` is weighted by
//! `max(0, own_query_relevance_j - tau_s)`. Fragments with contribution
//! strictly above `tau_r` form the region, and the path is built greedily:
//! each step maximizes `c * exp(-lambda * (1 - sim(candidate, previous)))`.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embedding::{cosine, EmbedError, EmbeddingVector};
use crate::grower::MemoryFragment;

pub const PATH_SCHEMA: &str = "memgrow-path/1";

/// Largest region the exhaustive search accepts.
pub const ORACLE_LIMIT: usize = 8;

#[derive(Debug, Error)]
pub enum MemoryError {
    #[error("no fragments to score")]
    NoFragments,
    #[error("invalid scoring config: {0}")]
    Config(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("unknown fragment `{0}`")]
    UnknownFragment(String),
    #[error("region of {0} fragments exceeds the exhaustive search limit of {ORACLE_LIMIT}")]
    RegionTooLarge(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub alpha: f64,
    pub beta: f64,
    pub tau_s: f64,
    pub tau_r: f64,
    pub lambda: f64,
    pub k_max: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            alpha: 0.6,
            beta: 0.4,
            tau_s: 0.3,
            tau_r: 0.3,
            lambda: 1.0,
            k_max: 10,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<(), MemoryError> {
        let finite = [self.alpha, self.beta, self.tau_s, self.tau_r, self.lambda]
            .iter()
            .all(|x| x.is_finite());
        if !finite {
            return Err(MemoryError::Config("non-finite parameter".into()));
        }
        if self.alpha < 0.0 || self.beta < 0.0 || self.alpha + self.beta <= 0.0 {
            return Err(MemoryError::Config("alpha, beta must be >= 0 with a positive sum".into()));
        }
        if self.k_max == 0 {
            return Err(MemoryError::Config("k_max must be at least 1".into()));
        }
        if self.lambda < 0.0 {
            return Err(MemoryError::Config("lambda must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionScore {
    pub fragment_id: String,
    pub c_rel: f64,
    pub c_bp: f64,
    pub c: f64,
    pub bp_weight: f64,
}

/// Scores every fragment against the original question embedding.
pub fn score(
    fragments: &[MemoryFragment],
    original_query: &EmbeddingVector,
    config: &ScoringConfig,
) -> Result<Vec<ContributionScore>, MemoryError> {
    config.validate()?;
    if fragments.is_empty() {
        return Err(MemoryError::NoFragments);
    }
    let weights: Vec<f64> = fragments
        .iter()
        .map(|f| (f.own_query_relevance - config.tau_s).max(0.0))
        .collect();
    let mut scores = Vec::with_capacity(fragments.len());
    for (i, fragment) in fragments.iter().enumerate() {
        let c_rel = cosine(&fragment.embedding, original_query)?;
        let mut numerator = 0.0;
        let mut denominator = 0.0;
        for (j, peer) in fragments.iter().enumerate() {
            if j == i {
                continue;
            }
            let sim = cosine(&fragment.embedding, &peer.embedding)?;
            numerator += sim * weights[j];
            denominator += weights[j];
        }
        let c_bp = if denominator > 0.0 { numerator / denominator } else { 0.0 };
        scores.push(ContributionScore {
            fragment_id: fragment.fragment_id.clone(),
            c_rel,
            c_bp,
            c: config.alpha * c_rel + config.beta * c_bp,
            bp_weight: weights[i],
        });
    }
    Ok(scores)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRegion {
    /// Member fragment ids, in input order.
    pub members: Vec<String>,
    pub threshold: f64,
}

/// Keeps fragments whose contribution is strictly above `tau_r`.
pub fn filter_region(scores: &[ContributionScore], config: &ScoringConfig) -> MemoryRegion {
    MemoryRegion {
        members: scores
            .iter()
            .filter(|s| s.c > config.tau_r)
            .map(|s| s.fragment_id.clone())
            .collect(),
        threshold: config.tau_r,
    }
}

/// A path candidate: the data the selection needs besides similarities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathCandidate {
    pub fragment_id: String,
    pub round: u32,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathStep {
    pub fragment_id: String,
    pub c: f64,
    pub mu: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryPath {
    pub steps: Vec<PathStep>,
    pub objective: f64,
}

impl MemoryPath {
    pub fn fragment_ids(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.fragment_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub fragment_id: String,
    pub mu: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub candidates: Vec<CandidateScore>,
    pub chosen: String,
}

/// Smoothness penalty between consecutive path members.
pub fn penalty(similarity: f64, lambda: f64) -> f64 {
    (-lambda * (1.0 - similarity)).exp()
}

/// Deterministic preference between two candidates with equal step scores:
/// earlier round first, then smaller fragment id.
fn tie_order(a: &PathCandidate, b: &PathCandidate) -> Ordering {
    a.round.cmp(&b.round).then_with(|| a.fragment_id.cmp(&b.fragment_id))
}

/// Candidates plus their pairwise similarity matrix.
#[derive(Debug, Clone)]
pub struct PathInstance {
    pub candidates: Vec<PathCandidate>,
    pub similarity: Vec<Vec<f64>>,
}

impl PathInstance {
    pub fn new(candidates: Vec<PathCandidate>, similarity: Vec<Vec<f64>>) -> Self {
        assert_eq!(candidates.len(), similarity.len(), "similarity matrix size");
        assert!(similarity.iter().all(|row| row.len() == candidates.len()), "similarity matrix must be square");
        Self { candidates, similarity }
    }

    fn step(&self, index: usize, previous: Option<usize>, lambda: f64) -> (f64, f64) {
        let mu = previous.map_or(1.0, |p| penalty(self.similarity[p][index], lambda));
        (mu, self.candidates[index].c * mu)
    }

    fn path_of(&self, order: &[usize], lambda: f64) -> MemoryPath {
        let mut steps = Vec::with_capacity(order.len());
        let mut objective = 0.0;
        let mut previous = None;
        for &i in order {
            let (mu, value) = self.step(i, previous, lambda);
            objective += value;
            steps.push(PathStep {
                fragment_id: self.candidates[i].fragment_id.clone(),
                c: self.candidates[i].c,
                mu,
            });
            previous = Some(i);
        }
        MemoryPath { steps, objective }
    }

    /// Greedy construction: start at the largest contribution, then repeatedly
    /// append the unused candidate with the best penalized contribution.
    pub fn greedy(&self, lambda: f64, k_max: usize) -> (MemoryPath, Vec<TraceStep>) {
        let n = self.candidates.len();
        let mut used = vec![false; n];
        let mut order = Vec::new();
        let mut trace = Vec::new();
        let mut previous: Option<usize> = None;
        while order.len() < k_max.min(n) {
            let mut best: Option<(usize, f64)> = None;
            let mut considered = Vec::new();
            for i in (0..n).filter(|&i| !used[i]) {
                let (mu, value) = self.step(i, previous, lambda);
                considered.push(CandidateScore {
                    fragment_id: self.candidates[i].fragment_id.clone(),
                    mu,
                    score: value,
                });
                let better = match best {
                    None => true,
                    Some((b, bv)) => {
                        value > bv || (value == bv && tie_order(&self.candidates[i], &self.candidates[b]).is_lt())
                    }
                };
                if better {
                    best = Some((i, value));
                }
            }
            let (chosen, _) = best.expect("an unused candidate remains");
            used[chosen] = true;
            order.push(chosen);
            previous = Some(chosen);
            trace.push(TraceStep {
                candidates: considered,
                chosen: self.candidates[chosen].fragment_id.clone(),
            });
        }
        (self.path_of(&order, lambda), trace)
    }

    /// Exhaustive maximization over every ordered subset of size up to
    /// `k_max`. Test reference only.
    pub fn exhaustive(&self, lambda: f64, k_max: usize) -> Result<MemoryPath, MemoryError> {
        let n = self.candidates.len();
        if n > ORACLE_LIMIT {
            return Err(MemoryError::RegionTooLarge(n));
        }
        let mut by_preference: Vec<usize> = (0..n).collect();
        by_preference.sort_by(|&a, &b| tie_order(&self.candidates[a], &self.candidates[b]));
        let mut best = MemoryPath::default();
        let mut found = false;
        let mut order = Vec::new();
        let mut used = vec![false; n];
        self.enumerate(&by_preference, lambda, k_max.min(n), &mut order, &mut used, &mut best, &mut found);
        Ok(best)
    }

    #[allow(clippy::too_many_arguments)]
    fn enumerate(
        &self,
        by_preference: &[usize],
        lambda: f64,
        limit: usize,
        order: &mut Vec<usize>,
        used: &mut [bool],
        best: &mut MemoryPath,
        found: &mut bool,
    ) {
        if !order.is_empty() {
            let path = self.path_of(order, lambda);
            if !*found || path.objective > best.objective {
                *best = path;
                *found = true;
            }
        }
        if order.len() == limit {
            return;
        }
        for &i in by_preference {
            if used[i] {
                continue;
            }
            used[i] = true;
            order.push(i);
            self.enumerate(by_preference, lambda, limit, order, used, best, found);
            order.pop();
            used[i] = false;
        }
    }
}

/// Region members with their scores and pairwise fragment cosines.
pub fn region_instance(
    region: &MemoryRegion,
    fragments: &[MemoryFragment],
    scores: &[ContributionScore],
) -> Result<PathInstance, MemoryError> {
    let by_id: HashMap<&str, &MemoryFragment> = fragments.iter().map(|f| (f.fragment_id.as_str(), f)).collect();
    let score_by_id: HashMap<&str, f64> = scores.iter().map(|s| (s.fragment_id.as_str(), s.c)).collect();
    let mut members = Vec::with_capacity(region.members.len());
    for id in &region.members {
        let fragment = by_id.get(id.as_str()).ok_or_else(|| MemoryError::UnknownFragment(id.clone()))?;
        let c = *score_by_id.get(id.as_str()).ok_or_else(|| MemoryError::UnknownFragment(id.clone()))?;
        members.push((*fragment, c));
    }
    let candidates = members
        .iter()
        .map(|(f, c)| PathCandidate {
            fragment_id: f.fragment_id.clone(),
            round: f.round,
            c: *c,
        })
        .collect();
    let mut similarity = vec![vec![1.0; members.len()]; members.len()];
    for i in 0..members.len() {
        for j in (i + 1)..members.len() {
            let sim = cosine(&members[i].0.embedding, &members[j].0.embedding)?;
            similarity[i][j] = sim;
            similarity[j][i] = sim;
        }
    }
    Ok(PathInstance::new(candidates, similarity))
}

pub fn build_path_traced(
    region: &MemoryRegion,
    fragments: &[MemoryFragment],
    scores: &[ContributionScore],
    config: &ScoringConfig,
) -> Result<(MemoryPath, Vec<TraceStep>), MemoryError> {
    config.validate()?;
    let instance = region_instance(region, fragments, scores)?;
    Ok(instance.greedy(config.lambda, config.k_max))
}

pub fn build_path(
    region: &MemoryRegion,
    fragments: &[MemoryFragment],
    scores: &[ContributionScore],
    config: &ScoringConfig,
) -> Result<MemoryPath, MemoryError> {
    Ok(build_path_traced(region, fragments, scores, config)?.0)
}

pub fn oracle_best_path(
    region: &MemoryRegion,
    fragments: &[MemoryFragment],
    scores: &[ContributionScore],
    config: &ScoringConfig,
) -> Result<MemoryPath, MemoryError> {
    config.validate()?;
    if region.members.len() > ORACLE_LIMIT {
        return Err(MemoryError::RegionTooLarge(region.members.len()));
    }
    region_instance(region, fragments, scores)?.exhaustive(config.lambda, config.k_max)
}

/// Everything needed to inspect or plot one retracing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathDebug {
    pub schema: String,
    pub config: ScoringConfig,
    pub fragments: Vec<MemoryFragment>,
    pub scores: Vec<ContributionScore>,
    pub region: MemoryRegion,
    pub trace: Vec<TraceStep>,
    pub path: MemoryPath,
}

impl PathDebug {
    pub fn empty(config: ScoringConfig) -> Self {
        Self {
            schema: PATH_SCHEMA.to_string(),
            config,
            fragments: Vec::new(),
            scores: Vec::new(),
            region: MemoryRegion {
                members: Vec::new(),
                threshold: config.tau_r,
            },
            trace: Vec::new(),
            path: MemoryPath::default(),
        }
    }
}

/// Score, filter and build the path over the consolidated fragments.
pub fn retrace(
    fragments: &[MemoryFragment],
    original_query: &EmbeddingVector,
    config: &ScoringConfig,
) -> Result<PathDebug, MemoryError> {
    config.validate()?;
    if fragments.is_empty() {
        return Ok(PathDebug::empty(*config));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = fragments.iter().find(|f| !seen.insert(f.fragment_id.as_str())) {
        return Err(MemoryError::Config(format!("duplicate fragment id `{}`", dup.fragment_id)));
    }
    let scores = score(fragments, original_query, config)?;
    let region = filter_region(&scores, config);
    let (path, trace) = build_path_traced(&region, fragments, &scores, config)?;
    Ok(PathDebug {
        schema: PATH_SCHEMA.to_string(),
        config: *config,
        fragments: fragments.to_vec(),
        scores,
        region,
        trace,
        path,
    })
}
