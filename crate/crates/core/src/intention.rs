//! Intention anchors and their reduction to `K` destinations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::addresser::AddressIndex;
use crate::datasets::{Point, Scene};
use crate::error::{Error, Result};
use crate::features::{FeatureNets, PastFeature};
use crate::membank::MemoryBankPair;
use crate::numkit::derive_seed;

/// A destination decoded from one retrieved intention feature.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentionAnchor {
    pub position: Point,
    pub source_address: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentionSet {
    /// One row per cluster: the centroid of its anchors.
    pub destinations: Vec<Point>,
    /// Cluster index of every input point, in input order.
    pub anchor_assignment: Vec<usize>,
}

impl IntentionSet {
    pub fn member_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.destinations.len()];
        for &a in &self.anchor_assignment {
            counts[a] += 1;
        }
        counts
    }
}

/// Which past feature is paired with a retrieved intention when decoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeMode {
    /// `[q; v_i]`: the current query's past feature.
    #[default]
    Query,
    /// `[k_i; v_i]`: the stored past feature of the retrieved entry.
    Stored,
}

impl std::str::FromStr for DecodeMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(DecodeMode::Query),
            "stored" => Ok(DecodeMode::Stored),
            other => Err(Error::Config(format!("decode mode must be query|stored, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for DecodeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DecodeMode::Query => "query",
            DecodeMode::Stored => "stored",
        })
    }
}

pub fn decode_anchors(
    q: &PastFeature,
    addresses: &[(usize, f64)],
    bank: &MemoryBankPair,
    feature_nets: &FeatureNets,
    mode: DecodeMode,
) -> Result<Vec<IntentionAnchor>> {
    addresses
        .iter()
        .map(|&(addr, score)| {
            let entry = bank.entries.get(addr).ok_or_else(|| {
                Error::invalid(format!("address {addr} outside bank of {} entries", bank.len()))
            })?;
            let k = match mode {
                DecodeMode::Query => q,
                DecodeMode::Stored => &entry.k,
            };
            let rec = feature_nets.joint_decode(k, &entry.v)?;
            Ok(IntentionAnchor {
                position: rec.destination,
                source_address: addr,
                score,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// k-means

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansOutcome {
    pub set: IntentionSet,
    /// Sum of squared distances to the assigned centroid.
    pub cost: f64,
    /// Cost after every centroid update.
    pub cost_history: Vec<f64>,
}

fn sq_dist(a: Point, b: Point) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    dx * dx + dy * dy
}

pub fn kmeans(points: &[Point], k: usize, seed: u64, max_iters: usize) -> Result<IntentionSet> {
    Ok(kmeans_detailed(points, k, seed, max_iters)?.set)
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. Seeding runs over the points sorted
/// lexicographically, which makes the result independent of input order.
/// A cluster that goes empty takes the point farthest from its centroid.
pub fn kmeans_detailed(points: &[Point], k: usize, seed: u64, max_iters: usize) -> Result<KmeansOutcome> {
    let n = points.len();
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k-means needs 1 <= K <= L, got K={k}, L={n}")));
    }
    if max_iters == 0 {
        return Err(Error::invalid("max_iters must be >= 1"));
    }
    if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::invalid("k-means points must be finite"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (pa, pb) = (points[a], points[b]);
        pa[0].total_cmp(&pb[0]).then(pa[1].total_cmp(&pb[1]))
    });
    let pts: Vec<Point> = order.iter().map(|&i| points[i]).collect();

    let mut centroids = plus_plus_seed(&pts, k, seed);
    let mut assign = vec![usize::MAX; n];
    let mut history = Vec::new();
    for iter in 0..max_iters {
        let mut next: Vec<usize> = pts.iter().map(|&p| nearest(&centroids, p)).collect();
        repair_empty(&pts, &mut next, &mut centroids);
        if iter > 0 && next == assign {
            break;
        }
        assign = next;
        centroids = means(&pts, &assign, k);
        history.push(cost_of(&pts, &assign, &centroids));
    }

    let cost = cost_of(&pts, &assign, &centroids);
    let mut anchor_assignment = vec![0; n];
    for (sorted_pos, &orig) in order.iter().enumerate() {
        anchor_assignment[orig] = assign[sorted_pos];
    }
    Ok(KmeansOutcome {
        set: IntentionSet {
            destinations: centroids,
            anchor_assignment,
        },
        cost,
        cost_history: history,
    })
}

fn plus_plus_seed(pts: &[Point], k: usize, seed: u64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = Vec::with_capacity(k);
    centroids.push(pts[rng.random_range(0..pts.len())]);
    let mut d2: Vec<f64> = pts.iter().map(|&p| sq_dist(p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just past the final sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            rng.random_range(0..pts.len())
        };
        let c = pts[pick];
        centroids.push(c);
        for (d, &p) in d2.iter_mut().zip(pts) {
            *d = d.min(sq_dist(p, c));
        }
    }
    centroids
}

fn nearest(centroids: &[Point], p: Point) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, &cp) in centroids.iter().enumerate() {
        let d = sq_dist(p, cp);
        if d < best_d {
            best_d = d;
            best = c;
        }
    }
    best
}

fn repair_empty(pts: &[Point], assign: &mut [usize], centroids: &mut [Point]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assign.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let mut steal = None;
        let mut steal_d = -1.0;
        for (i, &p) in pts.iter().enumerate() {
            if counts[assign[i]] > 1 {
                let d = sq_dist(p, centroids[assign[i]]);
                if d > steal_d {
                    steal_d = d;
                    steal = Some(i);
                }
            }
        }
        // K <= L guarantees some cluster holds two points while one is empty
        let i = steal.expect("a cluster with at least two members exists");
        assign[i] = empty;
        centroids[empty] = pts[i];
    }
}

fn means(pts: &[Point], assign: &[usize], k: usize) -> Vec<Point> {
    let mut sums = vec![[0.0, 0.0]; k];
    let mut counts = vec![0usize; k];
    for (&p, &a) in pts.iter().zip(assign) {
        sums[a][0] += p[0];
        sums[a][1] += p[1];
        counts[a] += 1;
    }
    sums.iter()
        .zip(&counts)
        .map(|(s, &c)| [s[0] / c as f64, s[1] / c as f64])
        .collect()
}

fn cost_of(pts: &[Point], assign: &[usize], centroids: &[Point]) -> f64 {
    pts.iter().zip(assign).map(|(&p, &a)| sq_dist(p, centroids[a])).sum()
}

// ---------------------------------------------------------------------------
// Four-step intention prediction

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntentionParams {
    pub l: usize,
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
    pub decode_mode: DecodeMode,
}

impl Default for IntentionParams {
    fn default() -> Self {
        Self {
            l: 120,
            k: 20,
            seed: 0,
            max_iters: 100,
            decode_mode: DecodeMode::Query,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntentionPrediction {
    pub set: IntentionSet,
    pub anchors: Vec<IntentionAnchor>,
}

/// Encode the normalized scene, address the bank, decode `L` anchors and
/// cluster them into `K` destinations (normalized frame).
pub fn predict_intentions(
    scene: &Scene,
    bank: &MemoryBankPair,
    index: &AddressIndex,
    feature_nets: &FeatureNets,
    params: &IntentionParams,
) -> Result<IntentionPrediction> {
    if params.k > params.l {
        return Err(Error::invalid(format!("K={} exceeds L={}", params.k, params.l)));
    }
    let q = feature_nets.social_encode(scene)?;
    let addresses = index.top_l(&q, params.l)?;
    let anchors = decode_anchors(&q, &addresses, bank, feature_nets, params.decode_mode)?;
    let points: Vec<Point> = anchors.iter().map(|a| a.position).collect();
    let set = kmeans(&points, params.k, derive_seed(params.seed, scene.id), params.max_iters)?;
    Ok(IntentionPrediction { set, anchors })
}
