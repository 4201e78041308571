//! Learned memory addressing.
//!
//! A query past feature `q` is compared with every stored past feature `k_i`
//! through two projections, `s_i = cos(f_q(q), f_k(k_i))`. The projections are
//! trained so that scores track distance-derived pseudo-labels: a bank entry
//! whose decoded intention lands close to the query's true destination should
//! score near 1, anything farther than `d_T` near 0.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::{dist, Point, Scene};
use crate::error::{Error, Result};
use crate::features::{FeatureNets, PastFeature};
use crate::kv::KvFile;
use crate::membank::MemoryBankPair;
use crate::numkit::{derive_seed, dot, shuffled_batches, Activation, GradBundle, Mlp, SgdConfig};

const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AddresserNets {
    pub f_q: Mlp,
    pub f_k: Mlp,
}

impl AddresserNets {
    pub fn init(seed: u64, d_past: usize, hidden: usize, d_addr: usize, act: Activation) -> Result<Self> {
        if d_addr == 0 {
            return Err(Error::invalid("d_addr must be >= 1"));
        }
        Ok(Self {
            f_q: Mlp::init(derive_seed(seed, 20), &[d_past, hidden, d_addr], act)?,
            f_k: Mlp::init(derive_seed(seed, 20), &[d_past, hidden, d_addr], act)?,
        })
    }

    /// Data-dependent initialization: folds the per-dimension mean and
    /// standard deviation of `keys` into the first layer of both nets, then
    /// shifts the output biases so the projected keys are zero-mean. The
    /// nets then start from a centered, scale-free view of the bank instead
    /// of one dominated by the features' common offset.
    pub fn standardize_on(&mut self, keys: &[PastFeature]) -> Result<()> {
        let d = self.f_q.input_dim();
        if keys.is_empty() {
            return Err(Error::invalid("cannot standardize on an empty key set"));
        }
        if let Some(k) = keys.iter().find(|k| k.0.len() != d) {
            return Err(Error::invalid(format!("key has {} dims, nets expect {d}", k.0.len())));
        }
        let n = keys.len() as f64;
        let mean: Vec<f64> = (0..d).map(|j| keys.iter().map(|k| k.0[j]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..d)
            .map(|j| {
                let var = keys.iter().map(|k| (k.0[j] - mean[j]).powi(2)).sum::<f64>() / n;
                if var.sqrt() > 1e-8 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        for net in [&mut self.f_q, &mut self.f_k] {
            let mut w = net.weights()[0].clone();
            let mut b = net.biases()[0].clone();
            for (row, bias) in w.chunks_exact_mut(d).zip(b.iter_mut()) {
                for j in 0..d {
                    row[j] /= std[j];
                    *bias -= row[j] * mean[j];
                }
            }
            net.weights_mut()[0] = w;
            net.biases_mut()[0] = b;
            let outs = keys.iter().map(|k| net.forward(&k.0)).collect::<Result<Vec<_>>>()?;
            let last = net.num_layers() - 1;
            for (o, bias) in net.biases_mut()[last].iter_mut().enumerate() {
                *bias -= outs.iter().map(|v| v[o]).sum::<f64>() / n;
            }
        }
        Ok(())
    }

    pub fn d_addr(&self) -> usize {
        self.f_q.output_dim()
    }

    fn check(&self) -> Result<()> {
        if self.f_q.output_dim() != self.f_k.output_dim() || self.f_q.input_dim() != self.f_k.input_dim() {
            return Err(Error::invalid("f_q and f_k must share input and output dims"));
        }
        Ok(())
    }

    /// Writes `f_q.mtnn`, `f_k.mtnn` and `addresser.manifest` recording the
    /// hash of the bank the nets were trained against.
    pub fn save(&self, dir: &Path, bank_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.f_q.save(&dir.join("f_q.mtnn"))?;
        self.f_k.save(&dir.join("f_k.mtnn"))?;
        let mut m = KvFile::new();
        m.set("d_addr", self.d_addr());
        m.set("bank_hash", bank_hash);
        m.save(&dir.join("addresser.manifest"))
    }

    /// Loads the nets; a bank-hash mismatch is only logged.
    pub fn load(dir: &Path, bank_hash: Option<&str>) -> Result<Self> {
        let m = KvFile::load(&dir.join("addresser.manifest"))?;
        let nets = Self {
            f_q: Mlp::load(&dir.join("f_q.mtnn"))?,
            f_k: Mlp::load(&dir.join("f_k.mtnn"))?,
        };
        nets.check()?;
        let d_addr: usize = m.require("d_addr")?;
        if d_addr != nets.d_addr() {
            return Err(Error::Config(format!(
                "addresser.manifest says d_addr={d_addr}, nets have {}",
                nets.d_addr()
            )));
        }
        if let (Some(expected), Some(recorded)) = (bank_hash, m.get_str("bank_hash")) {
            if expected != recorded {
                log::warn!("addresser was trained against bank {recorded}, loading against {expected}");
            }
        }
        Ok(nets)
    }
}

/// Scoring rule: learned projections, or raw cosine on the untransformed
/// past features.
#[derive(Debug, Clone, PartialEq)]
pub enum Addresser {
    Learned(AddresserNets),
    FixedCosine,
}

impl Addresser {
    fn project_query(&self, q: &PastFeature) -> Result<Vec<f64>> {
        match self {
            Addresser::Learned(n) => n.f_q.forward(&q.0),
            Addresser::FixedCosine => Ok(q.0.clone()),
        }
    }

    fn project_key(&self, k: &PastFeature) -> Result<Vec<f64>> {
        match self {
            Addresser::Learned(n) => n.f_k.forward(&k.0),
            Addresser::FixedCosine => Ok(k.0.clone()),
        }
    }

    /// Projects every bank key once for repeated querying.
    pub fn index(&self, bank: &MemoryBankPair) -> Result<AddressIndex> {
        let keys = bank
            .entries
            .iter()
            .map(|e| self.project_key(&e.k))
            .collect::<Result<Vec<_>>>()?;
        let norms = keys.iter().map(|k| dot(k, k).sqrt()).collect();
        Ok(AddressIndex {
            addresser: self.clone(),
            keys,
            norms,
        })
    }
}

/// Cosine similarity with the zero-norm convention: 0 when either vector is
/// (numerically) zero. Clamped into `[-1, 1]` against rounding.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    cosine_with_norms(a, dot(a, a).sqrt(), b, dot(b, b).sqrt())
}

fn cosine_with_norms(a: &[f64], na: f64, b: &[f64], nb: f64) -> f64 {
    if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
        log::trace!("degenerate projection norm ({na:e}, {nb:e}); score set to 0");
        return 0.0;
    }
    (dot(a, b) / (na * nb)).clamp(-1.0, 1.0)
}

/// `s = cos(f_q(q), f_k(k))`.
pub fn score(nets: &AddresserNets, q: &PastFeature, k: &PastFeature) -> Result<f64> {
    Ok(cosine(&nets.f_q.forward(&q.0)?, &nets.f_k.forward(&k.0)?))
}

/// `max(0, (d_T - d) / d_T)`.
pub fn pseudo_label(d: f64, d_t: f64) -> Result<f64> {
    if !(d_t > 0.0) {
        return Err(Error::invalid(format!("d_T must be positive, got {d_t}")));
    }
    Ok(((d_t - d) / d_t).max(0.0))
}

/// `Σ (s_i - label_i)²`.
pub fn addresser_loss(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    Ok(scores.iter().zip(labels).map(|(s, l)| (s - l) * (s - l)).sum())
}

/// Bank keys projected through `f_k`, ready for scoring queries.
#[derive(Debug, Clone)]
pub struct AddressIndex {
    addresser: Addresser,
    keys: Vec<Vec<f64>>,
    norms: Vec<f64>,
}

impl AddressIndex {
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// One score per bank entry, in bank order.
    pub fn scores(&self, q: &PastFeature) -> Result<Vec<f64>> {
        let a = self.addresser.project_query(q)?;
        let na = dot(&a, &a).sqrt();
        Ok(self
            .keys
            .iter()
            .zip(&self.norms)
            .map(|(b, &nb)| cosine_with_norms(&a, na, b, nb))
            .collect())
    }

    /// Addresses of the `l` highest scores, descending; equal scores keep
    /// the lower address first.
    pub fn top_l(&self, q: &PastFeature, l: usize) -> Result<Vec<(usize, f64)>> {
        let m = self.len();
        if l == 0 || l > m {
            return Err(Error::invalid(format!("top-L needs 1 <= L <= M, got L={l}, M={m}")));
        }
        Ok(top_l_of(&self.scores(q)?, l))
    }
}

pub(crate) fn top_l_of(scores: &[f64], l: usize) -> Vec<(usize, f64)> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let order = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if l < idx.len() {
        idx.select_nth_unstable_by(l - 1, order);
        idx.truncate(l);
    }
    idx.sort_unstable_by(order);
    idx.into_iter().map(|i| (i, scores[i])).collect()
}

// ---------------------------------------------------------------------------
// Training

/// Feature-space training data: queries with their true destinations, and
/// bank keys with the intentions the frozen decoder assigns them.
#[derive(Debug, Clone)]
pub struct AddresserData {
    pub queries: Vec<PastFeature>,
    pub query_destinations: Vec<Point>,
    pub keys: Vec<PastFeature>,
    /// `D([k_i; v_i])` destination for every bank entry.
    pub decoded: Vec<Point>,
    /// Bank entry built from the query's own scene, if it survived
    /// filtering. It is left out of that query's candidates: at inference
    /// the query is never in memory, and a guaranteed exact match would
    /// teach the projections to detect identity rather than similarity.
    pub query_self: Vec<Option<usize>>,
}

impl AddresserData {
    /// Encodes normalized training scenes and decodes every bank entry once.
    pub fn build(bank: &MemoryBankPair, feature_nets: &FeatureNets, scenes: &[Scene]) -> Result<Self> {
        if bank.is_empty() {
            return Err(Error::invalid("addresser training needs a non-empty bank"));
        }
        let decoded = bank
            .entries
            .iter()
            .map(|e| feature_nets.joint_decode(&e.k, &e.v).map(|r| r.destination))
            .collect::<Result<Vec<_>>>()?;
        let queries = scenes
            .iter()
            .map(|s| feature_nets.social_encode(s))
            .collect::<Result<Vec<_>>>()?;
        let query_destinations = scenes.iter().map(Scene::destination).collect::<Result<Vec<_>>>()?;
        let by_id: std::collections::HashMap<u64, usize> =
            bank.entries.iter().enumerate().map(|(i, e)| (e.sample_id, i)).collect();
        Ok(Self {
            queries,
            query_destinations,
            keys: bank.entries.iter().map(|e| e.k.clone()).collect(),
            decoded,
            query_self: scenes.iter().map(|s| by_id.get(&s.id).copied()).collect(),
        })
    }

    fn self_of(&self, qi: usize) -> Option<usize> {
        self.query_self.get(qi).copied().flatten()
    }

    /// Index of the bank entry (other than the query's own) whose decoded
    /// intention is closest to the destination of query `qi`.
    pub fn oracle_nearest(&self, qi: usize) -> usize {
        let y = self.query_destinations[qi];
        let own = self.self_of(qi);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, &p) in self.decoded.iter().enumerate() {
            if Some(i) == own {
                continue;
            }
            let d = dist(y, p);
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AddresserTrainConfig {
    pub sgd: SgdConfig,
    pub d_t: f64,
    /// Candidate-set cap per step; larger banks are subsampled.
    pub max_candidates: usize,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
}

impl Default for AddresserTrainConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig {
                learning_rate: 1e-4,
                batch_size: 64,
                epochs: 20,
                seed: 0,
            },
            d_t: 0.1,
            max_candidates: 2048,
            finetune_epochs: 0,
            finetune_lr: 1e-6,
        }
    }
}

/// Trains against a bank through the frozen feature nets.
pub fn train_addresser(
    nets: AddresserNets,
    bank: &MemoryBankPair,
    feature_nets: &FeatureNets,
    scenes: &[Scene],
    cfg: &AddresserTrainConfig,
) -> Result<(AddresserNets, Vec<f64>)> {
    let data = AddresserData::build(bank, feature_nets, scenes)?;
    train_addresser_on(nets, &data, cfg)
}

/// Mini-batch SGD on the batch mean of per-query `L_Addr`. Each step scores
/// the batch's queries against a shared candidate set: the whole bank when
/// it fits under `max_candidates`, otherwise a uniform sample plus each
/// query's oracle-nearest entry. Returns the per-epoch mean loss.
pub fn train_addresser_on(
    mut nets: AddresserNets,
    data: &AddresserData,
    cfg: &AddresserTrainConfig,
) -> Result<(AddresserNets, Vec<f64>)> {
    cfg.sgd.validate()?;
    nets.check()?;
    let m = data.keys.len();
    if m == 0 {
        return Err(Error::invalid("addresser training needs a non-empty bank"));
    }
    if data.queries.len() != data.query_destinations.len()
        || data.decoded.len() != m
        || !(data.query_self.is_empty() || data.query_self.len() == data.queries.len())
    {
        return Err(Error::invalid("addresser data arrays disagree in length"));
    }
    if data.queries.is_empty() {
        return Err(Error::invalid("addresser training needs at least one query"));
    }
    // fail fast on a bad threshold
    pseudo_label(0.0, cfg.d_t)?;
    let nearest: Vec<usize> = if m > cfg.max_candidates {
        (0..data.queries.len()).map(|qi| data.oracle_nearest(qi)).collect()
    } else {
        Vec::new()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.sgd.seed, 200));
    let mut losses = Vec::new();
    let phases = [
        (cfg.sgd.epochs, cfg.sgd.learning_rate),
        (cfg.finetune_epochs, cfg.finetune_lr),
    ];
    let mut epoch_no = 0;
    for (epochs, lr) in phases {
        for _ in 0..epochs {
            let mut total = 0.0;
            for batch in shuffled_batches(data.queries.len(), cfg.sgd.batch_size, &mut rng) {
                let candidates: Vec<usize> = if m <= cfg.max_candidates {
                    (0..m).collect()
                } else {
                    let mut c = rand::seq::index::sample(&mut rng, m, cfg.max_candidates).into_vec();
                    c.extend(batch.iter().map(|&qi| nearest[qi]));
                    c.sort_unstable();
                    c.dedup();
                    c
                };
                let (loss, mut gq, mut gk) = batch_gradients(&nets, data, &batch, &candidates, cfg.d_t)?;
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!("non-finite addresser loss at epoch {epoch_no}")));
                }
                total += loss;
                let c = 1.0 / batch.len() as f64;
                gq.scale(c);
                gk.scale(c);
                nets.f_q.sgd_step(&gq, lr)?;
                nets.f_k.sgd_step(&gk, lr)?;
            }
            let mean = total / data.queries.len() as f64;
            log::debug!("addresser epoch {epoch_no}: mean loss {mean:.6}");
            losses.push(mean);
            epoch_no += 1;
        }
    }
    Ok((nets, losses))
}

/// Summed loss over `batch` and its parameter gradients.
pub(crate) fn batch_gradients(
    nets: &AddresserNets,
    data: &AddresserData,
    batch: &[usize],
    candidates: &[usize],
    d_t: f64,
) -> Result<(f64, GradBundle, GradBundle)> {
    let mut gq = GradBundle::zeros_like(&nets.f_q);
    let mut gk = GradBundle::zeros_like(&nets.f_k);
    let key_tapes = candidates
        .iter()
        .map(|&c| nets.f_k.forward_tape(&data.keys[c].0))
        .collect::<Result<Vec<_>>>()?;
    let key_norms: Vec<f64> = key_tapes.iter().map(|t| dot(t.output(), t.output()).sqrt()).collect();
    let d_addr = nets.d_addr();
    let mut key_upstream = vec![vec![0.0; d_addr]; candidates.len()];
    let mut loss = 0.0;

    for &qi in batch {
        let q_tape = nets.f_q.forward_tape(&data.queries[qi].0)?;
        let a = q_tape.output();
        let na = dot(a, a).sqrt();
        let y = data.query_destinations[qi];
        let mut qa_up = vec![0.0; d_addr];
        let own = data.self_of(qi);
        for (ci, &c) in candidates.iter().enumerate() {
            if Some(c) == own {
                continue;
            }
            let label = pseudo_label(dist(y, data.decoded[c]), d_t)?;
            let b = key_tapes[ci].output();
            let nb = key_norms[ci];
            if na < DEGENERATE_NORM || nb < DEGENERATE_NORM {
                loss += label * label;
                continue;
            }
            let inv = 1.0 / (na * nb);
            let s = dot(a, b) * inv;
            let r = s - label;
            loss += r * r;
            let g = 2.0 * r;
            // ds/da = b/(|a||b|) - s a/|a|²,  ds/db = a/(|a||b|) - s b/|b|²
            let sa = s / (na * na);
            let sb = s / (nb * nb);
            let up_b = &mut key_upstream[ci];
            for j in 0..d_addr {
                qa_up[j] += g * (b[j] * inv - sa * a[j]);
                up_b[j] += g * (a[j] * inv - sb * b[j]);
            }
        }
        nets.f_q.backward_tape(&q_tape, &qa_up, &mut gq)?;
    }
    for (tape, up) in key_tapes.iter().zip(&key_upstream) {
        nets.f_k.backward_tape(tape, up, &mut gk)?;
    }
    Ok((loss, gq, gk))
}
