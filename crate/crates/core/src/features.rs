//! Joint-reconstruction feature learning: the social encoder, the intention
//! encoder and the decoder that rebuilds past and destination from `[k; v]`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::{flatten, unflatten, Point, Scene};
use crate::error::{Error, Result};
use crate::kv::KvFile;
use crate::numkit::{derive_seed, shuffled_batches, Activation, GradBundle, Mlp, SgdConfig, Tape};

/// Past feature `k` (or query `q`) produced by a social encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct PastFeature(pub Vec<f64>);

/// Intention feature `v` encoding one destination.
#[derive(Debug, Clone, PartialEq)]
pub struct IntentionFeature(pub Vec<f64>);

/// Shapes of the feature-learning networks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureDims {
    pub t_p: usize,
    pub d_past: usize,
    pub d_int: usize,
    /// Width of the ego and neighbor trajectory embeddings.
    pub embed: usize,
    /// Hidden width of every two-layer net.
    pub hidden: usize,
    pub activation: Activation,
}

impl Default for FeatureDims {
    fn default() -> Self {
        Self {
            t_p: 8,
            d_past: 128,
            d_int: 64,
            embed: 64,
            hidden: 128,
            activation: Activation::ReLU,
        }
    }
}

// ---------------------------------------------------------------------------
// Social encoder

/// Ego and neighbor trajectory embeddings, element-wise max pooling over
/// neighbors, and a fusion net over `[ego; pooled]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SocialEncoder {
    pub ego_embed: Mlp,
    pub neighbor_embed: Mlp,
    pub fuse: Mlp,
}

pub struct SocialTape {
    ego: Tape,
    neighbors: Vec<Tape>,
    /// Winning neighbor per pooled element; `None` when there are no neighbors.
    argmax: Vec<Option<usize>>,
    fuse: Tape,
}

#[derive(Debug, Clone)]
pub struct SocialGrads {
    pub ego_embed: GradBundle,
    pub neighbor_embed: GradBundle,
    pub fuse: GradBundle,
}

impl SocialEncoder {
    pub fn init(seed: u64, t_p: usize, embed: usize, hidden: usize, out: usize, act: Activation) -> Result<Self> {
        Ok(Self {
            ego_embed: Mlp::init(derive_seed(seed, 1), &[2 * t_p, embed, embed], act)?,
            neighbor_embed: Mlp::init(derive_seed(seed, 2), &[2 * t_p, embed, embed], act)?,
            fuse: Mlp::init(derive_seed(seed, 3), &[2 * embed, hidden, out], act)?,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.fuse.output_dim()
    }

    pub fn t_p(&self) -> usize {
        self.ego_embed.input_dim() / 2
    }

    fn check(&self) -> Result<()> {
        let e = self.ego_embed.output_dim();
        if self.neighbor_embed.output_dim() != e
            || self.fuse.input_dim() != 2 * e
            || self.neighbor_embed.input_dim() != self.ego_embed.input_dim()
        {
            return Err(Error::invalid("social encoder dimensions do not chain"));
        }
        Ok(())
    }

    pub fn encode(&self, scene: &Scene) -> Result<Vec<f64>> {
        Ok(self.encode_tape(scene)?.0)
    }

    pub fn encode_tape(&self, scene: &Scene) -> Result<(Vec<f64>, SocialTape)> {
        let t_p = self.t_p();
        if scene.ego_past.len() != t_p {
            return Err(Error::invalid(format!(
                "scene {} has {} past rows, encoder expects {t_p}",
                scene.id,
                scene.ego_past.len()
            )));
        }
        let ego = self.ego_embed.forward_tape(&flatten(&scene.ego_past))?;
        let neighbors = scene
            .neighbor_pasts
            .iter()
            .map(|n| self.neighbor_embed.forward_tape(&flatten(n)))
            .collect::<Result<Vec<_>>>()?;

        let width = self.neighbor_embed.output_dim();
        let mut pooled = vec![0.0; width];
        let mut argmax = vec![None; width];
        for (j, (p, a)) in pooled.iter_mut().zip(argmax.iter_mut()).enumerate() {
            for (n, tape) in neighbors.iter().enumerate() {
                let v = tape.output()[j];
                if a.is_none() || v > *p {
                    *p = v;
                    *a = Some(n);
                }
            }
        }

        let mut joint = ego.output().to_vec();
        joint.extend_from_slice(&pooled);
        let fuse = self.fuse.forward_tape(&joint)?;
        let out = fuse.output().to_vec();
        Ok((
            out,
            SocialTape {
                ego,
                neighbors,
                argmax,
                fuse,
            },
        ))
    }

    pub fn zero_grads(&self) -> SocialGrads {
        SocialGrads {
            ego_embed: GradBundle::zeros_like(&self.ego_embed),
            neighbor_embed: GradBundle::zeros_like(&self.neighbor_embed),
            fuse: GradBundle::zeros_like(&self.fuse),
        }
    }

    pub fn backward(&self, tape: &SocialTape, upstream: &[f64], grads: &mut SocialGrads) -> Result<()> {
        let d_joint = self.fuse.backward_tape(&tape.fuse, upstream, &mut grads.fuse)?;
        let e = self.ego_embed.output_dim();
        self.ego_embed
            .backward_tape(&tape.ego, &d_joint[..e], &mut grads.ego_embed)?;
        let d_pool = &d_joint[e..];
        for (n, ntape) in tape.neighbors.iter().enumerate() {
            let routed: Vec<f64> = d_pool
                .iter()
                .zip(&tape.argmax)
                .map(|(&g, &a)| if a == Some(n) { g } else { 0.0 })
                .collect();
            if routed.iter().any(|&g| g != 0.0) {
                self.neighbor_embed
                    .backward_tape(ntape, &routed, &mut grads.neighbor_embed)?;
            }
        }
        Ok(())
    }

    pub fn sgd_step(&mut self, grads: &SocialGrads, lr: f64) -> Result<()> {
        self.ego_embed.sgd_step(&grads.ego_embed, lr)?;
        self.neighbor_embed.sgd_step(&grads.neighbor_embed, lr)?;
        self.fuse.sgd_step(&grads.fuse, lr)
    }

    pub(crate) fn save(&self, dir: &Path, prefix: &str) -> Result<()> {
        self.ego_embed.save(&dir.join(format!("{prefix}ego_embed.mtnn")))?;
        self.neighbor_embed
            .save(&dir.join(format!("{prefix}neighbor_embed.mtnn")))?;
        self.fuse.save(&dir.join(format!("{prefix}fuse.mtnn")))
    }

    pub(crate) fn load(dir: &Path, prefix: &str) -> Result<Self> {
        let enc = Self {
            ego_embed: Mlp::load(&dir.join(format!("{prefix}ego_embed.mtnn")))?,
            neighbor_embed: Mlp::load(&dir.join(format!("{prefix}neighbor_embed.mtnn")))?,
            fuse: Mlp::load(&dir.join(format!("{prefix}fuse.mtnn")))?,
        };
        enc.check()?;
        Ok(enc)
    }
}

impl SocialGrads {
    pub fn scale(&mut self, c: f64) {
        self.ego_embed.scale(c);
        self.neighbor_embed.scale(c);
        self.fuse.scale(c);
    }
}

// ---------------------------------------------------------------------------
// Feature nets

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNets {
    pub social: SocialEncoder,
    pub intention_enc: Mlp,
    pub joint_dec: Mlp,
}

#[derive(Debug, Clone)]
pub struct FeatureGrads {
    pub social: SocialGrads,
    pub intention_enc: GradBundle,
    pub joint_dec: GradBundle,
}

/// Decoder output split into the reconstructed past and destination.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub past: Vec<Point>,
    pub destination: Point,
}

impl FeatureNets {
    pub fn init(seed: u64, dims: &FeatureDims) -> Result<Self> {
        let act = dims.activation;
        Ok(Self {
            social: SocialEncoder::init(derive_seed(seed, 10), dims.t_p, dims.embed, dims.hidden, dims.d_past, act)?,
            intention_enc: Mlp::init(derive_seed(seed, 11), &[2, dims.embed, dims.d_int], act)?,
            joint_dec: Mlp::init(
                derive_seed(seed, 12),
                &[dims.d_past + dims.d_int, dims.hidden, 2 * dims.t_p + 2],
                act,
            )?,
        })
    }

    pub fn t_p(&self) -> usize {
        self.social.t_p()
    }

    pub fn d_past(&self) -> usize {
        self.social.out_dim()
    }

    pub fn d_int(&self) -> usize {
        self.intention_enc.output_dim()
    }

    fn check(&self) -> Result<()> {
        self.social.check()?;
        if self.intention_enc.input_dim() != 2
            || self.joint_dec.input_dim() != self.d_past() + self.d_int()
            || self.joint_dec.output_dim() != 2 * self.t_p() + 2
        {
            return Err(Error::invalid("feature net dimensions do not chain"));
        }
        Ok(())
    }

    /// `k = E_social(X, neighbors)`. The scene must already be normalized.
    pub fn social_encode(&self, scene: &Scene) -> Result<PastFeature> {
        self.social.encode(scene).map(PastFeature)
    }

    pub fn intention_encode(&self, destination: Point) -> Result<IntentionFeature> {
        if !(destination[0].is_finite() && destination[1].is_finite()) {
            return Err(Error::invalid("destination must be finite"));
        }
        self.intention_enc.forward(&destination).map(IntentionFeature)
    }

    /// Decodes `[k; v]` (past first, intention second).
    pub fn joint_decode(&self, k: &PastFeature, v: &IntentionFeature) -> Result<Reconstruction> {
        if k.0.len() != self.d_past() || v.0.len() != self.d_int() {
            return Err(Error::invalid(format!(
                "feature dims ({}, {}) do not match decoder ({}, {})",
                k.0.len(),
                v.0.len(),
                self.d_past(),
                self.d_int()
            )));
        }
        let mut joint = k.0.clone();
        joint.extend_from_slice(&v.0);
        Ok(split_reconstruction(&self.joint_dec.forward(&joint)?))
    }

    pub fn zero_grads(&self) -> FeatureGrads {
        FeatureGrads {
            social: self.social.zero_grads(),
            intention_enc: GradBundle::zeros_like(&self.intention_enc),
            joint_dec: GradBundle::zeros_like(&self.joint_dec),
        }
    }

    /// Reconstruction loss of one normalized scene, accumulating its
    /// parameter gradients into `grads`.
    pub fn rec_loss_backward(&self, scene: &Scene, alpha: f64, grads: &mut FeatureGrads) -> Result<f64> {
        let dest = scene.destination()?;
        let (k, social_tape) = self.social.encode_tape(scene)?;
        let int_tape = self.intention_enc.forward_tape(&dest)?;
        let mut joint = k;
        joint.extend_from_slice(int_tape.output());
        let dec_tape = self.joint_dec.forward_tape(&joint)?;
        let out = dec_tape.output();

        let target_past = flatten(&scene.ego_past);
        let n_past = target_past.len();
        let mut upstream = Vec::with_capacity(out.len());
        let mut loss = 0.0;
        for (o, t) in out[..n_past].iter().zip(&target_past) {
            let r = o - t;
            loss += r * r;
            upstream.push(2.0 * r);
        }
        for (o, t) in out[n_past..].iter().zip(&dest) {
            let r = o - t;
            loss += alpha * r * r;
            upstream.push(2.0 * alpha * r);
        }

        let d_joint = self.joint_dec.backward_tape(&dec_tape, &upstream, &mut grads.joint_dec)?;
        let d_past = self.d_past();
        self.social.backward(&social_tape, &d_joint[..d_past], &mut grads.social)?;
        self.intention_enc
            .backward_tape(&int_tape, &d_joint[d_past..], &mut grads.intention_enc)?;
        Ok(loss)
    }

    pub fn rec_loss_of(&self, scene: &Scene, alpha: f64) -> Result<f64> {
        let dest = scene.destination()?;
        let k = self.social_encode(scene)?;
        let v = self.intention_encode(dest)?;
        let rec = self.joint_decode(&k, &v)?;
        rec_loss(&rec.past, &scene.ego_past, rec.destination, dest, alpha)
    }

    pub fn sgd_step(&mut self, grads: &FeatureGrads, lr: f64) -> Result<()> {
        self.social.sgd_step(&grads.social, lr)?;
        self.intention_enc.sgd_step(&grads.intention_enc, lr)?;
        self.joint_dec.sgd_step(&grads.joint_dec, lr)
    }

    /// Writes one `.mtnn` file per net plus `features.manifest`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.social.save(dir, "social_")?;
        self.intention_enc.save(&dir.join("intention_enc.mtnn"))?;
        self.joint_dec.save(&dir.join("joint_dec.mtnn"))?;
        let mut m = KvFile::new();
        m.set("d_past", self.d_past());
        m.set("d_int", self.d_int());
        m.set("t_p", self.t_p());
        m.save(&dir.join("features.manifest"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = KvFile::load(&dir.join("features.manifest"))?;
        let nets = Self {
            social: SocialEncoder::load(dir, "social_")?,
            intention_enc: Mlp::load(&dir.join("intention_enc.mtnn"))?,
            joint_dec: Mlp::load(&dir.join("joint_dec.mtnn"))?,
        };
        nets.check()?;
        let (d_past, d_int, t_p): (usize, usize, usize) =
            (m.require("d_past")?, m.require("d_int")?, m.require("t_p")?);
        if (d_past, d_int, t_p) != (nets.d_past(), nets.d_int(), nets.t_p()) {
            return Err(Error::Config(format!(
                "features.manifest dims ({d_past}, {d_int}, {t_p}) disagree with the stored nets"
            )));
        }
        Ok(nets)
    }
}

impl FeatureGrads {
    pub fn scale(&mut self, c: f64) {
        self.social.scale(c);
        self.intention_enc.scale(c);
        self.joint_dec.scale(c);
    }
}

pub(crate) fn split_reconstruction(out: &[f64]) -> Reconstruction {
    let n = out.len() - 2;
    Reconstruction {
        past: unflatten(&out[..n]),
        destination: [out[n], out[n + 1]],
    }
}

/// `‖X̂ − X‖² + alpha · ‖ŷ − y‖²`, summed over entries.
pub fn rec_loss(x_hat: &[Point], x: &[Point], y_hat: Point, y: Point, alpha: f64) -> Result<f64> {
    if x_hat.len() != x.len() {
        return Err(Error::invalid(format!(
            "reconstruction has {} rows, target {}",
            x_hat.len(),
            x.len()
        )));
    }
    if !(alpha >= 0.0) {
        return Err(Error::invalid("alpha must be >= 0"));
    }
    let past: f64 = x_hat
        .iter()
        .zip(x)
        .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
        .sum();
    let dest = (y_hat[0] - y[0]).powi(2) + (y_hat[1] - y[1]).powi(2);
    Ok(past + alpha * dest)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureTrainConfig {
    pub sgd: SgdConfig,
    pub alpha: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
}

impl Default for FeatureTrainConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig {
                learning_rate: 1e-3,
                batch_size: 16,
                epochs: 100,
                seed: 0,
            },
            alpha: 1.0,
            finetune_epochs: 0,
            finetune_lr: 1e-6,
        }
    }
}

/// Mean per-scene loss of every epoch, in training order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epoch_losses: Vec<f64>,
}

/// Mini-batch SGD on the mean reconstruction loss over normalized scenes.
pub fn train_features(
    mut nets: FeatureNets,
    scenes: &[Scene],
    cfg: &FeatureTrainConfig,
) -> Result<(FeatureNets, TrainLog)> {
    if scenes.is_empty() {
        return Err(Error::invalid("feature training needs at least one scene"));
    }
    cfg.sgd.validate()?;
    for s in scenes {
        s.destination()?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.sgd.seed, 100));
    let mut log = TrainLog::default();
    let phases = [
        (cfg.sgd.epochs, cfg.sgd.learning_rate),
        (cfg.finetune_epochs, cfg.finetune_lr),
    ];
    let mut epoch_no = 0;
    for (epochs, lr) in phases {
        for _ in 0..epochs {
            let mut total = 0.0;
            for (b, batch) in shuffled_batches(scenes.len(), cfg.sgd.batch_size, &mut rng)
                .into_iter()
                .enumerate()
            {
                let mut grads = nets.zero_grads();
                let mut batch_loss = 0.0;
                for &i in &batch {
                    batch_loss += nets.rec_loss_backward(&scenes[i], cfg.alpha, &mut grads)?;
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite reconstruction loss at epoch {epoch_no}, batch {b}"
                    )));
                }
                total += batch_loss;
                grads.scale(1.0 / batch.len() as f64);
                nets.sgd_step(&grads, lr)?;
            }
            let mean = total / scenes.len() as f64;
            log::debug!("features epoch {epoch_no}: mean rec loss {mean:.6}");
            log.epoch_losses.push(mean);
            epoch_no += 1;
        }
    }
    Ok((nets, log))
}

pub fn mean_rec_loss(nets: &FeatureNets, scenes: &[Scene], alpha: f64) -> Result<f64> {
    let mut total = 0.0;
    for s in scenes {
        total += nets.rec_loss_of(s, alpha)?;
    }
    Ok(total / scenes.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_dims() -> FeatureDims {
        FeatureDims {
            t_p: 3,
            d_past: 6,
            d_int: 4,
            embed: 5,
            hidden: 7,
            activation: Activation::Tanh,
        }
    }

    fn scene(neighbors: usize) -> Scene {
        Scene {
            id: 0,
            ego_past: vec![[-0.8, -0.2], [-0.4, -0.1], [0.0, 0.0]],
            neighbor_pasts: (0..neighbors)
                .map(|n| vec![[n as f64, 1.0], [n as f64 + 0.3, 1.1], [n as f64 + 0.7, 0.9]])
                .collect(),
            ego_future: Some(vec![[0.4, 0.1], [0.9, 0.5]]),
            mode: None,
        }
    }

    #[test]
    fn empty_neighbor_pool_is_zero() {
        let nets = FeatureNets::init(1, &small_dims()).unwrap();
        let (_, tape) = nets.social.encode_tape(&scene(0)).unwrap();
        let e = nets.social.ego_embed.output_dim();
        assert!(tape.fuse.input()[e..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn pooling_is_permutation_and_duplicate_invariant() {
        let nets = FeatureNets::init(2, &small_dims()).unwrap();
        let s = scene(3);
        let k = nets.social_encode(&s).unwrap();
        let mut perm = s.clone();
        perm.neighbor_pasts.reverse();
        assert_eq!(nets.social_encode(&perm).unwrap(), k);
        let mut dup = s.clone();
        dup.neighbor_pasts.push(s.neighbor_pasts[1].clone());
        assert_eq!(nets.social_encode(&dup).unwrap(), k);
    }

    #[test]
    fn intention_and_decoder_shapes() {
        let nets = FeatureNets::init(3, &FeatureDims::default()).unwrap();
        let v = nets.intention_encode([1.0, 2.0]).unwrap();
        assert_eq!(v.0.len(), 64);
        assert_eq!(v, nets.intention_encode([1.0, 2.0]).unwrap());
        let k = PastFeature(vec![0.1; 128]);
        let rec = nets.joint_decode(&k, &v).unwrap();
        assert_eq!(rec.past.len(), 8);
        assert!(nets.joint_decode(&v_as_k(&v), &v).is_err());
    }

    fn v_as_k(v: &IntentionFeature) -> PastFeature {
        PastFeature(v.0.clone())
    }

    #[test]
    fn zero_weight_nets_emit_biases() {
        let mut nets = FeatureNets::init(4, &small_dims()).unwrap();
        let last = nets.intention_enc.num_layers() - 1;
        nets.intention_enc.weights_mut()[last].fill(0.0);
        nets.intention_enc.biases_mut()[last].copy_from_slice(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(nets.intention_encode([5.0, -9.0]).unwrap().0, vec![1.0, 2.0, 3.0, 4.0]);

        let last = nets.joint_dec.num_layers() - 1;
        nets.joint_dec.weights_mut()[last].fill(0.0);
        let bias: Vec<f64> = (0..8).map(|i| i as f64).collect();
        nets.joint_dec.biases_mut()[last].copy_from_slice(&bias);
        let rec = nets
            .joint_decode(&PastFeature(vec![0.3; 6]), &IntentionFeature(vec![0.2; 4]))
            .unwrap();
        assert_eq!(rec.past, vec![[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]]);
        assert_eq!(rec.destination, [6.0, 7.0]);
    }

    #[test]
    fn rec_loss_hand_values() {
        let x = vec![[0.0, 0.0]; 8];
        let x_hat = vec![[1.0, 1.0]; 8];
        assert_eq!(rec_loss(&x_hat, &x, [3.0, 4.0], [0.0, 0.0], 1.0).unwrap(), 41.0);
        assert_eq!(rec_loss(&x, &x, [1.0, 1.0], [1.0, 1.0], 1.0).unwrap(), 0.0);
        assert!(rec_loss(&x[..7], &x, [0.0, 0.0], [0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn rec_loss_gradient_matches_finite_differences() {
        let nets = FeatureNets::init(5, &small_dims()).unwrap();
        let s = scene(2);
        let mut grads = nets.zero_grads();
        nets.rec_loss_backward(&s, 0.7, &mut grads).unwrap();
        let eps = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
        let mut worst = 0.0f64;

        // (getter, gradient) pairs for the first weight block of every net
        type Pick = fn(&mut FeatureNets) -> &mut Vec<f64>;
        let picks: [(Pick, &Vec<f64>); 5] = [
            (|n| &mut n.social.ego_embed.weights_mut()[0], &grads.social.ego_embed.d_weights[0]),
            (|n| &mut n.social.neighbor_embed.weights_mut()[0], &grads.social.neighbor_embed.d_weights[0]),
            (|n| &mut n.social.fuse.weights_mut()[1], &grads.social.fuse.d_weights[1]),
            (|n| &mut n.intention_enc.weights_mut()[0], &grads.intention_enc.d_weights[0]),
            (|n| &mut n.joint_dec.weights_mut()[0], &grads.joint_dec.d_weights[0]),
        ];
        for (pick, analytic) in picks {
            for i in 0..analytic.len() {
                let mut p = nets.clone();
                pick(&mut p)[i] += eps;
                let plus = p.rec_loss_of(&s, 0.7).unwrap();
                let mut m = nets.clone();
                pick(&mut m)[i] -= eps;
                let minus = m.rec_loss_of(&s, 0.7).unwrap();
                worst = worst.max(rel(analytic[i], (plus - minus) / (2.0 * eps)));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn zero_epochs_returns_initial_nets() {
        let nets = FeatureNets::init(6, &small_dims()).unwrap();
        let mut cfg = FeatureTrainConfig::default();
        cfg.sgd.epochs = 0;
        let (out, log) = train_features(nets.clone(), &[scene(1)], &cfg).unwrap();
        assert_eq!(out, nets);
        assert!(log.epoch_losses.is_empty());
        assert!(train_features(nets, &[], &cfg).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let nets = FeatureNets::init(8, &small_dims()).unwrap();
        nets.save(dir.path()).unwrap();
        assert_eq!(FeatureNets::load(dir.path()).unwrap(), nets);
    }
}
