//! Destination-conditioned trajectory completion.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::datasets::{flatten, unflatten, Point, Scene};
use crate::error::{Error, Result};
use crate::features::{SocialEncoder, SocialGrads, TrainLog};
use crate::kv::KvFile;
use crate::numkit::{derive_seed, shuffled_batches, Activation, GradBundle, Mlp, SgdConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct FulfillNets {
    /// Same structure as the social encoder used for the memory features.
    pub encoder: SocialEncoder,
    pub f_d: Mlp,
    pub d_full: Mlp,
    pub t_f: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullPrediction {
    pub future: Vec<Point>,
    pub past_recon: Vec<Point>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FulfillDims {
    pub t_p: usize,
    pub t_f: usize,
    pub embed: usize,
    pub hidden: usize,
    /// Width of the trajectory feature `h_x`.
    pub d_traj: usize,
    /// Width of the destination feature `F_d(ŷ)`.
    pub d_dest: usize,
    pub activation: Activation,
}

impl Default for FulfillDims {
    fn default() -> Self {
        Self {
            t_p: 8,
            t_f: 12,
            embed: 64,
            hidden: 128,
            d_traj: 128,
            d_dest: 64,
            activation: Activation::ReLU,
        }
    }
}

pub struct FulfillGrads {
    pub encoder: SocialGrads,
    pub f_d: GradBundle,
    pub d_full: GradBundle,
}

impl FulfillNets {
    pub fn init(seed: u64, dims: &FulfillDims) -> Result<Self> {
        let act = dims.activation;
        Ok(Self {
            encoder: SocialEncoder::init(derive_seed(seed, 30), dims.t_p, dims.embed, dims.hidden, dims.d_traj, act)?,
            f_d: Mlp::init(derive_seed(seed, 31), &[2, dims.embed, dims.d_dest], act)?,
            d_full: Mlp::init(
                derive_seed(seed, 32),
                &[dims.d_traj + dims.d_dest, dims.hidden, 2 * (dims.t_p + dims.t_f)],
                act,
            )?,
            t_f: dims.t_f,
        })
    }

    pub fn t_p(&self) -> usize {
        self.encoder.t_p()
    }

    fn check(&self) -> Result<()> {
        if self.f_d.input_dim() != 2
            || self.d_full.input_dim() != self.encoder.out_dim() + self.f_d.output_dim()
            || self.d_full.output_dim() != 2 * (self.t_p() + self.t_f)
        {
            return Err(Error::invalid("fulfillment net dimensions do not chain"));
        }
        Ok(())
    }

    /// `h = E_full(X, neighbors)`, `h' = [h; F_d(destination)]`,
    /// `[X̂_full; Ŷ] = D_full(h')`. Scene and destination share the
    /// normalized frame.
    pub fn fulfill(&self, scene: &Scene, destination: Point) -> Result<FullPrediction> {
        let h = self.encoder.encode(scene)?;
        let mut joint = h;
        joint.extend(self.f_d.forward(&destination)?);
        Ok(self.split(&self.d_full.forward(&joint)?))
    }

    fn split(&self, out: &[f64]) -> FullPrediction {
        let n = 2 * self.t_p();
        FullPrediction {
            past_recon: unflatten(&out[..n]),
            future: unflatten(&out[n..]),
        }
    }

    pub fn zero_grads(&self) -> FulfillGrads {
        FulfillGrads {
            encoder: self.encoder.zero_grads(),
            f_d: GradBundle::zeros_like(&self.f_d),
            d_full: GradBundle::zeros_like(&self.d_full),
        }
    }

    /// Trajectory loss of one scene conditioned on `destination`,
    /// accumulating parameter gradients.
    pub fn traj_loss_backward(
        &self,
        scene: &Scene,
        destination: Point,
        beta: f64,
        grads: &mut FulfillGrads,
    ) -> Result<f64> {
        let future = scene.future()?;
        if future.len() != self.t_f {
            return Err(Error::invalid(format!(
                "scene {} future has {} rows, nets expect {}",
                scene.id,
                future.len(),
                self.t_f
            )));
        }
        let (h, enc_tape) = self.encoder.encode_tape(scene)?;
        let fd_tape = self.f_d.forward_tape(&destination)?;
        let mut joint = h;
        joint.extend_from_slice(fd_tape.output());
        let dec_tape = self.d_full.forward_tape(&joint)?;
        let out = dec_tape.output();

        let past = flatten(&scene.ego_past);
        let fut = flatten(future);
        let mut upstream = Vec::with_capacity(out.len());
        let mut loss = 0.0;
        for (o, t) in out.iter().zip(&past) {
            let r = o - t;
            loss += r * r;
            upstream.push(2.0 * r);
        }
        for (o, t) in out[past.len()..].iter().zip(&fut) {
            let r = o - t;
            loss += beta * r * r;
            upstream.push(2.0 * beta * r);
        }
        let d_joint = self.d_full.backward_tape(&dec_tape, &upstream, &mut grads.d_full)?;
        let d_traj = self.encoder.out_dim();
        self.encoder.backward(&enc_tape, &d_joint[..d_traj], &mut grads.encoder)?;
        self.f_d.backward_tape(&fd_tape, &d_joint[d_traj..], &mut grads.f_d)?;
        Ok(loss)
    }

    pub fn sgd_step(&mut self, grads: &FulfillGrads, lr: f64) -> Result<()> {
        self.encoder.sgd_step(&grads.encoder, lr)?;
        self.f_d.sgd_step(&grads.f_d, lr)?;
        self.d_full.sgd_step(&grads.d_full, lr)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.encoder.save(dir, "e_full_")?;
        self.f_d.save(&dir.join("f_d.mtnn"))?;
        self.d_full.save(&dir.join("d_full.mtnn"))?;
        let mut m = KvFile::new();
        m.set("t_p", self.t_p());
        m.set("t_f", self.t_f);
        m.save(&dir.join("fulfillment.manifest"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let m = KvFile::load(&dir.join("fulfillment.manifest"))?;
        let nets = Self {
            encoder: SocialEncoder::load(dir, "e_full_")?,
            f_d: Mlp::load(&dir.join("f_d.mtnn"))?,
            d_full: Mlp::load(&dir.join("d_full.mtnn"))?,
            t_f: m.require("t_f")?,
        };
        nets.check()?;
        let t_p: usize = m.require("t_p")?;
        if t_p != nets.t_p() {
            return Err(Error::Config(format!(
                "fulfillment.manifest t_p={t_p} disagrees with nets ({})",
                nets.t_p()
            )));
        }
        Ok(nets)
    }
}

impl FulfillGrads {
    pub fn scale(&mut self, c: f64) {
        self.encoder.scale(c);
        self.f_d.scale(c);
        self.d_full.scale(c);
    }
}

/// `‖X̂_full − X‖² + beta · ‖Ŷ − Y‖²`.
pub fn traj_loss(pred: &FullPrediction, scene: &Scene, beta: f64) -> Result<f64> {
    let future = scene.future()?;
    if pred.future.len() != future.len() || pred.past_recon.len() != scene.ego_past.len() {
        return Err(Error::invalid("prediction and scene shapes differ"));
    }
    let sq = |a: &[Point], b: &[Point]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
            .sum()
    };
    Ok(sq(&pred.past_recon, &scene.ego_past) + beta * sq(&pred.future, future))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FulfillTrainConfig {
    pub sgd: SgdConfig,
    pub beta: f64,
    pub finetune_epochs: usize,
    pub finetune_lr: f64,
}

impl Default for FulfillTrainConfig {
    fn default() -> Self {
        Self {
            sgd: SgdConfig {
                learning_rate: 1e-3,
                batch_size: 16,
                epochs: 100,
                seed: 0,
            },
            beta: 1.0,
            finetune_epochs: 0,
            finetune_lr: 1e-6,
        }
    }
}

/// SGD on the mean trajectory loss, conditioning every scene on its own
/// ground-truth destination.
pub fn train_fulfillment(
    mut nets: FulfillNets,
    scenes: &[Scene],
    cfg: &FulfillTrainConfig,
) -> Result<(FulfillNets, TrainLog)> {
    if scenes.is_empty() {
        return Err(Error::invalid("fulfillment training needs at least one scene"));
    }
    cfg.sgd.validate()?;
    let destinations = scenes.iter().map(Scene::destination).collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.sgd.seed, 300));
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
                    batch_loss += nets.traj_loss_backward(&scenes[i], destinations[i], cfg.beta, &mut grads)?;
                }
                if !batch_loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite trajectory loss at epoch {epoch_no}, batch {b}"
                    )));
                }
                total += batch_loss;
                grads.scale(1.0 / batch.len() as f64);
                nets.sgd_step(&grads, lr)?;
            }
            let mean = total / scenes.len() as f64;
            log::debug!("fulfillment epoch {epoch_no}: mean traj loss {mean:.6}");
            log.epoch_losses.push(mean);
            epoch_no += 1;
        }
    }
    Ok((nets, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> FulfillDims {
        FulfillDims {
            t_p: 3,
            t_f: 2,
            embed: 4,
            hidden: 6,
            d_traj: 5,
            d_dest: 3,
            activation: Activation::Tanh,
        }
    }

    fn scene() -> Scene {
        Scene {
            id: 1,
            ego_past: vec![[-0.6, 0.1], [-0.3, 0.0], [0.0, 0.0]],
            neighbor_pasts: vec![
                vec![[1.0, 1.0], [1.2, 1.1], [1.5, 1.0]],
                vec![[-1.0, 0.5], [-0.8, 0.4], [-0.5, 0.6]],
            ],
            ego_future: Some(vec![[0.3, 0.1], [0.6, 0.3]]),
            mode: None,
        }
    }

    #[test]
    fn shapes_determinism_and_permutation() {
        let nets = FulfillNets::init(2, &FulfillDims::default()).unwrap();
        let mut s = scene();
        s.ego_past = (0..8).map(|i| [i as f64 * 0.1, 0.0]).collect();
        s.neighbor_pasts = vec![
            (0..8).map(|i| [i as f64 * 0.1, 1.0]).collect(),
            (0..8).map(|i| [0.0, i as f64 * 0.1]).collect(),
        ];
        let p = nets.fulfill(&s, [1.0, 2.0]).unwrap();
        assert_eq!((p.past_recon.len(), p.future.len()), (8, 12));
        assert_eq!(p, nets.fulfill(&s, [1.0, 2.0]).unwrap());
        s.neighbor_pasts.reverse();
        assert_eq!(p, nets.fulfill(&s, [1.0, 2.0]).unwrap());
    }

    #[test]
    fn traj_loss_hand_values() {
        let s = Scene {
            id: 0,
            ego_past: vec![[0.0, 0.0]; 8],
            neighbor_pasts: vec![],
            ego_future: Some(vec![[1.0, 1.0]; 12]),
            mode: None,
        };
        let exact = FullPrediction {
            future: vec![[1.0, 1.0]; 12],
            past_recon: vec![[0.0, 0.0]; 8],
        };
        assert_eq!(traj_loss(&exact, &s, 1.0).unwrap(), 0.0);
        let off = FullPrediction {
            future: vec![[1.5, 0.5]; 12],
            past_recon: vec![[0.0, 0.0]; 8],
        };
        assert_eq!(traj_loss(&off, &s, 1.0).unwrap(), 6.0);
        let mut no_future = s.clone();
        no_future.ego_future = None;
        assert!(traj_loss(&exact, &no_future, 1.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let nets = FulfillNets::init(4, &small()).unwrap();
        let s = scene();
        let dest = [0.7, 0.2];
        let mut grads = nets.zero_grads();
        nets.traj_loss_backward(&s, dest, 0.8, &mut grads).unwrap();
        let loss_of = |n: &FulfillNets| traj_loss(&n.fulfill(&s, dest).unwrap(), &s, 0.8).unwrap();
        let eps = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-8);
        let mut worst = 0.0f64;
        type Pick = fn(&mut FulfillNets) -> &mut Vec<f64>;
        let picks: [(Pick, &Vec<f64>); 4] = [
            (|n| &mut n.encoder.ego_embed.weights_mut()[0], &grads.encoder.ego_embed.d_weights[0]),
            (|n| &mut n.encoder.neighbor_embed.weights_mut()[1], &grads.encoder.neighbor_embed.d_weights[1]),
            (|n| &mut n.f_d.weights_mut()[0], &grads.f_d.d_weights[0]),
            (|n| &mut n.d_full.biases_mut()[0], &grads.d_full.d_biases[0]),
        ];
        for (pick, analytic) in picks {
            for i in 0..analytic.len() {
                let mut p = nets.clone();
                pick(&mut p)[i] += eps;
                let mut m = nets.clone();
                pick(&mut m)[i] -= eps;
                worst = worst.max(rel(analytic[i], (loss_of(&p) - loss_of(&m)) / (2.0 * eps)));
            }
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn zero_epochs_and_round_trip() {
        let nets = FulfillNets::init(5, &small()).unwrap();
        let mut cfg = FulfillTrainConfig::default();
        cfg.sgd.epochs = 0;
        let (out, _) = train_fulfillment(nets.clone(), &[scene()], &cfg).unwrap();
        assert_eq!(out, nets);
        let dir = tempfile::tempdir().unwrap();
        nets.save(dir.path()).unwrap();
        assert_eq!(FulfillNets::load(dir.path()).unwrap(), nets);
    }
}
