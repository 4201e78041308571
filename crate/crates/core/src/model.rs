//! The frozen end-to-end predictor: memory-based intention prediction
//! followed by trajectory fulfillment for every predicted destination.

use rayon::prelude::*;

use crate::addresser::{AddressIndex, Addresser};
use crate::datasets::{normalize_scene, Point, Scene};
use crate::error::{Error, Result};
use crate::features::FeatureNets;
use crate::fulfillment::FulfillNets;
use crate::intention::{predict_intentions, IntentionAnchor, IntentionParams, IntentionSet};
use crate::membank::MemoryBankPair;

#[derive(Debug, Clone)]
pub struct TrajectoryModel {
    pub feature_nets: FeatureNets,
    pub bank: MemoryBankPair,
    pub addresser: Addresser,
    pub fulfill: FulfillNets,
    index: AddressIndex,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PredictParams {
    pub intention: IntentionParams,
    /// Overwrite the last future point with the conditioning destination.
    pub snap_destination: bool,
}

/// `K` destinations and their fulfilled trajectories for one scene, in the
/// scene's original (world) frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub scene_id: u64,
    pub destinations: Vec<Point>,
    pub trajectories: Vec<Vec<Point>>,
    pub intentions: IntentionSet,
    pub anchors: Vec<IntentionAnchor>,
}

impl TrajectoryModel {
    pub fn new(feature_nets: FeatureNets, bank: MemoryBankPair, addresser: Addresser, fulfill: FulfillNets) -> Result<Self> {
        if bank.is_empty() {
            return Err(Error::invalid("model needs a non-empty memory bank"));
        }
        if bank.meta.d_past != feature_nets.d_past() || bank.meta.d_int != feature_nets.d_int() {
            return Err(Error::invalid("bank dims do not match the feature nets"));
        }
        if fulfill.t_p() != feature_nets.t_p() || fulfill.t_f != bank.meta.t_f {
            return Err(Error::invalid("fulfillment horizon does not match the memory model"));
        }
        let index = addresser.index(&bank)?;
        Ok(Self {
            feature_nets,
            bank,
            addresser,
            fulfill,
            index,
        })
    }

    /// Same model with a different scoring rule.
    pub fn with_addresser(&self, addresser: Addresser) -> Result<Self> {
        Self::new(self.feature_nets.clone(), self.bank.clone(), addresser, self.fulfill.clone())
    }

    pub fn t_p(&self) -> usize {
        self.feature_nets.t_p()
    }

    pub fn t_f(&self) -> usize {
        self.fulfill.t_f
    }

    /// `L` and `K` actually used against this bank: `L` is capped at the
    /// bank size and `K` at `L`.
    pub fn effective_params(&self, params: &IntentionParams) -> IntentionParams {
        let mut p = *params;
        if p.l > self.bank.len() {
            log::warn!("L={} exceeds bank size {}; using L={}", p.l, self.bank.len(), self.bank.len());
            p.l = self.bank.len();
        }
        if p.k > p.l {
            log::warn!("K={} exceeds L={}; using K={}", p.k, p.l, p.l);
            p.k = p.l;
        }
        p
    }

    /// Predicts from a scene in world coordinates.
    pub fn predict_scene(&self, scene: &Scene, params: &PredictParams) -> Result<PredictionSet> {
        scene.validate(self.t_p(), self.t_f())?;
        let (local, tf) = normalize_scene(scene);
        let ip = self.effective_params(&params.intention);
        let pred = predict_intentions(&local, &self.bank, &self.index, &self.feature_nets, &ip)?;
        let mut trajectories = Vec::with_capacity(pred.set.destinations.len());
        for &dest in &pred.set.destinations {
            let mut full = self.fulfill.fulfill(&local, dest)?;
            if params.snap_destination {
                if let Some(last) = full.future.last_mut() {
                    *last = dest;
                }
            }
            trajectories.push(tf.points_to_world(&full.future));
        }
        Ok(PredictionSet {
            scene_id: scene.id,
            destinations: tf.points_to_world(&pred.set.destinations),
            trajectories,
            intentions: pred.set,
            anchors: pred.anchors,
        })
    }

    /// Scene-parallel prediction; output order follows `scenes`.
    pub fn predict_many(&self, scenes: &[Scene], params: &PredictParams) -> Result<Vec<PredictionSet>> {
        scenes.par_iter().map(|s| self.predict_scene(s, params)).collect()
    }
}
