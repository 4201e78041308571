//! Trains all four stages on synthetic three-mode scenes and reports
//! best-of-K errors against a constant-velocity baseline.
//!
//! cargo run --release -p memtraj-core --example synthetic -- [train_scenes] [epochs]

use std::time::Instant;

use memtraj_core::datasets::{dist, save_tsv, scenes_to_tracks, synth_generate_labeled};
use memtraj_core::evalkit::{constant_velocity, fde};
use memtraj_core::{Config, Pipeline};

fn main() -> memtraj_core::Result<()> {
    env_logger::init();
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse().unwrap()).collect();
    let n_train = args.first().copied().unwrap_or(3000);
    let epochs = args.get(1).copied().unwrap_or(100);
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = Config::default();
    cfg.seed = 7;
    let spec = cfg.synth_spec();
    let train = synth_generate_labeled(1, n_train, &spec)?;
    let test = synth_generate_labeled(2, 300, &spec)?;
    let plain = |v: &[memtraj_core::datasets::SynthScene]| v.iter().map(|s| s.scene.clone()).collect::<Vec<_>>();
    save_tsv(&scenes_to_tracks(&plain(&train)), &dir.path().join("train.tsv"))?;
    save_tsv(&scenes_to_tracks(&plain(&test)), &dir.path().join("test.tsv"))?;
    std::fs::write(dir.path().join("m.txt"), "train train.tsv\ntest test.tsv\n").unwrap();
    cfg.manifest = Some(dir.path().join("m.txt"));
    cfg.out_dir = dir.path().join("out");
    cfg.epochs_features = epochs;
    cfg.epochs_fulfillment = epochs;
    cfg.l = 60;
    let p = Pipeline::new(cfg)?;
    let t = Instant::now();
    p.stage1_train_features()?;
    println!("features {:?}", t.elapsed());
    p.stage2_build_memory()?;
    println!("memory {:?} M={}", t.elapsed(), p.load_bank()?.len());
    p.stage3_train_addresser()?;
    println!("addresser {:?}", t.elapsed());
    p.stage4_train_fulfillment()?;
    println!("fulfillment {:?}", t.elapsed());
    let learned = p.eval("test", false)?;
    let fixed = p.eval("test", true)?;
    println!("eval {:?}", t.elapsed());
    let cv: f64 = test.iter().map(|s| fde(&constant_velocity(&s.scene, p.cfg.t_f), s.scene.future().unwrap())).sum::<f64>() / test.len() as f64;
    println!("learned ade/fde {:.4}/{:.4} fixed {:.4}/{:.4} cv fde {:.4}", learned.min_ade_k, learned.min_fde_k, fixed.min_ade_k, fixed.min_fde_k, cv);
    let model = p.load_model(false)?;
    let preds = model.predict_many(&plain(&test), &p.cfg.predict_params())?;
    for tol in [0.2, 0.3, 0.5, 1.0] {
        let covered = test.iter().zip(&preds).filter(|(s, pr)| s.mode_endpoints.iter().all(|e| pr.destinations.iter().any(|d| dist(*d, *e) <= tol))).count();
        println!("coverage@{tol}: {covered}/300");
    }
    Ok(())
}
