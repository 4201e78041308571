//! Acceptance suite: one PASS/FAIL line per criterion. Run with
//! `cargo test -p memtraj-core --test acceptance`; set
//! `MEMTRAJ_ACCEPTANCE_STRICT=1` to make any FAIL a nonzero exit.

use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use memtraj_core::addresser::{pseudo_label, score, train_addresser_on, AddresserData, AddresserNets, AddresserTrainConfig};
use memtraj_core::datasets::{dist, save_tsv, scenes_to_tracks, synth_generate_labeled, Point, Scene, SynthScene};
use memtraj_core::evalkit::{constant_velocity, fde, min_ade, min_fde, scene_metrics, MetricReport};
use memtraj_core::features::{IntentionFeature, PastFeature};
use memtraj_core::intention::kmeans_detailed;
use memtraj_core::membank::{bank_init, filter_in_order, is_redundant, visit_order, BankMeta, MemoryBankPair, MemoryEntry};
use memtraj_core::numkit::{finite_diff_check, Activation, Mlp};
use memtraj_core::pipeline::load_split;
use memtraj_core::{Addresser, Config, Pipeline, TrajectoryModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(elapsed: Duration, limit: Duration) -> (bool, String) {
    (elapsed <= limit, format!("{:.1}s (limit {}s)", elapsed.as_secs_f64(), limit.as_secs()))
}

// ---------------------------------------------------------------------------
// 1. gradient suite

fn gradient_suite() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..50 {
        let layers = rng.random_range(1..=3usize);
        let caps = [16usize, 32, 16, 16];
        let dims: Vec<usize> = (0..=layers).map(|l| rng.random_range(1..=caps[l])).collect();
        let act = if i % 2 == 0 { Activation::ReLU } else { Activation::Tanh };
        let mut net = Mlp::init(rng.random(), &dims, act).unwrap();
        // Fresh nets have zero biases; a layer with every unit dead then
        // feeds exact zeros into the next ReLU, right on its kink.
        for b in net.biases_mut() {
            b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
        worst = worst.max(finite_diff_check(&net, &x, 1e-5).unwrap());
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(10));
    outcome(worst < 1e-4 && fast, format!("50 nets, max relative error {worst:.2e} (< 1e-4), {time}"))
}

// ---------------------------------------------------------------------------
// 2. filtering properties

fn random_bank(rng: &mut ChaCha8Rng, m: usize) -> MemoryBankPair {
    // Clustered coordinates so that redundancy actually occurs.
    let centers: Vec<Point> = (0..rng.random_range(1..=20))
        .map(|_| [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)])
        .collect();
    let jitter = |rng: &mut ChaCha8Rng, c: Point| [c[0] + rng.random_range(-0.5..0.5), c[1] + rng.random_range(-0.5..0.5)];
    let entries = (0..m)
        .map(|i| {
            let s = centers[rng.random_range(0..centers.len())];
            let d = centers[rng.random_range(0..centers.len())];
            MemoryEntry {
                k: PastFeature(vec![rng.random(), rng.random()]),
                v: IntentionFeature(vec![rng.random()]),
                start_pos: jitter(rng, s),
                destination: jitter(rng, d),
                sample_id: i as u64,
            }
        })
        .collect();
    MemoryBankPair {
        entries,
        meta: BankMeta {
            d_past: 2,
            d_int: 1,
            t_p: 8,
            t_f: 12,
            theta_past: 0.0,
            theta_int: 0.0,
            seed: 0,
            source_hash: 0,
        },
    }
}

fn filtering_properties() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut problems = Vec::new();
    for b in 0..200 {
        let m = rng.random_range(1..=500);
        let bank = random_bank(&mut rng, m);
        let (tp, ti) = (rng.random_range(0.0..1.5), rng.random_range(0.0..1.5));
        let order = visit_order(m, rng.random());
        let kept = filter_in_order(&bank, &order, tp, ti).unwrap();
        for (a, &i) in kept.iter().enumerate() {
            for &j in &kept[a + 1..] {
                if is_redundant(&bank.entries[i], &bank.entries[j], tp, ti) {
                    problems.push(format!("bank {b}: kept {i} and {j} are redundant"));
                }
            }
        }
        let mut is_kept = vec![false; m];
        for &i in &kept {
            is_kept[i] = true;
        }
        let mut kept_so_far: Vec<usize> = Vec::new();
        for &i in &order {
            if is_kept[i] {
                kept_so_far.push(i);
            } else if !kept_so_far
                .iter()
                .any(|&j| is_redundant(&bank.entries[i], &bank.entries[j], tp, ti))
            {
                problems.push(format!("bank {b}: removed {i} has no earlier kept witness"));
            }
        }
        let all = filter_in_order(&bank, &order, f64::INFINITY, f64::INFINITY).unwrap();
        if all.len() != 1 {
            problems.push(format!("bank {b}: infinite thresholds kept {}", all.len()));
        }
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(30));
    let detail = match problems.first() {
        None => format!("200 banks, all properties hold, {time}"),
        Some(p) => format!("{} violations, first: {p}; {time}", problems.len()),
    };
    outcome(problems.is_empty() && fast, detail)
}

// ---------------------------------------------------------------------------
// 3. addresser oracle

/// Ranks with ties sharing their average rank.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}

fn addresser_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (m, d_past, per_entry) = (16, 16, 8);
    // A 4x4 grid of intentions one unit apart; keys are unrelated random
    // directions, so the projections have to learn the geometry.
    let decoded: Vec<Point> = (0..m).map(|i| [(i % 4) as f64, (i / 4) as f64]).collect();
    let keys: Vec<PastFeature> = (0..m)
        .map(|_| PastFeature((0..d_past).map(|_| rng.random_range(-1.0..1.0)).collect()))
        .collect();
    let mut queries = Vec::new();
    let mut query_destinations = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        for _ in 0..per_entry {
            queries.push(PastFeature(k.0.iter().map(|x| x + rng.random_range(-0.05..0.05)).collect()));
            query_destinations.push([
                decoded[i][0] + rng.random_range(-0.1..0.1),
                decoded[i][1] + rng.random_range(-0.1..0.1),
            ]);
        }
    }
    let data = AddresserData {
        queries,
        query_destinations,
        keys,
        decoded,
        query_self: Vec::new(),
    };
    let d_t = 6.0;
    let mut cfg = AddresserTrainConfig::default();
    cfg.sgd.epochs = 500;
    cfg.sgd.batch_size = 16;
    cfg.sgd.learning_rate = 1e-2;
    cfg.sgd.seed = 3;
    cfg.d_t = d_t;
    let nets = AddresserNets::init(3, d_past, 64, 32, Activation::Tanh).unwrap();
    let (nets, _) = train_addresser_on(nets, &data, &cfg).unwrap();

    let mut hits = 0;
    let mut rho = 0.0;
    for (q, y) in data.queries.iter().zip(&data.query_destinations) {
        let scores: Vec<f64> = data.keys.iter().map(|k| score(&nets, q, k).unwrap()).collect();
        let dists: Vec<f64> = data.decoded.iter().map(|p| dist(*p, *y)).collect();
        let labels: Vec<f64> = dists.iter().map(|&d| pseudo_label(d, d_t).unwrap()).collect();
        let argmax = (0..m).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
        let argmin = (0..m).fold(0, |b, i| if dists[i] < dists[b] { i } else { b });
        hits += usize::from(argmax == argmin);
        rho += spearman(&scores, &labels);
    }
    let n = data.queries.len();
    let (acc, rho) = (hits as f64 / n as f64, rho / n as f64);
    let (fast, time) = within(t.elapsed(), Duration::from_secs(120));
    outcome(
        acc >= 0.9 && rho >= 0.8 && fast,
        format!("argmax match {:.1}% (>= 90%), mean Spearman {rho:.3} (>= 0.8), {time}", 100.0 * acc),
    )
}

// ---------------------------------------------------------------------------
// 4. k-means oracle

fn partition_cost(points: &[Point], labels: &[usize], k: usize) -> f64 {
    let mut cost = 0.0;
    for c in 0..k {
        let members: Vec<Point> = points.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| *p).collect();
        if members.is_empty() {
            continue;
        }
        let n = members.len() as f64;
        let mean = [
            members.iter().map(|p| p[0]).sum::<f64>() / n,
            members.iter().map(|p| p[1]).sum::<f64>() / n,
        ];
        cost += members.iter().map(|p| (p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2)).sum::<f64>();
    }
    cost
}

fn optimal_cost(points: &[Point], k: usize) -> f64 {
    let n = points.len();
    let mut labels = vec![0usize; n];
    let mut best = f64::INFINITY;
    loop {
        best = best.min(partition_cost(points, &labels, k));
        let mut i = 0;
        loop {
            if i == n {
                return best;
            }
            labels[i] += 1;
            if labels[i] < k {
                break;
            }
            labels[i] = 0;
            i += 1;
        }
    }
}

fn kmeans_oracle() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let l = rng.random_range(1..=8usize);
        let k = rng.random_range(1..=3usize.min(l));
        let points: Vec<Point> = (0..l)
            .map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)])
            .collect();
        let best = (0..10u64)
            .map(|s| kmeans_detailed(&points, k, s, 100).unwrap().cost)
            .fold(f64::INFINITY, f64::min);
        let opt = optimal_cost(&points, k);
        let rel = (best - opt).abs() / opt.abs().max(1e-300);
        if opt > 0.0 || best > 0.0 {
            worst = worst.max(rel);
        }
    }
    let (fast, time) = within(t.elapsed(), Duration::from_secs(60));
    outcome(worst <= 1e-9 && fast, format!("100 instances, max relative gap {worst:.2e} (<= 1e-9), {time}"))
}

// ---------------------------------------------------------------------------
// 6. metric hand cases

fn metric_cases() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-12 {
            failures.push(format!("{name}: got {got}, want {want}"));
        }
    };
    let gt = vec![[1.0, 2.0], [3.0, 5.0]];
    check("exact minFDE", min_fde(&[gt.clone()], &gt).unwrap(), 0.0);
    check("exact minADE", min_ade(&[gt.clone()], &gt).unwrap(), 0.0);
    // Endpoints 3 and 4 away from the ground-truth endpoint.
    let a = vec![[1.0, 2.0], [6.0, 5.0]];
    let b = vec![[1.0, 2.0], [3.0, 9.0]];
    check("K=2 minFDE", min_fde(&[b.clone(), a.clone()], &gt).unwrap(), 3.0);
    // Constant offset of norm 5 at every step.
    let c: Vec<Point> = gt.iter().map(|p| [p[0] + 3.0, p[1] - 4.0]).collect();
    check("constant offset minADE", min_ade(&[c.clone()], &gt).unwrap(), 5.0);
    // Deviations of norm 1 then 3.
    let d = vec![[1.0, 3.0], [3.0, 2.0]];
    check("time-averaged minADE", min_ade(&[d.clone()], &gt).unwrap(), 2.0);
    check("single FDE", fde(&d, &gt), 3.0);
    // Adding a candidate never increases the minimum.
    let pair = min_fde(&[a.clone(), d.clone()], &gt).unwrap();
    let triple = min_fde(&[a.clone(), d.clone(), c.clone()], &gt).unwrap();
    check("K+1 <= K", triple.min(pair), triple);
    // Joint translation leaves metrics unchanged.
    let shift = |ps: &[Point]| ps.iter().map(|p| [p[0] - 7.5, p[1] + 0.25]).collect::<Vec<_>>();
    check(
        "translation minADE",
        min_ade(&[shift(&d), shift(&c)], &shift(&gt)).unwrap(),
        min_ade(&[d.clone(), c.clone()], &gt).unwrap(),
    );
    let rows = vec![
        scene_metrics(0, &[a.clone(), d.clone()], &gt).unwrap(),
        scene_metrics(1, &[c.clone()], &gt).unwrap(),
    ];
    let report = MetricReport::from_rows(rows, 2, "m").unwrap();
    let again =
        MetricReport::from_rows(MetricReport::rows_from_csv(&report.to_csv()).unwrap(), 2, "m").unwrap();
    if (again.min_fde_k - report.min_fde_k).abs() > 1e-9 || (again.min_ade_k - report.min_ade_k).abs() > 1e-9 {
        failures.push("CSV re-aggregation drifted".into());
    }
    if min_fde(&[], &gt).is_ok() || min_ade(&[vec![[0.0, 0.0]]], &gt).is_ok() {
        failures.push("malformed input accepted".into());
    }
    match failures.first() {
        None => outcome(true, "hand cases exact to 1e-12, CSV re-aggregates within 1e-9".into()),
        Some(f) => outcome(false, format!("{} failures, first: {f}", failures.len())),
    }
}

// ---------------------------------------------------------------------------
// Synthetic end-to-end run shared by 5 and 8

fn plain(v: &[SynthScene]) -> Vec<Scene> {
    v.iter().map(|s| s.scene.clone()).collect()
}

fn write_splits(dir: &Path, splits: &[(&str, &[SynthScene])]) -> std::path::PathBuf {
    let mut manifest = String::new();
    for (name, scenes) in splits {
        save_tsv(&scenes_to_tracks(&plain(scenes)), &dir.join(format!("{name}.tsv"))).unwrap();
        manifest.push_str(&format!("{name} {name}.tsv\n"));
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest).unwrap();
    path
}

fn synthetic_config(dir: &Path) -> Config {
    let mut cfg = Config::default();
    cfg.seed = 11;
    cfg.out_dir = dir.join("out");
    cfg.theta_past = 0.05;
    cfg.theta_int = 0.05;
    // Best of the label widths tried on held-out synthetic scenes.
    cfg.d_t = Some(2.0);
    cfg.l = 60;
    cfg.k = 20;
    cfg
}

struct SyntheticRun {
    _dir: tempfile::TempDir,
    pipeline: Pipeline,
    model: TrajectoryModel,
    val: Vec<SynthScene>,
    test: Vec<SynthScene>,
    train_time: Duration,
}

fn synthetic_run() -> SyntheticRun {
    let dir = tempfile::tempdir().unwrap();
    let spec = Config::default().synth_spec();
    let train = synth_generate_labeled(101, 3000, &spec).unwrap();
    let val = synth_generate_labeled(102, 300, &spec).unwrap();
    let test = synth_generate_labeled(103, 300, &spec).unwrap();
    let mut cfg = synthetic_config(dir.path());
    cfg.manifest = Some(write_splits(dir.path(), &[("train", &train), ("val", &val), ("test", &test)]));
    let t = Instant::now();
    let pipeline = Pipeline::new(cfg).unwrap();
    pipeline.run_all().unwrap();
    let model = pipeline.load_model(false).unwrap();
    SyntheticRun {
        _dir: dir,
        pipeline,
        model,
        val,
        test,
        train_time: t.elapsed(),
    }
}

fn mean_min_fde(model: &TrajectoryModel, cfg: &Config, scenes: &[SynthScene]) -> f64 {
    let preds = model.predict_many(&plain(scenes), &cfg.predict_params()).unwrap();
    scenes
        .iter()
        .zip(&preds)
        .map(|(s, p)| min_fde(&p.trajectories, s.scene.future().unwrap()).unwrap())
        .sum::<f64>()
        / scenes.len() as f64
}

fn end_to_end(run: &SyntheticRun) -> Outcome {
    let t = Instant::now();
    let cfg = &run.pipeline.cfg;
    let params = cfg.predict_params();

    // Slack: 95th percentile over validation scenes of the distance from
    // the realized endpoint to the nearest predicted destination.
    let val_preds = run.model.predict_many(&plain(&run.val), &params).unwrap();
    let mut near: Vec<f64> = run
        .val
        .iter()
        .zip(&val_preds)
        .map(|(s, p)| {
            let end = *s.scene.future().unwrap().last().unwrap();
            p.destinations.iter().map(|d| dist(*d, end)).fold(f64::INFINITY, f64::min)
        })
        .collect();
    near.sort_by(f64::total_cmp);
    let slack = near[((near.len() as f64 * 0.95).ceil() as usize).min(near.len()) - 1];
    let sigma = cfg.synth_sigma;
    let radius = 3.0 * sigma * (cfg.t_f as f64).sqrt() + slack;

    let coverage_of = |model: &TrajectoryModel| {
        let preds = model.predict_many(&plain(&run.test), &params).unwrap();
        let covered = run
            .test
            .iter()
            .zip(&preds)
            .filter(|(s, p)| {
                s.mode_endpoints
                    .iter()
                    .all(|e| p.destinations.iter().any(|d| dist(*d, *e) <= radius))
            })
            .count();
        covered as f64 / run.test.len() as f64
    };
    let coverage = coverage_of(&run.model);
    let fixed_model = run.model.with_addresser(Addresser::FixedCosine).unwrap();
    // Reported for comparison only.
    let fixed_coverage = coverage_of(&fixed_model);

    let learned = mean_min_fde(&run.model, cfg, &run.test);
    let fixed = mean_min_fde(&fixed_model, cfg, &run.test);
    let cv = run
        .test
        .iter()
        .map(|s| fde(&constant_velocity(&s.scene, cfg.t_f), s.scene.future().unwrap()))
        .sum::<f64>()
        / run.test.len() as f64;

    let elapsed = run.train_time + t.elapsed();
    let (fast, time) = within(elapsed, Duration::from_secs(15 * 60));
    let (a, b, c) = (coverage >= 0.95, learned < cv, learned <= fixed);
    outcome(
        a && b && c && fast,
        format!(
            "(a) coverage {:.1}% within {radius:.3} (slack {slack:.3}; fixed cosine {:.1}%) [{}]; (b) minFDE_20 {learned:.4} vs constant velocity {cv:.4} [{}]; (c) learned {learned:.4} vs fixed cosine {fixed:.4} [{}]; {time}",
            100.0 * coverage,
            100.0 * fixed_coverage,
            if a { "ok" } else { "below 95%" },
            if b { "ok" } else { "not below" },
            if c { "ok" } else { "learned worse" },
        ),
    )
}

fn threshold_trend(run: &SyntheticRun) -> Outcome {
    let cfg = &run.pipeline.cfg;
    let fnets = run.pipeline.load_features().unwrap();
    let train = load_split(cfg, "train").unwrap();
    let train: Vec<Scene> = train.iter().map(|s| memtraj_core::datasets::normalize_scene(s).0).collect();
    let initial = bank_init(&fnets, &train).unwrap();
    let order = visit_order(initial.len(), 5);
    let mut counts = Vec::new();
    let mut fdes = Vec::new();
    for theta in [0.0, 0.05, 0.1, 0.5, 1.0] {
        let kept = filter_in_order(&initial, &order, theta, theta).unwrap();
        let bank = MemoryBankPair {
            entries: kept.iter().map(|&i| initial.entries[i].clone()).collect(),
            meta: initial.meta,
        };
        counts.push(bank.len());
        let model = TrajectoryModel::new(
            fnets.clone(),
            bank,
            run.model.addresser.clone(),
            run.model.fulfill.clone(),
        )
        .unwrap();
        fdes.push(mean_min_fde(&model, cfg, &run.test));
    }
    let monotone = counts.windows(2).all(|w| w[1] <= w[0]);
    let best = fdes.iter().copied().fold(f64::INFINITY, f64::min);
    let last = *fdes.last().unwrap();
    let degraded = last >= 1.1 * best;
    outcome(
        monotone && degraded,
        format!(
            "kept {counts:?} [{}]; minFDE_20 {} ; at theta=1.0 {:+.1}% vs best (>= +10%) [{}]",
            if monotone { "non-increasing" } else { "NOT monotone" },
            fdes.iter().map(|f| format!("{f:.4}")).collect::<Vec<_>>().join("/"),
            100.0 * (last / best - 1.0),
            if degraded { "ok" } else { "too small" },
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. determinism

fn small_config(dir: &Path, manifest: &Path) -> Config {
    let mut cfg = Config::default();
    cfg.manifest = Some(manifest.to_path_buf());
    cfg.out_dir = dir.to_path_buf();
    cfg.seed = 21;
    cfg.d_past = 16;
    cfg.d_int = 8;
    cfg.d_addr = 8;
    cfg.embed = 8;
    cfg.hidden = 16;
    cfg.epochs_features = 3;
    cfg.epochs_addresser = 2;
    cfg.epochs_fulfillment = 3;
    cfg.theta_past = 0.1;
    cfg.theta_int = 0.1;
    cfg.l = 20;
    cfg.k = 5;
    cfg
}

fn determinism() -> Outcome {
    let data = tempfile::tempdir().unwrap();
    let spec = Config::default().synth_spec();
    let train = synth_generate_labeled(201, 120, &spec).unwrap();
    let test = synth_generate_labeled(202, 20, &spec).unwrap();
    let manifest = write_splits(data.path(), &[("train", &train), ("test", &test)]);
    let runs: Vec<tempfile::TempDir> = (0..2).map(|_| tempfile::tempdir().unwrap()).collect();
    for r in &runs {
        let p = Pipeline::new(small_config(r.path(), &manifest)).unwrap();
        p.run_all().unwrap();
        p.predict(None, true, false).unwrap();
        p.eval("test", false).unwrap();
    }
    let mut files = Vec::new();
    let mut stack = vec![runs[0].path().to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "run_manifest.json" {
                files.push(p.strip_prefix(runs[0].path()).unwrap().to_path_buf());
            }
        }
    }
    files.sort();
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(runs[0].path().join(f)).ok() != std::fs::read(runs[1].path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let kinds = ["mtnn", "mtbk", "predictions.csv", "metrics_test.csv"];
    let all_kinds = kinds
        .iter()
        .all(|k| files.iter().any(|f| f.to_string_lossy().ends_with(k)));
    outcome(
        differing.is_empty() && all_kinds,
        if differing.is_empty() {
            format!("{} files byte-identical across two runs (nets, bank, predictions, metrics)", files.len())
        } else {
            format!("differing files: {differing:?}")
        },
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |n: u32, name: &'static str, o: Outcome| {
        println!("{} criterion {n} ({name}): {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((n, name, o));
    };
    report(1, "gradient suite", gradient_suite());
    report(2, "filtering properties", filtering_properties());
    report(3, "addresser oracle", addresser_oracle());
    report(4, "k-means oracle", kmeans_oracle());
    report(6, "metric hand cases", metric_cases());
    report(7, "determinism", determinism());
    let run = synthetic_run();
    report(5, "end-to-end synthetic", end_to_end(&run));
    report(8, "threshold trend", threshold_trend(&run));
    let failed = results.iter().filter(|r| !r.2.pass).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    // FAIL lines are always printed; the exit status only reflects them
    // when strict mode is requested.
    let strict = std::env::var("MEMTRAJ_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
