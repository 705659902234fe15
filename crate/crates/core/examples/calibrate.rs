//! Temporary calibration harness (not part of the deliverable).
use std::time::Instant;

use stegcap::corpus::{
    featurize_corpus, gen_corpus, split, CorpusSpec, Featurizer, Similarity,
};
use stegcap::models::{evaluate, export_weights, train_lr, Hyperparameters, ModelKind};
use stegcap::sweeper::{capacity_from_sweep, run_sweep};
use stegcap::weightstore::Selector;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let alpha: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let blend: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(0.15);
    let lr_rate: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(500.0);
    let lr_epochs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(300);
    let min_sz: u64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(4096);
    let max_sz: u64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(12288);

    let mut spec = CorpusSpec::default_with_seed(42);
    spec.size_range = (min_sz, max_sz);
    for f in &mut spec.families {
        f.dirichlet_concentration = alpha;
        if f.name == "vbinject" {
            f.similar_to = Some(Similarity {
                base: "vb".into(),
                blend,
            });
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    gen_corpus(&spec, dir.path()).unwrap();
    eprintln!("gen_corpus: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let ds = featurize_corpus(dir.path(), Featurizer::Histogram).unwrap();
    eprintln!("featurize: {:?} ({} samples)", t0.elapsed(), ds.len());

    let (train_ds, test_ds) = split(&ds, 0.2, 42, true).unwrap();

    let mut hp = Hyperparameters::lr_defaults(42);
    hp.learning_rate = lr_rate;
    hp.epochs = lr_epochs;
    let t0 = Instant::now();
    let model = train_lr(&train_ds, &hp).unwrap();
    let train_time = t0.elapsed();
    let baseline = evaluate(&model, &test_ds).unwrap();
    eprintln!(
        "alpha={alpha} blend={blend} lr={lr_rate} epochs={lr_epochs}: LR baseline {:.4} (train {:?})",
        baseline.accuracy, train_time
    );

    // Full LR sweep with timing.
    let store = export_weights(&model);
    let t0 = Instant::now();
    let n_range: Vec<u8> = (0..=32).collect();
    let result = run_sweep(
        &store,
        &Selector::All,
        ModelKind::Lr,
        &test_ds,
        &[],
        42,
        &n_range,
    )
    .unwrap();
    eprintln!("LR full sweep: {:?}", t0.elapsed());
    for row in &result.rows {
        if [0, 8, 16, 18, 20, 21, 22, 23, 24, 26, 28, 32].contains(&row.n) {
            eprintln!("  n={:2} acc={:.4}", row.n, row.accuracy);
        }
    }
    let cap = capacity_from_sweep(&result, 0.01);
    eprintln!("LR n_star = {:?}", cap.n_star());

    if std::env::var("FULL").is_ok() {
        use stegcap::models::{train_mlp, train_svm_linear};
        let mut hp = Hyperparameters::svm_defaults(42);
        hp.learning_rate = 0.05;
        hp.epochs = 400;
        let t0 = Instant::now();
        match train_svm_linear(&train_ds, &hp) {
            Ok(m) => {
                let acc = evaluate(&m, &test_ds).unwrap().accuracy;
                eprintln!("SVM baseline {:.4} (train {:?})", acc, t0.elapsed());
                let st = export_weights(&m);
                let res = run_sweep(&st, &Selector::All, ModelKind::SvmLinear, &test_ds, &[], 42, &[0, 8, 32]).unwrap();
                eprintln!("SVM n8={:.4} n32={:.4}", res.accuracy_at(8).unwrap(), res.accuracy_at(32).unwrap());
            }
            Err(e) => eprintln!("SVM failed: {e}"),
        }

        let mut hp = Hyperparameters::mlp_defaults(42);
        hp.learning_rate = 3e-3;
        hp.epochs = 300;
        let t0 = Instant::now();
        match train_mlp(&train_ds, &hp) {
            Ok(m) => {
                let train_time = t0.elapsed();
                let acc = evaluate(&m, &test_ds).unwrap().accuracy;
                eprintln!("MLP baseline {:.4} (train {:?})", acc, train_time);
                let st = export_weights(&m);
                let t0 = Instant::now();
                let res = run_sweep(&st, &Selector::All, ModelKind::Mlp, &test_ds, &[], 42, &n_range).unwrap();
                eprintln!("MLP full sweep: {:?}", t0.elapsed());
                for row in &res.rows {
                    if [0, 8, 16, 18, 19, 20, 21, 22, 24, 32].contains(&row.n) {
                        eprintln!("  n={:2} acc={:.4}", row.n, row.accuracy);
                    }
                }
                eprintln!("MLP n_star = {:?}", capacity_from_sweep(&res, 0.01).n_star());
            }
            Err(e) => eprintln!("MLP failed: {e}"),
        }
    }
}
