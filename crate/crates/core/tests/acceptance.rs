//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines print in order and are
//! never captured. Exits non-zero when a hard criterion fails. Criterion 8
//! is reported but does not fail the run.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rand::Rng;

use scate_core::cart::TreeParams;
use scate_core::data::gen_friedman1;
use scate_core::distill::scate_loss;
use scate_core::ensemble::{fit_gbm, fit_rf, predict_gbm, predict_rf, Forest, ForestParams, GbmParams};
use scate_core::experiment::{self, BaseModel, Method, NaiveTarget, RunConfig};
use scate_core::mlp::{arch_dims, gradient_check, init_mlp};
use scate_core::model_io;
use scate_core::operator::{gbm_smoother_matrix, gbm_smoother_row, rf_kernel_matrix};
use scate_core::rng::rng_from_seed;
use scate_core::spectral::{self, decay_fit, eckart_young_error, eig_sym, svd_trunc, Decomposition};

// Tolerances, as pinned by the acceptance criteria.
const RF_EQUIV_TOL: f64 = 1e-10;
const GBM_EQUIV_TOL: f64 = 1e-8;
const SYMMETRY_TOL: f64 = 1e-12;
const STOCHASTIC_TOL: f64 = 1e-10;
const PSD_TOL: f64 = 1e-8;
const BRUTE_FORCE_TOL: f64 = 1e-14;
const RAYLEIGH_REL_TOL: f64 = 1e-6;
const ECKART_YOUNG_TOL: f64 = 1e-8;
const SVD_REL_TOL: f64 = 1e-6;
const DECAY_OLS_TOL: f64 = 1e-9;
const BACKPROP_REL_TOL: f64 = 1e-4;
const LOSS_GRAD_REL_TOL: f64 = 1e-6;
const BASE_R2_RANGE: (f64, f64) = (0.78, 0.92);
const SCATE_MAX_DROP: f64 = 0.10;
const SCATE_MIN_R2: f64 = 0.70;
const BUDGET_10KB: usize = 10240;
const MIN_COMPRESSION: f64 = 100.0;

// Reported values from the friedman_1 row of the published table (10KB budget).
const REPORTED_BASE_RF_R2: f64 = 0.85;
const REPORTED_SCATE_R2: f64 = 0.82;

struct Outcome {
    id: &'static str,
    name: &'static str,
    pass: bool,
    hard: bool,
    detail: String,
}

fn report(o: &Outcome) {
    let status = if o.pass { "PASS" } else if o.hard { "FAIL" } else { "FAIL (reported only)" };
    println!("[{status}] criterion {}: {} -- {}", o.id, o.name, o.detail);
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    let t0 = Instant::now();
    let mut rng = rng_from_seed(2024);
    let mut worst_rf: f64 = 0.0;
    for cfg in 0..20u64 {
        let n = rng.random_range(50..=1000);
        let d = rng.random_range(5..=10);
        let b = rng.random_range(5..=250);
        let honest = cfg % 4 == 3;
        let tree = TreeParams {
            max_depth: if cfg % 5 == 0 { None } else { Some(rng.random_range(3..=15)) },
            min_samples_leaf: rng.random_range(1..=5),
            mtry: if cfg % 2 == 0 { None } else { Some(rng.random_range(1..=d)) },
            honest,
            bootstrap: !honest && cfg % 3 != 1,
            subsample_fraction: if cfg % 3 == 2 { 0.7 } else { 1.0 },
            ..Default::default()
        };
        let ds = gen_friedman1(n, d, 1.0, 100 + cfg).unwrap();
        let forest = fit_rf(&ds, &ForestParams { n_trees: b, tree, seed: cfg }).unwrap();
        let k = rf_kernel_matrix(&forest, &ds.features).unwrap();
        let ky = k.values.dot(&ds.target);
        for (i, row) in ds.features.rows().into_iter().enumerate() {
            let p = predict_rf(&forest, &row.to_vec()).unwrap();
            worst_rf = worst_rf.max((ky[i] - p).abs());
        }
    }
    let rf_secs = t0.elapsed().as_secs_f64();

    let mut worst_gbm: f64 = 0.0;
    for (cfg, &eta) in [0.1, 1.0, 0.1, 1.0].iter().enumerate() {
        let cfg = cfg as u64;
        let n = 150 + 100 * cfg as usize;
        let b = [100, 100, 40, 15][cfg as usize];
        let ds = gen_friedman1(n, 6, 1.0, 500 + cfg).unwrap();
        let model = fit_gbm(
            &ds,
            &GbmParams {
                n_trees: b,
                learning_rate: eta,
                tree: TreeParams { max_depth: Some(2 + cfg as usize), bootstrap: false, ..Default::default() },
                seed: cfg,
            },
        )
        .unwrap();
        let state = gbm_smoother_matrix(&model, &ds.features).unwrap();
        let fresh = gen_friedman1(50, 6, 0.0, 900 + cfg).unwrap();
        let train_rows = (0..50).map(|i| ds.features.row(i * n / 50).to_vec());
        let probes: Vec<Vec<f64>> = train_rows.chain(fresh.features.rows().into_iter().map(|r| r.to_vec())).collect();
        assert_eq!(probes.len(), 100);
        for x in &probes {
            let w = gbm_smoother_row(&state, &model, x).unwrap();
            worst_gbm = worst_gbm.max((w.dot(&ds.target) - predict_gbm(&model, x).unwrap()).abs());
        }
    }
    Outcome {
        id: "1",
        name: "operator equivalence (RF K.y, GBM smoother rows)",
        pass: worst_rf <= RF_EQUIV_TOL && worst_gbm <= GBM_EQUIV_TOL && rf_secs < 120.0,
        hard: true,
        detail: format!(
            "RF max err {worst_rf:.2e} (tol {RF_EQUIV_TOL:e}) over 20 configs in {rf_secs:.1}s; GBM max err {worst_gbm:.2e} (tol {GBM_EQUIV_TOL:e}) over 4x100 probes"
        ),
    }
}

// Direct definition: K_ij = (1/B) sum_b 1[leaf_b(i) == leaf_b(j)] / |leaf_b(j) ∩ normalization rows|.
fn brute_force_kernel(forest: &Forest, x: &Array2<f64>) -> Array2<f64> {
    let n = x.nrows();
    let mut k = Array2::zeros((n, n));
    let rows: Vec<Vec<f64>> = x.rows().into_iter().map(|r| r.to_vec()).collect();
    for (b, tree) in forest.trees.iter().enumerate() {
        let leaves: Vec<usize> = rows.iter().map(|r| tree.leaf_of(r)).collect();
        let norm: Vec<usize> = forest.normalization_rows(b).map_or((0..n).collect(), |s| s.to_vec());
        for i in 0..n {
            for &j in &norm {
                if leaves[i] == leaves[j] {
                    let count = norm.iter().filter(|&&m| leaves[m] == leaves[j]).count();
                    k[[i, j]] += 1.0 / count as f64;
                }
            }
        }
    }
    k / forest.trees.len() as f64
}

fn criterion_2() -> Outcome {
    let (mut asym, mut sums, mut min_eig, mut max_eig, mut bf): (f64, f64, f64, f64, f64) =
        (0.0, 0.0, f64::INFINITY, f64::NEG_INFINITY, 0.0);
    let mut count = 0;
    for (i, &n) in [8usize, 25, 50, 100, 150, 200].iter().enumerate() {
        for variant in 0..3u64 {
            let ds = gen_friedman1(n, 5 + variant as usize, 1.0, 40 + i as u64 * 3 + variant).unwrap();
            let tree = TreeParams {
                max_depth: [Some(4), None, Some(8)][variant as usize],
                bootstrap: variant == 0,
                ..Default::default()
            };
            let forest = fit_rf(&ds, &ForestParams { n_trees: 10 + 20 * variant as usize, tree, seed: variant }).unwrap();
            let k = rf_kernel_matrix(&forest, &ds.features).unwrap();
            let d = k.diagnostics();
            asym = asym.max(d.max_asymmetry);
            sums = sums.max(d.max_row_sum_error).max(d.max_col_sum_error);
            let e = eig_sym(&k.values, None).unwrap();
            min_eig = min_eig.min(*e.eigenvalues.iter().last().unwrap());
            max_eig = max_eig.max(e.eigenvalues[0]);
            bf = bf.max(max_abs_diff(&k.values, &brute_force_kernel(&forest, &ds.features)));
            count += 1;
        }
    }
    Outcome {
        id: "2",
        name: "kernel structure",
        pass: asym <= SYMMETRY_TOL
            && sums <= STOCHASTIC_TOL
            && min_eig >= -PSD_TOL
            && max_eig <= 1.0 + PSD_TOL
            && bf <= BRUTE_FORCE_TOL,
        hard: true,
        detail: format!(
            "{count} instances N<=200: asym {asym:.1e}, sum err {sums:.1e}, min eig {min_eig:.2e}, lambda1 {max_eig:.12}, brute-force diff {bf:.1e}"
        ),
    }
}

fn random_matrix(m: usize, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_fn((m, n), |_| rng.random_range(-1.0..1.0))
}

fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn criterion_3() -> Outcome {
    // Rayleigh residuals on an RF kernel, dense and randomized paths.
    let ds = gen_friedman1(300, 10, 1.0, 3).unwrap();
    let forest = fit_rf(&ds, &ForestParams { n_trees: 50, seed: 1, ..Default::default() }).unwrap();
    let k = rf_kernel_matrix(&forest, &ds.features).unwrap().values;
    let full = eig_sym(&k, None).unwrap();
    let lambda1 = full.eigenvalues[0];
    let dense_res = spectral::max_rayleigh_residual(&k, &full) / lambda1;
    let opts = spectral::EigOptions { dense_max_n: 10, seed: 5, ..Default::default() };
    let part = spectral::eig_sym_with(&k, Some(20), &opts).unwrap();
    let rand_res = spectral::max_rayleigh_residual(&k, &part) / lambda1;

    // Eckart-Young identity against an explicit rank-P reconstruction.
    let mut ey: f64 = 0.0;
    let decomp = Decomposition::Eigen(full.clone());
    for p in [1usize, 10, 50, 150] {
        let v = full.eigenvectors.slice(ndarray::s![.., ..p]);
        let lam = full.eigenvalues.slice(ndarray::s![..p]);
        let kp = (&v * &lam).dot(&v.t());
        let direct = (&k - &kp).iter().map(|x| x * x).sum::<f64>().sqrt();
        ey = ey.max((direct - eckart_young_error(&decomp, p).unwrap()).abs());
    }

    // Randomized SVD vs a dense reference.
    let mut svd_rel: f64 = 0.0;
    for seed in 0..3u64 {
        let mut a = random_matrix(100, 100, 70 + seed);
        // impose decay so the top values are well separated
        for (j, mut col) in a.axis_iter_mut(Axis(1)).enumerate() {
            col *= (j as f64 + 1.0).powf(-1.0);
        }
        let na = nalgebra::DMatrix::from_fn(100, 100, |i, j| a[[i, j]]);
        let mut reference: Vec<f64> = na.singular_values().iter().copied().collect();
        reference.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let t = svd_trunc(&a, 20, 10, 4, seed).unwrap();
        for (j, s) in t.sigma.iter().enumerate() {
            svd_rel = svd_rel.max((s - reference[j]).abs() / reference[j]);
        }
    }

    // Decay fit: planted power laws and OLS agreement on noisy spectra.
    let mut planted: f64 = 0.0;
    for beta in [0.5, 1.0, 2.0, 3.5] {
        let vals: Vec<f64> = (1..=100).map(|i| 4.0 * (i as f64).powf(-beta)).collect();
        planted = planted.max((decay_fit(&vals, 100).unwrap().beta - beta).abs());
    }
    let mut ols: f64 = 0.0;
    let mut rng = rng_from_seed(11);
    for _ in 0..5 {
        let mut vals: Vec<f64> = (1..=80).map(|i| (i as f64).powf(-1.3) * rng.random_range(0.5..1.5)).collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let xs: Vec<f64> = (1..=80).map(|i| (i as f64).ln()).collect();
        let ys: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
        ols = ols.max((decay_fit(&vals, 80).unwrap().beta + ols_slope(&xs, &ys)).abs());
    }
    Outcome {
        id: "3",
        name: "spectral suite",
        pass: dense_res <= RAYLEIGH_REL_TOL
            && rand_res <= RAYLEIGH_REL_TOL
            && ey <= ECKART_YOUNG_TOL
            && svd_rel <= SVD_REL_TOL
            && planted <= 1e-12
            && ols <= DECAY_OLS_TOL,
        hard: true,
        detail: format!(
            "Rayleigh/lambda1 dense {dense_res:.1e} randomized {rand_res:.1e}; Eckart-Young {ey:.1e}; rSVD rel {svd_rel:.1e}; planted beta err {planted:.1e}; OLS diff {ols:.1e}"
        ),
    }
}

fn criterion_4() -> Outcome {
    let widths = [4usize, 8, 16, 32, 64, 128];
    let depths = [1usize, 2, 3, 4, 5];
    let (d, p, batch) = (10, 50, 8);
    let mut worst: f64 = 0.0;
    let mut worst_arch = (0, 0);
    for (wi, &w) in widths.iter().enumerate() {
        for (di, &dep) in depths.iter().enumerate() {
            let seed = (wi * 10 + di) as u64;
            let m = init_mlp(&arch_dims(d, w, dep, p), seed).unwrap();
            let x = random_matrix(batch, d, 1000 + seed);
            let t = random_matrix(batch, p, 2000 + seed);
            let e = gradient_check(&m, &x.view(), &t.view(), 1e-3, 1e-6).unwrap();
            if e > worst {
                worst = e;
                worst_arch = (w, dep);
            }
        }
    }

    // scate_loss gradient vs central differences.
    let (n, pp) = (12, 5);
    let preds = random_matrix(n, pp, 31);
    let targets = random_matrix(n, pp, 32);
    let weights = [1.0, 0.8, 0.5, 0.2, 0.05];
    let gamma = 0.3;
    let (_, grad) = scate_loss(&preds.view(), &targets.view(), &weights, gamma).unwrap();
    let h = 1e-6;
    let mut loss_err: f64 = 0.0;
    for i in 0..n {
        for j in 0..pp {
            let mut up = preds.clone();
            up[[i, j]] += h;
            let mut dn = preds.clone();
            dn[[i, j]] -= h;
            let lu = scate_loss(&up.view(), &targets.view(), &weights, gamma).unwrap().0.total;
            let ld = scate_loss(&dn.view(), &targets.view(), &weights, gamma).unwrap().0.total;
            let numeric = (lu - ld) / (2.0 * h);
            let a = grad[[i, j]];
            loss_err = loss_err.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8));
        }
    }
    Outcome {
        id: "4",
        name: "gradient suite",
        pass: worst <= BACKPROP_REL_TOL && loss_err <= LOSS_GRAD_REL_TOL,
        hard: true,
        detail: format!(
            "backprop max rel err {worst:.2e} over 30 archs (worst w{}_d{}); scate_loss grad rel err {loss_err:.2e}",
            worst_arch.0, worst_arch.1
        ),
    }
}

fn friedman_config() -> RunConfig {
    RunConfig {
        seeds: (0..5).collect(),
        budgets: vec![BUDGET_10KB],
        methods: vec![Method::Base, Method::Oracle, Method::Scate, Method::NaiveMlp],
        naive_target: NaiveTarget::PerTree,
        prune_over_budget: true,
        ..RunConfig::default()
    }
}

struct Friedman {
    base_r2: f64,
    scate_r2: Option<f64>,
    scate_cell: Option<String>,
    scate_size: Option<f64>,
    naive_r2: Option<f64>,
    secs: f64,
}

fn run_friedman(cfg: &RunConfig) -> Friedman {
    let t0 = Instant::now();
    let out = experiment::run_sweep(cfg).expect("sweep runs");
    for f in &out.failures {
        println!("  sweep cell failed: {} {} seed {}: {}", f.method.name(), f.cell, f.seed, f.error);
    }
    let base: Vec<f64> = out.records.iter().filter(|r| r.method == Method::Base).map(|r| r.metric).collect();
    let row = |m: Method| out.best.iter().find(|b| b.method == m && b.budget == BUDGET_10KB).cloned();
    let scate = row(Method::Scate);
    let naive = row(Method::NaiveMlp);
    let mut per_cell: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in out.records.iter().filter(|r| r.method == Method::Scate) {
        per_cell.entry(r.cell.clone()).or_default().push(r.metric);
    }
    for (cell, v) in &per_cell {
        println!("  scate {cell}: mean test r2 {:.4}", v.iter().sum::<f64>() / v.len() as f64);
    }
    Friedman {
        base_r2: base.iter().sum::<f64>() / base.len() as f64,
        scate_r2: scate.as_ref().and_then(|r| r.mean_metric),
        scate_cell: scate.as_ref().and_then(|r| r.cell.clone()),
        scate_size: scate.as_ref().and_then(|r| r.size_bytes),
        naive_r2: naive.as_ref().and_then(|r| r.mean_metric),
        secs: t0.elapsed().as_secs_f64(),
    }
}

fn criterion_5(f: &Friedman) -> Outcome {
    let scate = f.scate_r2.unwrap_or(f64::NEG_INFINITY);
    let pass = f.base_r2 >= BASE_R2_RANGE.0
        && f.base_r2 <= BASE_R2_RANGE.1
        && scate >= f.base_r2 - SCATE_MAX_DROP
        && scate >= SCATE_MIN_R2;
    Outcome {
        id: "5",
        name: "Friedman #1 at 10KB",
        pass,
        hard: true,
        detail: format!(
            "base RF r2 {:.4} (reported {REPORTED_BASE_RF_R2}), SCATE r2 {scate:.4} (reported {REPORTED_SCATE_R2}) with {} at {:.0} bytes; need base in [{}, {}], SCATE >= base-{SCATE_MAX_DROP} and >= {SCATE_MIN_R2}; {:.0}s",
            f.base_r2,
            f.scate_cell.as_deref().unwrap_or("NA"),
            f.scate_size.unwrap_or(f64::NAN),
            BASE_R2_RANGE.0,
            BASE_R2_RANGE.1,
            f.secs
        ),
    }
}

fn parse_arch(cell: &str) -> [usize; 2] {
    let (w, d) = cell.trim_start_matches('w').split_once("_d").unwrap();
    [w.parse().unwrap(), d.parse().unwrap()]
}

fn criterion_6_and_7(cfg: &RunConfig, f: &Friedman) -> (Outcome, Outcome) {
    let arch = f.scate_cell.as_deref().map_or([16, 2], parse_arch);
    let run_cfg = RunConfig { arch, ..cfg.clone() };
    let mut margins = Vec::new();
    let mut dominated = true;
    let mut forest_bytes = 0usize;
    let mut scate_bytes = 0usize;
    for &seed in &cfg.seeds {
        let o = experiment::run_pipeline_seed(&run_cfg, seed).expect("pipeline runs");
        let fe = &o.run.frobenius_errors;
        dominated &= fe.oracle <= fe.scate;
        margins.push(fe.scate - fe.oracle);
        if seed == cfg.seeds[0] {
            forest_bytes = o.run.sizes.base_bytes;
            scate_bytes = o.run.sizes.distilled_bytes;
            let prep = experiment::prepare(&run_cfg, seed).unwrap();
            if let BaseModel::Rf(forest) = &prep.base {
                let bytes = model_io::serialize_forest(&model_io::MinimalForest::from_forest(forest));
                assert_eq!(bytes.len(), forest_bytes);
            }
        }
    }
    let six = Outcome {
        id: "6",
        name: "oracle dominance",
        pass: dominated,
        hard: true,
        detail: format!(
            "SCATE minus oracle Frobenius error per seed: [{}]",
            margins.iter().map(|m| format!("{m:.4}")).collect::<Vec<_>>().join(", ")
        ),
    };

    // Layout arithmetic: header 19, dims 4*(L+1), scaling 8*d, params 4*n, coefficients 4*P, CRC 4.
    let dims = [10usize, 16, 16, 50];
    let params = (10 * 16 + 16) + (16 * 16 + 16) + (16 * 50 + 50);
    let expected = 19 + 4 * dims.len() + 8 * 10 + 4 * params + 4 * 50 + 4;
    let size = model_io::scte_size(&dims);
    let compression = forest_bytes as f64 / scate_bytes as f64;
    let seven = Outcome {
        id: "7",
        name: "size accounting",
        pass: size == expected && size < BUDGET_10KB && forest_bytes >= 1_000_000 && compression >= MIN_COMPRESSION,
        hard: true,
        detail: format!(
            "[10,16,16,50] = {size} bytes (independent count {expected}); RF 250x15 minimal = {forest_bytes} bytes; compression vs {scate_bytes}-byte SCATE = {compression:.0}x"
        ),
    };
    (six, seven)
}

fn criterion_8(f: &Friedman) -> Outcome {
    let scate = f.scate_r2.unwrap_or(f64::NEG_INFINITY);
    let naive = f.naive_r2.unwrap_or(f64::NEG_INFINITY);
    Outcome {
        id: "8",
        name: "SCATE vs naive MLP at 10KB",
        pass: scate >= naive,
        hard: false,
        detail: format!("SCATE r2 {scate:.4}, naive per-tree MLP r2 {naive:.4}"),
    }
}

fn criterion_9(cfg: &RunConfig) -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &std::path::Path| {
        let c = RunConfig { seeds: vec![7], output_dir: dir.to_path_buf(), ..cfg.clone() };
        experiment::cmd_pipeline(&c).expect("pipeline runs");
    };
    run(a.path());
    run(b.path());
    let mut names: Vec<String> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != experiment::TIMING_FILE && n != experiment::CONFIG_ECHO_FILE)
        .collect();
    names.sort();
    let differing: Vec<&String> = names
        .iter()
        .filter(|n| std::fs::read(a.path().join(n)).ok() != std::fs::read(b.path().join(n)).ok())
        .collect();
    Outcome {
        id: "9",
        name: "pipeline determinism",
        pass: differing.is_empty() && names.len() >= 4,
        hard: true,
        detail: format!("compared {} files [{}], differing: {differing:?}", names.len(), names.join(", ")),
    }
}

fn main() {
    // `cargo test --test acceptance -- 3 4` runs a subset; flags from the test runner are ignored.
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let run = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w == id);
    let mut results = Vec::new();
    let mut push = |o: Outcome| {
        report(&o);
        results.push(o);
    };
    if run("1") {
        push(criterion_1());
    }
    if run("2") {
        push(criterion_2());
    }
    if run("3") {
        push(criterion_3());
    }
    if run("4") {
        push(criterion_4());
    }
    let cfg = friedman_config();
    if ["5", "6", "7", "8"].iter().any(|id| run(id)) {
        let friedman = run_friedman(&cfg);
        if run("5") {
            push(criterion_5(&friedman));
        }
        if run("6") || run("7") {
            let (six, seven) = criterion_6_and_7(&cfg, &friedman);
            if run("6") {
                push(six);
            }
            if run("7") {
                push(seven);
            }
        }
        if run("8") {
            push(criterion_8(&friedman));
        }
    }
    if run("9") {
        push(criterion_9(&cfg));
    }

    let hard_failures: Vec<&str> = results.iter().filter(|o| o.hard && !o.pass).map(|o| o.id).collect();
    let passed = results.iter().filter(|o| o.pass).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if !hard_failures.is_empty() {
        println!("hard failures: {}", hard_failures.join(", "));
        std::process::exit(1);
    }
}
