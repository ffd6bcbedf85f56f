use std::path::PathBuf;

use rayon::prelude::*;

use bwlab::gradcheck::{self, GradcheckConfig};
use bwlab::harness::{
    estimate::{estimate_cell, grid},
    estimate_csv, load_mnist, mnist_paths, synth_gaussian, train_mlp, CovarianceRecipe, Dataset, EstimateConfig,
    EstimateRow, MlpConfig, TrainOptions,
};
use bwlab::layer::write_sequence;
use bwlab::stochasticity::{
    diversity_summary_csv, scatter_probe, snd, snd_csv, snd_sweep, GaussianSampler, ScatterConfig, SndConfig, SndReport, SweepAxis,
};
use bwlab::transforms::{EstimationObject, RecoveryKind, TransformKind, WhiteningSpec};

use crate::output::{resolve_seed, usage, CliResult, Failure, Run};
use crate::svg::{Chart, Series};
use crate::{
    Command, Common, DataArgs, DiversityArgs, EstimateArgs, GradcheckArgs, ModelArgs, ScatterArgs, SndArgs, TrainArgs,
    WhiteningArgs,
};

pub fn run(command: &Command) -> CliResult<()> {
    match command {
        Command::Snd(a) => cmd_snd(a),
        Command::Scatter(a) => cmd_scatter(a),
        Command::Train(a) => cmd_train(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Diversity(a) => cmd_diversity(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

/// Maps `f` over independent cells on `jobs` workers, keeping input order.
fn parallel<T, R, F>(jobs: usize, items: Vec<T>, f: F) -> CliResult<Vec<R>>
where
    T: Send,
    R: Send,
    F: Fn(T) -> CliResult<R> + Sync + Send,
{
    if jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    if jobs == 1 {
        return items.into_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Failure::Failed(e.to_string()))?;
    pool.install(|| items.into_par_iter().map(f).collect())
}

fn start(common: &Common, name: &str) -> CliResult<(u64, Run)> {
    let seed = resolve_seed(common.seed)?;
    if common.jobs == 0 {
        return Err(usage("--jobs must be at least 1"));
    }
    let run = Run::start(&common.out, name, seed)?;
    Ok((seed, run))
}

fn spec_for(kind: TransformKind, w: &WhiteningArgs) -> WhiteningSpec {
    WhiteningSpec {
        group_size: w.group,
        ..WhiteningSpec::new(kind)
    }
    .with_epsilon(w.eps)
    .with_itn_iterations(w.itn_t)
}

/// The data distribution is fixed; the run seed only drives sampling.
fn sampler(covariance: &str, dim: usize) -> CliResult<GaussianSampler> {
    match covariance {
        "mixed" => Ok(GaussianSampler::mixed(dim, 0)),
        "identity" => Ok(GaussianSampler::isotropic(dim)),
        other => Err(usage(format!("unknown covariance '{other}' (expected mixed or identity)"))),
    }
}

fn cmd_snd(a: &SndArgs) -> CliResult<()> {
    match (a.sweep, a.values.is_empty()) {
        (Some(_), true) => return Err(usage("--sweep needs --values")),
        (None, false) => return Err(usage("--values needs --sweep")),
        (Some(SweepAxis::Group), _) if a.whitening.group.is_some() => {
            return Err(usage("--group conflicts with --sweep group"))
        }
        _ => {}
    }
    if a.transforms.is_empty() {
        return Err(usage("no transform given"));
    }
    sampler(&a.covariance, 1)?;
    let (seed, run) = start(&a.common, "snd")?;
    let config = SndConfig {
        batch: a.batch,
        num_batches: a.num_batches,
        num_points: a.points,
        seed,
        probe_in_batch: a.probe_in_batch,
    };
    let rows: Vec<(usize, SndReport)> = match a.sweep {
        None => {
            let s = sampler(&a.covariance, a.dim)?;
            parallel(a.common.jobs, a.transforms.clone(), |kind| {
                Ok((a.batch, snd(&s, &spec_for(kind, &a.whitening), &config)?))
            })?
        }
        Some(axis) => {
            let cells: Vec<(usize, TransformKind)> = a
                .values
                .iter()
                .flat_map(|&v| a.transforms.iter().map(move |&k| (v, k)))
                .collect();
            let base = spec_for(TransformKind::Zca, &a.whitening);
            parallel(a.common.jobs, cells, |(value, kind)| {
                let mut points = snd_sweep(axis, &[value], &[kind], &base, a.dim, &config, |d| {
                    sampler(&a.covariance, d).expect("covariance name checked above")
                })?;
                let p = points.pop().expect("one cell");
                Ok((p.axis_value, p.report))
            })?
        }
    };
    for (_, r) in &rows {
        for w in &r.warnings {
            eprintln!("warning ({} g={}): {w}", r.kind, r.group);
        }
    }
    let sweep_name = a.sweep.map(SweepAxis::name).unwrap_or("none");
    run.write("snd.csv", &snd_csv(sweep_name, &rows))?;
    let series = a
        .transforms
        .iter()
        .map(|&k| Series {
            name: k.to_string(),
            points: rows
                .iter()
                .filter(|(_, r)| r.kind == k)
                .map(|(v, r)| (*v as f64, r.snd))
                .collect(),
        })
        .collect();
    let chart = Chart {
        title: "Stochastic normalization disturbance".into(),
        x_label: if a.sweep.is_some() { sweep_name.into() } else { "batch".into() },
        y_label: "SND".into(),
        log2_x: true,
        series,
    };
    run.write("snd.svg", &chart.line_svg())?;
    for (v, r) in &rows {
        println!("{sweep_name}={v} {}: snd {:.6} (se {:.2e})", r.kind, r.snd, r.standard_error());
    }
    run.finish()
}

fn cmd_scatter(a: &ScatterArgs) -> CliResult<()> {
    let axes = match a.axes.as_slice() {
        &[x, y] if x >= 1 && y >= 1 && x <= a.dim && y <= a.dim => (x - 1, y - 1),
        _ => {
            return Err(usage(format!(
                "--axes needs two 1-based coordinates within 1..={}, got {:?}",
                a.dim, a.axes
            )))
        }
    };
    let s = sampler(&a.covariance, a.dim)?;
    let (seed, run) = start(&a.common, "scatter")?;
    let config = ScatterConfig {
        batch: a.batch,
        trials: a.trials,
        axes,
        population: a.population,
        seed,
    };
    let results = parallel(a.common.jobs, a.transforms.clone(), |kind| {
        Ok((kind, scatter_probe(&s, &spec_for(kind, &a.whitening), &config)?))
    })?;
    let mut rows = Vec::new();
    for (kind, r) in &results {
        for (t, (x, y)) in r.normalized.iter().enumerate() {
            rows.push(vec![kind.to_string(), t.to_string(), x.to_string(), y.to_string()]);
        }
    }
    run.write_csv("scatter.csv", &["transform", "trial", "x", "y"], rows)?;
    if let Some((_, first)) = results.first() {
        run.write_csv(
            "population.csv",
            &["x", "y"],
            first.population.iter().map(|(x, y)| vec![*x, *y]),
        )?;
    }
    run.write_csv(
        "scatter_summary.csv",
        &["transform", "std_x", "std_y"],
        results.iter().map(|(k, r)| {
            let (sx, sy) = r.normalized_std();
            vec![k.to_string(), sx.to_string(), sy.to_string()]
        }),
    )?;
    for (kind, r) in &results {
        let chart = Chart {
            title: format!("{kind}: probe under {} batches of {}", a.trials, a.batch),
            x_label: format!("x{}", axes.0 + 1),
            y_label: format!("x{}", axes.1 + 1),
            log2_x: false,
            series: vec![
                Series {
                    name: "population".into(),
                    points: r.population.clone(),
                },
                Series {
                    name: "normalized probe".into(),
                    points: r.normalized.clone(),
                },
            ],
        };
        run.write(&format!("scatter_{kind}.svg"), &chart.scatter_svg())?;
        let (sx, sy) = r.normalized_std();
        println!("{kind}: std ({sx:.4}, {sy:.4})");
    }
    run.finish()
}

fn mnist_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("BWLAB_MNIST_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn load_data(a: &DataArgs, seed: u64) -> CliResult<(Dataset, Dataset)> {
    let (train, test) = match a.dataset.as_str() {
        "mnist" => {
            let dir = mnist_dir(&a.mnist_dir);
            let missing: Vec<String> = mnist_paths(&dir)
                .iter()
                .filter(|p| !p.exists())
                .map(|p| p.display().to_string())
                .collect();
            if !missing.is_empty() {
                return Err(Failure::MissingData(format!(
                    "MNIST files not found: {}. Download the four IDX files (train-images-idx3-ubyte, \
                     train-labels-idx1-ubyte, t10k-images-idx3-ubyte, t10k-labels-idx1-ubyte), decompress them \
                     into one directory and pass --mnist-dir or set BWLAB_MNIST_DIR",
                    missing.join(", ")
                )));
            }
            load_mnist(&dir)?
        }
        "gaussian" => {
            let all = synth_gaussian(
                a.gaussian_dim,
                a.gaussian_n + a.gaussian_test_n,
                &CovarianceRecipe::Mixed { seed: 0 },
                seed,
            )?;
            all.split_at(a.gaussian_n)
        }
        other => return Err(usage(format!("unknown dataset '{other}' (expected mnist or gaussian)"))),
    };
    let train = match a.train_limit {
        Some(n) => train.truncated(n),
        None => train,
    };
    Ok((train, test))
}

fn parse_norm(name: &str) -> CliResult<Option<TransformKind>> {
    if name == "none" {
        return Ok(None);
    }
    name.parse().map(Some).map_err(|e: bwlab::Error| usage(e.to_string()))
}

fn model_config(m: &ModelArgs, default_norm: &str, data: &Dataset) -> CliResult<MlpConfig> {
    let estimation = match m.estimation.as_str() {
        "sigma" => EstimationObject::Covariance,
        "w" => EstimationObject::Whitening,
        other => return Err(usage(format!("unknown estimation object '{other}' (expected sigma or w)"))),
    };
    let recovery = match m.recovery.as_str() {
        "scale-shift" => RecoveryKind::ScaleShift,
        "coloring" => RecoveryKind::Coloring,
        other => return Err(usage(format!("unknown recovery '{other}' (expected scale-shift or coloring)"))),
    };
    let norm = parse_norm(m.norm.as_deref().unwrap_or(default_norm))?.map(|kind| {
        spec_for(kind, &m.whitening)
            .with_estimation(estimation)
            .with_recovery(recovery)
            .with_momentum(m.momentum)
    });
    let mut widths = vec![data.dim()];
    widths.extend(std::iter::repeat_n(m.width, m.depth));
    widths.push(data.classes());
    let cfg = MlpConfig {
        widths,
        norm,
        lr: m.lr,
        batch: m.batch,
        epochs: m.epochs,
        clamp_eigengap: m.clamp_eigengap,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn curve_chart(title: String, log: &bwlab::harness::TrainLog) -> Chart {
    Chart {
        title,
        x_label: "epoch".into(),
        y_label: "training error".into(),
        log2_x: false,
        series: vec![Series {
            name: "train error".into(),
            points: log.records.iter().map(|r| (r.epoch as f64, r.train_error)).collect(),
        }],
    }
}

fn report_divergence(log: &bwlab::harness::TrainLog) {
    if let Some((epoch, reason)) = &log.diverged {
        println!("diverged in epoch {epoch}: {reason}");
    }
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let seed = resolve_seed(a.common.seed)?;
    let (train, test) = load_data(&a.data, seed)?;
    let cfg = model_config(&a.model, "bn", &train)?;
    let (seed, run) = start(&a.common, "train")?;
    let options = TrainOptions {
        eval_batch: Some(a.model.eval_batch),
        ..TrainOptions::default()
    };
    let mut out = train_mlp(&cfg, &train, Some(&test), seed, &options)?;
    run.write("train.csv", &out.log.to_csv())?;
    let norm = a.model.norm.as_deref().unwrap_or("bn");
    run.write("train.svg", &curve_chart(format!("MLP, {norm}, lr {}", cfg.lr), &out.log).line_svg())?;
    if cfg.norm.is_some() && !out.log.is_diverged() {
        out.model.finalize()?;
        let dir = run.path("checkpoints");
        std::fs::create_dir_all(&dir)?;
        for (l, bw) in out.model.norms.iter().enumerate() {
            if let Some(bw) = bw {
                let file = std::fs::File::create(dir.join(format!("layer{}.bwl", l + 1)))?;
                bw.write_to(std::io::BufWriter::new(file))?;
            }
        }
    }
    for r in &out.log.records {
        println!(
            "epoch {:>3}: train error {:.4}, loss {:.4}, test acc {}",
            r.epoch,
            r.train_error,
            r.train_loss,
            r.test_accuracy.map(|v| format!("{v:.4}")).unwrap_or_default()
        );
    }
    report_divergence(&out.log);
    run.finish()
}

fn cmd_estimate(a: &EstimateArgs) -> CliResult<()> {
    let seed = resolve_seed(a.common.seed)?;
    let cfg = EstimateConfig {
        widths: a.widths.clone(),
        batches: a.batches.clone(),
        lrs: a.lrs.clone(),
        seeds: a.seeds.clone(),
        spec: spec_for(TransformKind::Zca, &a.whitening),
        kinds: a.transforms.clone(),
        arms: (EstimationObject::Covariance, EstimationObject::Whitening),
        hidden_layers: a.depth,
        epochs: a.epochs,
        clamp_eigengap: a.clamp_eigengap,
        eval_batch: Some(a.eval_batch),
    };
    let cells = grid(&cfg)?;
    let (train, test) = load_data(&a.data, seed)?;
    let (_, run) = start(&a.common, "estimate")?;
    let rows: Vec<EstimateRow> = parallel(a.common.jobs, cells, |(w, b, lr, k, s)| {
        Ok(estimate_cell(&cfg, w, b, lr, k, s, &train, &test)?)
    })?;
    run.write("estimate.csv", &estimate_csv(&rows))?;
    let mut series = Vec::new();
    for &kind in &cfg.kinds {
        for &width in &cfg.widths {
            for &lr in &cfg.lrs {
                let points = cfg
                    .batches
                    .iter()
                    .filter_map(|&b| {
                        let d: Vec<f64> = rows
                            .iter()
                            .filter(|r| r.kind == kind && r.width == width && r.lr == lr && r.batch == b && !r.diverged)
                            .map(EstimateRow::difference)
                            .collect();
                        (!d.is_empty()).then(|| (b as f64, d.iter().sum::<f64>() / d.len() as f64))
                    })
                    .collect();
                series.push(Series {
                    name: format!("{kind} w{width} lr{lr}"),
                    points,
                });
            }
        }
    }
    let chart = Chart {
        title: "AC(Σ̂) − AC(Ŵ), mean over seeds".into(),
        x_label: "batch".into(),
        y_label: "accuracy difference".into(),
        log2_x: true,
        series,
    };
    run.write("estimate.svg", &chart.line_svg())?;
    for &kind in &cfg.kinds {
        let d = bwlab::harness::mean_difference(&rows, kind);
        let diverged = rows.iter().filter(|r| r.kind == kind && r.diverged).count();
        println!(
            "{kind}: mean difference {} ({diverged} diverged cells)",
            d.map(|v| format!("{v:.5}")).unwrap_or_else(|| "n/a".into())
        );
    }
    run.finish()
}

fn cmd_diversity(a: &DiversityArgs) -> CliResult<()> {
    let seed = resolve_seed(a.common.seed)?;
    let (train, test) = load_data(&a.data, seed)?;
    let cfg = model_config(&a.model, "zca", &train)?;
    if cfg.norm.is_none() {
        return Err(usage("diversity needs a whitening layer; --norm none is not allowed"));
    }
    if a.layer == 0 || a.layer > a.model.depth {
        return Err(usage(format!("--layer must lie in 1..={}", a.model.depth)));
    }
    let (seed, run) = start(&a.common, "diversity")?;
    let options = TrainOptions {
        record_layer: Some(a.layer - 1),
        keep_every: a.keep_every,
        eval_batch: Some(a.model.eval_batch),
        ..TrainOptions::default()
    };
    let out = train_mlp(&cfg, &train, Some(&test), seed, &options)?;
    run.write("train.csv", &out.log.to_csv())?;
    report_divergence(&out.log);
    let stats = out.stats.expect("recording was requested");
    if stats.sigma.len() < 2 {
        return Err(Failure::Failed(format!(
            "only {} statistics recorded before the run stopped; nothing to summarize",
            stats.sigma.len()
        )));
    }
    let reports = [("sigma", stats.sigma.finish()?), ("w", stats.w.finish()?)];
    let mut rows = Vec::new();
    for (name, r) in &reports {
        for (measure, h) in [("delta", &r.histogram), ("delta_normalized", &r.histogram_normalized)] {
            for (bin, ((lo, hi), count)) in h.bin_edges().into_iter().zip(&h.counts).enumerate() {
                rows.push(vec![
                    name.to_string(),
                    measure.to_string(),
                    bin.to_string(),
                    lo.to_string(),
                    hi.to_string(),
                    count.to_string(),
                ]);
            }
        }
    }
    run.write_csv("diversity.csv", &["object", "measure", "bin", "lo", "hi", "count"], rows)?;
    let summary: Vec<(&str, &bwlab::stochasticity::DiversityReport)> = reports.iter().map(|(n, r)| (*n, r)).collect();
    run.write("diversity_summary.csv", &diversity_summary_csv(&summary))?;
    let chart = Chart {
        title: format!("normalized element-wise std, hidden layer {}", a.layer),
        x_label: "δ̃".into(),
        y_label: "count".into(),
        log2_x: false,
        series: reports
            .iter()
            .map(|(name, r)| Series {
                name: name.to_string(),
                points: r
                    .histogram_normalized
                    .bin_edges()
                    .into_iter()
                    .zip(&r.histogram_normalized.counts)
                    .map(|((lo, hi), &c)| ((lo + hi) / 2.0, c as f64))
                    .collect(),
            })
            .collect(),
    };
    run.write("diversity.svg", &chart.line_svg())?;
    if a.keep_every > 0 {
        let dir = run.path("sequences");
        std::fs::create_dir_all(&dir)?;
        for (name, seq) in [("sigma", &stats.sigma_kept), ("w", &stats.w_kept)] {
            let file = std::fs::File::create(dir.join(format!("{name}.bws")))?;
            write_sequence(std::io::BufWriter::new(file), seq)?;
        }
    }
    for (name, r) in &reports {
        println!(
            "{name}: {} steps, mean δ {:.6e}, mean δ̃ {:.6e}",
            r.length,
            r.mean_delta(),
            r.mean_delta_normalized()
        );
    }
    run.finish()
}

fn cmd_gradcheck(a: &GradcheckArgs) -> CliResult<()> {
    if a.transforms.is_empty() || a.dims.is_empty() || a.cases == 0 {
        return Err(usage("gradcheck needs at least one transform, dimension and case"));
    }
    let (seed, run) = start(&a.common, "gradcheck")?;
    let config = GradcheckConfig {
        kinds: a.transforms.clone(),
        dims: a.dims.clone(),
        cases: a.cases,
        seed,
        layer: !a.no_layer,
        fault: a.inject_fault,
        ..GradcheckConfig::default()
    };
    let report = gradcheck::run(&config)?;
    let text = report.to_text();
    run.write("gradcheck.txt", &text)?;
    print!("{text}");
    run.finish()?;
    if report.passed() {
        Ok(())
    } else {
        Err(Failure::Failed("gradient check failed".into()))
    }
}
