use std::fs;
use std::path::Path;
use std::time::Instant;

use dft_core::graph::{sbm_generate, Graph, GraphOperators, SbmSpec};
use dft_core::io::{
    fmt_float, load_dataset, save_dataset, write_embeddings, write_json, write_loss_history,
    write_predictions, write_table, FeatureEncoding,
};
use dft_core::metrics::{
    correlation_operator, expected_correlation, glorot_correlation_curve, icdr,
    monte_carlo_correlation, CorrelationOperator, MetricsReport, ProbeReport,
};
use dft_core::model::{load_checkpoint, save_checkpoint, Model};
use dft_core::train::{EpochRecord, Trainer};
use dft_core::DftError;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::{CorrelationArgs, EvalArgs, Failure, GenArgs, ProbeArgs, TrainArgs};

type Outcome = Result<(), Failure>;

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::config(format!("{}: {e}", path.display())))
}

fn load(path: &Path) -> Result<Graph, Failure> {
    if !path.exists() {
        return Err(Failure::data(format!("dataset not found: {}", path.display())));
    }
    Ok(load_dataset(path)?)
}

fn parse_enum<T: serde::de::DeserializeOwned>(what: &str, s: &str) -> Result<T, Failure> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| Failure::config(format!("unknown {what} {s:?}")))
}

fn mkdir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::data(format!("{}: {e}", dir.display())))
}

fn labelled(g: &Graph, path: &Path) -> Result<(Vec<usize>, usize), Failure> {
    match (g.labels(), g.num_classes()) {
        (Some(l), Some(c)) => Ok((l.to_vec(), c)),
        _ => Err(Failure::data(format!("{} has no labels", path.display()))),
    }
}

fn run_config(args: &TrainArgs) -> Result<RunConfig, Failure> {
    let text = read_text(&args.config)?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let mut cfg = RunConfig::parse(&text, base)
        .map_err(|e| Failure::config(format!("{}: {e}", args.config.display())))?;
    let t = &mut cfg.train;
    t.seed = args.seed;
    macro_rules! set {
        ($($flag:ident => $field:expr),* $(,)?) => {
            $(if let Some(v) = args.$flag { $field = v; })*
        };
    }
    set!(
        epochs => t.epochs,
        lr => t.lr,
        n_critic => t.n_critic,
        lambda_critic => t.lambda_critic,
        lambda_gp => t.lambda_gp,
        lambda1 => t.decorr.lambda1,
        lambda2 => t.decorr.lambda2,
        gamma => t.decorr.gamma,
        decorr_layers => t.decorr.num_layers,
        dropout => t.dropout,
        hidden => t.hidden,
        transformer_layers => t.transformer_layers,
    );
    if let Some(v) = &args.variant {
        t.variant = parse_enum("variant", v)?;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    t.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct TargetReport {
    metrics: MetricsReport,
    /// ICDR of the raw input features, for comparison with `metrics.icdr`.
    raw_feature_icdr: f64,
}

#[derive(Serialize)]
struct TrainReport {
    variant: dft_core::model::Variant,
    seed: u64,
    epochs: usize,
    last_epoch: Option<EpochRecord>,
    source: MetricsReport,
    target: Option<TargetReport>,
    wall_seconds: f64,
}

fn score(model: &Model, g: &Graph, ops: &GraphOperators, labels: &[usize]) -> Result<(MetricsReport, dft_core::tensor::Tensor, dft_core::tensor::Tensor), Failure> {
    let (z, probs) = model.predict(g.features(), ops)?;
    let report = MetricsReport::compute(&z, &probs.argmax_rows(), labels, model.config().num_classes)?;
    Ok((report, z, probs))
}

pub fn train(args: &TrainArgs) -> Outcome {
    let cfg = run_config(args)?;
    let started = Instant::now();
    let source = load(&cfg.source)?;
    let (source_labels, _) = labelled(&source, &cfg.source)?;
    // Target labels are split off here and only looked at after training.
    let (target, target_labels) = load(&cfg.target)?.split_labels();
    let out = &cfg.output_dir;
    mkdir(out)?;

    let mut trainer = Trainer::new(&source, &target, &cfg.train)?;
    let mut history = Vec::with_capacity(cfg.train.epochs);
    for _ in 0..cfg.train.epochs {
        history.push(trainer.epoch()?);
    }
    write_loss_history(&out.join("loss_history.csv"), &history)?;
    save_checkpoint(&trainer.model, &out.join("checkpoint"))?;

    let model = &trainer.model;
    let (source_report, z_s, _) = score(model, &source, trainer.source_operators(), &source_labels)?;
    let (z_t, probs_t) = model.predict(target.features(), trainer.target_operators())?;
    let target_report = match target_labels.filter(|_| cfg.evaluate_target) {
        Some((labels, _)) => {
            let metrics = MetricsReport::compute(&z_t, &probs_t.argmax_rows(), &labels, model.config().num_classes)?;
            info!("target micro-F1 {:.4}, macro-F1 {:.4}", metrics.micro_f1, metrics.macro_f1);
            Some((
                TargetReport {
                    metrics,
                    raw_feature_icdr: icdr(target.features(), &labels)?,
                },
                labels,
            ))
        }
        None => None,
    };
    if cfg.exports.embeddings {
        write_embeddings(&out.join("embeddings_source.csv"), &z_s, Some(&source_labels))?;
        let labels = target_report.as_ref().map(|(_, l)| l.as_slice());
        write_embeddings(&out.join("embeddings_target.csv"), &z_t, labels)?;
    }
    if cfg.exports.predictions {
        write_predictions(&out.join("predictions_target.csv"), &probs_t)?;
    }
    let report = TrainReport {
        variant: cfg.train.variant,
        seed: cfg.train.seed,
        epochs: cfg.train.epochs,
        last_epoch: history.last().cloned(),
        source: source_report,
        target: target_report.map(|(r, _)| r),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    write_json(&out.join("report.json"), &report)?;
    match &report.target {
        Some(t) => println!(
            "target micro_f1 {:.4} macro_f1 {:.4} icdr {:.4} (raw features {:.4})",
            t.metrics.micro_f1, t.metrics.macro_f1, t.metrics.icdr, t.raw_feature_icdr
        ),
        None => println!("trained {} epochs; no target labels to score", cfg.train.epochs),
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    num_nodes: usize,
    metrics: Option<MetricsReport>,
}

pub fn eval(args: &EvalArgs) -> Outcome {
    let model = load_checkpoint(&args.checkpoint)?;
    let g = load(&args.dataset)?;
    let mc = model.config();
    if g.feature_dim() != mc.in_dim {
        return Err(Failure::data(format!(
            "dataset feature dimension {} does not match checkpoint input dimension {}",
            g.feature_dim(),
            mc.in_dim
        )));
    }
    if let Some(c) = g.num_classes().filter(|&c| c > mc.num_classes) {
        return Err(Failure::data(format!(
            "dataset has {c} classes but the checkpoint predicts {}",
            mc.num_classes
        )));
    }
    let ops = GraphOperators::new(&g, &mc.ppmi, mc.pe_dim, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    let (z, probs) = model.predict(g.features(), &ops)?;
    let metrics = match g.labels() {
        Some(labels) => Some(MetricsReport::compute(&z, &probs.argmax_rows(), labels, mc.num_classes)?),
        None => None,
    };
    if let Some(path) = &args.embeddings {
        write_embeddings(path, &z, g.labels())?;
    }
    if let Some(path) = &args.predictions {
        write_predictions(path, &probs)?;
    }
    let report = EvalReport {
        num_nodes: g.num_nodes(),
        metrics,
    };
    write_json(&args.out, &report)?;
    match &report.metrics {
        Some(m) => println!("micro_f1 {:.4} macro_f1 {:.4} icdr {:.4}", m.micro_f1, m.macro_f1, m.icdr),
        None => println!("scored {} unlabelled nodes", g.num_nodes()),
    }
    Ok(())
}

const CONNECTED_DRAWS: usize = 1000;

/// Erdős–Rényi `G(n, p)`, redrawn until connected.
fn connected_er(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<Graph, Failure> {
    let spec = SbmSpec {
        blocks: vec![n],
        p_in: p,
        p_out: p,
        feat_means: vec![vec![0.0]],
        feat_std: 0.0,
    };
    for _ in 0..CONNECTED_DRAWS {
        let g = sbm_generate(&spec, rng).map_err(|e| Failure::config(e.to_string()))?;
        if g.num_components() == 1 {
            return Ok(g);
        }
    }
    Err(Failure::config(format!(
        "no connected G({n}, {p}) in {CONNECTED_DRAWS} draws"
    )))
}

pub fn analyze_correlation(args: &CorrelationArgs) -> Outcome {
    let op: CorrelationOperator = parse_enum("operator", &args.operator)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let g = match &args.graph {
        Some(path) => load(path)?,
        None => connected_er(args.random_nodes, args.random_p, &mut rng)?,
    };
    let a = correlation_operator(&g, op);
    let curve = glorot_correlation_curve(&a, args.depth, args.dim, args.samples, &mut rng)
        .map_err(|e| Failure::config(e.to_string()))?;
    let mut rows = Vec::with_capacity(args.depth + 1);
    for point in &curve {
        let k = point.depth;
        let exact = expected_correlation(&a, k, args.dim)?;
        let (mean, se) = monte_carlo_correlation(&a, k, args.dim, args.samples, &mut rng)
            .map_err(|e| Failure::config(e.to_string()))?;
        rows.push(vec![
            k.to_string(),
            fmt_float(exact),
            fmt_float(mean),
            fmt_float(se),
            fmt_float(point.mean),
            fmt_float(point.stderr),
        ]);
    }
    let header: Vec<String> = [
        "depth",
        "closed_form",
        "identity_mean",
        "identity_stderr",
        "glorot_mean",
        "glorot_stderr",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    write_table(&args.out, &header, rows.into_iter())?;
    println!("wrote {} depths to {}", curve.len(), args.out.display());
    Ok(())
}

pub fn probe_covariate(args: &ProbeArgs) -> Outcome {
    let s = load(&args.source)?;
    let t = load(&args.target)?;
    let (ys, _) = labelled(&s, &args.source)?;
    let (yt, _) = labelled(&t, &args.target)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let report = ProbeReport::compute(s.features(), &ys, t.features(), &yt, args.k, &mut rng)
        .map_err(|e| match e {
            DftError::Metric(m) => Failure::config(m),
            e => e.into(),
        })?;
    write_json(&args.out, &report)?;
    println!(
        "agreement {:.4} shuffled {:.4} (k = {}, {} classes)",
        report.agreement, report.shuffled, report.k, report.num_classes
    );
    Ok(())
}

pub fn gen_sbm(args: &GenArgs) -> Outcome {
    let text = read_text(&args.spec)?;
    let spec: SbmSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("{}: {e}", args.spec.display())))?;
    let g = sbm_generate(&spec, &mut ChaCha8Rng::seed_from_u64(args.seed))?;
    let encoding = if args.sparse {
        FeatureEncoding::CsrF32
    } else {
        FeatureEncoding::DenseF32
    };
    save_dataset(&g, &args.out, &args.name, encoding)?;
    println!(
        "wrote {} nodes, {} edges to {}",
        g.num_nodes(),
        g.num_edges(),
        args.out.display()
    );
    Ok(())
}
