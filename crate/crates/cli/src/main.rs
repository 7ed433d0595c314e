//! `mmix`: analysis, mixing, training and diagnostics for unit-sphere
//! multi-modal embeddings stored as EMB1 files.
//!
//! Exit codes: 0 success, 2 file error, 3 shape mismatch, 4 antipodal rows,
//! 5 config error, 6 domain precondition violated.

mod emb;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use emb::{read_emb, write_emb, write_mat_section, EmbError};
use mmix_core::losses::MixLossConfig;
use mmix_core::metrics::{
    ece, metric_report, recall_at_k, retrieval_confidences, simat_transform, Direction,
    PairedEmbeddings,
};
use mmix_core::sphere::{batch_geodesic_mix, batch_linear_mix, pairwise_similarity, MixRatio};
use mmix_core::synth::{synth_bipartite, SynthConfig};
use mmix_core::trainer::{train, TrainConfig, TrainRecord};
use mmix_core::vmf::theorem1_check;
use mmix_core::Error as CoreError;

const EXIT_FILE: u8 = 2;
const EXIT_SHAPE: u8 = 3;
const EXIT_ANTIPODAL: u8 = 4;
const EXIT_CONFIG: u8 = 5;
const EXIT_DOMAIN: u8 = 6;

struct CliError {
    code: u8,
    msg: String,
}

impl CliError {
    fn new(code: u8, msg: impl Into<String>) -> Self {
        CliError { code, msg: msg.into() }
    }
}

impl From<EmbError> for CliError {
    fn from(e: EmbError) -> Self {
        CliError::new(EXIT_FILE, e.to_string())
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let code = match e {
            CoreError::DimensionMismatch { .. } | CoreError::ShapeMismatch { .. } => EXIT_SHAPE,
            CoreError::AntipodalInputs { .. } => EXIT_ANTIPODAL,
            CoreError::OutOfRange { .. } => EXIT_CONFIG,
            CoreError::ZeroVector
            | CoreError::BatchTooSmall { .. }
            | CoreError::KTooLarge { .. }
            | CoreError::UndefinedDirection => EXIT_DOMAIN,
        };
        CliError::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(EXIT_FILE, e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

#[derive(Parser)]
#[command(name = "mmix", version, about = "Unit-sphere multi-modal embedding toolkit")]
struct Cli {
    /// Emit a single JSON document on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Emit CSV on stdout.
    #[arg(long, global = true, conflicts_with = "json")]
    csv: bool,
    /// Upper bound on worker threads for metric evaluation (results are
    /// identical for any value). Defaults to MMIX_THREADS or 1.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirArg {
    ImageToText,
    TextToImage,
}

impl From<DirArg> for Direction {
    fn from(d: DirArg) -> Direction {
        match d {
            DirArg::ImageToText => Direction::ImageToText,
            DirArg::TextToImage => Direction::TextToImage,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Alignment, uniformity and modality-gap report for a paired set.
    Analyze {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: PathBuf,
    },
    /// Row-wise mixup of paired embeddings (geodesic by default).
    Mix {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long)]
        lambda: f64,
        /// Linear interpolation re-normalized to the sphere.
        #[arg(long)]
        linear: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-tune projection heads over frozen embeddings.
    Train {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: PathBuf,
        /// JSON config; omitted fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the mixed-negative hardness inequality for circular vMF pairs.
    Theorem {
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        mu1: f64,
        #[arg(long)]
        mu2: f64,
        #[arg(long, default_value_t = 100_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Cross-modal recall@k in both directions.
    Retrieve {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
    /// Retrieval confidence calibration (ECE and reliability bins).
    Calibrate {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        tau: f64,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        #[arg(long, value_enum, default_value = "image-to-text")]
        direction: DirArg,
    },
    /// Text-driven embedding arithmetic with nearest-gallery retrieval.
    Arith {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        text_source: PathBuf,
        #[arg(long)]
        text_target: PathBuf,
        /// Gallery to retrieve from; defaults to the image file.
        #[arg(long)]
        gallery: Option<PathBuf>,
        #[arg(long, default_value_t = 1.0)]
        strength: f64,
        /// Optional output file for the transformed (re-normalized) rows.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic bipartite paired-embedding set.
    Synth {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        gap_angle: f64,
        #[arg(long)]
        kappa: f64,
        #[arg(long)]
        coupling: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_image: PathBuf,
        #[arg(long)]
        out_text: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("MMIX_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if threads == Some(0) {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(EXIT_CONFIG);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.msg);
            ExitCode::from(e.code)
        }
    }
}

fn load_paired(image: &Path, text: &Path) -> CliResult<PairedEmbeddings> {
    let i = read_emb(image)?;
    let t = read_emb(text)?;
    Ok(PairedEmbeddings::new(i, t)?)
}

fn run(cli: &Cli) -> CliResult<()> {
    match &cli.cmd {
        Cmd::Analyze { image, text } => cmd_analyze(cli, image, text),
        Cmd::Mix { image, text, lambda, linear, out } => {
            cmd_mix(cli, image, text, *lambda, *linear, out)
        }
        Cmd::Train { image, text, config, out } => cmd_train(cli, image, text, config.as_deref(), out),
        Cmd::Theorem { kappa, mu1, mu2, n, seed } => cmd_theorem(*kappa, *mu1, *mu2, *n, *seed),
        Cmd::Retrieve { image, text, k } => cmd_retrieve(cli, image, text, *k),
        Cmd::Calibrate { image, text, tau, bins, direction } => {
            cmd_calibrate(cli, image, text, *tau, *bins, (*direction).into())
        }
        Cmd::Arith { image, text_source, text_target, gallery, strength, out } => cmd_arith(
            cli,
            image,
            text_source,
            text_target,
            gallery.as_deref(),
            *strength,
            out.as_deref(),
        ),
        Cmd::Synth { m, d, gap_angle, kappa, coupling, seed, out_image, out_text } => cmd_synth(
            cli,
            &SynthConfig {
                m: *m,
                d: *d,
                gap_angle: *gap_angle,
                kappa_modality: *kappa,
                pair_coupling: *coupling,
                seed: *seed,
            },
            out_image,
            out_text,
        ),
    }
}

fn cmd_analyze(cli: &Cli, image: &Path, text: &Path) -> CliResult<()> {
    let p = load_paired(image, text)?;
    let r = metric_report(&p)?;
    if cli.json {
        println!("{}", serde_json::to_string_pretty(&r).unwrap());
    } else if cli.csv {
        println!("alignment,uniformity,modality_gap_norm,n_pairs,n_uniformity_pairs");
        println!(
            "{},{},{},{},{}",
            r.alignment, r.uniformity, r.modality_gap_norm, r.n_pairs, r.n_uniformity_pairs
        );
    } else {
        println!("alignment          {}", r.alignment);
        println!("uniformity         {}", r.uniformity);
        println!("modality_gap_norm  {}", r.modality_gap_norm);
        println!("pairs              {}", r.n_pairs);
    }
    Ok(())
}

fn cmd_mix(
    cli: &Cli,
    image: &Path,
    text: &Path,
    lambda: f64,
    linear: bool,
    out: &Path,
) -> CliResult<()> {
    let p = load_paired(image, text)?;
    let lam = MixRatio::new(lambda)?;
    let mixed = if linear {
        batch_linear_mix(lam, &p.image, &p.text)?
    } else {
        batch_geodesic_mix(lam, &p.image, &p.text)?
    };
    write_emb(out, &mixed)?;
    if cli.json {
        println!(
            "{}",
            json!({
                "rows": mixed.len(),
                "dim": mixed.dim(),
                "lambda": lambda,
                "kind": if linear { "linear" } else { "geodesic" },
                "out": out.display().to_string(),
            })
        );
    }
    Ok(())
}

/// On-disk training config: every field optional, unknown fields rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFileConfig {
    epochs: Option<usize>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    weight_decay: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
    seed: Option<u64>,
    loss: Option<LossFileConfig>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct LossFileConfig {
    w_m2: Option<f64>,
    w_v: Option<f64>,
    w_l: Option<f64>,
    w_vl: Option<f64>,
    alpha_m2: Option<f64>,
    alpha_uni: Option<f64>,
    tau1: Option<f64>,
    tau2: Option<f64>,
    epoch_decay: Option<bool>,
}

fn resolve_train_config(file: TrainFileConfig) -> TrainConfig {
    let mut cfg = TrainConfig::default();
    let mut loss = MixLossConfig::default();
    if let Some(l) = file.loss {
        if let Some(v) = l.w_m2 { loss.w_m2 = v }
        if let Some(v) = l.w_v { loss.w_v = v }
        if let Some(v) = l.w_l { loss.w_l = v }
        if let Some(v) = l.w_vl { loss.w_vl = v }
        if let Some(v) = l.alpha_m2 { loss.alpha_m2 = v }
        if let Some(v) = l.alpha_uni { loss.alpha_uni = v }
        if let Some(v) = l.tau1 { loss.tau1 = v }
        if let Some(v) = l.tau2 { loss.tau2 = v }
        if let Some(v) = l.epoch_decay { loss.epoch_decay = v }
    }
    if let Some(v) = file.epochs { cfg.epochs = v }
    if let Some(v) = file.batch_size { cfg.batch_size = v }
    if let Some(v) = file.learning_rate { cfg.learning_rate = v }
    if let Some(v) = file.weight_decay { cfg.weight_decay = v }
    if let Some(v) = file.beta1 { cfg.beta1 = v }
    if let Some(v) = file.beta2 { cfg.beta2 = v }
    if let Some(v) = file.eps { cfg.eps = v }
    if let Some(v) = file.seed { cfg.seed = v }
    cfg.loss = loss;
    cfg
}

const HISTORY_COLUMNS: &[&str] = &[
    "epoch",
    "total_loss",
    "clip_loss",
    "m2_mix_loss",
    "v_mix_loss",
    "l_mix_loss",
    "vl_mix_loss",
    "relative_alignment",
    "uniformity",
    "modality_gap_norm",
    "recall1_image_to_text",
    "recall1_text_to_image",
    "hard_neg_mixed_image",
    "hard_neg_mixed_text",
    "hard_neg_orig_image",
    "hard_neg_orig_text",
    "tau1",
    "tau2",
];

fn history_csv(history: &[TrainRecord]) -> String {
    let mut s = String::new();
    s.push_str(&HISTORY_COLUMNS.join(","));
    s.push('\n');
    for r in history {
        let comp = |k: &str| r.components.get(k).copied().unwrap_or(0.0);
        let row = [
            r.epoch.to_string(),
            r.total_loss.to_string(),
            comp("clip").to_string(),
            comp("m2_mix").to_string(),
            comp("v_mix").to_string(),
            comp("l_mix").to_string(),
            comp("vl_mix").to_string(),
            r.relative_alignment.to_string(),
            r.uniformity.to_string(),
            r.modality_gap_norm.to_string(),
            r.recall1_image_to_text.to_string(),
            r.recall1_text_to_image.to_string(),
            r.hard_neg_mixed_image.to_string(),
            r.hard_neg_mixed_text.to_string(),
            r.hard_neg_orig_image.to_string(),
            r.hard_neg_orig_text.to_string(),
            r.tau1.to_string(),
            r.tau2.to_string(),
        ];
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn cmd_train(
    cli: &Cli,
    image: &Path,
    text: &Path,
    config: Option<&Path>,
    out: &Path,
) -> CliResult<()> {
    let p = load_paired(image, text)?;
    let file_cfg: TrainFileConfig = match config {
        Some(path) => {
            let raw = fs::read_to_string(path)
                .map_err(|e| CliError::new(EXIT_FILE, format!("{}: {e}", path.display())))?;
            serde_json::from_str(&raw).map_err(|e| {
                CliError::new(EXIT_CONFIG, format!("{}: {e}", path.display()))
            })?
        }
        None => TrainFileConfig::default(),
    };
    let cfg = resolve_train_config(file_cfg);
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let (model, history) = train(&p, &cfg)?;

    fs::write(out.join("history.csv"), history_csv(&history))?;
    let mut jsonl = String::new();
    for r in &history {
        jsonl.push_str(&serde_json::to_string(r).unwrap());
        jsonl.push('\n');
    }
    fs::write(out.join("history.jsonl"), jsonl)?;
    fs::write(
        out.join("resolved_config.json"),
        serde_json::to_string_pretty(&cfg).unwrap(),
    )?;

    // Model file: u32 header length, JSON scalar header, two matrix sections.
    let header = serde_json::to_vec(&json!({
        "log_tau1": model.log_tau1,
        "log_tau2": model.log_tau2,
        "tau1": model.tau1(),
        "tau2": model.tau2(),
        "d_in": model.w_img.rows(),
        "d_out": model.w_img.cols(),
        "matrices": ["w_img", "w_txt"],
    }))
    .unwrap();
    let mut bin = Vec::new();
    bin.extend_from_slice(&(header.len() as u32).to_le_bytes());
    bin.extend_from_slice(&header);
    write_mat_section(&mut bin, &model.w_img)?;
    write_mat_section(&mut bin, &model.w_txt)?;
    fs::write(out.join("model.bin"), bin)?;

    if cli.json {
        let last = history.last();
        println!(
            "{}",
            json!({
                "out": out.display().to_string(),
                "epochs": history.len(),
                "final_total_loss": last.map(|r| r.total_loss),
                "final_uniformity": last.map(|r| r.uniformity),
                "final_relative_alignment": last.map(|r| r.relative_alignment),
            })
        );
    } else {
        eprintln!("wrote {} epochs to {}", history.len(), out.display());
    }
    Ok(())
}

fn cmd_theorem(kappa: f64, mu1: f64, mu2: f64, n: usize, seed: u64) -> CliResult<()> {
    let tau = std::f64::consts::TAU;
    let delta = (mu1 - mu2).rem_euclid(tau);
    if delta.abs() < 1e-12 || (delta - tau).abs() < 1e-12 {
        return Err(CliError::new(
            EXIT_DOMAIN,
            "mu1 and mu2 must differ: the mixed distribution degenerates",
        ));
    }
    if n < 1000 {
        return Err(CliError::new(EXIT_DOMAIN, "n must be at least 1000"));
    }
    let c = theorem1_check(kappa, mu1, mu2, n, seed)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "kappa": c.kappa,
            "delta_mu": c.delta_mu,
            "kl_mixed": c.kl_mixed,
            "kl_cross": c.kl_cross,
            "mc_estimate": c.mc_estimate,
            "mc_std_error": c.mc_std_error,
            "holds": c.holds,
        }))
        .unwrap()
    );
    Ok(())
}

fn cmd_retrieve(cli: &Cli, image: &Path, text: &Path, k: usize) -> CliResult<()> {
    let p = load_paired(image, text)?;
    let s = pairwise_similarity(&p.image, &p.text)?;
    let i2t = recall_at_k(&s, k, Direction::ImageToText)?;
    let t2i = recall_at_k(&s, k, Direction::TextToImage)?;
    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "k": k,
                "n_queries": i2t.n_queries,
                "recall_image_to_text": i2t.recall,
                "recall_text_to_image": t2i.recall,
            }))
            .unwrap()
        );
    } else if cli.csv {
        println!("direction,k,recall,n_queries");
        println!("image_to_text,{},{},{}", k, i2t.recall, i2t.n_queries);
        println!("text_to_image,{},{},{}", k, t2i.recall, t2i.n_queries);
    } else {
        println!("recall@{k} image->text  {}", i2t.recall);
        println!("recall@{k} text->image  {}", t2i.recall);
    }
    Ok(())
}

fn cmd_calibrate(
    cli: &Cli,
    image: &Path,
    text: &Path,
    tau: f64,
    bins: usize,
    direction: Direction,
) -> CliResult<()> {
    let p = load_paired(image, text)?;
    let s = pairwise_similarity(&p.image, &p.text)?;
    let (conf, correct) = retrieval_confidences(&s, tau, direction)?;
    let report = ece(&conf, &correct, bins)?;
    if cli.csv {
        println!("bin_lo,bin_hi,count,mean_conf,mean_acc");
        for b in &report.bins {
            println!(
                "{},{},{},{},{}",
                b.bin_lo, b.bin_hi, b.count, b.mean_conf, b.mean_acc
            );
        }
    } else if cli.json {
        println!("{}", serde_json::to_string_pretty(&report).unwrap());
    } else {
        println!("ece        {}", report.ece);
        println!("queries    {}", report.n_queries);
        for b in &report.bins {
            println!(
                "bin ({:.2}, {:.2}]  count {:5}  conf {:.4}  acc {:.4}",
                b.bin_lo, b.bin_hi, b.count, b.mean_conf, b.mean_acc
            );
        }
    }
    Ok(())
}

fn cmd_arith(
    cli: &Cli,
    image: &Path,
    text_source: &Path,
    text_target: &Path,
    gallery: Option<&Path>,
    strength: f64,
    out: Option<&Path>,
) -> CliResult<()> {
    let img = read_emb(image)?;
    let t_src = read_emb(text_source)?;
    let t_tgt = read_emb(text_target)?;
    if img.len() != t_src.len() || img.len() != t_tgt.len() {
        return Err(CliError::new(
            EXIT_SHAPE,
            format!(
                "row-count mismatch: image {}, text-source {}, text-target {}",
                img.len(),
                t_src.len(),
                t_tgt.len()
            ),
        ));
    }
    let gal = match gallery {
        Some(g) => read_emb(g)?,
        None => img.clone(),
    };
    let mut tops = Vec::with_capacity(img.len());
    let mut rows = Vec::with_capacity(img.len());
    for i in 0..img.len() {
        let (x, top) = simat_transform(
            &img.row_unit(i),
            &t_src.row_unit(i),
            &t_tgt.row_unit(i),
            strength,
            &gal,
        )?;
        tops.push(top);
        rows.push(mmix_core::sphere::l2_normalize(&x)?);
    }
    if let Some(path) = out {
        let batch = mmix_core::sphere::EmbeddingBatch::from_rows(rows)?;
        write_emb(path, &batch)?;
    }
    if cli.csv {
        println!("row,top_index");
        for (i, t) in tops.iter().enumerate() {
            println!("{i},{t}");
        }
    } else {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "strength": strength,
                "n": tops.len(),
                "top_indices": tops,
            }))
            .unwrap()
        );
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, cfg: &SynthConfig, out_image: &Path, out_text: &Path) -> CliResult<()> {
    let p = synth_bipartite(cfg)?;
    write_emb(out_image, &p.image)?;
    write_emb(out_text, &p.text)?;
    if cli.json {
        println!(
            "{}",
            serde_json::to_string_pretty(&json!({
                "m": cfg.m,
                "d": cfg.d,
                "gap_angle": cfg.gap_angle,
                "kappa_modality": cfg.kappa_modality,
                "pair_coupling": cfg.pair_coupling,
                "seed": cfg.seed,
                "out_image": out_image.display().to_string(),
                "out_text": out_text.display().to_string(),
            }))
            .unwrap()
        );
    }
    Ok(())
}
