//! Experiment driver: reproducible pipelines from base training through
//! trajectory collection, distillation, decoding sweeps, and ablations.
//!
//! Every command reads one key=value config (defaults apply for missing
//! keys), derives all randomness from the root seed through named
//! sub-streams, echoes the resolved config into the output directory, and
//! persists its artifacts so later stages re-run from disk.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tadlab::config::{sub_seed, version_string, ExperimentConfig};
use tadlab::decoder::{
    decode_parallel, decode_tbt, sweep_parallelism, write_decode_log, DecodeLogEntry, DecodeMode,
};
use tadlab::distill::{calibrate_delta, tad_train, DistillConfig, DistillMode};
use tadlab::metrics::{
    aup_with_breakdown, factorization_gap, gap_via_entropy_identity, joint_kl_identity,
    DistributionTable,
};
use tadlab::model::{train_base, DenoiserParams};
use tadlab::tasks::{
    generate_corpus, training_items, vocabulary, MarkovSource, PromptAnswerPair, TaskOracle,
};
use tadlab::trajectory::{collect_trajectory, filter_trajectories, load_trajectories,
    save_trajectories, Trajectory};

const ALPHA: f64 = 3.0;

#[derive(Parser)]
#[command(name = "tadlab", version, about = "Masked-diffusion distillation laboratory")]
struct Cli {
    /// key=value config file; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the base denoiser on a mixed plain/privileged corpus.
    TrainBase,
    /// Roll out privileged one-token-per-step trajectories and keep the
    /// oracle-passing ones.
    Collect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Measure the confidence decay curve and report the quality/speed
    /// look-ahead windows.
    Calibrate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Distill the student against the frozen privileged teacher.
    Distill {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Decode an evaluation set and summarize accuracy and TPF.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sweep entropy thresholds into an accuracy-parallelism curve and AUP.
    Sweep {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train and evaluate the objective variants and small delta/lambda
    /// grids.
    Ablate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Factorization gap of a sticky Markov source across sequence lengths.
    Gap,
    /// Numerically check the joint-KL / summed-CE identity on random
    /// instances.
    ValidateTheorem,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    fs::create_dir_all(&cli.out)
        .with_context(|| format!("cannot create output directory {}", cli.out.display()))?;
    let echo = format!("# {}\n{}", version_string(), cfg.resolved_text());
    fs::write(cli.out.join("config.txt"), echo).context("writing config echo")?;

    match &cli.command {
        Command::TrainBase => cmd_train_base(&cfg, &cli.out),
        Command::Collect { checkpoint } => {
            cmd_collect(&cfg, &cli.out, &ckpt_path(checkpoint, &cli.out, "base.ckpt"))
        }
        Command::Calibrate { checkpoint, trajectories } => cmd_calibrate(
            &cfg,
            &cli.out,
            &ckpt_path(checkpoint, &cli.out, "base.ckpt"),
            &ckpt_path(trajectories, &cli.out, "trajectories.jsonl"),
        ),
        Command::Distill { checkpoint, trajectories } => cmd_distill(
            &cfg,
            &cli.out,
            &ckpt_path(checkpoint, &cli.out, "base.ckpt"),
            &ckpt_path(trajectories, &cli.out, "trajectories.jsonl"),
        ),
        Command::Eval { checkpoint } => {
            cmd_eval(&cfg, &cli.out, &ckpt_path(checkpoint, &cli.out, "distilled.ckpt"))
        }
        Command::Sweep { checkpoint } => {
            cmd_sweep(&cfg, &cli.out, &ckpt_path(checkpoint, &cli.out, "distilled.ckpt"))
        }
        Command::Ablate { checkpoint, trajectories } => cmd_ablate(
            &cfg,
            &cli.out,
            &ckpt_path(checkpoint, &cli.out, "base.ckpt"),
            &ckpt_path(trajectories, &cli.out, "trajectories.jsonl"),
        ),
        Command::Gap => cmd_gap(&cfg, &cli.out),
        Command::ValidateTheorem => cmd_validate(&cfg, &cli.out),
    }
}

fn ckpt_path(explicit: &Option<PathBuf>, out: &Path, default_name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(default_name))
}

fn stream_rng(cfg: &ExperimentConfig, stream: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, stream))
}

fn load_checkpoint(path: &Path) -> Result<DenoiserParams> {
    DenoiserParams::load(path)
        .with_context(|| format!("cannot load checkpoint {}", path.display()))
}

fn load_trajs(path: &Path) -> Result<Vec<Trajectory>> {
    load_trajectories(path)
        .with_context(|| format!("cannot load trajectory file {}", path.display()))
}

fn eval_pairs(cfg: &ExperimentConfig, stream: &str, n: usize) -> Vec<PromptAnswerPair> {
    let mut rng = stream_rng(cfg, stream);
    generate_corpus(&cfg.task_spec(), n, &mut rng)
}

fn cmd_train_base(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut corpus_rng = stream_rng(cfg, "corpus");
    let pairs = generate_corpus(&cfg.task_spec(), cfg.train_size, &mut corpus_rng);
    let items = training_items(&pairs, cfg.gen_len, true);
    let mut rng = stream_rng(cfg, "base-train");
    let (params, losses) =
        train_base(cfg.hyper_params(), vocabulary(), &cfg.base_train_config(), &items, &mut rng)?;
    let ckpt = out.join("base.ckpt");
    params.save(&ckpt)?;
    let mut csv = String::from("epoch,loss\n");
    for (i, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, l));
    }
    fs::write(out.join("train_loss.csv"), csv)?;
    println!("trained base model: {} epochs, final loss {:.4}", losses.len(),
        losses.last().copied().unwrap_or(f64::NAN));
    println!("checkpoint: {}", ckpt.display());
    Ok(())
}

fn cmd_collect(cfg: &ExperimentConfig, out: &Path, checkpoint: &Path) -> Result<()> {
    let teacher = load_checkpoint(checkpoint)?;
    let vocab = vocabulary();
    let pairs = eval_pairs(cfg, "collect", cfg.collect_count);
    let mut trajs = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        trajs.push(collect_trajectory(
            &teacher,
            &vocab,
            pair.task,
            &pair.prompt_ids,
            &pair.answer_ids,
            cfg.gen_len,
        )?);
    }
    let (kept, report) = filter_trajectories(trajs);
    if kept.is_empty() {
        bail!("all {} trajectories failed the oracle; base model too weak", report.dropped);
    }
    let path = out.join("trajectories.jsonl");
    save_trajectories(&kept, &path)?;
    fs::write(
        out.join("collect_report.txt"),
        format!("kept = {}\ndropped = {}\n", report.kept, report.dropped),
    )?;
    println!("collected {} trajectories ({} dropped): {}", report.kept, report.dropped,
        path.display());
    Ok(())
}

fn cmd_calibrate(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: &Path,
    trajectories: &Path,
) -> Result<()> {
    let student = load_checkpoint(checkpoint)?;
    let trajs = load_trajs(trajectories)?;
    let mut rng = stream_rng(cfg, "calibrate");
    let cal = calibrate_delta(&student, &trajs, cfg.calibrate_samples, &mut rng)?;
    let mut csv = String::from("d,confidence\n");
    for (i, c) in cal.curve.iter().enumerate() {
        csv.push_str(&format!("{},{}\n", i + 1, c));
    }
    fs::write(out.join("delta_curve.csv"), csv)?;
    fs::write(
        out.join("delta_report.txt"),
        format!("delta_quality = {}\ndelta_speed = {}\n", cal.delta_quality, cal.delta_speed),
    )?;
    println!("delta_quality = {}, delta_speed = {}", cal.delta_quality, cal.delta_speed);
    Ok(())
}

/// Resolve the effective look-ahead window: calibrated for the quality and
/// speed modes, taken from the config for custom.
fn resolve_delta(
    cfg: &ExperimentConfig,
    student: &DenoiserParams,
    trajs: &[Trajectory],
) -> Result<usize> {
    let distill = cfg.distill_config();
    match distill.mode {
        DistillMode::Custom => Ok(distill.delta),
        mode => {
            let mut rng = stream_rng(cfg, "calibrate");
            let cal = calibrate_delta(student, trajs, cfg.calibrate_samples, &mut rng)?;
            Ok(match mode {
                DistillMode::Quality => cal.delta_quality,
                DistillMode::Speed => cal.delta_speed,
                DistillMode::Custom => unreachable!(),
            })
        }
    }
}

fn write_loss_csv(rows: &[tadlab::distill::LossRow], path: &Path) -> Result<()> {
    let mut csv = String::from("step,near_loss,distant_loss,total\n");
    for r in rows {
        csv.push_str(&format!("{},{},{},{}\n", r.step, r.near, r.distant, r.total));
    }
    fs::write(path, csv)?;
    Ok(())
}

fn cmd_distill(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: &Path,
    trajectories: &Path,
) -> Result<()> {
    let teacher = load_checkpoint(checkpoint)?;
    let trajs = load_trajs(trajectories)?;
    let mut config = cfg.distill_config();
    config.delta = resolve_delta(cfg, &teacher, &trajs)?;
    let mut rng = stream_rng(cfg, "distill");
    let (student, rows) = tad_train(teacher.clone(), &teacher, &trajs, &config, &mut rng)?;
    let ckpt = out.join("distilled.ckpt");
    student.save(&ckpt)?;
    write_loss_csv(&rows, &out.join("distill_loss.csv"))?;
    println!("distilled with delta = {}, lambda = {}: {}", config.delta, config.lambda,
        ckpt.display());
    Ok(())
}

/// Accuracy (percent) and mean TPF of one decoding pass over an eval set,
/// with the per-instance decode log.
fn eval_model(
    cfg: &ExperimentConfig,
    params: &DenoiserParams,
    pairs: &[PromptAnswerPair],
) -> Result<(f64, f64, Vec<DecodeLogEntry>)> {
    let vocab = vocabulary();
    let decode = cfg.decode_config();
    let mut correct = 0usize;
    let mut tpf_sum = 0.0;
    let mut log = Vec::with_capacity(pairs.len());
    for pair in pairs {
        let result = match decode.mode {
            DecodeMode::Tbt => decode_tbt(params, &vocab, &pair.prompt_ids, cfg.gen_len)?,
            DecodeMode::Parallel => decode_parallel(params, &vocab, &pair.prompt_ids, &decode)?,
        };
        let pass = TaskOracle::new(pair.task).check(&pair.prompt_ids, &result.output);
        if pass {
            correct += 1;
        }
        tpf_sum += result.tpf();
        log.push(DecodeLogEntry::new(&pair.prompt_ids, &result, pass));
    }
    let accuracy = 100.0 * correct as f64 / pairs.len() as f64;
    Ok((accuracy, tpf_sum / pairs.len() as f64, log))
}

fn cmd_eval(cfg: &ExperimentConfig, out: &Path, checkpoint: &Path) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    let pairs = eval_pairs(cfg, "eval", cfg.eval_size);
    let (accuracy, tpf, log) = eval_model(cfg, &params, &pairs)?;
    write_decode_log(&log, &out.join("decode_log.jsonl"))?;
    fs::write(
        out.join("eval_summary.csv"),
        format!("accuracy,tpf\n{accuracy},{tpf}\n"),
    )?;
    println!("accuracy = {accuracy:.1}%, tpf = {tpf:.3} ({} instances)", pairs.len());
    Ok(())
}

fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, checkpoint: &Path) -> Result<()> {
    let params = load_checkpoint(checkpoint)?;
    let vocab = vocabulary();
    let pairs = eval_pairs(cfg, "eval", cfg.eval_size);
    let mut thresholds = cfg.sweep_thresholds.clone();
    thresholds.sort_by(|a, b| a.total_cmp(b));
    let (curve, rows) =
        sweep_parallelism(&params, &vocab, &pairs, &thresholds, &cfg.decode_config())?;
    let mut csv = String::from("threshold,accuracy,tpf\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.threshold, r.accuracy, r.tpf));
    }
    fs::write(out.join("sweep.csv"), csv)?;
    let mut curve_csv = String::from("tpf,accuracy\n");
    for &(rho, y) in &curve.points {
        curve_csv.push_str(&format!("{rho},{y}\n"));
    }
    fs::write(out.join("curve.csv"), curve_csv)?;
    let breakdown = aup_with_breakdown(&curve, ALPHA)?;
    let mut aup_csv = String::from("rho,contribution\n");
    for &(rho, c) in &breakdown.segments {
        aup_csv.push_str(&format!("{rho},{c}\n"));
    }
    aup_csv.push_str(&format!("total,{}\n", breakdown.total));
    fs::write(out.join("aup.csv"), aup_csv)?;
    println!("AUP = {:.2} over {} curve points", breakdown.total, curve.points.len());
    Ok(())
}

fn cmd_ablate(
    cfg: &ExperimentConfig,
    out: &Path,
    checkpoint: &Path,
    trajectories: &Path,
) -> Result<()> {
    let teacher = load_checkpoint(checkpoint)?;
    let trajs = load_trajs(trajectories)?;
    let base = cfg.distill_config();
    let mut variants: Vec<(String, DistillConfig)> = vec![
        ("tad".into(), base.clone()),
        ("global-ce".into(), DistillConfig { delta: cfg.gen_len, ..base.clone() }),
        ("near-only".into(), DistillConfig { lambda: 0.0, ..base.clone() }),
        ("kl-only".into(), DistillConfig { near_weight: 0.0, ..base.clone() }),
    ];
    let mut deltas = vec![1, 2, 4, cfg.gen_len];
    deltas.retain(|&d| d >= 1 && d <= cfg.gen_len);
    deltas.dedup();
    for d in deltas {
        variants.push((format!("delta-{d}"), DistillConfig { delta: d, ..base.clone() }));
    }
    for l in [0.0, 0.5, 1.0, 2.0] {
        variants.push((format!("lambda-{l}"), DistillConfig { lambda: l, ..base.clone() }));
    }
    let pairs = eval_pairs(cfg, "eval", cfg.eval_size.min(50));
    let mut csv = String::from("variant,delta,lambda,near_weight,accuracy,tpf,near,distant,total\n");
    for (name, config) in &variants {
        let mut rng = stream_rng(cfg, "distill");
        let (student, rows) = tad_train(teacher.clone(), &teacher, &trajs, config, &mut rng)?;
        let last = rows.last().expect("at least one training step");
        let (accuracy, tpf, _) = eval_model(cfg, &student, &pairs)?;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            name, config.delta, config.lambda, config.near_weight, accuracy, tpf, last.near,
            last.distant, last.total,
        ));
        println!("{name}: accuracy = {accuracy:.1}%, tpf = {tpf:.3}");
    }
    fs::write(out.join("ablate.csv"), csv)?;
    Ok(())
}

fn cmd_gap(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let source = MarkovSource::sticky_binary(cfg.gap_stay_prob);
    let mut csv = String::from("k,gap_nats,identity_gap,residual\n");
    for k in 2..=cfg.gap_k_max {
        let joint = source.enumerate_joint(k)?;
        let report = factorization_gap(&joint);
        let identity = gap_via_entropy_identity(&joint);
        csv.push_str(&format!(
            "{},{},{},{}\n",
            k,
            report.gap_nats,
            identity,
            (report.gap_nats - identity).abs()
        ));
        println!("k = {k}: gap = {:.6} nats", report.gap_nats);
    }
    fs::write(out.join("gap.csv"), csv)?;
    Ok(())
}

fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().ln()).collect();
    let sum: f64 = v.iter().sum();
    for x in &mut v {
        *x /= sum;
    }
    v
}

fn cmd_validate(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut rng = stream_rng(cfg, "validate");
    let mut csv = String::from("instance,alphabet,k,lhs,rhs,residual\n");
    let mut max_residual: f64 = 0.0;
    for i in 0..100 {
        let alphabet = rng.gen_range(2..=3);
        let k = rng.gen_range(2..=3);
        let teacher =
            DistributionTable::new(alphabet, k, random_simplex(&mut rng, alphabet.pow(k as u32)));
        let marginals: Vec<Vec<f64>> =
            (0..k).map(|_| random_simplex(&mut rng, alphabet)).collect();
        let report = joint_kl_identity(&teacher, &marginals);
        max_residual = max_residual.max(report.residual);
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            i, alphabet, k, report.lhs, report.rhs, report.residual
        ));
    }
    fs::write(out.join("identity.csv"), csv)?;
    println!("max residual over 100 instances: {max_residual:.3e}");
    Ok(())
}
