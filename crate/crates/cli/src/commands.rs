use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{ensure, Context, Result};
use phylo_nbe::eval::{model_points, oracle_points, summarize, write_points_csv, EvalReport};
use phylo_nbe::model::{fine_tune, NbeModel, TrainReport};
use phylo_nbe::sim::{load_jsonl, save_jsonl, simulate_dataset_with_stats, summarize_prior, DatasetConfig, SimRecord};
use phylo_nbe::tree::ReconTree;
use phylo_nbe::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::config::{require, write_resolved, EvaluateConfig, FinetuneRunConfig, PredictConfig, SimulateConfig, TrainRunConfig};

fn out_dir(out: &Option<std::path::PathBuf>) -> Result<&Path> {
    let dir = require(out.as_deref(), "out")?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load(path: &Option<std::path::PathBuf>, name: &str) -> Result<Vec<SimRecord>> {
    let p = require(path.as_deref(), name)?;
    load_jsonl(p).with_context(|| format!("loading {}", p.display()))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn simulate(cfg: SimulateConfig) -> Result<ExitCode> {
    let seed = require(cfg.seed, "seed")?;
    let dir = out_dir(&cfg.out)?;
    write_resolved(&cfg, dir, "simulate_config.json")?;

    if let Some(draws) = cfg.prior_draws {
        ensure!(draws > 0, "prior_draws must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let summary = summarize_prior(&cfg.prior, &cfg.model, draws, &mut rng);
        write_json(&dir.join("prior_summary.json"), &serde_json::to_value(summary)?)?;
        eprintln!(
            "reff median {:.4} ({:.4}, {:.4}); sigma median {:.4} ({:.4}, {:.4})",
            summary.reff.median,
            summary.reff.lower,
            summary.reff.upper,
            summary.sigma.median,
            summary.sigma.lower,
            summary.sigma.upper
        );
        return Ok(ExitCode::SUCCESS);
    }

    let mut manifest = serde_json::Map::new();
    let mut first = seed;
    for (name, n) in [("train", cfg.n_train), ("val", cfg.n_val), ("test", cfg.n_test)] {
        ensure!(n > 0, "n_{name} must be positive");
        let ds = DatasetConfig {
            n_records: n,
            measurements_per_record: cfg.measurements_per_record,
            model: cfg.model,
            prior: cfg.prior.clone(),
            limits: cfg.limits,
            max_rejections: cfg.max_rejections,
            first_seed: first,
        };
        let (records, rejections) = simulate_dataset_with_stats(&ds)?;
        let file = format!("{name}.jsonl");
        save_jsonl(dir.join(&file), &records)?;
        manifest.insert(
            name.into(),
            json!({"file": file, "first_seed": first, "count": n, "rejections": rejections}),
        );
        eprintln!("{name}: {n} records, seeds {first}..{}, {rejections} rejections", first + n as u64);
        first = first
            .checked_add(n as u64)
            .context("seed range overflows u64")?;
    }
    write_json(&dir.join("seeds.json"), &serde_json::Value::Object(manifest))?;
    Ok(ExitCode::SUCCESS)
}

fn write_training_outputs(dir: &Path, model: &NbeModel, report: &TrainReport) -> Result<()> {
    model.save(dir.join("checkpoint.json"))?;
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for c in &report.curves {
        csv.push_str(&format!("{},{},{}\n", c.epoch, c.train_loss, c.val_loss));
    }
    fs::write(dir.join("curves.csv"), csv)?;
    // The only output that changes between identical runs.
    write_json(
        &dir.join("timing.json"),
        &json!({"wall_time_secs": report.wall_time.as_secs_f64()}),
    )?;
    eprintln!(
        "best epoch {} of {}: val loss {:.5} (initial {:.5}); {:.1}s",
        report.best_epoch,
        report.curves.len(),
        report.best_val_loss,
        report.initial_val_loss,
        report.wall_time.as_secs_f64()
    );
    Ok(())
}

pub fn train(mut cfg: TrainRunConfig) -> Result<ExitCode> {
    let seed = require(cfg.seed, "seed")?;
    cfg.training.seed = seed;
    let dir = out_dir(&cfg.out)?;
    let train_data = load(&cfg.train, "train")?;
    let val = load(&cfg.val, "val")?;
    write_resolved(&cfg, dir, "train_config.json")?;
    let mut model = NbeModel::seeded(cfg.btu.clone(), cfg.pred.clone(), seed)?;
    let report = phylo_nbe::model::train(&mut model, &train_data, &val, &cfg.training)?;
    write_training_outputs(dir, &model, &report)?;
    Ok(ExitCode::SUCCESS)
}

pub fn finetune(mut cfg: FinetuneRunConfig) -> Result<ExitCode> {
    cfg.training.seed = cfg.seed;
    let dir = out_dir(&cfg.out)?;
    let init = require(cfg.init.as_deref(), "init")?;
    let pretrained = NbeModel::load(init).with_context(|| format!("loading {}", init.display()))?;
    let train_data = load(&cfg.train, "train")?;
    let val = load(&cfg.val, "val")?;
    write_resolved(&cfg, dir, "finetune_config.json")?;
    let mut model = pretrained.clone();
    let report = fine_tune(&mut model, &train_data, &val, &cfg.training)?;
    ensure!(model.btu == pretrained.btu, "embedding network changed during fine-tuning");
    write_training_outputs(dir, &model, &report)?;
    Ok(ExitCode::SUCCESS)
}

fn read_tree(path: &Path) -> Result<ReconTree> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let line = text
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .with_context(|| format!("{} holds no tree", path.display()))?;
    Ok(ReconTree::parse_newick(line)?)
}

pub fn predict(cfg: PredictConfig) -> Result<ExitCode> {
    let ckpt = require(cfg.checkpoint.as_deref(), "checkpoint")?;
    let model = NbeModel::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let tree = read_tree(require(cfg.newick.as_deref(), "newick")?)?;
    if tree.tip_count() < 2 {
        return Err(Error::DegenerateTree).context("prediction needs a tree with at least two tips");
    }
    let sigma = require(cfg.sigma, "sigma")?;
    ensure!(sigma > 0.0 && sigma.is_finite(), "sigma must be positive");
    let grid = model.trajectory(&tree, 1.0 / sigma, &cfg.times, &cfg.taus)?;

    let mut csv = String::from("t,tau,q_reff,q_log10_prev,q_log10_cum\n");
    for q in &grid {
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            q.t, q.tau, q.q_reff, q.q_log10_prev, q.q_log10_cum
        ));
    }
    match &cfg.out {
        Some(path) => {
            let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            fs::create_dir_all(dir)?;
            write_resolved(&cfg, dir, "predict_config.json")?;
            fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
        }
        None => std::io::stdout().write_all(csv.as_bytes())?,
    }
    Ok(ExitCode::SUCCESS)
}

fn print_report(report: &EvalReport) {
    eprintln!("{:<12} {:>8} {:>8} {:>8} {:>8}", "quantity", "R2", "bias", "cov50", "cov95");
    for (name, q) in report.quantities() {
        eprintln!(
            "{name:<12} {:>8.3} {:>8.3} {:>8.3} {:>8.3}",
            q.r2, q.bias, q.cover50, q.cover95
        );
    }
    eprintln!(
        "{} points; crossing rate {:.4}; bands 50% [{:.3}, {:.3}] 95% [{:.3}, {:.3}]",
        report.n_points,
        report.crossing_rate,
        report.bands.b50.0,
        report.bands.b50.1,
        report.bands.b95.0,
        report.bands.b95.1
    );
}

pub fn evaluate(cfg: EvaluateConfig) -> Result<ExitCode> {
    let dir = out_dir(&cfg.out)?;
    let test = load(&cfg.test, "test")?;
    let hash = write_resolved(&cfg, dir, "evaluate_config.json")?;
    let points = if cfg.oracle {
        oracle_points(&test, cfg.oracle_delta)
    } else {
        let ckpt = require(cfg.checkpoint.as_deref(), "checkpoint")?;
        let model = NbeModel::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
        model_points(&model, &test)?
    };
    let report = summarize(&points)?;
    let mut value = serde_json::to_value(&report)?;
    value
        .as_object_mut()
        .expect("report is an object")
        .insert("config_hash".into(), json!(hash));
    write_json(&dir.join("report.json"), &value)?;
    let mut csv = Vec::new();
    write_points_csv(&mut csv, &points)?;
    fs::write(dir.join("points.csv"), csv)?;
    print_report(&report);
    eprintln!("config hash {hash}");

    let under = report.under_covered();
    if cfg.strict && !under.is_empty() {
        eprintln!("95% coverage below its band for: {}", under.join(", "));
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}
