use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use duosent_core::data::{
    dataset_stats, integrity_check, preprocess_csv, synthetic_vocabulary, write_histogram_csv, write_record_file,
    write_stats_csv, CsvSchema, RecordFile, RECORD_FILE_VERSION, SYNTH_MAX_LEN,
};
use duosent_core::experiment::{
    ablation_csv, ablation_gaps, gradcheck_suite, model_config_for, run_ablation, run_id, run_variant, split, Dataset,
    ExperimentConfig, RunManifest,
};
use duosent_core::metrics::{evaluate, METRICS_CSV_HEADER};
use duosent_core::model::ModelConfig;
use duosent_core::training::{blob_path, load_checkpoint, save_checkpoint};
use duosent_core::{AblationToggles, Error, Result, Variant};

use crate::{Cli, Command, Common, RunArgs};

/// Run context: resolved config, output directory, and the artifacts written so far.
struct Run {
    config: ExperimentConfig,
    out: PathBuf,
    outputs: Vec<PathBuf>,
    started: SystemTime,
    clock: Instant,
}

impl Run {
    fn new(common: &Common) -> Result<Self> {
        let mut config = match &common.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = common.seed {
            config.set_seed(seed);
        }
        fs::create_dir_all(&common.out)?;
        Ok(Self {
            config,
            out: common.out.clone(),
            outputs: Vec::new(),
            started: SystemTime::now(),
            clock: Instant::now(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn write(&mut self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(name);
        fs::write(p, contents)?;
        Ok(())
    }

    fn seed(&self) -> u64 {
        self.config.train.seed
    }

    fn finish(mut self, command: &str, variant: Option<Variant>, fill: impl FnOnce(&mut RunManifest)) -> Result<()> {
        let manifest_path = self.path("manifest.json");
        let mut manifest = RunManifest {
            run_id: run_id(command, variant, self.seed()),
            command: command.to_string(),
            seed: self.seed(),
            toggles: self.config.ablation.toggles(),
            config: self.config.clone(),
            outputs: self.outputs.clone(),
            variants: Vec::new(),
            epoch_losses: None,
            started_unix_secs: self.started.duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            duration_secs: self.clock.elapsed().as_secs_f64(),
        };
        fill(&mut manifest);
        let mut json = serde_json::to_vec_pretty(&manifest)?;
        json.push(b'\n');
        fs::write(manifest_path, json)?;
        Ok(())
    }
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let mut run = Run::new(&cli.common)?;
    match cli.command {
        Command::Preprocess {
            input,
            schema,
            allow_dirty,
        } => preprocess(run, &input, schema, allow_dirty),
        Command::Synth { count, vocab } => synth(run, count, vocab),
        Command::Train { run: args } => {
            apply_run_args(&mut run.config, &args);
            train(run)
        }
        Command::Eval {
            checkpoint,
            run: args,
            all_records,
        } => {
            apply_run_args(&mut run.config, &args);
            eval(run, &checkpoint, all_records)
        }
        Command::Ablate { data } => {
            if data.is_some() {
                run.config.data.records = data;
            }
            ablate(run)
        }
        Command::Gradcheck { threshold } => gradcheck(run, threshold),
    }
}

fn apply_run_args(config: &mut ExperimentConfig, args: &RunArgs) {
    if let Some(data) = &args.data {
        config.data.records = Some(data.clone());
    }
    if let Some(v) = args.variant {
        config.ablation.variant = v;
    }
}

fn preprocess(mut run: Run, input: &Path, schema: CsvSchema, allow_dirty: bool) -> Result<ExitCode> {
    let d = &run.config.data;
    let result = preprocess_csv(
        File::open(input)?,
        schema,
        &d.labels,
        d.min_frequency,
        d.max_vocab,
        d.max_len,
    )?;
    write_record_file(&run.path("records.json"), &result.file)?;
    if let Some(stats) = &result.stats {
        write_stats_csv(&run.path("stats.csv"), stats)?;
        write_histogram_csv(&run.path("histogram.csv"), stats)?;
    }
    let mut report = serde_json::to_vec_pretty(&result.integrity)?;
    report.push(b'\n');
    run.write("integrity.json", report)?;
    let r = &result.integrity;
    println!(
        "{} records, {} dropped, {} empty texts, {} out-of-range scores, {} label inconsistencies",
        r.records, r.dropped_rows, r.empty_text, r.out_of_range_scores, r.label_inconsistencies
    );
    let clean = r.is_clean();
    run.finish("preprocess", None, |_| {})?;
    if clean || allow_dirty {
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("integrity check failed with {} violations (pass --allow-dirty to accept)", r.violations());
        Ok(ExitCode::FAILURE)
    }
}

fn synth(mut run: Run, count: Option<usize>, vocab: Option<usize>) -> Result<ExitCode> {
    let d = &mut run.config.data;
    d.synthetic_count = count.unwrap_or(d.synthetic_count);
    d.synthetic_vocab = vocab.unwrap_or(d.synthetic_vocab);
    if d.synthetic_count == 0 {
        return Err(Error::InvalidInput("synthetic record count must be positive".into()));
    }
    let data = Dataset::synthetic(d.synthetic_count, d.synthetic_vocab, d.synthetic_seed);
    let integrity = integrity_check(&data.records, &d.labels);
    let stats = dataset_stats(&data.records)?;
    let file = RecordFile {
        format_version: RECORD_FILE_VERSION,
        vocabulary: synthetic_vocabulary(d.synthetic_vocab),
        max_len: SYNTH_MAX_LEN,
        records: data.records,
    };
    write_record_file(&run.path("records.json"), &file)?;
    write_stats_csv(&run.path("stats.csv"), &stats)?;
    write_histogram_csv(&run.path("histogram.csv"), &stats)?;
    println!(
        "{} synthetic records over {} vocabulary entries; fine-class counts {:?}",
        file.records.len(),
        file.vocabulary.len(),
        stats.fine_counts
    );
    if !integrity.is_clean() {
        return Err(Error::Contract(format!("generator produced {} violations", integrity.violations())));
    }
    run.finish("synth", None, |_| {})?;
    Ok(ExitCode::SUCCESS)
}

fn metrics_csv(run_id: &str, variant: Variant, metrics: &duosent_core::MetricsReport) -> String {
    format!("{METRICS_CSV_HEADER}\n{}\n", metrics.csv_row(run_id, variant.key()))
}

fn train(mut run: Run) -> Result<ExitCode> {
    run.config.validate()?;
    let data = Dataset::load(&run.config.data)?;
    let model_cfg = model_config_for(&run.config, &data);
    run.config.model = model_cfg.clone();
    let (train_set, holdout) = split(&run.config, &data)?;
    let variant = run.config.ablation.variant;
    let toggles = run.config.ablation.toggles();
    log::info!(
        "training {} on {} records, holding out {}",
        variant.label(),
        train_set.len(),
        holdout.len()
    );
    let (model, report, summary) = run_variant(&model_cfg, &run.config.train, toggles, variant, &train_set, &holdout)?;
    let ckpt = run.path("model.json");
    save_checkpoint(&model, &ckpt)?;
    run.outputs.push(blob_path(&ckpt)?);
    let id = run_id("train", Some(variant), run.seed());
    run.write("metrics.csv", metrics_csv(&id, variant, &summary.metrics))?;
    let mut curve = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        curve.push_str(&format!("{},{l:.12}\n", i + 1));
    }
    run.write("loss_curve.csv", curve)?;
    println!("{} ({} steps)\n{}", variant.label(), report.steps, summary.metrics);
    run.finish("train", Some(variant), |m| {
        m.epoch_losses = Some(report.epoch_losses.clone());
        m.variants = vec![summary];
    })?;
    Ok(ExitCode::SUCCESS)
}

fn eval(mut run: Run, checkpoint: &Path, all_records: bool) -> Result<ExitCode> {
    let model = load_checkpoint(checkpoint)?;
    run.config.model = model.config.clone();
    let data = Dataset::load(&run.config.data)?;
    if data.vocab_size > model.config.vocab_size {
        return Err(Error::InvalidInput(format!(
            "data vocabulary has {} entries but the checkpoint embeds only {}",
            data.vocab_size, model.config.vocab_size
        )));
    }
    let records = if all_records {
        data.records
    } else {
        split(&run.config, &data)?.1
    };
    let variant = run.config.ablation.variant;
    let metrics = evaluate(&model, &records, &run.config.ablation.toggles())?;
    let id = run_id("eval", Some(variant), run.seed());
    run.write("metrics.csv", metrics_csv(&id, variant, &metrics))?;
    println!("{} on {} records\n{metrics}", variant.label(), records.len());
    run.finish("eval", Some(variant), |_| {})?;
    Ok(ExitCode::SUCCESS)
}

fn ablate(mut run: Run) -> Result<ExitCode> {
    let data = Dataset::load(&run.config.data)?;
    run.config.model = model_config_for(&run.config, &data);
    let runs = run_ablation(&run.config, &data)?;
    let id = run_id("ablate", None, run.seed());
    run.write("ablation.csv", ablation_csv(&id, &runs))?;
    println!("{:<14}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}{:>9}", "variant", "C. Acc", "F. Acc", "C. F1", "F. F1", "MAE", "MSE", "R2");
    for r in &runs {
        print!("{:<14}", r.variant.label());
        for v in r.metrics.values() {
            print!("{v:>9.4}");
        }
        println!();
    }
    for (v, dc, df) in ablation_gaps(&runs) {
        println!("full minus {}: coarse acc {dc:+.4}, fine acc {df:+.4}", v.label());
    }
    run.finish("ablate", None, |m| m.variants = runs)?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(mut run: Run, threshold: Option<f64>) -> Result<ExitCode> {
    let cfg = ModelConfig {
        seed: run.config.model.seed,
        ..ModelConfig::tiny()
    };
    run.config.model = cfg.clone();
    let entries = gradcheck_suite(&cfg)?;
    let mut csv = String::from("component,max_rel_error,tolerance,passed\n");
    let mut failed = 0;
    println!("{:<26}{:>14}{:>12}", "component", "max rel err", "tolerance");
    for e in &entries {
        let tol = threshold.unwrap_or(e.tolerance);
        let ok = e.max_rel_error < tol;
        failed += usize::from(!ok);
        println!(
            "{:<26}{:>14.3e}{:>12.0e}  {}",
            e.component,
            e.max_rel_error,
            tol,
            if ok { "ok" } else { "FAIL" }
        );
        csv.push_str(&format!("{},{:e},{:e},{ok}\n", e.component, e.max_rel_error, tol));
    }
    run.write("gradcheck.csv", csv)?;
    let toggles = AblationToggles::all();
    run.finish("gradcheck", None, |m| m.toggles = toggles)?;
    if failed > 0 {
        eprintln!("{failed} component(s) exceeded the tolerance");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}
