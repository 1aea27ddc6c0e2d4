//! One function per subcommand. Each resolves its inputs from the config,
//! writes its outputs under the out directory and echoes the config there.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::{info, warn};
use oracle_core::dataset::write_audit;
use oracle_core::generate::{conditional_items, generate_items_with_rejection, plan_text, GenerationItem};
use oracle_core::ingest::{filter_dataset, parse_log, preprocess_log, split_dataset, synth_generate};
use oracle_core::metrics::{evaluate, knn_analysis, knn_csv, KnnRecord};
use oracle_core::model::{attention_csvs, latent_csv, metrics_line, Checkpoint, Trainer, METRICS_HEADER};
use oracle_core::{
    load_dataset, save_dataset, ActivityClass, ConditionMask, DailySequence, Error, EvalOptions, PlausibilityRuleSet,
};

use crate::config::RunConfig;
use crate::mask::mask_from_specs;

/// 0 ok, 2 usage/config/input, 3 empty data, 4 numerical failure.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Empty(_) => 3,
                Error::Numerical(_) => 4,
                _ => 2,
            };
        }
    }
    2
}

fn rules(cfg: &RunConfig) -> anyhow::Result<PlausibilityRuleSet> {
    match &cfg.paths.rules {
        Some(p) => PlausibilityRuleSet::load(p).with_context(|| format!("loading rules {}", p.display())),
        None => Ok(PlausibilityRuleSet::table1()),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> anyhow::Result<&'a Path> {
    p.as_deref().ok_or_else(|| anyhow!("missing {flag}"))
}

fn load(path: &Path) -> anyhow::Result<Vec<DailySequence>> {
    load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn out_dir(cfg: &RunConfig) -> anyhow::Result<PathBuf> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn save(path: PathBuf, days: &[DailySequence]) -> anyhow::Result<()> {
    save_dataset(&path, days).with_context(|| format!("writing {}", path.display()))
}

/// Day ids can carry characters unsuited to file names.
fn file_stem_for(day_id: &str) -> String {
    day_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' })
        .collect()
}

fn write_plans(dir: &Path, days: &[DailySequence]) -> anyhow::Result<()> {
    fs::create_dir_all(dir)?;
    for d in days {
        fs::write(dir.join(format!("{}.txt", file_stem_for(d.day_id()))), plan_text(d))?;
    }
    Ok(())
}

pub fn prep(cfg: &mut RunConfig, seed: u64) -> anyhow::Result<()> {
    let rules = rules(cfg)?;
    let days = match (cfg.prep.synthetic, cfg.paths.raw.is_empty()) {
        (Some(_), false) => anyhow::bail!("give either --raw or --synthetic, not both"),
        (None, true) => anyhow::bail!("missing --raw or --synthetic"),
        (Some(n), true) => synth_generate(n, seed, cfg.prep.profile),
        (None, false) => {
            let mut days = Vec::new();
            for path in &cfg.paths.raw {
                let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let parsed = parse_log(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))?;
                let source = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let outcome = preprocess_log(&parsed, &source);
                for d in parsed.diagnostics.iter().chain(&outcome.diagnostics) {
                    warn!("{}: {d:?}", path.display());
                }
                days.extend(outcome.days);
            }
            days
        }
    };
    let total = days.len();
    let (kept, rejected) = filter_dataset(days, &rules);
    info!("kept {} of {total} days", kept.len());
    for class in ActivityClass::ALL {
        let n = rejected.iter().filter(|(_, r)| r.violations.iter().any(|v| v.class == class)).count();
        if n > 0 {
            info!("  {class}: {n} days rejected");
        }
    }
    let split = split_dataset(kept, seed)?;
    let dir = out_dir(cfg)?;
    save(dir.join("train.oracle"), &split.train)?;
    save(dir.join("val.oracle"), &split.val)?;
    save(dir.join("test.oracle"), &split.test)?;
    write_audit(BufWriter::new(File::create(dir.join("audit.tsv"))?), &rejected)?;
    info!("split {}/{}/{} into {}", split.train.len(), split.val.len(), split.test.len(), dir.display());
    cfg.write_effective("prep")?;
    Ok(())
}

pub fn train(cfg: &mut RunConfig, seed: u64) -> anyhow::Result<()> {
    let rules = rules(cfg)?;
    let data = load(required(&cfg.paths.train, "--train")?)?;
    if data.is_empty() {
        return Err(Error::Empty("training dataset has no days".into()).into());
    }
    let resuming = cfg.paths.resume.is_some();
    let mut trainer = match &cfg.paths.resume {
        Some(p) => {
            let mut t = Checkpoint::load(p)
                .with_context(|| format!("loading checkpoint {}", p.display()))?
                .into_trainer(rules)?;
            t.tcfg.epochs = cfg.train.epochs;
            t
        }
        None => Trainer::new(cfg.model.resolve()?, cfg.train.resolve(seed)?, rules)?,
    };
    let mcfg = trainer.model.cfg.clone();
    cfg.model.pin(&mcfg);
    let dir = out_dir(cfg)?;
    cfg.write_effective("train")?;

    let log_path = dir.join("metrics.log");
    let mut log = if resuming {
        BufWriter::new(fs::OpenOptions::new().append(true).create(true).open(&log_path)?)
    } else {
        let mut w = BufWriter::new(File::create(&log_path)?);
        writeln!(w, "{METRICS_HEADER}")?;
        w
    };

    let first_epoch = (trainer.step / trainer.steps_per_epoch(data.len())) as usize + 1;
    let epochs = trainer.tcfg.epochs;
    trainer.total_steps = trainer.step + epochs as u64 * trainer.steps_per_epoch(data.len());
    info!(
        "training {} parameters on {} days for {epochs} epochs (step {})",
        trainer.model.params.len(),
        data.len(),
        trainer.step
    );
    for epoch in first_epoch..first_epoch + epochs {
        let mut io_err = None;
        let result = trainer.train_epoch(epoch, &data, &mut |r| {
            if let Err(e) = writeln!(log, "{}", metrics_line(r.step, &r.loss)) {
                io_err.get_or_insert(e);
            }
        });
        log.flush()?;
        if let Some(e) = io_err {
            return Err(e).context("writing metrics log");
        }
        let st = result.context(format!("epoch {epoch}"))?;
        info!(
            "epoch {epoch}: recon {:.4} kl {:.4} contrastive {:.4} total {:.4}",
            st.recon, st.kl, st.contrastive, st.total
        );
        let ckpt = Checkpoint::from_trainer(&trainer);
        ckpt.save(dir.join(format!("epoch-{epoch:03}.oracle-ckpt")))?;
    }
    Checkpoint::from_trainer(&trainer).save(dir.join("final.oracle-ckpt"))?;
    Ok(())
}

pub fn generate(cfg: &mut RunConfig, seed: u64) -> anyhow::Result<()> {
    let rules = rules(cfg)?;
    let g = cfg.generate.clone();
    if !(g.temperature >= 0.0 && g.temperature.is_finite()) {
        anyhow::bail!("temperature must be finite and non-negative");
    }
    let items: Vec<GenerationItem> = match &cfg.paths.condition_on {
        Some(p) => {
            if !g.fix.is_empty() {
                anyhow::bail!("--fix and --condition-on are mutually exclusive");
            }
            let refs = load(p)?;
            conditional_items(&refs, g.masked_fraction, seed)?
        }
        None => {
            let mask = mask_from_specs(&g.fix)?;
            (0..g.count)
                .map(|i| GenerationItem {
                    mask: mask.clone(),
                    day_id: format!("gen-{seed}-{i:05}"),
                    seed: seed.wrapping_add(i as u64),
                })
                .collect()
        }
    };
    let ckpt_path = required(&cfg.paths.checkpoint, "--checkpoint")?;
    let model = Checkpoint::load(ckpt_path)
        .with_context(|| format!("loading checkpoint {}", ckpt_path.display()))?
        .model;
    let days = generate_items_with_rejection(&model, &items, g.temperature, &rules, g.reject_implausible)?;
    let dir = out_dir(cfg)?;
    save(dir.join("generated.oracle"), &days)?;
    if g.plans {
        write_plans(&dir.join("plans"), &days)?;
    }
    info!("wrote {} days to {}", days.len(), dir.display());
    cfg.write_effective("generate")?;
    Ok(())
}

fn label_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

pub fn eval(cfg: &mut RunConfig) -> anyhow::Result<()> {
    let rules = rules(cfg)?;
    if cfg.paths.generated.is_empty() {
        anyhow::bail!("missing --generated");
    }
    let rounds = cfg.paths.generated.iter().map(|p| load(p)).collect::<anyhow::Result<Vec<_>>>()?;
    let reference = load(required(&cfg.paths.against, "--against")?)?;
    let train = match &cfg.paths.train {
        Some(p) => load(p)?,
        None => Vec::new(),
    };
    let opts = EvalOptions { distinct_ns: cfg.eval.distinct.clone(), k: cfg.eval.k, wd_mode: cfg.eval.wd_mode };
    let report = evaluate(&rounds, &reference, &train, &rules, &opts)?;
    let dir = out_dir(cfg)?;
    fs::write(dir.join("report.txt"), report.to_text())?;
    let label = label_of(&cfg.paths.generated[0]);
    fs::write(dir.join("report.csv"), format!("{}\n{}\n", report.csv_header(), report.csv_row(&label)))?;
    for line in report.to_text().lines() {
        info!("{line}");
    }
    cfg.write_effective("eval")?;
    Ok(())
}

fn knn_text(r: &KnnRecord) -> String {
    format!(
        "k = {}\nsamples = {}\nexact_matches = {}\ntop1_mean = {}\ntop1_median = {}\ntop1_min = {}\ntopk_mean = {}\n",
        r.k,
        r.samples.len(),
        r.exact_matches,
        r.top1_mean,
        r.top1_median,
        r.top1_min,
        r.topk_mean
    )
}

pub fn knn(cfg: &mut RunConfig) -> anyhow::Result<()> {
    if cfg.paths.generated.is_empty() {
        anyhow::bail!("missing --generated");
    }
    let mut generated = Vec::new();
    for p in &cfg.paths.generated {
        generated.extend(load(p)?);
    }
    let train = load(required(&cfg.paths.train, "--train")?)?;
    let record = knn_analysis(&generated, &train, cfg.eval.k)?;
    let dir = out_dir(cfg)?;
    fs::write(dir.join("knn.txt"), knn_text(&record))?;
    fs::write(dir.join("knn.csv"), knn_csv(&record))?;
    info!("{} exact matches among {} samples", record.exact_matches, record.samples.len());
    cfg.write_effective("knn")?;
    Ok(())
}

pub fn export(cfg: &mut RunConfig) -> anyhow::Result<()> {
    let days = load(required(&cfg.paths.data, "--data")?)?;
    let dir = out_dir(cfg)?;
    write_plans(&dir.join("plans"), &days)?;
    if let Some(p) = &cfg.paths.checkpoint {
        let model = Checkpoint::load(p).with_context(|| format!("loading checkpoint {}", p.display()))?.model;
        let day = match &cfg.export.day {
            Some(id) => days
                .iter()
                .find(|d| d.day_id() == id)
                .ok_or_else(|| anyhow!("day {id:?} not in dataset"))?,
            None => days.first().ok_or_else(|| Error::Empty("dataset has no days".into()))?,
        };
        let cond: ConditionMask = mask_from_specs(&cfg.export.fix)?;
        let att = dir.join("attention");
        fs::create_dir_all(&att)?;
        for (h, csv) in attention_csvs(&model, day, &cond)?.iter().enumerate() {
            fs::write(att.join(format!("head-{h:02}.csv")), csv)?;
        }
        fs::write(dir.join("latent.csv"), latent_csv(&model, &days)?)?;
    }
    info!("exported {} days to {}", days.len(), dir.display());
    cfg.write_effective("export")?;
    Ok(())
}
