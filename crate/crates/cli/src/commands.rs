use std::fs;
use std::io::Write as _;
use std::path::Path;

use muvitanet::data::{generate_synthetic_bundle, load_bundle, load_bundle_with_min_visits, save_bundle, SyntheticSpec, META_FILE, UNLABELED_FILE, VOCAB_FILE};
use muvitanet::interpret::{ablate_and_repredict, explain_patient, rank_features, FeatureImportanceTable, Removal};
use muvitanet::model::build_variant;
use muvitanet::trainer::{
    evaluate_task, load_json, prepare_folds, run_folds, save_json, Checkpoint, EvalResult, EvalRow, FoldState,
    TrainerConfig, TrainingState,
};
use muvitanet::{Error, PatientRecord, Result, TaskBundle};
use serde::Serialize;

use crate::files::{
    create_dir, fold_dir, read_config, resolve_checkpoints, write_pretty, RunConfig, CHECKPOINT_FILE, EVAL_FILE,
    METRICS_FILE, PROVENANCE_FILE, RESOLVED_CONFIG_FILE, STATE_FILE,
};
use crate::{EvalSplit, EvaluateArgs, ExplainArgs, GenerateArgs, TrainArgs, ValidateArgs};

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    spec: &'a SyntheticSpec,
}

fn is_bundle_file(name: &str) -> bool {
    [VOCAB_FILE, META_FILE, UNLABELED_FILE, PROVENANCE_FILE, RESOLVED_CONFIG_FILE].contains(&name)
        || (name.starts_with("task_") && name.ends_with(".jsonl"))
}

pub fn cmd_generate(args: &GenerateArgs) -> Result<()> {
    let mut spec: SyntheticSpec = read_config(&args.config)?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if args.out.is_dir() {
        let entries: Vec<_> = fs::read_dir(&args.out)
            .map_err(|e| Error::io(&args.out, e))?
            .collect::<std::io::Result<_>>()
            .map_err(|e| Error::io(&args.out, e))?;
        if !entries.is_empty() {
            if !args.force {
                return Err(Error::Config(format!(
                    "output directory {} is not empty; pass --force to overwrite",
                    args.out.display()
                )));
            }
            for e in entries {
                if e.file_name().to_str().is_some_and(is_bundle_file) {
                    fs::remove_file(e.path()).map_err(|err| Error::io(e.path(), err))?;
                }
            }
        }
    }
    let bundle = generate_synthetic_bundle(&spec)?;
    save_bundle(&bundle, &args.out)?;
    write_pretty(
        &Provenance {
            tool: "muvitanet",
            version: env!("CARGO_PKG_VERSION"),
            seed: spec.seed,
            spec: &spec,
        },
        &args.out.join(PROVENANCE_FILE),
    )?;
    let mut rc = RunConfig::new("generate");
    rc.out = Some(args.out.clone());
    rc.synthetic = Some(spec);
    write_pretty(&rc, &args.out.join(RESOLVED_CONFIG_FILE))?;
    println!(
        "wrote {} tasks, {} unlabeled records to {}",
        bundle.tasks.len(),
        bundle.unlabeled.len(),
        args.out.display()
    );
    Ok(())
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<()> {
    let bundle = load_bundle_with_min_visits(&args.bundle, args.min_visits)?;
    bundle.validate(args.contrastive)?;
    println!(
        "vocabulary {} codes, hash {}",
        bundle.vocabulary.len(),
        bundle.vocabulary.fingerprint()
    );
    for t in &bundle.tasks {
        println!("task {:<14} {:>6} records {:>6} positive", t.task, t.len(), t.num_positive());
    }
    println!("unlabeled {} records", bundle.unlabeled.len());
    Ok(())
}

fn resolve_trainer_config(args: &TrainArgs) -> Result<TrainerConfig> {
    let mut c = match &args.config {
        Some(p) => read_config(p)?,
        None => TrainerConfig::default(),
    };
    if let Some(v) = &args.variant {
        c.variant = v.parse()?;
    }
    if let Some(e) = args.epochs {
        c.epochs = e;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
    if let Some(f) = args.folds {
        c.folds = f;
    }
    if args.fold.is_some() {
        c.only_fold = args.fold;
    }
    if let Some(d) = args.hidden_dim {
        c.hidden_dim = d;
    }
    if let Some(lr) = args.learning_rate {
        c.learning_rate = lr;
    }
    c.validate()?;
    Ok(c)
}

fn write_metrics(path: &Path, states: &[&FoldState]) -> Result<()> {
    let mut out = Vec::new();
    for s in states {
        for m in &s.metrics {
            serde_json::to_writer(&mut out, m)?;
            out.push(b'\n');
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn cmd_train(args: &TrainArgs) -> Result<EvalResult> {
    let config = resolve_trainer_config(args)?;
    let bundle = load_bundle(&args.bundle)?;
    bundle.validate(build_variant(config.variant).contrastive)?;
    create_dir(&args.out)?;
    let mut rc = RunConfig::new("train");
    rc.bundle = Some(args.bundle.clone());
    rc.out = Some(args.out.clone());
    rc.synthetic = read_config(&args.bundle.join(PROVENANCE_FILE))
        .ok()
        .and_then(|p: serde_json::Value| serde_json::from_value(p.get("spec")?.clone()).ok());
    rc.encoder = Some(config.encoder_config(bundle.vocabulary.len()));
    rc.trainer = Some(config.clone());
    rc.jobs = Some(args.jobs);
    write_pretty(&rc, &args.out.join(RESOLVED_CONFIG_FILE))?;

    for f in config.fold_indices() {
        create_dir(&fold_dir(&args.out, f))?;
    }
    let resume = |fold: usize| -> Result<Option<FoldState>> {
        let path = fold_dir(&args.out, fold).join(STATE_FILE);
        if !args.resume || !path.is_file() {
            return Ok(None);
        }
        let saved: TrainingState = load_json(&path)?;
        saved.check_resumable(&config, &bundle.vocabulary)?;
        Ok(Some(saved.state))
    };
    let on_epoch = |state: &FoldState| -> Result<()> {
        let path = fold_dir(&args.out, state.fold).join(STATE_FILE);
        save_json(&TrainingState::new(state.clone(), &config, &bundle.vocabulary), &path)?;
        if !args.quiet {
            let val: Vec<String> = state
                .metrics
                .iter()
                .filter(|m| m.epoch == state.epoch && m.auroc.is_some())
                .map(|m| format!("{} {:.4}", m.task, m.auroc.unwrap_or(f64::NAN)))
                .collect();
            eprintln!("fold {} epoch {}/{}  validation {}", state.fold, state.epoch, config.epochs, val.join(", "));
        }
        Ok(())
    };
    let outcomes = run_folds(&bundle, &config, args.jobs, resume, on_epoch)?;
    for o in &outcomes {
        let path = fold_dir(&args.out, o.state.fold).join(CHECKPOINT_FILE);
        save_json(&Checkpoint::from_state(&o.state, &config, &bundle.vocabulary), &path)?;
        save_json(
            &TrainingState::new(o.state.clone(), &config, &bundle.vocabulary),
            fold_dir(&args.out, o.state.fold).join(STATE_FILE),
        )?;
    }
    let states: Vec<&FoldState> = outcomes.iter().map(|o| &o.state).collect();
    write_metrics(&args.out.join(METRICS_FILE), &states)?;
    let result = EvalResult::from_rows(
        config.variant,
        bundle.task_names(),
        outcomes.into_iter().flat_map(|o| o.rows).collect(),
    );
    write_pretty(&result, &args.out.join(EVAL_FILE))?;
    print_summary(&result);
    Ok(result)
}

fn print_summary(r: &EvalResult) {
    println!("variant {}", r.variant);
    for s in &r.summary {
        println!("{:<14} {:.4} ± {:.4}  ({} folds)", s.task, s.mean, s.std, s.folds);
    }
    println!("{:<14} {:.4}", "average", r.average);
}

fn load_checkpoint(path: &Path, bundle: &TaskBundle) -> Result<Checkpoint> {
    let cp: Checkpoint = load_json(path)?;
    cp.check_compatible(&bundle.vocabulary)?;
    if cp.model.tasks != bundle.task_names() {
        return Err(Error::Compatibility(format!(
            "{} was trained on tasks {:?}, the bundle has {:?}",
            path.display(),
            cp.model.tasks,
            bundle.task_names()
        )));
    }
    Ok(cp)
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<EvalResult> {
    let bundle = load_bundle(&args.bundle)?;
    let mut paths = Vec::new();
    for p in &args.checkpoint {
        paths.extend(resolve_checkpoints(p)?);
    }
    let mut rows = Vec::new();
    let mut variant = None;
    for path in &paths {
        let cp = load_checkpoint(path, &bundle)?;
        if variant.is_some_and(|v| v != cp.model.variant) {
            return Err(Error::Config("checkpoints of different variants cannot be summarized together".into()));
        }
        variant = Some(cp.model.variant);
        let datasets = match args.split {
            EvalSplit::All => bundle.tasks.clone(),
            split => {
                let cfg = TrainerConfig {
                    only_fold: Some(cp.fold),
                    ..cp.config.clone()
                };
                let fold = prepare_folds(&bundle, &cfg)?.remove(0);
                match split {
                    EvalSplit::Train => fold.train,
                    EvalSplit::Validation => fold.validation,
                    _ => fold.test,
                }
            }
        };
        for (k, ds) in datasets.iter().enumerate() {
            let (n, _) = cp.model.locate(k)?;
            rows.push(EvalRow {
                task: ds.task.clone(),
                fold: cp.fold,
                best_epoch: cp.epochs[n],
                auroc: evaluate_task(&cp.model, k, ds)?,
            });
        }
    }
    let result = EvalResult::from_rows(variant.unwrap_or_default(), bundle.task_names(), rows);
    match &args.out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            write_pretty(&result, p)?;
            print_summary(&result);
        }
        None => {
            let text = serde_json::to_string_pretty(&result)?;
            println!("{text}");
        }
    }
    Ok(result)
}

fn find_patient<'a>(bundle: &'a TaskBundle, task: usize, id: &str) -> Result<&'a PatientRecord> {
    bundle.tasks[task]
        .records
        .iter()
        .chain(bundle.tasks.iter().flat_map(|t| t.records.iter()))
        .chain(bundle.unlabeled.iter())
        .find(|r| r.id == id)
        .ok_or_else(|| Error::Lookup(format!("no patient `{id}` in the bundle")))
}

fn write_stdout(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io("<stdout>", e))
}

pub fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let bundle = load_bundle(&args.bundle)?;
    let paths = resolve_checkpoints(&args.checkpoint)?;
    let path = match (paths.len(), args.fold) {
        (1, _) => paths[0].clone(),
        (_, Some(f)) => fold_dir(&args.checkpoint, f).join(CHECKPOINT_FILE),
        _ => {
            return Err(Error::Config(format!(
                "{} holds {} fold checkpoints; choose one with --fold",
                args.checkpoint.display(),
                paths.len()
            )))
        }
    };
    let cp = load_checkpoint(&path, &bundle)?;
    let model = &cp.model;
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let mut rc = RunConfig::new("explain");
        rc.bundle = Some(args.bundle.clone());
        rc.out = Some(dir.clone());
        rc.trainer = Some(cp.config.clone());
        write_pretty(&rc, &dir.join(RESOLVED_CONFIG_FILE))?;
    }
    if args.global {
        let tasks: Vec<String> = match &args.task {
            Some(t) => vec![t.clone()],
            None => bundle.task_names(),
        };
        let mut tables: Vec<FeatureImportanceTable> = Vec::with_capacity(tasks.len());
        for t in &tasks {
            let k = bundle
                .task_index(t)
                .ok_or_else(|| Error::Config(format!("unknown task `{t}`; bundle tasks are {:?}", bundle.task_names())))?;
            let table = rank_features(model, &bundle.tasks[k], t, !args.all_records, Some(args.top), &bundle.vocabulary)?;
            if let Some(w) = &table.warning {
                eprintln!("warning: {w}");
            }
            tables.push(table);
        }
        let mut csv = String::new();
        for (i, t) in tables.iter().enumerate() {
            let body = t.to_csv();
            csv.push_str(if i == 0 { &body } else { body.split_once('\n').map_or("", |x| x.1) });
        }
        match &args.out {
            Some(dir) => {
                fs::write(dir.join("feature_importance.csv"), &csv).map_err(|e| Error::io(dir, e))?;
                write_pretty(&tables, &dir.join("feature_importance.json"))?;
            }
            None => write_stdout(&csv)?,
        }
        return Ok(());
    }
    let task = args
        .task
        .clone()
        .ok_or_else(|| Error::Config("--patient needs --task".into()))?;
    let k = bundle
        .task_index(&task)
        .ok_or_else(|| Error::Config(format!("unknown task `{task}`; bundle tasks are {:?}", bundle.task_names())))?;
    let id = args.patient.as_deref().unwrap_or_default();
    let record = find_patient(&bundle, k, id)?;
    let removals = args.ablate.iter().map(|s| s.parse()).collect::<Result<Vec<Removal>>>()?;
    let mut report = explain_patient(model, record, &task, args.top, &bundle.vocabulary)?;
    report.ablations = ablate_and_repredict(model, record, &task, &removals, &bundle.vocabulary)?;
    match &args.out {
        Some(dir) => {
            let stem = format!("case_{}_{}", record.id, task);
            write_pretty(&report, &dir.join(format!("{stem}.json")))?;
            let txt = dir.join(format!("{stem}.txt"));
            fs::write(&txt, report.render_text()).map_err(|e| Error::io(&txt, e))?;
        }
        None if args.text => write_stdout(&report.render_text())?,
        None => write_stdout(&(serde_json::to_string_pretty(&report)? + "\n"))?,
    }
    Ok(())
}
