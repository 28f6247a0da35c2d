use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context as _;

use super::{CliError, Command, DataSource, GlobalArgs};
use crate::data::{
    dedup, generate, load_corpus, stratified_folds, stratified_split, write_corpus, Corpus, CorpusFormat, StrataKey,
    SynthSpec,
};
use crate::ensemble::{build_ensemble, load_ensemble_dir, save_ensemble_dir, EnsembleModel, EnsembleOptions, ENSEMBLE_MANIFEST};
use crate::error::Error;
use crate::experiments::{
    self, alpha_summary_csv, mean_curves_csv, presets, run_experiment1_with, run_experiment2_with, save_run_model,
    summarize_curves, ExperimentReport, ExperimentSpec, ModelSink, Protocol,
};
use crate::manifest::{bytes_digest, ensure_dir, file_digest, write_atomic, RunManifest};
use crate::metrics::{aggregate, argmax, evaluate, EvalReport, Predictor};
use crate::model::{ModelConfig, META_LABEL_NAMES, META_MODEL_CONFIG};
use crate::pipeline::{
    alpha_grid, alpha_sweep, finetune_language, load_run_dir, run_langpaint, save_run_dir, train_multilingual,
    sweep_csv, LangPaintModel, Method, PipelineConfig,
};
use crate::seed::derive_seed;
use crate::tensorstore::{load, save, Checkpoint};

type CliResult<T> = std::result::Result<T, CliError>;

struct Ctx<'a> {
    g: &'a GlobalArgs,
    started: Instant,
}

impl Ctx<'_> {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.g.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::new(command);
        m.threads = self.g.threads;
        m
    }

    fn finish(&self, mut m: RunManifest, path: &Path) -> CliResult<()> {
        m.wall_time_secs = self.started.elapsed().as_secs_f64();
        m.write(path)?;
        Ok(())
    }

    fn out(&self) -> CliResult<&Path> {
        ensure_dir(&self.g.out)?;
        Ok(&self.g.out)
    }

    /// Pipeline config from `--config` (or the built-in defaults) with the
    /// `--seed` override applied.
    fn pipeline(&self) -> CliResult<PipelineConfig> {
        let mut cfg = match &self.g.config {
            Some(p) => {
                let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_slice(&bytes).map_err(|e| Error::InvalidConfig(format!("{}: {e}", p.display())))?
            }
            None => presets::pipeline(),
        };
        if let Some(s) = self.g.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn read_corpus_file(path: &Path) -> CliResult<Corpus> {
    let corpus = load_corpus(path, CorpusFormat::from_path(path))
        .with_context(|| format!("reading corpus {}", path.display()))?;
    Ok(corpus)
}

fn write_corpus_file(corpus: &Corpus, path: &Path) -> CliResult<()> {
    Ok(write_corpus(corpus, path, CorpusFormat::from_path(path))?)
}

fn record_input(m: &mut RunManifest, path: &Path) -> CliResult<()> {
    m.inputs.insert(path.display().to_string(), file_digest(path)?);
    Ok(())
}

fn parse_split_key(s: &str) -> CliResult<StrataKey> {
    s.parse::<StrataKey>().map_err(|e| CliError::Usage(e.to_string()))
}

fn parse_method(s: &str) -> CliResult<Method> {
    s.parse::<Method>().map_err(|e| CliError::Usage(e.to_string()))
}

/// Resolves `--preset`/`--spec` into a synthetic spec with `--seed` applied.
fn synth_spec(ctx: &Ctx, source: &DataSource) -> CliResult<Option<SynthSpec>> {
    let mut spec = match (&source.preset, &source.spec) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--preset and --spec are mutually exclusive".into())),
        (Some(name), None) => presets::by_name(name, 0).map_err(|e| CliError::Usage(e.to_string()))?,
        (None, Some(p)) => {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_slice(&bytes).map_err(|e| Error::InvalidSpec(format!("{}: {e}", p.display())))?
        }
        (None, None) => return Ok(None),
    };
    if let Some(s) = ctx.g.seed {
        spec.seed = s;
    }
    spec.validate()?;
    Ok(Some(spec))
}

fn record_spec(m: &mut RunManifest, spec: &SynthSpec) {
    let json = serde_json::to_vec(spec).expect("spec serializes");
    m.inputs.insert("synthetic-spec".into(), bytes_digest(&json));
    m.seeds.insert("synthetic".into(), spec.seed);
}

fn checkpoint_model_config(ckpt: &Checkpoint, path: &Path) -> CliResult<(ModelConfig, Vec<String>)> {
    let missing = |key: &str| Error::Format(format!("{}: checkpoint has no `{key}` metadata", path.display()));
    let cfg = ckpt.meta_value(META_MODEL_CONFIG).ok_or_else(|| missing(META_MODEL_CONFIG))?;
    let names = ckpt.meta_value(META_LABEL_NAMES).ok_or_else(|| missing(META_LABEL_NAMES))?;
    let bad = |e: serde_json::Error| Error::Format(format!("{}: {e}", path.display()));
    Ok((serde_json::from_str(cfg).map_err(bad)?, serde_json::from_str(names).map_err(bad)?))
}

fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let nums = parts
        .iter()
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| CliError::Usage(format!("bad --grid `{s}` (expected start:stop:step)")))?;
    match nums.as_slice() {
        [a, b, c] => Ok(alpha_grid(*a, *b, *c)?),
        _ => Err(CliError::Usage(format!("bad --grid `{s}` (expected start:stop:step)"))),
    }
}

fn to_json<T: serde::Serialize>(v: &T) -> CliResult<Vec<u8>> {
    serde_json::to_vec_pretty(v).map_err(|e| CliError::from(Error::Internal(e.to_string())))
}

enum Loaded {
    Run(LangPaintModel),
    Ensemble(Box<EnsembleModel>),
}

fn load_model_dir(dir: &Path) -> CliResult<Loaded> {
    if dir.join(ENSEMBLE_MANIFEST).exists() {
        Ok(Loaded::Ensemble(Box::new(load_ensemble_dir(dir)?)))
    } else {
        Ok(Loaded::Run(load_run_dir(dir)?))
    }
}

fn format_probs(p: &[f64]) -> String {
    p.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(",")
}

pub(crate) fn dispatch(g: &GlobalArgs, cmd: &Command) -> CliResult<()> {
    let ctx = Ctx {
        g,
        started: Instant::now(),
    };
    match cmd {
        Command::GenData { source } => gen_data(&ctx, source),
        Command::Clean { train, dev } => clean(&ctx, train, dev),
        Command::Split {
            data,
            fractions,
            folds,
            strata,
        } => split(&ctx, data, fractions.as_deref(), *folds, strata),
        Command::TrainMl { train, val } => train_ml(&ctx, train, val),
        Command::Finetune {
            ml,
            language,
            train,
            val,
        } => finetune(&ctx, ml, language, train, val),
        Command::Sweep { ls, ml, val, grid } => sweep(&ctx, ls, ml, val, grid),
        Command::Run {
            train,
            val,
            data,
            source,
        } => run(&ctx, train.as_deref(), val.as_deref(), data.as_deref(), source),
        Command::Ensemble {
            train,
            dev,
            source,
            k,
            member,
        } => ensemble(&ctx, train.as_deref(), dev.as_deref(), source, *k, member),
        Command::Predict {
            model,
            text,
            language,
            batch,
            method,
        } => predict(&ctx, model, text.as_deref(), language.as_deref(), batch.as_deref(), method),
        Command::Eval { model, data, method } => eval(&ctx, model, data, method),
        Command::Exp1 {
            source,
            train,
            test,
            runs,
            save_models,
        } => exp1(&ctx, source, train.as_deref(), test.as_deref(), *runs, *save_models),
        Command::Exp2 {
            source,
            data,
            shifted,
            runs,
            save_models,
        } => exp2(&ctx, source, data.as_deref(), shifted.as_deref(), *runs, *save_models),
        Command::Report { curves, evals } => report(&ctx, curves, evals),
    }
}

fn gen_data(ctx: &Ctx, source: &DataSource) -> CliResult<()> {
    let spec = synth_spec(ctx, source)?.ok_or_else(|| CliError::Usage("gen-data needs --preset or --spec".into()))?;
    let corpora = generate(&spec)?;
    let out = ctx.out()?;
    write_corpus_file(&corpora.train, &out.join("train.csv"))?;
    write_corpus_file(&corpora.test, &out.join("test.csv"))?;
    let mut m = ctx.manifest("gen-data");
    record_spec(&mut m, &spec);
    m.config = serde_json::to_value(&spec).map_err(|e| Error::Internal(e.to_string()))?;
    m.record_outputs(out, ["train.csv", "test.csv"])?;
    ctx.note(format!("wrote {} train and {} test examples", corpora.train.len(), corpora.test.len()));
    ctx.finish(m, &out.join("manifest.json"))
}

fn clean(ctx: &Ctx, train: &Path, dev: &Path) -> CliResult<()> {
    let t = read_corpus_file(train)?;
    let d = read_corpus_file(dev)?;
    let outcome = dedup(&t, &d);
    let out = ctx.out()?;
    write_corpus_file(&outcome.train, &out.join("train.csv"))?;
    write_corpus_file(&outcome.dev, &out.join("dev.csv"))?;
    let mut m = ctx.manifest("clean");
    record_input(&mut m, train)?;
    record_input(&mut m, dev)?;
    m.record_outputs(out, ["train.csv", "dev.csv"])?;
    m.details = serde_json::json!({ "removed": outcome.removed });
    println!("removed {}", outcome.removed);
    ctx.finish(m, &out.join("manifest.json"))
}

fn split(ctx: &Ctx, data: &Path, fractions: Option<&str>, folds: Option<usize>, strata: &str) -> CliResult<()> {
    let key = parse_split_key(strata)?;
    let corpus = read_corpus_file(data)?;
    let seed = ctx.g.seed.unwrap_or(0);
    let out = ctx.out()?;
    let mut m = ctx.manifest("split");
    record_input(&mut m, data)?;
    m.seeds.insert("seed".into(), seed);
    let mut files = Vec::new();
    match (fractions, folds) {
        (Some(fr), None) => {
            let fr = fr
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| CliError::Usage(format!("bad --fractions `{fr}`")))?;
            for (i, part) in stratified_split(&corpus, &fr, key, seed)?.iter().enumerate() {
                let name = format!("part_{i}.csv");
                write_corpus_file(part, &out.join(&name))?;
                files.push(name);
            }
        }
        (None, Some(k)) => {
            for (i, fold) in stratified_folds(&corpus, k, key, seed)?.folds.iter().enumerate() {
                let dir = out.join(format!("fold_{i}"));
                ensure_dir(&dir)?;
                write_corpus_file(&fold.train, &dir.join("train.csv"))?;
                write_corpus_file(&fold.val, &dir.join("val.csv"))?;
                files.push(format!("fold_{i}/train.csv"));
                files.push(format!("fold_{i}/val.csv"));
            }
        }
        _ => return Err(CliError::Usage("split needs exactly one of --fractions or --folds".into())),
    }
    m.record_outputs(out, &files)?;
    ctx.finish(m, &out.join("manifest.json"))
}

fn train_ml(ctx: &Ctx, train: &Path, val: &Path) -> CliResult<()> {
    let cfg = ctx.pipeline()?;
    let t = read_corpus_file(train)?;
    let v = read_corpus_file(val)?;
    ctx.note(format!("training multilingual model on {} examples", t.len()));
    let (ml, history) = train_multilingual(&t, &v, &cfg)?;
    let out = ctx.out()?;
    save(&ml, out.join("ml.ckpt"))?;
    write_atomic(&out.join("ml_history.json"), &to_json(&history)?)?;
    let mut m = ctx.manifest("train-ml");
    record_input(&mut m, train)?;
    record_input(&mut m, val)?;
    m.seeds.insert("seed".into(), cfg.seed);
    m.config = serde_json::to_value(&cfg).map_err(|e| Error::Internal(e.to_string()))?;
    m.record_outputs(out, ["ml.ckpt", "ml_history.json"])?;
    ctx.note(format!("best epoch {} of {}", history.best_epoch, history.stopped_epoch));
    ctx.finish(m, &out.join("manifest.json"))
}

fn finetune(ctx: &Ctx, ml_path: &Path, language: &str, train: &Path, val: &Path) -> CliResult<()> {
    let cfg = ctx.pipeline()?;
    let ml = load(ml_path)?;
    let (_, ml_labels) = checkpoint_model_config(&ml, ml_path)?;
    let t = read_corpus_file(train)?.remap_labels(&ml_labels)?.filter_language(language);
    let v = read_corpus_file(val)?.remap_labels(&ml_labels)?.filter_language(language);
    let (ls, history) = finetune_language(&ml, language, &t, &v, &cfg)?;
    let out = ctx.out()?;
    let ckpt_name = format!("{language}.ls.ckpt");
    let hist_name = format!("{language}.history.json");
    save(&ls, out.join(&ckpt_name))?;
    write_atomic(&out.join(&hist_name), &to_json(&history)?)?;
    let mut m = ctx.manifest("finetune");
    record_input(&mut m, ml_path)?;
    record_input(&mut m, train)?;
    record_input(&mut m, val)?;
    m.seeds.insert("seed".into(), cfg.seed);
    m.config = serde_json::to_value(&cfg).map_err(|e| Error::Internal(e.to_string()))?;
    m.record_outputs(out, [&ckpt_name, &hist_name])?;
    ctx.finish(m, &out.join("manifest.json"))
}

fn sweep(ctx: &Ctx, ls_path: &Path, ml_path: &Path, val: &Path, grid: &str) -> CliResult<()> {
    let grid = parse_grid(grid)?;
    let ls = load(ls_path)?;
    let ml = load(ml_path)?;
    let (mcfg, labels) = checkpoint_model_config(&ml, ml_path)?;
    let v = read_corpus_file(val)?.remap_labels(&labels)?;
    let language = match ls.meta_value(crate::pipeline::META_LANGUAGE) {
        Some(l) => l.to_string(),
        None => match v.languages().as_slice() {
            [l] => l.clone(),
            _ => return Err(CliError::from(Error::Format("cannot tell the specialist's language".into()))),
        },
    };
    let v = v.filter_language(&language);
    let (result, merged) = alpha_sweep(&ls, &ml, &v, &grid, &mcfg)?;
    let out = ctx.out()?;
    write_atomic(&out.join("sweep.csv"), sweep_csv(&result).as_bytes())?;
    save(&merged, out.join("merged.ckpt"))?;
    let mut m = ctx.manifest("sweep");
    record_input(&mut m, ls_path)?;
    record_input(&mut m, ml_path)?;
    record_input(&mut m, val)?;
    m.details = serde_json::to_value(&result).map_err(|e| Error::Internal(e.to_string()))?;
    m.record_outputs(out, ["sweep.csv", "merged.ckpt"])?;
    println!("{language}\talpha={}\tval_f1={:.3}", result.chosen_alpha, result.chosen_val_f1);
    ctx.finish(m, &out.join("manifest.json"))
}

/// Train and validation corpora from `--train/--val`, `--data` (split 80-20)
/// or a synthetic source (its train side split 80-20).
fn train_val(
    ctx: &Ctx,
    m: &mut RunManifest,
    train: Option<&Path>,
    val: Option<&Path>,
    data: Option<&Path>,
    source: &DataSource,
    seed: u64,
) -> CliResult<(Corpus, Corpus)> {
    let spec = synth_spec(ctx, source)?;
    let pool = match (train, val, data, spec) {
        (Some(t), Some(v), None, None) => {
            record_input(m, t)?;
            record_input(m, v)?;
            return Ok((read_corpus_file(t)?, read_corpus_file(v)?));
        }
        (None, None, Some(d), None) => {
            record_input(m, d)?;
            read_corpus_file(d)?
        }
        (None, None, None, Some(spec)) => {
            record_spec(m, &spec);
            generate(&spec)?.train
        }
        _ => {
            return Err(CliError::Usage(
                "give exactly one of --train/--val, --data, --preset or --spec".into(),
            ))
        }
    };
    let split_seed = derive_seed(seed, "run-split", 0);
    m.seeds.insert("split".into(), split_seed);
    let mut parts = stratified_split(&pool, &[0.8, 0.2], StrataKey::LanguageLabel, split_seed)?;
    let v = parts.pop().unwrap();
    Ok((parts.pop().unwrap(), v))
}

fn run(ctx: &Ctx, train: Option<&Path>, val: Option<&Path>, data: Option<&Path>, source: &DataSource) -> CliResult<()> {
    let cfg = ctx.pipeline()?;
    let mut m = ctx.manifest("run");
    m.seeds.insert("seed".into(), cfg.seed);
    let (t, v) = train_val(ctx, &mut m, train, val, data, source, cfg.seed)?;
    ctx.note(format!("running pipeline on {} train / {} val examples", t.len(), v.len()));
    let model = run_langpaint(&t, &v, &cfg)?;
    let out = ctx.out()?;
    m.wall_time_secs = ctx.started.elapsed().as_secs_f64();
    save_run_dir(&model, out, m)?;
    for (lang, alpha) in model.chosen_alphas() {
        println!("{lang}\talpha={alpha}\tval_f1={:.3}", model.per_language[&lang].sweep.chosen_val_f1);
    }
    Ok(())
}

fn ensemble(
    ctx: &Ctx,
    train: Option<&Path>,
    dev: Option<&Path>,
    source: &DataSource,
    k: usize,
    member: &str,
) -> CliResult<()> {
    let cfg = ctx.pipeline()?;
    let mut m = ctx.manifest("ensemble");
    m.seeds.insert("seed".into(), cfg.seed);
    let spec = synth_spec(ctx, source)?;
    let corpus = match (train, spec) {
        (Some(t), None) => {
            record_input(&mut m, t)?;
            let mut c = read_corpus_file(t)?;
            if let Some(d) = dev {
                record_input(&mut m, d)?;
                c = c.concat(&read_corpus_file(d)?);
            }
            c
        }
        (None, Some(spec)) if dev.is_none() => {
            record_spec(&mut m, &spec);
            generate(&spec)?.train
        }
        _ => return Err(CliError::Usage("give --train [--dev], --preset or --spec".into())),
    };
    let options = EnsembleOptions {
        k,
        member_method: parse_method(member)?,
        ..EnsembleOptions::default()
    };
    ctx.note(format!("training {k}-member ensemble on {} examples", corpus.len()));
    let (ens, sizes) = build_ensemble(&corpus, &cfg, &options)?;
    m.wall_time_secs = ctx.started.elapsed().as_secs_f64();
    save_ensemble_dir(&ens, ctx.out()?, &sizes, m)?;
    Ok(())
}

fn predictor_for<'a>(loaded: &'a Loaded, method: Method) -> Box<dyn Predictor + 'a> {
    match loaded {
        Loaded::Run(r) => Box::new(r.view(method)),
        Loaded::Ensemble(e) => Box::new(e.as_ref().clone()),
    }
}

fn predict(
    _ctx: &Ctx,
    model: &Path,
    text: Option<&str>,
    language: Option<&str>,
    batch: Option<&Path>,
    method: &str,
) -> CliResult<()> {
    let method = parse_method(method)?;
    let loaded = load_model_dir(model)?;
    let p = predictor_for(&loaded, method);
    let line = |text: &str, lang: &str| -> CliResult<String> {
        let probs = p.predict_proba(text, lang)?;
        Ok(format!("{}\t{}", p.label_names()[argmax(&probs)], format_probs(&probs)))
    };
    match (text, language, batch) {
        (Some(t), Some(l), None) => println!("{}", line(t, l)?),
        (None, _, Some(b)) => {
            let mut rdr = csv::ReaderBuilder::new()
                .delimiter(if CorpusFormat::from_path(b) == CorpusFormat::Tsv { b'\t' } else { b',' })
                .from_path(b)
                .map_err(|e| Error::Format(format!("{}: {e}", b.display())))?;
            let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
            let col = |name: &str| {
                headers
                    .iter()
                    .position(|h| h == name)
                    .ok_or_else(|| Error::MissingColumn(name.to_string()))
            };
            let (ti, li) = (col("text")?, col("language")?);
            for (row, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(|e| Error::Parse {
                    row: row as u64 + 2,
                    message: e.to_string(),
                })?;
                let (t, l) = (rec.get(ti), rec.get(li));
                match (t, l) {
                    (Some(t), Some(l)) => println!("{}", line(t, l)?),
                    _ => {
                        return Err(CliError::from(Error::Parse {
                            row: row as u64 + 2,
                            message: "missing text or language".into(),
                        }))
                    }
                }
            }
        }
        _ => return Err(CliError::Usage("predict needs --text with --language, or --batch".into())),
    }
    Ok(())
}

fn eval(ctx: &Ctx, model: &Path, data: &Path, method: &str) -> CliResult<()> {
    let method = parse_method(method)?;
    let loaded = load_model_dir(model)?;
    let corpus = read_corpus_file(data)?;
    let p = predictor_for(&loaded, method);
    let mut report = evaluate(p.as_ref(), &corpus)?;
    report.meta.insert("model".into(), model.display().to_string());
    report.meta.insert("data".into(), data.display().to_string());
    report.meta.insert("data_sha256".into(), file_digest(data)?);
    let label = match loaded {
        Loaded::Run(_) => method.label().to_string(),
        Loaded::Ensemble(ref e) => format!("ensemble:{}", e.options.member_method.label()),
    };
    report.meta.insert("method".into(), label);
    let out = ctx.out()?;
    write_atomic(&out.join("eval.json"), &to_json(&report)?)?;
    print_eval(&report);
    Ok(())
}

fn print_eval(report: &EvalReport) {
    println!("{:<12} {:>8} {:>8} {:>6}", "language", "wF1", "mF1", "n");
    for (lang, s) in &report.per_language {
        println!("{lang:<12} {:>8.3} {:>8.3} {:>6}", s.weighted_f1, s.macro_f1, s.n);
    }
    let o = &report.overall;
    println!("{:<12} {:>8.3} {:>8.3} {:>6}", "overall", o.weighted_f1, o.macro_f1, o.n);
}

fn print_comparison(report: &ExperimentReport) {
    println!("{:<10} {:>15} {:>15} {:>15}", "language", "L-S", "M-L", "LangPAINT");
    for lang in report.languages() {
        let cells: Vec<String> = Method::ALL
            .iter()
            .map(|m| {
                let row = report
                    .comparison
                    .iter()
                    .find(|r| r.language == lang && r.method == m.label())
                    .expect("comparison row");
                format!("{:.3} ± {:.3}", row.mean_f1, row.std)
            })
            .collect();
        println!("{lang:<10} {:>15} {:>15} {:>15}", cells[0], cells[1], cells[2]);
    }
    for r in &report.alpha_summary {
        println!("{:<10} mean alpha {:.3} ± {:.3}", r.language, r.mean_alpha, r.std);
    }
}

fn experiment_spec(ctx: &Ctx, protocol: Protocol, runs: Option<usize>) -> CliResult<ExperimentSpec> {
    let cfg = ctx.pipeline()?;
    let seed = cfg.seed;
    let mut spec = ExperimentSpec::new(protocol, cfg, seed);
    if let Some(r) = runs {
        spec.runs = r;
    }
    Ok(spec)
}

fn finish_experiment(ctx: &Ctx, report: &ExperimentReport, mut m: RunManifest) -> CliResult<()> {
    m.seeds.insert("base_seed".into(), report.spec.base_seed);
    m.wall_time_secs = ctx.started.elapsed().as_secs_f64();
    experiments::write_outputs(report, ctx.out()?, m)?;
    if !ctx.g.quiet {
        print_comparison(report);
    }
    Ok(())
}

fn experiment_sink<'a>(ctx: &'a Ctx, base_seed: u64, save: bool) -> Option<Box<ModelSink<'a>>> {
    if !save {
        return None;
    }
    let out: PathBuf = ctx.g.out.clone();
    let threads = ctx.g.threads;
    Some(Box::new(move |r: usize, model: &LangPaintModel| {
        save_run_model(&out, r, base_seed + r as u64, model, threads)
    }))
}

fn exp1(
    ctx: &Ctx,
    source: &DataSource,
    train: Option<&Path>,
    test: Option<&Path>,
    runs: Option<usize>,
    save_models: bool,
) -> CliResult<()> {
    let spec = experiment_spec(ctx, Protocol::Exp1, runs)?;
    let mut m = ctx.manifest("exp1");
    let synth = synth_spec(ctx, source)?;
    let (pool, test) = match (train, test, synth) {
        (Some(t), Some(s), None) => {
            record_input(&mut m, t)?;
            record_input(&mut m, s)?;
            (read_corpus_file(t)?, read_corpus_file(s)?)
        }
        (None, None, Some(syn)) => {
            record_spec(&mut m, &syn);
            let c = generate(&syn)?;
            (c.train, c.test)
        }
        _ => return Err(CliError::Usage("exp1 needs --train/--test, --preset or --spec".into())),
    };
    ctx.note(format!("protocol 1: {} runs", spec.runs));
    let sink = experiment_sink(ctx, spec.base_seed, save_models);
    let report = run_experiment1_with(&pool, &test, &spec, sink.as_deref())?;
    finish_experiment(ctx, &report, m)
}

fn exp2(
    ctx: &Ctx,
    source: &DataSource,
    data: Option<&Path>,
    shifted: Option<&Path>,
    runs: Option<usize>,
    save_models: bool,
) -> CliResult<()> {
    let spec = experiment_spec(ctx, Protocol::Exp2, runs)?;
    let mut m = ctx.manifest("exp2");
    let synth = synth_spec(ctx, source)?;
    let (pool, shifted) = match (data, synth) {
        (Some(d), None) => {
            record_input(&mut m, d)?;
            let s = match shifted {
                Some(s) => {
                    record_input(&mut m, s)?;
                    Some(read_corpus_file(s)?)
                }
                None => None,
            };
            (read_corpus_file(d)?, s)
        }
        (None, Some(syn)) if shifted.is_none() => {
            record_spec(&mut m, &syn);
            let shift = presets::has_shift(&syn);
            let c = generate(&syn)?;
            (c.train, shift.then_some(c.test))
        }
        _ => return Err(CliError::Usage("exp2 needs --data [--shifted], --preset or --spec".into())),
    };
    ctx.note(format!("protocol 2: {} runs", spec.runs));
    let sink = experiment_sink(ctx, spec.base_seed, save_models);
    let report = run_experiment2_with(&pool, shifted.as_ref(), &spec, sink.as_deref())?;
    finish_experiment(ctx, &report, m)
}

fn read_curves(path: &Path, file_index: usize, rows: &mut Vec<(String, String, f64, f64)>) -> CliResult<()> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let headers = rdr.headers().map_err(|e| Error::Format(e.to_string()))?.clone();
    let expected: Vec<&str> = experiments::SWEEP_CURVES_HEADER.split(',').collect();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(CliError::from(Error::Format(format!(
            "{}: expected header `{}`",
            path.display(),
            experiments::SWEEP_CURVES_HEADER
        ))));
    }
    for (i, rec) in rdr.records().enumerate() {
        let row = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        let num = |j: usize| -> CliResult<f64> {
            rec.get(j).and_then(|s| s.parse().ok()).ok_or_else(|| {
                CliError::from(Error::Parse {
                    row,
                    message: format!("bad number in column {}", expected[j]),
                })
            })
        };
        rows.push((format!("{file_index}:{}", &rec[0]), rec[1].to_string(), num(2)?, num(3)?));
    }
    Ok(())
}

fn report(ctx: &Ctx, curves: &[PathBuf], evals: &[PathBuf]) -> CliResult<()> {
    if curves.is_empty() && evals.is_empty() {
        return Err(CliError::Usage("report needs --curves and/or --evals".into()));
    }
    let out = ctx.out()?;
    let mut m = ctx.manifest("report");
    let mut files = Vec::new();
    if !curves.is_empty() {
        let mut rows = Vec::new();
        for (i, c) in curves.iter().enumerate() {
            record_input(&mut m, c)?;
            read_curves(c, i, &mut rows)?;
        }
        let (alpha_rows, curve_rows) = summarize_curves(&rows);
        write_atomic(&out.join("alpha_summary.csv"), alpha_summary_csv(&alpha_rows).as_bytes())?;
        write_atomic(&out.join("mean_curves.csv"), mean_curves_csv(&curve_rows).as_bytes())?;
        files.extend(["alpha_summary.csv", "mean_curves.csv"]);
        for r in &alpha_rows {
            println!("{:<10} mean alpha {:.3} ± {:.3} ({} runs)", r.language, r.mean_alpha, r.std, r.runs);
        }
    }
    if !evals.is_empty() {
        let mut reports = Vec::new();
        for e in evals {
            record_input(&mut m, e)?;
            let bytes = fs::read(e).map_err(|err| Error::io(e, err))?;
            let r: EvalReport =
                serde_json::from_slice(&bytes).map_err(|err| Error::Format(format!("{}: {err}", e.display())))?;
            reports.push(r);
        }
        let agg = aggregate(&reports);
        write_atomic(&out.join("aggregate.json"), &to_json(&agg)?)?;
        files.push("aggregate.json");
        let mut langs: BTreeMap<&str, _> = BTreeMap::new();
        for (l, s) in &agg.per_language {
            langs.insert(l.as_str(), s);
        }
        for (l, s) in langs {
            println!("{l:<10} wF1 {:.3} ± {:.3}", s.weighted_f1.mean, s.weighted_f1.std);
        }
        println!("{:<10} wF1 {:.3} ± {:.3}", "overall", agg.overall.weighted_f1.mean, agg.overall.weighted_f1.std);
    }
    m.record_outputs(out, &files)?;
    ctx.finish(m, &out.join("manifest.json"))
}
