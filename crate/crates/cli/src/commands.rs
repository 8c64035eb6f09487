use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use odas_core::dataset::{read_annotations, read_corpus_dir, write_corpus_dir, Corpus};
use odas_core::detector::{read_predictions, write_predictions};
use odas_core::eval::{evaluate as evaluate_predictions, precision_recall_curves, write_curves_csv, write_report};
use odas_core::experiment::{detect as run_detector, run_ablation, synthesize, train_model, ExperimentConfig, Scorer, Threshold};
use odas_core::nn::gradcheck::GradCheckConfig;
use odas_core::nn::Checkpoint;
use odas_core::training::{check_all_losses, write_loss_log, Methods};
use odas_core::{EvalConfig, Error};

pub const SEED_ENV: &str = "ODAS_SEED";

#[derive(Debug)]
pub enum Failure {
    Input(String),
    Numerical(String),
}

impl Failure {
    pub fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_numerical() {
            Failure::Numerical(e.to_string())
        } else {
            Failure::Input(e.to_string())
        }
    }
}

/// Prefixes an error with the file it concerns.
fn at(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
    move |e| match Failure::from(e) {
        Failure::Input(m) => Failure::Input(format!("{}: {m}", path.display())),
        f => f,
    }
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Input(format!("{}: {e}", path.display()))
}

fn seed_override() -> Result<Option<u64>, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Failure::Input(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Reads and validates a config; `ODAS_SEED` replaces its seeds.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = fs::read_to_string(path).map_err(io_at(path))?;
    let mut cfg: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if let Some(seed) = seed_override()? {
        cfg = cfg.with_seed(seed);
    }
    cfg.validate().map_err(at(path))?;
    Ok(cfg)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(io_at(path))?))
}

fn load_corpus(dir: &Path) -> Result<Corpus, Failure> {
    read_corpus_dir(dir).map_err(at(dir))
}

pub fn config(out: Option<&Path>) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(&ExperimentConfig::reference()).map_err(Error::from)? + "\n";
    match out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes()).map_err(io_at(p))?;
            w.flush().map_err(io_at(p))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summarize(name: &str, c: &Corpus) -> String {
    let instances: usize = c.videos.iter().map(|v| v.instances.len()).sum();
    let seconds: f64 = c.videos.iter().map(|v| v.duration()).sum();
    format!("{name}: {} videos, {instances} action instances, {seconds:.1} s", c.len())
}

pub fn synth(config: &Path, out: &Path) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let (train, test) = synthesize(&cfg)?;
    for (name, c) in [("train", &train), ("test", &test)] {
        let dir = out.join(name);
        write_corpus_dir(c, &dir).map_err(at(&dir))?;
        println!("{}", summarize(name, c));
    }
    Ok(())
}

pub fn train(config: &Path, data: &Path, out: &Path, methods: Methods, loss_log: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let corpus = load_corpus(data)?;
    let trained = train_model(&corpus, &cfg.model, &cfg.train, methods)?;
    let mut w = create(out)?;
    w.write_all(&trained.checkpoint.to_bytes()).map_err(io_at(out))?;
    w.flush().map_err(io_at(out))?;
    let log_path = loss_log.map_or_else(|| default_loss_log(out), Path::to_path_buf);
    let mut lw = create(&log_path)?;
    write_loss_log(&mut lw, &trained.log).map_err(at(&log_path))?;
    lw.flush().map_err(io_at(&log_path))?;
    println!(
        "trained [{methods}] for {} iterations; checkpoint {}, losses {}",
        trained.log.len(),
        out.display(),
        log_path.display()
    );
    Ok(())
}

fn default_loss_log(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".losses.csv");
    out.with_file_name(name)
}

pub struct DetectArgs<'a> {
    pub config: &'a Path,
    /// `None` selects random guessing.
    pub model: Option<&'a Path>,
    pub streams: &'a Path,
    pub out: &'a Path,
    pub threshold: Threshold,
    pub stride: Option<usize>,
    pub train_split: Option<&'a Path>,
}

pub fn detect(a: DetectArgs<'_>) -> Result<(), Failure> {
    let mut cfg = load_config(a.config)?;
    if let Some(s) = a.stride {
        if s == 0 {
            return Err(Failure::Input("--stride must be at least 1".into()));
        }
        cfg.model.stride = s;
    }
    let checkpoint = a
        .model
        .map(|p| Checkpoint::load(p).map_err(at(p)))
        .transpose()?;
    let scorer = match &checkpoint {
        Some(c) => {
            let d = &c.discriminator;
            if d.feature_dim() != cfg.model.feature_dim || d.num_actions() != cfg.model.num_action_classes {
                return Err(Failure::Input(format!(
                    "checkpoint has {} features / {} classes, config expects {} / {}",
                    d.feature_dim(),
                    d.num_actions(),
                    cfg.model.feature_dim,
                    cfg.model.num_action_classes
                )));
            }
            Scorer::Model(d)
        }
        None => Scorer::Random { seed: cfg.train.seed },
    };
    if a.threshold == Threshold::Auto && a.train_split.is_none() {
        return Err(Failure::Input("--threshold auto needs --train-split".into()));
    }
    let train = a.train_split.map(load_corpus).transpose()?;
    let test = load_corpus(a.streams)?;
    let (theta, search, preds) = run_detector(scorer, a.threshold, train.as_ref(), &test, &cfg)?;
    if let Some(s) = &search {
        for (t, m) in &s.table {
            eprintln!("theta {t:.2}: average mAP {m:.4}");
        }
    }
    let mut w = create(a.out)?;
    write_predictions(&mut w, &preds).map_err(at(a.out))?;
    w.flush().map_err(io_at(a.out))?;
    println!(
        "threshold {theta:.2}, stride {}: {} predictions over {} videos -> {}",
        cfg.model.stride,
        preds.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}

pub struct EvaluateArgs<'a> {
    pub predictions: &'a Path,
    pub ground_truth: &'a Path,
    pub out: &'a Path,
    pub curves: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub num_classes: Option<usize>,
    pub offsets: Option<Vec<f64>>,
    pub depth: Option<f64>,
}

pub fn evaluate(a: EvaluateArgs<'_>) -> Result<(), Failure> {
    let mut eval = match a.config {
        Some(p) => load_config(p)?.eval_config(),
        None => EvalConfig::unit_offsets(0, 10),
    };
    if let Some(k) = a.num_classes {
        eval.num_classes = k;
    }
    if let Some(o) = a.offsets {
        eval.offset_thresholds = o;
    }
    if let Some(d) = a.depth {
        eval.ap_depth = d;
    }
    eval.validate()?;

    let file = File::open(a.predictions).map_err(io_at(a.predictions))?;
    let preds = read_predictions(BufReader::new(file)).map_err(at(a.predictions))?;
    let ann = read_annotations(a.ground_truth).map_err(at(a.ground_truth))?;
    for v in &ann.videos {
        v.validate(eval.num_classes).map_err(at(a.ground_truth))?;
    }
    let gts: Vec<_> = ann.videos.iter().flat_map(|v| v.ground_truths()).collect();

    let report = evaluate_predictions(&preds, &gts, &eval)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
    }
    write_report(a.out, &report).map_err(at(a.out))?;
    if let Some(path) = a.curves {
        let points = precision_recall_curves(&preds, &gts, &eval)?;
        let mut w = create(path)?;
        write_curves_csv(&mut w, &points).map_err(at(path))?;
        w.flush().map_err(io_at(path))?;
    }
    for m in &report.map_per_offset {
        println!("offset {:>5}: mAP {:.4}", m.offset, m.map);
    }
    println!("average mAP {:.4}", report.average_map);
    Ok(())
}

pub fn ablation(config: &Path, seeds: u64, out: Option<&Path>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let base = cfg.synth.seed;
    let seeds: Vec<u64> = (0..seeds).map(|i| base + i).collect();
    let a = run_ablation(&cfg, &seeds)?;
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    println!("{:<18} {:>7}  per seed", "methods", "median");
    println!("{:<18} {:>7.4}  {}", "random guess", odas_core::experiment::median(&a.random_guess), fmt(&a.random_guess));
    let mut rows = Vec::new();
    for (m, v) in &a.runs {
        let med = odas_core::experiment::median(v);
        println!("{:<18} {med:>7.4}  {}", m.to_string(), fmt(v));
        rows.push(serde_json::json!({ "methods": m.to_string(), "median": med, "average_map": v }));
    }
    if let Some(p) = out {
        let doc = serde_json::json!({
            "seeds": a.seeds,
            "random_guess": { "median": odas_core::experiment::median(&a.random_guess), "average_map": a.random_guess },
            "runs": rows,
        });
        let mut w = create(p)?;
        let text = serde_json::to_string_pretty(&doc).map_err(Error::from)? + "\n";
        w.write_all(text.as_bytes()).map_err(io_at(p))?;
        w.flush().map_err(io_at(p))?;
    }
    Ok(())
}

pub fn gradcheck(seed: u64, count: u64, step: f64, tolerance: f64, inject_fault: Option<usize>) -> Result<(), Failure> {
    if !(step > 0.0 && step.is_finite() && tolerance > 0.0 && tolerance.is_finite()) {
        return Err(Failure::Input("--step and --tolerance must be positive".into()));
    }
    let gc = GradCheckConfig {
        step,
        tolerance,
        inject_fault,
        ..GradCheckConfig::default()
    };
    println!("{:>6}  {:<14} {:>7} {:>11}  {:<24} result", "seed", "loss", "params", "max rel err", "worst parameter");
    let mut failed = Vec::new();
    for s in seed..seed + count {
        for c in check_all_losses(s, &gc)? {
            let worst = c
                .report
                .worst
                .as_ref()
                .map_or_else(|| "-".to_string(), |w| format!("{}[{}]", w.name, w.index));
            let verdict = if c.passed() {
                "PASS"
            } else if !c.isolated {
                "FAIL (gradient leaked into the other network)"
            } else {
                "FAIL"
            };
            println!(
                "{s:>6}  {:<14} {:>7} {:>11.3e}  {worst:<24} {verdict}",
                c.loss,
                c.report.checked,
                c.report.max_rel_error()
            );
            if !c.passed() {
                failed.push(format!("seed {s} {}: worst {worst} rel error {:.3e}", c.loss, c.report.max_rel_error()));
            }
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Numerical(format!("gradient check failed: {}", failed.join("; "))))
    }
}
