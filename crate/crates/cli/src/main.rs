use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crowdalign::config::RunConfig;
use crowdalign::dataset::{
    load_annotated, load_labels, load_unlabeled, save_annotated, save_labels, save_unlabeled,
};
use crowdalign::evalmetrics::{ranks, spearman, EvalResult};
use crowdalign::netcore::{predict_count, ModelParams};
use crowdalign::search::{run_search_with, train_arm, Arm, SearchEvent, SearchTrace};
use crowdalign::synthcrowd::{gen_source, gen_target};
use crowdalign::transform_tree::TransformSpec;
use crowdalign::Error;

#[derive(Parser)]
#[command(name = "crowdalign", version, about = "Domain-adaptive crowd counting on synthetic scenes")]
struct Cli {
    /// JSON run config; absent keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    /// Overrides `seeds.root`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the labeled source, unlabeled target and hidden target labels.
    GenData,
    /// Pretrain on the source and search for the best transform.
    Search,
    /// Retrain one ablation arm.
    Train {
        #[arg(long, default_value = "full")]
        arm: String,
        /// Transform JSON; defaults to the search result.
        #[arg(long)]
        transform: Option<PathBuf>,
    },
    /// Count with a checkpoint (or a directory of them) against labels.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Image directory; also the label source unless --hidden-labels is set.
        #[arg(long)]
        data: PathBuf,
        /// Directory of target label CSVs.
        #[arg(long)]
        hidden_labels: Option<PathBuf>,
        /// Output name under the eval directory.
        #[arg(long, default_value = "eval")]
        name: String,
    },
    /// Ablation and reward-vs-MAE tables from the search and eval outputs.
    Report,
}

/// Failure with the exit code it maps to.
struct Failure {
    code: u8,
    msg: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config(_)) { 2 } else { 1 };
        Failure { code, msg: e.to_string() }
    }
}

fn fail(msg: impl Into<String>) -> Failure {
    Failure { code: 1, msg: msg.into() }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Line logger: stderr plus `<run>/logs/<command>.log`. Timestamps live here only.
struct Log {
    start: Instant,
    file: Option<fs::File>,
}

impl Log {
    fn open(run: &Path, cmd: &str) -> Log {
        let dir = run.join("logs");
        let file = fs::create_dir_all(&dir)
            .ok()
            .and_then(|_| fs::OpenOptions::new().create(true).append(true).open(dir.join(format!("{cmd}.log"))).ok());
        Log {
            start: Instant::now(),
            file,
        }
    }

    fn line(&mut self, msg: &str) {
        let unix = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let l = format!("[{unix} +{:.1}s] {msg}", self.start.elapsed().as_secs_f64());
        eprintln!("{l}");
        if let Some(f) = &mut self.file {
            let _ = writeln!(f, "{l}");
        }
    }
}

/// Advisory lock on the run directory, released on drop.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(run: &Path) -> CliResult<RunLock> {
        fs::create_dir_all(run).map_err(|e| io_fail(run, e))?;
        let path = run.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(fail(format!(
                "{} is locked by another command; delete {} if none is running",
                run.display(),
                path.display()
            ))),
            Err(e) => Err(io_fail(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    fail(format!("io error on {}: {e}", path.display()))
}

fn write(path: &Path, text: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_fail(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_fail(path, e))
}

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_fail(path, e))
}

fn pretty(v: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_json(&read(p).map_err(|f| Failure { code: 2, ..f })?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds.root = s;
    }
    Ok(cfg)
}

struct Ctx {
    cfg: RunConfig,
    run: PathBuf,
    log: Log,
}

impl Ctx {
    fn dir(&self, sub: &str) -> PathBuf {
        self.run.join(sub)
    }

    /// Creates `dir` and echoes the effective config into it.
    fn out_dir(&self, dir: &Path) -> CliResult<()> {
        write(&dir.join("config.json"), self.cfg.to_json())
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    root_seed: u64,
    data_seed: u64,
    n_source: usize,
    n_target: usize,
    scene: &'a crowdalign::synthcrowd::SceneConfig,
    shift: &'a crowdalign::synthcrowd::DomainShift,
    splits: (f64, f64),
    source_heads: f64,
    target_heads: f64,
}

fn gen_data(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let dir = ctx.dir(&cfg.paths.data);
    let (scene, kernel) = (cfg.scene(), cfg.kernel());
    let source = gen_source(cfg.data.n_source, &scene, &kernel)?;
    let (target, hidden) = gen_target(
        cfg.data.n_target,
        &scene,
        &cfg.data.shift,
        cfg.splits(),
        &kernel,
        cfg.tree.theta_max,
    )?;
    for sub in ["source", "target", "target_hidden"] {
        let d = dir.join(sub);
        if d.exists() {
            fs::remove_dir_all(&d).map_err(|e| io_fail(&d, e))?;
        }
    }
    save_annotated(&dir.join("source"), &source)?;
    save_unlabeled(&dir.join("target"), &target)?;
    save_labels(&dir.join("target_hidden"), &hidden)?;
    let manifest = Manifest {
        root_seed: cfg.seeds.root,
        data_seed: cfg.data_seed(),
        n_source: source.len(),
        n_target: target.len(),
        scene: &scene,
        shift: &cfg.data.shift,
        splits: cfg.splits(),
        source_heads: source.counts().iter().sum(),
        target_heads: hidden.counts().iter().sum(),
    };
    write(&dir.join("manifest.json"), pretty(&manifest))?;
    ctx.out_dir(&dir)?;
    ctx.log.line(&format!("wrote {} source and {} target images to {}", source.len(), target.len(), dir.display()));
    Ok(())
}

fn search(ctx: &mut Ctx) -> CliResult<()> {
    let data = ctx.dir(&ctx.cfg.paths.data);
    let out = ctx.dir(&ctx.cfg.paths.search);
    let source = load_annotated(&data.join("source"), &ctx.cfg.kernel())?;
    let target = load_unlabeled(&data.join("target"))?;
    let scfg = ctx.cfg.search_config();
    let save = ctx.cfg.search.save_candidates;
    let ckpt = out.join("ckpt");
    if ckpt.exists() {
        fs::remove_dir_all(&ckpt).map_err(|e| io_fail(&ckpt, e))?;
    }
    let mut io_err: Option<Failure> = None;
    let log = &mut ctx.log;
    let res = run_search_with(&source, &target, &scfg, None, &mut |ev| match ev {
        SearchEvent::Pretrained(l) => log.line(&format!("pretrained {} steps", l.records.len())),
        SearchEvent::Candidate { round, trace, model } => {
            match (trace.reward, &trace.error) {
                (Some(r), _) => log.line(&format!(
                    "round {round} cand {}: p_g={:.3} scale={:.3} angle={:.2} reward={r:.4}",
                    trace.index, trace.spec.p_g, trace.spec.scale, trace.spec.angle_deg
                )),
                (None, e) => log.line(&format!("round {round} cand {} failed: {}", trace.index, e.as_deref().unwrap_or("?"))),
            }
            if let (true, Some(m)) = (save, model) {
                let p = ckpt.join(format!("round_{round}")).join(format!("cand_{}.bin", trace.index));
                if let Err(e) = write(&p, m.to_bytes()) {
                    io_err.get_or_insert(e);
                }
            }
        }
        SearchEvent::RoundDone(r) => log.line(&format!("round {} done, controller loss {:?}", r.round, r.controller_loss)),
    })?;
    if let Some(e) = io_err {
        return Err(e);
    }
    write(&out.join("trace.json"), pretty(&res.trace))?;
    write(&out.join("best_transform.json"), format!("{}\n", res.best.to_json()))?;
    write(&out.join("pretrained.bin"), res.pretrained.to_bytes())?;
    ctx.out_dir(&out)?;
    println!(
        "best transform {} reward {:.6}",
        res.best.to_json(),
        res.trace.best_reward.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn train(ctx: &mut Ctx, arm: &str, transform: Option<&Path>) -> CliResult<()> {
    let arm = Arm::parse(arm).ok_or_else(|| Failure {
        code: 2,
        msg: format!("unknown arm `{arm}`; expected one of no-adapt, data-only, feature-only, full"),
    })?;
    let data = ctx.dir(&ctx.cfg.paths.data);
    let search_dir = ctx.dir(&ctx.cfg.paths.search);
    let out = ctx.dir(&ctx.cfg.paths.train).join(arm.name());
    let spec = if arm.uses_transform() {
        let p = transform.map(Path::to_path_buf).unwrap_or_else(|| search_dir.join("best_transform.json"));
        TransformSpec::from_json(&read(&p)?, ctx.cfg.tree.theta_max)?
    } else {
        TransformSpec::identity()
    }
    .with_splits(ctx.cfg.tree.p_s, ctx.cfg.tree.p_pt);
    let source = load_annotated(&data.join("source"), &ctx.cfg.kernel())?;
    let target = load_unlabeled(&data.join("target"))?;
    let (model, log) = train_arm(&source, &target, arm, &spec, &ctx.cfg.search_config())?;
    write(&out.join("model.bin"), model.to_bytes())?;
    write(&out.join("train_log.csv"), log.to_csv())?;
    write(&out.join("transform.json"), format!("{}\n", spec.to_json()))?;
    ctx.out_dir(&out)?;
    ctx.log.line(&format!("trained {} for {} steps", arm.name(), log.records.len()));
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EvalEntry {
    checkpoint: String,
    result: EvalResult,
}

#[derive(Serialize, Deserialize)]
struct EvalFile {
    entries: Vec<EvalEntry>,
}

/// `.bin` files under `root` as (path relative to `root`, absolute path).
fn checkpoints(root: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    if root.is_file() {
        let name = root.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        return Ok(vec![(name, root.to_path_buf())]);
    }
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).map_err(|e| io_fail(&d, e))? {
            let p = e.map_err(|e| io_fail(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "bin") {
                let rel = p.strip_prefix(root).expect("under root");
                let rel = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
                out.push((rel, p));
            }
        }
    }
    out.sort();
    if out.is_empty() {
        return Err(fail(format!("no checkpoints under {}", root.display())));
    }
    Ok(out)
}

fn eval(ctx: &mut Ctx, checkpoint: &Path, data: &Path, hidden: Option<&Path>, name: &str) -> CliResult<()> {
    if name.is_empty() || name.contains(['/', '\\']) || name.starts_with('.') {
        return Err(Failure { code: 2, msg: format!("invalid eval name `{name}`") });
    }
    let (images, gts) = match hidden {
        Some(h) => {
            let t = load_unlabeled(data)?;
            let labels = load_labels(h)?;
            if labels.len() != t.len() {
                return Err(fail(format!(
                    "{} has {} label files for {} images",
                    h.display(),
                    labels.len(),
                    t.len()
                )));
            }
            (t.images, labels.counts())
        }
        None => {
            let s = load_annotated(data, &ctx.cfg.kernel()).map_err(|e| {
                fail(format!("missing labels for {} (pass --hidden-labels for target data): {e}", data.display()))
            })?;
            let gts = s.counts();
            (s.samples.into_iter().map(|x| x.image).collect(), gts)
        }
    };
    let mut entries = Vec::new();
    for (rel, path) in checkpoints(checkpoint)? {
        let p = ModelParams::load(&path)?;
        let preds = images
            .par_iter()
            .map(|i| predict_count(&p, i))
            .collect::<crowdalign::Result<Vec<_>>>()?;
        let result = EvalResult::new(&preds, &gts)?;
        ctx.log.line(&format!("{rel}: MAE {:.4} MSE {:.4}", result.mae, result.mse));
        entries.push(EvalEntry { checkpoint: rel, result });
    }
    let out = ctx.dir(&ctx.cfg.paths.eval);
    write(&out.join(format!("{name}.json")), pretty(&EvalFile { entries }))?;
    ctx.out_dir(&out)?;
    Ok(())
}

fn load_eval(path: &Path) -> CliResult<EvalFile> {
    if !path.exists() {
        return Err(fail(format!("missing input {}", path.display())));
    }
    serde_json::from_str(&read(path)?).map_err(|e| fail(format!("malformed {}: {e}", path.display())))
}

/// Reward and true MAE for every saved candidate found in both inputs.
fn reward_rows(trace: &SearchTrace, evals: &EvalFile) -> Vec<(usize, usize, TransformSpec, f64, f64)> {
    let mut rows = Vec::new();
    for r in &trace.rounds {
        for c in &r.candidates {
            let key = format!("round_{}/cand_{}.bin", r.round, c.index);
            if let (Some(w), Some(e)) = (c.reward, evals.entries.iter().find(|e| e.checkpoint == key)) {
                rows.push((r.round, c.index, c.spec, w, e.result.mae));
            }
        }
    }
    rows
}

fn report(ctx: &mut Ctx) -> CliResult<()> {
    let eval_dir = ctx.dir(&ctx.cfg.paths.eval);
    let trace_path = ctx.dir(&ctx.cfg.paths.search).join("trace.json");
    if !trace_path.exists() {
        return Err(fail(format!("missing input {}", trace_path.display())));
    }
    let trace: SearchTrace = serde_json::from_str(&read(&trace_path)?)
        .map_err(|e| fail(format!("malformed {}: {e}", trace_path.display())))?;
    let mut arms = Vec::new();
    for arm in Arm::ALL {
        let f = load_eval(&eval_dir.join(format!("{}.json", arm.name())))?;
        let e = f
            .entries
            .into_iter()
            .next()
            .ok_or_else(|| fail(format!("{}.json has no entries", arm.name())))?;
        arms.push((arm, e.result));
    }
    let cands = load_eval(&eval_dir.join("candidates.json"))?;
    let rows = reward_rows(&trace, &cands);

    let mut ablation = String::from("arm,data_alignment,feature_alignment,mae,mse\n");
    let mut md = String::from("# Report\n\n## Ablation\n\n| arm | data | feature | MAE | MSE |\n|---|---|---|---|---|\n");
    for (arm, r) in &arms {
        let (d, f) = (arm.uses_transform(), arm.uses_features());
        ablation.push_str(&format!("{},{d},{f},{},{}\n", arm.name(), r.mae, r.mse));
        let tick = |b: bool| if b { "yes" } else { "no" };
        md.push_str(&format!("| {} | {} | {} | {:.4} | {:.4} |\n", arm.name(), tick(d), tick(f), r.mae, r.mse));
    }

    let rewards: Vec<f64> = rows.iter().map(|r| r.3).collect();
    let neg_mae: Vec<f64> = rows.iter().map(|r| -r.4).collect();
    let rho = spearman(&rewards, &neg_mae).ok();
    let (rr, mr) = (ranks(&rewards), ranks(&neg_mae));
    let mut table = String::from("round,candidate,p_g,scale,angle_deg,reward,true_mae,reward_rank,neg_mae_rank\n");
    md.push_str("\n## Reward vs true MAE\n\n| round | cand | p_g | scale | angle | reward | true MAE | reward rank | -MAE rank |\n|---|---|---|---|---|---|---|---|---|\n");
    for (i, (round, k, s, w, m)) in rows.iter().enumerate() {
        table.push_str(&format!(
            "{round},{k},{},{},{},{w},{m},{},{}\n",
            s.p_g, s.scale, s.angle_deg, rr[i], mr[i]
        ));
        md.push_str(&format!(
            "| {round} | {k} | {:.3} | {:.3} | {:.2} | {w:.4} | {m:.4} | {} | {} |\n",
            s.p_g, s.scale, s.angle_deg, rr[i], mr[i]
        ));
    }
    match rho {
        Some(r) => md.push_str(&format!("\nSpearman(reward, -MAE) over {} candidates: {r:.4}\n", rows.len())),
        None => md.push_str(&format!("\nSpearman undefined over {} candidates\n", rows.len())),
    }
    let summary = json!({
        "ablation": arms.iter().map(|(a, r)| json!({"arm": a.name(), "mae": r.mae, "mse": r.mse})).collect::<Vec<_>>(),
        "candidates": rows.len(),
        "spearman_reward_vs_neg_mae": rho,
        "best_transform": trace.best_spec,
        "best_reward": trace.best_reward,
    });
    let out = ctx.dir(&ctx.cfg.paths.report);
    write(&out.join("ablation.csv"), ablation)?;
    write(&out.join("reward_vs_mae.csv"), table)?;
    write(&out.join("report.md"), md)?;
    write(&out.join("summary.json"), pretty(&summary))?;
    ctx.out_dir(&out)?;
    ctx.log.line(&format!("report written to {}", out.display()));
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| fail(format!("thread pool: {e}")))?;
    }
    let _lock = RunLock::acquire(&cli.out)?;
    let name = match &cli.cmd {
        Command::GenData => "gen-data",
        Command::Search => "search",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Report => "report",
    };
    let mut ctx = Ctx {
        cfg,
        log: Log::open(&cli.out, name),
        run: cli.out.clone(),
    };
    ctx.log.line(&format!("{name} started"));
    match &cli.cmd {
        Command::GenData => gen_data(&mut ctx),
        Command::Search => search(&mut ctx),
        Command::Train { arm, transform } => train(&mut ctx, arm, transform.as_deref()),
        Command::Eval {
            checkpoint,
            data,
            hidden_labels,
            name,
        } => eval(&mut ctx, checkpoint, data, hidden_labels.as_deref(), name),
        Command::Report => report(&mut ctx),
    }?;
    ctx.log.line(&format!("{name} finished"));
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
