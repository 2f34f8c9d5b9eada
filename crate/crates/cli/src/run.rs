use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsmec_core::agents::{train, Agent, Controller, EpisodeLog, Learner, LearnerKind, TrainOptions};
use rsmec_core::baselines::{eval_episodes, evaluate_policy, Policy, PolicySpec, PRESET_NAMES};
use rsmec_core::env::{trace_header, trace_record};
use rsmec_core::{Env, ExperimentConfig};
use serde_json::json;

use crate::output::{create_csv, read_rows, write_config, write_json, CsvOut, Provenance};
use crate::{Args, Axis, Mode};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("RSMEC_GIT_DESCRIBE"));

const METRICS_HEADER: [&str; 9] = ["policy", "axis", "value", "mean_delay", "std_delay", "episodes", "seed", "mean_return", "violations"];

pub fn run(args: &Args) -> Result<()> {
    let mut base = match &args.config {
        Some(p) => ExperimentConfig::load(p).with_context(|| format!("config {}", p.display()))?,
        None => ExperimentConfig::desk(),
    };
    if let Some(e) = args.episodes {
        base.agent.episodes = e;
        base.validate()?;
    }
    if args.mode != Mode::Sweep {
        ensure!(args.sweep_axis.is_none() && args.sweep_values.is_empty(), "--sweep-axis and --sweep-values need --mode sweep");
    }
    if args.mode != Mode::Train {
        ensure!(args.learner.is_none(), "--learner applies to train mode; eval and sweep take the learner from each policy");
    }
    ensure!(args.jobs >= 1, "--jobs must be >= 1");
    ensure!(args.eval_episodes >= 1, "--eval-episodes must be >= 1");
    let seeds = if args.seeds.is_empty() { vec![base.system.seed] } else { args.seeds.clone() };
    ensure!(!has_duplicates(&seeds), "--seeds contains duplicates");

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let prov = Provenance { version: VERSION.to_string(), config_hash: base.hash(), seeds: seeds.clone() };
    write_config(&args.out.join("config.txt"), &prov, &base.to_text())?;

    let mut manifest = json!({
        "mode": format!("{:?}", args.mode).to_lowercase(),
        "provenance": prov.json(),
        "config": "config.txt",
        "episodes": base.agent.episodes,
    });
    let files = match args.mode {
        Mode::Train => {
            manifest["learner"] = json!(args.learner.unwrap_or(LearnerKind::Cdeh).name());
            train_mode(args, &base, &prov)?
        }
        Mode::Eval => {
            let available = checkpoint_kinds(&args.checkpoint, &with_seed(&base, seeds[0]), seeds[0], None)?;
            let policies = resolve_policies(&args.policies, &available)?;
            manifest["policies"] = json!(names(&policies));
            manifest["eval_episodes"] = json!(args.eval_episodes);
            eval_mode(args, &base, &prov, &policies)?
        }
        Mode::Sweep => {
            let axis = args.sweep_axis.ok_or_else(|| anyhow!("--mode sweep needs --sweep-axis"))?;
            let values = sorted_values(&args.sweep_values)?;
            let available = if !args.checkpoint.is_empty() {
                let mut cfg = with_seed(&base, seeds[0]);
                apply_axis(&mut cfg, axis, values[0])?;
                checkpoint_kinds(&args.checkpoint, &cfg, seeds[0], Some(values[0]))?
            } else if args.policies.is_empty() {
                vec![LearnerKind::Cdeh]
            } else {
                vec![LearnerKind::Cdeh, LearnerKind::DqnOnly]
            };
            let policies = resolve_policies(&args.policies, &available)?;
            manifest["policies"] = json!(names(&policies));
            manifest["eval_episodes"] = json!(args.eval_episodes);
            manifest["sweep"] = json!({ "axis": axis.name(), "values": values });
            sweep_mode(args, &base, &prov, axis, &values, &policies)?
        }
    };
    manifest["files"] = json!(files);
    write_json(&args.out.join("manifest.json"), &manifest)
}

fn has_duplicates(seeds: &[u64]) -> bool {
    let mut s = seeds.to_vec();
    s.sort_unstable();
    s.windows(2).any(|w| w[0] == w[1])
}

fn sorted_values(values: &[f64]) -> Result<Vec<f64>> {
    ensure!(!values.is_empty(), "--mode sweep needs --sweep-values");
    ensure!(values.iter().all(|v| v.is_finite()), "sweep values must be finite");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    ensure!(v.windows(2).all(|w| w[0] < w[1]), "sweep values contain duplicates");
    Ok(v)
}

/// Explicit names, or every preset the available learners can serve.
fn resolve_policies(requested: &[String], available: &[LearnerKind]) -> Result<Vec<PolicySpec>> {
    let served = |p: &PolicySpec| !p.needs_agent() || available.contains(&p.learner);
    if requested.is_empty() {
        return Ok(PRESET_NAMES.iter().map(|n| PolicySpec::preset(n).expect("known preset")).filter(served).collect());
    }
    let specs = requested.iter().map(|n| PolicySpec::preset(n.trim())).collect::<Result<Vec<_>, _>>()?;
    if let Some(p) = specs.iter().find(|p| !served(p)) {
        bail!("policy `{}` has learned components and needs a --checkpoint of a {} agent", p.name, p.learner);
    }
    Ok(specs)
}

/// Trained agents of one run, at most one per learner kind.
#[derive(Default)]
struct Agents(Vec<Agent>);

impl Agents {
    fn get(&self, kind: LearnerKind) -> Option<&dyn Controller> {
        self.0.iter().find(|a| a.kind() == kind).map(|a| a as &dyn Controller)
    }

    fn kinds(&self) -> Vec<LearnerKind> {
        self.0.iter().map(Controller::kind).collect()
    }

    fn push(&mut self, agent: Agent) -> Result<()> {
        ensure!(self.get(agent.kind()).is_none(), "more than one --checkpoint holds a {} agent", agent.kind());
        self.0.push(agent);
        Ok(())
    }
}

fn load_agents(templates: &[String], cfg: &ExperimentConfig, seed: u64, value: Option<f64>) -> Result<Agents> {
    let mut agents = Agents::default();
    for t in templates {
        agents.push(load_agent(&checkpoint_path(t, seed, value), cfg)?)?;
    }
    Ok(agents)
}

/// Learner kinds behind the checkpoint templates for one run.
fn checkpoint_kinds(templates: &[String], cfg: &ExperimentConfig, seed: u64, value: Option<f64>) -> Result<Vec<LearnerKind>> {
    Ok(load_agents(templates, cfg, seed, value)?.kinds())
}

fn names(policies: &[PolicySpec]) -> Vec<String> {
    policies.iter().map(|p| p.name.clone()).collect()
}

fn with_seed(base: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut cfg = base.clone();
    cfg.system.seed = seed;
    cfg
}

fn apply_axis(cfg: &mut ExperimentConfig, axis: Axis, v: f64) -> Result<()> {
    let count = || -> Result<usize> {
        ensure!(v >= 1.0 && v.fract() == 0.0, "{} must be a positive integer, got {v}", axis.name());
        Ok(v as usize)
    };
    match axis {
        Axis::K => cfg.system.irs_elements = count()?,
        Axis::N => cfg.system.users = count()?,
        Axis::M => cfg.system.antennas = count()?,
        Axis::Pmax => cfg.system.p_max = v,
    }
    cfg.validate().with_context(|| format!("{} = {v}", axis.name()))?;
    Ok(())
}

fn checkpoint_path(template: &str, seed: u64, value: Option<f64>) -> PathBuf {
    let mut p = template.replace("{seed}", &seed.to_string());
    if let Some(v) = value {
        p = p.replace("{value}", &v.to_string());
    }
    PathBuf::from(p)
}

fn run_meta(cfg: &ExperimentConfig, seed: u64) -> serde_json::Value {
    json!({ "version": VERSION, "config_hash": cfg.hash(), "seed": seed })
}

fn load_agent(path: &Path, cfg: &ExperimentConfig) -> Result<Agent> {
    let (agent, extra) = Agent::load(path, &cfg.system, &cfg.agent).with_context(|| format!("checkpoint {}", path.display()))?;
    if extra["run"]["config_hash"].as_str().is_some_and(|h| h != cfg.hash()) {
        eprintln!("note: {} was trained under a different config", path.display());
    }
    Ok(agent)
}

fn rel(out: &Path, p: &Path) -> String {
    p.strip_prefix(out).unwrap_or(p).display().to_string()
}

/// Latest `ckpt_<e>.json` in `dir`.
fn latest_checkpoint(dir: &Path) -> Result<Option<(u64, PathBuf)>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best = None;
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(e) = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ckpt_"))
            .and_then(|n| n.strip_suffix(".json"))
            .and_then(|n| n.parse::<u64>().ok())
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| e > *b) {
            best = Some((e, path));
        }
    }
    Ok(best)
}

struct TrainPaths {
    agent: PathBuf,
    log: PathBuf,
    periodic: PathBuf,
}

/// Trains one agent; with `resume`, restarts from the latest periodic
/// checkpoint and keeps the log rows before it. The replay buffer is not
/// part of a checkpoint, so a resumed run refills it first.
fn train_one(kind: LearnerKind, cfg: &ExperimentConfig, seed: u64, paths: &TrainPaths, resume: bool, prov: &Provenance, label: &str) -> Result<Agent> {
    let mut env = Env::new(cfg.system.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = Agent::new(kind, &cfg.system, &cfg.agent, &mut rng)?;
    let total = cfg.agent.episodes as u64;
    let mut start = 0;
    let mut kept = Vec::new();
    if resume {
        if let Some((e, path)) = latest_checkpoint(&paths.periodic)? {
            agent = load_agent(&path, cfg)?;
            ensure!(agent.kind() == kind, "{} holds a {} agent, not {kind}", path.display(), agent.kind());
            start = e.min(total);
            rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(start);
            if paths.log.exists() {
                kept = read_rows(&paths.log)?
                    .into_iter()
                    .filter(|r| r.first().and_then(|v| v.parse::<u64>().ok()).is_some_and(|ep| ep < start))
                    .collect();
            }
            eprintln!("{label}: resuming at episode {start} from {}", path.display());
        }
    }

    let prov = Provenance { seeds: vec![seed], ..prov.clone() };
    let header: Vec<String> = EpisodeLog::header().iter().map(|s| s.to_string()).collect();
    let mut log = create_csv(&paths.log, &prov, &header)?;
    for row in &kept {
        log.write_record(row)?;
    }
    log.flush()?;

    if cfg.agent.checkpoint_every > 0 {
        std::fs::create_dir_all(&paths.periodic)?;
    }
    let opts = TrainOptions {
        episodes: start..total,
        schedule_episodes: total,
        checkpoint_dir: (cfg.agent.checkpoint_every > 0).then(|| paths.periodic.clone()),
        diagnostic_path: Some(paths.agent.with_file_name("diagnostic.json")),
        run_meta: run_meta(cfg, seed),
    };
    let mut write_err: Option<anyhow::Error> = None;
    let report_every = (total / 20).max(1);
    train(&mut env, &mut agent, &opts, &mut rng, |row| {
        if write_err.is_none() {
            if let Err(e) = write_log_row(&mut log, row) {
                write_err = Some(e);
            }
        }
        if (row.episode + 1) % report_every == 0 || row.episode + 1 == total {
            eprintln!("{label}: episode {}/{total} return {:.4} ({:.1}s)", row.episode + 1, row.ret, row.wall_secs);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e);
    }
    let mut meta = run_meta(cfg, seed);
    meta["next_episode"] = json!(total);
    agent.save(&paths.agent, json!({ "next_episode": total, "run": meta }))?;
    Ok(agent)
}

fn write_log_row(log: &mut CsvOut, row: &EpisodeLog) -> Result<()> {
    log.write_record(row.record())?;
    log.flush()?;
    Ok(())
}

fn train_mode(args: &Args, base: &ExperimentConfig, prov: &Provenance) -> Result<Vec<String>> {
    ensure!(args.checkpoint.is_empty() && args.policies.is_empty(), "--checkpoint and --policies apply to eval and sweep");
    let kind = args.learner.unwrap_or(LearnerKind::Cdeh);
    let mut files = Vec::new();
    for &seed in &prov.seeds {
        let cfg = with_seed(base, seed);
        let paths = TrainPaths {
            agent: args.out.join(format!("agent_seed{seed}.json")),
            log: args.out.join(format!("train_log_seed{seed}.csv")),
            periodic: args.out.join(format!("checkpoints_seed{seed}")),
        };
        train_one(kind, &cfg, seed, &paths, args.resume, prov, &format!("seed {seed}"))?;
        files.push(rel(&args.out, &paths.agent));
        files.push(rel(&args.out, &rsmec_core::nn::checkpoint::data_path(&paths.agent)));
        files.push(rel(&args.out, &paths.log));
    }
    Ok(files)
}

/// Metrics rows for every policy on one configuration.
fn evaluate_all(
    cfg: &ExperimentConfig,
    seed: u64,
    agents: &Agents,
    policies: &[PolicySpec],
    episodes: u64,
    trace: Option<(&Path, &Provenance, &str)>,
    (axis, value): (&str, &str),
) -> Result<(Vec<Vec<String>>, Vec<PathBuf>)> {
    let mut env = Env::new(cfg.system.clone());
    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for spec in policies {
        let agent = if spec.needs_agent() { agents.get(spec.learner) } else { None };
        let mut policy = Policy::new(spec.clone(), agent, &env, seed)?;
        let mut writer = match trace {
            Some((dir, prov, suffix)) => {
                let path = dir.join(format!("trace_{}{suffix}.csv", spec.name));
                let w = create_csv(&path, prov, &trace_header(cfg.system.users))?;
                traces.push(path);
                Some(w)
            }
            None => None,
        };
        let mut write_err = None;
        let m = evaluate_policy(&mut policy, &mut env, eval_episodes(episodes), |rec| {
            if let Some(w) = writer.as_mut() {
                if let Err(e) = w.write_record(trace_record(rec.episode, rec.t, &rec.outcome, rec.order_index)) {
                    write_err.get_or_insert(e);
                }
            }
        })?;
        if let Some(e) = write_err {
            return Err(e.into());
        }
        if let Some(mut w) = writer {
            w.flush()?;
        }
        rows.push(vec![
            m.policy,
            axis.to_string(),
            value.to_string(),
            format!("{:e}", m.mean_delay),
            format!("{:e}", m.std_delay),
            m.episodes.to_string(),
            seed.to_string(),
            format!("{:e}", m.mean_return),
            m.violations.to_string(),
        ]);
    }
    Ok((rows, traces))
}

fn metrics_header() -> Vec<String> {
    METRICS_HEADER.iter().map(|s| s.to_string()).collect()
}

fn eval_mode(args: &Args, base: &ExperimentConfig, prov: &Provenance, policies: &[PolicySpec]) -> Result<Vec<String>> {
    let metrics_path = args.out.join("metrics.csv");
    let mut metrics = create_csv(&metrics_path, prov, &metrics_header())?;
    let mut files = vec![rel(&args.out, &metrics_path)];
    let needs_agent = policies.iter().any(PolicySpec::needs_agent);
    for &seed in &prov.seeds {
        let cfg = with_seed(base, seed);
        let agents = if needs_agent { load_agents(&args.checkpoint, &cfg, seed, None)? } else { Agents::default() };
        let seed_prov = Provenance { seeds: vec![seed], ..prov.clone() };
        let suffix = format!("_seed{seed}");
        let trace = args.trace.then_some((args.out.as_path(), &seed_prov, suffix.as_str()));
        let (rows, traces) = evaluate_all(&cfg, seed, &agents, policies, args.eval_episodes, trace, ("none", ""))?;
        for r in rows {
            metrics.write_record(r)?;
        }
        files.extend(traces.iter().map(|p| rel(&args.out, p)));
    }
    metrics.flush()?;
    Ok(files)
}

struct PointOutput {
    rows: Vec<Vec<String>>,
    files: Vec<PathBuf>,
}

fn sweep_point(args: &Args, base: &ExperimentConfig, prov: &Provenance, axis: Axis, value: f64, seed: u64, policies: &[PolicySpec]) -> Result<PointOutput> {
    let mut cfg = with_seed(base, seed);
    apply_axis(&mut cfg, axis, value)?;
    let dir = args.out.join("points").join(format!("{}={value}_seed{seed}", axis.name()));
    std::fs::create_dir_all(&dir)?;
    let point_prov = Provenance { config_hash: cfg.hash(), seeds: vec![seed], ..prov.clone() };
    write_config(&dir.join("config.txt"), &point_prov, &cfg.to_text())?;
    let mut files = vec![dir.join("config.txt")];

    let needed: Vec<LearnerKind> = policies.iter().filter(|p| p.needs_agent()).map(|p| p.learner).collect();
    let agents = if needed.is_empty() {
        Agents::default()
    } else if !args.checkpoint.is_empty() {
        load_agents(&args.checkpoint, &cfg, seed, Some(value))?
    } else {
        let mut agents = Agents::default();
        for kind in [LearnerKind::Cdeh, LearnerKind::DqnOnly].into_iter().filter(|k| needed.contains(k)) {
            // The CDEH agent keeps the plain names.
            let prefix = if kind == LearnerKind::Cdeh { String::new() } else { format!("{kind}_") };
            let paths = TrainPaths {
                agent: dir.join(format!("{prefix}agent.json")),
                log: dir.join(format!("{prefix}train_log.csv")),
                periodic: dir.join(format!("{prefix}checkpoints")),
            };
            let label = format!("{}={value} seed {seed} {kind}", axis.name());
            agents.push(train_one(kind, &cfg, seed, &paths, args.resume, &point_prov, &label)?)?;
            files.extend([paths.agent.clone(), rsmec_core::nn::checkpoint::data_path(&paths.agent), paths.log]);
        }
        agents
    };
    let trace = args.trace.then_some((dir.as_path(), &point_prov, ""));
    let (rows, traces) = evaluate_all(&cfg, seed, &agents, policies, args.eval_episodes, trace, (axis.name(), &value.to_string()))?;
    files.extend(traces);
    Ok(PointOutput { rows, files })
}

/// Runs every `(value, seed)` point on a bounded pool of workers; rows come
/// out in value, seed, policy order whatever the pool size.
fn sweep_mode(args: &Args, base: &ExperimentConfig, prov: &Provenance, axis: Axis, values: &[f64], policies: &[PolicySpec]) -> Result<Vec<String>> {
    let points: Vec<(f64, u64)> = values.iter().flat_map(|&v| prov.seeds.iter().map(move |&s| (v, s))).collect();
    // Reject bad axis values before any training starts.
    for &(v, _) in &points {
        apply_axis(&mut base.clone(), axis, v)?;
    }
    let results: Mutex<Vec<Option<Result<PointOutput>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = args.jobs.min(points.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= points.len() {
                    break;
                }
                let (v, s) = points[i];
                let r = sweep_point(args, base, prov, axis, v, s, policies);
                let failed = r.is_err();
                results.lock().expect("results lock")[i] = Some(r);
                if failed {
                    // Let the other workers finish their current point only.
                    next.store(points.len(), Ordering::SeqCst);
                }
            });
        }
    });

    let metrics_path = args.out.join("metrics.csv");
    let mut metrics = create_csv(&metrics_path, prov, &metrics_header())?;
    let mut files = vec![rel(&args.out, &metrics_path)];
    for (i, r) in results.into_inner().expect("results lock").into_iter().enumerate() {
        let (v, s) = points[i];
        let out = r.ok_or_else(|| anyhow!("sweep stopped before {}={v} seed {s}", axis.name()))?.with_context(|| format!("{}={v} seed {s}", axis.name()))?;
        for row in out.rows {
            metrics.write_record(row)?;
        }
        files.extend(out.files.iter().map(|p| rel(&args.out, p)));
    }
    metrics.flush()?;
    Ok(files)
}
