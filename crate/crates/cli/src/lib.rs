//! Configuration-driven experiments: resolve a config (optionally layered on
//! a preset), run the solver and particle systems, and write a summary, the
//! monitor CSV and snapshots into an output directory.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use knfp::fit::fit_loglog;
use knfp::fpe::{
    check_invariants, contraction_threshold, decay_rate, mild_residual, smallness_margin, smallness_product, solve,
    InitialData, InvariantReport, RunStatus, SolverConfig, SolverRun,
};
use knfp::grid::{write_snapshot, PhaseField};
use knfp::kernels::{Cutoff, KernelSpec};
use knfp::mckv::{chaos_distance, run_ensemble, write_particles, ForceMethod, Interaction, ParticleEnsemble, StepConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// A malformed or inconsistent configuration (exit status 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_ACCEPTANCE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default)]
    pub description: String,
    /// Path of a config this one is layered on, relative to this file.
    #[serde(default)]
    pub preset: Option<String>,
    pub solver: SolverConfig,
    pub initial: InitialData,
    #[serde(default)]
    pub particles: Option<ParticleBlock>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub accept: AcceptFlags,
}

fn default_force() -> ForceMethod {
    ForceMethod::Binned
}

fn default_substeps() -> usize {
    8
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleBlock {
    pub n: Vec<usize>,
    /// Cutoff widths to sweep; empty keeps the solver's kernel.
    #[serde(default)]
    pub eps: Vec<f64>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_force")]
    pub force: ForceMethod,
    /// Time step; defaults to the solver step.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// Write the final ensemble of the first seed for every `(eps, n)`.
    #[serde(default)]
    pub dump: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    pub mass: f64,
    pub l1: f64,
    pub linf: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { mass: 1e-10, l1: 1e-6, linf: 1e-6 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionCheck {
    pub ratio: f64,
    pub by_iteration: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecayCheck {
    pub channel: String,
    pub window: (f64, f64),
    pub slope: f64,
    pub tol: f64,
}

/// Acceptance suites evaluated when a run is started with `--accept`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceptFlags {
    #[serde(default)]
    pub invariants: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub mild_residual: Option<f64>,
    #[serde(default)]
    pub contraction: Option<ContractionCheck>,
    #[serde(default)]
    pub decay: Option<DecayCheck>,
    /// Median chaos distance strictly decreasing in `n`.
    #[serde(default)]
    pub chaos_trend: bool,
}

/// Command-line overrides.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub accept: bool,
    pub seed: Option<u64>,
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() && same_variant(slot, &v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

// An override that switches a tagged variant replaces the whole object.
fn same_variant(a: &Value, b: &Value) -> bool {
    ["kind", "family"].iter().all(|tag| match (a.get(*tag), b.get(*tag)) {
        (Some(x), Some(y)) => x == y,
        _ => true,
    })
}

fn read_layered(path: &Path, depth: usize) -> Result<Value> {
    if depth > 8 {
        return Err(config_error(format!("{}: presets nest more than 8 levels", path.display())));
    }
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut value: Value = serde_json::from_str(&text)
        .map_err(|e| config_error(format!("{}:{}:{}: {e}", path.display(), e.line(), e.column())))?;
    let Some(preset) = value.get("preset").and_then(Value::as_str).map(str::to_owned) else {
        return Ok(value);
    };
    let preset_path = path.parent().unwrap_or(Path::new(".")).join(&preset);
    if !preset_path.exists() {
        return Err(config_error(format!("{}: preset {preset} does not exist", path.display())));
    }
    let mut base = read_layered(&preset_path, depth + 1)?;
    if let Value::Object(m) = &mut value {
        m.remove("preset");
    }
    merge(&mut base, value);
    Ok(base)
}

/// Reads a config file with its preset chain resolved into one JSON value.
pub fn resolve_value(path: &Path) -> Result<Value> {
    read_layered(path, 0)
}

/// Parses a resolved value, reporting the offending field on failure.
pub fn parse_config(value: &Value, origin: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(value.clone())
        .map_err(|e| config_error(format!("{origin}: field `{}`: {}", e.path(), e.inner())))?;
    if cfg.name.trim().is_empty() {
        return Err(config_error(format!("{origin}: field `name` is empty")));
    }
    cfg.solver.validate().map_err(|e| config_error(format!("{origin}: field `solver`: {e}")))?;
    if let Some(p) = &cfg.particles {
        if p.n.is_empty() || p.seeds.is_empty() {
            return Err(config_error(format!("{origin}: field `particles`: empty n or seed list")));
        }
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Value)> {
    let value = resolve_value(path)?;
    let cfg = parse_config(&value, &path.display().to_string())?;
    Ok((cfg, value))
}

/// SHA-256 of the canonical JSON form of a resolved config.
pub fn config_hash(value: &Value) -> String {
    hex::encode(Sha256::digest(serde_json::to_vec(value).expect("json value serializes")))
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| anyhow!("writing {}: {}", path.display(), e.error))?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PicardSummary {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub ratios: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SmallnessSummary {
    pub product: f64,
    pub margin: f64,
    pub c0: f64,
    pub provenance: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParticleSummary {
    pub eps: Option<f64>,
    pub n: usize,
    pub median_l1: f64,
    pub median_w1: Option<f64>,
    pub l1: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub config_hash: String,
    pub status: RunStatus,
    pub diagnostic: Option<String>,
    pub wall_time: f64,
    pub mass_drift: f64,
    pub l1_excess: f64,
    pub linf_excess: f64,
    pub min_value: f64,
    pub picard: Option<PicardSummary>,
    pub mild_residual: Option<f64>,
    pub smallness: Option<SmallnessSummary>,
    pub decay_slope: Option<f64>,
    pub particles: Vec<ParticleSummary>,
    pub acceptance: Option<Vec<CheckResult>>,
}

impl RunSummary {
    pub fn exit_code(&self) -> i32 {
        if self.status == RunStatus::BlowUp {
            EXIT_RUNTIME
        } else if self.acceptance.as_ref().is_some_and(|c| c.iter().any(|c| !c.pass)) {
            EXIT_ACCEPTANCE
        } else {
            EXIT_PASS
        }
    }
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn with_eps(spec: &KernelSpec, eps: f64) -> KernelSpec {
    let cutoff = match spec.cutoff {
        Cutoff::Capped { .. } => Cutoff::Capped { eps },
        _ => Cutoff::Gaussian { eps },
    };
    spec.clone().with_cutoff(cutoff)
}

fn apply_seed(cfg: &mut ExperimentConfig, seed: u64) {
    fn reseed(data: &mut InitialData, seed: u64) {
        match data {
            InitialData::BandLimited { seed: s, .. } => *s = seed,
            InitialData::Sum { terms } => terms.iter_mut().enumerate().for_each(|(i, t)| reseed(t, seed + i as u64)),
            _ => {}
        }
    }
    reseed(&mut cfg.initial, seed);
    if let Some(p) = &mut cfg.particles {
        let k = p.seeds.len() as u64;
        p.seeds = (seed..seed + k).collect();
    }
}

struct ParticleRows {
    csv: String,
    summaries: Vec<ParticleSummary>,
    dumps: Vec<(String, Vec<u8>)>,
}

fn run_particles(block: &ParticleBlock, cfg: &ExperimentConfig, u0: &PhaseField, terminal: &PhaseField) -> Result<ParticleRows> {
    let mass = u0.total_mass();
    if !(mass > 0.0) || u0.min() < 0.0 {
        return Err(config_error("particles need a nonnegative initial density with positive mass"));
    }
    let solver = &cfg.solver;
    let dt = block.dt.unwrap_or_else(|| solver.step());
    let steps = (solver.horizon / dt).round() as usize;
    if steps == 0 || ((steps as f64) * dt - solver.horizon).abs() > 1e-9 * solver.horizon {
        return Err(config_error(format!("particles: dt = {dt} does not divide the horizon")));
    }
    let target = terminal.scaled(1.0 / mass);
    let eps_list: Vec<Option<f64>> =
        if block.eps.is_empty() { vec![None] } else { block.eps.iter().map(|&e| Some(e)).collect() };
    let mut csv = String::from("eps,n,seed,l1,w1\n");
    let mut summaries = Vec::new();
    let mut dumps = Vec::new();
    let step = StepConfig { substeps: block.substeps, ..StepConfig::new(solver.alpha, dt, block.force) };
    for eps in eps_list {
        let spec = eps.map_or_else(|| solver.kernel.clone(), |e| with_eps(&solver.kernel, e));
        let inter = Interaction::new(&spec.clone().with_strength(spec.strength * mass), &solver.grid)?;
        for &n in &block.n {
            let mut l1 = Vec::new();
            let mut w1 = Vec::new();
            for (k, &seed) in block.seeds.iter().enumerate() {
                let ens = ParticleEnsemble::sample_from(u0, n, seed)?;
                let end = run_ensemble(&ens, &inter, &step, steps)?;
                let d = chaos_distance(&end, &target)?;
                let eps_s = eps.map_or(String::new(), |e| format!("{e:e}"));
                let w1_s = d.w1.map_or(String::new(), |w| format!("{w:.12e}"));
                csv.push_str(&format!("{eps_s},{n},{seed},{:.12e},{w1_s}\n", d.l1));
                l1.push(d.l1);
                if let Some(w) = d.w1 {
                    w1.push(w);
                }
                if block.dump && k == 0 {
                    let mut buf = Vec::new();
                    write_particles(&end, &mut buf)?;
                    let tag = eps.map_or(String::new(), |e| format!("_eps{e}"));
                    dumps.push((format!("particles{tag}_n{n}.knpd"), buf));
                }
            }
            summaries.push(ParticleSummary {
                eps,
                n,
                median_l1: median(&l1),
                median_w1: if w1.is_empty() { None } else { Some(median(&w1)) },
                l1,
            });
        }
    }
    Ok(ParticleRows { csv, summaries, dumps })
}

fn acceptance(
    flags: &AcceptFlags,
    run: &SolverRun,
    inv: &InvariantReport,
    mild: Option<f64>,
    decay: Option<f64>,
    particles: &[ParticleSummary],
) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut check = |name: &str, value: f64, threshold: f64, pass: bool| {
        out.push(CheckResult { name: name.into(), pass, value, threshold });
    };
    if flags.invariants {
        let t = flags.tolerances;
        check("mass_drift", inv.mass_drift, t.mass, inv.mass_drift <= t.mass);
        check("l1_excess", inv.l1_excess, t.l1, inv.l1_excess <= t.l1);
        check("linf_excess", inv.linf_excess, t.linf, inv.linf_excess <= t.linf);
    }
    if let Some(tol) = flags.mild_residual {
        let v = mild.unwrap_or(f64::NAN);
        check("mild_residual", v, tol, v <= tol);
    }
    if let Some(c) = &flags.contraction {
        let ratios = run.picard.as_ref().map(|p| p.ratios.clone()).unwrap_or_default();
        // ratios[k] compares the differences of iterations k + 2 and k + 1
        let best = ratios.iter().take(c.by_iteration.saturating_sub(1)).copied().fold(f64::INFINITY, f64::min);
        check("contraction", best, c.ratio, best < c.ratio && run.status == RunStatus::Converged);
    }
    if let Some(d) = &flags.decay {
        let v = decay.unwrap_or(f64::NAN);
        check("decay_slope", v, d.slope, (v - d.slope).abs() <= d.tol);
    }
    if flags.chaos_trend {
        let medians: Vec<f64> = particles.iter().map(|p| p.median_l1).collect();
        let worst = medians.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
        check("chaos_trend", worst, 1.0, !medians.is_empty() && worst < 1.0);
    }
    out
}

/// Runs one experiment and writes its artifact tree. Returns the summary.
pub fn run_experiment(cfg: &ExperimentConfig, resolved: &Value, opts: &Overrides) -> Result<RunSummary> {
    let mut cfg = cfg.clone();
    if let Some(seed) = opts.seed {
        apply_seed(&mut cfg, seed);
    }
    let out_root = opts.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let dir = out_root.join(&cfg.name);
    fs::create_dir_all(&dir).map_err(|e| config_error(format!("output directory {}: {e}", dir.display())))?;
    let mut hashed = resolved.clone();
    if let (Some(seed), Value::Object(m)) = (opts.seed, &mut hashed) {
        m.insert("seed".into(), Value::from(seed));
    }
    let hash = config_hash(&hashed);

    let u0 = cfg.initial.build(&cfg.solver.grid).map_err(|e| config_error(format!("field `initial`: {e}")))?;
    let run = solve(&u0, &cfg.solver)?;
    let inv = check_invariants(&run)?;
    let min_value = run.monitors.channel("min").map_or(f64::NAN, |m| m.iter().copied().fold(f64::INFINITY, f64::min));
    let mild = if run.status == RunStatus::BlowUp || run.times.len() < 2 {
        None
    } else {
        mild_residual(&run, &cfg.solver, None).ok()
    };
    let smallness = match &cfg.solver.smallness {
        Some(ix) => Some(SmallnessSummary {
            product: smallness_product(&u0, &cfg.solver.kernel, &cfg.solver)?,
            margin: smallness_margin(&u0, &cfg.solver.kernel, &cfg.solver)?,
            c0: ix.c0,
            provenance: ix.provenance.clone(),
        }),
        None => None,
    };
    let decay = match &cfg.accept.decay {
        Some(d) if run.status != RunStatus::BlowUp => decay_rate(&run, &d.channel, d.window).ok().map(|f| f.slope),
        _ => None,
    };
    let mut particles = Vec::new();
    if let (Some(block), true) = (&cfg.particles, run.status != RunStatus::BlowUp) {
        let rows = run_particles(block, &cfg, &u0, run.terminal())?;
        write_atomic(&dir.join("particles.csv"), rows.csv.as_bytes())?;
        for (name, bytes) in rows.dumps {
            write_atomic(&dir.join(name), &bytes)?;
        }
        particles = rows.summaries;
    }
    let acceptance = opts.accept.then(|| acceptance(&cfg.accept, &run, &inv, mild, decay, &particles));

    write_atomic(&dir.join("monitors.csv"), run.monitors.to_csv().as_bytes())?;
    for (i, snap) in run.snapshots.iter().enumerate() {
        let mut buf = Vec::new();
        write_snapshot(snap, &mut buf)?;
        write_atomic(&dir.join("snapshots").join(format!("snap_{i:05}.knfp")), &buf)?;
    }
    let times: String = run.times.iter().enumerate().map(|(i, t)| format!("{i},{t:.12e}\n")).collect();
    write_atomic(&dir.join("snapshots").join("times.csv"), format!("index,t\n{times}").as_bytes())?;
    write_atomic(&dir.join("config.json"), serde_json::to_string_pretty(&hashed)?.as_bytes())?;

    let summary = RunSummary {
        name: cfg.name.clone(),
        config_hash: hash,
        status: run.status,
        diagnostic: run.diagnostic.clone(),
        wall_time: run.wall_time,
        mass_drift: inv.mass_drift,
        l1_excess: inv.l1_excess,
        linf_excess: inv.linf_excess,
        min_value,
        picard: run.picard.as_ref().map(|p| PicardSummary {
            iterations: p.iterations,
            residuals: p.residuals.clone(),
            ratios: p.ratios.clone(),
        }),
        mild_residual: mild,
        smallness,
        decay_slope: decay,
        particles,
        acceptance,
    };
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}

/// Loads and runs a config file.
pub fn run(path: &Path, opts: &Overrides) -> Result<RunSummary> {
    let (cfg, value) = load_config(path)?;
    run_experiment(&cfg, &value, opts)
}

fn set_path(value: &mut Value, path: &str, new: Value) -> Result<()> {
    let mut cur = value;
    let keys: Vec<&str> = path.split('.').collect();
    for (i, k) in keys.iter().enumerate() {
        let last = i + 1 == keys.len();
        cur = match cur {
            Value::Object(m) => {
                if last {
                    m.insert((*k).to_owned(), new);
                    return Ok(());
                }
                m.get_mut(*k).ok_or_else(|| config_error(format!("sweep parameter `{path}`: no field `{k}`")))?
            }
            Value::Array(a) => {
                let idx: usize = k.parse().map_err(|_| config_error(format!("sweep parameter `{path}`: `{k}` is not an index")))?;
                let len = a.len();
                let slot = a.get_mut(idx).ok_or_else(|| config_error(format!("sweep parameter `{path}`: index {idx} of {len}")))?;
                if last {
                    *slot = new;
                    return Ok(());
                }
                slot
            }
            _ => return Err(config_error(format!("sweep parameter `{path}`: `{k}` is not a container"))),
        };
    }
    Ok(())
}

fn get_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(value, |v, k| match v {
        Value::Object(m) => m.get(k),
        Value::Array(a) => k.parse::<usize>().ok().and_then(|i| a.get(i)),
        _ => None,
    })
}

/// Runs the experiment once per value of a dotted config parameter and
/// writes `sweep.csv` with the named (dotted) summary scalar per value and
/// the log-log slope of scalar against value when both are positive.
pub fn sweep(path: &Path, parameter: &str, values: &[Value], scalar: &str, opts: &Overrides) -> Result<String> {
    if values.is_empty() {
        return Err(config_error("sweep needs at least one value"));
    }
    let base = resolve_value(path)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (i, v) in values.iter().enumerate() {
        let mut value = base.clone();
        set_path(&mut value, parameter, v.clone())?;
        let mut cfg = parse_config(&value, &format!("{} [{parameter} = {v}]", path.display()))?;
        cfg.name = format!("{}/sweep_{i:03}", cfg.name);
        let summary = run_experiment(&cfg, &value, opts)?;
        let json = serde_json::to_value(&summary)?;
        let s = get_path(&json, scalar)
            .and_then(Value::as_f64)
            .ok_or_else(|| config_error(format!("summary has no numeric scalar `{scalar}`")))?;
        rows.push((v.clone(), s));
        summaries.push(summary);
    }
    let xs: Vec<f64> = rows.iter().filter_map(|(v, _)| v.as_f64()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let slope = if xs.len() == ys.len() && xs.len() >= 2 && xs.iter().chain(&ys).all(|v| *v > 0.0) {
        fit_loglog(&xs, &ys).map(|f| f.slope).ok()
    } else {
        None
    };
    let slope_s = slope.map_or(String::new(), |s| format!("{s:.6}"));
    let mut csv = format!("{parameter},{scalar},loglog_slope\n");
    for (v, s) in &rows {
        let v = match v {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        csv.push_str(&format!("{v},{s:.12e},{slope_s}\n"));
    }
    let name = parse_config(&base, &path.display().to_string())?.name;
    let out_root = opts.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    write_atomic(&out_root.join(name).join("sweep.csv"), csv.as_bytes())?;
    Ok(csv)
}

/// Result of a smallness-threshold bisection.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Calibration {
    pub scale: f64,
    pub product_at_unit_scale: f64,
    pub c0: f64,
    pub provenance: String,
}

/// Locates the Picard convergence flip along `lambda u0` and converts it to
/// a threshold for the smallness product.
pub fn calibrate(path: &Path, lo: f64, hi: f64, bisections: usize) -> Result<Calibration> {
    let (cfg, _) = load_config(path)?;
    if cfg.solver.smallness.is_none() {
        return Err(config_error("calibration needs `solver.smallness` indices"));
    }
    let u0 = cfg.initial.build(&cfg.solver.grid)?;
    let scale = contraction_threshold(&u0, &cfg.solver, lo, hi, bisections)?;
    let product = smallness_product(&u0, &cfg.solver.kernel, &cfg.solver)?;
    Ok(Calibration {
        scale,
        product_at_unit_scale: product,
        c0: scale * product,
        provenance: format!(
            "bisection of the Picard convergence flip of lambda * u0 over lambda in [{lo}, {hi}] \
             ({bisections} steps, {} iterations at tolerance {:e}) for {}",
            cfg.solver.picard_max_iters, cfg.solver.picard_tol, cfg.name
        ),
    })
}
