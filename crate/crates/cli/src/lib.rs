//! Command-line front end for steerlab.

pub mod service;

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use steerlab::curvegen::{self, GridSearchConfig, LengthBand, SelectionPolicy, TrialDocument, POLYLINE_POINTS};
use steerlab::fitting::{self, FitReport, FoldScheme};
use steerlab::fixtures::parse_trial_label;
use steerlab::inference::{self, Observation, RmDataset};
use steerlab::metrics::{self, Trajectory};
use steerlab::models::{self, FormId, ModelForm};
use steerlab::simulator::{self, CorpusConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Internal(_) => EXIT_INTERNAL,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "invalid input: {m}"),
            CliError::Internal(m) => write!(f, "internal error: {m}"),
        }
    }
}

impl From<steerlab::Error> for CliError {
    fn from(e: steerlab::Error) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

type CliResult<T> = Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

#[derive(Debug, Parser)]
#[command(name = "steerlab", version, about = "Steering-task tunnels, models and trajectory analytics")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search the sinusoid family for tunnels and assemble a trial set.
    Gen(GenArgs),
    /// Fit movement-time models to a features table.
    Fit(FitArgs),
    /// Cross-validate models over repetitions.
    Crossval(CrossvalArgs),
    /// Measure trajectory logs.
    Analyze(AnalyzeArgs),
    /// Repeated-measures ANOVA over a measures table.
    Anova(AnovaArgs),
    /// Generate a synthetic corpus of trajectory logs.
    Simulate(SimulateArgs),
    /// Model catalog.
    Models {
        #[command(subcommand)]
        command: ModelsCommand,
    },
    /// Run the local HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
enum ModelsCommand {
    List,
}

#[derive(Debug, Args)]
struct GenArgs {
    /// Target total curvature; repeat for several levels.
    #[arg(long = "k")]
    k: Vec<f64>,
    /// Admissible length band `LO:HI` in px; repeat for several levels.
    #[arg(long = "l-band", value_parser = parse_band)]
    l_band: Vec<LengthBand>,
    /// Periods searched, `LO:HI:STEP`.
    #[arg(long, value_parser = parse_periods)]
    periods: Option<Periods>,
    #[arg(long)]
    min_radius_factor: Option<f64>,
    /// Write every candidate instead of one trial per cell.
    #[arg(long)]
    all_candidates: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone)]
struct Periods(Vec<f64>);

#[derive(Debug, Args)]
struct FitArgs {
    /// CSV with trial_id,L,K[,nl],mt_mean.
    #[arg(long)]
    data: PathBuf,
    /// `all` or a comma-separated list of form ids.
    #[arg(long, default_value = "all")]
    models: String,
    /// Also fit each form without its intercept.
    #[arg(long)]
    no_intercept: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FoldKind {
    Contiguous,
    Random,
}

#[derive(Debug, Args)]
struct CrossvalArgs {
    /// CSV with trial_id,L,K[,nl],repetition,mt_ms.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "all")]
    models: String,
    #[arg(long, value_enum, default_value = "contiguous")]
    folds: FoldKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Trial set JSON.
    #[arg(long)]
    trials: PathBuf,
    /// Trajlog files or directories of `.trajlog` files.
    #[arg(long, num_args = 1.., required = true)]
    logs: Vec<PathBuf>,
    /// Measures CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-trial-type summary CSV.
    #[arg(long)]
    summary: Option<PathBuf>,
    /// Directory for per-trial heatmaps.
    #[arg(long)]
    heatmap_dir: Option<PathBuf>,
    /// Heatmap cell size, px.
    #[arg(long, default_value_t = 10.0)]
    cell: f64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Measure {
    Mt,
    Opm,
    #[value(name = "v_avg")]
    VAvg,
}

impl Measure {
    fn name(self) -> &'static str {
        match self {
            Measure::Mt => "mt",
            Measure::Opm => "opm",
            Measure::VAvg => "v_avg",
        }
    }
}

#[derive(Debug, Args)]
struct AnovaArgs {
    #[arg(long)]
    measures: PathBuf,
    #[arg(long, value_enum, default_value = "mt")]
    measure: Measure,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    trials: PathBuf,
    #[arg(long, default_value_t = 20)]
    participants: usize,
    #[arg(long, default_value_t = 15)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the logs.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    trials: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    #[arg(long, env = "STEERLAB_DATA_DIR", default_value = "steerlab-data")]
    data_dir: PathBuf,
}

fn parse_band(s: &str) -> Result<LengthBand, String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let lo: f64 = lo.trim().parse().map_err(|e| format!("{e}"))?;
    let hi: f64 = hi.trim().parse().map_err(|e| format!("{e}"))?;
    LengthBand::new(lo, hi).map_err(|e| e.to_string())
}

fn parse_periods(s: &str) -> Result<Periods, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{e}")))
        .collect::<Result<_, _>>()?;
    let [lo, hi, step] = parts[..] else {
        return Err("expected LO:HI:STEP".into());
    };
    if !(step > 0.0 && hi >= lo && lo > 0.0) {
        return Err("need 0 < LO <= HI and STEP > 0".into());
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok(Periods((0..=n).map(|i| lo + step * i as f64).collect()))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("steerlab: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Gen(a) => gen(a),
        Command::Fit(a) => fit(a),
        Command::Crossval(a) => crossval(a),
        Command::Analyze(a) => analyze(a),
        Command::Anova(a) => anova(a),
        Command::Simulate(a) => simulate(a),
        Command::Models { command: ModelsCommand::List } => models_list(),
        Command::Serve(a) => serve(a),
    }
}

fn read_input(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))?;
            }
            fs::write(p, text).map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_trials(path: &Path) -> CliResult<Vec<TrialDocument>> {
    Ok(curvegen::read_trial_set(&read_input(path)?)?)
}

fn parse_models(spec: &str) -> CliResult<Vec<ModelForm>> {
    if spec.trim().eq_ignore_ascii_case("all") {
        return Ok(ModelForm::standard_set());
    }
    let mut out = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let id: FormId = name.parse()?;
        let form = ModelForm::new(id);
        if !out.contains(&form) {
            out.push(form);
        }
    }
    if out.is_empty() {
        return Err(invalid("no models selected"));
    }
    Ok(out)
}

fn gen(a: GenArgs) -> CliResult<()> {
    let mut cfg = GridSearchConfig::default();
    if !a.k.is_empty() {
        if let Some(k) = a.k.iter().find(|k| !(k.is_finite() && **k > 0.0)) {
            return Err(invalid(format!("K target must be positive, got {k}")));
        }
        cfg.k_targets = a.k.clone();
    }
    if !a.l_band.is_empty() {
        cfg.length_bands = a.l_band.clone();
    }
    if let Some(p) = a.periods {
        cfg.grid.periods = p.0;
    }
    if let Some(f) = a.min_radius_factor {
        if !(f >= 0.0 && f.is_finite()) {
            return Err(invalid(format!("min radius factor must be >= 0, got {f}")));
        }
        cfg.min_radius_factor = f;
    }
    let report = curvegen::grid_search(&cfg);
    log::info!(
        "{} candidates, {} rejected as sharp, {} solver failures",
        report.candidates.len(),
        report.rejected_sharp,
        report.solver_failures.len()
    );
    let specs = if a.all_candidates {
        report.candidates
    } else {
        if !report.empty_cells.is_empty() {
            return Err(invalid(format!("no candidate for cells {}", report.empty_cells.join(", "))));
        }
        curvegen::assemble_trialset(
            &report.candidates,
            &cfg.length_bands,
            cfg.k_targets.len(),
            SelectionPolicy::default(),
        )?
    };
    let docs = specs
        .iter()
        .map(|s| s.to_document(POLYLINE_POINTS))
        .collect::<Result<Vec<_>, _>>()?;
    write_output(a.out.as_deref(), &(curvegen::write_trial_set(&docs)? + "\n"))
}

fn fit(a: FitArgs) -> CliResult<()> {
    let features = fitting::read_features_csv(read_input(&a.data)?.as_bytes())?;
    let mut forms = parse_models(&a.models)?;
    if a.no_intercept {
        let extra: Vec<ModelForm> = forms
            .iter()
            .filter_map(|f| ModelForm::without_intercept(f.form_id).ok())
            .collect();
        forms.extend(extra);
    }
    let has_nl = features.iter().all(|f| f.nl.is_some());
    forms.retain(|f| {
        let keep = has_nl || f.form_id != FormId::Nl;
        if !keep {
            log::warn!("skipping {}: the data has no nl column", f.label());
        }
        keep
    });
    let (fits, skipped) = fitting::fit_all(&forms, &features);
    if let Some((form, e)) = skipped.iter().find(|(_, e)| e.is_validation()) {
        return Err(invalid(format!("{}: {e}", form.label())));
    }
    for (form, e) in &skipped {
        log::warn!("{} not fitted: {e}", form.label());
    }
    if fits.is_empty() {
        return Err(CliError::Internal("no model could be fitted".into()));
    }
    let report = FitReport::from_fits(&fits)?;
    write_output(a.out.as_deref(), &(report.to_json()? + "\n"))
}

fn crossval(a: CrossvalArgs) -> CliResult<()> {
    let cells = fitting::read_repetitions_csv(read_input(&a.data)?.as_bytes())?;
    let forms = parse_models(&a.models)?;
    let scheme = match a.folds {
        FoldKind::Contiguous => FoldScheme::Contiguous,
        FoldKind::Random => FoldScheme::Random { seed: a.seed },
    };
    let has_nl = cells.iter().all(|c| c.features.nl.is_some());
    let mut reports = Vec::new();
    for form in forms.iter().filter(|f| has_nl || f.form_id != FormId::Nl) {
        reports.push(fitting::cross_validate(&cells, form, scheme)?);
    }
    let text = serde_json::to_string_pretty(&reports).map_err(|e| CliError::Internal(e.to_string()))?;
    write_output(a.out.as_deref(), &(text + "\n"))
}

fn collect_logs(paths: &[PathBuf]) -> CliResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut files: Vec<PathBuf> = fs::read_dir(p)
                .map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "trajlog"))
                .collect();
            files.sort();
            out.extend(files);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(invalid("no trajectory logs found"));
    }
    Ok(out)
}

fn analyze(a: AnalyzeArgs) -> CliResult<()> {
    let trials = read_trials(&a.trials)?;
    let files = collect_logs(&a.logs)?;
    let trajs = files
        .iter()
        .map(|f| {
            Trajectory::parse_trajlog(&read_input(f)?).map_err(|e| invalid(format!("{}: {e}", f.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let measures = metrics::analyze_corpus(&trajs, &trials)?;
    write_output(a.out.as_deref(), &metrics::write_measures_csv(&measures))?;
    let ids: Vec<String> = trials.iter().map(|d| d.trial_id.clone()).collect();
    if let Some(path) = &a.summary {
        let rows = metrics::summarize(&measures, &ids)?;
        write_output(Some(path), &metrics::write_summary_csv(&rows))?;
    }
    if let Some(dir) = &a.heatmap_dir {
        if !(a.cell > 0.0 && a.cell.is_finite()) {
            return Err(invalid(format!("cell size must be positive, got {}", a.cell)));
        }
        for doc in &trials {
            let group: Vec<Trajectory> = trajs
                .iter()
                .filter(|t| t.trial_id == doc.trial_id)
                .map(|t| if t.flipped { mirror(t) } else { t.clone() })
                .collect();
            if group.is_empty() {
                continue;
            }
            let hm = metrics::heatmap(&group, &doc.tunnel(false)?, a.cell)?;
            write_output(Some(&dir.join(format!("{}.csv", doc.trial_id))), &hm.to_csv())?;
            write_output(Some(&dir.join(format!("{}.json", doc.trial_id))), &(hm.sidecar_json()? + "\n"))?;
        }
    }
    Ok(())
}

// Reflects a flipped trajectory into the unflipped orientation.
fn mirror(t: &Trajectory) -> Trajectory {
    let mut out = t.clone();
    out.flipped = false;
    for s in &mut out.samples {
        s.y = -s.y;
    }
    out
}

fn anova(a: AnovaArgs) -> CliResult<()> {
    let rows = metrics::read_measures_csv(read_input(&a.measures)?.as_bytes())?;
    let mut obs = Vec::with_capacity(rows.len());
    for r in &rows {
        let (l, k) = parse_trial_label(&r.trial_id)
            .filter(|&(l, k)| l < 3 && k < 3)
            .ok_or_else(|| invalid(format!("trial id `{}` is not an L<l>-K<k> label", r.trial_id)))?;
        let value = match a.measure {
            Measure::Mt => r.mt_ms,
            Measure::Opm => r.opm,
            Measure::VAvg => r.v_avg,
        };
        obs.push(Observation {
            participant: r.participant_id.clone(),
            cell: 3 * l + k,
            value,
        });
    }
    let data = RmDataset::from_observations(vec!["L".into(), "K".into()], vec![3, 3], &obs)?;
    let report = inference::anova_report(a.measure.name(), &data)?;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Internal(e.to_string()))?;
    write_output(a.out.as_deref(), &(text + "\n"))
}

fn simulate(a: SimulateArgs) -> CliResult<()> {
    let trials = read_trials(&a.trials)?;
    let cfg = CorpusConfig {
        participants: a.participants,
        reps: a.reps,
        seed: a.seed,
        ..CorpusConfig::default()
    };
    if cfg.participants == 0 || cfg.reps == 0 {
        return Err(invalid("participants and reps must be positive"));
    }
    let trajs = simulator::simulate_corpus(&trials, &cfg)?;
    fs::create_dir_all(&a.out).map_err(|e| CliError::Internal(format!("{}: {e}", a.out.display())))?;
    for t in &trajs {
        let name = format!("{}_{}_r{:02}.trajlog", t.participant_id, t.trial_id, t.repetition);
        write_output(Some(&a.out.join(name)), &t.to_trajlog())?;
    }
    log::info!("wrote {} logs to {}", trajs.len(), a.out.display());
    Ok(())
}

fn models_list() -> CliResult<()> {
    let mut text = String::from("form_id\trequired_features\tformula\n");
    for e in models::catalog() {
        text.push_str(&format!("{}\t{}\t{}\n", e.form_id, e.required_features.join(","), e.formula));
    }
    write_output(None, &text)
}

fn serve(a: ServeArgs) -> CliResult<()> {
    let cfg = service::ServiceConfig {
        trials: read_trials(&a.trials)?,
        data_dir: a.data_dir,
        clock: service::system_clock(),
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::Internal(e.to_string()))?;
    rt.block_on(service::serve(cfg, &a.addr))?;
    Ok(())
}
