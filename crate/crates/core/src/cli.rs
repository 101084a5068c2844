//! Command-line front end.
//!
//! Exit status: 0 on success, 2 on usage or config errors, 1 on runtime errors.
//! Diagnostics go to stderr and name the failing stage.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encode::{
    decode, density_matrix, encode, measure_row, CoefficientVector, Conditioning, EncodingScheme,
    NoiseModel, RowMeasurement, SchemeFile,
};
use crate::error::{Error, Result, StageExt};
use crate::experiments::{
    fmt_num, parse_initial, run_scenario, Scenario, ScenarioConfig, DEFAULT_SEED,
};
use crate::optics::{implied_extra_loss, photon_budget, PhotonBudget};
use crate::reconstruct::{
    plan_for_state, plan_runs, reconstruct_state, BranchSolver, MeasurementFile, MeasurementNoise,
    SimulatedExperiment,
};
use crate::walk::{
    coin_reduced_density, entanglement_entropy, evolve, position_distribution, spread_speed,
    CoinOperator,
};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "POLWALK_OUT";
const DEFAULT_OUT: &str = "polwalk-out";

#[derive(Debug, Parser)]
#[command(
    name = "polwalk",
    version,
    about = "Quantum walk with polarization-encoded positions"
)]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Output directory [default: $POLWALK_OUT or ./polwalk-out]
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evolve a walk and write its amplitudes and distribution.
    Walk(WalkArgs),
    /// Encode a coefficient vector and write the per-row ratios.
    Encode(EncodeArgs),
    /// Recover a coefficient vector from per-row ratios.
    Decode(DecodeArgs),
    /// Reconstruct a walk state from measured or simulated data.
    Reconstruct(ReconstructArgs),
    /// Fig. 3 tables: 2, 4 and 6 steps from (0.8|-1> + 0.6|1>)|0>.
    Fig3(ScenarioArgs),
    /// Fig. 4 table: 6 steps from (0.6|-2> + |0> + 0.8|2>)|0>/sqrt(2).
    Fig4(ScenarioArgs),
    /// Fig. 5 sweep: spread speed and coin entropy against alpha.
    Fig5(ScenarioArgs),
    /// Fig. 6(a) map: mean fidelity over (dtheta, dphi) under ratio noise.
    Fig6a(ScenarioArgs),
    /// Fig. 6(b): the 16-dimensional uniform state.
    Fig6b(ScenarioArgs),
    /// Photon budget of the looped setup.
    Budget(BudgetArgs),
}

#[derive(Debug, Args)]
pub struct WalkArgs {
    #[arg(long, default_value_t = 45.0)]
    pub psi: f64,
    /// Terms `amp:pos:c0|c1`, comma separated; amplitudes may be complex (`0.3-0.4j`).
    #[arg(long)]
    pub init: String,
    #[arg(long)]
    pub steps: usize,
}

#[derive(Debug, Args)]
pub struct SchemeArgs {
    /// Scheme JSON file; overrides the generator flags.
    #[arg(long)]
    pub scheme: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, default_value_t = 22.0)]
    pub delta_theta: f64,
    #[arg(long, default_value_t = 12.0)]
    pub delta_phi: f64,
}

impl SchemeArgs {
    fn load(&self, fallback_n: Option<usize>) -> Result<EncodingScheme> {
        if let Some(path) = &self.scheme {
            let f: SchemeFile = serde_json::from_str(&read(path)?)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            return f.try_into();
        }
        let n = self
            .n
            .or(fallback_n)
            .ok_or_else(|| Error::Parse("need --scheme or --n".into()))?;
        EncodingScheme::generated(n, self.delta_theta, self.delta_phi)
    }
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    /// JSON array of `[re, im]` coefficients.
    #[arg(long)]
    pub coeffs: PathBuf,
    #[command(flatten)]
    pub scheme: SchemeArgs,
}

#[derive(Debug, Args)]
pub struct DecodeArgs {
    /// File written by `encode` (or any `{"rows": [{"row", "R"}]}` document).
    #[arg(long)]
    pub measurements: PathBuf,
    #[command(flatten)]
    pub scheme: SchemeArgs,
}

#[derive(Debug, Args)]
pub struct ReconstructArgs {
    /// Measurement-data JSON; without it the experiment is simulated from `--init`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// True initial state (simulation input, and truth for the report).
    #[arg(long)]
    pub init: Option<String>,
    /// Initial support, e.g. `-1,1`; taken from `--init` when omitted.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub support: Option<Vec<i64>>,
    #[arg(long)]
    pub steps: usize,
    #[arg(long, default_value_t = 45.0)]
    pub psi: f64,
    #[arg(long, default_value_t = 0)]
    pub shots: u64,
    #[arg(long, default_value_t = 0.0)]
    pub noise_bound: f64,
    #[arg(long, value_enum, default_value_t = NoiseArg::Relative)]
    pub noise_model: NoiseArg,
    #[arg(long, value_enum, default_value_t = SolverArg::Reachable)]
    pub solver: SolverArg,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Also write the simulated measurements in the data-file format.
    #[arg(long)]
    pub save_data: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum NoiseArg {
    Relative,
    Componentwise,
}

impl From<NoiseArg> for NoiseModel {
    fn from(n: NoiseArg) -> Self {
        match n {
            NoiseArg::Relative => NoiseModel::Relative,
            NoiseArg::Componentwise => NoiseModel::Componentwise,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SolverArg {
    /// Joint solve inside the reachable subspace.
    Reachable,
    /// One null-space solve per branch.
    PerBranch,
}

impl From<SolverArg> for BranchSolver {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Reachable => BranchSolver::Reachable,
            SolverArg::PerBranch => BranchSolver::PerBranch,
        }
    }
}

/// Shared flags of the figure subcommands; each overrides the config file.
#[derive(Debug, Args)]
pub struct ScenarioArgs {
    /// JSON config; its `scenario` must match the subcommand.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    /// Raise trials to 1000.
    #[arg(long)]
    pub paper_scale: bool,
    #[arg(long)]
    pub shots: Option<u64>,
    #[arg(long)]
    pub noise_bound: Option<f64>,
    #[arg(long, value_enum)]
    pub noise_model: Option<NoiseArg>,
    #[arg(long, value_enum)]
    pub solver: Option<SolverArg>,
    #[arg(long)]
    pub psi: Option<f64>,
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub steps: Option<Vec<usize>>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub dimension: Option<usize>,
    /// Fig. 6(a): skip the second noise model.
    #[arg(long)]
    pub single_model: bool,
    /// Fig. 6(a): extra grid resolutions, e.g. `24,48`.
    #[arg(long, value_delimiter = ',')]
    pub grid_sensitivity: Option<Vec<usize>>,
}

impl ScenarioArgs {
    pub fn config(&self, scenario: Scenario) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let cfg = ScenarioConfig::from_json(&read(path)?)
                    .map_err(|e| Error::Parse(format!("{}: {}", path.display(), e.root())))?;
                if cfg.scenario != scenario {
                    return Err(Error::Parse(format!(
                        "{}: scenario is {}, expected {}",
                        path.display(),
                        cfg.scenario.name(),
                        scenario.name()
                    )));
                }
                cfg
            }
            None => ScenarioConfig::for_scenario(scenario),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if self.paper_scale {
            cfg = cfg.paper_scale();
        }
        if let Some(v) = self.shots {
            cfg.shots_per_basis = v;
        }
        if let Some(v) = self.noise_bound {
            cfg.noise_bound = v;
        }
        if let Some(v) = self.noise_model {
            cfg.noise_model = v.into();
        }
        if let Some(v) = self.solver {
            cfg.solver = v.into();
        }
        if let Some(v) = self.psi {
            cfg.psi_deg = v;
        }
        if let Some(v) = &self.init {
            cfg.initial = Some(v.clone());
        }
        if let Some(v) = &self.steps {
            cfg.steps = v.clone();
        }
        if let Some(v) = self.grid {
            cfg.grid = v;
        }
        if let Some(v) = self.dimension {
            cfg.dimension = v;
        }
        if self.single_model {
            cfg.compare_noise_models = false;
        }
        if let Some(v) = &self.grid_sensitivity {
            cfg.grid_sensitivity = v.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct BudgetArgs {
    /// Fraction kept by the loop coupler per round trip.
    #[arg(long, default_value_t = 0.5)]
    pub coupler: f64,
    /// Total loss per two steps, coupler included.
    #[arg(long, default_value_t = 0.7)]
    pub total_loss: f64,
    #[arg(long, default_value_t = 2.0)]
    pub steps: f64,
    /// Source rate in events per second.
    #[arg(long, default_value_t = 1.0)]
    pub rate: f64,
    #[arg(long, default_value_t = 1.0)]
    pub efficiency: f64,
    /// Solve for the extra loss giving this detected rate instead.
    #[arg(long)]
    pub target: Option<f64>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn out_dir(cli_out: &Option<PathBuf>) -> PathBuf {
    cli_out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

/// One encoded row in the `encode` output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedRow {
    pub row: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<[f64; 2]>,
    /// `null` when `C1 ~ 0`.
    #[serde(rename = "R")]
    pub r: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EncodedFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme: Option<SchemeFile>,
    pub rows: Vec<EncodedRow>,
}

#[derive(Debug, Serialize)]
struct Decoded {
    coefficients: CoefficientVector,
    conditioning: Conditioning,
}

fn pair(z: Complex64) -> [f64; 2] {
    [z.re, z.im]
}

fn run_walk(args: &WalkArgs, dir: &Path) -> Result<Vec<PathBuf>> {
    let parsed = parse_initial(&args.init)?;
    if let Some(w) = parsed.norm_warning() {
        eprintln!("warning: {w}");
    }
    let coin = CoinOperator::new(args.psi)?;
    let state = evolve(&parsed.state, &coin, args.steps);
    let dist = position_distribution(&state);
    let path = dir.join(format!("walk_n{}.csv", args.steps));
    let mut text = String::from("position,a_re,a_im,b_re,b_im,probability\n");
    for (x, a, b) in state.iter() {
        let cells = [a.re, a.im, b.re, b.im, dist.get(x)].map(fmt_num).join(",");
        text.push_str(&format!("{x},{cells}\n"));
    }
    write(&path, &text)?;
    let d0 = position_distribution(&parsed.state);
    let summary = serde_json::json!({
        "steps": args.steps,
        "psi_deg": args.psi,
        "std_dev": dist.std_dev(),
        "spread_speed": if args.steps > 0 { Some(spread_speed(&dist, &d0, args.steps)?) } else { None },
        "entropy": entanglement_entropy(&coin_reduced_density(&state))?,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(vec![path])
}

fn run_encode(args: &EncodeArgs, dir: &Path) -> Result<Vec<PathBuf>> {
    let raw: Vec<[f64; 2]> = serde_json::from_str(&read(&args.coeffs)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", args.coeffs.display())))?;
    let coeffs = CoefficientVector::from(raw).normalized()?;
    let scheme = args.scheme.load(Some(coeffs.len())).stage("scheme")?;
    let rows = (0..scheme.num_rows())
        .map(|j| {
            let q = encode(&coeffs, &scheme, j)?;
            let r = match measure_row(&density_matrix(&q)) {
                RowMeasurement::Ratio(r) => Some(pair(r)),
                RowMeasurement::VanishingC1 => None,
            };
            Ok(EncodedRow {
                row: j,
                c0: Some(pair(q.c0)),
                c1: Some(pair(q.c1)),
                r,
            })
        })
        .collect::<Result<Vec<_>>>()
        .stage("encode")?;
    let file = EncodedFile {
        scheme: Some(scheme.to_file()),
        rows,
    };
    let path = dir.join("encoded.json");
    write(&path, &serde_json::to_string_pretty(&file)?)?;
    Ok(vec![path])
}

fn run_decode(args: &DecodeArgs, dir: &Path) -> Result<Vec<PathBuf>> {
    let file: EncodedFile = serde_json::from_str(&read(&args.measurements)?)
        .map_err(|e| Error::Parse(format!("{}: {e}", args.measurements.display())))?;
    let scheme = match (
        &file.scheme,
        args.scheme.scheme.is_some() || args.scheme.n.is_some(),
    ) {
        (Some(s), false) => EncodingScheme::try_from(s.clone())?,
        _ => args.scheme.load(None)?,
    };
    let meas: Vec<(usize, RowMeasurement)> = file
        .rows
        .iter()
        .map(|r| {
            let m = match r.r {
                Some([re, im]) => RowMeasurement::Ratio(Complex64::new(re, im)),
                None => RowMeasurement::VanishingC1,
            };
            (r.row, m)
        })
        .collect();
    let (coefficients, conditioning) = decode(&meas, &scheme).stage("decode")?;
    let path = dir.join("decoded.json");
    write(
        &path,
        &serde_json::to_string_pretty(&Decoded {
            coefficients,
            conditioning,
        })?,
    )?;
    Ok(vec![path])
}

fn run_reconstruct(args: &ReconstructArgs, dir: &Path) -> Result<Vec<PathBuf>> {
    let initial = match &args.init {
        Some(s) => {
            let p = parse_initial(s)?;
            if let Some(w) = p.norm_warning() {
                eprintln!("warning: {w}");
            }
            Some(p.state)
        }
        None => None,
    };
    let plan = match (&args.support, &initial) {
        (Some(support), _) => plan_runs(args.steps, support, args.psi)?,
        (None, Some(s)) => plan_for_state(s, args.steps, args.psi)?,
        (None, None) => return Err(Error::Parse("need --init or --support".into())),
    }
    .with_initial_distribution_opt(initial.as_ref().map(position_distribution))
    .with_solver(args.solver.into());
    let truth = match &initial {
        Some(s) => Some(evolve(s, &CoinOperator::new(args.psi)?, args.steps)),
        None => None,
    };
    let mut written = Vec::new();
    let report = match &args.data {
        Some(path) => {
            let mut data: MeasurementFile = serde_json::from_str(&read(path)?)
                .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
            let plan = plan.with_angles(data.angles());
            reconstruct_state(&mut data, &plan, truth.as_ref())?
        }
        None => {
            let Some(init) = initial else {
                return Err(Error::Parse("simulation needs --init".into()));
            };
            let noise = MeasurementNoise {
                shots_per_basis: args.shots,
                ratio_bound: args.noise_bound,
                noise_model: args.noise_model.into(),
                ..MeasurementNoise::default()
            };
            let mut sim = SimulatedExperiment::new(
                init,
                args.psi,
                args.steps,
                noise,
                ChaCha8Rng::seed_from_u64(args.seed),
            );
            // same call order as reconstruct_state, so the replay sees the same draws
            let mut replay = sim.clone();
            let report = reconstruct_state(&mut sim, &plan, truth.as_ref())?;
            if args.save_data {
                let data = MeasurementFile::record(&mut replay, &plan, report.theta_star_deg)
                    .stage("record data")?;
                let path = dir.join("measurements.json");
                write(&path, &serde_json::to_string_pretty(&data)?)?;
                written.push(path);
            }
            report
        }
    };
    let path = dir.join("reconstruction.json");
    write(&path, &serde_json::to_string_pretty(&report)?)?;
    written.push(path);
    Ok(written)
}

fn run_budget(args: &BudgetArgs, dir: &Path) -> Result<Vec<PathBuf>> {
    let b = PhotonBudget::from_total_loss(
        args.coupler,
        args.total_loss,
        args.rate,
        args.efficiency,
        args.steps,
    )?;
    let value = match args.target {
        Some(t) => {
            let extra = implied_extra_loss(&b, t)?;
            let solved = PhotonBudget {
                extra_loss: extra,
                ..b
            };
            serde_json::json!({
                "budget": solved,
                "target_rate": t,
                "implied_extra_loss": extra,
                "survival_per_two_steps": solved.survival_per_two_steps(),
            })
        }
        None => serde_json::json!({
            "budget": b,
            "survival_per_two_steps": b.survival_per_two_steps(),
            "detected_rate": photon_budget(&b)?,
            "detected_fraction": photon_budget(&PhotonBudget { source_rate: 1.0, ..b })?,
        }),
    };
    let text = serde_json::to_string_pretty(&value)?;
    println!("{text}");
    let path = dir.join("budget.json");
    write(&path, &text)?;
    Ok(vec![path])
}

fn run_figure(
    args: &ScenarioArgs,
    scenario: Scenario,
    cli_out: &Option<PathBuf>,
) -> Result<Vec<PathBuf>> {
    let cfg = args.config(scenario)?;
    let dir = cli_out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| out_dir(&None));
    let out = run_scenario(&cfg)?;
    out.write(&cfg, &dir).stage("write output")
}

fn dispatch(cli: &Cli) -> Result<Vec<PathBuf>> {
    let dir = out_dir(&cli.out);
    match &cli.command {
        Command::Walk(a) => run_walk(a, &dir).stage("walk"),
        Command::Encode(a) => run_encode(a, &dir),
        Command::Decode(a) => run_decode(a, &dir),
        Command::Reconstruct(a) => run_reconstruct(a, &dir),
        Command::Fig3(a) => run_figure(a, Scenario::Fig3, &cli.out),
        Command::Fig4(a) => run_figure(a, Scenario::Fig4, &cli.out),
        Command::Fig5(a) => run_figure(a, Scenario::Fig5, &cli.out),
        Command::Fig6a(a) => run_figure(a, Scenario::Fig6a, &cli.out),
        Command::Fig6b(a) => run_figure(a, Scenario::Fig6b, &cli.out),
        Command::Budget(a) => run_budget(a, &dir),
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let work = || dispatch(&cli);
    let result = match cli.threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(work),
            Err(e) => Err(Error::InvalidParameter(e.to_string())),
        },
        None => work(),
    };
    match result {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e.root(), Error::Parse(_)) {
                2
            } else {
                1
            }
        }
    }
}
