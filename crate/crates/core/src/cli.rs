//! Command-line front end: config-driven design, certification and oracle runs, plus built-in demos.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::{info, warn};

use crate::certify::{build_certificate, CertifyOptions};
use crate::config::{
    BuiltinName, BuiltinPlant, CertificationConfig, Horizon, LambdaSpec, OutputConfig,
    OutputFormat, PenaltyConfig, PenaltyName, PlantSource, ProblemConfig, RunConfig,
    CONFIG_VERSION,
};
use crate::error::{Result, RfdError};
use crate::firlin::{qi_check, FirLayout, FirMatrix, TapConvention};
use crate::penalties::{GroupStructure, PenaltySpec};
use crate::plantmaps::{ProblemBuilder, Setting};
use crate::report::{OracleReport, Provenance, Report, ReportRow};
use crate::solver::{
    brute_force_oracle, lambda_sweep, restricted_least_squares_groups, support_count, EvalProblem,
    RfdProblem, SolveOptions, ORACLE_CAP,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_UNCONVERGED: i32 = 3;
pub const EXIT_CAP: i32 = 4;

/// Seed used by `rfd demo network11` when none is given.
pub const DEFAULT_DEMO_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(
    name = "rfd",
    version,
    about = "Controller architecture co-design by atomic-norm regularization"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, clap::Args)]
pub struct OutputArgs {
    /// Output directory (overrides the config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Report format (overrides the config).
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
    Both,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
            FormatArg::Both => OutputFormat::Both,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DemoName {
    Chain10,
    Network11,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// λ sweep with debiasing; one report row per λ.
    Design {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
        /// Exit 0 even when a solve did not converge.
        #[arg(long)]
        allow_unconverged: bool,
    },
    /// Recovery certificates for every requested (t, v) pair.
    Certify {
        #[arg(long)]
        config: PathBuf,
        /// Horizons, comma separated (default: problem.horizon_t).
        #[arg(long, value_delimiter = ',')]
        t: Vec<usize>,
        /// Orders, comma separated (default: problem.order_v).
        #[arg(long, value_delimiter = ',')]
        v: Vec<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Exhaustive search over architectures with at most `s` groups.
    Oracle {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        s: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Built-in demonstrations.
    Demo {
        #[arg(value_enum)]
        name: DemoName,
        #[arg(long)]
        seed: Option<u64>,
        /// Print the demo's design config and exit.
        #[arg(long)]
        print_config: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &RfdError) -> i32 {
    match e {
        RfdError::Config { .. } => EXIT_CONFIG,
        RfdError::Cap { .. } => EXIT_CAP,
        _ => EXIT_OTHER,
    }
}

/// Everything derived from a config that commands share.
pub struct Session {
    pub config: RunConfig,
    pub builder: ProblemBuilder,
    pub spec: PenaltySpec,
    pub seed: Option<u64>,
    pub design_space_count: Option<u64>,
}

impl Session {
    pub fn new(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let resolved = config.build_plant()?;
        let spec = config.penalty_spec(resolved.graph.as_ref())?;
        let mut builder = ProblemBuilder::new(
            resolved.plant,
            config.problem.setting,
            config.problem.tap_convention,
        );
        builder.xi = config.xi();
        if let Some(xi) = &builder.xi {
            if xi.len() != builder.plant.n_states() {
                return Err(RfdError::Config {
                    path: "problem.xi".into(),
                    msg: format!("expected {} entries", builder.plant.n_states()),
                });
            }
        }
        Ok(Self {
            config: config.clone(),
            builder,
            spec,
            seed: resolved.seed,
            design_space_count: resolved.design_space_count,
        })
    }

    pub fn solve_options(&self) -> SolveOptions {
        let mut o = SolveOptions::default();
        if let Some(s) = &self.config.solver {
            if let Some(t) = s.tol {
                o.tol = t;
            }
            if let Some(m) = s.max_iter {
                o.max_iter = m;
            }
        }
        o
    }

    fn provenance(&self, command: &str) -> Provenance {
        Provenance::new(command, &self.config, self.seed, self.design_space_count)
    }

    /// Debiasing horizon: configured, else reference dims for state feedback and LQR, `(2t, 2v)` otherwise.
    pub fn eval_dims(&self) -> (usize, usize) {
        let p = &self.config.problem;
        match p.eval {
            Some(Horizon { t, v }) => (t, v),
            None => match p.setting {
                Setting::OutputFeedback => (2 * p.horizon_t, 2 * p.order_v),
                _ => self.builder.reference_dims(),
            },
        }
    }

    /// Reference dims for certification targets and the oracle.
    pub fn reference_dims(&self) -> (usize, usize) {
        match self.config.certification.as_ref().and_then(|c| c.t_ref) {
            Some(tr) => (2 * tr, tr),
            None => self.builder.reference_dims(),
        }
    }

    fn mask_for(&self, layout: &FirLayout) -> Result<Option<crate::firlin::SparsityMask>> {
        let mask = self.config.subspace_mask(&self.spec, layout)?;
        if let Some(m) = &mask {
            let depth = layout.taps.end().max(1);
            let p22 = self.builder.plant.p22_support(depth);
            if m.shape() == (p22.shape().1, p22.shape().0) && !qi_check(m, &p22, depth)? {
                warn!("subspace is not quadratically invariant under the plant; the design is conservative");
            }
        }
        Ok(mask)
    }

    /// Penalty on the order-`v` layout, without assembling the maps.
    pub fn groups_at(&self, v: usize) -> Result<GroupStructure> {
        let small = *self.builder.assemble(1, 1)?.l.input_layout();
        let layout = FirLayout::new(
            small.rows,
            small.cols,
            self.builder.convention.input_taps(v),
        );
        self.spec.instantiate(&layout)
    }

    /// Fails with a cap error before assembling when the oracle would enumerate too many supports.
    pub fn check_oracle_cap(&self, s: usize, v: usize) -> Result<()> {
        let n = self.groups_at(v)?.group_count();
        let count = support_count(n, s);
        if count > ORACLE_CAP {
            return Err(RfdError::Cap {
                count,
                cap: ORACLE_CAP,
            });
        }
        Ok(())
    }

    fn certification(&self) -> CertificationConfig {
        self.config
            .certification
            .clone()
            .unwrap_or(CertificationConfig {
                enabled: true,
                m_star: None,
                s: None,
                t_ref: None,
                rho: 0.0,
                lambda: None,
                tail_sign: Default::default(),
            })
    }
}

/// λ sweep at `(horizon_t, order_v)` with debiasing at the eval horizon; adds a certificate when enabled.
pub fn cmd_design(cfg: &RunConfig) -> Result<Report> {
    let ses = Session::new(cfg)?;
    let p = &cfg.problem;
    let ap = ses.builder.assemble(p.horizon_t, p.order_v)?;
    let layout = *ap.l.input_layout();
    let g = ses.spec.instantiate(&layout)?;
    let mut prob = RfdProblem::new(&ap, g, 0.0)?;
    prob.mask = ses.mask_for(&layout)?;
    if let Some(r) = p.rho {
        prob.rho = r;
    }
    let (te, ve) = ses.eval_dims();
    let ape = ses.builder.assemble(te, ve)?;
    let le = *ape.l.input_layout();
    let ge = ses.spec.instantiate(&le)?;
    let eval = EvalProblem::new(&ape, ge, cfg.subspace_mask(&ses.spec, &le)?)?;
    info!(
        "design at (t, v) = ({}, {}), debiasing at ({te}, {ve})",
        p.horizon_t, p.order_v
    );
    let grid = p.lambda.grid();
    let rows = lambda_sweep(&prob, &grid, &eval, &ses.solve_options())?;
    let mut report = Report::new(ses.provenance("design"));
    report.rows = rows
        .iter()
        .map(|r| ReportRow::from_sweep(r, &eval.penalty))
        .collect();
    if cfg.certification.as_ref().is_some_and(|c| c.enabled) {
        certify_into(&ses, &[(p.horizon_t, p.order_v)], &mut report)?;
    }
    Ok(report)
}

/// Certificates for the Cartesian product of `ts` and `vs` (defaults: the configured horizon and order).
pub fn cmd_certify(cfg: &RunConfig, ts: &[usize], vs: &[usize]) -> Result<Report> {
    let ses = Session::new(cfg)?;
    let ts = if ts.is_empty() {
        vec![cfg.problem.horizon_t]
    } else {
        ts.to_vec()
    };
    let vs = if vs.is_empty() {
        vec![cfg.problem.order_v]
    } else {
        vs.to_vec()
    };
    let mut pairs = Vec::new();
    for &t in &ts {
        for &v in &vs {
            if t == 0 || v == 0 || v > t {
                return Err(RfdError::Config {
                    path: "--t/--v".into(),
                    msg: format!("pair ({t}, {v}) must satisfy 1 ≤ v ≤ t"),
                });
            }
            pairs.push((t, v));
        }
    }
    let mut report = Report::new(ses.provenance("certify"));
    certify_into(&ses, &pairs, &mut report)?;
    Ok(report)
}

/// Candidate architecture (0-based) and its reference-horizon parameter.
pub fn certification_target(
    ses: &Session,
) -> Result<(Vec<usize>, FirMatrix, Option<OracleReport>)> {
    let c = ses.certification();
    let (tr, vr) = ses.reference_dims();
    let ap = ses.builder.assemble(tr, vr)?;
    let g = ses.spec.instantiate(ap.l.input_layout())?;
    let (m_star, oracle) = match (&c.m_star, c.s) {
        (Some(m), _) => {
            let n = g.group_count();
            if let Some(&bad) = m.iter().find(|&&i| i > n) {
                return Err(RfdError::Config {
                    path: "certification.m_star".into(),
                    msg: format!("group {bad} outside 1..={n}"),
                });
            }
            (m.iter().map(|i| i - 1).collect::<Vec<_>>(), None)
        }
        (None, Some(s)) => {
            ses.check_oracle_cap(s, vr)?;
            let res = brute_force_oracle(&ap.y, &ap.l, ap.f.as_ref(), ap.rho, s, &g, ORACLE_CAP)?;
            let rep = OracleReport::new(&res, s, tr, vr, &g);
            (res.best, Some(rep))
        }
        (None, None) => {
            return Err(RfdError::Config {
                path: "certification".into(),
                msg: "needs m_star or s".into(),
            })
        }
    };
    let ls =
        restricted_least_squares_groups(&ap.y, &ap.l, ap.f.as_ref(), ap.rho, &g, &m_star, None)?;
    Ok((m_star, ls.u, oracle))
}

fn certify_into(ses: &Session, pairs: &[(usize, usize)], report: &mut Report) -> Result<()> {
    let c = ses.certification();
    let (m_star, u_star, oracle) = certification_target(ses)?;
    if let Some(o) = oracle {
        report.oracle.push(o);
    }
    let opts = CertifyOptions {
        tail_sign: c.tail_sign,
        lambda: c.lambda,
        solve: ses.solve_options(),
        ..Default::default()
    };
    for &(t, v) in pairs {
        info!("certificate at (t, v) = ({t}, {v})");
        let cert = build_certificate(
            &ses.builder,
            &ses.spec,
            &u_star,
            &m_star,
            t,
            v,
            c.rho,
            &opts,
        )?;
        report.push_certificate(cert);
    }
    Ok(())
}

/// Ranking of all architectures with at most `s` groups at the reference dims.
pub fn cmd_oracle(cfg: &RunConfig, s: usize) -> Result<Report> {
    let ses = Session::new(cfg)?;
    let (tr, vr) = ses.reference_dims();
    ses.check_oracle_cap(s, vr)?;
    let ap = ses.builder.assemble(tr, vr)?;
    let g: GroupStructure = ses.spec.instantiate(ap.l.input_layout())?;
    let res = brute_force_oracle(&ap.y, &ap.l, ap.f.as_ref(), ap.rho, s, &g, ORACLE_CAP)?;
    let mut report = Report::new(ses.provenance("oracle"));
    report.oracle.push(OracleReport::new(&res, s, tr, vr, &g));
    Ok(report)
}

/// Design config of a built-in demo.
pub fn demo_config(name: DemoName, seed: u64) -> RunConfig {
    match name {
        DemoName::Chain10 => RunConfig {
            version: CONFIG_VERSION,
            plant: PlantSource::Builtin(BuiltinPlant {
                builtin: BuiltinName::Chain10,
                seed: None,
            }),
            problem: ProblemConfig {
                setting: Setting::StateFeedback,
                horizon_t: 4,
                order_v: 1,
                rho: Some(0.0),
                rho_u: None,
                lambda: LambdaSpec::Grid(vec![3.0, 2.4505, 2.0119, 1.4585, 0.8, 0.0]),
                tap_convention: TapConvention::ZeroBased,
                xi: None,
                eval: None,
            },
            penalty: PenaltyConfig {
                kind: PenaltyName::Act,
                theta: None,
                k_a: None,
                k_s: None,
                comm: None,
            },
            subspace: None,
            outputs: OutputConfig {
                stem: "chain10".into(),
                ..Default::default()
            },
            certification: Some(CertificationConfig {
                enabled: true,
                m_star: None,
                s: Some(2),
                t_ref: None,
                rho: 0.0,
                lambda: None,
                tail_sign: Default::default(),
            }),
            solver: None,
        },
        DemoName::Network11 => RunConfig {
            version: CONFIG_VERSION,
            plant: PlantSource::Builtin(BuiltinPlant {
                builtin: BuiltinName::Network11,
                seed: Some(seed),
            }),
            problem: ProblemConfig {
                setting: Setting::OutputFeedback,
                horizon_t: 6,
                order_v: 3,
                rho: None,
                rho_u: None,
                lambda: LambdaSpec::Grid(vec![
                    2000.0, 1000.0, 500.0, 200.0, 100.0, 50.0, 20.0, 0.0,
                ]),
                tap_convention: TapConvention::ZeroBased,
                xi: None,
                eval: Some(Horizon { t: 12, v: 6 }),
            },
            penalty: PenaltyConfig {
                kind: PenaltyName::ActSnsComm,
                theta: Some(0.75),
                k_a: Some(1),
                k_s: Some(1),
                comm: None,
            },
            subspace: None,
            outputs: OutputConfig {
                stem: "network11".into(),
                ..Default::default()
            },
            certification: None,
            solver: None,
        },
    }
}

/// Runs a demo: the chain adds oracle rankings for `s = 2, 3` and certificates for `t = 1..5`.
pub fn cmd_demo(name: DemoName, seed: u64) -> Result<Report> {
    let cfg = demo_config(name, seed);
    let mut report = cmd_design(&cfg)?;
    report.provenance.command = "demo".into();
    if name == DemoName::Chain10 {
        report.certificates.clear();
        report.oracle.clear();
        let pairs: Vec<(usize, usize)> = (1..=5).map(|t| (t, 1)).collect();
        certify_into(&Session::new(&cfg)?, &pairs, &mut report)?;
        let mut c3 = cfg.clone();
        if let Some(c) = c3.certification.as_mut() {
            c.s = Some(3);
        }
        certify_into(&Session::new(&c3)?, &[(5, 1)], &mut report)?;
    }
    Ok(report)
}

fn print_summary(report: &Report) {
    if let Some(n) = report.provenance.design_space_count {
        println!("design space: {n} architectures");
    }
    for o in &report.oracle {
        println!(
            "oracle s={} at (t, v) = ({}, {}): best {:?} cost {:.10}",
            o.s, o.t, o.v, o.best, o.best_cost
        );
    }
    for c in &report.certificates {
        println!(
            "certificate t={} v={} M*={:?}: tau={} (γ−β)⁻¹={:.4} snr={:?} λ_suff={:.4} Λ={:?} bound={:.4} observed={:?} theorem3={}",
            c.t,
            c.v,
            c.m_star,
            c.mixing_time.tau,
            c.snr_threshold,
            c.snr.iter().map(|x| (x * 1e4).round() / 1e4).collect::<Vec<_>>(),
            c.lambda_sufficient,
            c.lambda_interval,
            c.error_bound,
            c.observed_error,
            c.verdicts.theorem3
        );
    }
    for r in &report.rows {
        println!(
            "λ={:<10} support={:?} actuators={} sensors={} links={} h2={:.6} degradation={:.3}% converged={}",
            r.lambda,
            r.labels,
            r.n_actuators,
            r.n_sensors,
            r.n_links,
            r.closed_loop_h2,
            r.relative_degradation_pct,
            r.converged
        );
    }
}

fn emit(report: &Report, cfg_out: &OutputConfig, args: &OutputArgs) -> Result<()> {
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg_out.dir));
    let format = args.format.map(Into::into).unwrap_or(cfg_out.format);
    for p in report.write(&dir, &cfg_out.stem, format)? {
        info!("wrote {}", p.display());
    }
    print_summary(report);
    Ok(())
}

fn init_runtime() {
    let env = env_logger::Env::new().filter_or("RFD_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).try_init();
    if let Some(n) = std::env::var("RFD_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
    {
        if rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .is_err()
        {
            warn!("thread pool already initialized; RFD_THREADS ignored");
        }
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Design {
            config,
            output,
            allow_unconverged,
        } => {
            let cfg = load(&config)?;
            let report = cmd_design(&cfg)?;
            emit(&report, &cfg.outputs, &output)?;
            if !report.all_converged() {
                warn!("some solves did not converge");
                if !allow_unconverged {
                    return Ok(EXIT_UNCONVERGED);
                }
            }
            Ok(EXIT_OK)
        }
        Command::Certify {
            config,
            t,
            v,
            output,
        } => {
            let cfg = load(&config)?;
            let report = cmd_certify(&cfg, &t, &v)?;
            emit(&report, &cfg.outputs, &output)?;
            Ok(EXIT_OK)
        }
        Command::Oracle { config, s, output } => {
            let cfg = load(&config)?;
            let report = cmd_oracle(&cfg, s)?;
            emit(&report, &cfg.outputs, &output)?;
            Ok(EXIT_OK)
        }
        Command::Demo {
            name,
            seed,
            print_config,
            output,
        } => {
            let seed = seed.unwrap_or(DEFAULT_DEMO_SEED);
            let cfg = demo_config(name, seed);
            if print_config {
                println!("{}", cfg.to_json()?);
                return Ok(EXIT_OK);
            }
            let report = cmd_demo(name, seed)?;
            emit(&report, &cfg.outputs, &output)?;
            Ok(if report.all_converged() {
                EXIT_OK
            } else {
                EXIT_UNCONVERGED
            })
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_runtime();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
