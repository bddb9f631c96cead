//! Experiment configuration: the on-disk TOML/JSON schema, the two built-in
//! presets, and resolution into a fully explicit [`ExperimentConfig`].
//!
//! Resolution order: a preset supplies every field (the `table1` preset when
//! none is named), then the file's own entries override field by field.
//! Unknown keys are hard errors. Steady-state anchors are computed during
//! resolution when not given explicitly: the drift root if the finder
//! converges, otherwise the endpoint of a drift-only run over the configured
//! horizon.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use epi_core::control;
use epi_core::model::{
    Controls, GxxSign, IncidenceDenominator, ModelParams, StateVector, Temperature,
};
use epi_core::sim::{ControlMode, SimConfig};

/// CLI-level error; the variant decides the process exit code
/// (validation -> 1, runtime -> 2).
#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation error: {m}"),
            CliError::Runtime(m) => write!(f, "runtime error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<epi_core::Error> for CliError {
    fn from(e: epi_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// The experiments the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    SirEnsemble,
    ControlCurves,
    NetworkTrace,
    TvReport,
    FkCheck,
    SteadyState,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::SirEnsemble => "sir_ensemble",
            ExperimentKind::ControlCurves => "control_curves",
            ExperimentKind::NetworkTrace => "network_trace",
            ExperimentKind::TvReport => "tv_report",
            ExperimentKind::FkCheck => "fk_check",
            ExperimentKind::SteadyState => "steady_state",
        }
    }
}

// ---------------------------------------------------------------------------
// on-disk schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSection {
    pub eta: Option<f64>,
    pub kappa: Option<f64>,
    pub zeta: Option<f64>,
    pub mu: Option<f64>,
    pub rho: Option<f64>,
    pub n_pop: Option<f64>,
    pub beta0: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub theta1: Option<f64>,
    pub theta2: Option<f64>,
    pub m_pm: Option<f64>,
    pub q_mod: Option<f64>,
    pub temp_constant: Option<f64>,
    pub temp_table: Option<Vec<(f64, f64)>>,
    pub r_disc: Option<f64>,
    pub alpha: Option<[[f64; 3]; 2]>,
    pub sigma1: Option<f64>,
    pub sigma2: Option<f64>,
    pub sigma3: Option<f64>,
    pub sigma4: Option<f64>,
    pub incidence_denominator: Option<IncidenceDenominator>,
    pub gxx_sign: Option<GxxSign>,
    pub x_star: Option<StateSection>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSection {
    pub beta: Option<f64>,
    pub s: Option<f64>,
    pub i: Option<f64>,
    pub r: Option<f64>,
}

impl StateSection {
    fn from_state(st: &StateVector) -> Self {
        Self {
            beta: Some(st.beta),
            s: Some(st.s_pop),
            i: Some(st.i_pop),
            r: Some(st.r_pop),
        }
    }

    fn overlay(&self, base: StateVector) -> StateVector {
        StateVector::new(
            self.beta.unwrap_or(base.beta),
            self.s.unwrap_or(base.s_pop),
            self.i.unwrap_or(base.i_pop),
            self.r.unwrap_or(base.r_pop),
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub t_end: Option<f64>,
    pub n_steps: Option<usize>,
    pub n_replicates: Option<usize>,
    pub seed: Option<u64>,
    pub state_floor: Option<f64>,
    /// `"optimal_feedback"`, `"fixed"` or `"schedule"`.
    pub control_mode: Option<String>,
    pub e_fixed: Option<f64>,
    pub v_fixed: Option<f64>,
    /// Rows of `[time, e, v]` for the schedule mode.
    pub schedule: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub nodes: Option<usize>,
    pub prob: Option<f64>,
    pub updates: Option<usize>,
    pub homophily: Option<f64>,
    pub activity: Option<f64>,
    pub level_counts: Option<[usize; 5]>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FkSection {
    pub tau: Option<f64>,
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
    pub seed_offset: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TvSection {
    pub bins: Option<usize>,
    /// Arm-B override of the network modularity parameter; identical arms
    /// when absent.
    pub q_mod_b: Option<f64>,
    /// Arm-B seed; arm A's seed when absent.
    pub seed_b: Option<u64>,
}

/// The raw configuration file. Every field is optional; resolution fills the
/// gaps from the preset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub preset: Option<String>,
    pub experiment_kind: Option<ExperimentKind>,
    pub output_dir: Option<PathBuf>,
    pub write_replicates: Option<bool>,
    pub day_column: Option<bool>,
    #[serde(default)]
    pub params: ParamsSection,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub x0: StateSection,
    #[serde(default)]
    pub network: NetworkSection,
    #[serde(default)]
    pub fk: FkSection,
    #[serde(default)]
    pub tv: TvSection,
}

// ---------------------------------------------------------------------------
// resolved configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub nodes: usize,
    pub prob: f64,
    pub updates: usize,
    pub homophily: f64,
    pub activity: f64,
    pub level_counts: [usize; 5],
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FkConfig {
    pub tau: f64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed_offset: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TvConfig {
    pub bins: usize,
    pub q_mod_b: Option<f64>,
    pub seed_b: Option<u64>,
}

/// Where the steady-state anchors came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XStarSource {
    Explicit,
    SteadyState,
    DriftEndpoint,
}

impl XStarSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            XStarSource::Explicit => "explicit",
            XStarSource::SteadyState => "steady_state",
            XStarSource::DriftEndpoint => "drift_endpoint",
        }
    }
}

/// A fully resolved experiment: every default made explicit.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment_kind: ExperimentKind,
    pub params: ModelParams,
    pub sim: SimConfig,
    pub x0: StateVector,
    /// The preset's fixed control pair, used by the Feynman–Kac and
    /// steady-state experiments and by the fixed control mode.
    pub reference_controls: Controls,
    pub network: NetworkConfig,
    pub fk: FkConfig,
    pub tv: TvConfig,
    pub output_dir: PathBuf,
    pub write_replicates: bool,
    pub day_column: bool,
    pub x_star_source: XStarSource,
    pub preset_name: Option<String>,
    /// Absolute population behind the percent scale, recorded as metadata.
    pub population_millions: Option<f64>,
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

fn table1_file() -> ConfigFile {
    ConfigFile {
        preset: None,
        experiment_kind: Some(ExperimentKind::SirEnsemble),
        output_dir: Some(PathBuf::from("out")),
        write_replicates: Some(false),
        day_column: Some(false),
        params: ParamsSection {
            eta: Some(0.001),
            kappa: Some(0.2),
            zeta: Some(0.001),
            mu: Some(0.3),
            rho: Some(0.5),
            n_pop: Some(100.0),
            beta0: Some(0.0),
            beta1: Some(0.2),
            beta2: Some(0.2),
            theta1: Some(2.0),
            theta2: Some(2.0),
            m_pm: Some(12.5),
            q_mod: Some(0.5),
            temp_constant: Some(1.0),
            temp_table: None,
            r_disc: Some(0.05),
            alpha: Some([[1.0 / 3.0; 3]; 2]),
            sigma1: Some(0.05),
            sigma2: Some(0.01),
            sigma3: Some(0.03),
            sigma4: Some(0.05),
            incidence_denominator: Some(IncidenceDenominator::Eq1),
            gxx_sign: Some(GxxSign::Printed),
            x_star: None,
        },
        sim: SimSection {
            t_end: Some(1.0),
            n_steps: Some(1000),
            n_replicates: Some(100),
            seed: Some(42),
            state_floor: Some(1e-8),
            control_mode: Some("optimal_feedback".into()),
            e_fixed: Some(1.0),
            v_fixed: Some(0.674),
            schedule: None,
        },
        x0: StateSection {
            beta: Some(1.0),
            s: Some(99.8),
            i: Some(0.1),
            r: Some(0.1),
        },
        network: NetworkSection {
            nodes: Some(100),
            prob: Some(0.06),
            updates: Some(1000),
            homophily: Some(0.9),
            activity: Some(1.0),
            level_counts: Some([21, 24, 18, 20, 17]),
            seed: Some(7),
        },
        fk: FkSection {
            tau: Some(0.1),
            n_paths: Some(2000),
            n_steps: Some(100),
            seed_offset: Some(1000),
        },
        tv: TvSection {
            bins: Some(20),
            q_mod_b: None,
            seed_b: None,
        },
    }
}

fn uk2021_file() -> ConfigFile {
    let mut f = table1_file();
    f.params.eta = Some(0.0558);
    f.params.kappa = Some(0.01);
    f.params.zeta = Some(0.000152);
    f.params.beta1 = Some(0.536);
    f.params.beta2 = Some(0.536);
    f.params.sigma1 = Some(0.05);
    f.params.sigma2 = Some(0.08557);
    f.params.sigma3 = Some(0.12);
    f.params.sigma4 = Some(0.05);
    f.x0 = StateSection {
        beta: Some(1.0),
        s: Some(84.19),
        i: Some(1.89),
        // derived from the closed percent population: 100 - S(0) - I(0)
        r: Some(100.0 - 84.19 - 1.89),
    };
    f.sim.e_fixed = Some(0.75);
    f.sim.v_fixed = Some(0.00557);
    f.day_column = Some(true);
    f
}

fn preset_by_name(name: &str) -> CliResult<ConfigFile> {
    match name {
        "table1" => Ok(table1_file()),
        "uk2021" => Ok(uk2021_file()),
        other => Err(CliError::Validation(format!(
            "unknown preset {other:?}; available presets: table1, uk2021"
        ))),
    }
}

/// Populations (in millions) behind the percent scale, recorded per preset.
fn preset_population(name: &str) -> Option<f64> {
    match name {
        "uk2021" => Some(67.22),
        _ => None,
    }
}

/// The baseline simulation-study preset, fully resolved.
pub fn preset_table1() -> CliResult<ExperimentConfig> {
    resolve(ConfigFile {
        preset: Some("table1".into()),
        ..ConfigFile::default()
    })
}

/// The UK early-2021 preset (first 100 days rescaled to `[0, 1]`), fully
/// resolved.
pub fn preset_uk2021() -> CliResult<ExperimentConfig> {
    resolve(ConfigFile {
        preset: Some("uk2021".into()),
        ..ConfigFile::default()
    })
}

// ---------------------------------------------------------------------------
// loading and resolution
// ---------------------------------------------------------------------------

/// Parses a config file (TOML, or the JSON manifest of a previous run) and
/// resolves it.
pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let file = parse_config_text(&text, path)?;
    resolve(file)
}

fn parse_config_text(text: &str, path: &Path) -> CliResult<ConfigFile> {
    if path.extension().is_some_and(|e| e == "json") {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        // a manifest wraps the config under the "config" key
        let cfg_value = value.get("config").cloned().unwrap_or(value);
        serde_json::from_value(cfg_value)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    } else {
        toml::from_str::<ConfigFile>(text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

fn overlay(base: &mut ConfigFile, over: &ConfigFile) {
    macro_rules! take {
        ($($field:ident).+) => {
            if over.$($field).+.is_some() {
                base.$($field).+ = over.$($field).+.clone();
            }
        };
    }
    take!(experiment_kind);
    take!(output_dir);
    take!(write_replicates);
    take!(day_column);
    take!(params.eta);
    take!(params.kappa);
    take!(params.zeta);
    take!(params.mu);
    take!(params.rho);
    take!(params.n_pop);
    take!(params.beta0);
    take!(params.beta1);
    take!(params.beta2);
    take!(params.theta1);
    take!(params.theta2);
    take!(params.m_pm);
    take!(params.q_mod);
    take!(params.temp_constant);
    take!(params.temp_table);
    take!(params.r_disc);
    take!(params.alpha);
    take!(params.sigma1);
    take!(params.sigma2);
    take!(params.sigma3);
    take!(params.sigma4);
    take!(params.incidence_denominator);
    take!(params.gxx_sign);
    take!(params.x_star);
    take!(sim.t_end);
    take!(sim.n_steps);
    take!(sim.n_replicates);
    take!(sim.seed);
    take!(sim.state_floor);
    take!(sim.control_mode);
    take!(sim.e_fixed);
    take!(sim.v_fixed);
    take!(sim.schedule);
    take!(x0.beta);
    take!(x0.s);
    take!(x0.i);
    take!(x0.r);
    take!(network.nodes);
    take!(network.prob);
    take!(network.updates);
    take!(network.homophily);
    take!(network.activity);
    take!(network.level_counts);
    take!(network.seed);
    take!(fk.tau);
    take!(fk.n_paths);
    take!(fk.n_steps);
    take!(fk.seed_offset);
    take!(tv.bins);
    take!(tv.q_mod_b);
    take!(tv.seed_b);
}

fn req<T: Copy>(v: Option<T>, name: &str) -> CliResult<T> {
    v.ok_or_else(|| CliError::Validation(format!("{name} required")))
}

/// Applies the preset, overlays the file's own entries, validates, and
/// computes anchors when needed.
pub fn resolve(file: ConfigFile) -> CliResult<ExperimentConfig> {
    // the experiment kind never falls back to a preset default: a config
    // that does not name one is rejected
    if file.experiment_kind.is_none() && file.preset.is_none() {
        return Err(CliError::Validation("experiment_kind required".into()));
    }
    let preset_name = file.preset.clone();
    let mut base = preset_by_name(preset_name.as_deref().unwrap_or("table1"))?;
    overlay(&mut base, &file);

    let experiment_kind = base
        .experiment_kind
        .ok_or_else(|| CliError::Validation("experiment_kind required".into()))?;

    let p = &base.params;
    let temp = match (&p.temp_table, p.temp_constant) {
        (Some(table), _) => Temperature::Table(table.clone()),
        (None, Some(c)) => Temperature::Constant(c),
        (None, None) => Temperature::Constant(1.0),
    };
    let explicit_x_star = p
        .x_star
        .map(|sect| sect.overlay(StateVector::new(0.0, 0.0, 0.0, 0.0)));
    let mut params = ModelParams {
        eta: req(p.eta, "params.eta")?,
        kappa: req(p.kappa, "params.kappa")?,
        zeta: req(p.zeta, "params.zeta")?,
        mu: req(p.mu, "params.mu")?,
        rho: req(p.rho, "params.rho")?,
        n_pop: req(p.n_pop, "params.n_pop")?,
        beta0: req(p.beta0, "params.beta0")?,
        beta1: req(p.beta1, "params.beta1")?,
        beta2: req(p.beta2, "params.beta2")?,
        theta1: req(p.theta1, "params.theta1")?,
        theta2: req(p.theta2, "params.theta2")?,
        m_pm: req(p.m_pm, "params.m_pm")?,
        q_mod: req(p.q_mod, "params.q_mod")?,
        temp,
        r_disc: req(p.r_disc, "params.r_disc")?,
        alpha: req(p.alpha, "params.alpha")?,
        sigma: [
            req(p.sigma1, "params.sigma1")?,
            req(p.sigma2, "params.sigma2")?,
            req(p.sigma3, "params.sigma3")?,
            req(p.sigma4, "params.sigma4")?,
        ],
        x_star: explicit_x_star.unwrap_or(StateVector::new(0.0, 0.0, 0.0, 0.0)),
        incidence_denominator: p.incidence_denominator.unwrap_or_default(),
        gxx_sign: p.gxx_sign.unwrap_or_default(),
    };

    let x0 = StateVector::new(
        req(base.x0.beta, "x0.beta")?,
        req(base.x0.s, "x0.s")?,
        req(base.x0.i, "x0.i")?,
        req(base.x0.r, "x0.r")?,
    );
    if !x0.is_finite() || x0.min_component() < 0.0 {
        return Err(CliError::Validation(format!(
            "x0 must be finite and nonnegative, got {x0:?}"
        )));
    }

    let reference_controls = Controls::new(
        req(base.sim.e_fixed, "sim.e_fixed")?,
        req(base.sim.v_fixed, "sim.v_fixed")?,
    );
    if !reference_controls.in_unit_square() {
        return Err(CliError::Validation(format!(
            "sim.e_fixed / sim.v_fixed must lie in [0,1], got {reference_controls:?}"
        )));
    }
    let control_mode = match base.sim.control_mode.as_deref() {
        None | Some("optimal_feedback") => ControlMode::OptimalFeedback,
        Some("fixed") => ControlMode::Fixed(reference_controls),
        Some("schedule") => {
            let rows = base.sim.schedule.clone().ok_or_else(|| {
                CliError::Validation("sim.schedule required for the schedule control mode".into())
            })?;
            if rows.is_empty() {
                return Err(CliError::Validation(
                    "sim.schedule must not be empty".into(),
                ));
            }
            ControlMode::Schedule(
                rows.iter()
                    .map(|[t, e, v]| (*t, Controls::new(*e, *v)))
                    .collect(),
            )
        }
        Some(other) => {
            return Err(CliError::Validation(format!(
                "sim.control_mode must be optimal_feedback, fixed or schedule, got {other:?}"
            )))
        }
    };
    let sim = SimConfig {
        t_end: req(base.sim.t_end, "sim.t_end")?,
        n_steps: req(base.sim.n_steps, "sim.n_steps")?,
        n_replicates: req(base.sim.n_replicates, "sim.n_replicates")?,
        seed: req(base.sim.seed, "sim.seed")?,
        state_floor: req(base.sim.state_floor, "sim.state_floor")?,
        control_mode,
    };
    sim.validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;

    // anchors: explicit > drift root > drift-only horizon endpoint
    let x_star_source = if let Some(xs) = explicit_x_star {
        params.x_star = xs;
        XStarSource::Explicit
    } else {
        match control::find_steady_state(&params, &reference_controls, &x0) {
            Ok(ss) => {
                params.x_star = clamp_nonnegative(ss.state);
                XStarSource::SteadyState
            }
            Err(_) => {
                params.x_star = clamp_nonnegative(drift_endpoint(&params, &sim, &x0)?);
                XStarSource::DriftEndpoint
            }
        }
    };

    params.validate().map_err(|violations| {
        let msgs: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        CliError::Validation(msgs.join("; "))
    })?;

    let network = NetworkConfig {
        nodes: req(base.network.nodes, "network.nodes")?,
        prob: req(base.network.prob, "network.prob")?,
        updates: req(base.network.updates, "network.updates")?,
        homophily: req(base.network.homophily, "network.homophily")?,
        activity: req(base.network.activity, "network.activity")?,
        level_counts: base
            .network
            .level_counts
            .unwrap_or_else(|| default_level_counts(base.network.nodes.unwrap_or(100))),
        seed: req(base.network.seed, "network.seed")?,
    };
    if network.level_counts.iter().sum::<usize>() != network.nodes {
        return Err(CliError::Validation(format!(
            "network.level_counts {:?} must sum to network.nodes = {}",
            network.level_counts, network.nodes
        )));
    }

    let fk = FkConfig {
        tau: req(base.fk.tau, "fk.tau")?,
        n_paths: req(base.fk.n_paths, "fk.n_paths")?,
        n_steps: req(base.fk.n_steps, "fk.n_steps")?,
        seed_offset: req(base.fk.seed_offset, "fk.seed_offset")?,
    };
    let tv = TvConfig {
        bins: req(base.tv.bins, "tv.bins")?,
        q_mod_b: base.tv.q_mod_b,
        seed_b: base.tv.seed_b,
    };

    Ok(ExperimentConfig {
        experiment_kind,
        params,
        sim,
        x0,
        reference_controls,
        network,
        fk,
        tv,
        output_dir: base.output_dir.unwrap_or_else(|| PathBuf::from("out")),
        write_replicates: base.write_replicates.unwrap_or(false),
        day_column: base.day_column.unwrap_or(false),
        x_star_source,
        preset_name: preset_name.clone(),
        population_millions: preset_name.as_deref().and_then(preset_population),
    })
}

/// Splits `n` nodes as evenly as possible over the five immunity levels.
pub fn default_level_counts(n: usize) -> [usize; 5] {
    let base = n / 5;
    let extra = n % 5;
    std::array::from_fn(|k| base + usize::from(k < extra))
}

fn clamp_nonnegative(st: StateVector) -> StateVector {
    StateVector::new(
        st.beta.max(0.0),
        st.s_pop.max(0.0),
        st.i_pop.max(0.0),
        st.r_pop.max(0.0),
    )
}

/// Endpoint of a deterministic (zero-diffusion) run over the configured
/// horizon under the configured control mode.
fn drift_endpoint(
    params: &ModelParams,
    sim_cfg: &SimConfig,
    x0: &StateVector,
) -> CliResult<StateVector> {
    let mut quiet = params.clone();
    quiet.sigma = [0.0; 4];
    let cfg = SimConfig {
        n_replicates: 1,
        ..sim_cfg.clone()
    };
    let path = epi_core::sim::simulate_path(&quiet, &cfg, x0, 0)
        .map_err(|e| CliError::Runtime(format!("anchor integration failed: {e}")))?;
    Ok(*path.terminal())
}

/// Re-serialises a resolved configuration as a fully explicit [`ConfigFile`]
/// (used by `preset --print` and by run manifests).
pub fn to_config_file(cfg: &ExperimentConfig) -> ConfigFile {
    let (mode, schedule) = match &cfg.sim.control_mode {
        ControlMode::OptimalFeedback => ("optimal_feedback".to_string(), None),
        ControlMode::Fixed(_) => ("fixed".to_string(), None),
        ControlMode::Schedule(rows) => (
            "schedule".to_string(),
            Some(rows.iter().map(|(t, u)| [*t, u.e_lock, u.v_vacc]).collect()),
        ),
    };
    let (temp_constant, temp_table) = match &cfg.params.temp {
        Temperature::Constant(c) => (Some(*c), None),
        Temperature::Table(rows) => (None, Some(rows.clone())),
    };
    ConfigFile {
        preset: None,
        experiment_kind: Some(cfg.experiment_kind),
        output_dir: Some(cfg.output_dir.clone()),
        write_replicates: Some(cfg.write_replicates),
        day_column: Some(cfg.day_column),
        params: ParamsSection {
            eta: Some(cfg.params.eta),
            kappa: Some(cfg.params.kappa),
            zeta: Some(cfg.params.zeta),
            mu: Some(cfg.params.mu),
            rho: Some(cfg.params.rho),
            n_pop: Some(cfg.params.n_pop),
            beta0: Some(cfg.params.beta0),
            beta1: Some(cfg.params.beta1),
            beta2: Some(cfg.params.beta2),
            theta1: Some(cfg.params.theta1),
            theta2: Some(cfg.params.theta2),
            m_pm: Some(cfg.params.m_pm),
            q_mod: Some(cfg.params.q_mod),
            temp_constant,
            temp_table,
            r_disc: Some(cfg.params.r_disc),
            alpha: Some(cfg.params.alpha),
            sigma1: Some(cfg.params.sigma[0]),
            sigma2: Some(cfg.params.sigma[1]),
            sigma3: Some(cfg.params.sigma[2]),
            sigma4: Some(cfg.params.sigma[3]),
            incidence_denominator: Some(cfg.params.incidence_denominator),
            gxx_sign: Some(cfg.params.gxx_sign),
            x_star: Some(StateSection::from_state(&cfg.params.x_star)),
        },
        sim: SimSection {
            t_end: Some(cfg.sim.t_end),
            n_steps: Some(cfg.sim.n_steps),
            n_replicates: Some(cfg.sim.n_replicates),
            seed: Some(cfg.sim.seed),
            state_floor: Some(cfg.sim.state_floor),
            control_mode: Some(mode),
            e_fixed: Some(cfg.reference_controls.e_lock),
            v_fixed: Some(cfg.reference_controls.v_vacc),
            schedule,
        },
        x0: StateSection::from_state(&cfg.x0),
        network: NetworkSection {
            nodes: Some(cfg.network.nodes),
            prob: Some(cfg.network.prob),
            updates: Some(cfg.network.updates),
            homophily: Some(cfg.network.homophily),
            activity: Some(cfg.network.activity),
            level_counts: Some(cfg.network.level_counts),
            seed: Some(cfg.network.seed),
        },
        fk: FkSection {
            tau: Some(cfg.fk.tau),
            n_paths: Some(cfg.fk.n_paths),
            n_steps: Some(cfg.fk.n_steps),
            seed_offset: Some(cfg.fk.seed_offset),
        },
        tv: TvSection {
            bins: Some(cfg.tv.bins),
            q_mod_b: cfg.tv.q_mod_b,
            seed_b: cfg.tv.seed_b,
        },
    }
}

/// Renders a resolved configuration as a complete TOML document.
pub fn to_toml_string(cfg: &ExperimentConfig) -> CliResult<String> {
    toml::to_string_pretty(&to_config_file(cfg))
        .map_err(|e| CliError::Runtime(format!("config serialisation failed: {e}")))
}
