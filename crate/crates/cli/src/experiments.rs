//! Experiment orchestration: runs a resolved [`ExperimentConfig`], writes the
//! CSV outputs and a JSON manifest sufficient to reproduce the run
//! byte-for-byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use epi_core::control::{self, McConfig};
use epi_core::measures::{tv_all, DiscreteDistribution};
use epi_core::model::StateVector;
use epi_core::network::ImmunityNetwork;
use epi_core::sim::{self, ControlMode, SimConfig};

use crate::config::{
    to_config_file, CliError, CliResult, ConfigFile, ExperimentConfig, ExperimentKind,
};

/// What a run leaves behind: the echoed configuration, the effective seed,
/// the files written (relative to the output directory) and per-experiment
/// metadata. Serialised as `manifest.json`; feeding that file back into
/// `load_config` reproduces the run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: ConfigFile,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub meta: Map<String, Value>,
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

struct OutputWriter {
    dir: PathBuf,
    outputs: Vec<String>,
}

impl OutputWriter {
    fn new(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            outputs: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
        self.outputs.push(name.to_string());
        Ok(())
    }
}

fn csv_row(fields: &[String]) -> String {
    fields.join(",")
}

fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Runs the configured experiment and writes its outputs plus
/// `manifest.json` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> CliResult<Manifest> {
    let mut w = OutputWriter::new(&cfg.output_dir)?;
    let mut meta = Map::new();
    meta.insert("experiment".into(), json!(cfg.experiment_kind.as_str()));
    meta.insert("x_star_source".into(), json!(cfg.x_star_source.as_str()));
    if let Some(name) = &cfg.preset_name {
        meta.insert("preset".into(), json!(name));
    }
    if let Some(pop) = cfg.population_millions {
        meta.insert("population_millions".into(), json!(pop));
    }

    match cfg.experiment_kind {
        ExperimentKind::SirEnsemble => run_sir_ensemble(cfg, &mut w, &mut meta)?,
        ExperimentKind::ControlCurves => run_control_curves(cfg, &mut w, &mut meta)?,
        ExperimentKind::NetworkTrace => run_network_trace(cfg, &mut w, &mut meta)?,
        ExperimentKind::TvReport => run_tv_report(cfg, &mut w, &mut meta)?,
        ExperimentKind::FkCheck => run_fk_check(cfg, &mut w, &mut meta)?,
        ExperimentKind::SteadyState => run_steady_state(cfg, &mut w, &mut meta)?,
    }

    let manifest = Manifest {
        config: to_config_file(cfg),
        seed: cfg.sim.seed,
        outputs: w.outputs.clone(),
        meta,
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::Runtime(format!("manifest serialisation failed: {e}")))?;
    w.write("manifest.json", &manifest_json)?;
    Ok(manifest)
}

fn trajectory_header(with_controls: bool, day_column: bool) -> String {
    let mut h = String::from("time,beta,S,I,R");
    if with_controls {
        h.push_str(",e_opt,v_opt");
    }
    if day_column {
        h.push_str(",day");
    }
    h
}

fn trajectory_row(
    t: f64,
    st: &StateVector,
    controls: Option<(f64, f64)>,
    day_column: bool,
) -> String {
    let mut fields = vec![
        fmt_f64(t),
        fmt_f64(st.beta),
        fmt_f64(st.s_pop),
        fmt_f64(st.i_pop),
        fmt_f64(st.r_pop),
    ];
    if let Some((e, v)) = controls {
        fields.push(fmt_f64(e));
        fields.push(fmt_f64(v));
    }
    if day_column {
        fields.push(fmt_f64(100.0 * t));
    }
    csv_row(&fields)
}

fn run_sir_ensemble(
    cfg: &ExperimentConfig,
    w: &mut OutputWriter,
    meta: &mut Map<String, Value>,
) -> CliResult<()> {
    let ens = sim::simulate_ensemble(&cfg.params, &cfg.sim, &cfg.x0)?;
    let stats = sim::ensemble_stats(&ens);
    let with_controls = matches!(cfg.sim.control_mode, ControlMode::OptimalFeedback);

    let mut means = String::new();
    writeln!(
        means,
        "{}",
        trajectory_header(with_controls, cfg.day_column)
    )
    .unwrap();
    for (k, (t, m)) in stats.times.iter().zip(&stats.mean).enumerate() {
        let controls = with_controls.then(|| {
            // the terminal grid point reuses the last applied control pair
            let u = stats.mean_controls[k.min(stats.mean_controls.len() - 1)];
            (u.e_lock, u.v_vacc)
        });
        writeln!(means, "{}", trajectory_row(*t, m, controls, cfg.day_column)).unwrap();
    }
    w.write("means.csv", &means)?;

    let mut stddev = String::new();
    writeln!(stddev, "{}", trajectory_header(false, cfg.day_column)).unwrap();
    for (t, sd) in stats.times.iter().zip(&stats.stddev) {
        writeln!(stddev, "{}", trajectory_row(*t, sd, None, cfg.day_column)).unwrap();
    }
    w.write("stddev.csv", &stddev)?;

    let mut terminal = String::from("replicate,beta,S,I,R\n");
    for (rep, path) in ens.paths.iter().enumerate() {
        let st = path.terminal();
        writeln!(
            terminal,
            "{rep},{},{},{},{}",
            fmt_f64(st.beta),
            fmt_f64(st.s_pop),
            fmt_f64(st.i_pop),
            fmt_f64(st.r_pop)
        )
        .unwrap();
    }
    w.write("terminal.csv", &terminal)?;

    if cfg.write_replicates {
        for (rep, path) in ens.paths.iter().enumerate() {
            let mut text = String::new();
            writeln!(text, "{}", trajectory_header(with_controls, cfg.day_column)).unwrap();
            for (k, (t, st)) in path.times.iter().zip(&path.states).enumerate() {
                let controls = with_controls.then(|| {
                    let u = path.controls[k.min(path.controls.len() - 1)];
                    (u.e_lock, u.v_vacc)
                });
                writeln!(text, "{}", trajectory_row(*t, st, controls, cfg.day_column)).unwrap();
            }
            w.write(&format!("replicate_{rep:04}.csv"), &text)?;
        }
    }

    let total_clamps: u64 = ens.paths.iter().map(|p| p.clamp_events).sum();
    meta.insert("sup_moment".into(), json!(stats.sup_moment));
    let c0 = sim::fit_moment_constant(stats.sup_moment, &cfg.x0, cfg.sim.t_end);
    meta.insert("moment_constant_c0".into(), json!(c0));
    meta.insert("clamp_events_total".into(), json!(total_clamps));
    Ok(())
}

fn run_control_curves(
    cfg: &ExperimentConfig,
    w: &mut OutputWriter,
    meta: &mut Map<String, Value>,
) -> CliResult<()> {
    // the control-curve experiment always runs the feedback law
    let sim_cfg = SimConfig {
        control_mode: ControlMode::OptimalFeedback,
        ..cfg.sim.clone()
    };
    let path = sim::simulate_path(&cfg.params, &sim_cfg, &cfg.x0, 0)?;

    let mut text = String::new();
    let mut header = String::from(
        "time,beta,S,I,R,e_opt,v_opt,raw_e,raw_v,clamped_e,clamped_v,condition_violated",
    );
    if cfg.day_column {
        header.push_str(",day");
    }
    writeln!(text, "{header}").unwrap();
    let mut n_clamped = 0usize;
    for (t, st) in path.times.iter().zip(&path.states) {
        let d = control::optimal_controls(*t, st, &cfg.params)?;
        if d.clamped_e || d.clamped_v {
            n_clamped += 1;
        }
        let mut fields = vec![
            fmt_f64(*t),
            fmt_f64(st.beta),
            fmt_f64(st.s_pop),
            fmt_f64(st.i_pop),
            fmt_f64(st.r_pop),
            fmt_f64(d.e_opt),
            fmt_f64(d.v_opt),
            fmt_f64(d.raw_e),
            fmt_f64(d.raw_v),
            (d.clamped_e as u8).to_string(),
            (d.clamped_v as u8).to_string(),
            (d.condition_violated as u8).to_string(),
        ];
        if cfg.day_column {
            fields.push(fmt_f64(100.0 * t));
        }
        writeln!(text, "{}", csv_row(&fields)).unwrap();
    }
    w.write("control_curves.csv", &text)?;
    meta.insert("grid_points".into(), json!(path.times.len()));
    meta.insert("points_with_clamping".into(), json!(n_clamped));
    meta.insert("clamp_events_total".into(), json!(path.clamp_events));
    Ok(())
}

fn run_network_trace(
    cfg: &ExperimentConfig,
    w: &mut OutputWriter,
    meta: &mut Map<String, Value>,
) -> CliResult<()> {
    let nc = &cfg.network;
    let mut net = ImmunityNetwork::generate_er(nc.nodes, nc.prob, &nc.level_counts, nc.seed)?;
    w.write("edges_initial.txt", &net.to_edge_list_string())?;
    w.write("levels.txt", &net.to_levels_string())?;
    let initial_modularity = net.modularity().ok();
    let initial_density = net.density();

    let trace = net.run_updates_with_activity(nc.updates, nc.homophily, nc.activity)?;
    let mut text = String::from("update,removed,added,modularity,density\n");
    let edge_str =
        |e: Option<(usize, usize)>| e.map(|(u, v)| format!("{u}-{v}")).unwrap_or_default();
    for rec in &trace {
        writeln!(
            text,
            "{},{},{},{},{}",
            rec.index,
            edge_str(rec.removed),
            edge_str(rec.added),
            fmt_f64(rec.modularity),
            fmt_f64(rec.density)
        )
        .unwrap();
    }
    w.write("trace.csv", &text)?;
    w.write("edges_final.txt", &net.to_edge_list_string())?;

    meta.insert("initial_modularity".into(), json!(initial_modularity));
    meta.insert("initial_density".into(), json!(initial_density));
    meta.insert(
        "final_modularity".into(),
        json!(trace.last().map(|r| r.modularity)),
    );
    meta.insert(
        "final_density".into(),
        json!(trace.last().map(|r| r.density)),
    );
    Ok(())
}

/// Shared equal-width binning over the pooled range of both samples.
pub fn histogram_tv(
    a: &[f64],
    b: &[f64],
    bins: usize,
) -> CliResult<(epi_core::measures::TvDistances, f64, f64)> {
    if bins == 0 {
        return Err(CliError::Validation("bins must be >= 1".into()));
    }
    if a.is_empty() || b.is_empty() {
        return Err(CliError::Validation(
            "both samples must be non-empty".into(),
        ));
    }
    let lo = a.iter().chain(b).cloned().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(CliError::Validation(
            "samples contain non-finite values".into(),
        ));
    }
    let width = if hi > lo { hi - lo } else { 1.0 };
    let mut wa = vec![0.0f64; bins];
    let mut wb = vec![0.0f64; bins];
    for (sample, weights) in [(a, &mut wa), (b, &mut wb)] {
        for x in sample {
            let k = (((x - lo) / width) * bins as f64) as usize;
            weights[k.min(bins - 1)] += 1.0;
        }
    }
    let da = DiscreteDistribution::from_weights(&wa)?;
    let db = DiscreteDistribution::from_weights(&wb)?;
    Ok((tv_all(&da, &db)?, lo, hi))
}

fn terminal_infected(cfg: &ExperimentConfig, q_mod: f64, seed: u64) -> CliResult<Vec<f64>> {
    let mut params = cfg.params.clone();
    params.q_mod = q_mod;
    let sim_cfg = SimConfig {
        seed,
        ..cfg.sim.clone()
    };
    let ens = sim::simulate_ensemble(&params, &sim_cfg, &cfg.x0)?;
    Ok(ens.paths.iter().map(|p| p.terminal().i_pop).collect())
}

fn run_tv_report(
    cfg: &ExperimentConfig,
    w: &mut OutputWriter,
    meta: &mut Map<String, Value>,
) -> CliResult<()> {
    let q_a = cfg.params.q_mod;
    let q_b = cfg.tv.q_mod_b.unwrap_or(q_a);
    let seed_a = cfg.sim.seed;
    let seed_b = cfg.tv.seed_b.unwrap_or(seed_a);

    let arm_a = terminal_infected(cfg, q_a, seed_a)?;
    let arm_b = terminal_infected(cfg, q_b, seed_b)?;

    for (name, arm) in [("terminal_a.csv", &arm_a), ("terminal_b.csv", &arm_b)] {
        let mut text = String::from("replicate,I\n");
        for (rep, x) in arm.iter().enumerate() {
            writeln!(text, "{rep},{}", fmt_f64(*x)).unwrap();
        }
        w.write(name, &text)?;
    }

    let (tv, lo, hi) = histogram_tv(&arm_a, &arm_b, cfg.tv.bins)?;
    let report = json!({
        "tv_sup": tv.sup,
        "tv_coupling": tv.coupling,
        "tv_partition": tv.partition,
        "bins": cfg.tv.bins,
        "range": [lo, hi],
        "q_mod_a": q_a,
        "q_mod_b": q_b,
        "seed_a": seed_a,
        "seed_b": seed_b,
        "note": "illustrative comparison of terminal infected histograms",
    });
    w.write(
        "tv.json",
        &serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    meta.insert("tv".into(), report);
    Ok(())
}

fn run_fk_check(
    cfg: &ExperimentConfig,
    w: &mut OutputWriter,
    meta: &mut Map<String, Value>,
) -> CliResult<()> {
    let mc = McConfig {
        n_paths: cfg.fk.n_paths,
        n_steps: cfg.fk.n_steps,
        seed: cfg.sim.seed.wrapping_add(cfg.fk.seed_offset),
        state_floor: cfg.sim.state_floor,
    };
    let (estimate, se_fk) = control::feynman_kac_estimate(
        0.0,
        &cfg.x0,
        cfg.fk.tau,
        |x| x.s_pop,
        &cfg.params,
        &cfg.reference_controls,
        &mc,
    )?;

    // independent ensemble arm over the same horizon, driven by the
    // simulator under its own seed
    let sim_cfg = SimConfig {
        t_end: cfg.fk.tau,
        n_steps: cfg.fk.n_steps,
        n_replicates: cfg.fk.n_paths,
        seed: cfg.sim.seed,
        state_floor: cfg.sim.state_floor,
        control_mode: ControlMode::Fixed(cfg.reference_controls),
    };
    let ens = sim::simulate_ensemble(&cfg.params, &sim_cfg, &cfg.x0)?;
    let values: Vec<f64> = ens.paths.iter().map(|p| p.terminal().s_pop).collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se_ens = (var / n).sqrt();

    let combined = (se_fk.powi(2) + se_ens.powi(2)).sqrt();
    let z = if combined > 0.0 {
        (estimate - mean) / combined
    } else {
        0.0
    };
    let report = json!({
        "functional": "S at tau",
        "tau": cfg.fk.tau,
        "n_paths": cfg.fk.n_paths,
        "estimate": estimate,
        "std_error": se_fk,
        "ensemble_mean": mean,
        "ensemble_se": se_ens,
        "z": z,
        "agrees_within_3se": z.abs() <= 3.0,
    });
    w.write(
        "fk.json",
        &serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    meta.insert("fk".into(), report);
    Ok(())
}

fn run_steady_state(
    cfg: &ExperimentConfig,
    w: &mut OutputWriter,
    meta: &mut Map<String, Value>,
) -> CliResult<()> {
    // non-convergence is a legitimate finding here, reported rather than
    // escalated
    let report = match control::find_steady_state(&cfg.params, &cfg.reference_controls, &cfg.x0) {
        Ok(ss) => json!({
            "converged": true,
            "state": { "beta": ss.state.beta, "s": ss.state.s_pop, "i": ss.state.i_pop, "r": ss.state.r_pop },
            "residual": ss.residual,
            "method": ss.method,
        }),
        Err(epi_core::Error::NoConvergence {
            best_residual,
            best,
        }) => json!({
            "converged": false,
            "best_residual": best_residual,
            "best_state": { "beta": best.beta, "s": best.s_pop, "i": best.i_pop, "r": best.r_pop },
        }),
        Err(other) => return Err(other.into()),
    };
    w.write(
        "steady_state.json",
        &serde_json::to_string_pretty(&report).map_err(|e| CliError::Runtime(e.to_string()))?,
    )?;
    meta.insert("steady_state".into(), report);
    Ok(())
}

/// Reads one numeric column from a CSV file: either a bare column of numbers
/// or a headed file, in which case `column` (default `"I"`) selects by name.
pub fn read_csv_column(path: &Path, column: Option<&str>) -> CliResult<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let Some(first) = lines.next() else {
        return Err(CliError::Validation(format!(
            "{}: empty file",
            path.display()
        )));
    };
    let first_fields: Vec<&str> = first.split(',').map(str::trim).collect();
    let headerless = first_fields.len() == 1 && first_fields[0].parse::<f64>().is_ok();

    let mut out = Vec::new();
    if headerless {
        for line in std::iter::once(first).chain(lines) {
            let v = line.trim().parse::<f64>().map_err(|e| {
                CliError::Validation(format!("{}: bad number {line:?}: {e}", path.display()))
            })?;
            out.push(v);
        }
        return Ok(out);
    }

    let wanted = column.unwrap_or("I");
    let idx = first_fields
        .iter()
        .position(|h| *h == wanted)
        .ok_or_else(|| {
            CliError::Validation(format!(
                "{}: no column named {wanted:?} in header {first_fields:?}",
                path.display()
            ))
        })?;
    for line in lines {
        let fields: Vec<&str> = line.split(',').collect();
        let cell = fields.get(idx).ok_or_else(|| {
            CliError::Validation(format!("{}: short row {line:?}", path.display()))
        })?;
        let v = cell.trim().parse::<f64>().map_err(|e| {
            CliError::Validation(format!("{}: bad number {cell:?}: {e}", path.display()))
        })?;
        out.push(v);
    }
    Ok(out)
}
