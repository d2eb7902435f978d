//! Subcommand implementations: single runs, viscosity sweeps, time-step
//! refinement studies, and trajectory verification. All outputs are written
//! without timestamps so reruns with the same configuration, seed and thread
//! count reproduce every file byte for byte.

use crate::config::Resolved;
use larche_core::energetics::State;
use larche_core::evolution::{
    self, apriori_report, energy_inequality_check, refinement_family, viscosity_sweep,
    EvolutionError, RunOutput,
};
use larche_core::io;
use larche_core::verification::weak_solution_report;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug)]
pub enum CommandError {
    Validation(String),
    StepFailed(String),
    VerifyFailed(String),
}

impl std::fmt::Display for CommandError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CommandError::Validation(m) => write!(f, "{m}"),
            CommandError::StepFailed(m) => write!(f, "{m}"),
            CommandError::VerifyFailed(m) => write!(f, "{m}"),
        }
    }
}

impl CommandError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CommandError::Validation(_) => 2,
            CommandError::StepFailed(_) => 3,
            CommandError::VerifyFailed(_) => 4,
        }
    }
}

fn io_err(e: impl std::fmt::Display) -> CommandError {
    CommandError::Validation(e.to_string())
}

fn write_outputs(
    dir: &Path,
    resolved: &Resolved,
    output: &RunOutput,
    stride: usize,
) -> Result<(), CommandError> {
    fs::create_dir_all(dir).map_err(io_err)?;
    fs::write(dir.join("config.txt"), resolved.canonical()).map_err(io_err)?;
    fs::write(dir.join("diagnostics.csv"), output.diagnostics.to_csv()).map_err(io_err)?;

    let traj = &output.trajectory;
    let last = traj.nodes.len() - 1;
    for (m, node) in traj.nodes.iter().enumerate() {
        if m % stride != 0 && m != last {
            continue;
        }
        let tag = format!("{m:05}");
        io::write_vector(&dir.join(format!("u_{tag}.txt")), &node.state.u, "u").map_err(io_err)?;
        io::write_scalar(&dir.join(format!("c_{tag}.txt")), &node.state.c, "c").map_err(io_err)?;
        io::write_scalar(&dir.join(format!("z_{tag}.txt")), &node.state.z, "z").map_err(io_err)?;
        io::write_scalar(&dir.join(format!("mu_{tag}.txt")), &node.mu, "mu").map_err(io_err)?;
    }

    let mut status = String::new();
    match traj.failed_at {
        None => {
            let _ = writeln!(status, "status ok");
        }
        Some(m) => {
            let _ = writeln!(status, "status step_failed");
            let _ = writeln!(status, "failed_at {m}");
        }
    }
    let _ = writeln!(status, "nodes {}", traj.nodes.len());
    let _ = writeln!(status, "steps {}", resolved.run.steps);
    let _ = writeln!(status, "mass_drift {:.17e}", traj.mass_drift());
    fs::write(dir.join("status.txt"), status).map_err(io_err)?;
    Ok(())
}

pub fn cmd_run(resolved: &Resolved, out: &Path) -> Result<(), CommandError> {
    match evolution::run(&resolved.run, &resolved.minimizer) {
        Ok(output) => {
            write_outputs(out, resolved, &output, resolved.snapshot_stride)?;
            println!(
                "run complete: {} steps, mass drift {:.3e}, final energy {:.6e}",
                output.trajectory.step_count(),
                output.trajectory.mass_drift(),
                output.diagnostics.rows.last().unwrap().energy.total
            );
            Ok(())
        }
        Err(EvolutionError::StepFailed { step, partial }) => {
            // keep the partial outputs on disk for inspection
            write_outputs(out, resolved, &partial, 1)?;
            Err(CommandError::StepFailed(format!("time step {step} did not converge")))
        }
        Err(EvolutionError::Validation(msg)) => Err(CommandError::Validation(msg)),
        Err(e) => Err(CommandError::StepFailed(e.to_string())),
    }
}

pub fn cmd_sweep(
    resolved: &Resolved,
    out: &Path,
    eps_override: Option<Vec<f64>>,
    threads: usize,
) -> Result<(), CommandError> {
    let eps = eps_override.unwrap_or_else(|| resolved.sweep_eps.clone());
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(io_err)?;
    let report = pool
        .install(|| viscosity_sweep(&resolved.run, &eps, &resolved.minimizer))
        .map_err(|e| match e {
            EvolutionError::Validation(m) => CommandError::Validation(m),
            other => CommandError::StepFailed(other.to_string()),
        })?;

    fs::create_dir_all(out).map_err(io_err)?;
    let mut text = String::from(
        "epsilon,u_linf_h1,eps14_u_linf_w14,c_linf_h1,z_linf_w1p,cdot_dual,\
         eps12_cdot_l2,zdot_l2,mu_l2h1,eps_grad_u4\n",
    );
    for entry in &report.entries {
        let q = &entry.quantities;
        let _ = writeln!(
            text,
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            entry.epsilon,
            q.u_linf_h1,
            q.eps14_u_linf_w14,
            q.c_linf_h1,
            q.z_linf_w1p,
            q.cdot_dual,
            q.eps12_cdot_l2,
            q.zdot_l2,
            q.mu_l2h1,
            q.eps_grad_u4
        );
    }
    fs::write(out.join("sweep_quantities.csv"), &text).map_err(io_err)?;

    let mut summary = String::new();
    let _ = writeln!(summary, "bounded_by_2x {}", report.bounded_by(2.0));
    let _ = writeln!(summary, "reg_budget_decays {}", report.reg_budget_decays());
    fs::write(out.join("sweep_report.txt"), &summary).map_err(io_err)?;

    for (i, entry) in report.entries.iter().enumerate() {
        let sub = out.join(format!("eps_{i}"));
        let mut member = resolved.clone();
        member.run.params.epsilon = entry.epsilon;
        write_outputs(&sub, &member, &entry.output, resolved.snapshot_stride)?;
    }
    println!(
        "sweep complete: {} viscosities, bounded {}, regularization decays {}",
        report.entries.len(),
        report.bounded_by(2.0),
        report.reg_budget_decays()
    );
    Ok(())
}

pub fn cmd_refine(
    resolved: &Resolved,
    out: &Path,
    m_override: Option<Vec<usize>>,
    threads: usize,
) -> Result<(), CommandError> {
    let m_list = m_override.unwrap_or_else(|| resolved.m_list.clone());
    if m_list.is_empty() {
        return Err(CommandError::Validation("m list must be nonempty".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(io_err)?;
    let outputs = pool
        .install(|| refinement_family(&resolved.run, &m_list, &resolved.minimizer))
        .map_err(|e| match e {
            EvolutionError::Validation(m) => CommandError::Validation(m),
            other => CommandError::StepFailed(other.to_string()),
        })?;

    fs::create_dir_all(out).map_err(io_err)?;
    let names = ["u_linf_w14", "c_linf_h1", "z_linf_w1p", "cdot_l2", "zdot_l2", "mu_l2h1"];
    let mut rows = String::from("steps,u_linf_w14,c_linf_h1,z_linf_w1p,cdot_l2,zdot_l2,mu_l2h1\n");
    let mut ratios: Vec<[f64; 6]> = Vec::new();
    for (m, output) in m_list.iter().zip(&outputs) {
        let rep = apriori_report(&output.trajectory, &output.diagnostics, &resolved.run.params);
        let a = rep.as_array();
        ratios.push(a);
        let _ = writeln!(
            rows,
            "{m},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            a[0], a[1], a[2], a[3], a[4], a[5]
        );
    }
    fs::write(out.join("apriori_ratios.csv"), &rows).map_err(io_err)?;

    let mut summary = String::new();
    let mut all_within = true;
    for (k, name) in names.iter().enumerate() {
        let vals: Vec<f64> = ratios.iter().map(|r| r[k]).collect();
        let max = vals.iter().fold(f64::MIN, |m, &v| m.max(v));
        let min = vals.iter().fold(f64::MAX, |m, &v| m.min(v));
        let within = max <= 2.0 * min.max(1e-300);
        all_within &= within;
        let _ = writeln!(summary, "{name}_band_ok {within}");
    }
    // minimum inequality slack over the family
    let mut worst_coarse = f64::INFINITY;
    for output in &outputs {
        let steps = output.trajectory.step_count();
        for m1 in 0..=steps {
            for m2 in m1..=steps {
                let slack = energy_inequality_check(
                    &output.trajectory,
                    &output.diagnostics,
                    m1 as f64 * output.trajectory.tau,
                    m2 as f64 * output.trajectory.tau,
                )
                .map_err(|e| CommandError::StepFailed(e.to_string()))?;
                worst_coarse = worst_coarse.min(slack.coarse);
            }
        }
    }
    let _ = writeln!(summary, "all_bands_ok {all_within}");
    let _ = writeln!(summary, "worst_coarse_slack {worst_coarse:.17e}");
    fs::write(out.join("refine_report.txt"), &summary).map_err(io_err)?;

    for (m, output) in m_list.iter().zip(&outputs) {
        let sub = out.join(format!("m_{m}"));
        let mut member = resolved.clone();
        member.run.steps = *m;
        write_outputs(&sub, &member, output, resolved.snapshot_stride)?;
    }
    println!("refine complete: {} step counts, bands ok {all_within}", m_list.len());
    Ok(())
}

pub fn cmd_verify(dir: &Path) -> Result<(), CommandError> {
    let config_text = fs::read_to_string(dir.join("config.txt"))
        .map_err(|e| CommandError::Validation(format!("cannot read config.txt: {e}")))?;
    let resolved = crate::config::parse_config(&config_text, dir, None)
        .map_err(|e| CommandError::Validation(e.to_string()))?;

    let status = fs::read_to_string(dir.join("status.txt")).unwrap_or_default();
    let failed_at = status
        .lines()
        .find_map(|l| l.strip_prefix("failed_at "))
        .and_then(|v| v.parse::<usize>().ok());

    // load node states in order until the files run out
    let grid = resolved.run.grid;
    let tau = resolved.run.tau();
    let mut states = Vec::new();
    let mut m = 0usize;
    loop {
        let tag = format!("{m:05}");
        let c_path = dir.join(format!("c_{tag}.txt"));
        if !c_path.exists() {
            break;
        }
        let read_scalar = |p: std::path::PathBuf| -> Result<_, CommandError> {
            io::read_snapshot(&p)
                .map_err(io_err)?
                .into_scalar(&grid)
                .map_err(io_err)
        };
        let c = read_scalar(c_path)?;
        let z = read_scalar(dir.join(format!("z_{tag}.txt")))?;
        let u = io::read_snapshot(&dir.join(format!("u_{tag}.txt")))
            .map_err(io_err)?
            .into_vector(&grid)
            .map_err(io_err)?;
        states.push(State { u, c, z, time: m as f64 * tau });
        m += 1;
    }
    if states.len() < 2 {
        return Err(CommandError::VerifyFailed(format!(
            "trajectory in {} has {} usable nodes",
            dir.display(),
            states.len()
        )));
    }

    let output = evolution::rebuild_from_states(
        states,
        tau,
        resolved.run.horizon,
        &resolved.run.load,
        &resolved.run.params,
        failed_at,
    )
    .map_err(|e| CommandError::VerifyFailed(e.to_string()))?;

    let report =
        weak_solution_report(&output.trajectory, &output.diagnostics, &resolved.run.params)
            .map_err(|e| CommandError::VerifyFailed(e.to_string()))?;
    fs::write(dir.join("verify_report.txt"), report.to_key_value()).map_err(io_err)?;
    let csv = format!(
        "diffusion,potential,equilibrium,vi_min,complementarity_max,coarse_slack_min,\
         precise_slack_min,kappa_total\n{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},\
         {:.17e},{:.17e}\n",
        report.diffusion_residual,
        report.potential_residual,
        report.equilibrium_residual,
        report.vi_min,
        report.complementarity_max,
        report.coarse_slack_min,
        report.precise_slack_min,
        report.kappa_total,
    );
    fs::write(dir.join("verify_report.csv"), csv).map_err(io_err)?;

    let scale = output.diagnostics.energy_scale();
    let ok = failed_at.is_none() && report.passes(resolved.minimizer.el_tolerance, scale);
    println!("{}", report.to_key_value().trim_end());
    if ok {
        println!("verification passed");
        Ok(())
    } else {
        Err(CommandError::VerifyFailed(if failed_at.is_some() {
            "trajectory is a flagged partial run".into()
        } else {
            "weak-solution residuals exceed thresholds".into()
        }))
    }
}
