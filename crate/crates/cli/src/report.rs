//! Fixed-width text tables and CSV exports.

use std::fmt::Write as _;

use anyhow::Result;
use uamnoise_core::model::{Certification, ValidationReport};
use uamnoise_core::numfmt::sig9;
use uamnoise_core::planner::{AuditReport, MotionPlan, PlanStats};
use uamnoise_core::{NoiseAbatementZone, NoiseOracle, Partition};

pub fn partition_table(p: &Partition, variation: &[f64]) -> String {
    let mut s = format!("mu_phi = {:.3} dB, {} sectors\n", p.mu_phi(), p.len());
    let _ = writeln!(s, "{:<8}{:<26}{:>12}{:>16}", "Sector", "Angular Range (deg)", "Width (deg)", "Variation (dB)");
    for (sec, var) in p.sectors().iter().zip(variation) {
        let range = format!("[{:.1}, {:.1})", sec.lo.to_degrees(), sec.hi.to_degrees());
        let _ = writeln!(s, "{:<8}{:<26}{:>12.1}{:>16.4}", sec.m, range, sec.width().to_degrees(), var);
    }
    s
}

/// Certification side by side with an optional baseline.
pub fn certification_table(active: &[Certification], samples: &[usize], baseline: Option<(&[Certification], &[usize])>) -> String {
    let mut s = String::new();
    let _ = write!(s, "{:<8}{:>9}{:>9}{:>9}{:>9}{:>10}", "Sector", "Samples", "T1", "T2", "T3", "delta_m");
    if baseline.is_some() {
        let _ = write!(s, "{:>12}{:>12}", "Base smp", "Base dlt_m");
    }
    s.push('\n');
    for (i, c) in active.iter().enumerate() {
        let _ = write!(s, "{:<8}{:>9}{:>9.3}{:>9.3}{:>9.3}{:>10.3}", c.m, samples[i], c.t1, c.t2, c.t3, c.delta);
        if let Some((b, bs)) = baseline {
            let _ = write!(s, "{:>12}{:>12.3}", bs[i], b[i].delta);
        }
        s.push('\n');
    }
    let worst = active.iter().map(|c| c.delta).fold(f64::NEG_INFINITY, f64::max);
    let _ = writeln!(s, "delta = {worst:.4} dBA");
    s
}

pub fn certification_csv(active: &[Certification], samples: &[usize], baseline: Option<(&[Certification], &[usize])>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["m", "samples", "t1", "t2", "t3", "delta"];
    if baseline.is_some() {
        header.extend(["baseline_samples", "baseline_delta"]);
    }
    w.write_record(&header)?;
    for (i, c) in active.iter().enumerate() {
        let mut row = vec![c.m.to_string(), samples[i].to_string(), sig9(c.t1), sig9(c.t2), sig9(c.t3), sig9(c.delta)];
        if let Some((b, bs)) = baseline {
            row.extend([bs[i].to_string(), sig9(b[i].delta)]);
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

pub fn validation_table(r: &ValidationReport) -> String {
    let mut s = format!("{} points, {} violations\n", r.points, r.violations());
    let _ = writeln!(s, "{:<8}{:>10}{:>12}{:>12}{:>12}", "Sector", "Points", "delta_m", "Max error", "Violations");
    for v in &r.sectors {
        let _ = writeln!(s, "{:<8}{:>10}{:>12.4}{:>12.4}{:>12}", v.m, v.points, v.delta, v.max_error, v.violations);
    }
    s
}

pub fn stats_lines(s: &PlanStats) -> String {
    let first = s.first_goal_iteration.map_or("none".to_string(), |i| i.to_string());
    format!(
        "iterations {}\nfirst goal iteration {}\nnodes {}\nsteer calls {}\nnoise failures {}\ncollision failures {}\ndomain failures {}\npruned {}\nrewires {}\n",
        s.iterations, first, s.nodes, s.steer_calls, s.noise_failures, s.collision_failures, s.domain_failures, s.pruned, s.rewires
    )
}

pub fn audit_lines(a: &AuditReport) -> String {
    format!(
        "audit checks {}\naudit violations {}\nmin margin {:.4} dB\nmax energy ratio {:.6}\n",
        a.checks,
        a.violations.len(),
        a.min_margin,
        a.max_energy_ratio
    )
}

/// One row per vehicle and step: kinematics, then predicted and oracle
/// levels per zone.
pub fn trace_csv(plans: &[MotionPlan], zones: &[NoiseAbatementZone], oracle: &dyn NoiseOracle) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["vehicle", "t", "time_s", "x", "y", "z", "v", "rho", "theta"].map(String::from).to_vec();
    for z in zones {
        header.extend([format!("{}_model_inst", z.id), format!("{}_model_leq", z.id), format!("{}_oracle_inst", z.id)]);
    }
    w.write_record(&header)?;
    for (k, p) in plans.iter().enumerate() {
        for (i, st) in p.states.iter().enumerate() {
            let t = p.t0 + i;
            let mut row = vec![
                (k + 1).to_string(),
                t.to_string(),
                sig9(t as f64 * p.step_seconds),
                sig9(st.x),
                sig9(st.y),
                sig9(st.z),
                sig9(st.v),
                sig9(st.rho),
                sig9(st.theta),
            ];
            for z in zones {
                let tr = p.traces.iter().find(|tr| tr.zone == z.id);
                let model = |f: fn(&uamnoise_core::planner::NoiseTrace) -> &Vec<uamnoise_core::SoundLevel>| {
                    tr.map_or(String::new(), |tr| sig9(f(tr)[i].value()))
                };
                row.push(model(|tr| &tr.inst));
                row.push(model(|tr| &tr.leq));
                let o = oracle.eval(&uamnoise_core::relative_state(st, &z.observer))?;
                row.push(sig9(o.value()));
            }
            w.write_record(&row)?;
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}
