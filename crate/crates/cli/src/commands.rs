//! One function per verb.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use cowqkd::link::{run_alice, run_bob, tcp_connect, SessionConfig, SessionError, SessionOutcome, TcpEndpoints};
use cowqkd::privacy::write_final_key;
use cowqkd::rng;
use cowqkd::sweep::{
    analytic_row, fit_filtering, fmt_sig6, render_csv, run_sweep, stability_run, ConfigFile, FilteringTable,
    GridPoint, Preset, SweepResult, SweepSpec,
};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{BudgetArgs, CalibrateArgs, CliError, ServeArgs, StabilityArgs, SweepArgs};

pub fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    match path {
        Some(p) => ConfigFile::load(p).map_err(|e| CliError::Config(e.to_string())),
        None => Ok(ConfigFile::default()),
    }
}

fn find_preset(config: &ConfigFile, name: &str) -> Result<Preset, CliError> {
    config.preset(name).ok_or_else(|| {
        CliError::Config(format!(
            "unknown preset {name:?}; known: {}",
            config.preset_names().join(", ")
        ))
    })
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    match path {
        Some(p) => fs::write(p, text).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => io::stdout()
            .write_all(text.as_bytes())
            .map_err(|e| CliError::Runtime(e.to_string())),
    }
}

pub fn budget(config: &ConfigFile, a: BudgetArgs) -> Result<(), CliError> {
    let (mut distance, mut extra) = (config.sweep.budget.distance_km, config.sweep.budget.extra_loss_db);
    if let Some(name) = &a.preset {
        let p = find_preset(config, name)?;
        (distance, extra) = (p.distance_km, p.extra_db);
    }
    distance = a.distance.unwrap_or(distance);
    extra = a.extra_db.unwrap_or(extra);
    for (name, v) in [("dr", a.dr), ("cr", a.cr)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(CliError::Config(format!("{name} {v} outside [0, 1]")));
        }
    }
    let mut spec = config.sweep.clone();
    if let Some(f) = a.filtering {
        spec.filtering = FilteringTable::uniform(f);
    }
    spec.include_dark_counts |= a.include_dark;
    spec.filtering.validate()?;
    let point = GridPoint {
        distance_km: distance,
        extra_db: extra,
        dead_time_us: a.dead_time_us,
        bias_v: a.bias_v,
        dr: a.dr,
        cr: a.cr,
    };
    let row = analytic_row(&spec, &point)?;
    let b = row.budget.breakdown();
    let lines = [
        ("distance_km", row.budget.distance_km),
        ("extra_db", row.budget.extra_loss_db),
        ("loss_db", b.loss_db),
        ("photons_after_fiber", b.photons_after_fiber),
        ("photons_data_line", b.photons_data_line),
        ("photons_detected", b.photons_detected),
        ("count_rate_hz", b.count_rate_hz),
        ("gap_us", b.gap_s * 1e6),
        ("total_time_us", b.total_time_s * 1e6),
        ("dead_time_us", row.budget.dead_time_s * 1e6),
        ("dcr_hz", row.budget.dcr_hz),
        ("total_clicks_hz", row.total_clicks_hz),
        ("filtering_pct", row.budget.filtering_pct),
        ("effective_clicks_hz", row.effective_clicks_hz),
        ("dr", row.dr),
        ("cr", row.cr),
        ("qber", row.qber),
        ("secret_kr_bps", row.secret_kr_bps),
        ("usable_kr_bps", row.usable_kr_bps()),
    ];
    let mut out = String::new();
    for (k, v) in lines {
        let _ = writeln!(out, "{k} = {}", fmt_sig6(v));
    }
    let _ = writeln!(out, "status = {:?}", row.status);
    write_out(None, &out)
}

pub fn sweep(config: &ConfigFile, a: SweepArgs) -> Result<(), CliError> {
    let mut spec = config.sweep.clone();
    if let Some(m) = a.mode {
        spec.mode = m;
    }
    let g = &mut spec.grids;
    for (flag, grid) in [
        (a.distance, &mut g.distance_km),
        (a.extra_db, &mut g.extra_db),
        (a.dead_time_us, &mut g.dead_time_us),
        (a.bias_v, &mut g.bias_v),
        (a.dr, &mut g.dr),
        (a.cr, &mut g.cr),
    ] {
        if !flag.is_empty() {
            *grid = flag;
        }
    }
    spec.seed = a.seed.unwrap_or(spec.seed);
    spec.pairs = a.pairs.unwrap_or(spec.pairs);
    spec.arbitrary_dr |= a.arbitrary_dr;
    spec.include_dark_counts |= a.include_dark;
    let output = a.output.or_else(|| spec.output.clone());

    let specs: Vec<SweepSpec> = if a.preset.is_empty() {
        vec![spec]
    } else {
        a.preset
            .iter()
            .map(|name| {
                let p = find_preset(config, name)?;
                let mut s = spec.clone();
                s.grids.distance_km = vec![p.distance_km];
                s.grids.extra_db = vec![p.extra_db];
                Ok(s)
            })
            .collect::<Result<_, CliError>>()?
    };
    let mut combined: Option<SweepResult> = None;
    for s in &specs {
        let r = run_sweep(s)?;
        combined = Some(match combined {
            None => r,
            Some(mut acc) => {
                acc.metadata.points += r.metadata.points;
                acc.metadata.wall_time_s += r.metadata.wall_time_s;
                acc.rows.extend(r.rows);
                acc
            }
        });
    }
    let result = combined.expect("at least one sweep");
    eprintln!(
        "# cowqkd {} mode={:?} seed={} points={} wall_time_s={:.3}",
        result.metadata.build_id,
        result.metadata.mode,
        result.metadata.seed,
        result.metadata.points,
        result.metadata.wall_time_s
    );
    write_out(output.as_deref(), &render_csv(&result))
}

pub fn calibrate(config: &ConfigFile, a: CalibrateArgs) -> Result<(), CliError> {
    let names = if a.preset.is_empty() {
        config.preset_names()
    } else {
        a.preset
    };
    let mut out = String::new();
    let mut failures = Vec::new();
    for name in names {
        let preset = find_preset(config, &name)?;
        match fit_filtering(&preset, &config.sweep, a.objective) {
            Ok(fit) => {
                let _ = writeln!(
                    out,
                    "{name}: distance_km = {} extra_db = {} filtering_pct = {:.6} max_rel_error = {:.4} ({:?})",
                    preset.distance_km, preset.extra_db, fit.filtering_pct, fit.max_rel_error, fit.objective
                );
                for (t, kr) in &fit.fitted {
                    let _ = writeln!(
                        out,
                        "  target {} bps at DR {} CR {} DT {} us BV {} V: model {} bps ({:+.2} %)",
                        t.kr_bps,
                        t.dr,
                        t.cr,
                        t.dead_time_us,
                        t.bias_v,
                        fmt_sig6(*kr),
                        100.0 * (kr - t.kr_bps) / t.kr_bps
                    );
                }
            }
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    write_out(None, &out)?;
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Calibration(failures.join("; ")))
    }
}

pub fn stability(config: &ConfigFile, a: StabilityArgs) -> Result<(), CliError> {
    let preset = find_preset(config, &a.preset)?;
    let series = stability_run(&preset, &config.sweep, a.mode, a.duration_s, a.interval_s, a.seed)?;
    let trend = series.trend();
    let p_value = if trend.slope_std_err > 0.0 {
        let t = StudentsT::new(0.0, 1.0, trend.dof as f64).map_err(|e| CliError::Runtime(e.to_string()))?;
        2.0 * (1.0 - t.cdf(trend.t_stat.abs()))
    } else {
        1.0
    };
    if let Some(path) = &a.output {
        let mut csv = String::from("interval,start_s,kr_bps,qber\n");
        for (i, (kr, q)) in series.kr_bps.iter().zip(&series.qber).enumerate() {
            let _ = writeln!(
                csv,
                "{i},{},{},{}",
                fmt_sig6(i as f64 * series.interval_s),
                fmt_sig6(*kr),
                fmt_sig6(*q)
            );
        }
        write_out(Some(path), &csv)?;
    }
    let out = format!(
        "preset = {}\nintervals = {}\nmean_kr_bps = {}\nrel_std = {}\nslope_bps_per_interval = {}\nslope_t = {}\nslope_p = {}\n",
        preset.name,
        series.kr_bps.len(),
        fmt_sig6(series.mean()),
        fmt_sig6(series.rel_std()),
        fmt_sig6(trend.slope),
        fmt_sig6(trend.t_stat),
        fmt_sig6(p_value)
    );
    write_out(None, &out)
}

fn session_config(config: &ConfigFile, a: &ServeArgs) -> Result<SessionConfig, CliError> {
    let mut s = config.session.clone();
    if let Some(v) = a.pairs {
        s.pairs = v;
    }
    if let Some(v) = a.distance {
        s.budget.distance_km = v;
    }
    if let Some(v) = a.dr {
        s.dr = v;
    }
    if let Some(v) = a.cr {
        s.cr = v;
    }
    if let Some(v) = a.block_len {
        s.block_len = v;
    }
    s.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(s)
}

fn session_failure(e: SessionError) -> CliError {
    match e {
        SessionError::Config(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.to_string()),
    }
}

fn report(outcome: SessionOutcome, key_out: Option<&Path>) -> Result<(), CliError> {
    let s = &outcome.stats;
    let mut out = String::new();
    let _ = writeln!(out, "role = {:?}", outcome.role);
    let _ = writeln!(out, "pairs = {}", s.pairs);
    let _ = writeln!(out, "detected_pairs = {}", s.detected_pairs);
    let _ = writeln!(out, "sifted_bits = {}", s.sifted_bits);
    let _ = writeln!(out, "disclosed_bits = {}", s.disclosed_bits);
    let _ = writeln!(out, "qber = {}", fmt_sig6(s.qber));
    if let Some(rate) = s.code_rate {
        let _ = writeln!(out, "code_rate = {rate}");
    }
    let _ = writeln!(out, "blocks = {}/{}", s.blocks_corrected, s.blocks_total);
    let _ = writeln!(out, "final_bits = {}", s.final_bits);
    let _ = writeln!(out, "kr_bps = {}", fmt_sig6(outcome.report.secret_kr_bps));
    if let Some(path) = key_out {
        let sidecar = write_final_key(path, &outcome.final_key, &outcome.manifest)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        let _ = writeln!(out, "key = {}", path.display());
        let _ = writeln!(out, "manifest = {}", sidecar.display());
    }
    write_out(None, &out)
}

pub fn serve_alice(config: &ConfigFile, a: ServeArgs) -> Result<(), CliError> {
    let session = session_config(config, &a)?;
    let seed = a.seed.unwrap_or_else(rng::entropy_seed);
    let io_err = |e: io::Error| CliError::Runtime(e.to_string());
    let endpoints = TcpEndpoints::bind(a.classical.as_str(), a.quantum.as_str()).map_err(io_err)?;
    println!(
        "listening classical = {} quantum = {}",
        endpoints.classical.local_addr().map_err(io_err)?,
        endpoints.quantum.local_addr().map_err(io_err)?
    );
    io::stdout().flush().map_err(io_err)?;
    let (classical, quantum) = endpoints.accept().map_err(io_err)?;
    let outcome = run_alice(&session, classical, quantum, seed).map_err(session_failure)?;
    report(outcome, a.key_out.as_deref())
}

pub fn serve_bob(config: &ConfigFile, a: ServeArgs) -> Result<(), CliError> {
    let session = session_config(config, &a)?;
    let seed = a.seed.unwrap_or_else(rng::entropy_seed);
    let (classical, quantum) = tcp_connect(a.classical.as_str(), a.quantum.as_str())
        .map_err(|e| CliError::Runtime(format!("connect: {e}")))?;
    let outcome = run_bob(&session, classical, quantum, seed).map_err(session_failure)?;
    report(outcome, a.key_out.as_deref())
}
