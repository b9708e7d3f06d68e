use std::time::Instant;

use rayon::prelude::*;

use semiclassical::dynamics::rates::{estimate_rates, lyapunov_max, sample_k, time_thresholds, ThresholdParams};
use semiclassical::experiments::{
    breakdown_fit, breakdown_interval, breakdown_point, run_hybrid, scaling_point_with, scaling_slope, BreakdownOptions, BreakdownPoint, HybridConfig,
    ScalingPoint,
};
use semiclassical::oracle::sizing::trajectory_axes;
use semiclassical::oracle::split_step::split_step_evolve_with;
use semiclassical::propagator::expansion::{propagate_order_n, segmented_propagate};
use semiclassical::propagator::hybrid::EstimateReport;
use semiclassical::propagator::write_expansion;
use semiclassical::states::io::write_grid;
use semiclassical::states::wavepacket::{eval_wavepacket, GaussianWavepacket};
use semiclassical::validate::{run_all, ValidateOptions};

use crate::config::{ConfigError, Loaded, Method};
use crate::output::{num, opt, Csv};

#[derive(Debug)]
pub struct InvariantFailure(pub String);

impl std::fmt::Display for InvariantFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invariant failure: {}", self.0)
    }
}

impl std::error::Error for InvariantFailure {}

/// Output of a subcommand. `failure` is reported after everything has been
/// written, so partial results survive.
pub struct Report {
    pub main: String,
    /// (suffix, contents) written next to the main output.
    pub files: Vec<(String, String)>,
    pub failure: Option<anyhow::Error>,
}

impl Report {
    fn new(main: String) -> Self {
        Report { main, files: Vec::new(), failure: None }
    }
}

struct Budget {
    start: Instant,
    seconds: f64,
}

impl Budget {
    fn exceeded(&self) -> bool {
        self.start.elapsed().as_secs_f64() > self.seconds
    }
}

/// Runs `f` for every hbar on the current rayon pool, in config order.
/// Points not started before the budget runs out come back as `None`.
fn per_hbar<T: Send>(hbars: &[f64], budget: &Budget, f: impl Fn(f64) -> semiclassical::Result<T> + Sync) -> Vec<Option<(semiclassical::Result<T>, f64)>> {
    hbars
        .par_iter()
        .map(|&hbar| {
            if budget.exceeded() {
                return None;
            }
            let t0 = Instant::now();
            let r = f(hbar);
            Some((r, t0.elapsed().as_secs_f64()))
        })
        .collect()
}

fn budget(l: &Loaded) -> Budget {
    Budget { start: Instant::now(), seconds: l.config.wall_budget }
}

fn orders(l: &Loaded, allowed: &[Method]) -> Result<Vec<(Method, usize)>, ConfigError> {
    l.config
        .methods
        .iter()
        .map(|&m| {
            if !allowed.contains(&m) {
                return Err(ConfigError(format!("method {} is not available here", m.name())));
            }
            Ok((m, if m == Method::Order0 { 0 } else { l.config.order }))
        })
        .collect()
}

fn note_failure(slot: &mut Option<anyhow::Error>, e: anyhow::Error) {
    if slot.is_none() {
        *slot = Some(e);
    }
}

pub fn validate(seed: u64, siegel_sign: f64) -> Report {
    let checks = run_all(&ValidateOptions { seed, siegel_sign });
    let mut csv = Csv::new("validate", "none", seed, "residuals are dimensionless", "module,invariant,measured,tolerance,status,detail");
    let mut failed = Vec::new();
    for c in &checks {
        let status = if c.passed { "pass" } else { "FAIL" };
        let detail = c.error.as_deref().unwrap_or("").replace(',', ";");
        csv.row(&format!("{},{},{},{},{status},{detail}", c.module, c.name, num(c.measured), num(c.tolerance)), 0.0);
        if !c.passed {
            failed.push(format!("{}::{}", c.module, c.name));
        }
    }
    csv.comment(&format!("{} of {} invariants passed", checks.len() - failed.len(), checks.len()));
    let mut r = Report::new(csv.into_string());
    if !failed.is_empty() {
        r.failure = Some(InvariantFailure(failed.join(", ")).into());
    }
    r
}

pub fn sweep_h(l: &Loaded, seed: u64) -> anyhow::Result<Report> {
    if l.config.hbar_list.len() < 3 {
        return Err(ConfigError("sweep-h needs at least 3 hbar values".into()).into());
    }
    let methods = orders(l, &[Method::Order0, Method::OrderN])?;
    let times = l.times()?;
    let ords: Vec<usize> = methods.iter().map(|m| m.1).collect();
    let center = l.center();
    let (sizing, oracle) = (l.sizing(), l.oracle());
    let b = budget(l);
    let mut csv = Csv::new(
        "sweep-h",
        &l.hash,
        seed,
        "hbar and t dimensionless; errors relative L2; wall_time seconds",
        "experiment_id,model,method,order,hbar,t,l2_error,overlap_mag,phase_insensitive_error,grid_points,oracle_dt,richardson",
    );
    let mut failure = None;
    for &t in &times {
        let results = per_hbar(&l.config.hbar_list, &b, |hbar| scaling_point_with(&l.model, &center, t, hbar, &ords, &sizing, &oracle));
        let mut points: Vec<ScalingPoint> = Vec::new();
        for (hbar, r) in l.config.hbar_list.iter().zip(results) {
            match r {
                None => csv.comment(&format!("skipped hbar={hbar:e} t={t}: wall budget exhausted")),
                Some((Err(e), _)) => {
                    csv.comment(&format!("failed hbar={hbar:e} t={t}: {e}"));
                    note_failure(&mut failure, e.into());
                }
                Some((Ok(pts), wall)) => {
                    for (p, (m, _)) in pts.iter().zip(&methods) {
                        csv.row(
                            &format!(
                                "{},{},{},{},{},{},{},{},{},{},{},{}",
                                l.config.id,
                                l.config.model,
                                m.name(),
                                p.order,
                                num(p.hbar),
                                num(t),
                                num(p.metrics.l2_error),
                                num(p.metrics.overlap_mag),
                                num(p.metrics.phase_insensitive_error),
                                p.grid_points,
                                num(p.oracle_dt),
                                num(p.richardson)
                            ),
                            wall,
                        );
                    }
                    points.extend(pts);
                }
            }
        }
        for (m, n) in &methods {
            let have = points.iter().filter(|p| p.order == *n).count();
            let line = if have < 3 {
                format!("slope t={t} method={} order={n} insufficient points ({have})", m.name())
            } else {
                match scaling_slope(&points, *n) {
                    Ok(None) => format!("slope t={t} method={} order={n} degenerate (every error below 1e-7)", m.name()),
                    Ok(Some(f)) => format!(
                        "slope t={t} method={} order={n} slope={} stderr={} intercept={} r_squared={}",
                        m.name(),
                        num(f.slope),
                        num(f.slope_stderr),
                        num(f.intercept),
                        num(f.r_squared)
                    ),
                    Err(e) => format!("slope t={t} method={} order={n} error: {e}", m.name()),
                }
            };
            csv.comment(&line);
        }
    }
    Ok(Report { main: csv.into_string(), files: Vec::new(), failure })
}

pub fn breakdown(l: &Loaded, seed: u64) -> anyhow::Result<Report> {
    let methods = orders(l, &[Method::Order0, Method::OrderN])?;
    let center = l.center();
    let lambda = lyapunov_max(&l.model, &[center.clone()], l.config.lyapunov_time)?;
    if !(lambda > 1e-6) {
        return Err(ConfigError(format!("model {} is not hyperbolic at the center (lambda = {lambda:e})", l.config.model)).into());
    }
    let opts = BreakdownOptions {
        threshold: l.config.threshold,
        window: l.config.window,
        observations: l.config.observations,
        orders: methods.iter().map(|m| m.1).collect(),
        sizing: l.sizing(),
        oracle: l.oracle(),
    };
    let b = budget(l);
    let results = per_hbar(&l.config.hbar_list, &b, |hbar| breakdown_point(&l.model, &center, hbar, lambda, &opts));
    let units = "times in model time units; errors relative L2 with phase; wall_time seconds";
    let mut csv = Csv::new(
        "breakdown",
        &l.hash,
        seed,
        units,
        "experiment_id,model,method,order,hbar,abs_log_hbar,lambda0,t_ehrenfest,threshold,t_breakdown,window_end,max_error,grid_points,truncated",
    );
    let mut series = Csv::new("breakdown-series", &l.hash, seed, units, "experiment_id,method,order,hbar,t,l2_error");
    let mut failure = None;
    let mut points: Vec<BreakdownPoint> = Vec::new();
    for (hbar, r) in l.config.hbar_list.iter().zip(results) {
        match r {
            None => csv.comment(&format!("skipped hbar={hbar:e}: wall budget exhausted")),
            Some((Err(e), _)) => {
                csv.comment(&format!("failed hbar={hbar:e}: {e}"));
                note_failure(&mut failure, e.into());
            }
            Some((Ok(p), wall)) => {
                for (k, (m, n)) in methods.iter().enumerate() {
                    let max = p.errors[k].iter().fold(0.0f64, |a, &v| a.max(v));
                    csv.row(
                        &format!(
                            "{},{},{},{n},{},{},{},{},{},{},{},{},{},{}",
                            l.config.id,
                            l.config.model,
                            m.name(),
                            num(p.hbar),
                            num(p.hbar.ln().abs()),
                            num(lambda),
                            num(p.t_ehrenfest),
                            num(l.config.threshold),
                            opt(p.breakdown[k]),
                            opt(p.times.last().copied()),
                            num(max),
                            p.grid_points,
                            p.truncated
                        ),
                        wall,
                    );
                    for (t, e) in p.times.iter().zip(&p.errors[k]) {
                        series.row(&format!("{},{},{n},{},{},{}", l.config.id, m.name(), num(p.hbar), num(*t), num(*e)), 0.0);
                    }
                }
                points.push(p);
            }
        }
    }
    let (lo, hi) = breakdown_interval(lambda, l.config.slack);
    for (k, (m, n)) in methods.iter().enumerate() {
        if points.len() < 2 {
            csv.comment(&format!("fit method={} order={n} insufficient points ({})", m.name(), points.len()));
            continue;
        }
        match breakdown_fit(&points, k) {
            Ok(f) => csv.comment(&format!(
                "fit method={} order={n} slope={} stderr={} intercept={} r_squared={} band_lo={} band_hi={} interval_lo={} interval_hi={} inside={}",
                m.name(),
                num(f.slope),
                num(f.slope_stderr),
                num(f.intercept),
                num(f.r_squared),
                num(f.slope - 2.0 * f.slope_stderr),
                num(f.slope + 2.0 * f.slope_stderr),
                num(lo),
                num(hi),
                lo <= f.slope && f.slope <= hi
            )),
            Err(e) => {
                csv.comment(&format!("fit method={} order={n} error: {e}", m.name()));
                note_failure(&mut failure, e.into());
            }
        }
    }
    Ok(Report { main: csv.into_string(), files: vec![("series.csv".into(), series.into_string())], failure })
}

pub fn hybrid_demo(l: &Loaded, seed: u64) -> anyhow::Result<Report> {
    if l.config.model != "nh2d" {
        return Err(ConfigError("hybrid-demo needs the nh2d model".into()).into());
    }
    let hbar = l.config.hbar_list[0];
    if hbar > 1e-2 {
        return Err(ConfigError("hybrid-demo needs hbar <= 1e-2".into()).into());
    }
    let mut cfg = HybridConfig {
        epsilon: l.config.params.get("epsilon").copied().unwrap_or(0.1),
        hbar,
        center: l.center(),
        alpha: l.config.alpha,
        ..HybridConfig::default()
    };
    if let Some(v) = l.config.switch_fraction {
        cfg.switch_fraction = v;
    }
    if let Some(v) = l.config.final_fraction {
        cfg.final_fraction = v;
    }
    if let Some(v) = l.config.steps {
        cfg.steps = v;
    }
    if l.config.grid.q_margin.is_some() || l.config.grid.p_margin.is_some() || l.config.grid.max_points.is_some() {
        cfg.sizing = l.sizing();
    }
    if l.config.dt.is_some() {
        cfg.oracle = l.oracle();
    }
    let start = Instant::now();
    let run = run_hybrid(&cfg, |_, _| Ok(()))?;
    let wall = start.elapsed().as_secs_f64();
    let header = EstimateReport::CSV_HEADER;
    let mut csv = Csv::new("hybrid-demo", &l.hash, seed, "times in model time units; bounds dimensionless; wall_time seconds", header);
    let mut files = Vec::new();
    for (k, (rep, st)) in run.reports.iter().zip(&run.states).enumerate() {
        csv.row(&rep.csv_row(), if k + 1 == run.reports.len() { wall } else { 0.0 });
        files.push((format!("step{k:03}.hybrid"), semiclassical::propagator::write_hybrid(st)));
    }
    csv.comment(&format!("switch_time={} final_time={} t_ehrenfest={}", num(run.switch_time), num(run.final_time), num(run.thresholds.t_ehrenfest)));
    csv.comment(&format!(
        "final hybrid overlap_mag={} phase_insensitive_error={}",
        num(run.hybrid.overlap_mag),
        num(run.hybrid.phase_insensitive_error)
    ));
    csv.comment(&format!("final order0 l2_error={} overlap_mag={}", num(run.order0_final.l2_error), num(run.order0_final.overlap_mag)));
    csv.comment(&format!("order0 breakdown at threshold {}: {}", l.config.threshold, opt(run.order0_breakdown(l.config.threshold))));
    csv.comment(&format!("isotropy_residual={}", num(run.isotropy)));
    csv.comment(&format!(
        "half_density back_map_factor={} ju_factor={} amplitude_factor={}",
        num(run.back_map_factor),
        num(run.ju_factor),
        num(run.amplitude_factor)
    ));
    Ok(Report { main: csv.into_string(), files, failure: None })
}

pub fn propagate(l: &Loaded, seed: u64) -> anyhow::Result<Report> {
    let methods = orders(l, &[Method::Order0, Method::OrderN, Method::Segmented, Method::Oracle])?;
    let times = l.times()?;
    let center = l.center();
    let b = budget(l);
    let mut csv = Csv::new(
        "propagate",
        &l.hash,
        seed,
        "hbar and t dimensionless; norm L2; wall_time seconds",
        "experiment_id,model,method,order,hbar,t,norm,file",
    );
    let mut files = Vec::new();
    let mut failure = None;
    for (i, &hbar) in l.config.hbar_list.iter().enumerate() {
        for (j, &t) in times.iter().enumerate() {
            for &(m, n) in &methods {
                if b.exceeded() {
                    csv.comment(&format!("skipped method={} hbar={hbar:e} t={t}: wall budget exhausted", m.name()));
                    continue;
                }
                let start = Instant::now();
                let s = GaussianWavepacket::coherent(hbar, center.clone())?;
                let result: semiclassical::Result<(String, f64, &str)> = match m {
                    Method::Oracle => (|| {
                        let axes = trajectory_axes(&l.model, &s, t, &l.sizing())?;
                        let run = split_step_evolve_with(&l.model, &eval_wavepacket(&s, &axes)?, t, &l.oracle())?;
                        Ok((write_grid(&run.state), run.state.norm(), "grid"))
                    })(),
                    Method::Segmented => {
                        let pieces = (t / 0.5).ceil().max(1.0) as usize;
                        segmented_propagate(&l.model, &s, pieces, t / pieces as f64, n, None).and_then(|e| Ok((write_expansion(&e), e.wavepacket()?.norm(), "expansion")))
                    }
                    _ => propagate_order_n(&l.model, &s, t, n).and_then(|e| Ok((write_expansion(&e), e.wavepacket()?.norm(), "expansion"))),
                };
                match result {
                    Ok((text, norm, ext)) => {
                        let suffix = format!("{}.h{i}.t{j}.{ext}", m.name());
                        csv.row(
                            &format!("{},{},{},{n},{},{},{},{suffix}", l.config.id, l.config.model, m.name(), num(hbar), num(t), num(norm)),
                            start.elapsed().as_secs_f64(),
                        );
                        files.push((suffix, text));
                    }
                    Err(e) => {
                        csv.comment(&format!("failed method={} hbar={hbar:e} t={t}: {e}", m.name()));
                        note_failure(&mut failure, e.into());
                    }
                }
            }
        }
    }
    Ok(Report { main: csv.into_string(), files, failure })
}

pub fn lyapunov(l: &Loaded, seed: u64) -> anyhow::Result<Report> {
    let start = Instant::now();
    let t = l.config.lyapunov_time;
    let samples = sample_k(&l.model, 5, 0.5);
    let mut seeds = vec![l.center()];
    seeds.extend(samples.iter().cloned());
    let lambda = lyapunov_max(&l.model, &seeds, t)?;
    let rates = estimate_rates(&l.model, &samples, t, l.config.alpha)?;
    let mut csv = Csv::new(
        "lyapunov",
        &l.hash,
        seed,
        "rates per unit time; thresholds in model time units; wall_time seconds",
        "experiment_id,model,window,lyapunov_max,lambda_max,lambda_c,nu_min_perp,normally_hyperbolic_r3,hbar,t_ehrenfest,t_cr,t_packet_max,t_hybrid_max",
    );
    for &hbar in &l.config.hbar_list {
        let th = time_thresholds(&rates, hbar, &ThresholdParams::default());
        let cols = match th {
            Ok(th) => format!("{},{},{},{}", num(th.t_ehrenfest), num(th.t_cr), num(th.t_packet_max), num(th.t_hybrid_max)),
            Err(e) => {
                csv.comment(&format!("thresholds at hbar={hbar:e}: {e}"));
                "none,none,none,none".into()
            }
        };
        csv.row(
            &format!(
                "{},{},{},{},{},{},{},{},{},{cols}",
                l.config.id,
                l.config.model,
                num(t),
                num(lambda),
                num(rates.lambda_max),
                num(rates.lambda_c),
                num(rates.nu_min_perp),
                rates.normally_hyperbolic_r3,
                num(hbar)
            ),
            start.elapsed().as_secs_f64(),
        );
    }
    Ok(Report::new(csv.into_string()))
}
