//! Random-model sweeps comparing first- and second-order estimates of
//! `log Z` against enumeration.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::approx::{approximate, ApproxFamily};
use crate::error::{Error, Result};
use crate::estimators::error_record;
use crate::exact;
use crate::meanfield::SolverConfig;
use crate::model::{random_model, Topology};

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub trials: usize,
    pub nodes: usize,
    pub family: ApproxFamily,
    /// Trial `t` uses seed `seed + t`.
    pub seed: u64,
    pub sigma: f64,
    /// Worker threads; 0 lets the pool decide.
    pub jobs: usize,
    pub solver: SolverConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            trials: 550,
            nodes: 8,
            family: ApproxFamily::Factorised,
            seed: 1,
            sigma: 1.0,
            jobs: 0,
            solver: SolverConfig::default(),
        }
    }
}

/// Estimates of a converged trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialEstimate {
    pub log_z_first: f64,
    pub log_z_second: f64,
    pub e_first: f64,
    pub e_second: f64,
    pub delta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExperimentRow {
    pub trial: usize,
    pub seed: u64,
    pub log_z_exact: f64,
    /// `None` when the fit did not converge.
    pub estimate: Option<TrialEstimate>,
    pub converged: bool,
    pub iterations: usize,
}

pub fn run_trial(cfg: &ExperimentConfig, trial: usize) -> Result<ExperimentRow> {
    let seed = cfg.seed.wrapping_add(trial as u64);
    let model = random_model(cfg.nodes, &Topology::Full, cfg.sigma, seed)?;
    let log_z_exact = exact::log_z(&model)?;
    let approx = approximate(&model, &cfg.family, &cfg.solver)?;
    let estimate = if approx.converged {
        let r = error_record(log_z_exact, approx.first, approx.second)?;
        Some(TrialEstimate {
            log_z_first: approx.first,
            log_z_second: approx.second,
            e_first: r.e_first,
            e_second: r.e_second,
            delta: r.paired_delta,
        })
    } else {
        None
    };
    Ok(ExperimentRow {
        trial,
        seed,
        log_z_exact,
        estimate,
        converged: approx.converged,
        iterations: approx.iterations,
    })
}

/// Runs every trial; rows come back in trial order.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRow>> {
    exact::check_cap(cfg.nodes, exact::DEFAULT_ENUMERATION_CAP)?;
    if let ApproxFamily::Decimatable(s) = &cfg.family {
        Error::check_len(cfg.nodes, s.n())?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..cfg.trials).into_par_iter().map(|t| run_trial(cfg, t)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Summary {
    pub trials: usize,
    pub nonconverged: usize,
    pub mean_abs_e_first: f64,
    pub mean_abs_e_second: f64,
    pub mean_delta: f64,
    pub min_delta: f64,
}

/// Averages over converged rows, accumulated in trial order.
pub fn summarize(rows: &[ExperimentRow]) -> Summary {
    let mut s = Summary {
        trials: rows.len(),
        nonconverged: 0,
        mean_abs_e_first: 0.0,
        mean_abs_e_second: 0.0,
        mean_delta: 0.0,
        min_delta: f64::INFINITY,
    };
    let mut k = 0usize;
    for row in rows {
        match row.estimate {
            Some(e) => {
                k += 1;
                s.mean_abs_e_first += e.e_first.abs();
                s.mean_abs_e_second += e.e_second.abs();
                s.mean_delta += e.delta;
                s.min_delta = s.min_delta.min(e.delta);
            }
            None => s.nonconverged += 1,
        }
    }
    if k > 0 {
        let k = k as f64;
        s.mean_abs_e_first /= k;
        s.mean_abs_e_second /= k;
        s.mean_delta /= k;
    } else {
        s.mean_abs_e_first = f64::NAN;
        s.mean_abs_e_second = f64::NAN;
        s.mean_delta = f64::NAN;
    }
    s
}

pub const CSV_HEADER: &str = "trial,seed,log_z_exact,log_z_first,log_z_second,e_first,e_second,delta,converged,iterations";

/// Shortest decimal that parses back to the same `f64`.
fn float_cell(x: f64) -> String {
    format!("{x:?}")
}

/// Header row plus one record per row, LF line endings.
pub fn write_csv(rows: &[ExperimentRow]) -> String {
    let mut w = csv_writer();
    w.write_record(CSV_HEADER.split(',')).expect("in-memory write");
    for r in rows {
        let mut rec = vec![r.trial.to_string(), r.seed.to_string(), float_cell(r.log_z_exact)];
        match r.estimate {
            Some(e) => rec.extend([e.log_z_first, e.log_z_second, e.e_first, e.e_second, e.delta].map(float_cell)),
            None => rec.extend(std::iter::repeat_n(String::new(), 5)),
        }
        rec.push(r.converged.to_string());
        rec.push(r.iterations.to_string());
        w.write_record(&rec).expect("in-memory write");
    }
    finish_csv(w)
}

/// A CSV writer into memory with `\n` record terminators.
pub fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

pub fn finish_csv(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are UTF-8")
}

pub fn format_summary(s: &Summary) -> String {
    format!(
        "trials {}\nnonconverged {}\nmean_abs_e_first {}\nmean_abs_e_second {}\nmean_delta {}\n",
        s.trials,
        s.nonconverged,
        format_sig(s.mean_abs_e_first, 12),
        format_sig(s.mean_abs_e_second, 12),
        format_sig(s.mean_delta, 12),
    )
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if !x.is_finite() {
        return if x.is_nan() { "nan".into() } else if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Self-contained SVG with one histogram per column of values.
pub fn histogram_svg(panels: &[(&str, Vec<f64>)], bins: usize) -> String {
    let bins = bins.max(1);
    let (pw, ph, margin) = (420.0, 260.0, 50.0);
    let width = pw * panels.len().max(1) as f64;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{ph}\" font-family=\"sans-serif\" font-size=\"10\">\n"
    );
    for (k, (label, values)) in panels.iter().enumerate() {
        let x0 = k as f64 * pw;
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if values.is_empty() {
            (0.0, 1.0)
        } else if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        };
        let mut counts = vec![0usize; bins];
        for &v in values {
            let b = (((v - lo) / (hi - lo)) * bins as f64) as usize;
            counts[b.min(bins - 1)] += 1;
        }
        let top = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
        let plot_w = pw - 2.0 * margin;
        let plot_h = ph - 2.0 * margin;
        let bw = plot_w / bins as f64;
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"12\">{} (n = {})</text>",
            x0 + pw / 2.0,
            label,
            values.len()
        );
        for (b, &c) in counts.iter().enumerate() {
            let h = plot_h * c as f64 / top;
            let _ = writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"steelblue\"><title>{}</title></rect>",
                x0 + margin + b as f64 * bw,
                ph - margin - h,
                bw,
                h,
                c
            );
        }
        let base = ph - margin;
        let _ = writeln!(
            out,
            "<line x1=\"{0}\" y1=\"{base}\" x2=\"{1}\" y2=\"{base}\" stroke=\"black\"/>\n<line x1=\"{0}\" y1=\"{margin}\" x2=\"{0}\" y2=\"{base}\" stroke=\"black\"/>",
            x0 + margin,
            x0 + pw - margin
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"start\">{}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            x0 + margin,
            base + 14.0,
            format_sig(lo, 4),
            x0 + pw - margin,
            base + 14.0,
            format_sig(hi, 4)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 {} {})\">count</text>",
            x0 + margin - 4.0,
            margin + 4.0,
            top as usize,
            x0 + pw / 2.0,
            base + 30.0,
            label,
            x0 + 14.0,
            ph / 2.0,
            x0 + 14.0,
            ph / 2.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Histograms of `E_first`, `E_second` and `Δ` over converged rows.
pub fn experiment_histograms(rows: &[ExperimentRow], bins: usize) -> String {
    let ests: Vec<TrialEstimate> = rows.iter().filter_map(|r| r.estimate).collect();
    histogram_svg(
        &[
            ("E_first", ests.iter().map(|e| e.e_first).collect()),
            ("E_second", ests.iter().map(|e| e.e_second).collect()),
            ("delta", ests.iter().map(|e| e.delta).collect()),
        ],
        bins,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig_formatting() {
        assert_eq!(format_sig(0.0, 12), "0");
        assert_eq!(format_sig(1.0, 12), "1");
        assert_eq!(format_sig(-2.5, 12), "-2.5");
        assert_eq!(format_sig(1.0 / 3.0, 12), "0.333333333333");
        assert_eq!(format_sig(123456.789, 4), "1.235e+05");
        assert_eq!(format_sig(1.5e-7, 12), "1.5e-07");
        assert_eq!(format_sig(0.0001, 12), "0.0001");
        assert_eq!(format_sig(f64::NAN, 12), "nan");
        assert_eq!(format_sig(5.545177444479562, 12), "5.54517744448");
    }

    #[test]
    fn zero_sigma_trial_is_exact() {
        let cfg = ExperimentConfig {
            trials: 1,
            sigma: 0.0,
            ..ExperimentConfig::default()
        };
        let rows = run_experiment(&cfg).unwrap();
        let e = rows[0].estimate.unwrap();
        assert_eq!(e.e_first, 0.0);
        assert_eq!(e.e_second, 0.0);
        assert_eq!(rows[0].log_z_exact, 8.0 * 2f64.ln());
    }

    #[test]
    fn csv_shape_and_order() {
        let cfg = ExperimentConfig {
            trials: 6,
            nodes: 5,
            jobs: 2,
            ..ExperimentConfig::default()
        };
        let rows = run_experiment(&cfg).unwrap();
        assert!(rows.iter().enumerate().all(|(t, r)| r.trial == t && r.seed == 1 + t as u64));
        let csv = write_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 7);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 10));
        assert!(!csv.contains('\r'));
    }

    #[test]
    fn summary_skips_nonconverged() {
        let est = TrialEstimate { log_z_first: 1.0, log_z_second: 1.0, e_first: 0.2, e_second: -0.1, delta: 0.1 };
        let rows = [
            ExperimentRow { trial: 0, seed: 0, log_z_exact: 1.0, estimate: Some(est), converged: true, iterations: 3 },
            ExperimentRow { trial: 1, seed: 1, log_z_exact: 1.0, estimate: None, converged: false, iterations: 9 },
        ];
        let s = summarize(&rows);
        assert_eq!(s.nonconverged, 1);
        assert_eq!(s.mean_delta, 0.1);
        assert!(write_csv(&rows).lines().nth(2).unwrap().contains(",,,,,false,"));
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = histogram_svg(&[("a", vec![0.1, 0.2, 0.2, 0.9]), ("b", vec![])], 30);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 60);
    }
}
