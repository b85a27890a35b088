//! Convergence studies, slope fits and the text formats the CLI emits.

use std::io::Write;

use crate::error::Result;
use crate::exec::Execution;
use crate::kkt::{control_at_initial_time, costate_at_initial_time};
use crate::matrices::PropertyReport;
use crate::ocp::OcpProblem;
use crate::problems::ExactSolution;
use crate::radau::CollocationScheme;
use crate::solver::{solve, SolveReport, SolverConfig, WarmStart};

/// Errors below this are treated as saturated and left out of slope fits.
pub const SATURATION_FLOOR: f64 = 100.0 * f64::EPSILON;

pub const CONVERGENCE_HEADER: &str = "N,err_state,err_control,err_costate,residual,iterations";
pub const PROPERTIES_HEADER: &str = "N,p1_norm,p2_row_norm_max,p3_norm,p4_row_norm_max";
pub const SOLUTION_HEADER_PREFIX: &str = "tau,t";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub err_state: f64,
    pub err_control: f64,
    pub err_costate: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    State,
    Control,
    Costate,
}

impl ErrorKind {
    pub const ALL: [ErrorKind; 3] = [ErrorKind::State, ErrorKind::Control, ErrorKind::Costate];

    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::State => "state",
            ErrorKind::Control => "control",
            ErrorKind::Costate => "costate",
        }
    }

    fn of(self, row: &ConvergenceRow) -> f64 {
        match self {
            ErrorKind::State => row.err_state,
            ErrorKind::Control => row.err_control,
            ErrorKind::Costate => row.err_costate,
        }
    }
}

/// Least-squares fit `log10(error) ~ c - alpha N`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlopeFit {
    pub alpha: f64,
    pub c: f64,
    pub r_squared: f64,
    pub which: ErrorKind,
    pub points: usize,
}

/// Sup-norm errors at the nodes: state over `tau_0..tau_N`, control over the
/// collocation points, costate over the collocation points plus `Lambda_0`
/// against `lambda*(t0)`.
pub fn node_errors(p: &OcpProblem, exact: &ExactSolution, report: &SolveReport) -> (f64, f64, f64) {
    let nodes = report.scheme.nodes();
    let s = &report.solution;
    let sup = |a: &nalgebra::DVector<f64>, b: nalgebra::DVector<f64>| (a - b).amax();
    let t = |tau: f64| p.horizon.to_physical(tau);

    let err_state = nodes
        .iter()
        .zip(&s.state)
        .map(|(&tau, x)| sup(x, (exact.state)(t(tau))))
        .fold(0.0, f64::max);
    let err_control = nodes[1..]
        .iter()
        .zip(&s.control)
        .map(|(&tau, u)| sup(u, (exact.control)(t(tau))))
        .fold(0.0, f64::max);
    let err_costate = nodes[1..]
        .iter()
        .zip(&s.costate)
        .map(|(&tau, l)| sup(l, (exact.costate)(t(tau))))
        .fold(sup(&s.costate0, (exact.costate)(p.horizon.t0)), f64::max);
    (err_state, err_control, err_costate)
}

fn row_from(
    n: usize,
    p: &OcpProblem,
    exact: &ExactSolution,
    report: Option<&SolveReport>,
) -> ConvergenceRow {
    match report {
        Some(r) if r.converged => {
            let (err_state, err_control, err_costate) = node_errors(p, exact, r);
            ConvergenceRow {
                n,
                err_state,
                err_control,
                err_costate,
                residual: r.final_residual,
                iterations: r.iterations,
                converged: true,
            }
        }
        Some(r) => ConvergenceRow {
            n,
            err_state: f64::NAN,
            err_control: f64::NAN,
            err_costate: f64::NAN,
            residual: r.final_residual,
            iterations: r.iterations,
            converged: false,
        },
        None => ConvergenceRow {
            n,
            err_state: f64::NAN,
            err_control: f64::NAN,
            err_costate: f64::NAN,
            residual: f64::NAN,
            iterations: 0,
            converged: false,
        },
    }
}

/// Solves at every `N` in `ns` and measures the node errors.
///
/// Sequential execution warm-starts each solve from the previous converged
/// one; parallel execution runs independent cold starts.
pub fn convergence_study(
    p: &OcpProblem,
    exact: &ExactSolution,
    ns: &[usize],
    cfg: &SolverConfig,
    exec: Execution,
) -> Vec<ConvergenceRow> {
    if exec.is_parallel() {
        let cold = SolverConfig {
            warm_start: None,
            ..cfg.clone()
        };
        return exec.map(ns, |&n| {
            let report = solve(p, n, &cold);
            row_from(n, p, exact, report.as_ref().ok())
        });
    }

    let mut warm: Option<WarmStart> = cfg.warm_start.clone();
    ns.iter()
        .map(|&n| {
            let step = SolverConfig {
                warm_start: warm.clone(),
                ..cfg.clone()
            };
            let report = solve(p, n, &step);
            if let Ok(r) = &report {
                if r.converged {
                    warm = Some(WarmStart {
                        solution: r.solution.clone(),
                        scheme: r.scheme.clone(),
                    });
                }
            }
            row_from(n, p, exact, report.as_ref().ok())
        })
        .collect()
}

/// Fits over converged rows whose error is finite and above
/// [`SATURATION_FLOOR`]. `None` with fewer than two usable rows.
pub fn fit_slope(rows: &[ConvergenceRow], which: ErrorKind) -> Option<SlopeFit> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.converged)
        .map(|r| (r.n as f64, which.of(r)))
        .filter(|&(_, e)| e.is_finite() && e > SATURATION_FLOOR)
        .map(|(n, e)| (n, e.log10()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Some(SlopeFit {
        alpha: -slope,
        c: my - slope * mx,
        r_squared,
        which,
        points: pts.len(),
    })
}

/// 17 significant digits, round-trip safe.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_convergence_csv<W: Write>(mut w: W, rows: &[ConvergenceRow]) -> std::io::Result<()> {
    writeln!(w, "{CONVERGENCE_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.n,
            fmt_f64(r.err_state),
            fmt_f64(r.err_control),
            fmt_f64(r.err_costate),
            fmt_f64(r.residual),
            r.iterations
        )?;
    }
    Ok(())
}

/// Failed rows are written as `NaN`.
pub fn write_properties_csv<W: Write>(
    mut w: W,
    ns: &[usize],
    reports: &[Result<PropertyReport>],
) -> std::io::Result<()> {
    writeln!(w, "{PROPERTIES_HEADER}")?;
    for (n, r) in ns.iter().zip(reports) {
        let vals = match r {
            Ok(r) => [r.p1_norm, r.p2_row_norm_max, r.p3_norm, r.p4_row_norm_max],
            Err(_) => [f64::NAN; 4],
        };
        let vals: Vec<String> = vals.iter().map(|&v| fmt_f64(v)).collect();
        writeln!(w, "{n},{}", vals.join(","))?;
    }
    Ok(())
}

pub fn write_nodes_table<W: Write>(mut w: W, scheme: &CollocationScheme) -> std::io::Result<()> {
    writeln!(w, "{:>4}  {:>24}  {:>24}", "i", "tau", "omega")?;
    let nodes = scheme.nodes();
    writeln!(
        w,
        "{:>4}  {:>24}  {:>24}",
        0,
        fmt_f64(nodes[0]),
        "(not collocated)"
    )?;
    for (i, (&tau, &om)) in nodes[1..].iter().zip(scheme.weights()).enumerate() {
        writeln!(w, "{:>4}  {:>24}  {:>24}", i + 1, fmt_f64(tau), fmt_f64(om))?;
    }
    let total: f64 = scheme.weights().iter().sum();
    writeln!(w, "{:>4}  {:>24}  {:>24}", "sum", "", fmt_f64(total))
}

/// Per-node solution rows. Control and costate at `tau_0` are left blank
/// unless `extrapolate` is set.
pub fn write_solution_csv<W: Write>(
    mut w: W,
    p: &OcpProblem,
    report: &SolveReport,
    extrapolate: bool,
) -> Result<()> {
    let (n, m) = (p.state_dim(), p.control_dim());
    let s = &report.solution;
    let nodes = report.scheme.nodes();

    let mut header = vec![SOLUTION_HEADER_PREFIX.to_string()];
    header.extend((0..n).map(|k| format!("x{k}")));
    header.extend((0..m).map(|k| format!("u{k}")));
    header.extend((0..n).map(|k| format!("lambda{k}")));
    writeln!(w, "{}", header.join(","))?;

    let fmt_vec = |v: &nalgebra::DVector<f64>| v.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>();
    let first = if extrapolate {
        let lam = costate_at_initial_time(s, &report.scheme);
        let u = control_at_initial_time(s, p, &report.scheme)?;
        Some((fmt_vec(&u), fmt_vec(&lam)))
    } else {
        None
    };

    for (i, &tau) in nodes.iter().enumerate() {
        let mut cells = vec![fmt_f64(tau), fmt_f64(p.horizon.to_physical(tau))];
        cells.extend(fmt_vec(&s.state[i]));
        match (i, &first) {
            (0, Some((u, lam))) => {
                cells.extend(u.iter().cloned());
                cells.extend(lam.iter().cloned());
            }
            (0, None) => cells.extend(std::iter::repeat_n(String::new(), m + n)),
            _ => {
                cells.extend(fmt_vec(&s.control[i - 1]));
                cells.extend(fmt_vec(&s.costate[i - 1]));
            }
        }
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Gnuplot script drawing `log10(error)` against `N` from a convergence CSV.
pub fn plot_script(csv_path: &str, title: &str) -> String {
    format!(
        "set datafile separator ','\n\
         set key top right\n\
         set title '{title}'\n\
         set xlabel 'N'\n\
         set ylabel 'log10 sup-norm error'\n\
         set grid\n\
         plot '{csv_path}' using 1:(log10($2)) skip 1 with linespoints title 'state', \\\n\
         \x20    '' using 1:(log10($3)) skip 1 with linespoints title 'control', \\\n\
         \x20    '' using 1:(log10($4)) skip 1 with linespoints title 'costate'\n\
         pause -1\n"
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Example1;

    fn row(n: usize, e: f64) -> ConvergenceRow {
        ConvergenceRow {
            n,
            err_state: e,
            err_control: e / 2.0,
            err_costate: e,
            residual: 0.0,
            iterations: 1,
            converged: true,
        }
    }

    #[test]
    fn exact_line_fits_perfectly() {
        let rows: Vec<_> = (4..=12)
            .map(|n| row(n, 10f64.powf(1.0 - 0.6 * n as f64)))
            .collect();
        let fit = fit_slope(&rows, ErrorKind::State).unwrap();
        assert!((fit.alpha - 0.6).abs() < 1e-12);
        assert!((fit.c - 1.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn saturated_and_failed_rows_are_excluded() {
        let mut rows: Vec<_> = (4..=8).map(|n| row(n, 10f64.powf(-(n as f64)))).collect();
        rows.push(row(30, 1e-16));
        let mut bad = row(9, 1e-9);
        bad.converged = false;
        bad.err_state = 1.0;
        rows.push(bad);
        let fit = fit_slope(&rows, ErrorKind::State).unwrap();
        assert_eq!(fit.points, 5);
        assert!((fit.alpha - 1.0).abs() < 1e-12);
        assert!(fit_slope(&rows[..1], ErrorKind::State).is_none());
    }

    #[test]
    fn csv_formats_round_trip() {
        let v = std::f64::consts::PI / 7.0;
        assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        let mut buf = Vec::new();
        write_convergence_csv(&mut buf, &[row(4, v)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(CONVERGENCE_HEADER));
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn properties_csv_writes_nan_for_failures() {
        let mut buf = Vec::new();
        let reports = vec![Err(crate::Error::Singular("test"))];
        write_properties_csv(&mut buf, &[3], &reports).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().nth(1).unwrap(), "3,NaN,NaN,NaN,NaN");
    }

    #[test]
    fn solution_csv_blank_initial_entries() {
        let (p, _) = Example1::problem();
        let r = solve(&p, 6, &SolverConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_solution_csv(&mut buf, &p, &r, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 8);
        assert!(lines[1].ends_with(",,"));

        let mut buf = Vec::new();
        write_solution_csv(&mut buf, &p, &r, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let first: Vec<_> = text.lines().nth(1).unwrap().split(',').collect();
        let u0: f64 = first[3].parse().unwrap();
        assert!((u0 - Example1::control(0.0)).abs() < 1e-3);
    }

    #[test]
    fn sequential_and_parallel_studies_agree() {
        let (p, e) = Example1::problem();
        let ns: Vec<usize> = (4..=10).collect();
        let cfg = SolverConfig::default();
        let seq = convergence_study(&p, &e, &ns, &cfg, Execution::Sequential);
        let par = convergence_study(&p, &e, &ns, &cfg, Execution::Parallel);
        for (a, b) in seq.iter().zip(&par) {
            assert!(a.converged && b.converged);
            assert!((a.err_state - b.err_state).abs() < 1e-9);
            assert!((a.err_costate - b.err_costate).abs() < 1e-9);
        }
    }
}
