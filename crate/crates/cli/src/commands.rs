//! Subcommand drivers. Each writes its outputs under the run directory and
//! returns a short summary line.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use biharm_core::calibration::MORREY_C;
use biharm_core::cgo::{assemble_reflected, CgoSpec, Fault};
use biharm_core::domain::Grid;
use biharm_core::dtn::{dtn_gap_norm, DtnMap};
use biharm_core::fields::{exterior_derivative, gradient, hodge_decompose, ScalarField};
use biharm_core::forward::{assemble, assumption1_margin, mms_convergence, solve_navier};
use biharm_core::io::write_bfld;
use biharm_core::recover::{
    fmt_f64, fourier_samples, oracle_da, oracle_frequencies, oracle_scalar, oracle_torus, relative_error,
    samples_csv_header, samples_csv_rows, stability_rhs, sweep, sweep_csv, Bound, Exponents, FourierSample, Pipeline,
    SampleMode, SweepReport, SWEEP_CSV_HEADER,
};
use biharm_core::{C64, VERSION};
use serde::Serialize;
use serde_json::{json, Value};

use crate::check::{run_all, CheckItem, CheckOptions};
use crate::config::{ForwardMode, RunConfig};
use crate::svg::{LogLogPlot, Series, Style};
use crate::CliError;

/// Output directory plus the provenance stamped into every file.
pub struct Outputs {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub hash: String,
}

impl Outputs {
    pub fn new(dir: &Path, config: &RunConfig) -> Result<Outputs, CliError> {
        fs::create_dir_all(dir)?;
        let out = Outputs { dir: dir.to_path_buf(), config: config.clone(), hash: config.hash() };
        fs::write(dir.join("config.toml"), config.to_toml())?;
        Ok(out)
    }

    pub fn stamp(&self) -> String {
        format!("biharm {VERSION} config_sha256={} seed={}", self.hash, self.config.seed)
    }

    pub fn csv(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let p = self.dir.join(name);
        fs::write(&p, format!("# {}\n{body}", self.stamp()))?;
        Ok(p)
    }

    pub fn json<T: Serialize>(&self, name: &str, result: &T) -> Result<PathBuf, CliError> {
        let doc = json!({
            "provenance": {
                "version": VERSION,
                "config_sha256": self.hash,
                "config": serde_json::to_value(&self.config).map_err(|e| CliError::Numerical(e.to_string()))?,
            },
            "result": serde_json::to_value(result).map_err(|e| CliError::Numerical(e.to_string()))?,
        });
        let p = self.dir.join(name);
        let mut text = serde_json::to_string_pretty(&doc).map_err(|e| CliError::Numerical(e.to_string()))?;
        text.push('\n');
        fs::write(&p, text)?;
        Ok(p)
    }

    pub fn text(&self, name: &str, body: &str) -> Result<PathBuf, CliError> {
        let p = self.dir.join(name);
        fs::write(&p, body)?;
        Ok(p)
    }

    /// BFLD with the provenance stamp in the header name.
    pub fn field(&self, name: &str, grid: &Grid, comps: &[&[C64]]) -> Result<PathBuf, CliError> {
        let p = self.dir.join(format!("{name}.bfld"));
        let mut buf = Vec::new();
        write_bfld(&mut buf, &format!("{name} [{}]", self.stamp()), grid, comps, true)?;
        fs::write(&p, buf)?;
        Ok(p)
    }

    pub fn scalar(&self, name: &str, f: &ScalarField) -> Result<PathBuf, CliError> {
        self.field(name, &f.grid, &[&f.values])
    }
}

/// JSON-friendly float: non-finite values become strings.
fn num(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        json!(fmt_f64(v))
    }
}

pub fn forward(cfg: &RunConfig, grid: Arc<Grid>, out: &Outputs) -> Result<String, CliError> {
    match cfg.forward.mode {
        ForwardMode::Zero => {
            let (a, q) = cfg.coefficients.base.fields(grid.clone())?;
            let op = assemble(grid.clone(), &a, &q)?;
            let z = ScalarField::zeros(grid.clone());
            let (u, w) = solve_navier(&op, &z, &z, None)?;
            let lu = op.apply(&u, &w);
            let residual = grid.interior().iter().map(|&i| lu.values[i].norm()).fold(0.0, f64::max);
            out.scalar("u", &u)?;
            out.scalar("w", &w)?;
            let margin = assumption1_margin(&op)?;
            out.json(
                "forward.json",
                &json!({
                    "mode": "zero",
                    "max_abs_u": num(u.max_abs()),
                    "max_abs_w": num(w.max_abs()),
                    "interior_residual": num(residual),
                    "relative_margin": num(margin.relative()),
                    "matrix_hash": op.matrix_hash(),
                }),
            )?;
            Ok(format!("forward: zero data, max|u| = {}", fmt_f64(u.max_abs())))
        }
        ForwardMode::Mms => {
            let rows = mms_convergence(&cfg.forward.mms_levels, cfg.forward.with_coefficients)?;
            let mut body = String::from("nodes_per_unit,spacing,l2_error,order\n");
            for r in &rows {
                body.push_str(&format!(
                    "{},{},{},{}\n",
                    r.nodes_per_unit,
                    fmt_f64(r.spacing),
                    fmt_f64(r.l2_error),
                    fmt_f64(r.order)
                ));
            }
            out.csv("mms.csv", &body)?;
            let fitted = rows.iter().map(|r| r.order).filter(|o| o.is_finite()).fold(f64::INFINITY, f64::min);
            out.json("forward.json", &json!({ "mode": "mms", "min_order": num(fitted), "levels": rows.len() }))?;
            Ok(format!("forward: MMS min order {}", fmt_f64(fitted)))
        }
    }
}

pub fn dtn(cfg: &RunConfig, grid: Arc<Grid>, out: &Outputs) -> Result<String, CliError> {
    let c = &cfg.coefficients;
    let (a1, q1) = c.base.fields(grid.clone())?;
    let (a2, q2) = c.base.plus(&c.difference).fields(grid.clone())?;
    let op1 = assemble(grid.clone(), &a1, &q1)?;
    let op2 = assemble(grid.clone(), &a2, &q2)?;
    let m1 = DtnMap::assemble(&op1, cfg.sweep.dtn_margin)?;
    let m2 = DtnMap::assemble(&op2, cfg.sweep.dtn_margin)?;
    let gap = dtn_gap_norm(&m1, &m2)?;
    for (name, m) in [("dtn_base.bin", &m1), ("dtn_perturbed.bin", &m2)] {
        let mut buf = Vec::new();
        m.write(&mut buf)?;
        fs::write(out.dir.join(name), buf)?;
    }
    out.json(
        "dtn.json",
        &json!({
            "rows": m1.rows(),
            "cols": m1.cols(),
            "gap": num(gap),
            "matrix_hash_base": op1.matrix_hash(),
            "matrix_hash_perturbed": op2.matrix_hash(),
        }),
    )?;
    Ok(format!("dtn: {}x{} maps, gap {}", m1.rows(), m1.cols(), fmt_f64(gap)))
}

pub fn cgo(cfg: &RunConfig, grid: Arc<Grid>, out: &Outputs) -> Result<String, CliError> {
    let s = &cfg.cgo;
    let spec = CgoSpec::new(&s.xi, s.h, s.sign, s.amplitude)?;
    let (a, q) = cfg.coefficients.base.fields(grid)?;
    let sol = assemble_reflected(&spec, s.which, &a, &q, Fault::None)?;
    out.scalar("u", &sol.u)?;
    out.scalar("w", &sol.w)?;
    out.scalar("remainder", &sol.remainder)?;
    out.json("cgo.json", &sol.diagnostics)?;
    Ok(format!(
        "cgo: ‖r‖_H1scl = {}, Γ₀ relative {}",
        fmt_f64(sol.diagnostics.remainder_h1_scl),
        fmt_f64(sol.diagnostics.gamma0_relative)
    ))
}

pub fn hodge(cfg: &RunConfig, grid: Arc<Grid>, out: &Outputs) -> Result<String, CliError> {
    let (a, _) = cfg.coefficients.difference.fields(grid.clone())?;
    let h = hodge_decompose(&a)?;
    let back = h.solenoidal.sub(&gradient(&h.potential).scale(-1.0));
    let da = exterior_derivative(&a).max_abs();
    let sol: Vec<&[C64]> = h.solenoidal.comps.iter().map(|c| c.as_slice()).collect();
    out.field("solenoidal", &grid, &sol)?;
    out.scalar("potential", &h.potential)?;
    let morrey = if da > 0.0 { h.solenoidal.max_abs() / da } else { 0.0 };
    out.json(
        "hodge.json",
        &json!({
            "poisson_residual": num(h.residual),
            "roundtrip": num(back.sub(&a).l2_norm() / a.l2_norm().max(1e-300)),
            "max_abs_solenoidal": num(h.solenoidal.max_abs()),
            "max_abs_potential": num(h.potential.max_abs()),
            "morrey_ratio": num(morrey),
            "morrey_constant": MORREY_C,
        }),
    )?;
    Ok(format!("hodge: ‖A_sol‖∞/‖dA‖∞ = {}", fmt_f64(morrey)))
}

#[derive(Serialize)]
struct LadderRow {
    mode: &'static str,
    h: f64,
    relative_error: f64,
    failures: usize,
}

fn ladder(
    cfg: &RunConfig,
    grid: Arc<Grid>,
    out: &Outputs,
    modes: &[SampleMode],
    file: &str,
) -> Result<Vec<LadderRow>, CliError> {
    let c = &cfg.coefficients;
    let p = Pipeline::from_coefficients(grid.clone(), &c.base, &c.base.plus(&c.difference))?;
    let torus = oracle_torus(&grid)?;
    let xis = oracle_frequencies(&torus, cfg.lattice.count, cfg.lattice.max_norm);
    let (da, dq) = c.difference.fields(grid.clone())?;
    let mut rows = Vec::new();
    let mut body = samples_csv_header(grid.dim());
    body.push('\n');
    for &mode in modes {
        let oracle: Vec<Vec<C64>> = match mode {
            SampleMode::DA => oracle_da(&da, &xis)?,
            SampleMode::Phi => {
                let psi = hodge_decompose(&da)?.potential;
                oracle_scalar(&psi, &xis)?.into_iter().map(|v| vec![-v]).collect()
            }
            SampleMode::Q => oracle_scalar(&dq, &xis)?.into_iter().map(|v| vec![v]).collect(),
        };
        for &h in &cfg.lattice.h {
            let mut ok: Vec<(FourierSample, Vec<C64>)> = Vec::new();
            let mut failures = 0;
            for (r, o) in fourier_samples(&p, mode, &xis, h).into_iter().zip(&oracle) {
                match r {
                    Ok(s) => ok.push((s, o.clone())),
                    Err(_) => failures += 1,
                }
            }
            let vals: Vec<Vec<C64>> = ok.iter().map(|(s, _)| s.value.clone()).collect();
            let orcs: Vec<Vec<C64>> = ok.iter().map(|(_, o)| o.clone()).collect();
            let err = if vals.is_empty() { f64::NAN } else { relative_error(&vals, &orcs) };
            body.push_str(&samples_csv_rows(&ok, None));
            rows.push(LadderRow { mode: mode.name(), h, relative_error: err, failures });
        }
    }
    out.csv("samples.csv", &body)?;
    out.json(file, &rows)?;
    Ok(rows)
}

fn ladder_summary(rows: &[LadderRow]) -> String {
    rows.iter()
        .map(|r| format!("{} h={} err={}", r.mode, r.h, fmt_f64(r.relative_error)))
        .collect::<Vec<_>>()
        .join("; ")
}

pub fn recover_da(cfg: &RunConfig, grid: Arc<Grid>, out: &Outputs) -> Result<String, CliError> {
    let rows = ladder(cfg, grid, out, &[SampleMode::DA, SampleMode::Phi], "recover_da.json")?;
    Ok(format!("recover-da: {}", ladder_summary(&rows)))
}

pub fn recover_q(cfg: &RunConfig, grid: Arc<Grid>, out: &Outputs) -> Result<String, CliError> {
    let rows = ladder(cfg, grid, out, &[SampleMode::Q], "recover_q.json")?;
    Ok(format!("recover-q: {}", ladder_summary(&rows)))
}

/// Columns of sweep.csv used by the plot.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub gap: f64,
    pub err_da_hm1: f64,
    pub err_q_hm1: f64,
    pub err_a_linf: f64,
    pub ok: bool,
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepPoint>, CliError> {
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| CliError::Config("sweep.csv: empty".into()))?;
    if header != SWEEP_CSV_HEADER {
        return Err(CliError::Config("sweep.csv: unexpected header".into()));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            let g = |k: usize| -> Result<f64, CliError> {
                f.get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| CliError::Config(format!("sweep.csv: bad row {l:?}")))
            };
            Ok(SweepPoint {
                gap: g(1)?,
                err_da_hm1: g(2)?,
                err_q_hm1: g(3)?,
                err_a_linf: g(4)?,
                ok: f.last() == Some(&"ok"),
            })
        })
        .collect()
}

/// Error against gap with the calibrated right-hand sides overlaid.
pub fn loglog_plot(cfg: &RunConfig, grid: &Grid, points: &[SweepPoint], stamp: &str) -> Result<String, CliError> {
    let consts = cfg.schedule_consts(grid);
    let ex = Exponents::new(consts.n, consts.s, consts.alpha)?;
    let pts: Vec<&SweepPoint> = points.iter().filter(|p| p.ok && p.gap > 0.0).collect();
    let mut gaps: Vec<f64> = pts.iter().map(|p| p.gap).collect();
    gaps.sort_by(f64::total_cmp);
    let curve = |which: Bound, c: f64| -> Vec<(f64, f64)> {
        if gaps.is_empty() {
            return Vec::new();
        }
        let (lo, hi) = (gaps[0].log10() - 0.25, gaps[gaps.len() - 1].log10() + 0.25);
        (0..=40)
            .map(|k| {
                let g = 10f64.powf(lo + (hi - lo) * k as f64 / 40.0);
                (g, stability_rhs(g, &ex, consts.s, which, c).value)
            })
            .collect()
    };
    let plot = LogLogPlot {
        title: "stability sweep".into(),
        x_label: "log10 DtN gap".into(),
        y_label: "log10 error".into(),
        series: vec![
            Series {
                label: "A L-inf".into(),
                color: "#1f77b4",
                style: Style::Markers,
                points: pts.iter().map(|p| (p.gap, p.err_a_linf)).collect(),
            },
            Series {
                label: "q H^-1".into(),
                color: "#d62728",
                style: Style::Markers,
                points: pts.iter().map(|p| (p.gap, p.err_q_hm1)).collect(),
            },
            Series {
                label: "dA H^-1".into(),
                color: "#2ca02c",
                style: Style::Markers,
                points: pts.iter().map(|p| (p.gap, p.err_da_hm1)).collect(),
            },
            Series {
                label: "rhs A".into(),
                color: "#1f77b4",
                style: Style::Line,
                points: curve(Bound::ALinf, cfg.sweep.c_a),
            },
            Series {
                label: "rhs q".into(),
                color: "#d62728",
                style: Style::Line,
                points: curve(Bound::QHminus1, cfg.sweep.c_q),
            },
        ],
        comment: stamp.to_string(),
    };
    Ok(plot.render())
}

pub fn sweep_report_csvs(report: &SweepReport, n: usize) -> (String, String) {
    let mut samples = samples_csv_header(n);
    samples.push('\n');
    for r in &report.rows {
        samples.push_str(&samples_csv_rows(&r.samples, Some(&format!("tau={}", fmt_f64(r.tau)))));
    }
    (sweep_csv(report), samples)
}

pub fn run_sweep(cfg: &RunConfig, grid: Arc<Grid>, out: &Outputs) -> Result<String, CliError> {
    let report = sweep(&cfg.sweep_config(grid.clone()))?;
    let (sw, samples) = sweep_report_csvs(&report, grid.dim());
    out.csv("sweep.csv", &sw)?;
    out.csv("samples.csv", &samples)?;
    let points = parse_sweep_csv(&sw)?;
    out.text("loglog.svg", &loglog_plot(cfg, &grid, &points, &out.stamp())?)?;
    let failed = report.rows.iter().filter(|r| r.error.is_some()).count();
    out.json(
        "sweep.json",
        &json!({
            "rows": report.rows.len(),
            "failed_rows": failed,
            "fitted_slopes": { "dA_Hm1": num(report.fitted[0]), "q_Hm1": num(report.fitted[1]), "A_Linf": num(report.fitted[2]) },
        }),
    )?;
    Ok(format!("sweep: {} rows ({failed} failed)", report.rows.len()))
}

pub fn plot(cfg: &RunConfig, grid: Arc<Grid>, out: &Outputs, input: &Path) -> Result<String, CliError> {
    let text = fs::read_to_string(input)?;
    let points = parse_sweep_csv(&text)?;
    out.text("loglog.svg", &loglog_plot(cfg, &grid, &points, &out.stamp())?)?;
    Ok(format!("plot: {} rows", points.len()))
}

#[derive(Serialize)]
pub struct CheckReport {
    pub passed: bool,
    pub failures: Vec<String>,
    pub items: Vec<CheckItem>,
}

/// Returns the report; the caller maps failures to exit status 1.
pub fn check(opts: &CheckOptions, out: &Outputs) -> Result<CheckReport, CliError> {
    let items = run_all(opts)?;
    let failures: Vec<String> = items.iter().filter(|i| !i.pass).map(|i| format!("{}/{}", i.suite, i.name)).collect();
    let report = CheckReport { passed: failures.is_empty(), failures, items };
    out.json("check.json", &report)?;
    Ok(report)
}
