//! CSV output and the human-readable sweep summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::cli::sweep::SweepTable;
use crate::error::{Error, Result};
use crate::oracle::{bbk_leading_coefficient, TheoryRef};

pub const CSV_HEADER: [&str; 10] = [
    "scheme",
    "model",
    "dt",
    "n_steps",
    "ep",
    "stderr",
    "n_singular",
    "n_wraps",
    "valid",
    "seed",
];

/// One CSV line, parsed back.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub scheme: String,
    pub model: String,
    pub dt: f64,
    pub n_steps: u64,
    pub ep: f64,
    pub stderr: f64,
    pub n_singular: u64,
    pub n_wraps: u64,
    pub valid: bool,
    pub seed: u64,
}

/// Writes the table as CSV. Floats use the shortest representation that
/// parses back to the same value.
pub fn write_csv<W: std::io::Write>(table: &SweepTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in &table.rows {
        w.write_record([
            r.scheme.to_string(),
            r.model.clone(),
            r.dt.to_string(),
            r.n_steps.to_string(),
            r.ep.to_string(),
            r.stderr.to_string(),
            r.n_singular.to_string(),
            r.n_wraps.to_string(),
            r.valid.to_string(),
            r.seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<CsvRow>> {
    let mut rd = csv::Reader::from_path(path)?;
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidArgument(format!("unexpected CSV header {header:?}")));
    }
    let bad = |field: &str, v: &str| Error::InvalidArgument(format!("bad {field} `{v}`"));
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let float = |i: usize| f(i).parse::<f64>().map_err(|_| bad(CSV_HEADER[i], f(i)));
        let int = |i: usize| f(i).parse::<u64>().map_err(|_| bad(CSV_HEADER[i], f(i)));
        rows.push(CsvRow {
            scheme: f(0).to_owned(),
            model: f(1).to_owned(),
            dt: float(2)?,
            n_steps: int(3)?,
            ep: float(4)?,
            stderr: float(5)?,
            n_singular: int(6)?,
            n_wraps: int(7)?,
            valid: f(8).parse::<bool>().map_err(|_| bad("valid", f(8)))?,
            seed: int(9)?,
        });
    }
    Ok(rows)
}

/// One acceptance check on a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

/// The tolerance checks that apply to the table's theory reference.
pub fn checks(table: &SweepTable) -> Vec<Check> {
    let mut out = Vec::new();
    let Some(theory) = table.theory else { return out };
    let valid: Vec<_> = table.rows.iter().filter(|r| r.valid).collect();
    let slope_band = |lo: f64, hi: f64| match table.fit {
        Some(f) => Check {
            name: format!("slope in [{lo}, {hi}]"),
            pass: (lo..=hi).contains(&f.slope),
            detail: format!("slope = {:.4} ± {:.4}", f.slope, f.slope_stderr),
        },
        None => Check {
            name: format!("slope in [{lo}, {hi}]"),
            pass: false,
            detail: "no fit".into(),
        },
    };
    match theory {
        TheoryRef::EmAdditiveOrder2 => out.push(slope_band(1.7, 2.3)),
        TheoryRef::EmMultiplicativeConstant { c } => {
            let worst = valid.iter().map(|r| (r.ep / c - 1.0).abs()).fold(0.0, f64::max);
            out.push(Check {
                name: "every EP within 15% of c".into(),
                pass: !valid.is_empty() && worst <= 0.15,
                detail: format!("worst relative deviation {worst:.4}"),
            });
            let mut pairs_ok = true;
            for (i, a) in valid.iter().enumerate() {
                for b in &valid[i + 1..] {
                    let tol = 3.0 * a.stderr.hypot(b.stderr) + 0.1 * 0.5 * (a.ep.abs() + b.ep.abs());
                    pairs_ok &= (a.ep - b.ep).abs() <= tol;
                }
            }
            out.push(Check {
                name: "pairwise agreement within 3 combined stderr + 10%".into(),
                pass: pairs_ok,
                detail: String::new(),
            });
        }
        TheoryRef::MilsteinOrder1 => out.push(slope_band(0.7, 1.3)),
        TheoryRef::BbkLinear { n_dof, gamma, mass } => {
            out.push(slope_band(0.8, 1.2));
            if let Some(r) = valid.iter().min_by(|a, b| a.dt.total_cmp(&b.dt)) {
                let want = theory.value(r.dt).unwrap_or(f64::NAN) / r.dt;
                let ratio = (r.ep / r.dt) / want;
                out.push(Check {
                    name: "EP/dt at smallest dt within 10% of theory".into(),
                    pass: (ratio - 1.0).abs() <= 0.1,
                    detail: format!("dt = {}: ratio {ratio:.4} (N={n_dof}, gamma={gamma}, m={mass})", r.dt),
                });
            }
        }
    }
    let all_singular_ok = table.rows.iter().all(|r| r.valid);
    out.push(Check {
        name: "every row valid (singular fraction under threshold)".into(),
        pass: all_singular_ok,
        detail: String::new(),
    });
    let nonneg = valid.iter().all(|r| r.ep >= -3.0 * r.stderr);
    out.push(Check {
        name: "EP >= -3 stderr on every row".into(),
        pass: nonneg,
        detail: String::new(),
    });
    out
}

pub fn render_summary(table: &SweepTable) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scheme: {}  variant: {}", table.scheme, table.variant);
    let _ = writeln!(s, "model: {}", table.model);
    let _ = writeln!(
        s,
        "{:>10} {:>14} {:>12} {:>12} {:>10} {:>6}",
        "dt", "ep", "stderr", "n_steps", "singular", "valid"
    );
    for r in &table.rows {
        let _ = writeln!(
            s,
            "{:>10} {:>14.6e} {:>12.3e} {:>12} {:>10} {:>6}",
            r.dt, r.ep, r.stderr, r.n_steps, r.n_singular, r.valid
        );
    }
    match table.fit {
        Some(f) => {
            let _ = writeln!(
                s,
                "fitted slope: {:.4} ± {:.4} (intercept {:.4}, {} rows)",
                f.slope, f.slope_stderr, f.intercept, f.n_used
            );
        }
        None => {
            let _ = writeln!(s, "fitted slope: unavailable (fewer than two valid rows with ep > 0)");
        }
    }
    match table.theory {
        None => {
            let _ = writeln!(s, "no theory reference");
        }
        Some(t) => {
            let _ = writeln!(s, "theory: {}", t.describe());
            match t {
                TheoryRef::EmMultiplicativeConstant { c } => {
                    for r in table.rows.iter().filter(|r| r.valid) {
                        let _ = writeln!(s, "  dt = {}: ep / c = {:.4}", r.dt, r.ep / c);
                    }
                }
                TheoryRef::BbkLinear { n_dof, gamma, mass } => {
                    let lead = bbk_leading_coefficient(n_dof, gamma, mass);
                    for r in table.rows.iter().filter(|r| r.valid) {
                        let exact = t.value(r.dt).unwrap_or(f64::NAN);
                        let _ = writeln!(
                            s,
                            "  dt = {}: (ep/dt) / (N gamma^2 / 2m^2) = {:.4}, ep / exact = {:.4}",
                            r.dt,
                            r.ep / r.dt / lead,
                            r.ep / exact
                        );
                    }
                }
                _ => {}
            }
            for c in checks(table) {
                let tag = if c.pass { "PASS" } else { "FAIL" };
                if c.detail.is_empty() {
                    let _ = writeln!(s, "{tag} {}", c.name);
                } else {
                    let _ = writeln!(s, "{tag} {} ({})", c.name, c.detail);
                }
            }
        }
    }
    for n in &table.notes {
        let _ = writeln!(s, "note: {n}");
    }
    s
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportPaths {
    pub csv: PathBuf,
    pub summary: PathBuf,
}

/// Writes `<path>` as CSV and `<path stem>.summary.txt` beside it.
pub fn emit_report(table: &SweepTable, path: &Path) -> Result<ReportPaths> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let file = std::fs::File::create(path)?;
    write_csv(table, std::io::BufWriter::new(file))?;
    let summary = path.with_extension("summary.txt");
    std::fs::write(&summary, render_summary(table))?;
    Ok(ReportPaths {
        csv: path.to_path_buf(),
        summary,
    })
}
