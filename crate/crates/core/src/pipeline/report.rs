use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ROWS_FILE: &str = "rows.csv";
pub const SUMMARY_FILE: &str = "summary.json";

/// Column groups of the report, in header order.
pub const METHODS: [&str; 7] = ["opt", "dnn", "elm", "gcv", "upre", "dp", "oed"];

/// Slack allowed when comparing a method's error with the oracle's.
pub const SUBOPTIMAL_TOL: f64 = 1e-12;

/// Share of validation samples whose `k_dnn` error must be within this
/// factor of the `k_opt` error, as reported in the summary.
pub const STOP_ERROR_FACTOR: f64 = 1.10;

/// Parameter and errors of one method on one sample; NaN when not run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MethodResult {
    /// `λ`, or a 1-based iteration count.
    pub param: f64,
    pub err_l2: f64,
    pub err_l1: f64,
}

impl MethodResult {
    pub const MISSING: Self = Self {
        param: f64::NAN,
        err_l2: f64::NAN,
        err_l1: f64::NAN,
    };

    pub fn is_present(&self) -> bool {
        !self.param.is_nan()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub sample: usize,
    pub noise: f64,
    pub gamma_true: f64,
    pub gamma_dnn: f64,
    pub dp_failed: bool,
    pub oracle_suboptimal: bool,
    /// Some configured method (or the oracle) could not be evaluated.
    pub failed: bool,
    /// Indexed like [`METHODS`].
    pub methods: [MethodResult; 7],
}

impl ReportRow {
    pub fn new(sample: usize, noise: f64) -> Self {
        Self {
            sample,
            noise,
            gamma_true: f64::NAN,
            gamma_dnn: f64::NAN,
            dp_failed: false,
            oracle_suboptimal: false,
            failed: false,
            methods: [MethodResult::MISSING; 7],
        }
    }

    pub fn method(&self, name: &str) -> &MethodResult {
        &self.methods[method_index(name)]
    }

    pub fn method_mut(&mut self, name: &str) -> &mut MethodResult {
        &mut self.methods[method_index(name)]
    }

    /// Flags the row when some method beats the oracle by more than the
    /// tolerance, which means the oracle search missed the optimum.
    pub fn flag_suboptimal_oracle(&mut self) {
        let opt = self.method("opt").err_l2;
        self.oracle_suboptimal = opt.is_finite()
            && self.methods[1..]
                .iter()
                .any(|m| m.err_l2.is_finite() && m.err_l2 < opt - SUBOPTIMAL_TOL);
    }
}

fn method_index(name: &str) -> usize {
    METHODS
        .iter()
        .position(|m| *m == name)
        .unwrap_or_else(|| panic!("unknown method {name:?}"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q25: f64,
    pub q75: f64,
    pub q95: f64,
    pub min: f64,
    pub max: f64,
}

/// Sample quantile with linear interpolation between order statistics
/// (`h = (n − 1)p`). `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl Stats {
    /// Statistics of the finite values, or `None` when there are none.
    pub fn of(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(Self {
            count: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: quantile(&v, 0.5),
            q05: quantile(&v, 0.05),
            q25: quantile(&v, 0.25),
            q75: quantile(&v, 0.75),
            q95: quantile(&v, 0.95),
            min: v[0],
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub param: Stats,
    pub err_l2: Stats,
    pub err_l1: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingSummary {
    pub median_abs_dnn_minus_opt: f64,
    /// Share of samples with `err(k_dnn) ≤ 1.10·err(k_opt)`.
    pub frac_dnn_within_factor: f64,
    pub median_dp_minus_opt: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Summary {
    pub config_hash: String,
    pub experiment: String,
    pub samples: usize,
    pub failed: usize,
    pub dp_failures: usize,
    pub oracle_suboptimal: usize,
    pub methods: BTreeMap<String, MethodSummary>,
    /// Pearson correlation of `γ_dnn` with `γ_true`.
    pub gamma_pearson: Option<f64>,
    pub stopping: Option<StoppingSummary>,
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    let d = (sxx * syy).sqrt();
    (d > 0.0).then(|| sxy / d)
}

/// Summary statistics; a pure function of the rows.
pub fn summarize(config_hash: &str, experiment: &str, rows: &[ReportRow], iterative: bool) -> Summary {
    let mut methods = BTreeMap::new();
    for (i, name) in METHODS.iter().enumerate() {
        let col = |f: fn(&MethodResult) -> f64| rows.iter().map(move |r| f(&r.methods[i]));
        if let (Some(param), Some(err_l2), Some(err_l1)) =
            (Stats::of(col(|m| m.param)), Stats::of(col(|m| m.err_l2)), Stats::of(col(|m| m.err_l1)))
        {
            methods.insert(name.to_string(), MethodSummary { param, err_l2, err_l1 });
        }
    }
    let gammas: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.gamma_true.is_finite() && r.gamma_dnn.is_finite())
        .map(|r| (r.gamma_true, r.gamma_dnn))
        .collect();
    let stopping = iterative
        .then(|| {
            let both: Vec<&ReportRow> = rows
                .iter()
                .filter(|r| r.method("opt").is_present() && r.method("dnn").is_present())
                .collect();
            if both.is_empty() {
                return None;
            }
            let abs = Stats::of(both.iter().map(|r| (r.method("dnn").param - r.method("opt").param).abs()))?;
            let within = both
                .iter()
                .filter(|r| r.method("dnn").err_l2 <= STOP_ERROR_FACTOR * r.method("opt").err_l2)
                .count();
            let dp = Stats::of(
                rows.iter()
                    .filter(|r| r.method("opt").is_present() && r.method("dp").is_present())
                    .map(|r| r.method("dp").param - r.method("opt").param),
            );
            Some(StoppingSummary {
                median_abs_dnn_minus_opt: abs.median,
                frac_dnn_within_factor: within as f64 / both.len() as f64,
                median_dp_minus_opt: dp.map(|s| s.median),
            })
        })
        .flatten();
    Summary {
        config_hash: config_hash.to_string(),
        experiment: experiment.to_string(),
        samples: rows.len(),
        failed: rows.iter().filter(|r| r.failed).count(),
        dp_failures: rows.iter().filter(|r| r.dp_failed).count(),
        oracle_suboptimal: rows.iter().filter(|r| r.oracle_suboptimal).count(),
        methods,
        gamma_pearson: pearson(&gammas),
        stopping,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationReport {
    pub rows: Vec<ReportRow>,
    pub summary: Summary,
}

pub fn header() -> String {
    let mut cols: Vec<String> = ["sample", "noise", "gamma_true", "gamma_dnn", "dp_failed", "oracle_suboptimal", "failed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in METHODS {
        cols.extend([format!("param_{m}"), format!("err_l2_{m}"), format!("err_l1_{m}")]);
    }
    cols.join(",")
}

/// 17 significant digits, enough to round-trip any `f64`.
fn float(out: &mut String, v: f64) {
    let _ = write!(out, ",{v:.16e}");
}

pub fn rows_to_csv(rows: &[ReportRow]) -> String {
    let mut out = header();
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{}", r.sample);
        float(&mut out, r.noise);
        float(&mut out, r.gamma_true);
        float(&mut out, r.gamma_dnn);
        let _ = write!(
            out,
            ",{},{},{}",
            u8::from(r.dp_failed),
            u8::from(r.oracle_suboptimal),
            u8::from(r.failed)
        );
        for m in &r.methods {
            float(&mut out, m.param);
            float(&mut out, m.err_l2);
            float(&mut out, m.err_l1);
        }
        out.push('\n');
    }
    out
}

pub fn rows_from_csv(text: &str) -> std::result::Result<Vec<ReportRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header() => {}
        _ => return Err("unexpected header".into()),
    }
    let width = 7 + 3 * METHODS.len();
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != width {
                return Err(format!("line {}: {} fields, expected {width}", i + 2, f.len()));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|e| format!("line {}: field {k}: {e}", i + 2));
            let flag = |k: usize| match f[k] {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(format!("line {}: bad flag {other:?}", i + 2)),
            };
            let mut row = ReportRow {
                sample: f[0].parse().map_err(|e| format!("line {}: sample: {e}", i + 2))?,
                noise: num(1)?,
                gamma_true: num(2)?,
                gamma_dnn: num(3)?,
                dp_failed: flag(4)?,
                oracle_suboptimal: flag(5)?,
                failed: flag(6)?,
                methods: [MethodResult::MISSING; 7],
            };
            for (k, m) in row.methods.iter_mut().enumerate() {
                *m = MethodResult {
                    param: num(7 + 3 * k)?,
                    err_l2: num(8 + 3 * k)?,
                    err_l1: num(9 + 3 * k)?,
                };
            }
            Ok(row)
        })
        .collect()
}

impl EvaluationReport {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let rows = dir.join(ROWS_FILE);
        std::fs::write(&rows, rows_to_csv(&self.rows)).map_err(|e| Error::io(&rows, e))?;
        let summary = dir.join(SUMMARY_FILE);
        let text = serde_json::to_string_pretty(&self.summary)? + "\n";
        std::fs::write(&summary, text).map_err(|e| Error::io(&summary, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let rows_path = dir.join(ROWS_FILE);
        let text = std::fs::read_to_string(&rows_path).map_err(|e| Error::io(&rows_path, e))?;
        let rows = rows_from_csv(&text).map_err(|reason| Error::format(&rows_path, reason))?;
        let summary_path = dir.join(SUMMARY_FILE);
        let text = std::fs::read_to_string(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
        let summary = serde_json::from_str(&text).map_err(|e| Error::format(&summary_path, e.to_string()))?;
        Ok(Self { rows, summary })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_type_seven() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert!((quantile(&v, 0.25) - 1.75).abs() < 1e-15);
        assert_eq!(quantile(&[5.0], 0.95), 5.0);
    }

    #[test]
    fn stats_skip_non_finite() {
        let s = Stats::of([3.0, f64::NAN, 1.0, 2.0]).unwrap();
        assert_eq!((s.count, s.mean, s.median, s.min, s.max), (3, 2.0, 2.0, 1.0, 3.0));
        assert!(Stats::of([f64::NAN]).is_none());
    }

    #[test]
    fn pearson_of_affine_pairs_is_one() {
        let pairs: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * i as f64 - 1.0)).collect();
        assert!((pearson(&pairs).unwrap() - 1.0).abs() < 1e-14);
        let neg: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (x, -y)).collect();
        assert!((pearson(&neg).unwrap() + 1.0).abs() < 1e-14);
        assert!(pearson(&[(1.0, 1.0), (1.0, 2.0)]).is_none());
    }

    #[test]
    fn suboptimal_flag() {
        let mut r = ReportRow::new(0, 0.1);
        r.method_mut("opt").err_l2 = 0.5;
        r.method_mut("dnn").err_l2 = 0.5 - 1e-13;
        r.flag_suboptimal_oracle();
        assert!(!r.oracle_suboptimal);
        r.method_mut("gcv").err_l2 = 0.4;
        r.flag_suboptimal_oracle();
        assert!(r.oracle_suboptimal);
    }

    #[test]
    fn header_is_fixed() {
        let h = header();
        assert!(h.starts_with("sample,noise,gamma_true,gamma_dnn,dp_failed,oracle_suboptimal,failed,param_opt,err_l2_opt,err_l1_opt,param_dnn"));
        assert!(h.ends_with("param_oed,err_l2_oed,err_l1_oed"));
        assert_eq!(h.split(',').count(), 28);
    }
}
