//! Two-way ANOVA with interaction, factors `modality` and `network`.
//!
//! Sums of squares are differences of residual sums of squares between nested
//! effect-coded least-squares fits. Type II adjusts each main effect for the
//! other; the interaction is adjusted for both.

use std::collections::BTreeSet;
use std::fmt::Display;
use std::path::Path;

use faer::Mat;
use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::encoding::fmt_f64;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SsType {
    /// Sequential: modality, then network, then interaction.
    I,
    II,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaRow {
    pub source: String,
    pub sum_sq: f64,
    pub df: usize,
    /// `None` on the residual row.
    pub f: Option<f64>,
    pub p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnovaTable {
    pub ss_type: SsType,
    /// modality, network, modality:network, residual.
    pub rows: Vec<AnovaRow>,
    pub ss_total: f64,
    pub n: usize,
}

impl AnovaTable {
    pub fn row(&self, source: &str) -> Option<&AnovaRow> {
        self.rows.iter().find(|r| r.source == source)
    }

    /// `source,sum_sq,df,F,p`; the residual row leaves F and p empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["source", "sum_sq", "df", "F", "p"])?;
        for r in &self.rows {
            w.write_record([
                r.source.clone(),
                fmt_f64(r.sum_sq),
                r.df.to_string(),
                r.f.map(fmt_f64).unwrap_or_default(),
                r.p.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Upper tail of the F distribution with `(d1, d2)` degrees of freedom.
pub fn f_sf(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    beta_reg(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

fn levels<T: Ord + Clone>(xs: impl Iterator<Item = T>) -> Vec<T> {
    xs.collect::<BTreeSet<_>>().into_iter().collect()
}

/// Effect coding of a factor with `k` levels: `k - 1` columns, the last level
/// coded `-1` throughout.
fn effect_code(level: usize, k: usize, col: usize) -> f64 {
    if level == col {
        1.0
    } else if level == k - 1 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Clone, Copy)]
struct Terms {
    a: bool,
    b: bool,
    ab: bool,
}

struct Design {
    y: Vec<f64>,
    la: Vec<usize>,
    lb: Vec<usize>,
    ka: usize,
    kb: usize,
}

impl Design {
    fn matrix(&self, t: Terms) -> Mat<f64> {
        let n = self.y.len();
        let (da, db) = (self.ka - 1, self.kb - 1);
        let mut cols: Vec<Vec<f64>> = vec![vec![1.0; n]];
        if t.a {
            for c in 0..da {
                cols.push(self.la.iter().map(|&l| effect_code(l, self.ka, c)).collect());
            }
        }
        if t.b {
            for c in 0..db {
                cols.push(self.lb.iter().map(|&l| effect_code(l, self.kb, c)).collect());
            }
        }
        if t.ab {
            for ca in 0..da {
                for cb in 0..db {
                    cols.push(
                        (0..n)
                            .map(|i| {
                                effect_code(self.la[i], self.ka, ca)
                                    * effect_code(self.lb[i], self.kb, cb)
                            })
                            .collect(),
                    );
                }
            }
        }
        Mat::from_fn(n, cols.len(), |i, j| cols[j][i])
    }

    /// Residual sum of squares of the least-squares fit on the given terms.
    fn rss(&self, t: Terms) -> Result<f64> {
        let x = self.matrix(t);
        let svd = x
            .thin_svd()
            .map_err(|e| Error::Numerical(format!("ANOVA least squares: {e:?}")))?;
        let u = svd.U();
        let s = svd.S().column_vector();
        let smax = (0..s.nrows()).map(|i| s[i]).fold(0.0, f64::max);
        let tol = smax * 1e-12 * x.nrows().max(x.ncols()) as f64;
        let mut fitted = vec![0.0; self.y.len()];
        for k in 0..s.nrows() {
            if s[k] <= tol {
                continue;
            }
            let coef: f64 = (0..self.y.len()).map(|i| u[(i, k)] * self.y[i]).sum();
            for (i, f) in fitted.iter_mut().enumerate() {
                *f += coef * u[(i, k)];
            }
        }
        Ok(self.y.iter().zip(&fitted).map(|(y, f)| (y - f).powi(2)).sum())
    }
}

/// Two-way ANOVA on `(value, modality, network)` observations. Every
/// modality x network cell must be occupied.
pub fn two_way_anova<A, B>(obs: &[(f64, A, B)], ss_type: SsType) -> Result<AnovaTable>
where
    A: Ord + Clone + Display,
    B: Ord + Clone + Display,
{
    let lev_a = levels(obs.iter().map(|o| o.1.clone()));
    let lev_b = levels(obs.iter().map(|o| o.2.clone()));
    if lev_a.len() < 2 || lev_b.len() < 2 {
        return Err(Error::Validation(format!(
            "two-way ANOVA needs >= 2 levels per factor, got {} modalities and {} networks",
            lev_a.len(),
            lev_b.len()
        )));
    }
    if let Some((i, o)) = obs.iter().enumerate().find(|(_, o)| !o.0.is_finite()) {
        return Err(Error::NonFinite { index: i, value: o.0 });
    }
    let (ka, kb) = (lev_a.len(), lev_b.len());
    let la: Vec<usize> = obs.iter().map(|o| lev_a.binary_search(&o.1).unwrap()).collect();
    let lb: Vec<usize> = obs.iter().map(|o| lev_b.binary_search(&o.2).unwrap()).collect();
    let mut cell = vec![0usize; ka * kb];
    for (a, b) in la.iter().zip(&lb) {
        cell[a * kb + b] += 1;
    }
    if let Some(k) = cell.iter().position(|&c| c == 0) {
        return Err(Error::NotEstimable {
            modality: lev_a[k / kb].to_string(),
            network: lev_b[k % kb].to_string(),
        });
    }
    let n = obs.len();
    let cells = ka * kb;
    if n <= cells {
        return Err(Error::Validation(format!(
            "{n} observations leave no residual degrees of freedom for {cells} cells"
        )));
    }
    let d = Design {
        y: obs.iter().map(|o| o.0).collect(),
        la,
        lb,
        ka,
        kb,
    };
    let mean = d.y.iter().sum::<f64>() / n as f64;
    let ss_total: f64 = d.y.iter().map(|y| (y - mean).powi(2)).sum();

    let t = |a, b, ab| Terms { a, b, ab };
    let rss_full = d.rss(t(true, true, true))?;
    let rss_ab = d.rss(t(true, true, false))?;
    let rss_a = d.rss(t(true, false, false))?;
    let (ss_a, ss_b) = match ss_type {
        SsType::I => (ss_total - rss_a, rss_a - rss_ab),
        SsType::II => {
            let rss_b = d.rss(t(false, true, false))?;
            (rss_b - rss_ab, rss_a - rss_ab)
        }
    };
    let ss_int = rss_ab - rss_full;

    // Differences of nearly equal residuals carry round-off of order
    // eps * ss_total; snap those to exact zero.
    let floor = 64.0 * f64::EPSILON * ss_total.max(f64::MIN_POSITIVE);
    let snap = |v: f64| if v.abs() <= floor { 0.0 } else { v.max(0.0) };
    let (ss_a, ss_b, ss_int, ss_res) = (snap(ss_a), snap(ss_b), snap(ss_int), snap(rss_full));

    let df_res = n - cells;
    let ms_res = ss_res / df_res as f64;
    let effect = |source: &str, ss: f64, df: usize| {
        let ms = ss / df as f64;
        let f = if ms_res > 0.0 {
            ms / ms_res
        } else if ss > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        AnovaRow {
            source: source.to_string(),
            sum_sq: ss,
            df,
            f: Some(f),
            p: Some(f_sf(f, df as f64, df_res as f64)),
        }
    };
    let rows = vec![
        effect("modality", ss_a, ka - 1),
        effect("network", ss_b, kb - 1),
        effect("modality:network", ss_int, (ka - 1) * (kb - 1)),
        AnovaRow {
            source: "residual".into(),
            sum_sq: ss_res,
            df: df_res,
            f: None,
            p: None,
        },
    ];
    Ok(AnovaTable {
        ss_type,
        rows,
        ss_total,
        n,
    })
}
