//! ROI-level ridge encoding models and alignment vectors.
//!
//! For every ROI a ridge regression maps HRF-convolved features to the ROI
//! time series. The alignment score is the squared Pearson correlation
//! between out-of-fold predictions and the observed series. Folds are
//! contiguous temporal blocks, the ridge strength is chosen by an inner
//! block validation on the training blocks, and features are standardized
//! with training statistics only.

use std::path::Path;
use std::sync::Arc;

use faer::Mat;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::hemodynamics::FeatureSeries;
use crate::manifest::Modality;
use crate::registry::{Named, Registry};
use crate::tensor_store::{check_finite, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct RoiTimeSeries {
    pub tr: f64,
    rois: usize,
    volumes: usize,
    /// Row-major `[R, T]`.
    values: Vec<f64>,
}

impl RoiTimeSeries {
    pub fn new(tr: f64, rois: usize, volumes: usize, values: Vec<f64>) -> Result<Self> {
        if !(tr > 0.0) {
            return Err(Error::Validation(format!("TR must be > 0, got {tr}")));
        }
        if values.len() != rois * volumes {
            return Err(Error::Validation(format!(
                "{} values for {rois} ROIs x {volumes} volumes",
                values.len()
            )));
        }
        check_finite(&values)?;
        Ok(Self {
            tr,
            rois,
            volumes,
            values,
        })
    }

    pub fn from_tensor(t: &Tensor, tr: f64) -> Result<Self> {
        if t.dims.len() != 2 {
            return Err(Error::Validation(format!(
                "ROI time series must be [R, T], got {:?}",
                t.dims
            )));
        }
        Self::new(tr, t.dims[0], t.dims[1], t.values.clone())
    }

    pub fn num_rois(&self) -> usize {
        self.rois
    }

    pub fn num_volumes(&self) -> usize {
        self.volumes
    }

    pub fn roi(&self, r: usize) -> &[f64] {
        &self.values[r * self.volumes..(r + 1) * self.volumes]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Reorders ROI rows: row `i` of the result is row `order[i]` of `self`.
    pub fn select_rois(&self, order: &[usize]) -> Self {
        let values = order.iter().flat_map(|&r| self.roi(r).to_vec()).collect();
        Self {
            tr: self.tr,
            rois: order.len(),
            volumes: self.volumes,
            values,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Set when `lambda == 0` and the centered design is rank deficient;
    /// the minimum-norm solution is returned.
    pub rank_deficient: bool,
}

/// Thin SVD of a centered design, reusable across responses and ridge
/// strengths. Factors are kept column-major in plain vectors.
struct RidgeBasis {
    x_mean: Vec<f64>,
    rows: usize,
    u: Vec<f64>,
    s: Vec<f64>,
    v: Vec<f64>,
    tol: f64,
}

impl RidgeBasis {
    fn new(x: &Mat<f64>) -> Result<Self> {
        let (t, d) = (x.nrows(), x.ncols());
        let x_mean: Vec<f64> = (0..d)
            .map(|j| (0..t).map(|i| x[(i, j)]).sum::<f64>() / t as f64)
            .collect();
        let xc = Mat::from_fn(t, d, |i, j| x[(i, j)] - x_mean[j]);
        let svd = xc
            .thin_svd()
            .map_err(|e| Error::Numerical(format!("ridge SVD failed: {e:?}")))?;
        let sv = svd.S().column_vector();
        let s: Vec<f64> = (0..sv.nrows()).map(|i| sv[i]).collect();
        let (u, v) = (svd.U(), svd.V());
        let smax = s.first().copied().unwrap_or(0.0);
        Ok(Self {
            u: (0..s.len()).flat_map(|c| (0..t).map(move |i| u[(i, c)])).collect(),
            v: (0..s.len()).flat_map(|c| (0..d).map(move |j| v[(j, c)])).collect(),
            x_mean,
            rows: t,
            s,
            tol: smax * f64::EPSILON * t.max(d) as f64,
        })
    }

    /// Mean of `y` and the coordinates `u_c^T (y - mean)`.
    fn project(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let y_mean = y.iter().sum::<f64>() / y.len() as f64;
        let uty = self
            .u
            .chunks_exact(self.rows)
            .map(|uc| uc.iter().zip(y).map(|(u, y)| u * (y - y_mean)).sum())
            .collect();
        (y_mean, uty)
    }

    fn solve(&self, y_mean: f64, uty: &[f64], lambda: f64) -> RidgeFit {
        let d = self.x_mean.len();
        let mut weights = vec![0.0; d];
        let mut effective = 0;
        for ((&s, &uty), vc) in self.s.iter().zip(uty).zip(self.v.chunks_exact(d)) {
            if s <= self.tol {
                continue;
            }
            effective += 1;
            let f = s / (s * s + lambda) * uty;
            for (w, v) in weights.iter_mut().zip(vc) {
                *w += v * f;
            }
        }
        let intercept = y_mean - crate::depth_dynamics::dot(&self.x_mean, &weights);
        RidgeFit {
            weights,
            intercept,
            rank_deficient: lambda == 0.0 && effective < d,
        }
    }
}

fn check_design(x: &Mat<f64>, y: &[f64]) -> Result<()> {
    if x.nrows() != y.len() {
        return Err(Error::Validation(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    check_features(x)?;
    check_finite(y)
}

/// Minimizes `|y - Xw - b|^2 + lambda |w|^2` with an unpenalized intercept.
pub fn fit_ridge(x: &Mat<f64>, y: &[f64], lambda: f64) -> Result<RidgeFit> {
    check_design(x, y)?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Validation(format!("lambda must be >= 0, got {lambda}")));
    }
    let basis = RidgeBasis::new(x)?;
    let (y_mean, uty) = basis.project(y);
    let fit = basis.solve(y_mean, &uty, lambda);
    if fit.rank_deficient {
        log::warn!("unregularized ridge on a rank-deficient design: minimum-norm solution");
    }
    Ok(fit)
}

pub fn predict(x: &Mat<f64>, rows: &[usize], fit: &RidgeFit) -> Vec<f64> {
    rows.iter()
        .map(|&i| {
            fit.intercept
                + fit
                    .weights
                    .iter()
                    .enumerate()
                    .map(|(j, w)| w * x[(i, j)])
                    .sum::<f64>()
        })
        .collect()
}

/// Squared Pearson correlation; 0 when either series is constant.
pub fn squared_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return 0.0;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a[..n].iter().zip(&b[..n]) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if !(saa > 0.0 && sbb > 0.0) {
        return 0.0;
    }
    let r2 = sab * sab / (saa * sbb);
    if r2.is_finite() {
        r2.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Fold id of every volume for `folds` contiguous blocks.
pub fn block_folds(volumes: usize, folds: usize) -> Vec<usize> {
    let mut out = vec![0; volumes];
    for k in 0..folds {
        let (lo, hi) = (k * volumes / folds, (k + 1) * volumes / folds);
        out[lo..hi].iter_mut().for_each(|f| *f = k);
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CvConfig {
    pub folds: usize,
    pub lambda_grid: Vec<f64>,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            lambda_grid: (-3..=5).map(|e| 10f64.powi(e)).collect(),
        }
    }
}

impl CvConfig {
    fn validate(&self, volumes: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        if volumes < 2 * self.folds {
            return Err(Error::Config(format!(
                "{volumes} volumes too few for {} folds (need {})",
                self.folds,
                2 * self.folds
            )));
        }
        if self.lambda_grid.is_empty() || self.lambda_grid.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("lambda grid must be nonempty and nonnegative".into()));
        }
        Ok(())
    }
}

/// One fitted encoding model, expressed on the raw feature scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingFit {
    pub fold: usize,
    pub weights: Vec<f64>,
    pub intercept: f64,
    pub ridge_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub score: f64,
    /// No fold could be fit; the score is the 0 convention.
    pub degenerate: bool,
    pub skipped_folds: Vec<usize>,
    pub fold_assignment: Vec<usize>,
    /// Per outer fold; `None` for skipped folds.
    pub fits: Vec<Option<EncodingFit>>,
    /// Out-of-fold prediction per volume; `None` inside skipped folds.
    pub predictions: Vec<Option<f64>>,
}

struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

impl Standardizer {
    fn fit(x: &Mat<f64>, rows: &[usize]) -> Self {
        let n = rows.len() as f64;
        let d = x.ncols();
        let mut mean = vec![0.0; d];
        let mut scale = vec![1.0; d];
        for j in 0..d {
            let m = rows.iter().map(|&i| x[(i, j)]).sum::<f64>() / n;
            let var = rows.iter().map(|&i| (x[(i, j)] - m).powi(2)).sum::<f64>() / n;
            mean[j] = m;
            if var > 0.0 {
                scale[j] = var.sqrt();
            }
        }
        Self { mean, scale }
    }

    fn apply(&self, x: &Mat<f64>, rows: &[usize]) -> Mat<f64> {
        Mat::from_fn(rows.len(), x.ncols(), |i, j| {
            (x[(rows[i], j)] - self.mean[j]) / self.scale[j]
        })
    }

    /// Maps a fit on standardized features back to raw features.
    fn unscale(&self, fit: &RidgeFit) -> (Vec<f64>, f64) {
        let w: Vec<f64> = fit.weights.iter().zip(&self.scale).map(|(w, s)| w / s).collect();
        let b = fit.intercept - crate::depth_dynamics::dot(&w, &self.mean);
        (w, b)
    }
}

fn is_constant(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

/// A train/test partition with the training design already standardized
/// and factorized.
struct Split {
    train: Vec<usize>,
    test: Vec<usize>,
    st: Standardizer,
    basis: RidgeBasis,
    /// Standardized test rows.
    xtest: Vec<Vec<f64>>,
}

impl Split {
    fn new(x: &Mat<f64>, train: Vec<usize>, test: Vec<usize>) -> Result<Self> {
        let st = Standardizer::fit(x, &train);
        let basis = RidgeBasis::new(&st.apply(x, &train))?;
        let xt = st.apply(x, &test);
        let xtest = (0..xt.nrows())
            .map(|i| (0..xt.ncols()).map(|j| xt[(i, j)]).collect())
            .collect();
        Ok(Self {
            train,
            test,
            st,
            basis,
            xtest,
        })
    }

    /// Centered projection of the training response.
    fn project(&self, y: &[f64]) -> (f64, Vec<f64>) {
        let yt: Vec<f64> = self.train.iter().map(|&i| y[i]).collect();
        self.basis.project(&yt)
    }

    fn predict(&self, fit: &RidgeFit) -> Vec<f64> {
        self.xtest
            .iter()
            .map(|row| fit.intercept + crate::depth_dynamics::dot(row, &fit.weights))
            .collect()
    }
}

struct FoldPlan {
    outer: Split,
    /// Validation splits inside the outer training rows, for choosing lambda.
    inner: Vec<Split>,
}

/// Inner splits: each training block validates once; a single training
/// block is halved.
fn inner_splits(x: &Mat<f64>, blocks: &[Vec<usize>]) -> Result<Vec<Split>> {
    let parts: Vec<Vec<usize>> = if blocks.len() >= 2 {
        blocks.to_vec()
    } else {
        let rows = &blocks[0];
        let mid = rows.len() / 2;
        vec![rows[..mid].to_vec(), rows[mid..].to_vec()]
    };
    let mut out = Vec::new();
    for (v, val) in parts.iter().enumerate() {
        let train: Vec<usize> = parts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != v)
            .flat_map(|(_, b)| b.iter().copied())
            .collect();
        if train.len() >= 2 && !val.is_empty() {
            out.push(Split::new(x, train, val.clone())?);
        }
    }
    Ok(out)
}

/// Factorizations of one feature design, shared by every ROI scored
/// against it.
pub struct EncodingPlan {
    volumes: usize,
    fold_assignment: Vec<usize>,
    folds: Vec<FoldPlan>,
    grid: Vec<f64>,
}

fn check_features(x: &Mat<f64>) -> Result<()> {
    if x.nrows() < 2 {
        return Err(Error::Validation("need at least 2 observations".into()));
    }
    if (0..x.ncols()).any(|j| (0..x.nrows()).any(|i| !x[(i, j)].is_finite())) {
        return Err(Error::Validation("design contains non-finite values".into()));
    }
    Ok(())
}

impl EncodingPlan {
    /// Contiguous outer blocks; each fold trains on the others.
    pub fn cross_validated(x: &Mat<f64>, cfg: &CvConfig) -> Result<Self> {
        check_features(x)?;
        let t = x.nrows();
        cfg.validate(t)?;
        let fold_assignment = block_folds(t, cfg.folds);
        let blocks: Vec<Vec<usize>> = (0..cfg.folds)
            .map(|k| (0..t).filter(|&i| fold_assignment[i] == k).collect())
            .collect();
        let folds = (0..cfg.folds)
            .map(|k| {
                let train_blocks: Vec<Vec<usize>> = blocks
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != k)
                    .map(|(_, b)| b.clone())
                    .collect();
                let train = train_blocks.iter().flatten().copied().collect();
                Ok(FoldPlan {
                    outer: Split::new(x, train, blocks[k].clone())?,
                    inner: inner_splits(x, &train_blocks)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            volumes: t,
            fold_assignment,
            folds,
            grid: cfg.lambda_grid.clone(),
        })
    }

    /// Lambda chosen by block validation over all volumes, then one fit on
    /// everything, evaluated on the same volumes.
    pub fn in_sample(x: &Mat<f64>, cfg: &CvConfig) -> Result<Self> {
        check_features(x)?;
        let t = x.nrows();
        cfg.validate(t)?;
        let assignment = block_folds(t, cfg.folds);
        let blocks: Vec<Vec<usize>> = (0..cfg.folds)
            .map(|k| (0..t).filter(|&i| assignment[i] == k).collect())
            .collect();
        let rows: Vec<usize> = (0..t).collect();
        Ok(Self {
            volumes: t,
            fold_assignment: vec![0; t],
            folds: vec![FoldPlan {
                outer: Split::new(x, rows.clone(), rows)?,
                inner: inner_splits(x, &blocks)?,
            }],
            grid: cfg.lambda_grid.clone(),
        })
    }

    /// First grid value with the smallest summed validation error.
    fn select_lambda(&self, fold: &FoldPlan, y: &[f64]) -> f64 {
        let mut sse = vec![0.0; self.grid.len()];
        for split in &fold.inner {
            let (y_mean, uty) = split.project(y);
            for (g, &lambda) in self.grid.iter().enumerate() {
                let pred = split.predict(&split.basis.solve(y_mean, &uty, lambda));
                sse[g] += pred
                    .iter()
                    .zip(&split.test)
                    .map(|(p, &i)| (p - y[i]).powi(2))
                    .sum::<f64>();
            }
        }
        let best = sse
            .iter()
            .enumerate()
            .fold(0, |b, (i, &e)| if e < sse[b] { i } else { b });
        self.grid[best]
    }

    pub fn score(&self, y: &[f64]) -> Result<CvOutcome> {
        if y.len() != self.volumes {
            return Err(Error::Validation(format!(
                "design has {} rows but response has {}",
                self.volumes,
                y.len()
            )));
        }
        check_finite(y)?;
        let mut predictions = vec![None; self.volumes];
        let mut fits = Vec::with_capacity(self.folds.len());
        let mut skipped = Vec::new();
        for (k, fold) in self.folds.iter().enumerate() {
            let ytrain: Vec<f64> = fold.outer.train.iter().map(|&i| y[i]).collect();
            if is_constant(&ytrain) {
                log::debug!("fold {k}: constant response in training blocks; skipped");
                skipped.push(k);
                fits.push(None);
                continue;
            }
            let lambda = self.select_lambda(fold, y);
            let (y_mean, uty) = fold.outer.project(y);
            let std_fit = fold.outer.basis.solve(y_mean, &uty, lambda);
            for (p, &i) in fold.outer.predict(&std_fit).into_iter().zip(&fold.outer.test) {
                predictions[i] = Some(p);
            }
            let (weights, intercept) = fold.outer.st.unscale(&std_fit);
            fits.push(Some(EncodingFit {
                fold: k,
                weights,
                intercept,
                ridge_lambda: lambda,
            }));
        }
        let (pred, obs): (Vec<f64>, Vec<f64>) = predictions
            .iter()
            .zip(y)
            .filter_map(|(p, &o)| p.map(|p| (p, o)))
            .unzip();
        let degenerate = skipped.len() == self.folds.len();
        let score = if degenerate {
            0.0
        } else {
            squared_correlation(&pred, &obs)
        };
        Ok(CvOutcome {
            score,
            degenerate,
            skipped_folds: skipped,
            fold_assignment: self.fold_assignment.clone(),
            fits,
            predictions,
        })
    }
}

/// Out-of-fold squared correlation with block cross-validation.
pub fn cv_alignment_score(x: &Mat<f64>, y: &[f64], cfg: &CvConfig) -> Result<CvOutcome> {
    check_design(x, y)?;
    EncodingPlan::cross_validated(x, cfg)?.score(y)
}

/// In-sample squared correlation; see [`EncodingPlan::in_sample`].
pub fn in_sample_alignment_score(x: &Mat<f64>, y: &[f64], cfg: &CvConfig) -> Result<CvOutcome> {
    check_design(x, y)?;
    EncodingPlan::in_sample(x, cfg)?.score(y)
}

/// How an encoding model's fit is turned into an alignment score.
pub trait AlignmentScorer: Named + Send + Sync {
    fn plan(&self, x: &Mat<f64>, cfg: &CvConfig) -> Result<EncodingPlan>;

    fn score(&self, x: &Mat<f64>, y: &[f64], cfg: &CvConfig) -> Result<CvOutcome> {
        check_design(x, y)?;
        self.plan(x, cfg)?.score(y)
    }
}

#[derive(Debug, Default)]
pub struct CrossValidated;

impl Named for CrossValidated {
    fn name(&self) -> &'static str {
        "cv"
    }
}

impl AlignmentScorer for CrossValidated {
    fn plan(&self, x: &Mat<f64>, cfg: &CvConfig) -> Result<EncodingPlan> {
        EncodingPlan::cross_validated(x, cfg)
    }
}

#[derive(Debug, Default)]
pub struct InSample;

impl Named for InSample {
    fn name(&self) -> &'static str {
        "in-sample"
    }
}

impl AlignmentScorer for InSample {
    fn plan(&self, x: &Mat<f64>, cfg: &CvConfig) -> Result<EncodingPlan> {
        EncodingPlan::in_sample(x, cfg)
    }
}

pub fn scorer_registry() -> Registry<dyn AlignmentScorer> {
    Registry::<dyn AlignmentScorer>::new("alignment scorer")
        .with(Arc::new(CrossValidated))
        .with(Arc::new(InSample))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignmentVector {
    pub model_id: String,
    pub modality: Modality,
    pub scores: Vec<f64>,
}

impl AlignmentVector {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["roi_index", "score"])?;
        for (r, s) in self.scores.iter().enumerate() {
            w.write_record([r.to_string(), fmt_f64(*s)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Shortest representation that round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

#[derive(Debug, Clone)]
pub struct AlignmentOutcome {
    pub vector: AlignmentVector,
    pub per_roi: Vec<CvOutcome>,
}

impl AlignmentOutcome {
    pub fn degenerate_rois(&self) -> Vec<usize> {
        self.per_roi
            .iter()
            .enumerate()
            .filter(|(_, o)| o.degenerate)
            .map(|(r, _)| r)
            .collect()
    }
}

pub fn feature_matrix(features: &FeatureSeries) -> Mat<f64> {
    Mat::from_fn(features.num_volumes(), features.dim(), |t, d| features.get(t, d))
}

/// Scores every ROI independently; results are in ROI order regardless of
/// how the work is scheduled.
pub fn alignment_vector(
    model_id: &str,
    modality: Modality,
    features: &FeatureSeries,
    brain: &RoiTimeSeries,
    cfg: &CvConfig,
    scorer: &dyn AlignmentScorer,
) -> Result<AlignmentOutcome> {
    if !features.convolved {
        return Err(Error::Validation(format!(
            "model {model_id:?}: features must be HRF-convolved before encoding"
        )));
    }
    if features.num_volumes() != brain.num_volumes() {
        return Err(Error::Validation(format!(
            "model {model_id:?}: {} feature volumes vs {} brain volumes",
            features.num_volumes(),
            brain.num_volumes()
        )));
    }
    let plan = scorer.plan(&feature_matrix(features), cfg)?;
    let per_roi: Vec<CvOutcome> = (0..brain.num_rois())
        .into_par_iter()
        .map(|r| plan.score(brain.roi(r)))
        .collect::<Result<_>>()?;
    Ok(AlignmentOutcome {
        vector: AlignmentVector {
            model_id: model_id.to_string(),
            modality,
            scores: per_roi.iter().map(|o| o.score).collect(),
        },
        per_roi,
    })
}
