//! First-order optimization of point sets and images under the composite
//! statistics-matching objectives, with per-iteration divergence tracing.
//!
//! There is no network here: the output signal itself is the optimization
//! variable, so every loss term is exercised exactly as a training objective
//! would exercise it through a generator's output.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::{chamfer_distance, contextual_loss, DistanceKind};
use crate::divergence::{divergence_report, projected_kl_chi2, sliced_emd, REPORT_GRID_SIZE};
use crate::error::{Error, Result};
use crate::feature_set::{FeatureSet, ImageGrid, PatchSpec};
use crate::gradients::{
    grad_chamfer, grad_contextual, grad_contextual_image, grad_l1, grad_lowfreq_l2, BlurKernel,
};
use crate::scalar::{real, Real};

/// Loss minimized by [`optimize_points`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointLoss {
    Cx,
    Cd,
}

impl std::str::FromStr for PointLoss {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cx" => Ok(PointLoss::Cx),
            "cd" => Ok(PointLoss::Cd),
            other => Err(Error::invalid(format!(
                "unknown point loss {other:?} (expected cx or cd)"
            ))),
        }
    }
}

/// First-order update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Gd,
    Adam,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(Algorithm::Gd),
            "adam" => Ok(Algorithm::Adam),
            other => Err(Error::invalid(format!(
                "unknown algorithm {other:?} (expected gd or adam)"
            ))),
        }
    }
}

/// Optimizer settings. Adam moment defaults are the usual
/// β1=0.9, β2=0.999, ε=1e-8.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig<T> {
    pub algorithm: Algorithm,
    pub step: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub iterations: usize,
    pub trace_every: usize,
}

impl<T: Real> OptimizerConfig<T> {
    pub fn new(algorithm: Algorithm, step: T, iterations: usize) -> Result<Self> {
        let cfg = Self {
            algorithm,
            step,
            beta1: real(0.9),
            beta2: real(0.999),
            eps: real(1e-8),
            iterations,
            trace_every: 10,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_trace_every(mut self, every: usize) -> Self {
        self.trace_every = every;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.step <= T::zero() {
            return Err(Error::invalid("step size must be positive"));
        }
        if self.iterations == 0 {
            return Err(Error::invalid("iterations must be at least 1"));
        }
        if self.trace_every == 0 {
            return Err(Error::invalid("trace_every must be at least 1"));
        }
        Ok(())
    }
}

/// Weights and feature parameters of the composite image objective
/// `λ_cx·CX(patches) + λ_l2_lf·‖blur(x)-blur(y)‖² + λ_l1·‖x-y‖₁`.
///
/// The adversarial weight is representable so published configurations
/// parse, but any nonzero value is rejected: there is no discriminator here
/// and silently dropping the term would misrepresent those configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveConfig<T> {
    pub lambda_cx: T,
    pub lambda_l2_lf: T,
    pub lambda_l1: T,
    pub lambda_gan: T,
    pub distance: DistanceKind,
    pub h: T,
    pub epsilon: T,
    pub blur_size: usize,
    pub blur_sigma: T,
    pub patch: PatchSpec,
}

impl<T: Real> ObjectiveConfig<T> {
    /// Super-resolution-style weights: λ_cx=0.1, λ_l2_lf=10, λ_l1=0.
    pub fn sr() -> Self {
        Self {
            lambda_cx: real(0.1),
            lambda_l2_lf: real(10.0),
            lambda_l1: T::zero(),
            lambda_gan: T::zero(),
            distance: DistanceKind::Cosine,
            h: real(0.1),
            epsilon: real(1e-5),
            blur_size: 21,
            blur_sigma: real(3.0),
            patch: PatchSpec {
                patch_size: 5,
                stride: 2,
            },
        }
    }

    /// Normal-map-style weights: λ_cx=1, λ_l2_lf=0.1, λ_l1=1.
    pub fn normals() -> Self {
        Self {
            lambda_cx: T::one(),
            lambda_l2_lf: real(0.1),
            lambda_l1: T::one(),
            ..Self::sr()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda_gan.is_zero() {
            return Err(Error::AdversarialUnsupported);
        }
        for (name, v) in [
            ("lambda_cx", self.lambda_cx),
            ("lambda_l2_lf", self.lambda_l2_lf),
            ("lambda_l1", self.lambda_l1),
        ] {
            if v < T::zero() || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be nonnegative")));
            }
        }
        if self.lambda_cx.is_zero() && self.lambda_l2_lf.is_zero() && self.lambda_l1.is_zero() {
            return Err(Error::invalid("at least one loss weight must be positive"));
        }
        if self.h <= T::zero() {
            return Err(Error::invalid("bandwidth h must be positive"));
        }
        if self.epsilon <= T::zero() {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }

    fn kernel(&self) -> Result<BlurKernel<T>> {
        BlurKernel::gaussian(self.blur_size, self.blur_sigma)
    }
}

/// One recorded iteration: the optimized objective and the full set of
/// dissimilarity measures at that iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow<T> {
    pub iter: usize,
    pub objective: T,
    pub cx: T,
    pub cd: T,
    pub kl: T,
    pub chi2: T,
    pub emd: T,
    pub l2_lf: T,
    pub l1: T,
}

/// Per-iteration record of all dissimilarity measures during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T> {
    pub rows: Vec<TraceRow<T>>,
}

impl<T> Default for Trace<T> {
    fn default() -> Self {
        Self { rows: Vec::new() }
    }
}

impl<T: Real> Trace<T> {
    pub const CSV_HEADER: &'static str = "iter,objective,cx,cd,kl,chi2,emd,l2_lf,l1";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let vals = [
                r.objective, r.cx, r.cd, r.kl, r.chi2, r.emd, r.l2_lf, r.l1,
            ];
            out.push_str(&r.iter.to_string());
            for v in vals {
                out.push_str(",");
                out.push_str(&crate::scalar::sig9(v));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == Self::CSV_HEADER => {}
            _ => return Err(Error::format(0, "bad trace header")),
        }
        let mut rows = Vec::new();
        for (lineno, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 9 {
                return Err(Error::format(
                    0,
                    format!("trace line {}: expected 9 fields", lineno + 2),
                ));
            }
            let iter: usize = fields[0].trim().parse().map_err(|_| {
                Error::format(0, format!("trace line {}: bad iteration", lineno + 2))
            })?;
            let mut vals = [T::zero(); 8];
            for (slot, field) in vals.iter_mut().zip(&fields[1..]) {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::format(0, format!("trace line {}: bad float", lineno + 2))
                })?;
                *slot = real(v);
            }
            rows.push(TraceRow {
                iter,
                objective: vals[0],
                cx: vals[1],
                cd: vals[2],
                kl: vals[3],
                chi2: vals[4],
                emd: vals[5],
                l2_lf: vals[6],
                l1: vals[7],
            });
        }
        Ok(Self { rows })
    }
}

/// Fixed sub-seeds so every trace row uses the same projections and slicing
/// directions; series stay comparable across iterations.
struct TraceSeeds {
    kl: u64,
    emd: u64,
}

impl TraceSeeds {
    fn derive(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            kl: rng.next_u64(),
            emd: rng.next_u64(),
        }
    }
}

const TRACE_EMD_DIRECTIONS: usize = 64;

fn point_trace_row<T: Real>(
    iter: usize,
    objective: T,
    x: &FeatureSet<T>,
    y: &FeatureSet<T>,
    kind: DistanceKind,
    h: T,
    epsilon: T,
    projections: usize,
    seeds: &TraceSeeds,
) -> Result<TraceRow<T>> {
    let cx = contextual_loss(x, y, kind, h, epsilon, false)?;
    let cd = chamfer_distance(x, y, kind, false)?;
    let (kl, chi2) = projected_kl_chi2(x, y, projections, REPORT_GRID_SIZE, seeds.kl)?;
    let emd = sliced_emd(x, y, TRACE_EMD_DIRECTIONS, seeds.emd)?;
    Ok(TraceRow {
        iter,
        objective,
        cx,
        cd,
        kl,
        chi2,
        emd,
        l2_lf: T::zero(),
        l1: T::zero(),
    })
}

/// Applies one optimizer update in place. `t` is the 1-based step count.
struct OptimizerState<T> {
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Real> OptimizerState<T> {
    fn new(len: usize) -> Self {
        Self {
            m: vec![T::zero(); len],
            v: vec![T::zero(); len],
        }
    }

    fn step(&mut self, cfg: &OptimizerConfig<T>, t: usize, x: &mut [T], grad: &[T]) {
        match cfg.algorithm {
            Algorithm::Gd => {
                for (xi, gi) in x.iter_mut().zip(grad) {
                    *xi = *xi - cfg.step * *gi;
                }
            }
            Algorithm::Adam => {
                let one = T::one();
                let b1 = cfg.beta1;
                let b2 = cfg.beta2;
                let b1t = one - b1.powi(t as i32);
                let b2t = one - b2.powi(t as i32);
                for i in 0..x.len() {
                    let g = grad[i];
                    self.m[i] = b1 * self.m[i] + (one - b1) * g;
                    self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
                    let m_hat = self.m[i] / b1t;
                    let v_hat = self.v[i] / b2t;
                    x[i] = x[i] - cfg.step * m_hat / (v_hat.sqrt() + cfg.eps);
                }
            }
        }
    }
}

/// Minimizes the chosen loss over the coordinates of `x0`.
///
/// Sets must be equalized to a common size beforehand. Trace rows are
/// recorded at iteration 0, every `trace_every` iterations, and at the final
/// iteration; 2D runs trace KDE-KL directly, higher dimensions average over
/// `trace_projections` shared projections. A non-finite objective aborts the
/// run, returning the last valid state and trace.
pub fn optimize_points<T: Real>(
    x0: &FeatureSet<T>,
    y: &FeatureSet<T>,
    loss: PointLoss,
    kind: DistanceKind,
    h: T,
    epsilon: T,
    opt: &OptimizerConfig<T>,
    trace_projections: usize,
    seed: u64,
) -> Result<(FeatureSet<T>, Trace<T>)> {
    if x0.dim() != y.dim() {
        return Err(Error::DimensionMismatch(x0.dim(), y.dim()));
    }
    if x0.len() != y.len() {
        return Err(Error::SizeMismatch(x0.len(), y.len()));
    }
    opt.validate()?;
    let seeds = TraceSeeds::derive(seed);
    let (n, dim) = (x0.len(), x0.dim());
    let mut x = x0.as_flat().to_vec();
    let mut state = OptimizerState::new(x.len());
    let mut trace = Trace::default();

    let eval = |flat: &[T]| -> Result<(T, Vec<T>)> {
        let set = FeatureSet::from_flat(flat.to_vec(), n, dim)?;
        match loss {
            PointLoss::Cx => grad_contextual(&set, y, kind, h, epsilon, false),
            PointLoss::Cd => grad_chamfer(&set, y, kind, false),
        }
    };

    let (obj0, mut grad) = eval(&x)?;
    let set0 = FeatureSet::from_flat(x.clone(), n, dim)?;
    trace.rows.push(point_trace_row(
        0,
        obj0,
        &set0,
        y,
        kind,
        h,
        epsilon,
        trace_projections,
        &seeds,
    )?);

    let mut prev = x.clone();
    for t in 1..=opt.iterations {
        state.step(opt, t, &mut x, &grad);
        let (obj, g) = eval(&x)?;
        if !obj.is_finite() {
            x = prev;
            break;
        }
        grad = g;
        prev.copy_from_slice(&x);
        if t % opt.trace_every == 0 || t == opt.iterations {
            let set = FeatureSet::from_flat(x.clone(), n, dim)?;
            trace.rows.push(point_trace_row(
                t,
                obj,
                &set,
                y,
                kind,
                h,
                epsilon,
                trace_projections,
                &seeds,
            )?);
        }
    }
    Ok((FeatureSet::from_flat(x, n, dim)?, trace))
}

fn image_objective<T: Real>(
    x: &ImageGrid<T>,
    y: &ImageGrid<T>,
    cfg: &ObjectiveConfig<T>,
    kernel: &BlurKernel<T>,
) -> Result<(T, Vec<T>)> {
    let mut total = T::zero();
    let mut grad = vec![T::zero(); x.as_flat().len()];
    if !cfg.lambda_cx.is_zero() {
        let (l, g) =
            grad_contextual_image(x, y, &cfg.patch, cfg.distance, cfg.h, cfg.epsilon, false)?;
        total += cfg.lambda_cx * l;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += cfg.lambda_cx * *v;
        }
    }
    if !cfg.lambda_l2_lf.is_zero() {
        let (l, g) = grad_lowfreq_l2(x, y, kernel)?;
        total += cfg.lambda_l2_lf * l;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += cfg.lambda_l2_lf * *v;
        }
    }
    if !cfg.lambda_l1.is_zero() {
        let (l, g) = grad_l1(x, y)?;
        total += cfg.lambda_l1 * l;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += cfg.lambda_l1 * *v;
        }
    }
    Ok((total, grad))
}

fn image_trace_row<T: Real>(
    iter: usize,
    objective: T,
    x: &ImageGrid<T>,
    y: &ImageGrid<T>,
    cfg: &ObjectiveConfig<T>,
    kernel: &BlurKernel<T>,
    trace_projections: usize,
    seed: u64,
) -> Result<TraceRow<T>> {
    let report = divergence_report(x, y, &cfg.patch, trace_projections, seed)?;
    let (l2_lf, _) = grad_lowfreq_l2(x, y, kernel)?;
    let (l1, _) = grad_l1(x, y)?;
    Ok(TraceRow {
        iter,
        objective,
        cx: report.cx,
        cd: report.cd,
        kl: report.kl,
        chi2: report.chi2,
        emd: report.emd,
        l2_lf,
        l1,
    })
}

/// Minimizes the composite objective over the pixels of `x0`, clamping to
/// [0,1] after every step.
///
/// Trace rows are recorded at iteration 0, every `trace_every` iterations,
/// and at the end; the divergence columns come from the standard report at
/// `trace_projections` projections. A non-finite objective aborts the run,
/// returning the last valid state.
pub fn optimize_image<T: Real>(
    x0: &ImageGrid<T>,
    y: &ImageGrid<T>,
    cfg: &ObjectiveConfig<T>,
    opt: &OptimizerConfig<T>,
    trace_projections: usize,
    seed: u64,
) -> Result<(ImageGrid<T>, Trace<T>)> {
    x0.check_same_shape(y)?;
    cfg.validate()?;
    opt.validate()?;
    let kernel = cfg.kernel()?;
    let (ih, iw, ic) = (x0.height(), x0.width(), x0.channels());
    let rebuild = |flat: &[T]| ImageGrid::new(flat.to_vec(), ih, iw, ic);

    let mut x = x0.as_flat().to_vec();
    let mut state = OptimizerState::new(x.len());
    let mut trace = Trace::default();

    let (obj0, mut grad) = image_objective(x0, y, cfg, &kernel)?;
    trace.rows.push(image_trace_row(
        0,
        obj0,
        x0,
        y,
        cfg,
        &kernel,
        trace_projections,
        seed,
    )?);

    let mut prev = x.clone();
    for t in 1..=opt.iterations {
        state.step(opt, t, &mut x, &grad);
        for v in &mut x {
            *v = v.max(T::zero()).min(T::one());
        }
        let img = rebuild(&x)?;
        let (obj, g) = image_objective(&img, y, cfg, &kernel)?;
        if !obj.is_finite() {
            x = prev;
            break;
        }
        grad = g;
        prev.copy_from_slice(&x);
        if t % opt.trace_every == 0 || t == opt.iterations {
            trace.rows.push(image_trace_row(
                t,
                obj,
                &img,
                y,
                cfg,
                &kernel,
                trace_projections,
                seed,
            )?);
        }
    }
    Ok((rebuild(&x)?, trace))
}

/// Names of the measure columns correlated against cx, in report order.
pub const CORRELATED_MEASURES: [&str; 6] = ["cd", "kl", "chi2", "emd", "l2_lf", "l1"];

/// Pearson correlation of every measure series against the cx series.
/// Constant series have no defined correlation and yield `None`.
pub fn trace_correlations<T: Real>(trace: &Trace<T>) -> Result<Vec<(&'static str, Option<T>)>> {
    if trace.rows.len() < 3 {
        return Err(Error::invalid(
            "trace must have at least 3 rows for correlations",
        ));
    }
    let cx: Vec<T> = trace.rows.iter().map(|r| r.cx).collect();
    let columns: [(&'static str, Vec<T>); 6] = [
        ("cd", trace.rows.iter().map(|r| r.cd).collect()),
        ("kl", trace.rows.iter().map(|r| r.kl).collect()),
        ("chi2", trace.rows.iter().map(|r| r.chi2).collect()),
        ("emd", trace.rows.iter().map(|r| r.emd).collect()),
        ("l2_lf", trace.rows.iter().map(|r| r.l2_lf).collect()),
        ("l1", trace.rows.iter().map(|r| r.l1).collect()),
    ];
    Ok(columns
        .into_iter()
        .map(|(name, series)| (name, pearson(&cx, &series)))
        .collect())
}

fn pearson<T: Real>(a: &[T], b: &[T]) -> Option<T> {
    let n = T::from_usize(a.len()).unwrap();
    let mean = |v: &[T]| v.iter().copied().sum::<T>() / n;
    let (ma, mb) = (mean(a), mean(b));
    let mut cov = T::zero();
    let mut va = T::zero();
    let mut vb = T::zero();
    for (x, y) in a.iter().zip(b) {
        let dx = *x - ma;
        let dy = *y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va.is_zero() || vb.is_zero() {
        return None;
    }
    Some(cov / (va * vb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affinity::{best_matches, cx_forward};
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    /// Tight cluster at the origin against a noisy unit ring.
    pub(crate) fn cluster_and_ring(n: usize, seed: u64) -> (FeatureSet<f64>, FeatureSet<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 0.1).unwrap();
        let x_rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![normal.sample(&mut rng), normal.sample(&mut rng)])
            .collect();
        let y_rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let theta = 2.0 * std::f64::consts::PI * (i as f64 + rng.gen::<f64>()) / n as f64;
                let r = 1.0 + 0.05 * (rng.gen::<f64>() - 0.5);
                vec![r * theta.cos(), r * theta.sin()]
            })
            .collect();
        (
            FeatureSet::from_rows(&x_rows).unwrap(),
            FeatureSet::from_rows(&y_rows).unwrap(),
        )
    }

    fn adam(step: f64, iterations: usize) -> OptimizerConfig<f64> {
        OptimizerConfig::new(Algorithm::Adam, step, iterations).unwrap()
    }

    #[test]
    fn identity_start_is_already_converged() {
        let (_, y) = cluster_and_ring(16, 0);
        let opt = adam(0.05, 1);
        let (_, trace) = optimize_points(
            &y.clone(),
            &y,
            PointLoss::Cx,
            DistanceKind::L2,
            0.1,
            1e-5,
            &opt,
            20,
            0,
        )
        .unwrap();
        assert!(trace.rows[0].cx <= 1e-3, "cx={}", trace.rows[0].cx);
    }

    #[test]
    fn cx_descent_minimizes_kde_kl() {
        let (x0, y) = cluster_and_ring(64, 1);
        let opt = adam(0.05, 500).with_trace_every(10);
        let (_, trace) = optimize_points(
            &x0,
            &y,
            PointLoss::Cx,
            DistanceKind::L2,
            0.1,
            1e-5,
            &opt,
            20,
            7,
        )
        .unwrap();
        let initial = trace.rows.first().unwrap().kl;
        let final_kl = trace.rows.last().unwrap().kl;
        assert!(
            final_kl <= 0.1 * initial,
            "kl {initial} -> {final_kl} (ratio {})",
            final_kl / initial
        );
        let corr = trace_correlations(&trace).unwrap();
        let kl_corr = corr
            .iter()
            .find(|(name, _)| *name == "kl")
            .and_then(|(_, v)| *v)
            .unwrap();
        assert!(kl_corr >= 0.9, "pearson(cx, kl) = {kl_corr}");
    }

    #[test]
    fn cd_run_produces_fewer_distinct_matches() {
        let (x0, y) = cluster_and_ring(64, 2);
        let opt = adam(0.05, 300).with_trace_every(100);
        let run = |loss: PointLoss| {
            let (xf, _) = optimize_points(
                &x0,
                &y,
                loss,
                DistanceKind::L2,
                0.1,
                1e-5,
                &opt,
                10,
                3,
            )
            .unwrap();
            let fwd = cx_forward(&xf, &y, DistanceKind::L2, 0.1, 1e-5, false).unwrap();
            best_matches(&fwd.aff).distinct_sources
        };
        let distinct_cx = run(PointLoss::Cx);
        let distinct_cd = run(PointLoss::Cd);
        assert!(
            distinct_cd <= distinct_cx,
            "cd={distinct_cd} cx={distinct_cx}"
        );
    }

    #[test]
    fn permuted_target_converges_immediately() {
        let (_, y) = cluster_and_ring(32, 4);
        let rows: Vec<Vec<f64>> = (0..32).rev().map(|i| y.point(i).to_vec()).collect();
        let x0 = FeatureSet::from_rows(&rows).unwrap();
        let opt = adam(0.01, 50).with_trace_every(50);
        let (_, trace) = optimize_points(
            &x0,
            &y,
            PointLoss::Cx,
            DistanceKind::L2,
            0.1,
            1e-5,
            &opt,
            10,
            0,
        )
        .unwrap();
        assert!(trace.rows.last().unwrap().cx <= 1e-3);
    }

    #[test]
    fn gd_objective_is_monotone_on_smooth_runs() {
        let (x0, y) = cluster_and_ring(24, 5);
        let opt = OptimizerConfig::new(Algorithm::Gd, 1e-3, 60)
            .unwrap()
            .with_trace_every(1);
        let (_, trace) = optimize_points(
            &x0,
            &y,
            PointLoss::Cd,
            DistanceKind::L2,
            0.1,
            1e-5,
            &opt,
            10,
            0,
        )
        .unwrap();
        let objectives: Vec<f64> = trace.rows.iter().map(|r| r.objective).collect();
        for w in objectives.windows(11) {
            assert!(
                w[10] <= w[0] + 1e-12,
                "objective rose over a 10-iteration window: {} -> {}",
                w[0],
                w[10]
            );
        }
    }

    #[test]
    fn trace_rows_match_standalone_functions() {
        let (x0, y) = cluster_and_ring(32, 6);
        let opt = adam(0.05, 40).with_trace_every(20);
        let (xf, trace) = optimize_points(
            &x0,
            &y,
            PointLoss::Cx,
            DistanceKind::L2,
            0.1,
            1e-5,
            &opt,
            10,
            9,
        )
        .unwrap();
        let last = trace.rows.last().unwrap();
        let cx = contextual_loss(&xf, &y, DistanceKind::L2, 0.1, 1e-5, false).unwrap();
        let cd = chamfer_distance(&xf, &y, DistanceKind::L2, false).unwrap();
        assert!((last.cx - cx).abs() <= 1e-9);
        assert!((last.cd - cd).abs() <= 1e-9);
    }

    #[test]
    fn optimize_points_requires_matching_shapes() {
        let (x0, y) = cluster_and_ring(8, 7);
        let smaller = crate::feature_set::subsample(&y, 6, 0).unwrap();
        let opt = adam(0.05, 10);
        assert!(matches!(
            optimize_points(
                &x0,
                &smaller,
                PointLoss::Cx,
                DistanceKind::L2,
                0.1,
                1e-5,
                &opt,
                10,
                0
            ),
            Err(Error::SizeMismatch(8, 6))
        ));
    }

    fn texture(h: usize, w: usize, seed: u64) -> ImageGrid<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..h * w)
            .map(|i| {
                let base =
                    0.5 + 0.3 * ((i % w) as f64 * 0.7).sin() * ((i / w) as f64 * 0.4).cos();
                (base + 0.2 * rng.gen::<f64>()).clamp(0.0, 1.0)
            })
            .collect();
        ImageGrid::new(data, h, w, 1).unwrap()
    }

    #[test]
    fn identity_image_objective_is_null() {
        let y = texture(16, 16, 1);
        let mut cfg = ObjectiveConfig::<f64>::sr();
        cfg.blur_size = 5;
        cfg.patch = PatchSpec::new(3, 2).unwrap();
        let opt = adam(0.01, 1).with_trace_every(1);
        let (_, trace) = optimize_image(&y.clone(), &y, &cfg, &opt, 4, 0).unwrap();
        assert!(trace.rows[0].objective <= 1e-3);
    }

    #[test]
    fn nonzero_gan_weight_is_rejected() {
        let mut cfg = ObjectiveConfig::<f64>::sr();
        cfg.lambda_gan = 1e-3;
        assert!(matches!(
            cfg.validate(),
            Err(Error::AdversarialUnsupported)
        ));
    }

    #[test]
    fn preset_weights() {
        let sr = ObjectiveConfig::<f64>::sr();
        assert_eq!(sr.lambda_cx, 0.1);
        assert_eq!(sr.lambda_l2_lf, 10.0);
        assert_eq!(sr.lambda_l1, 0.0);
        assert_eq!(sr.lambda_gan, 0.0);
        assert_eq!(sr.blur_size, 21);
        assert_eq!(sr.blur_sigma, 3.0);
        let normals = ObjectiveConfig::<f64>::normals();
        assert_eq!(normals.lambda_cx, 1.0);
        assert_eq!(normals.lambda_l2_lf, 0.1);
        assert_eq!(normals.lambda_l1, 1.0);
    }

    #[test]
    fn image_pixels_stay_clamped() {
        let y = texture(12, 12, 2);
        let x0 = texture(12, 12, 3);
        let mut cfg = ObjectiveConfig::<f64>::normals();
        cfg.blur_size = 5;
        cfg.patch = PatchSpec::new(3, 2).unwrap();
        let opt = adam(0.05, 30).with_trace_every(30);
        let (xf, _) = optimize_image(&x0, &y, &cfg, &opt, 4, 0).unwrap();
        assert!(xf.as_flat().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn correlations_identity_and_negation() {
        let mut trace = Trace::default();
        for i in 0..5usize {
            let v = i as f64;
            trace.rows.push(TraceRow {
                iter: i,
                objective: v,
                cx: v,
                cd: v,
                kl: -v,
                chi2: 3.0,
                emd: 2.0 * v + 1.0,
                l2_lf: 0.0,
                l1: 0.0,
            });
        }
        let corr = trace_correlations(&trace).unwrap();
        let get = |name: &str| corr.iter().find(|(n, _)| *n == name).unwrap().1;
        assert!((get("cd").unwrap() - 1.0).abs() <= 1e-12);
        assert!((get("kl").unwrap() + 1.0).abs() <= 1e-12);
        assert!((get("emd").unwrap() - 1.0).abs() <= 1e-12);
        assert_eq!(get("chi2"), None);
    }

    #[test]
    fn correlations_need_three_rows() {
        let mut trace = Trace::<f64>::default();
        trace.rows.push(TraceRow {
            iter: 0,
            objective: 0.0,
            cx: 0.0,
            cd: 0.0,
            kl: 0.0,
            chi2: 0.0,
            emd: 0.0,
            l2_lf: 0.0,
            l1: 0.0,
        });
        assert!(trace_correlations(&trace).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let (x0, y) = cluster_and_ring(16, 8);
        let opt = adam(0.05, 20).with_trace_every(10);
        let (_, trace) = optimize_points(
            &x0,
            &y,
            PointLoss::Cx,
            DistanceKind::L2,
            0.1,
            1e-5,
            &opt,
            10,
            0,
        )
        .unwrap();
        let csv = trace.to_csv();
        assert!(csv.starts_with(Trace::<f64>::CSV_HEADER));
        let back = Trace::<f64>::from_csv(&csv).unwrap();
        assert_eq!(back.rows.len(), trace.rows.len());
        for (a, b) in trace.rows.iter().zip(&back.rows) {
            assert_eq!(a.iter, b.iter);
            // 9 significant digits survive the round trip.
            assert!((a.kl - b.kl).abs() <= 1e-8 * a.kl.abs().max(1.0));
        }
    }
}
