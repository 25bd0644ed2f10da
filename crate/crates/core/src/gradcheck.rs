//! Central finite-difference verification of the analytic gradients.
//!
//! The checker walks every coordinate of the differentiated variable,
//! compares the analytic derivative against a central difference, and
//! classifies failing coordinates: a coordinate whose one-sided slopes
//! disagree sits on an argmax/argmin tie (the loss is non-smooth there), is
//! reported as a suspected tie, and is excluded from the failure count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::affinity::{chamfer_distance, contextual_loss, cosine_distance, DistanceKind};
use crate::error::{Error, Result};
use crate::feature_set::{extract_patches, FeatureSet, ImageGrid, PatchSpec};
use crate::gradients::{
    grad_chamfer, grad_contextual, grad_contextual_image, grad_l1, grad_lowfreq_l2, BlurKernel,
};
use crate::scalar::{real, Real};

/// The differentiable losses the harness can verify.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossId {
    ContextualPoints,
    ContextualImage,
    Chamfer,
    LowFreqL2,
    L1,
}

impl std::str::FromStr for LossId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cx" => Ok(LossId::ContextualPoints),
            "cx-image" => Ok(LossId::ContextualImage),
            "chamfer" => Ok(LossId::Chamfer),
            "lowfreq-l2" => Ok(LossId::LowFreqL2),
            "l1" => Ok(LossId::L1),
            other => Err(Error::invalid(format!(
                "unknown loss {other:?} (expected cx, cx-image, chamfer, lowfreq-l2, l1)"
            ))),
        }
    }
}

enum Target<T: Real> {
    Points(FeatureSet<T>),
    Image(ImageGrid<T>),
}

/// A concrete loss instance: the variable being differentiated plus the
/// frozen target and parameters.
pub struct GradCheckInstance<T: Real> {
    loss: LossId,
    x: Vec<T>,
    shape: (usize, usize, usize),
    target: Target<T>,
    kind: DistanceKind,
    h: T,
    epsilon: T,
    blur: Option<BlurKernel<T>>,
    patch: Option<PatchSpec>,
}

fn uniform_points<T: Real>(rng: &mut ChaCha8Rng, n: usize, d: usize) -> FeatureSet<T> {
    let data: Vec<T> = (0..n * d).map(|_| real(rng.gen::<f64>())).collect();
    FeatureSet::from_flat(data, n, d).unwrap()
}

fn uniform_image<T: Real>(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageGrid<T> {
    let data: Vec<T> = (0..h * w)
        .map(|_| real(0.05 + 0.9 * rng.gen::<f64>()))
        .collect();
    ImageGrid::new(data, h, w, 1).unwrap()
}

fn min_cross_distance<T: Real>(x: &FeatureSet<T>, y: &FeatureSet<T>, kind: DistanceKind) -> T {
    let mut best = T::infinity();
    for a in x.iter_points() {
        for b in y.iter_points() {
            let d = match kind {
                DistanceKind::Cosine => cosine_distance(a, b),
                _ => a
                    .iter()
                    .zip(b)
                    .fold(T::zero(), |acc, (p, q)| {
                        let t = *p - *q;
                        acc + t * t
                    })
                    .sqrt(),
            };
            best = best.min(d);
        }
    }
    best
}

impl<T: Real> GradCheckInstance<T> {
    /// Builds a seeded random instance, resampled until it is non-degenerate
    /// (no near-coincident pairs, no near-zero L1 residuals), so the finite
    /// differences stay in their smooth regime.
    pub fn random(loss: LossId, seed: u64) -> Self {
        let h = real::<T>(0.1);
        let epsilon = real::<T>(1e-5);
        match loss {
            LossId::ContextualPoints => {
                let (n, d) = (6usize, 2usize);
                let mut attempt = 0u64;
                loop {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt << 32));
                    let x = uniform_points::<T>(&mut rng, n, d);
                    let y = uniform_points::<T>(&mut rng, n, d);
                    if min_cross_distance(&x, &y, DistanceKind::L2) >= real(0.02) {
                        return Self {
                            loss,
                            x: x.as_flat().to_vec(),
                            shape: (n, d, 0),
                            target: Target::Points(y),
                            kind: DistanceKind::L2,
                            h,
                            epsilon,
                            blur: None,
                            patch: None,
                        };
                    }
                    attempt += 1;
                }
            }
            LossId::Chamfer => {
                let (n, m, d) = (8usize, 5usize, 3usize);
                let mut attempt = 0u64;
                loop {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt << 32));
                    let x = uniform_points::<T>(&mut rng, n, d);
                    let y = uniform_points::<T>(&mut rng, m, d);
                    if min_cross_distance(&x, &y, DistanceKind::L2) >= real(0.02) {
                        return Self {
                            loss,
                            x: x.as_flat().to_vec(),
                            shape: (n, d, 0),
                            target: Target::Points(y),
                            kind: DistanceKind::L2,
                            h,
                            epsilon,
                            blur: None,
                            patch: None,
                        };
                    }
                    attempt += 1;
                }
            }
            LossId::ContextualImage => {
                let (ih, iw) = (8usize, 8usize);
                let patch = PatchSpec::new(3, 2).unwrap();
                let mut attempt = 0u64;
                loop {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt << 32));
                    let x = uniform_image::<T>(&mut rng, ih, iw);
                    let y = uniform_image::<T>(&mut rng, ih, iw);
                    let px = extract_patches(&x, &patch).unwrap();
                    let py = extract_patches(&y, &patch).unwrap();
                    if min_cross_distance(&px, &py, DistanceKind::Cosine) >= real(0.005) {
                        return Self {
                            loss,
                            x: x.as_flat().to_vec(),
                            shape: (ih, iw, 1),
                            target: Target::Image(y),
                            kind: DistanceKind::Cosine,
                            h,
                            epsilon,
                            blur: None,
                            patch: Some(patch),
                        };
                    }
                    attempt += 1;
                }
            }
            LossId::LowFreqL2 => {
                let (ih, iw) = (8usize, 8usize);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x = uniform_image::<T>(&mut rng, ih, iw);
                let y = uniform_image::<T>(&mut rng, ih, iw);
                Self {
                    loss,
                    x: x.as_flat().to_vec(),
                    shape: (ih, iw, 1),
                    target: Target::Image(y),
                    kind: DistanceKind::L2,
                    h,
                    epsilon,
                    blur: Some(BlurKernel::gaussian(5, real(1.5)).unwrap()),
                    patch: None,
                }
            }
            LossId::L1 => {
                let (ih, iw) = (8usize, 8usize);
                let mut attempt = 0u64;
                loop {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt << 32));
                    let x = uniform_image::<T>(&mut rng, ih, iw);
                    let y = uniform_image::<T>(&mut rng, ih, iw);
                    let near_crossing = x
                        .as_flat()
                        .iter()
                        .zip(y.as_flat())
                        .any(|(a, b)| (*a - *b).abs() < real(1e-3));
                    if !near_crossing {
                        return Self {
                            loss,
                            x: x.as_flat().to_vec(),
                            shape: (ih, iw, 1),
                            target: Target::Image(y),
                            kind: DistanceKind::L2,
                            h,
                            epsilon,
                            blur: None,
                            patch: None,
                        };
                    }
                    attempt += 1;
                }
            }
        }
    }

    /// Builds a Chamfer instance with the single source point exactly
    /// equidistant from two targets in different directions: a hard argmin
    /// tie the checker must flag.
    pub fn chamfer_tie() -> Self {
        Self {
            loss: LossId::Chamfer,
            x: vec![T::zero(), T::zero()],
            shape: (1, 2, 0),
            target: Target::Points(
                FeatureSet::from_rows(&[
                    vec![T::one(), T::zero()],
                    vec![-T::one(), T::zero()],
                    vec![real(5.0), real(5.0)],
                ])
                .unwrap(),
            ),
            kind: DistanceKind::L2,
            h: real(0.1),
            epsilon: real(1e-5),
            blur: None,
            patch: None,
        }
    }

    pub fn loss_id(&self) -> LossId {
        self.loss
    }

    pub fn variable(&self) -> &[T] {
        &self.x
    }

    /// Loss value at an arbitrary assignment of the variable.
    pub fn eval(&self, flat: &[T]) -> T {
        match (&self.target, self.loss) {
            (Target::Points(y), LossId::ContextualPoints) => {
                let x = FeatureSet::from_flat(flat.to_vec(), self.shape.0, self.shape.1).unwrap();
                contextual_loss(&x, y, self.kind, self.h, self.epsilon, false).unwrap()
            }
            (Target::Points(y), LossId::Chamfer) => {
                let x = FeatureSet::from_flat(flat.to_vec(), self.shape.0, self.shape.1).unwrap();
                chamfer_distance(&x, y, self.kind, false).unwrap()
            }
            (Target::Image(y), LossId::ContextualImage) => {
                let x =
                    ImageGrid::new(flat.to_vec(), self.shape.0, self.shape.1, self.shape.2)
                        .unwrap();
                contextual_loss(
                    &extract_patches(&x, self.patch.as_ref().unwrap()).unwrap(),
                    &extract_patches(y, self.patch.as_ref().unwrap()).unwrap(),
                    self.kind,
                    self.h,
                    self.epsilon,
                    false,
                )
                .unwrap()
            }
            (Target::Image(y), LossId::LowFreqL2) => {
                let x =
                    ImageGrid::new(flat.to_vec(), self.shape.0, self.shape.1, self.shape.2)
                        .unwrap();
                grad_lowfreq_l2(&x, y, self.blur.as_ref().unwrap()).unwrap().0
            }
            (Target::Image(y), LossId::L1) => {
                let x =
                    ImageGrid::new(flat.to_vec(), self.shape.0, self.shape.1, self.shape.2)
                        .unwrap();
                grad_l1(&x, y).unwrap().0
            }
            _ => unreachable!("instance target matches its loss"),
        }
    }

    /// Loss and analytic gradient at the instance's own variable.
    pub fn analytic(&self) -> (T, Vec<T>) {
        match (&self.target, self.loss) {
            (Target::Points(y), LossId::ContextualPoints) => {
                let x =
                    FeatureSet::from_flat(self.x.clone(), self.shape.0, self.shape.1).unwrap();
                grad_contextual(&x, y, self.kind, self.h, self.epsilon, false).unwrap()
            }
            (Target::Points(y), LossId::Chamfer) => {
                let x =
                    FeatureSet::from_flat(self.x.clone(), self.shape.0, self.shape.1).unwrap();
                grad_chamfer(&x, y, self.kind, false).unwrap()
            }
            (Target::Image(y), LossId::ContextualImage) => {
                let x = ImageGrid::new(self.x.clone(), self.shape.0, self.shape.1, self.shape.2)
                    .unwrap();
                grad_contextual_image(
                    &x,
                    y,
                    self.patch.as_ref().unwrap(),
                    self.kind,
                    self.h,
                    self.epsilon,
                    false,
                )
                .unwrap()
            }
            (Target::Image(y), LossId::LowFreqL2) => {
                let x = ImageGrid::new(self.x.clone(), self.shape.0, self.shape.1, self.shape.2)
                    .unwrap();
                grad_lowfreq_l2(&x, y, self.blur.as_ref().unwrap()).unwrap()
            }
            (Target::Image(y), LossId::L1) => {
                let x = ImageGrid::new(self.x.clone(), self.shape.0, self.shape.1, self.shape.2)
                    .unwrap();
                grad_l1(&x, y).unwrap()
            }
            _ => unreachable!("instance target matches its loss"),
        }
    }
}

/// One coordinate that failed the tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordError<T> {
    pub coord: usize,
    pub analytic: T,
    pub fd: T,
    pub rel_err: T,
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport<T> {
    /// Largest relative error over coordinates not flagged as ties.
    pub max_rel_err: T,
    /// Coordinates over tolerance that are not explained by a tie.
    pub failures: Vec<CoordError<T>>,
    /// Coordinates over tolerance whose one-sided slopes disagree.
    pub ties: Vec<usize>,
    pub checked: usize,
}

impl<T: Real> GradCheckReport<T> {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    /// One line per failing coordinate, tie lines, then the summary line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for f in &self.failures {
            out.push_str(&format!(
                "fail coord={} analytic={} fd={} rel_err={}\n",
                f.coord,
                crate::scalar::sig9(f.analytic),
                crate::scalar::sig9(f.fd),
                crate::scalar::sig9(f.rel_err)
            ));
        }
        for t in &self.ties {
            out.push_str(&format!("tie coord={t}\n"));
        }
        out.push_str(&format!(
            "max_rel_err={}\n",
            crate::scalar::sig9(self.max_rel_err)
        ));
        out
    }
}

/// Sweeps central finite differences over every coordinate of the instance's
/// variable and compares them to the analytic gradient.
///
/// Relative error uses an absolute guard of 1e-6 in the denominator so
/// coordinates where both sides vanish do not produce 0/0 noise.
pub fn gradcheck<T: Real>(
    instance: &GradCheckInstance<T>,
    step: T,
    tolerance: T,
) -> GradCheckReport<T> {
    let x = instance.variable().to_vec();
    let (f0, analytic) = instance.analytic();
    let mut probe = x.clone();
    let mut failures = Vec::new();
    let mut ties = Vec::new();
    let mut max_rel = T::zero();
    let guard = real::<T>(1e-6);
    let two = real::<T>(2.0);
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = instance.eval(&probe);
        probe[i] = x[i] - step;
        let minus = instance.eval(&probe);
        probe[i] = x[i];
        let fd = (plus - minus) / (two * step);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(guard);
        if rel > tolerance {
            // One-sided slopes disagreeing by more than curvature noise mark
            // an argmax/argmin switch inside the step.
            let fwd = (plus - f0) / step;
            let bwd = (f0 - minus) / step;
            let jump = (fwd - bwd).abs();
            if jump > real::<T>(0.1) * fwd.abs().max(bwd.abs()).max(guard) {
                ties.push(i);
                continue;
            }
            failures.push(CoordError {
                coord: i,
                analytic: a,
                fd,
                rel_err: rel,
            });
        }
        max_rel = max_rel.max(rel);
    }
    GradCheckReport {
        max_rel_err: max_rel,
        failures,
        ties,
        checked: x.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_losses_pass_at_default_tolerance() {
        for loss in [
            LossId::ContextualPoints,
            LossId::ContextualImage,
            LossId::Chamfer,
            LossId::LowFreqL2,
            LossId::L1,
        ] {
            let tol = match loss {
                LossId::ContextualImage => 1e-3,
                _ => 1e-4,
            };
            for seed in 0..5u64 {
                let instance = GradCheckInstance::<f64>::random(loss, seed);
                let report = gradcheck(&instance, 1e-5, tol);
                assert!(
                    report.passed(),
                    "{loss:?} seed={seed}: {}",
                    report.to_text()
                );
            }
        }
    }

    #[test]
    fn chamfer_tie_is_flagged_not_failed() {
        let instance = GradCheckInstance::<f64>::chamfer_tie();
        let report = gradcheck(&instance, 1e-5, 1e-4);
        assert!(report.passed(), "{}", report.to_text());
        assert!(!report.ties.is_empty(), "{}", report.to_text());
        // The tie sits on the coordinate along which the two nearest targets
        // differ.
        assert_eq!(report.ties, vec![0]);
    }

    #[test]
    fn report_text_has_summary_line() {
        let instance = GradCheckInstance::<f64>::random(LossId::Chamfer, 3);
        let report = gradcheck(&instance, 1e-5, 1e-4);
        let text = report.to_text();
        assert!(text.lines().last().unwrap().starts_with("max_rel_err="));
    }

    #[test]
    fn step_sweep_is_u_shaped() {
        // Coarse steps pay truncation error, tiny steps pay cancellation;
        // the middle step should beat both.
        let instance = GradCheckInstance::<f64>::random(LossId::Chamfer, 11);
        let errs: Vec<f64> = [1e-3, 1e-5, 1e-7]
            .into_iter()
            .map(|s| gradcheck(&instance, s, f64::INFINITY).max_rel_err)
            .collect();
        assert!(
            errs[1] < errs[0] && errs[1] < errs[2],
            "errors not U-shaped: {errs:?}"
        );
    }
}
