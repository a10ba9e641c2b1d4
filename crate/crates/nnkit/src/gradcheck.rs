//! Central finite-difference verification of analytic gradients.

/// Denominator floor: below this magnitude both gradients count as zero and the
/// absolute difference is compared instead.
pub const RELATIVE_FLOOR: f64 = 1e-6;

pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative difference below which two slope estimates count as equal.
const AGREEMENT: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Compares `analytic` against `(f(p + h e_k) - f(p - h e_k)) / 2h` for every
/// `k` in `indices` (all parameters when `None`). The relative error is
/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`. When a kink lies inside the
/// interval the step is refined to `h / 10` or `h / 100`.
pub fn grad_check<F>(params: &[f64], analytic: &[f64], indices: Option<&[usize]>, h: f64, mut loss: F) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "gradient length must match parameters");
    let mut work = params.to_vec();
    let mut report = GradCheck {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let all: Vec<usize>;
    let indices = match indices {
        Some(ix) => ix,
        None => {
            all = (0..params.len()).collect();
            &all
        }
    };
    let base = loss(&work);
    // Cancellation error of a central difference at step `s` is about eps·|f| / s.
    let noise = |s: f64| 10.0 * f64::EPSILON * (base.abs() + 1.0) / s;
    let agree = |x: f64, y: f64, s: f64| (x - y).abs() <= AGREEMENT * x.abs().max(y.abs()).max(RELATIVE_FLOOR) + noise(s);
    for &k in indices {
        let original = work[k];
        let mut central = |step: f64| {
            work[k] = original + step;
            let plus = loss(&work);
            work[k] = original - step;
            let minus = loss(&work);
            work[k] = original;
            (plus, minus, (plus - minus) / (2.0 * step))
        };
        let (plus, minus, coarse) = central(h);
        // A kink (a ReLU switching) inside [p - h, p + h] shows up as one-sided slopes
        // that disagree. Curvature does too, so a tenfold smaller step decides: a smooth
        // loss gives the same central estimate, a kink does not.
        let gap = ((plus - base) - (base - minus)).abs() / h;
        let numeric = if gap <= AGREEMENT * coarse.abs().max(RELATIVE_FLOOR) + noise(h) {
            coarse
        } else {
            let fine = central(h / 10.0).2;
            if agree(coarse, fine, h / 10.0) {
                coarse
            } else {
                let finer = central(h / 100.0).2;
                if agree(fine, finer, h / 100.0) {
                    fine
                } else {
                    finer
                }
            }
        };
        let a = analytic[k];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
        if rel > report.max_relative_error || rel.is_nan() {
            report = GradCheck {
                max_relative_error: rel,
                worst_index: k,
                analytic: a,
                numeric,
            };
        }
    }
    report
}
