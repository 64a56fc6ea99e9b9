//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::params::ParamStore;
use super::tape::{Session, Var};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckSettings {
    /// Central-difference step.
    pub eps: f64,
    /// Relative-error tolerance.
    pub tol: f64,
    /// Coordinates sampled per parameter (all coordinates when the parameter
    /// is smaller).
    pub coords_per_param: usize,
    /// Seed for the coordinate subsample.
    pub seed: u64,
}

impl Default for GradCheckSettings {
    fn default() -> Self {
        GradCheckSettings {
            eps: 1e-5,
            tol: 1e-3,
            coords_per_param: 32,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub tol: f64,
    pub pass: bool,
    /// Set when the loss went non-finite; names the parameter under
    /// perturbation, or "baseline" for the unperturbed pass.
    pub failure: Option<String>,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.per_param
            .iter()
            .fold(0.0, |m, p| m.max(p.max_rel_err))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        for p in &self.per_param {
            s.push_str(&format!(
                "  {:<44} rel_err {:>10.3e}  ({} coords)\n",
                p.name, p.max_rel_err, p.coords_checked
            ));
        }
        s.push_str(&format!(
            "gradcheck: {} (worst {:.3e}, tol {:.1e})",
            if self.pass { "PASS" } else { "FAIL" },
            self.worst(),
            self.tol
        ));
        s
    }
}

/// Denominator floor keeps the relative error meaningful where both gradients
/// are tiny and the finite difference is dominated by roundoff.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Compare analytic gradients of a scalar loss against central finite
/// differences `(f(θ+ε) − f(θ−ε)) / 2ε`, coordinate by coordinate, on a
/// random subsample per parameter.
///
/// `build` must construct the same forward graph for any parameter values;
/// only parameters bound through [`Session::param`] are checked.
pub fn grad_check<F>(params: &ParamStore, build: F, settings: GradCheckSettings) -> GradCheckReport
where
    F: Fn(&mut Session) -> Var,
{
    let mut report = GradCheckReport {
        per_param: Vec::new(),
        tol: settings.tol,
        pass: false,
        failure: None,
    };

    // Analytic pass.
    let mut sess = Session::new(params);
    let loss = build(&mut sess);
    let loss_val = sess.scalar_value(loss);
    if !loss_val.is_finite() {
        report.failure = Some("baseline".to_string());
        return report;
    }
    let analytic = sess.param_grads(loss);
    drop(sess);

    let mut perturbed = params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let eval = |store: &ParamStore| -> f64 {
        let mut s = Session::new(store);
        let l = build(&mut s);
        s.scalar_value(l)
    };

    for (name, grad) in &analytic {
        let numel = grad.numel();
        let coords: Vec<usize> = if numel <= settings.coords_per_param {
            (0..numel).collect()
        } else {
            let mut picks = sample(&mut rng, numel, settings.coords_per_param).into_vec();
            picks.sort_unstable();
            picks
        };
        let mut max_err = 0.0f64;
        for &c in &coords {
            let orig = perturbed.get(name).unwrap().data()[c];
            perturbed.get_mut(name).unwrap().data_mut()[c] = orig + settings.eps;
            let up = eval(&perturbed);
            perturbed.get_mut(name).unwrap().data_mut()[c] = orig - settings.eps;
            let down = eval(&perturbed);
            perturbed.get_mut(name).unwrap().data_mut()[c] = orig;
            if !up.is_finite() || !down.is_finite() {
                report.failure = Some(name.clone());
                report.per_param.push(ParamCheck {
                    name: name.clone(),
                    max_rel_err: f64::INFINITY,
                    coords_checked: coords.len(),
                });
                return report;
            }
            let fd = (up - down) / (2.0 * settings.eps);
            max_err = max_err.max(rel_err(grad.data()[c], fd));
        }
        report.per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: max_err,
            coords_checked: coords.len(),
        });
    }

    report.pass = report.per_param.iter().all(|p| p.max_rel_err <= settings.tol);
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn sum_of_params_has_unit_gradient() {
        let mut ps = ParamStore::new(1);
        ps.init_uniform("theta", vec![4], 1.0);
        let report = grad_check(
            &ps,
            |s| {
                let t = s.param("theta");
                s.sum(t)
            },
            GradCheckSettings::default(),
        );
        assert!(report.pass, "{}", report.summary());
        assert!(report.worst() < 1e-8);
    }

    #[test]
    fn quadratic_loss_matches_2theta() {
        let mut ps = ParamStore::new(2);
        ps.insert("theta", Tensor::vector(&[0.3, -1.2, 2.5]));
        let report = grad_check(
            &ps,
            |s| {
                let t = s.param("theta");
                let sq = s.mul(t, t);
                s.sum(sq)
            },
            GradCheckSettings::default(),
        );
        assert!(report.pass, "{}", report.summary());
        assert!(report.worst() < 1e-8, "worst {}", report.worst());
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut ps = ParamStore::new(3);
        ps.insert("theta", Tensor::vector(&[0.0]));
        let report = grad_check(
            &ps,
            |s| {
                let t = s.param("theta");
                let inv = s.pow_scalar(t, -1.0); // 1/0 at baseline
                s.sum(inv)
            },
            GradCheckSettings::default(),
        );
        assert!(!report.pass);
        assert_eq!(report.failure.as_deref(), Some("baseline"));
    }
}
