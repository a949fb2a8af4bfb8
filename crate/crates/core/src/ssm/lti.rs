//! Reference state-space operators on a single input channel: zero-order-hold
//! discretization, the recurrent scan, and the equivalent structured
//! convolution kernel. `A` is diagonal throughout.

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Switch to the Euler rule `B̄ = Δ·B` below this `|Δ·a|`.
pub const EULER_THRESHOLD: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub enum StepSize {
    /// One Δ for every timestep (time-invariant system).
    Fixed(f64),
    /// Δ_t per timestep (selective system).
    PerStep(Vec<f64>),
}

/// Continuous-time parameters with diagonal `A` (`a[n]` is `A[n, n]`).
#[derive(Clone, Debug, PartialEq)]
pub struct SsmParams<S: Scalar = f32> {
    pub a: Vec<S>,
    pub b: Vec<S>,
    pub c: Vec<S>,
    pub delta: StepSize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Transition<S: Scalar> {
    Invariant { abar: Vec<S>, bbar: Vec<S> },
    Varying(Vec<(Vec<S>, Vec<S>)>),
}

/// Discretized system ready for scanning.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteSsm<S: Scalar = f32> {
    pub transition: Transition<S>,
    pub c: Vec<S>,
}

impl<S: Scalar> DiscreteSsm<S> {
    pub fn lti(abar: Vec<S>, bbar: Vec<S>, c: Vec<S>) -> Self {
        DiscreteSsm {
            transition: Transition::Invariant { abar, bbar },
            c,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.c.len()
    }
}

/// Zero-order hold for diagonal `A`:
/// `Ā = exp(Δ·A)`, `B̄ = (Δ·A)⁻¹(exp(Δ·A) − I)·Δ·B`.
pub fn discretize<S: Scalar>(a: &[S], b: &[S], delta: f64) -> Result<(Vec<S>, Vec<S>)> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("step size must be > 0, got {delta}")));
    }
    if a.len() != b.len() {
        return Err(Error::shape("discretize", &[a.len()], &[b.len()]));
    }
    let mut abar = Vec::with_capacity(a.len());
    let mut bbar = Vec::with_capacity(a.len());
    for (&an, &bn) in a.iter().zip(b) {
        let da = delta * an.to_f64();
        abar.push(S::from_f64(da.exp()));
        let bb = if da.abs() < EULER_THRESHOLD {
            delta * bn.to_f64()
        } else {
            da.exp_m1() / da * delta * bn.to_f64()
        };
        bbar.push(S::from_f64(bb));
    }
    Ok((abar, bbar))
}

impl<S: Scalar> SsmParams<S> {
    pub fn discretize(&self) -> Result<DiscreteSsm<S>> {
        let n = self.a.len();
        if self.b.len() != n || self.c.len() != n {
            return Err(Error::shape("ssm params", &[n], &[self.b.len(), self.c.len()]));
        }
        let transition = match &self.delta {
            StepSize::Fixed(d) => {
                let (abar, bbar) = discretize(&self.a, &self.b, *d)?;
                Transition::Invariant { abar, bbar }
            }
            StepSize::PerStep(ds) => Transition::Varying(
                ds.iter()
                    .map(|&d| discretize(&self.a, &self.b, d))
                    .collect::<Result<_>>()?,
            ),
        };
        Ok(DiscreteSsm {
            transition,
            c: self.c.clone(),
        })
    }
}

/// `h_t = Ā h_{t−1} + B̄ u_t`, `v_t = C h_t`, `h_0 = 0`.
pub fn ssm_scan_recurrent<S: Scalar>(u: &[S], ssm: &DiscreteSsm<S>) -> Result<Vec<S>> {
    let n = ssm.state_dim();
    if let Transition::Varying(steps) = &ssm.transition {
        if steps.len() != u.len() {
            return Err(Error::shape("ssm_scan", &[u.len()], &[steps.len()]));
        }
    }
    let mut h = vec![S::ZERO; n];
    let mut v = Vec::with_capacity(u.len());
    for (t, &ut) in u.iter().enumerate() {
        let (abar, bbar) = match &ssm.transition {
            Transition::Invariant { abar, bbar } => (abar, bbar),
            Transition::Varying(steps) => (&steps[t].0, &steps[t].1),
        };
        let mut y = S::ZERO;
        for i in 0..n {
            h[i] = abar[i] * h[i] + bbar[i] * ut;
            y += ssm.c[i] * h[i];
        }
        if !y.is_finite() || h.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("non-finite SSM state at timestep {t}")));
        }
        v.push(y);
    }
    Ok(v)
}

/// `K = (C·B̄, C·Ā·B̄, …, C·Ā^{M−1}·B̄)`.
pub fn ssm_conv_kernel<S: Scalar>(ssm: &DiscreteSsm<S>, m: usize) -> Result<Vec<S>> {
    let Transition::Invariant { abar, bbar } = &ssm.transition else {
        return Err(Error::Unsupported(
            "convolution kernel needs a time-invariant system".into(),
        ));
    };
    let n = ssm.state_dim();
    // power[i] = Ā^j[i] · B̄[i]
    let mut power = bbar.clone();
    let mut k = Vec::with_capacity(m);
    for _ in 0..m {
        let mut s = S::ZERO;
        for i in 0..n {
            s += ssm.c[i] * power[i];
        }
        k.push(s);
        for i in 0..n {
            power[i] *= abar[i];
        }
    }
    Ok(k)
}

/// Causal convolution `v_t = Σ_{j=0}^{min(t, M−1)} K_j · u_{t−j}` (0-based `t`).
pub fn ssm_conv_apply<S: Scalar>(u: &[S], k: &[S]) -> Result<Vec<S>> {
    if k.len() > u.len() {
        return Err(Error::Domain(format!(
            "kernel length {} exceeds sequence length {}",
            k.len(),
            u.len()
        )));
    }
    Ok((0..u.len())
        .map(|t| {
            let mut s = S::ZERO;
            for j in 0..=t.min(k.len() - 1) {
                s += k[j] * u[t - j];
            }
            s
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn discretize_examples() {
        let (ab, bb) = discretize(&[0.0f64], &[1.0], 0.1).unwrap();
        assert_eq!(ab, vec![1.0]);
        assert!((bb[0] - 0.1).abs() < 1e-15);

        let (ab, _) = discretize(&[-1.0f64], &[1.0], std::f64::consts::LN_2).unwrap();
        assert!((ab[0] - 0.5).abs() < 1e-15);

        let (ab, bb) = discretize(&[-1.0f64, -2.0], &[1.0, 1.0], 1.0).unwrap();
        assert!(close(&ab, &[(-1.0f64).exp(), (-2.0f64).exp()], 1e-15));
        // (e^{-a}-1)/(-a)
        assert!(close(&bb, &[1.0 - (-1.0f64).exp(), (1.0 - (-2.0f64).exp()) / 2.0], 1e-15));
    }

    #[test]
    fn discretize_rejects_bad_step() {
        assert!(matches!(discretize(&[-1.0f64], &[1.0], 0.0), Err(Error::Domain(_))));
        assert!(matches!(discretize(&[-1.0f64], &[1.0], -0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn scan_examples() {
        let ssm = DiscreteSsm::lti(vec![0.5f64], vec![1.0], vec![1.0]);
        assert_eq!(ssm_scan_recurrent(&[1.0, 0.0, 0.0], &ssm).unwrap(), vec![1.0, 0.5, 0.25]);
        let zero_c = DiscreteSsm::lti(vec![0.5f64], vec![1.0], vec![0.0]);
        assert_eq!(ssm_scan_recurrent(&[3.0, -1.0, 2.0], &zero_c).unwrap(), vec![0.0; 3]);
        assert_eq!(ssm_scan_recurrent(&[0.0; 4], &ssm).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn scan_reports_timestep_of_blow_up() {
        let ssm = DiscreteSsm::lti(vec![1e30f32], vec![1.0], vec![1.0]);
        let err = ssm_scan_recurrent(&[1.0f32, 1.0, 1.0], &ssm).unwrap_err().to_string();
        assert!(err.contains("timestep 2"), "{err}");
    }

    #[test]
    fn kernel_examples() {
        let ssm = DiscreteSsm::lti(vec![0.5f64], vec![1.0], vec![1.0]);
        assert_eq!(ssm_conv_kernel(&ssm, 3).unwrap(), vec![1.0, 0.5, 0.25]);
        let nil = DiscreteSsm::lti(vec![0.0f64], vec![2.0], vec![1.5]);
        assert_eq!(ssm_conv_kernel(&nil, 3).unwrap(), vec![3.0, 0.0, 0.0]);
        assert_eq!(ssm_conv_kernel(&ssm, 1).unwrap(), vec![1.0]);
    }

    #[test]
    fn kernel_rejects_selective_params() {
        let p = SsmParams {
            a: vec![-1.0f64],
            b: vec![1.0],
            c: vec![1.0],
            delta: StepSize::PerStep(vec![0.1, 0.2]),
        };
        let d = p.discretize().unwrap();
        assert!(matches!(ssm_conv_kernel(&d, 2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn conv_examples() {
        assert_eq!(
            ssm_conv_apply(&[1.0f64, 0.0, 0.0], &[1.0, 0.5, 0.25]).unwrap(),
            vec![1.0, 0.5, 0.25]
        );
        assert_eq!(ssm_conv_apply(&[3.0f64, 1.0, 4.0], &[1.0]).unwrap(), vec![3.0, 1.0, 4.0]);
        assert!(matches!(
            ssm_conv_apply(&[1.0f64], &[1.0, 1.0]),
            Err(Error::Domain(_))
        ));
    }

    fn stable_params() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
        (1usize..=8).prop_flat_map(|n| {
            (
                prop::collection::vec(-3.0f64..0.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::vec(-1.0f64..1.0, n),
                0.01f64..0.5,
            )
        })
    }

    proptest! {
        #[test]
        fn linearity((a, b, c, dt) in stable_params(),
                     u1 in prop::collection::vec(-1.0f64..1.0, 32),
                     u2 in prop::collection::vec(-1.0f64..1.0, 32),
                     alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let ssm = SsmParams { a, b, c, delta: StepSize::Fixed(dt) }.discretize().unwrap();
            let mix: Vec<f64> = u1.iter().zip(&u2).map(|(x, y)| alpha * x + beta * y).collect();
            let lhs = ssm_scan_recurrent(&mix, &ssm).unwrap();
            let r1 = ssm_scan_recurrent(&u1, &ssm).unwrap();
            let r2 = ssm_scan_recurrent(&u2, &ssm).unwrap();
            let rhs: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| alpha * x + beta * y).collect();
            prop_assert!(close(&lhs, &rhs, 1e-5));
        }

        #[test]
        fn bounded_by_kernel_mass((a, b, c, dt) in stable_params(),
                                  u in prop::collection::vec(-1.0f64..1.0, 1..200)) {
            let ssm = SsmParams { a, b, c, delta: StepSize::Fixed(dt) }.discretize().unwrap();
            let k = ssm_conv_kernel(&ssm, u.len()).unwrap();
            let bound = u.iter().fold(0.0f64, |m, x| m.max(x.abs())) * k.iter().map(|x| x.abs()).sum::<f64>();
            let v = ssm_scan_recurrent(&u, &ssm).unwrap();
            prop_assert!(v.iter().all(|x| x.abs() <= bound + 1e-12));
        }

        #[test]
        fn causal_prefix((a, b, c, dt) in stable_params(),
                         u in prop::collection::vec(-1.0f64..1.0, 2..64), t in 0usize..64, bump in 0.1f64..5.0) {
            let t = t % u.len();
            let ssm = SsmParams { a, b, c, delta: StepSize::Fixed(dt) }.discretize().unwrap();
            let base = ssm_scan_recurrent(&u, &ssm).unwrap();
            let mut u2 = u.clone();
            u2[t] += bump;
            let moved = ssm_scan_recurrent(&u2, &ssm).unwrap();
            prop_assert_eq!(&base[..t], &moved[..t]);
        }
    }
}
