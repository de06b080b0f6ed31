use crate::error::{Error, Result};

/// Tolerance on `sigma_w_sq + sigma_u_sq + sigma_b_sq = 1` for the DEQ-NTK initialization.
pub const DEQ_INIT_TOL: f64 = 1e-12;

/// Elementwise nonlinearity of the network whose kernel is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Activation {
    /// `sqrt(2) * max(0, x)`, scaled so that `E[σ(u)^2] = 1` for `u ~ N(0, 1)`.
    #[default]
    NormalizedRelu,
    /// Identity; `E[σ(u)σ(v)] = E[uv]` and `σ' = 1`.
    Linear,
}

/// Variance hyper-parameters of the weight-tied network with input injection.
///
/// Weights are `N(0, 1)` and the variances enter as scalings at the use sites:
/// `sigma_w_sq` for the recurrent matrix, `sigma_u_sq` for the injection,
/// `sigma_b_sq` for the bias and `sigma_v_sq` for the readout.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParams {
    pub sigma_w_sq: f64,
    pub sigma_u_sq: f64,
    pub sigma_b_sq: f64,
    pub sigma_v_sq: f64,
    pub activation: Activation,
}

impl KernelParams {
    /// Validated constructor with the normalized-ReLU activation.
    pub fn new(sigma_w_sq: f64, sigma_u_sq: f64, sigma_b_sq: f64, sigma_v_sq: f64) -> Result<Self> {
        let params = Self { sigma_w_sq, sigma_u_sq, sigma_b_sq, sigma_v_sq, activation: Activation::NormalizedRelu };
        params.validate()?;
        Ok(params)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Copy of these parameters with the identity activation.
    pub fn linear(self) -> Self {
        self.with_activation(Activation::Linear)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_w_sq, self.sigma_u_sq, self.sigma_b_sq, self.sigma_v_sq];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParams("variances must be finite"));
        }
        if all.iter().any(|&v| v < 0.0) {
            return Err(Error::InvalidParams("variances must be non-negative"));
        }
        if self.sigma_v_sq <= 0.0 {
            return Err(Error::InvalidParams("sigma_v_sq must be positive"));
        }
        Ok(())
    }

    /// `sigma_w_sq + sigma_u_sq + sigma_b_sq == 1`: unit-norm inputs keep unit
    /// variance at every depth.
    pub fn is_deq_init(&self) -> bool {
        libm::fabs(self.sigma_w_sq + self.sigma_u_sq + self.sigma_b_sq - 1.0) <= DEQ_INIT_TOL
    }

    /// Fixed-point computations need the covariance map to be a contraction.
    pub fn require_contractive(&self) -> Result<()> {
        self.validate()?;
        if self.sigma_w_sq >= 1.0 {
            return Err(Error::NotContractive(self.sigma_w_sq));
        }
        if self.sigma_u_sq + self.sigma_b_sq <= 0.0 {
            return Err(Error::InvalidParams("sigma_u_sq + sigma_b_sq must be positive for a non-trivial fixed point"));
        }
        Ok(())
    }

    /// Next-layer variance of a unit-norm input given the current one.
    #[inline]
    pub fn next_variance(&self, variance: f64) -> f64 {
        // E[σ(u)^2] = Var(u) for both activations.
        self.sigma_w_sq * variance + self.sigma_u_sq + self.sigma_b_sq
    }

    /// Limit of [`next_variance`](Self::next_variance) iterated from 1: `(σ_U² + σ_b²) / (1 - σ_W²)`.
    pub fn fixed_variance(&self) -> f64 {
        (self.sigma_u_sq + self.sigma_b_sq) / (1.0 - self.sigma_w_sq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deq_init_flag() {
        assert!(KernelParams::new(0.5, 0.5, 0.0, 1.0).unwrap().is_deq_init());
        assert!(KernelParams::new(0.25, 0.25, 0.5, 2.0).unwrap().is_deq_init());
        assert!(!KernelParams::new(0.6, 0.0, 0.3, 1.0).unwrap().is_deq_init());
    }

    #[test]
    fn rejects_bad_variances() {
        assert!(KernelParams::new(-0.1, 0.5, 0.0, 1.0).is_err());
        assert!(KernelParams::new(0.5, 0.5, 0.0, 0.0).is_err());
        assert!(KernelParams::new(f64::NAN, 0.5, 0.0, 1.0).is_err());
    }

    #[test]
    fn contractivity_gate() {
        let p = KernelParams::new(1.0, 0.5, 0.0, 1.0).unwrap();
        assert_eq!(p.require_contractive(), Err(Error::NotContractive(1.0)));
        let p = KernelParams::new(0.5, 0.0, 0.0, 1.0).unwrap();
        assert!(p.require_contractive().is_err());
    }

    #[test]
    fn fixed_variance_is_one_under_deq_init() {
        let p = KernelParams::new(0.6, 0.3, 0.1, 1.0).unwrap();
        assert!((p.fixed_variance() - 1.0).abs() < 1e-15);
        assert!((p.next_variance(1.0) - 1.0).abs() < 1e-15);
    }
}
