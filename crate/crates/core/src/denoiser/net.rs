use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::{ContextDenoiser, Denoiser};
use crate::error::{Error, Result};
use crate::precondition::{Preconditioner, SlotCoefficients};
use crate::rng::SimRng;

/// Shape of a preconditioned denoiser network.
///
/// The raw network sees one flat row per window:
/// `[c_in * x (window * dim) | c_noise (window) | context (context_dim)]`
/// and returns `window * dim` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    pub window: usize,
    pub dim: usize,
    /// Length of the conditioning vector (0 for the rolling model, `dim` for
    /// the next-step baseline).
    #[serde(default)]
    pub context_dim: usize,
    pub hidden: Vec<usize>,
    pub sigma_data: f64,
}

impl NetConfig {
    pub fn input_width(&self) -> usize {
        self.window * self.dim + self.window + self.context_dim
    }

    pub fn output_width(&self) -> usize {
        self.window * self.dim
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(&self.hidden);
        w.push(self.output_width());
        w
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::config("window", "must be at least 1"));
        }
        if self.dim == 0 {
            return Err(Error::config("dim", "must be at least 1"));
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::config("hidden", "needs at least one nonzero hidden width"));
        }
        if !(self.sigma_data > 0.0) {
            return Err(Error::config("sigma_data", "must be positive"));
        }
        Ok(())
    }
}

/// `D(x; sigma) = c_skip x + c_out F(c_in x, c_noise)` with `F` an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct PrecondNet {
    config: NetConfig,
    precond: Preconditioner,
    mlp: Mlp,
}

impl PrecondNet {
    pub fn new(config: NetConfig, rng: &mut SimRng) -> Result<Self> {
        config.validate()?;
        let mlp = Mlp::gaussian(&config.widths(), rng)?;
        let precond = Preconditioner::new(config.sigma_data)?;
        Ok(Self { config, precond, mlp })
    }

    pub fn from_params(config: NetConfig, params: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let mlp = Mlp::from_params(&config.widths(), params)?;
        let precond = Preconditioner::new(config.sigma_data)?;
        Ok(Self { config, precond, mlp })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn preconditioner(&self) -> &Preconditioner {
        &self.precond
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    pub fn params(&self) -> &[f64] {
        self.mlp.params()
    }

    fn check(&self, noisy: &ArrayView2<f64>, sigmas: &[f64], context: &ArrayView1<f64>) -> Result<()> {
        let c = &self.config;
        if noisy.dim() != (c.window, c.dim) || sigmas.len() != c.window {
            return Err(Error::Shape(format!(
                "network built for a {}x{} window, got {:?} with {} levels",
                c.window,
                c.dim,
                noisy.dim(),
                sigmas.len()
            )));
        }
        if context.len() != c.context_dim {
            return Err(Error::Shape(format!(
                "context of length {}, expected {}",
                context.len(),
                c.context_dim
            )));
        }
        Ok(())
    }

    /// Writes the raw-network input row for one window into `row`.
    pub fn fill_input(
        &self,
        mut row: ndarray::ArrayViewMut1<f64>,
        noisy: ArrayView2<f64>,
        coeffs: &SlotCoefficients,
        context: ArrayView1<f64>,
    ) {
        let c = &self.config;
        let wd = c.window * c.dim;
        for w in 0..c.window {
            for j in 0..c.dim {
                row[w * c.dim + j] = coeffs.c_in[w] * noisy[[w, j]];
            }
            row[wd + w] = coeffs.c_noise[w];
        }
        row.slice_mut(s![wd + c.window..]).assign(&context);
    }

    /// Assembles the batched raw-network input for a list of windows.
    pub fn batch_input(
        &self,
        noisy: &[Array2<f64>],
        coeffs: &[SlotCoefficients],
        contexts: &[Array1<f64>],
    ) -> Array2<f64> {
        let mut input = Array2::zeros((noisy.len(), self.config.input_width()));
        let empty = Array1::zeros(0);
        for (b, x) in noisy.iter().enumerate() {
            let ctx = contexts.get(b).unwrap_or(&empty);
            self.fill_input(input.row_mut(b), x.view(), &coeffs[b], ctx.view());
        }
        input
    }
}

impl ContextDenoiser for PrecondNet {
    fn context_dim(&self) -> usize {
        self.config.context_dim
    }

    fn denoise_with_context(
        &self,
        noisy: ArrayView2<f64>,
        sigmas: &[f64],
        context: ArrayView1<f64>,
    ) -> Result<Array2<f64>> {
        self.check(&noisy, sigmas, &context)?;
        let c = &self.config;
        self.precond.apply(noisy, sigmas, |scaled, c_noise| {
            let mut row = Array1::zeros(c.input_width());
            let wd = c.window * c.dim;
            for (k, v) in scaled.iter().enumerate() {
                row[k] = *v;
            }
            for (w, v) in c_noise.iter().enumerate() {
                row[wd + w] = *v;
            }
            row.slice_mut(s![wd + c.window..]).assign(&context);
            let out = self.mlp.forward_one(row.view())?;
            Ok(out.into_shape_with_order((c.window, c.dim)).unwrap())
        })
    }
}

impl Denoiser for PrecondNet {
    /// Unconditional use; only valid when `context_dim == 0`.
    fn denoise(&self, noisy: ArrayView2<f64>, sigmas: &[f64]) -> Result<Array2<f64>> {
        self.denoise_with_context(noisy, sigmas, Array1::zeros(0).view())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{member_rng, normal_matrix};
    use approx::assert_relative_eq;

    fn cfg(context_dim: usize) -> NetConfig {
        NetConfig {
            window: 3,
            dim: 2,
            context_dim,
            hidden: vec![16, 16],
            sigma_data: 1.0,
        }
    }

    #[test]
    fn batch_input_matches_single_path() {
        let mut rng = member_rng(4, 0);
        let net = PrecondNet::new(cfg(2), &mut rng).unwrap();
        let x = normal_matrix(3, 2, &mut rng);
        let sig = [0.1, 1.0, 10.0];
        let ctx = Array1::from(vec![0.5, -0.5]);
        let single = net.denoise_with_context(x.view(), &sig, ctx.view()).unwrap();

        let coeffs = net.preconditioner().coefficients(&sig).unwrap();
        let input = net.batch_input(&[x.clone()], &[coeffs.clone()], &[ctx]);
        let f = net.mlp().forward(input.view()).unwrap();
        for w in 0..3 {
            for j in 0..2 {
                let v = coeffs.c_skip[w] * x[[w, j]] + coeffs.c_out[w] * f[[0, w * 2 + j]];
                assert_relative_eq!(v, single[[w, j]], max_relative = 1e-14);
            }
        }
    }

    #[test]
    fn param_count_and_shape_errors() {
        let c = cfg(0);
        assert_eq!(c.input_width(), 9);
        assert_eq!(c.num_params(), 9 * 16 + 16 + 16 * 16 + 16 + 16 * 6 + 6);
        let net = PrecondNet::new(c, &mut member_rng(0, 0)).unwrap();
        assert_eq!(net.params().len(), net.config().num_params());
        assert!(net.denoise(Array2::zeros((2, 2)).view(), &[1.0, 1.0]).is_err());
        assert!(net.denoise(Array2::zeros((3, 2)).view(), &[1.0, 1.0]).is_err());
        assert!(PrecondNet::from_params(cfg(0), vec![0.0; 3]).is_err());
        let bad = NetConfig { hidden: vec![], ..cfg(0) };
        assert!(bad.validate().is_err());
    }
}
