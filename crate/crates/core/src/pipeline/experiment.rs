use super::config::ProblemConfig;
use crate::error::{Error, Result};
use crate::forward::{
    add_noise, diffusion_operator, gaussian_blur_operator, heat_operator, radon_operator, sample_diffusion_init_scaled,
    sample_heat_source, sample_phantom, sample_star_inclusion, BlurOperator, DenseOperator, DiffusionOperator,
    LinearOperator, NoiseSpec, RadonOperator, StarShapeParams,
};
use crate::linalg::{svd, SvdFactorization};
use crate::regparam::{k_opt, lambda_opt, LogSearch};
use crate::rng::RngStream;
use crate::solvers::{
    difference_operator, rrgmres, tv_solve_split_bregman, DifferenceOperator, IterateHistory, SplitBregmanOptions,
    TikhonovProblem,
};

/// Forward model and solver for one experiment, shared by all samples.
pub enum Experiment {
    Heat {
        op: DenseOperator,
        svd: SvdFactorization,
    },
    Tomography {
        op: RadonOperator,
        diff: DifferenceOperator,
        sb: SplitBregmanOptions,
    },
    Deblur {
        op: BlurOperator,
        diff: DifferenceOperator,
        sb: SplitBregmanOptions,
        side: usize,
        gamma: (f64, f64),
    },
    Diffusion {
        op: DiffusionOperator,
        side: usize,
        k_max: usize,
        safety: f64,
        length_scale: f64,
    },
}

/// One simulated sample. `gamma` is NaN when the problem has no regularity
/// parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub x_true: Vec<f64>,
    pub b: Vec<f64>,
    pub noise: f64,
    pub gamma: f64,
}

/// Oracle label; fields that do not apply are NaN.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub lambda_opt: f64,
    pub k_opt: f64,
    /// `‖x̂ − x_true‖` at `λ_opt`, or the relative error at `k_opt`.
    pub objective: f64,
}

impl Experiment {
    pub fn build(problem: &ProblemConfig) -> Result<Self> {
        Ok(match *problem {
            ProblemConfig::Heat { n, kappa } => {
                let op = heat_operator(n, kappa)?;
                let svd = svd(op.matrix())?;
                Experiment::Heat { op, svd }
            }
            ProblemConfig::Tomography {
                side,
                n_angles,
                n_rays,
                split_bregman,
            } => Experiment::Tomography {
                op: radon_operator(side, n_angles, n_rays)?,
                diff: difference_operator(side, side)?,
                sb: split_bregman,
            },
            ProblemConfig::DeblurStar {
                side,
                blur_sigma,
                stencil,
                gamma_lo,
                gamma_hi,
                split_bregman,
            } => Experiment::Deblur {
                op: gaussian_blur_operator(side, side, blur_sigma, stencil)?,
                diff: difference_operator(side, side)?,
                sb: split_bregman,
                side,
                gamma: (gamma_lo, gamma_hi),
            },
            ProblemConfig::Diffusion {
                side,
                t_final,
                n_steps,
                k_max,
                dp_safety,
                init_length_scale,
            } => Experiment::Diffusion {
                op: diffusion_operator(side, t_final, n_steps)?,
                side,
                k_max,
                safety: dp_safety,
                length_scale: init_length_scale,
            },
        })
    }

    pub fn operator(&self) -> &dyn LinearOperator {
        match self {
            Experiment::Heat { op, .. } => op,
            Experiment::Tomography { op, .. } => op,
            Experiment::Deblur { op, .. } => op,
            Experiment::Diffusion { op, .. } => op,
        }
    }

    pub fn is_iterative(&self) -> bool {
        matches!(self, Experiment::Diffusion { .. })
    }

    /// Draws `x_true` from substream 0 and the noise from substream 1.
    pub fn draw(&self, stream: &RngStream, noise: &NoiseSpec) -> Result<Draw> {
        let mut xs = stream.substream(0);
        let mut gamma = f64::NAN;
        let x_true = match self {
            Experiment::Heat { op, .. } => sample_heat_source(&mut xs, op.cols()),
            Experiment::Tomography { op, .. } => sample_phantom(&mut xs, op.side())?.into_pixels(),
            Experiment::Deblur { side, gamma: (lo, hi), .. } => {
                gamma = xs.uniform(*lo, *hi);
                sample_star_inclusion(&mut xs, StarShapeParams::with_gamma(gamma), *side)?.0.into_pixels()
            }
            Experiment::Diffusion { side, length_scale, .. } => {
                sample_diffusion_init_scaled(&mut xs, *side, *length_scale).into_pixels()
            }
        };
        let clean = self.operator().apply(&x_true);
        let (b, value) = add_noise(&clean, noise, &mut stream.substream(1))?;
        Ok(Draw {
            x_true,
            b,
            noise: value,
            gamma,
        })
    }

    /// Regularized reconstruction with weight `λ` (Tikhonov or TV).
    pub fn reconstruct(&self, b: &[f64], lambda: f64) -> Result<Vec<f64>> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("regularization parameter must be positive, got {lambda}")));
        }
        match self {
            Experiment::Heat { svd, .. } => Ok(TikhonovProblem::new(svd, b)?.solve(lambda)),
            Experiment::Tomography { op, diff, sb } => tv_solve_split_bregman(op, diff, b, lambda, sb),
            Experiment::Deblur { op, diff, sb, .. } => tv_solve_split_bregman(op, diff, b, lambda, sb),
            Experiment::Diffusion { .. } => Err(Error::InvalidArgument("the diffusion problem has no λ".into())),
        }
    }

    /// RRGMRES iterates up to `k_max`, with errors against `x_true`.
    pub fn iterate_history(&self, b: &[f64], x_true: &[f64]) -> Result<IterateHistory> {
        match self {
            Experiment::Diffusion { op, k_max, .. } => rrgmres(op, b, *k_max, Some(x_true)),
            _ => Err(Error::InvalidArgument("only the diffusion problem is solved iteratively".into())),
        }
    }

    pub fn label(&self, draw: &Draw, search: &LogSearch) -> Result<Label> {
        if self.is_iterative() {
            let history = self.iterate_history(&draw.b, &draw.x_true)?;
            let r = k_opt(&history, &draw.x_true)?;
            return Ok(Label {
                lambda_opt: f64::NAN,
                k_opt: r.value,
                objective: r.objective,
            });
        }
        let r = match self {
            Experiment::Heat { svd, .. } => {
                let p = TikhonovProblem::new(svd, &draw.b)?;
                lambda_opt(|l| Ok(p.solve(l)), &draw.x_true, search)?
            }
            _ => lambda_opt(|l| self.reconstruct(&draw.b, l), &draw.x_true, search)?,
        };
        Ok(Label {
            lambda_opt: r.value,
            k_opt: f64::NAN,
            objective: r.objective,
        })
    }
}
