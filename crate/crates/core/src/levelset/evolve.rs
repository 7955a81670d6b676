use super::{central_derivatives, neighbors6, reinitialize, EdgePotential, EdgeScale, LevelSetField};
use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::volume::{axis_gradient, Volume};
use serde::{Deserialize, Serialize};

/// Consecutive quiet iterations required before declaring convergence.
pub const QUIET_ITERATIONS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    /// Balloon weight; positive inflates the brain region.
    pub alpha_balloon: f64,
    pub beta_curvature: f64,
    pub gamma_advection: f64,
    /// Pre-smoothing of the image before the edge potential, mm.
    pub sigma_mm: f64,
    pub edge_exponent: f64,
    pub edge_scale: EdgeScale,
    pub cfl: f64,
    pub max_iterations: usize,
    pub band_width_mm: f64,
    /// Reinitialize every this many iterations; 0 disables periodic reinit.
    pub reinit_interval: usize,
    /// Sign-flip fraction, relative to the number of interface voxels, below
    /// which an iteration is quiet.
    pub convergence_fraction: f64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        EvolutionConfig {
            alpha_balloon: 0.2,
            beta_curvature: 0.5,
            gamma_advection: 2.0,
            sigma_mm: 1.0,
            edge_exponent: 2.0,
            edge_scale: EdgeScale::Auto,
            cfl: 0.5,
            max_iterations: 300,
            band_width_mm: 6.0,
            reinit_interval: 25,
            convergence_fraction: 5e-4,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !self.alpha_balloon.is_finite() {
            return bad(format!("alpha_balloon must be finite, got {}", self.alpha_balloon));
        }
        if !(self.beta_curvature >= 0.0) || !self.beta_curvature.is_finite() {
            return bad(format!("beta_curvature must be >= 0, got {}", self.beta_curvature));
        }
        if !(self.gamma_advection >= 0.0) || !self.gamma_advection.is_finite() {
            return bad(format!("gamma_advection must be >= 0, got {}", self.gamma_advection));
        }
        if !(self.sigma_mm > 0.0) || !self.sigma_mm.is_finite() {
            return bad(format!("sigma_mm must be > 0, got {}", self.sigma_mm));
        }
        if !(self.edge_exponent >= 1.0) || !self.edge_exponent.is_finite() {
            return bad(format!("edge_exponent must be >= 1, got {}", self.edge_exponent));
        }
        if let EdgeScale::Fixed(l) = self.edge_scale {
            if !(l > 0.0) || !l.is_finite() {
                return bad(format!("edge_scale must be > 0 or \"auto\", got {l}"));
            }
        }
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return bad(format!("cfl must be in (0, 1], got {}", self.cfl));
        }
        if !(self.band_width_mm > 0.0) || !self.band_width_mm.is_finite() {
            return bad(format!("band_width_mm must be > 0, got {}", self.band_width_mm));
        }
        if !(self.convergence_fraction >= 0.0) || !self.convergence_fraction.is_finite() {
            return bad(format!(
                "convergence_fraction must be >= 0, got {}",
                self.convergence_fraction
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvolutionResult<T = f32> {
    pub phi: LevelSetField<T>,
    pub iterations_used: usize,
    pub converged: bool,
    /// Sign flips per interface voxel, per iteration.
    pub sign_change_history: Vec<f64>,
    /// Evolution time reached (sum of time steps).
    pub elapsed_time: f64,
}

/// Per-iteration observer: iteration index, accumulated time, current field.
pub type Observer<'a, T> = dyn FnMut(usize, f64, &LevelSetField<T>) + 'a;

/// Explicit geodesic active contour evolution of `phi0`.
///
/// `∂φ/∂t = −α g |∇φ|⁺ + β g κ |∇φ| + γ ∇g·∇φ`, with Godunov upwinding for the
/// balloon term, central differences for curvature and per-component upwinding
/// for advection. Only voxels with `|φ| <= band_width_mm` move; voxels on the
/// outer faces of the grid never move.
pub fn evolve<T: Real>(
    phi0: &LevelSetField<T>,
    g: &EdgePotential<T>,
    cfg: &EvolutionConfig,
) -> Result<EvolutionResult<T>> {
    evolve_observed(phi0, g, cfg, &mut |_, _, _| {})
}

/// [`evolve`] with a callback after every iteration (before any
/// reinitialization that iteration triggers).
pub fn evolve_observed<T: Real>(
    phi0: &LevelSetField<T>,
    g: &EdgePotential<T>,
    cfg: &EvolutionConfig,
    observer: &mut Observer<'_, T>,
) -> Result<EvolutionResult<T>> {
    cfg.validate()?;
    let geom = phi0.geometry().clone();
    geom.ensure_same(g.geometry(), "level set", "edge potential")?;
    let n = geom.len();
    let h_min = geom.min_spacing();
    let h = geom.spacing;
    let strides = [1, geom.dims[0], geom.dims[0] * geom.dims[1]];

    let gv: Vec<f64> = g.values().iter().map(|v| v.as_f64()).collect();
    let bad = phi0.values().iter().map(|v| v.as_f64()).zip(&gv).position(|(p, &e)| !p.is_finite() || !e.is_finite());
    if let Some(i) = bad {
        return Err(Error::NonFinite { index: geom.coords(i) });
    }
    let grad_g: [Vec<f64>; 3] = if geom.dims.iter().all(|&d| d >= 2) {
        axis_gradient(g.as_volume())?.map(|c| c.iter().map(|v| v.as_f64()).collect())
    } else {
        [vec![0.0; n], vec![0.0; n], vec![0.0; n]]
    };
    let (alpha, beta, gamma) = (cfg.alpha_balloon, cfg.beta_curvature, cfg.gamma_advection);

    let mut phi: Vec<T> = phi0.values().to_vec();
    let mut band: Vec<usize> = Vec::new();
    let mut rates: Vec<f64> = Vec::new();
    let mut history = Vec::new();
    let mut quiet = 0usize;
    let mut converged = false;
    let mut iterations = 0usize;
    let mut time = 0.0;

    for iter in 0..cfg.max_iterations {
        band.clear();
        band.extend((0..n).filter(|&i| {
            phi[i].as_f64().abs() <= cfg.band_width_mm && !geom.is_face(geom.coords(i))
        }));
        if band.is_empty() {
            converged = true;
            break;
        }

        rates.clear();
        let mut speed_bound = 0.0f64;
        let mut max_rate = 0.0f64;
        for &idx in &band {
            let p0 = phi[idx].as_f64();
            let gi = gv[idx];
            let mut minus = [0.0; 3];
            let mut plus = [0.0; 3];
            for a in 0..3 {
                minus[a] = (p0 - phi[idx - strides[a]].as_f64()) / h[a];
                plus[a] = (phi[idx + strides[a]].as_f64() - p0) / h[a];
            }

            let mut rate = 0.0;
            let speed = alpha * gi;
            if speed != 0.0 {
                let mut sq = 0.0;
                for a in 0..3 {
                    let (m, p) = if speed > 0.0 {
                        (minus[a].max(0.0), plus[a].min(0.0))
                    } else {
                        (minus[a].min(0.0), plus[a].max(0.0))
                    };
                    sq += m * m + p * p;
                }
                rate -= speed * sq.sqrt();
            }
            if beta != 0.0 {
                let d = central_derivatives(&phi, &geom, idx);
                rate += beta * gi * d.curvature() * d.grad_norm();
            }
            let mut adv_speed = 0.0;
            if gamma != 0.0 {
                for a in 0..3 {
                    let ga = grad_g[a][idx];
                    let dphi = if ga > 0.0 { plus[a] } else { minus[a] };
                    rate += gamma * ga * dphi;
                    adv_speed += ga.abs();
                }
            }
            speed_bound = speed_bound
                .max(speed.abs() + gamma * adv_speed + 6.0 * beta * gi / h_min);
            max_rate = max_rate.max(rate.abs());
            rates.push(rate);
        }

        let denom = speed_bound.max(max_rate);
        if !(denom > 0.0) && rates.iter().all(|r| r.is_finite()) {
            converged = true;
            break;
        }
        if let Some(k) = rates.iter().position(|r| !r.is_finite()) {
            return Err(Error::NonFinite {
                index: geom.coords(band[k]),
            });
        }
        let dt = cfg.cfl * h_min / denom;

        let mut flips = 0usize;
        for (&idx, &rate) in band.iter().zip(&rates) {
            let old = phi[idx];
            let new = T::lit(old.as_f64() + dt * rate);
            if !new.is_finite() {
                return Err(Error::NonFinite {
                    index: geom.coords(idx),
                });
            }
            debug_assert!((new - old).as_f64().abs() <= h_min * (1.0 + 1e-9));
            if (old <= T::zero()) != (new <= T::zero()) {
                flips += 1;
            }
            phi[idx] = new;
        }
        time += dt;
        iterations = iter + 1;
        let interface = band
            .iter()
            .filter(|&&i| {
                let inside = phi[i] <= T::zero();
                neighbors6(&geom, i).any(|j| (phi[j] <= T::zero()) != inside)
            })
            .count();
        let fraction = flips as f64 / interface.max(1) as f64;
        history.push(fraction);

        let field = LevelSetField::new(Volume::new(geom.clone(), std::mem::take(&mut phi))?);
        observer(iter, time, &field);
        phi = field.into_volume().into_data();

        if fraction < cfg.convergence_fraction {
            quiet += 1;
        } else {
            quiet = 0;
        }
        if quiet >= QUIET_ITERATIONS {
            converged = true;
            break;
        }
        if cfg.reinit_interval > 0 && iterations.is_multiple_of(cfg.reinit_interval) && iterations < cfg.max_iterations {
            let field = LevelSetField::new(Volume::new(geom.clone(), phi)?);
            phi = reinitialize(&field)?.into_volume().into_data();
        }
    }

    let field = LevelSetField::new(Volume::new(geom, phi)?);
    Ok(EvolutionResult {
        phi: reinitialize(&field)?,
        iterations_used: iterations,
        converged,
        sign_change_history: history,
        elapsed_time: time,
    })
}
