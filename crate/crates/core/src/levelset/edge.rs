use super::edt::squared_distance_transform;
use super::EvolutionConfig;
use crate::error::{Error, Result};
use crate::geometry::Geometry;
use crate::scalar::Real;
use crate::volume::{gaussian_smooth, gradient, BinaryMask, Volume};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Dilation radius of the region used to estimate the automatic edge scale.
pub const AUTO_SCALE_DILATION_MM: f64 = 5.0;
/// Percentile of the smoothed gradient magnitude used as the automatic scale.
pub const AUTO_SCALE_PERCENTILE: f64 = 0.9;

/// Edge-stopping function `g = 1 / (1 + (|∇(G_σ * I)| / λ)^p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgePotential<T = f32> {
    g: Volume<T>,
    /// The resolved gradient normalizer λ.
    pub scale: f64,
}

impl<T: Real> EdgePotential<T> {
    /// Wraps precomputed values; they must lie in (0, 1].
    pub fn from_volume(g: Volume<T>, scale: f64) -> Result<Self> {
        if g.data().iter().any(|&v| !(v > T::zero() && v <= T::one())) {
            return Err(Error::InvalidConfig("edge potential values must lie in (0, 1]".into()));
        }
        Ok(EdgePotential { g, scale })
    }

    /// g ≡ 1: no edges anywhere.
    pub fn uniform(geometry: Geometry) -> Self {
        EdgePotential {
            g: Volume::filled(geometry, T::one()),
            scale: f64::INFINITY,
        }
    }

    pub fn geometry(&self) -> &Geometry {
        self.g.geometry()
    }

    pub fn values(&self) -> &[T] {
        self.g.data()
    }

    pub fn as_volume(&self) -> &Volume<T> {
        &self.g
    }
}

/// Gradient normalizer λ: explicit, or the 90th percentile of the smoothed
/// gradient magnitude around the initial mask.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum EdgeScale {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for EdgeScale {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            EdgeScale::Auto => s.serialize_str("auto"),
            EdgeScale::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for EdgeScale {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Number(f64),
            Word(String),
        }
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(EdgeScale::Fixed(v)),
            Repr::Word(w) if w == "auto" => Ok(EdgeScale::Auto),
            Repr::Word(w) => Err(serde::de::Error::custom(format!(
                "edge_scale must be a number or \"auto\", got {w:?}"
            ))),
        }
    }
}

/// Builds the edge potential of `patient`.
///
/// With `EdgeScale::Auto`, λ is the 90th percentile of the smoothed gradient
/// magnitude over `roi` dilated by 5 mm (the whole image when `roi` is `None`).
pub fn edge_potential<T: Real>(
    patient: &Volume<T>,
    cfg: &EvolutionConfig,
    roi: Option<&BinaryMask>,
) -> Result<EdgePotential<T>> {
    cfg.validate()?;
    let smoothed = gaussian_smooth(patient, cfg.sigma_mm)?;
    let grad = gradient(&smoothed)?.magnitude();
    let scale = match cfg.edge_scale {
        EdgeScale::Fixed(l) => l,
        EdgeScale::Auto => {
            let region = match roi {
                Some(m) => {
                    patient.geometry().ensure_same(m.geometry(), "patient", "initial mask")?;
                    let g = m.geometry();
                    let d2 = squared_distance_transform(m.data(), g.dims, g.spacing);
                    let r2 = AUTO_SCALE_DILATION_MM * AUTO_SCALE_DILATION_MM;
                    d2.iter().map(|&d| d <= r2).collect::<Vec<_>>()
                }
                None => vec![true; grad.data().len()],
            };
            let mut vals: Vec<f64> = grad
                .data()
                .iter()
                .zip(&region)
                .filter(|(_, &r)| r)
                .map(|(v, _)| v.as_f64())
                .collect();
            percentile(&mut vals, AUTO_SCALE_PERCENTILE)
        }
    };
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateEdgeScale(scale));
    }
    let p = cfg.edge_exponent;
    let data = grad
        .data()
        .iter()
        .map(|m| T::lit(1.0 / (1.0 + (m.as_f64() / scale).powf(p))))
        .collect();
    Ok(EdgePotential {
        g: Volume::new(patient.geometry().clone(), data)?,
        scale,
    })
}

/// Nearest-rank percentile; 0 for an empty sample.
fn percentile(vals: &mut [f64], q: f64) -> f64 {
    if vals.is_empty() {
        return 0.0;
    }
    vals.sort_by(f64::total_cmp);
    let rank = ((q * vals.len() as f64).ceil() as usize).clamp(1, vals.len());
    vals[rank - 1]
}
