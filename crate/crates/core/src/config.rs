//! JSON configuration formats.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::certifier::LoopModel;
use crate::error::{dim_err, invalid, Result};
use crate::gradient_bounds::{GradientBoundSet, SignClass};
use crate::iqc_blocks::{combine, l2_gain_iqc, replicate, sector_iqc, zames_falb_iqc, IqcBlock};
use crate::system_model::{nominal_controller, LtiSystem, NominalMethod, NonlinearBlock, ResidualChannel, ResidualKind};

/// Serde adapter writing a matrix as a list of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows: Vec<Vec<f64>> = Vec::deserialize(d)?;
        to_matrix(&rows).map_err(D::Error::custom)
    }

    /// Converts row lists to a matrix, rejecting ragged input.
    pub fn to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let nr = rows.len();
        let nc = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != nc) {
            return Err("matrix rows have different lengths".into());
        }
        Ok(DMatrix::from_fn(nr, nc, |i, j| rows[i][j]))
    }
}

/// Serde adapter for an optional row-list matrix.
pub mod opt_rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref()
            .map(|m| m.row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>())
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        let rows: Option<Vec<Vec<f64>>> = Option::deserialize(d)?;
        rows.map(|r| super::rows::to_matrix(&r).map_err(D::Error::custom)).transpose()
    }
}

/// One residual channel of a plant config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub argument: Vec<f64>,
    pub input: Vec<f64>,
}

/// A group of residual channels sharing a kind and validity domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearBlockConfig {
    pub kind: ResidualKind,
    pub channels: Vec<ChannelConfig>,
    pub domain: f64,
}

/// IQC family of a filter config.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IqcKind {
    Sector,
    L2,
    ZamesFalb,
}

/// Parameters of an IQC config; slopes default to the channel's exact
/// slope sector.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IqcParams {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda0: Option<f64>,
    pub pole: Option<f64>,
}

/// `{"kind": …, "channels": […], "params": {…}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IqcConfig {
    pub kind: IqcKind,
    pub channels: Vec<usize>,
    #[serde(default)]
    pub params: IqcParams,
}

/// Plant file: `A`, `B`, optional `C`, residual blocks, optional nominal
/// feedback and IQC filters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    #[serde(rename = "A", with = "rows")]
    pub a: DMatrix<f64>,
    #[serde(rename = "B", with = "rows")]
    pub b: DMatrix<f64>,
    #[serde(rename = "C", default, with = "opt_rows", skip_serializing_if = "Option::is_none")]
    pub c: Option<DMatrix<f64>>,
    #[serde(default)]
    pub nonlinear_blocks: Vec<NonlinearBlockConfig>,
    /// Nominal feedback folded into `A` before certification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<NominalMethod>,
    /// Filters for the residual channels; defaults to sector plus first-order
    /// Zames–Falb (pole 1) on every channel.
    #[serde(default)]
    pub iqc: Vec<IqcConfig>,
}

impl PlantConfig {
    /// The (nominally closed-loop) LTI part.
    pub fn plant(&self) -> Result<LtiSystem> {
        let open = LtiSystem::new(self.a.clone(), self.b.clone(), self.c.clone())?;
        match &self.nominal {
            Some(m) => {
                let k = nominal_controller(&open, m)?;
                open.with_feedback(&k)
            }
            None => Ok(open),
        }
    }

    pub fn residuals(&self) -> Result<NonlinearBlock> {
        let n_s = self.a.nrows();
        let channels = self
            .nonlinear_blocks
            .iter()
            .flat_map(|blk| {
                blk.channels.iter().map(move |ch| ResidualChannel {
                    kind: blk.kind,
                    argument: ch.argument.clone(),
                    input: ch.input.clone(),
                    domain: blk.domain,
                })
            })
            .collect();
        NonlinearBlock::new(n_s, channels)
    }

    /// IQC filter covering all residual channels.
    pub fn filter(&self, residuals: &NonlinearBlock) -> Result<IqcBlock> {
        let sectors = residuals.slope_sectors();
        let configs = if self.iqc.is_empty() {
            let all: Vec<usize> = (0..residuals.n_v()).collect();
            vec![
                IqcConfig {
                    kind: IqcKind::Sector,
                    channels: all.clone(),
                    params: IqcParams::default(),
                },
                IqcConfig {
                    kind: IqcKind::ZamesFalb,
                    channels: all,
                    params: IqcParams {
                        pole: Some(1.0),
                        ..Default::default()
                    },
                },
            ]
        } else {
            self.iqc.clone()
        };
        let mut blocks = Vec::new();
        for cfg in &configs {
            for &ch in &cfg.channels {
                let &(lo, hi) = sectors
                    .get(ch)
                    .ok_or_else(|| dim_err(format!("IQC references missing channel {ch}")))?;
                let p = &cfg.params;
                let block = match cfg.kind {
                    IqcKind::Sector => sector_iqc(p.alpha.unwrap_or(lo), p.beta.unwrap_or(hi))?,
                    IqcKind::ZamesFalb => zames_falb_iqc(
                        p.alpha.unwrap_or(lo),
                        p.beta.unwrap_or(hi),
                        p.pole.unwrap_or(f64::INFINITY),
                    )?,
                    IqcKind::L2 => {
                        let g = p.gamma.unwrap_or(lo.abs().max(hi.abs()));
                        l2_gain_iqc(g, 1, 1, p.lambda0.unwrap_or(1.0))?
                    }
                };
                blocks.push(replicate(&block, &[ch])?);
            }
        }
        combine(&blocks, &vec![1.0; blocks.len()])
    }

    /// Loop model for certification.
    pub fn loop_model(&self) -> Result<LoopModel> {
        let plant = self.plant()?;
        let residuals = self.residuals()?;
        if residuals.n_v() == 0 {
            return LoopModel::lti(plant);
        }
        let filter = self.filter(&residuals)?;
        LoopModel::nonlinear(plant, residuals, filter)
    }
}

/// One-sided entry override of a pattern bounds config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OneSided {
    pub i: usize,
    pub j: usize,
    pub sign: SignClass,
    pub margin: f64,
}

/// Pattern form of a bounds file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternBounds {
    /// `sparsity[i][j] = true` where agent `i` observes `j`; all true if absent.
    #[serde(default)]
    pub sparsity: Option<Vec<Vec<bool>>>,
    pub lipschitz: f64,
    #[serde(default)]
    pub one_sided: Vec<OneSided>,
}

/// Dense form of a bounds file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseBounds {
    pub xi_lower: Vec<Vec<f64>>,
    pub xi_upper: Vec<Vec<f64>>,
}

/// A bounds file: dense matrices or a pattern description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundsConfig {
    Dense(DenseBounds),
    Pattern(PatternBounds),
}

impl BoundsConfig {
    pub fn resolve(&self, n_a: usize, n_s: usize) -> Result<GradientBoundSet> {
        let b = match self {
            BoundsConfig::Dense(d) => GradientBoundSet::new(
                rows::to_matrix(&d.xi_lower).map_err(invalid)?,
                rows::to_matrix(&d.xi_upper).map_err(invalid)?,
            )?,
            BoundsConfig::Pattern(p) => {
                let l = p.lipschitz;
                let mask = p.sparsity.clone().unwrap_or_else(|| vec![vec![true; n_s]; n_a]);
                let mut b = GradientBoundSet::masked(&mask, n_s, l)?;
                for o in &p.one_sided {
                    if o.i >= n_a || o.j >= n_s {
                        return Err(dim_err(format!("one-sided entry ({}, {}) out of range", o.i, o.j)));
                    }
                    if !(0.0..1.0).contains(&o.margin) {
                        return Err(invalid("one-sided margin must lie in [0, 1)"));
                    }
                    let (lo, hi) = match o.sign {
                        SignClass::Positive => (-o.margin * l, l),
                        SignClass::Negative => (-l, o.margin * l),
                        SignClass::Mixed => (-l, l),
                        SignClass::Zero => (0.0, 0.0),
                    };
                    b.xi_lower[(o.i, o.j)] = lo;
                    b.xi_upper[(o.i, o.j)] = hi;
                }
                b
            }
        };
        if b.xi_lower.shape() != (n_a, n_s) {
            return Err(dim_err(format!("bounds must be {n_a}×{n_s}")));
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plant_config_rejects_unknown_keys() {
        let ok = r#"{"A": [[-1.0]], "B": [[1.0]]}"#;
        assert!(serde_json::from_str::<PlantConfig>(ok).is_ok());
        let bad = r#"{"A": [[-1.0]], "B": [[1.0]], "extra": 1}"#;
        assert!(serde_json::from_str::<PlantConfig>(bad).is_err());
    }

    #[test]
    fn pattern_bounds_apply_one_sided_entries() {
        let cfg: BoundsConfig = serde_json::from_str(
            r#"{"sparsity": [[true, false]], "lipschitz": 2.0,
                "one_sided": [{"i": 0, "j": 0, "sign": "+", "margin": 0.1}]}"#,
        )
        .unwrap();
        let b = cfg.resolve(1, 2).unwrap();
        assert_eq!(b.xi_lower[(0, 0)], -0.2);
        assert_eq!(b.xi_upper[(0, 0)], 2.0);
        assert!(b.is_zero_entry(0, 1));
    }
}
