use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::densities::{discretize, DistributionSpec, Grid1D, STUDY_POINTS};
use crate::error::{Error, Result};
use crate::varopt::{optimize, ClassDensities, LossParams, OptimizeOutput, OptimizerConfig};

/// The quantity varied by a sweep: `alpha`, `beta`, `id.<param>` or `ood.<param>`,
/// where `<param>` is a JSON field name of the distribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Knob {
    Alpha,
    Beta,
    Id(String),
    Ood(String),
}

impl FromStr for Knob {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alpha" => Ok(Knob::Alpha),
            "beta" => Ok(Knob::Beta),
            _ => match s.split_once('.') {
                Some(("id", p)) if !p.is_empty() => Ok(Knob::Id(p.to_string())),
                Some(("ood", p)) if !p.is_empty() => Ok(Knob::Ood(p.to_string())),
                _ => Err(Error::InvalidParameter(format!(
                    "unknown knob `{s}`; expected alpha, beta, id.<param> or ood.<param>"
                ))),
            },
        }
    }
}

impl TryFrom<String> for Knob {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Knob> for String {
    fn from(k: Knob) -> String {
        k.to_string()
    }
}

impl fmt::Display for Knob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Knob::Alpha => f.write_str("alpha"),
            Knob::Beta => f.write_str("beta"),
            Knob::Id(p) => write!(f, "id.{p}"),
            Knob::Ood(p) => write!(f, "ood.{p}"),
        }
    }
}

fn study_points() -> usize {
    STUDY_POINTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub knob: Knob,
    pub values: Vec<f64>,
    pub params: LossParams,
    pub id: DistributionSpec,
    pub ood: DistributionSpec,
    #[serde(default = "study_points")]
    pub grid_points: usize,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(Error::Empty("sweep values"));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("sweep value {v} is not finite")));
        }
        self.id.validate()?;
        self.ood.validate()?;
        self.optimizer.validate()
    }

    /// Loss parameters and distributions at one knob value.
    pub fn point(&self, value: f64) -> Result<(LossParams, DistributionSpec, DistributionSpec)> {
        let (mut params, mut id, mut ood) = (self.params, self.id, self.ood);
        match &self.knob {
            Knob::Alpha => params.alpha = value,
            Knob::Beta => params.beta = value,
            Knob::Id(p) => id = id.with_param(p, value)?,
            Knob::Ood(p) => ood = ood.with_param(p, value)?,
        }
        params.validate()?;
        Ok((params, id, ood))
    }
}

#[derive(Debug)]
pub struct SweepPoint {
    pub value: f64,
    pub outcome: Result<OptimizeOutput>,
}

fn run_point(spec: &SweepSpec, value: f64) -> Result<OptimizeOutput> {
    let (params, id, ood) = spec.point(value)?;
    let grid = Grid1D::study(&[id, ood], spec.grid_points)?;
    let p0 = discretize(&id, &grid)?;
    let p1 = discretize(&ood, &grid)?;
    optimize(ClassDensities::new(&p0, &p1)?, &params, &spec.optimizer)
}

/// Optimizes once per knob value with identical settings. A failing point is
/// recorded in its [`SweepPoint`] and the sweep moves on.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepPoint>> {
    spec.validate()?;
    Ok(spec.values.iter().map(|&value| SweepPoint { value, outcome: run_point(spec, value) }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SweepSpec {
        SweepSpec {
            knob: Knob::Alpha,
            values: vec![1.0],
            params: LossParams::new(1.0, 10.0, 0.5).unwrap(),
            id: DistributionSpec::gaussian(-0.5, 0.5),
            ood: DistributionSpec::gaussian(0.5, 0.5),
            grid_points: 41,
            optimizer: OptimizerConfig { iterations: 20, inner_points: 21, ..OptimizerConfig::default() },
        }
    }

    #[test]
    fn knob_parsing() {
        assert_eq!("alpha".parse::<Knob>().unwrap(), Knob::Alpha);
        assert_eq!("ood.scale".parse::<Knob>().unwrap(), Knob::Ood("scale".into()));
        assert!("gamma".parse::<Knob>().is_err());
        assert!("ood.".parse::<Knob>().is_err());
        let s = serde_json::to_string(&Knob::Id("std".into())).unwrap();
        assert_eq!(s, "\"id.std\"");
    }

    #[test]
    fn single_value_matches_direct_optimize() {
        let spec = small();
        let pts = run_sweep(&spec).unwrap();
        let a = pts[0].outcome.as_ref().unwrap();
        let b = run_point(&spec, 1.0).unwrap();
        assert_eq!(a.feature, b.feature);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn bad_point_does_not_stop_sweep() {
        let spec = SweepSpec { knob: Knob::Ood("std".into()), values: vec![-1.0, 0.5], ..small() };
        let pts = run_sweep(&spec).unwrap();
        assert!(pts[0].outcome.is_err());
        assert!(pts[1].outcome.is_ok());
    }

    #[test]
    fn empty_sweep_is_rejected() {
        assert!(run_sweep(&SweepSpec { values: vec![], ..small() }).is_err());
    }

    #[test]
    fn json_shape() {
        let json = r#"{"knob":"beta","values":[5,10],"params":{"alpha":3,"beta":10},
            "id":{"kind":"gaussian","mean":0,"std":0.5},"ood":{"kind":"laplace","loc":0,"scale":1}}"#;
        let s: SweepSpec = serde_json::from_str(json).unwrap();
        assert_eq!(s.knob, Knob::Beta);
        assert_eq!(s.grid_points, STUDY_POINTS);
        assert_eq!(s.params.p1, 0.5);
    }
}
