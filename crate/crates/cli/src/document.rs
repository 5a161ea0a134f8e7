//! JSON map documents.

use serde::{Deserialize, Serialize};

use atm::atm::ComposedMap;
use atm::basis::{FeatureExpansion, UnivariateFamily};
use atm::multiindex::{DownwardClosedSet, MultiIndex};
use atm::quadrature::QuadSettings;
use atm::rectifier::{MapComponent, Rectifier};
use atm::{Standardization, TransportModel, TriangularMap};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureRecord {
    pub alpha: Vec<u32>,
    pub coeff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentRecord {
    /// 1-based position of the variable this component transports.
    pub index: usize,
    pub family: String,
    pub g: String,
    pub features: Vec<FeatureRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StandardizationRecord {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureRecord {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_intervals: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageRecord {
    pub components: Vec<ComponentRecord>,
    pub standardization: StandardizationRecord,
}

/// Settings echoed into the document so a fit can be repeated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub seed: u64,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapDocument {
    pub version: u32,
    pub dimension: usize,
    pub conditional_split: usize,
    pub components: Vec<ComponentRecord>,
    pub standardization: StandardizationRecord,
    pub quadrature: QuadratureRecord,
    /// Present for maps fitted with a linear stage applied before `components`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub linear_stage: Option<StageRecord>,
    pub provenance: Provenance,
}

fn component_record(c: &MapComponent) -> ComponentRecord {
    let f = c.expansion();
    ComponentRecord {
        index: c.dim(),
        family: f.family().tag().to_string(),
        g: c.rectifier().tag().to_string(),
        features: f
            .terms()
            .map(|(alpha, coeff)| FeatureRecord {
                alpha: alpha.degrees().to_vec(),
                coeff,
            })
            .collect(),
    }
}

fn stage_record(map: &TriangularMap) -> StageRecord {
    let s = map.standardization();
    StageRecord {
        components: map.components().iter().map(component_record).collect(),
        standardization: StandardizationRecord {
            mean: s.mean.clone(),
            std: s.std.clone(),
        },
    }
}

fn build_component(rec: &ComponentRecord, quad: QuadSettings) -> CliResult<MapComponent> {
    let k = rec.index;
    let family: UnivariateFamily = rec.family.parse()?;
    let rectifier: Rectifier = rec.g.parse()?;
    let mut terms = Vec::with_capacity(rec.features.len());
    for feat in &rec.features {
        if feat.alpha.len() != k {
            return Err(CliError::Document(format!(
                "component {k}: multi-index {:?} has length {}, expected {k}",
                feat.alpha,
                feat.alpha.len()
            )));
        }
        terms.push((MultiIndex::new(feat.alpha.clone()), feat.coeff));
    }
    let set = DownwardClosedSet::from_members(k, terms.iter().map(|(a, _)| a.clone()))?;
    if set.len() != terms.len() {
        return Err(CliError::Document(format!("component {k}: repeated multi-index")));
    }
    let mut coeffs = vec![0.0; set.len()];
    for (alpha, c) in &terms {
        // Every alpha is a member, so the position exists.
        coeffs[set.position(alpha).unwrap_or_default()] = *c;
    }
    let f = FeatureExpansion::new(set, coeffs, family)?;
    Ok(MapComponent::new(f, rectifier, quad)?)
}

fn build_stage(
    rec: &StageRecord,
    dim: usize,
    split: usize,
    quad: QuadSettings,
) -> CliResult<TriangularMap> {
    for (i, c) in rec.components.iter().enumerate() {
        if c.index != split + i + 1 {
            return Err(CliError::Document(format!(
                "component {} listed where component {} was expected",
                c.index,
                split + i + 1
            )));
        }
    }
    let components = rec
        .components
        .iter()
        .map(|c| build_component(c, quad))
        .collect::<CliResult<Vec<_>>>()?;
    let stats = Standardization::from_parts(rec.standardization.mean.clone(), rec.standardization.std.clone())?;
    Ok(TriangularMap::new(dim, split, components, stats)?)
}

/// A loaded map: a single triangular map or a linear stage followed by an adaptive one.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadedMap {
    Single(TriangularMap),
    Composed(ComposedMap),
}

impl LoadedMap {
    pub fn model(&self) -> &dyn TransportModel {
        match self {
            LoadedMap::Single(m) => m,
            LoadedMap::Composed(m) => m,
        }
    }

    /// The stage holding the adaptive components.
    pub fn last_stage(&self) -> &TriangularMap {
        match self {
            LoadedMap::Single(m) => m,
            LoadedMap::Composed(m) => m.stages.last().expect("composed maps are never empty"),
        }
    }
}

impl MapDocument {
    pub fn from_map(map: &TriangularMap, quad: QuadSettings, provenance: Provenance) -> Self {
        let stage = stage_record(map);
        MapDocument {
            version: FORMAT_VERSION,
            dimension: map.dim(),
            conditional_split: map.conditional_split(),
            components: stage.components,
            standardization: stage.standardization,
            quadrature: QuadratureRecord {
                rel_tol: quad.rel_tol,
                abs_tol: quad.abs_tol,
                max_intervals: quad.max_intervals,
            },
            linear_stage: None,
            provenance,
        }
    }

    /// Documents a two-stage map; other stage counts are rejected.
    pub fn from_composed(map: &ComposedMap, quad: QuadSettings, provenance: Provenance) -> CliResult<Self> {
        let [linear, adaptive] = map.stages.as_slice() else {
            return Err(CliError::Document(format!(
                "only two-stage maps can be stored, got {} stages",
                map.stages.len()
            )));
        };
        let mut doc = MapDocument::from_map(adaptive, quad, provenance);
        doc.linear_stage = Some(stage_record(linear));
        Ok(doc)
    }

    pub fn to_json(&self) -> CliResult<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        let doc: MapDocument = serde_json::from_str(text)?;
        if doc.version != FORMAT_VERSION {
            return Err(CliError::Document(format!(
                "unsupported format version {} (expected {FORMAT_VERSION})",
                doc.version
            )));
        }
        Ok(doc)
    }

    pub fn quad(&self) -> QuadSettings {
        QuadSettings {
            rel_tol: self.quadrature.rel_tol,
            abs_tol: self.quadrature.abs_tol,
            max_intervals: self.quadrature.max_intervals,
        }
    }

    pub fn to_map(&self) -> CliResult<LoadedMap> {
        let quad = self.quad();
        let (d, split) = (self.dimension, self.conditional_split);
        let last = StageRecord {
            components: self.components.clone(),
            standardization: self.standardization.clone(),
        };
        let adaptive = build_stage(&last, d, split, quad)?;
        match &self.linear_stage {
            None => Ok(LoadedMap::Single(adaptive)),
            Some(first) => {
                let linear = build_stage(first, d, split, quad)?;
                Ok(LoadedMap::Composed(ComposedMap::new(vec![linear, adaptive])?))
            }
        }
    }
}
