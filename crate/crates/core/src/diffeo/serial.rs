//! Versioned JSON documents for diffeomorphism chains.
//!
//! One record per primitive with exact decimal parameters; the format is
//! append-only versioned via `format_version`. Derived evaluation caches
//! (bounding circles, radial spans) are rebuilt on load.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{AngularProfile, AnnulusRegion, PlanePoint};
use crate::rational::ReducedFraction;

use super::{DiffeoChain, EquivariantBlock, Primitive, RadialTwist};

pub const CHAIN_FORMAT_VERSION: u32 = 1;

/// On-disk form of one chain file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub format_version: u32,
    pub stage: u64,
    pub profile: AngularProfile,
    pub declared_support: Option<AnnulusRegion>,
    pub factors: Vec<PrimitiveDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PrimitiveDoc {
    Rotation {
        turns: ReducedFraction,
    },
    RadialTwist {
        center: [f64; 2],
        twist_angle: f64,
        band: [f64; 2],
        smoothness_order: u32,
    },
    EquivariantBlock {
        q: u64,
        sector_center: f64,
        sector_half_width: f64,
        base: Vec<PrimitiveDoc>,
    },
}

fn primitive_to_doc(p: &Primitive) -> PrimitiveDoc {
    match p {
        Primitive::Rotation { turns } => PrimitiveDoc::Rotation {
            turns: turns.clone(),
        },
        Primitive::Twist(t) => PrimitiveDoc::RadialTwist {
            center: [t.center.x, t.center.y],
            twist_angle: t.twist_angle,
            band: [t.band.0, t.band.1],
            smoothness_order: t.order,
        },
        Primitive::Block(b) => PrimitiveDoc::EquivariantBlock {
            q: b.q,
            sector_center: b.sector_center,
            sector_half_width: b.sector_half_width,
            base: b.base.factors.iter().map(primitive_to_doc).collect(),
        },
    }
}

fn doc_to_primitive(doc: &PrimitiveDoc) -> Result<Primitive> {
    Ok(match doc {
        PrimitiveDoc::Rotation { turns } => Primitive::Rotation {
            turns: turns.clone(),
        },
        PrimitiveDoc::RadialTwist {
            center,
            twist_angle,
            band,
            smoothness_order,
        } => Primitive::Twist(RadialTwist::new(
            PlanePoint::new(center[0], center[1]),
            *twist_angle,
            (band[0], band[1]),
            *smoothness_order,
        )?),
        PrimitiveDoc::EquivariantBlock {
            q,
            sector_center,
            sector_half_width,
            base,
        } => {
            let mut chain = DiffeoChain::from_factors(
                base.iter().map(doc_to_primitive).collect::<Result<_>>()?,
            );
            let bbox = chain.computed_bbox();
            chain.set_bbox(bbox);
            Primitive::Block(Box::new(EquivariantBlock::new(
                *q,
                *sector_center,
                *sector_half_width,
                chain,
            )?))
        }
    })
}

pub fn chain_to_file(chain: &DiffeoChain, stage: u64, profile: &AngularProfile) -> ChainFile {
    ChainFile {
        format_version: CHAIN_FORMAT_VERSION,
        stage,
        profile: *profile,
        declared_support: chain.declared_support,
        factors: chain.factors.iter().map(primitive_to_doc).collect(),
    }
}

pub fn chain_from_file(file: &ChainFile) -> Result<DiffeoChain> {
    if file.format_version != CHAIN_FORMAT_VERSION {
        return Err(CoreError::Domain(format!(
            "unsupported chain format_version {}",
            file.format_version
        )));
    }
    let mut chain = DiffeoChain::from_factors(
        file.factors
            .iter()
            .map(doc_to_primitive)
            .collect::<Result<_>>()?,
    );
    chain.declared_support = file.declared_support;
    Ok(chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffeo::Direction;
    use crate::diffeo::planner::{make_mover, PlanRegion, TwistStyle};

    #[test]
    fn chain_survives_a_json_round_trip() {
        let profile =
            AngularProfile::new(AnnulusRegion::new(0.1, 0.9).unwrap(), 0.05, 4).unwrap();
        let region = PlanRegion::whole(AnnulusRegion::new(0.1, 0.9).unwrap());
        let a = PlanePoint::new(0.3, 0.0);
        let b = PlanePoint::new(0.62, 0.11);
        let chain = make_mover(&a, &b, &region, &[], 0.02, &TwistStyle::default()).unwrap();

        let file = chain_to_file(&chain, 1, &profile);
        let text = serde_json::to_string(&file).unwrap();
        let parsed: ChainFile = serde_json::from_str(&text).unwrap();
        let restored = chain_from_file(&parsed).unwrap();

        for i in 0..200 {
            let p = PlanePoint::polar(0.15 + 0.003 * i as f64, 0.031 * i as f64);
            let q0 = chain.eval(&p, Direction::Forward, &profile);
            let q1 = restored.eval(&p, Direction::Forward, &profile);
            assert_eq!(q0, q1, "mismatch at sample {i}");
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let profile =
            AngularProfile::new(AnnulusRegion::new(0.1, 0.9).unwrap(), 0.05, 4).unwrap();
        let mut file = chain_to_file(&DiffeoChain::identity(), 0, &profile);
        file.format_version = 99;
        assert!(chain_from_file(&file).is_err());
    }
}
