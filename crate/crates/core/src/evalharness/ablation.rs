use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::pipeline::PipelineConfig;
use crate::aggregate::Weighting;
use crate::encoders::Modality;
use crate::error::{Error, Result};
use crate::gridlearner::View;
use crate::prompt::{PromptConfig, SvMode, TextMode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Full,
    /// Region embeddings go to ridge directly.
    NoPromptEnhancer,
    /// Raw text embeddings are concatenated instead of aligned.
    NoTextAlign,
    /// Mean street-view embeddings are concatenated instead of aligned.
    NoStreetViewAlign,
    /// Street-view features skip the contrastive head.
    NoEnvContext,
    /// Cells count with weight 1 during aggregation.
    NoWeightedSum,
    /// Text embeddings are token means instead of last-token states.
    NoLastToken,
    NoPoi,
    NoLanduse,
    NoNeighbor,
    NoSatellite,
    NoText,
    NoStreetView,
}

impl Variant {
    pub const ABLATIONS: [Variant; 12] = [
        Variant::NoPromptEnhancer,
        Variant::NoTextAlign,
        Variant::NoStreetViewAlign,
        Variant::NoEnvContext,
        Variant::NoWeightedSum,
        Variant::NoLastToken,
        Variant::NoPoi,
        Variant::NoLanduse,
        Variant::NoNeighbor,
        Variant::NoSatellite,
        Variant::NoText,
        Variant::NoStreetView,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoPromptEnhancer => "w/o-PE",
            Variant::NoTextAlign => "w/o-TAlign",
            Variant::NoStreetViewAlign => "w/o-SVAlign",
            Variant::NoEnvContext => "w/o-EC",
            Variant::NoWeightedSum => "w/o-WS",
            Variant::NoLastToken => "w/o-LT",
            Variant::NoPoi => "w/o-P",
            Variant::NoLanduse => "w/o-L",
            Variant::NoNeighbor => "w/o-N",
            Variant::NoSatellite => "w/o-SI",
            Variant::NoText => "w/o-T",
            Variant::NoStreetView => "w/o-SV",
        }
    }

    /// Concrete pipeline switches for this variant.
    pub fn settings(self, base: &PipelineConfig) -> VariantSettings {
        let mut s = VariantSettings {
            views: base.grid_learner.active_views(),
            weighting: Weighting::Overlap,
            text_modality: Modality::Text,
            contrastive: true,
            prompt: Some(base.prompt.clone()),
        };
        let prompt = |f: &dyn Fn(&mut PromptConfig), s: &mut VariantSettings| {
            if let Some(p) = s.prompt.as_mut() {
                f(p)
            }
        };
        let drop_view = |v: View, s: &mut VariantSettings| s.views.retain(|x| *x != v);
        match self {
            Variant::Full => {}
            Variant::NoPromptEnhancer => s.prompt = None,
            Variant::NoTextAlign => prompt(&|p| p.text = TextMode::Concat, &mut s),
            Variant::NoStreetViewAlign => prompt(&|p| p.streetview = SvMode::Mean, &mut s),
            Variant::NoEnvContext => s.contrastive = false,
            Variant::NoWeightedSum => s.weighting = Weighting::Unweighted,
            Variant::NoLastToken => s.text_modality = Modality::TextMean,
            Variant::NoPoi => drop_view(View::Poi, &mut s),
            Variant::NoLanduse => drop_view(View::Landuse, &mut s),
            Variant::NoNeighbor => drop_view(View::Neighbor, &mut s),
            Variant::NoSatellite => drop_view(View::Satellite, &mut s),
            Variant::NoText => prompt(&|p| p.text = TextMode::Off, &mut s),
            Variant::NoStreetView => prompt(&|p| p.streetview = SvMode::Off, &mut s),
        }
        s
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        std::iter::once(Variant::Full)
            .chain(Variant::ABLATIONS)
            .find(|v| v.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantSettings {
    pub views: Vec<View>,
    pub weighting: Weighting,
    pub text_modality: Modality,
    pub contrastive: bool,
    pub prompt: Option<PromptConfig>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_round_trip() {
        for v in Variant::ABLATIONS {
            assert_eq!(v.label().parse::<Variant>().unwrap(), v);
        }
        assert!("w/o-X".parse::<Variant>().is_err());
    }

    #[test]
    fn view_removal_keeps_others() {
        let s = Variant::NoPoi.settings(&PipelineConfig::default());
        assert_eq!(s.views, vec![View::Landuse, View::Neighbor, View::Satellite]);
        assert!(Variant::NoPromptEnhancer.settings(&PipelineConfig::default()).prompt.is_none());
    }
}
