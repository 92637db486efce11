//! Fixtures shared by the benchmarks.

use flexireg_core::encoders::ProviderConfig;
use flexireg_core::evalharness::encode_cells;
use flexireg_core::ingest::{build_feature_bundle, generate_synthetic_city, DescriptionConfig};
use flexireg_core::{CellInputs, FeatureBundle, HexGrid, SynthParams, SyntheticCity};

pub struct Fixture {
    pub city: SyntheticCity,
    pub grid: HexGrid,
    pub bundle: FeatureBundle,
}

/// The default synthetic city (about 450 cells, 60 regions).
pub fn default_city() -> Fixture {
    let city = generate_synthetic_city(0, &SynthParams::default()).expect("synthetic city");
    let grid = city.grid().expect("grid");
    let bundle =
        build_feature_bundle(&grid, &city.raw_inputs(), &DescriptionConfig::default(), 0).expect("feature bundle");
    Fixture { city, grid, bundle }
}

pub fn cell_inputs(f: &Fixture, top_k: Option<usize>) -> CellInputs {
    let enc = encode_cells(&f.bundle, &ProviderConfig::default(), &[]).expect("stub encodings");
    CellInputs::build(&f.bundle, enc.satellite, top_k).expect("cell inputs")
}
