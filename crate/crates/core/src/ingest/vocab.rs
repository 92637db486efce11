//! Fixed category vocabularies for POI and land-use features.

pub const POI_CATEGORIES: [&str; 15] = [
    "educational institutions",
    "commercial and industrial properties",
    "accommodation",
    "cultural and recreational venues",
    "healthcare and medical facilities",
    "entertainment venues",
    "places of worship",
    "food and drink establishments",
    "parking facilities",
    "transportation and transit facilities",
    "residential properties",
    "camping and outdoor recreation sites",
    "sports and recreation facilities",
    "financial services",
    "others",
];

pub const POI_OTHERS: usize = 14;

pub const LANDUSE_TYPES: [&str; 20] = [
    "grass",
    "park",
    "cemetery",
    "forest",
    "scrub",
    "meadow",
    "farmland",
    "industrial",
    "heath",
    "retail",
    "military",
    "nature reserve",
    "residential",
    "commercial",
    "orchard",
    "farmyard",
    "allotments",
    "recreation ground",
    "vineyard",
    "quarry",
];

pub const NUM_POI: usize = POI_CATEGORIES.len();
pub const NUM_LANDUSE: usize = LANDUSE_TYPES.len();

fn normalize(label: &str) -> String {
    label.trim().to_ascii_lowercase().replace(['_', '-'], " ")
}

/// Category index for a POI label; unknown labels map to "others".
pub fn poi_category(label: &str) -> usize {
    let l = normalize(label);
    POI_CATEGORIES
        .iter()
        .position(|c| *c == l)
        .unwrap_or(POI_OTHERS)
}

/// Land-use type index; unknown labels have no index.
pub fn landuse_type(label: &str) -> Option<usize> {
    let l = normalize(label);
    LANDUSE_TYPES.iter().position(|c| *c == l)
}
