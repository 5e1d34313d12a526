//! Bundled example maps.

use crate::map::{parse_opendrive, MapError, RoadNetwork};

pub const MAP_NAMES: [&str; 5] = [
    "straight_road",
    "curved_road",
    "cross_small",
    "tee_small",
    "mini_town",
];

/// OpenDRIVE source of a bundled map.
pub fn xodr(name: &str) -> Option<&'static str> {
    Some(match name {
        "straight_road" => include_str!("../fixtures/maps/straight_road.xodr"),
        "curved_road" => include_str!("../fixtures/maps/curved_road.xodr"),
        "cross_small" => include_str!("../fixtures/maps/cross_small.xodr"),
        "tee_small" => include_str!("../fixtures/maps/tee_small.xodr"),
        "mini_town" => include_str!("../fixtures/maps/mini_town.xodr"),
        _ => return None,
    })
}

pub fn network(name: &str) -> Result<RoadNetwork, MapError> {
    let text = xodr(name).ok_or_else(|| MapError::InvalidValue(format!("no bundled map `{name}`")))?;
    parse_opendrive(text)
}
