//! Networks bundled with the crate.

use crate::netdata::{parse_edge_list, Network};

const MONKS: &str = include_str!("../data/monks.txt");
const KARATE: &str = include_str!("../data/karate.txt");

/// Sampson's monastery "like" network, 18 actors, cumulated over the three
/// survey periods. Directed, 88 ties.
pub fn monks() -> Network {
    parse_edge_list(MONKS, 18, true).expect("bundled monks data is valid")
}

/// Zachary's karate club, 34 actors, 78 undirected ties.
pub fn karate() -> Network {
    parse_edge_list(KARATE, 34, false).expect("bundled karate data is valid")
}

/// Actors (1-based) who sided with the instructor, actor 1, when the karate
/// club split. Everyone else followed the officer, actor 34.
pub const KARATE_INSTRUCTOR_FACTION: [usize; 17] =
    [1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 13, 14, 17, 18, 20, 22];

/// Looks up a bundled network by name.
pub fn by_name(name: &str) -> Option<Network> {
    match name {
        "monks" | "sampson" => Some(monks()),
        "karate" | "zachary" => Some(karate()),
        _ => None,
    }
}
