#![allow(dead_code)]

use nep::synth::{LinkSpec, PlantedSpec, TypeSpec};

/// Papers, authors and venues; venues publish papers of the next class.
pub fn small_spec(seed: u64) -> PlantedSpec {
    let link = |name: &str, source: &str, target: &str, dual: &str, per_source, shift| LinkSpec {
        name: name.into(),
        source: source.into(),
        target: target.into(),
        dual: dual.into(),
        per_source,
        shift,
    };
    PlantedSpec {
        object_types: vec![
            TypeSpec { name: "paper".into(), count: 120 },
            TypeSpec { name: "author".into(), count: 60 },
            TypeSpec { name: "venue".into(), count: 8 },
        ],
        targeted: "paper".into(),
        links: vec![
            link("cites", "paper", "paper", "cited_by", 1.0, 0),
            link("writes", "author", "paper", "written_by", 3.0, 0),
            link("publishes", "venue", "paper", "published_in", 10.0, 1),
        ],
        classes: 3,
        homophily: 0.8,
        labeled_fraction: 0.2,
        seed,
    }
}
