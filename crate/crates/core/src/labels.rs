//! Default action label registry for the 30-cluster vocabulary.

use std::collections::BTreeSet;

use crate::types::{ActionId, DEFAULT_ACTION_COUNT};

pub const DEFAULT_LABELS: [&str; DEFAULT_ACTION_COUNT] = [
    "Advance [large, chase down]",
    "Off the line [massive advance]",
    "Off the line [prep steps]",
    "Retreat [medium]",
    "Off the line [medium advance, watching]",
    "Lunge [stop & prep]",
    "Advance [holding arm, chase down]",
    "Provoke and Retreat",
    "Retreat [arm out]",
    "React [short, parry, or lunge]",
    "Parry/Close out",
    "Off the line [stutter steps]",
    "Stop and Pull short",
    "Advance [patient push, chase down]",
    "Retreat [shuffle steps]",
    "Retreat [counter attack]",
    "Hit and Cheer",
    "Lunge [and turn to cheer]",
    "Stop/Shift",
    "Off the line [check step]",
    "Off the line [large step hop, watching]",
    "Advance [active arm]",
    "Lunge [normal]",
    "Advance [medium, in the box]",
    "Off the line [medium advance, aggressive]",
    "Advance [normal]",
    "Retreat [crossover]",
    "Provoke and Pull Short",
    "Stop cut",
    "Advance [balestra]",
];

/// Lunges, "Hit and Cheer" and "Stop cut".
pub const DEFAULT_FINISHING: [u16; 5] = [5, 16, 17, 22, 28];

/// Registry labels for a 30-action vocabulary, generic names otherwise.
pub fn default_labels(k: usize) -> Vec<String> {
    if k == DEFAULT_ACTION_COUNT {
        DEFAULT_LABELS.iter().map(|s| s.to_string()).collect()
    } else {
        (0..k).map(|i| format!("Cluster {i}")).collect()
    }
}

/// The default finishing set restricted to ids below `k`.
pub fn default_finishing(k: usize) -> BTreeSet<ActionId> {
    DEFAULT_FINISHING
        .iter()
        .filter(|&&id| (id as usize) < k)
        .map(|&id| ActionId(id))
        .collect()
}
