//! Fixtures shared by the criterion benches.

use specphen_core::panel::Panel;
use specphen_core::synth::{generate, SynthKind, SynthSpec};

pub const UNITS: usize = 159;
pub const YEARS: usize = 19;

pub fn spec(kind: &str) -> SynthSpec {
    SynthSpec::new(SynthKind::preset(kind).expect("known preset"), 11, YEARS, UNITS)
}

pub fn panel(kind: &str) -> Panel {
    generate(&spec(kind)).expect("preset panels are valid")
}
