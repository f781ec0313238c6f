//! Shared inputs for the benchmarks.

use lfp_core::synth::{fgn_samples, gen_session, EffectProfile};
use lfp_core::{PhaseLabel, SessionRecord, Signal, TreatmentLabel};

pub const FS: f64 = 1000.0;

/// Long-memory test signal of `n` samples (generated at the next power of two).
pub fn fgn_signal(n: usize, seed: u64) -> Signal {
    let mut x = fgn_samples(n.next_power_of_two(), 0.85, seed).expect("fgn");
    x.truncate(n);
    Signal::new(x, FS, "bench").expect("signal")
}

/// PRE and POST sessions of one synthetic food subject.
pub fn food_pair(duration_s: f64) -> (SessionRecord, SessionRecord) {
    let profile = EffectProfile::default_for(TreatmentLabel::Food);
    let session = |phase| gen_session("bench", &profile, phase, duration_s, FS, 5).expect("session");
    (session(PhaseLabel::Pre), session(PhaseLabel::Post))
}
