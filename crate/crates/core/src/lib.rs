//! Part-level manipulation of articulated objects with hidden lock
//! mechanisms: procedural scenes, part affordance learning, part grounding,
//! impedance-controlled primitive skills and an adaptive skill-program
//! interpreter, plus a seeded benchmark harness.

pub mod affordance;
pub mod geometry;
pub mod grounding;
pub mod harness;
pub mod parallel;
pub mod program;
pub mod scene;
pub mod skills;
