pub mod ilg;
pub mod pwce;
pub mod run;
pub mod score;
pub mod synth;
