pub mod classify;
pub mod cpdecomp;
pub mod features;
pub mod imaging;
pub mod ndtensor;
pub mod nst;
pub mod pipeline;
pub mod segmentation;
pub mod synth;
pub mod vggnet;

#[cfg(test)]
mod testutil;
