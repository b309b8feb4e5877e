// Each chapter of the guide is a module here so `cargo test --doc` runs its
// code blocks. A failing doc-test names the module, which names the chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/gaussian.md")]
pub mod gaussian {}
#[doc = include_str!("../../../book/src/kernels.md")]
pub mod kernels {}
#[doc = include_str!("../../../book/src/gp.md")]
pub mod gp {}
#[doc = include_str!("../../../book/src/bnn.md")]
pub mod bnn {}
#[doc = include_str!("../../../book/src/posterior.md")]
pub mod posterior {}
#[doc = include_str!("../../../book/src/acquisition.md")]
pub mod acquisition {}
#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("../../../book/src/tal.md")]
pub mod tal {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}

#[doc = include_str!("../../../README.md")]
pub mod readme {}
