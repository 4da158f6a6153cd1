#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod floquet;
pub mod ode;
pub mod optim;
pub mod oracle;
pub mod gatekernel;
pub mod gpg;
pub mod noise;
pub mod roots;
pub mod sequence;
pub mod trap;

pub use error::{Error, Result};
