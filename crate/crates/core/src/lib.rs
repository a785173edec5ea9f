#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod data;
pub mod evaluate;
pub mod identify;
pub(crate) mod math;
pub mod obsnode;
pub mod odeint;
pub mod simulate;
pub mod train;
