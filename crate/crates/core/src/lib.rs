//! Dynamic simulation of multi-machine power systems with an online
//! feedback optimization controller in the loop.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod controls;
pub mod data;
pub mod error;
pub mod machines;
pub mod network;
pub mod ofo;
pub mod qp;
pub mod sensitivity;
pub mod simulator;

pub use error::{Error, Result};
