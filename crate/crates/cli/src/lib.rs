//! Command-line front end.

pub mod commands;
pub mod manifest;
pub mod output;
pub mod svg;
pub mod sweep;

use manifest::InputError;

pub const EXIT_INPUT: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;

/// 1 for bad input, 2 for numerical failures.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    use ofo_core::Error as E;
    for cause in err.chain() {
        if cause.is::<InputError>() || cause.is::<std::io::Error>() || cause.is::<csv::Error>() {
            return EXIT_INPUT;
        }
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidModel(_)
                | E::DegenerateLine { .. }
                | E::MachineParam(_)
                | E::Config(_)
                | E::Parse(_)
                | E::Io(_) => EXIT_INPUT,
                _ => EXIT_NUMERICAL,
            };
        }
    }
    EXIT_NUMERICAL
}
