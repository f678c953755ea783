pub mod assembly;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod forward;
pub mod io;
pub mod mesh;
pub mod observation;
pub mod pdps;
pub mod prox;
pub mod source;
pub mod sparse;
pub mod stepper;
